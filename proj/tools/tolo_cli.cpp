// tolo: partition layout datasets, run guided toy simulations, evaluate losses on
// stored maps, check gradients and score detections.
//
// Exit codes: 0 ok, 1 I/O, 2 format, 3 numeric, 64 usage.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tolo/config.hpp"
#include "tolo/errors.hpp"
#include "tolo/gradcheck.hpp"
#include "tolo/grid_io.hpp"
#include "tolo/guide.hpp"
#include "tolo/layout.hpp"
#include "tolo/losses.hpp"
#include "tolo/metrics.hpp"
#include "tolo/scheduler.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kIo = 1;
constexpr int kFormat = 2;
constexpr int kNumeric = 3;
constexpr int kUsage = 64;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json read_json_file(const std::string& path) {
  try {
    return json::parse(tolo::read_file(path));
  } catch (const json::parse_error& e) {
    throw tolo::FormatError(path + ": " + e.what());
  }
}

/// A single JSON object, or JSON lines of layouts.
std::vector<tolo::Layout> load_layouts(const std::string& path) {
  const std::string text = tolo::read_file(path);
  try {
    const json j = json::parse(text);
    if (j.is_object()) return {tolo::parse_layout(j)};
    if (j.is_array()) {
      std::vector<tolo::Layout> out;
      for (const auto& item : j) out.push_back(tolo::parse_layout(item));
      return out;
    }
  } catch (const json::parse_error&) {
    // fall through to JSON lines
  }
  return tolo::read_layouts(path);
}

std::vector<double> parse_thresholds(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--thresholds expects two comma-separated numbers, got '" + s + "'");
    }
  }
  if (out.size() != 2 || !(out[0] >= 0.0 && out[0] <= out[1])) {
    throw UsageError("--thresholds expects 'lower,upper' with 0 <= lower <= upper");
  }
  return out;
}

// ---------------------------------------------------------------------------

struct PartitionArgs {
  std::string in;
  std::string out_dir = ".";
  std::string thresholds = "0,0.1";
};

int cmd_partition(const PartitionArgs& a) {
  const auto t = parse_thresholds(a.thresholds);
  const auto layouts = tolo::read_layouts(a.in);
  const auto report = tolo::partition(layouts, {t[0], t[1]});

  std::array<std::ostringstream, 3> splits;
  std::map<std::string, const tolo::Layout*> by_id;
  std::size_t accepted = 0;
  for (const auto& l : layouts) {
    if (tolo::validate(l)) continue;
    const auto& [id, bucket] = report.assignments[accepted++];
    splits[static_cast<std::size_t>(bucket)] << tolo::layout_to_json(l).dump() << '\n';
  }
  for (std::size_t b = 0; b < 3; ++b) {
    tolo::write_file_atomic((fs::path(a.out_dir) / (std::string(tolo::kBucketNames[b]) + ".jsonl")).string(),
                            splits[b].str());
  }
  tolo::write_file_atomic((fs::path(a.out_dir) / "report.json").string(), report.to_json().dump(2) + "\n");
  std::cout << tolo::kBucketNames[0] << ": " << report.counts[0] << "\n"
            << tolo::kBucketNames[1] << ": " << report.counts[1] << "\n"
            << tolo::kBucketNames[2] << ": " << report.counts[2] << "\n"
            << "rejected: " << report.rejections.size() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct GuideArgs {
  std::string layout;
  std::string out_dir;
  std::string config;
  std::string engine_config;
  std::optional<int> m, n, T;
  std::optional<double> alpha, iou_threshold;
  std::optional<std::string> mode;
  std::uint64_t seed = 0;
  bool dump_maps = false;
  unsigned jobs = 1;
};

int cmd_guide(const GuideArgs& a) {
  tolo::GuideOptions opts;
  if (!a.config.empty()) opts.guidance = tolo::guidance_config_from_json(read_json_file(a.config));
  if (!a.engine_config.empty()) opts.engine = tolo::engine_config_from_json(read_json_file(a.engine_config));
  if (a.m) opts.guidance.m = *a.m;
  if (a.n) opts.guidance.n = *a.n;
  if (a.T) opts.guidance.T = *a.T;
  if (a.alpha) opts.guidance.alpha = *a.alpha;
  if (a.iou_threshold) opts.guidance.iou_threshold = *a.iou_threshold;
  opts.seed = a.seed;
  opts.dump_maps = a.dump_maps;
  try {
    if (a.mode) opts.guidance.mode = tolo::parse_mode(*a.mode);
    opts.guidance.validate();
    opts.engine.validate();
  } catch (const tolo::InputError& e) {
    throw UsageError(e.what());
  }

  const auto layouts = load_layouts(a.layout);
  std::vector<int> codes(layouts.size(), kOk);
  std::vector<std::string> lines(layouts.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;

  auto worker = [&] {
    for (std::size_t i = next++; i < layouts.size(); i = next++) {
      const auto& l = layouts[i];
      try {
        const auto out = tolo::run_guide(l, opts, a.out_dir);
        std::array<int, 3> counts{0, 0, 0};
        for (const auto& rec : out.result.trace) ++counts[static_cast<std::size_t>(rec.stage)];
        std::ostringstream line;
        line << l.id << ": mode=" << tolo::to_string(out.result.mode)
             << " aggregation=" << counts[0] << " separation=" << counts[1]
             << " none=" << counts[2] << " -> " << out.run_dir;
        lines[i] = line.str();
      } catch (const tolo::NumericError& e) {
        std::lock_guard lock(err_mu);
        std::cerr << "tolo guide: " << l.id << ": " << e.what() << "\n";
        codes[i] = kNumeric;
      } catch (const tolo::IoError& e) {
        std::lock_guard lock(err_mu);
        std::cerr << "tolo guide: " << l.id << ": " << e.what() << "\n";
        codes[i] = kIo;
      } catch (const std::invalid_argument& e) {
        std::lock_guard lock(err_mu);
        std::cerr << "tolo guide: " << l.id << ": " << e.what() << "\n";
        codes[i] = kFormat;
      }
    }
  };
  const unsigned jobs = std::max(1u, std::min<unsigned>(a.jobs, static_cast<unsigned>(layouts.size())));
  {
    std::vector<std::jthread> pool;
    for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
  }
  int code = kOk;
  for (std::size_t i = 0; i < layouts.size(); ++i) {
    if (!lines[i].empty()) std::cout << lines[i] << "\n";
    code = std::max(code, codes[i]);
  }
  return code;
}

int cmd_replay(const std::string& manifest, const std::string& out_dir) {
  const auto r = tolo::replay_manifest(manifest, out_dir);
  if (r.identical) {
    std::cout << "identical: all artifact checksums match (" << r.run_dir << ")\n";
    return kOk;
  }
  for (const auto& m : r.mismatches) std::cerr << "mismatch: " << m << "\n";
  return kNumeric;
}

// ---------------------------------------------------------------------------

struct LossEvalArgs {
  std::string maps;
  std::string layout;
  std::string config;
  std::string out;
};

int cmd_loss_eval(const LossEvalArgs& a) {
  const auto layouts = load_layouts(a.layout);
  if (layouts.size() != 1) throw tolo::FormatError("loss-eval expects exactly one layout");
  const auto& layout = layouts.front();
  tolo::GuidanceConfig cfg;
  if (!a.config.empty()) cfg = tolo::guidance_config_from_json(read_json_file(a.config));

  std::vector<tolo::MatrixXd> maps;
  for (std::size_t i = 0; i < layout.k(); ++i) {
    const auto p = fs::path(a.maps) / ("concept_" + std::to_string(i) + ".tolog");
    maps.push_back(tolo::read_tologrid(p.string()));
    if (maps.back().rows() != maps.back().cols()) throw tolo::FormatError(p.string() + ": map is not square");
  }
  const auto masks = tolo::layout_masks(layout, maps.front().rows());
  const auto s = tolo::summarize_losses<double>(maps, masks, cfg.weights);

  json report;
  report["per_concept"] = json::array();
  for (std::size_t i = 0; i < maps.size(); ++i) {
    report["per_concept"].push_back(
        {{"tau", s.tau[i]}, {"iou", s.iou[i]}, {"region", s.region[i]}, {"boundary", s.boundary[i]}});
  }
  report["l_agg"] = s.l_agg;
  report["l_sep"] = s.l_sep;
  json overlaps = json::array();
  for (tolo::Index i = 0; i < s.pair_overlaps.rows(); ++i) {
    json row = json::array();
    for (tolo::Index j = 0; j < s.pair_overlaps.cols(); ++j) row.push_back(s.pair_overlaps(i, j));
    overlaps.push_back(std::move(row));
  }
  report["pair_overlaps"] = std::move(overlaps);
  const std::string text = report.dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    tolo::write_file_atomic(a.out, text);
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct GradCheckArgs {
  int seeds = 20;
  double tolerance = 1e-3;
  double step = 1e-3;
  std::string engine_config;
  std::string config;
};

int cmd_grad_check(const GradCheckArgs& a) {
  if (a.seeds < 1) throw UsageError("--seeds must be >= 1");
  if (!(a.step > 0.0)) throw UsageError("--step must be positive");
  tolo::EngineConfig ecfg;
  if (!a.engine_config.empty()) ecfg = tolo::engine_config_from_json(read_json_file(a.engine_config));
  tolo::GuidanceConfig gcfg;
  if (!a.config.empty()) gcfg = tolo::guidance_config_from_json(read_json_file(a.config));

  double worst = 0.0;
  for (int s = 0; s < a.seeds; ++s) {
    const auto r = tolo::check_gradients(static_cast<std::uint64_t>(s), ecfg, gcfg.weights, a.step);
    std::cout << "seed " << s << ": l_agg rel err " << r.aggregation_error << ", l_sep rel err "
              << r.separation_error << "\n";
    worst = std::max(worst, r.max_error());
  }
  const bool ok = worst <= a.tolerance;
  std::cout << "max relative error " << worst << (ok ? " <= " : " > ") << "tolerance " << a.tolerance
            << "\n";
  return ok ? kOk : kNumeric;
}

// ---------------------------------------------------------------------------

struct ScoreArgs {
  std::string cases;
  std::string dets;
  std::string colors;
  std::string images;
  std::string out;
};

int cmd_score(const ScoreArgs& a) {
  std::vector<tolo::EvalCase> cases;
  {
    std::istringstream in(tolo::read_file(a.cases));
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        cases.push_back(tolo::parse_case(json::parse(line)));
      } catch (const json::parse_error& e) {
        throw tolo::FormatError(a.cases + ": " + e.what());
      }
    }
  }
  if (cases.empty()) throw tolo::FormatError(a.cases + ": no cases");

  std::map<std::string, std::vector<tolo::Detection>> dets;
  {
    std::istringstream in(tolo::read_file(a.dets));
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const json j = json::parse(line);
        const std::string id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
        auto& list = dets[id];
        for (const auto& d : j.at("detections")) list.push_back(tolo::parse_detection(d));
      } catch (const json::exception& e) {
        throw tolo::FormatError(a.dets + ": " + e.what());
      }
    }
  }

  std::string table_path = a.colors;
  if (table_path.empty()) {
    if (const char* env = std::getenv("TOLO_COLOR_TABLE")) table_path = env;
  }
  const auto table = table_path.empty() ? tolo::ColorTable::defaults() : tolo::ColorTable::load(table_path);
  const std::string image_root =
      a.images.empty() ? fs::path(a.cases).parent_path().string() : a.images;

  const auto report = tolo::score_cases(cases, dets, table, image_root);
  const std::string text = report.to_json().dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    tolo::write_file_atomic(a.out, text);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tolo: two-stage layout guidance toolkit"};
  app.require_subcommand(1);

  PartitionArgs pa;
  auto* partition = app.add_subcommand("partition", "Split a layout file into max-IoU buckets");
  partition->add_option("--in", pa.in, "JSON-lines layout file")->required();
  partition->add_option("--out-dir", pa.out_dir, "Directory for report.json and split files");
  partition->add_option("--thresholds", pa.thresholds, "Bucket bounds 'lower,upper'");

  GuideArgs ga;
  auto* guide = app.add_subcommand("guide", "Run guided denoising on the toy attention model");
  guide->add_option("--layout", ga.layout, "Layout JSON (object, array or JSON lines)")->required();
  guide->add_option("--out-dir", ga.out_dir, "Output directory")->required();
  guide->add_option("--config", ga.config, "Guidance config JSON");
  guide->add_option("--engine-config", ga.engine_config, "Engine config JSON");
  guide->add_option("--m", ga.m, "Aggregation-stage steps");
  guide->add_option("--n", ga.n, "Total intervention steps");
  guide->add_option("--T", ga.T, "Denoising steps");
  guide->add_option("--alpha", ga.alpha, "Loss scale");
  guide->add_option("--iou-threshold", ga.iou_threshold, "IoU threshold for --mode auto");
  guide->add_option("--mode", ga.mode, "two-stage | one-stage | auto");
  guide->add_option("--seed", ga.seed, "Run seed");
  guide->add_flag("--dump-maps", ga.dump_maps, "Write per-step concept maps");
  guide->add_option("--jobs", ga.jobs, "Parallel runs for batch layout files")->check(CLI::PositiveNumber);

  std::string manifest, replay_out;
  auto* replay = app.add_subcommand("replay", "Re-execute a run manifest and compare checksums");
  replay->add_option("--manifest", manifest, "manifest.json of a guide run")->required();
  replay->add_option("--out-dir", replay_out, "Output directory for the re-run")->required();

  LossEvalArgs la;
  auto* loss_eval = app.add_subcommand("loss-eval", "Evaluate losses on stored concept maps");
  loss_eval->add_option("--maps", la.maps, "Directory with concept_{i}.tolog")->required();
  loss_eval->add_option("--layout", la.layout, "Layout JSON")->required();
  loss_eval->add_option("--config", la.config, "Guidance config JSON (loss weights)");
  loss_eval->add_option("--out", la.out, "Write the report here instead of stdout");

  GradCheckArgs gca;
  auto* grad_check = app.add_subcommand("grad-check", "Compare tape gradients with finite differences");
  grad_check->add_option("--seeds", gca.seeds, "Number of random instances");
  grad_check->add_option("--tolerance", gca.tolerance, "Maximum relative error");
  grad_check->add_option("--step", gca.step, "Central-difference step");
  grad_check->add_option("--engine-config", gca.engine_config, "Engine config JSON");
  grad_check->add_option("--config", gca.config, "Guidance config JSON (loss weights)");

  ScoreArgs sa;
  auto* score = app.add_subcommand("score", "Score detections against evaluation cases");
  score->add_option("--cases", sa.cases, "Cases JSON lines")->required();
  score->add_option("--dets", sa.dets, "Detections JSON lines")->required();
  score->add_option("--colors", sa.colors, "Color table JSON (default: $TOLO_COLOR_TABLE or built-in)");
  score->add_option("--images", sa.images, "Image directory (default: the cases file's directory)");
  score->add_option("--out", sa.out, "Write the report here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*partition) return cmd_partition(pa);
    if (*guide) return cmd_guide(ga);
    if (*replay) return cmd_replay(manifest, replay_out);
    if (*loss_eval) return cmd_loss_eval(la);
    if (*grad_check) return cmd_grad_check(gca);
    if (*score) return cmd_score(sa);
  } catch (const UsageError& e) {
    std::cerr << "tolo: " << e.what() << "\n";
    return kUsage;
  } catch (const tolo::IoError& e) {
    std::cerr << "tolo: " << e.what() << "\n";
    return kIo;
  } catch (const tolo::NumericError& e) {
    std::cerr << "tolo: " << e.what() << "\n";
    return kNumeric;
  } catch (const tolo::FormatError& e) {
    std::cerr << "tolo: " << e.what() << "\n";
    return kFormat;
  } catch (const std::invalid_argument& e) {
    std::cerr << "tolo: " << e.what() << "\n";
    return kFormat;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "tolo: " << e.what() << "\n";
    return kIo;
  }
  return kUsage;
}
