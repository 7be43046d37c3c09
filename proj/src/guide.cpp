#include "tolo/guide.hpp"

#include <filesystem>
#include <sstream>

#include "tolo/config.hpp"
#include "tolo/errors.hpp"
#include "tolo/grid_io.hpp"

namespace tolo {

namespace fs = std::filesystem;

std::string run_dir_name(const std::string& layout_id) {
  std::string s = layout_id.empty() ? "layout" : layout_id;
  for (char& c : s) {
    if (c == '/' || c == '\\' || c == ' ' || c == ':') c = '_';
  }
  if (s == "." || s == "..") s = "layout";
  return s;
}

GuideOutcome run_guide(const Layout& layout, const GuideOptions& opts, const std::string& out_dir) {
  if (auto rej = validate(layout)) {
    throw InputError("layout '" + layout.id + "' rejected: " + to_string(rej->rule));
  }
  GuideOutcome out;
  const fs::path dir = fs::path(out_dir) / run_dir_name(layout.id);
  out.run_dir = dir.string();
  fs::create_directories(dir);

  std::map<std::string, std::string> artifacts;  // relative path -> checksum
  auto record = [&](const fs::path& rel) {
    artifacts[rel.generic_string()] = file_checksum((dir / rel).string());
  };

  const Simulation sim(opts.engine, layout, opts.seed);
  MapObserver observer;
  if (opts.dump_maps) {
    observer = [&](int t, std::span<const MatrixXd> maps) {
      for (std::size_t i = 0; i < maps.size(); ++i) {
        const fs::path rel = fs::path("maps") / ("step_" + std::to_string(t)) /
                             ("concept_" + std::to_string(i) + ".tolog");
        write_tologrid((dir / rel).string(), maps[i]);
        record(rel);
      }
    };
  }
  out.result = sim.run(layout, opts.guidance, observer);

  std::ostringstream trace;
  for (const auto& rec : out.result.trace) trace << rec.to_json().dump() << '\n';
  write_file_atomic((dir / "trace.jsonl").string(), trace.str());
  record("trace.jsonl");

  const auto& z = out.result.final_latent;
  const auto& ecfg = sim.engine_config;
  for (Index c = 0; c < z.cols(); ++c) {
    MatrixXd channel(ecfg.latent_height, ecfg.latent_width);
    for (Index i = 0; i < z.rows(); ++i) channel(i / ecfg.latent_width, i % ecfg.latent_width) = z(i, c);
    const fs::path rel = fs::path("final") / ("latent_c" + std::to_string(c) + ".tolog");
    write_tologrid((dir / rel).string(), channel);
    record(rel);
  }
  for (std::size_t i = 0; i < out.result.final_maps.size(); ++i) {
    const std::string stem = "concept_" + std::to_string(i);
    const fs::path grid_rel = fs::path("final") / (stem + ".tolog");
    const fs::path pgm_rel = fs::path("final") / (stem + ".pgm");
    write_tologrid((dir / grid_rel).string(), out.result.final_maps[i]);
    write_file_atomic((dir / pgm_rel).string(), encode_pgm(out.result.final_maps[i]));
    record(grid_rel);
    record(pgm_rel);
  }

  nlohmann::json m;
  m["format"] = "tolo-run-manifest/1";
  m["seed"] = opts.seed;
  m["layout"] = layout_to_json(layout);
  m["engine"] = to_json(opts.engine);
  m["guidance"] = to_json(opts.guidance);
  m["dump_maps"] = opts.dump_maps;
  m["resolved_mode"] = to_string(out.result.mode);
  m["artifacts"] = artifacts;
  write_file_atomic((dir / "manifest.json").string(), m.dump(2) + "\n");
  out.manifest = std::move(m);
  return out;
}

ReplayOutcome replay_manifest(const std::string& manifest_path, const std::string& out_dir) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(manifest_path + ": " + e.what());
  }
  if (m.value("format", "") != "tolo-run-manifest/1") {
    throw FormatError(manifest_path + ": not a run manifest");
  }
  GuideOptions opts;
  std::map<std::string, std::string> expected;
  Layout layout;
  try {
    opts.seed = m.at("seed").get<std::uint64_t>();
    opts.engine = engine_config_from_json(m.at("engine"));
    opts.guidance = guidance_config_from_json(m.at("guidance"));
    opts.dump_maps = m.at("dump_maps").get<bool>();
    layout = parse_layout(m.at("layout"));
    expected = m.at("artifacts").get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path + ": " + e.what());
  }
  const GuideOutcome rerun = run_guide(layout, opts, out_dir);
  const auto actual = rerun.manifest.at("artifacts").get<std::map<std::string, std::string>>();

  ReplayOutcome out;
  out.run_dir = rerun.run_dir;
  for (const auto& [path, sum] : expected) {
    auto it = actual.find(path);
    if (it == actual.end()) {
      out.mismatches.push_back(path + ": missing");
    } else if (it->second != sum) {
      out.mismatches.push_back(path + ": " + sum + " != " + it->second);
    }
  }
  for (const auto& [path, _] : actual) {
    if (!expected.count(path)) out.mismatches.push_back(path + ": unexpected");
  }
  out.identical = out.mismatches.empty();
  return out;
}

}  // namespace tolo
