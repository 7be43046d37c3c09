#include "tolo/scheduler.hpp"

#include <cmath>

#include "tolo/errors.hpp"

namespace tolo {

std::string to_string(Stage s) {
  switch (s) {
    case Stage::aggregation:
      return "aggregation";
    case Stage::separation:
      return "separation";
    case Stage::none:
      break;
  }
  return "none";
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::two_stage:
      return "two-stage";
    case Mode::one_stage:
      return "one-stage";
    case Mode::auto_select:
      break;
  }
  return "auto";
}

Mode parse_mode(const std::string& s) {
  if (s == "two-stage") return Mode::two_stage;
  if (s == "one-stage") return Mode::one_stage;
  if (s == "auto") return Mode::auto_select;
  throw InputError("unknown mode '" + s + "' (expected two-stage, one-stage or auto)");
}

void GuidanceConfig::validate() const {
  if (T < 1) throw InputError("T must be >= 1");
  if (!(0 <= m && m <= n && n <= T)) throw InputError("schedule requires 0 <= m <= n <= T");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InputError("alpha must be finite and >= 0");
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) {
    throw InputError("iou_threshold must lie in [0, 1]");
  }
  weights.validate();
}

Stage stage_for(int t, const GuidanceConfig& cfg) {
  if (t < 1 || t > cfg.T) {
    throw InputError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(cfg.T) + "]");
  }
  if (t > cfg.T - cfg.m) return Stage::aggregation;
  if (t > cfg.T - cfg.n) return Stage::separation;
  return Stage::none;
}

Mode select_mode(const Layout& layout, const GuidanceConfig& cfg) {
  return layout_iou(layout) > cfg.iou_threshold ? Mode::two_stage : Mode::one_stage;
}

GuidanceConfig resolve_schedule(const Layout& layout, const GuidanceConfig& cfg) {
  GuidanceConfig out = cfg;
  Mode mode = cfg.mode == Mode::auto_select ? select_mode(layout, cfg) : cfg.mode;
  out.mode = mode;
  if (mode == Mode::one_stage) out.m = out.n;
  return out;
}

nlohmann::json TraceRecord::to_json() const {
  nlohmann::json j;
  j["t"] = t;
  j["stage"] = to_string(stage);
  j["loss"] = loss ? nlohmann::json(*loss) : nlohmann::json(nullptr);
  j["grad_norm"] = grad_norm;
  j["mean_overlap"] = mean_overlap;
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < pair_overlap.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index k = 0; k < pair_overlap.cols(); ++k) row.push_back(pair_overlap(i, k));
    rows.push_back(std::move(row));
  }
  j["pair_overlap"] = std::move(rows);
  j["tau"] = tau;
  j["iou"] = iou;
  return j;
}

std::vector<MatrixXd> layout_masks(const Layout& layout, Index map_size) {
  std::vector<MatrixXd> masks;
  masks.reserve(layout.boxes.size());
  for (const auto& b : layout.boxes) masks.push_back(rasterize_box<double>(b, map_size));
  return masks;
}

namespace {

void fill_diagnostics(TraceRecord& rec, std::span<const ConceptMaps<double>> cms, double eps) {
  const auto k = static_cast<Index>(cms.size());
  rec.pair_overlap = MatrixXd::Zero(k, k);
  double total = 0.0;
  for (Index i = 0; i < k; ++i) {
    const auto& ci = cms[static_cast<std::size_t>(i)];
    rec.tau.push_back(ci.state.tau);
    rec.iou.push_back(ci.state.iou);
    for (Index j = 0; j < k; ++j) {
      if (i == j) continue;
      const auto& mj = cms[static_cast<std::size_t>(j)].masked_norm.value();
      const double v = ci.state.mask.cwiseProduct(mj).sum() / (mj.sum() + eps);
      rec.pair_overlap(i, j) = v;
      total += v;
    }
  }
  rec.mean_overlap = k > 1 ? total / static_cast<double>(k * (k - 1)) : 0.0;
}

[[noreturn]] void numeric_abort(int t, Stage s, const std::string& what) {
  throw NumericError("non-finite " + what + " at step t=" + std::to_string(t) + " (" +
                     to_string(s) + " stage)");
}

}  // namespace

RunResult run_guidance(const Layout& layout, const AttentionEngine<double>& engine,
                       const Denoiser& denoiser, const GuidanceConfig& cfg, MatrixXd z,
                       const MapObserver& observer) {
  cfg.validate();
  const EngineConfig& ecfg = engine.config();
  if (z.rows() != ecfg.latent_height * ecfg.latent_width || z.cols() != ecfg.channels) {
    throw ShapeError("run_guidance: initial latent does not match the engine geometry");
  }
  for (const auto& c : layout.concepts) {
    for (int idx : c) {
      if (idx < 0 || idx >= engine.embedding().length()) {
        throw InputError("run_guidance: concept token index outside the prompt");
      }
    }
  }

  RunResult result;
  result.schedule = resolve_schedule(layout, cfg);
  result.mode = result.schedule.mode;
  const GuidanceConfig& sched = result.schedule;
  const auto boxes = layout_masks(layout, ecfg.map_size);
  const auto& w = sched.weights;

  std::vector<MatrixXd> maps_values;
  for (int t = sched.T; t >= 1; --t) {
    const Stage stage = stage_for(t, sched);
    TraceRecord rec;
    rec.t = t;
    rec.stage = stage;

    Tape<double> tape;
    const Grid<double> zg = stage == Stage::none ? Grid<double>(z) : tape.leaf(z);
    const auto maps = engine.concept_maps(zg, layout.concepts);
    std::vector<ConceptMaps<double>> cms;
    cms.reserve(maps.size());
    for (std::size_t i = 0; i < maps.size(); ++i) {
      cms.push_back(build_concept_maps(maps[i], boxes[i], w));
    }
    fill_diagnostics(rec, cms, w.eps);

    maps_values.clear();
    for (const auto& m : maps) maps_values.push_back(m.value());
    if (observer) observer(t, maps_values);

    if (stage != Stage::none) {
      const std::span<const ConceptMaps<double>> view(cms);
      const Grid<double> loss =
          stage == Stage::aggregation ? aggregation_loss(view, w) : separation_loss(view, w.eps);
      if (!std::isfinite(loss.item())) numeric_abort(t, stage, "loss");
      rec.loss = loss.item();
      MatrixXd grad = MatrixXd::Zero(z.rows(), z.cols());
      if (loss.on_tape()) grad = tape.backward(loss)[zg];
      if (!grad.allFinite()) numeric_abort(t, stage, "gradient");
      rec.grad_norm = grad.norm();
      z -= sched.alpha * grad;
      if (!z.allFinite()) numeric_abort(t, stage, "latent");
    }
    result.trace.push_back(std::move(rec));
    z = denoiser.step(z, t);
    if (!z.allFinite()) numeric_abort(t, stage, "latent after denoising");
  }

  result.final_latent = z;
  const auto final_maps = engine.concept_maps(Grid<double>(z), layout.concepts);
  for (const auto& m : final_maps) result.final_maps.push_back(m.value());
  return result;
}

Simulation::Simulation(const EngineConfig& cfg, const Layout& layout, std::uint64_t seed)
    : engine_config(cfg),
      engine(cfg, layout.prompt, seed),
      denoiser(ContractionDenoiser::from_config(cfg, seed)),
      initial(initial_latent(cfg, seed)) {}

}  // namespace tolo
