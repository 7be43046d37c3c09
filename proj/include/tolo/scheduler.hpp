#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tolo/attention.hpp"
#include "tolo/layout.hpp"
#include "tolo/losses.hpp"

namespace tolo {

enum class Stage { aggregation, separation, none };
enum class Mode { two_stage, one_stage, auto_select };

std::string to_string(Stage s);
std::string to_string(Mode m);
Mode parse_mode(const std::string& s);

struct GuidanceConfig {
  int T = 50;
  int m = 10;
  int n = 12;
  double alpha = 70.0;
  double iou_threshold = 0.1;
  Mode mode = Mode::two_stage;
  LossWeights<double> weights;

  void validate() const;
};

/// aggregation when t > T − m, separation when T − n < t <= T − m, none otherwise.
Stage stage_for(int t, const GuidanceConfig& cfg);

/// two_stage iff the layout's max pairwise IoU exceeds cfg.iou_threshold.
Mode select_mode(const Layout& layout, const GuidanceConfig& cfg);

/// Resolves auto/one-stage modes into a concrete schedule (one-stage sets m = n).
GuidanceConfig resolve_schedule(const Layout& layout, const GuidanceConfig& cfg);

struct TraceRecord {
  int t = 0;
  Stage stage = Stage::none;
  std::optional<double> loss;
  double grad_norm = 0.0;
  double mean_overlap = 0.0;
  MatrixXd pair_overlap;
  std::vector<double> tau;
  std::vector<double> iou;

  nlohmann::json to_json() const;
};

struct RunResult {
  Mode mode = Mode::two_stage;
  GuidanceConfig schedule;
  MatrixXd final_latent;
  std::vector<MatrixXd> final_maps;
  std::vector<TraceRecord> trace;
};

/// Called once per timestep with the concept maps the step's loss (or diagnostics) used.
using MapObserver = std::function<void(int t, std::span<const MatrixXd> maps)>;

/// 64x64 (map_size) rasterized boxes of a layout.
std::vector<MatrixXd> layout_masks(const Layout& layout, Index map_size);

/// The two-stage guided denoising loop: for t = T..1, optionally take one gradient
/// step z <- z − α∇L on the stage's loss, then apply the denoiser.
///
/// Throws NumericError naming the step and stage when a loss, gradient or latent
/// turns non-finite.
RunResult run_guidance(const Layout& layout, const AttentionEngine<double>& engine,
                       const Denoiser& denoiser, const GuidanceConfig& cfg, MatrixXd z,
                       const MapObserver& observer = {});

/// Everything a run needs, derived from one seed through named sub-streams.
struct Simulation {
  EngineConfig engine_config;
  AttentionEngine<double> engine;
  ContractionDenoiser denoiser;
  MatrixXd initial;

  Simulation(const EngineConfig& cfg, const Layout& layout, std::uint64_t seed);

  RunResult run(const Layout& layout, const GuidanceConfig& cfg,
                const MapObserver& observer = {}) const {
    return run_guidance(layout, engine, denoiser, cfg, initial, observer);
  }
};

}  // namespace tolo
