#pragma once

#include <cstdint>
#include <functional>

#include "tolo/attention.hpp"
#include "tolo/layout.hpp"
#include "tolo/losses.hpp"

namespace tolo {

enum class LossKind { aggregation, separation };

/// Central differences (f(z + h e_i) − f(z − h e_i)) / 2h for every entry of z.
MatrixXd finite_difference_gradient(const std::function<double(const MatrixXd&)>& f,
                                    const MatrixXd& z, double step);

/// max|a − n| / max(max|a|, max|n|); 0 when both gradients vanish.
double max_relative_error(const MatrixXd& analytic, const MatrixXd& numeric);

/// Two-concept layout with randomly placed, overlapping boxes on the 512 canvas.
Layout random_overlapping_layout(std::uint64_t seed);

struct GradCheckResult {
  double aggregation_error = 0.0;
  double separation_error = 0.0;
  double aggregation_norm = 0.0;
  double separation_norm = 0.0;

  double max_error() const { return std::max(aggregation_error, separation_error); }
};

/// Builds a random instance from `seed` and compares tape gradients of L_agg and
/// L_sep w.r.t. the latent against central differences. Detached quantities are
/// captured once at the base latent and held fixed in the difference quotients.
GradCheckResult check_gradients(std::uint64_t seed, const EngineConfig& engine_cfg,
                                const LossWeights<double>& weights, double step);

/// Loss of one kind at latent `z`; when `frozen` is given its states replace the
/// ones captured from z. When `captured` is non-null the states used are stored there.
Grid<double> guidance_loss(LossKind kind, const AttentionEngine<double>& engine,
                           const Layout& layout, std::span<const MatrixXd> boxes,
                           const Grid<double>& z, const LossWeights<double>& w,
                           const std::vector<DetachedState<double>>* frozen = nullptr,
                           std::vector<DetachedState<double>>* captured = nullptr);

}  // namespace tolo
