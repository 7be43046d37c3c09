#include "tolo/gradcheck.hpp"

#include <algorithm>
#include <random>

#include "tolo/scheduler.hpp"

namespace tolo {

MatrixXd finite_difference_gradient(const std::function<double(const MatrixXd&)>& f,
                                    const MatrixXd& z, double step) {
  MatrixXd grad(z.rows(), z.cols());
  MatrixXd probe = z;
  for (Index i = 0; i < z.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + step;
    const double up = f(probe);
    probe.data()[i] = orig - step;
    const double down = f(probe);
    probe.data()[i] = orig;
    grad.data()[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

double max_relative_error(const MatrixXd& analytic, const MatrixXd& numeric) {
  const double scale = std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
  if (scale == 0.0) return 0.0;
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

Layout random_overlapping_layout(std::uint64_t seed) {
  auto rng = make_stream(seed, "layout");
  std::uniform_real_distribution<double> size(160.0, 280.0);
  std::uniform_real_distribution<double> pos(32.0, 200.0);
  std::uniform_real_distribution<double> shift(0.25, 0.6);

  Layout l;
  l.id = "gradcheck-" + std::to_string(seed);
  l.prompt = {"a", "red", "apple", "and", "a", "yellow", "clock"};
  l.concepts = {{1, 2}, {5, 6}};
  const double w = size(rng);
  const double h = size(rng);
  const Box a{pos(rng), pos(rng), 0, 0};
  Box first{a.x_min, a.y_min, a.x_min + w, a.y_min + h};
  const double dx = shift(rng) * w;
  const double dy = shift(rng) * h * 0.5;
  Box second{first.x_min + dx, first.y_min + dy, std::min(first.x_max + dx, 500.0),
             std::min(first.y_max + dy, 500.0)};
  l.boxes = {first, second};
  return l;
}

Grid<double> guidance_loss(LossKind kind, const AttentionEngine<double>& engine,
                           const Layout& layout, std::span<const MatrixXd> boxes,
                           const Grid<double>& z, const LossWeights<double>& w,
                           const std::vector<DetachedState<double>>* frozen,
                           std::vector<DetachedState<double>>* captured) {
  const auto maps = engine.concept_maps(z, layout.concepts);
  std::vector<ConceptMaps<double>> cms;
  cms.reserve(maps.size());
  for (std::size_t i = 0; i < maps.size(); ++i) {
    cms.push_back(build_concept_maps(maps[i], boxes[i], w, frozen ? &(*frozen)[i] : nullptr));
  }
  if (captured != nullptr) {
    captured->clear();
    for (const auto& cm : cms) captured->push_back(cm.state);
  }
  const std::span<const ConceptMaps<double>> view(cms);
  return kind == LossKind::aggregation ? aggregation_loss(view, w) : separation_loss(view, w.eps);
}

GradCheckResult check_gradients(std::uint64_t seed, const EngineConfig& engine_cfg,
                                const LossWeights<double>& weights, double step) {
  const Layout layout = random_overlapping_layout(seed);
  const AttentionEngine<double> engine(engine_cfg, layout.prompt, seed);
  const MatrixXd z = initial_latent(engine_cfg, seed);
  const auto boxes = layout_masks(layout, engine_cfg.map_size);

  GradCheckResult result;
  for (LossKind kind : {LossKind::aggregation, LossKind::separation}) {
    Tape<double> tape;
    const Grid<double> zg = tape.leaf(z);
    std::vector<DetachedState<double>> states;
    const Grid<double> loss = guidance_loss(kind, engine, layout, boxes, zg, weights, nullptr, &states);
    const MatrixXd analytic =
        loss.on_tape() ? MatrixXd(tape.backward(loss)[zg]) : MatrixXd::Zero(z.rows(), z.cols());

    const auto f = [&](const MatrixXd& probe) {
      return guidance_loss(kind, engine, layout, boxes, Grid<double>(probe), weights, &states)
          .item();
    };
    const MatrixXd numeric = finite_difference_gradient(f, z, step);
    const double err = max_relative_error(analytic, numeric);
    if (kind == LossKind::aggregation) {
      result.aggregation_error = err;
      result.aggregation_norm = analytic.norm();
    } else {
      result.separation_error = err;
      result.separation_norm = analytic.norm();
    }
  }
  return result;
}

}  // namespace tolo
