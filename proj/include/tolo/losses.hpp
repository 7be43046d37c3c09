#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tolo/grid.hpp"
#include "tolo/ops.hpp"

namespace tolo {

/// Loss hyperparameters: τ mixing weight, sigmoid sharpness, region-loss weights
/// and the denominator guard.
template <typename Scalar>
struct LossWeights {
  Scalar lambda = Scalar(0.6);
  Scalar sharpness = Scalar(10);
  Scalar lambda_s = Scalar(1);
  Scalar lambda_a = Scalar(1);
  Scalar eps = Scalar(1e-6);

  void validate() const {
    if (!(lambda >= 0 && lambda <= 1)) throw InputError("lambda must lie in [0, 1]");
    if (!(sharpness > 0)) throw InputError("sharpness must be positive");
    if (!(lambda_s >= 0) || !(lambda_a >= 0)) throw InputError("lambda_s, lambda_a must be >= 0");
    if (!(eps > 0)) throw InputError("eps must be positive");
  }
};

// ---------------------------------------------------------------------------
// Detached quantities

/// (M − lo) / (hi − lo) with lo, hi held constant; all zeros when hi == lo.
template <typename Scalar>
Grid<Scalar> normalize_map(const Grid<Scalar>& m, Scalar lo, Scalar hi) {
  if (!(hi > lo)) return Grid<Scalar>::zeros(m.rows(), m.cols());
  return (m - lo) / (hi - lo);
}

template <typename Scalar>
Grid<Scalar> normalize_map(const Grid<Scalar>& m) {
  return normalize_map(m, reduce_min(m), reduce_max(m));
}

/// τ = λ·mean(M_norm inside box) + (1 − λ)·mean(M_norm outside box).
template <typename Scalar>
Scalar dynamic_threshold(const Matrix<Scalar>& m_norm, const Matrix<Scalar>& box, Scalar lambda) {
  if (m_norm.rows() != box.rows() || m_norm.cols() != box.cols()) {
    throw ShapeError("dynamic_threshold: box and map shapes differ");
  }
  const Scalar inside = box.sum();
  const Scalar outside = static_cast<Scalar>(box.size()) - inside;
  if (inside <= Scalar(0) || outside <= Scalar(0)) {
    throw InputError("dynamic_threshold: box must cover some but not all cells");
  }
  const Scalar in_mean = m_norm.cwiseProduct(box).sum() / inside;
  const Scalar out_mean = (m_norm.array() * (Scalar(1) - box.array())).sum() / outside;
  return lambda * in_mean + (Scalar(1) - lambda) * out_mean;
}

template <typename Scalar>
Matrix<Scalar> foreground_mask(const Matrix<Scalar>& m_norm, Scalar tau) {
  return (m_norm.array() >= tau).template cast<Scalar>().matrix();
}

/// Minimum bounding rectangle of the 1-cells; all zeros for an empty mask.
template <typename Scalar>
Matrix<Scalar> mbr(const Matrix<Scalar>& mask) {
  Index r0 = mask.rows(), r1 = -1, c0 = mask.cols(), c1 = -1;
  for (Index r = 0; r < mask.rows(); ++r) {
    for (Index c = 0; c < mask.cols(); ++c) {
      if (mask(r, c) == Scalar(0)) continue;
      r0 = std::min(r0, r);
      r1 = std::max(r1, r);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c);
    }
  }
  Matrix<Scalar> out = Matrix<Scalar>::Zero(mask.rows(), mask.cols());
  if (r1 >= 0) out.block(r0, c0, r1 - r0 + 1, c1 - c0 + 1).setOnes();
  return out;
}

/// Σ b̂⊙b / Σ(b̂ + (1 − b̂)⊙b); 0 when the union is empty.
template <typename Scalar>
Scalar soft_iou(const Matrix<Scalar>& box_hat, const Matrix<Scalar>& box) {
  if (box_hat.rows() != box.rows() || box_hat.cols() != box.cols()) {
    throw ShapeError("soft_iou: shape mismatch");
  }
  const Scalar inter = box_hat.cwiseProduct(box).sum();
  const Scalar uni =
      (box_hat.array() + (Scalar(1) - box_hat.array()) * box.array()).sum();
  if (uni <= Scalar(0)) return Scalar(0);
  return inter / uni;
}

/// Forward value equals `box_hat`; gradient flows to `m_norm`.
template <typename Scalar>
Grid<Scalar> straight_through_box(const Matrix<Scalar>& box_hat, const Grid<Scalar>& m_norm) {
  return straight_through(box_hat, m_norm);
}

/// Every quantity the losses hold constant for differentiation, captured at one
/// evaluation point. Reusing a captured state at a perturbed latent gives the
/// function whose derivative the tape computes.
template <typename Scalar>
struct DetachedState {
  Scalar lo = 0;
  Scalar hi = 0;
  Scalar tau = 0;
  Scalar iou = 0;
  Matrix<Scalar> mask;
  Matrix<Scalar> box_hat;
  Matrix<Scalar> norm_anchor;
};

template <typename Scalar>
DetachedState<Scalar> detach_state(const Matrix<Scalar>& raw, const Matrix<Scalar>& box,
                                   Scalar lambda) {
  DetachedState<Scalar> s;
  s.lo = raw.minCoeff();
  s.hi = raw.maxCoeff();
  s.norm_anchor = normalize_map(Grid<Scalar>(raw), s.lo, s.hi).value();
  s.tau = dynamic_threshold(s.norm_anchor, box, lambda);
  s.mask = foreground_mask(s.norm_anchor, s.tau);
  s.box_hat = mbr(s.mask);
  s.iou = soft_iou(s.box_hat, box);
  return s;
}

/// Per-concept fields derived from an aggregated map M_i.
template <typename Scalar>
struct ConceptMaps {
  Grid<Scalar> raw;
  Grid<Scalar> norm;
  Grid<Scalar> masked_norm;
  Grid<Scalar> box_hat_st;
  Grid<Scalar> sharp;
  Grid<Scalar> edges;
  Grid<Scalar> box;
  DetachedState<Scalar> state;
};

template <typename Scalar>
ConceptMaps<Scalar> build_concept_maps(const Grid<Scalar>& raw, const Matrix<Scalar>& box,
                                       const LossWeights<Scalar>& w,
                                       const DetachedState<Scalar>* frozen = nullptr) {
  if (raw.rows() != box.rows() || raw.cols() != box.cols()) {
    throw ShapeError("build_concept_maps: box and map shapes differ");
  }
  ConceptMaps<Scalar> cm;
  cm.raw = raw;
  cm.box = Grid<Scalar>(box);
  cm.state = frozen != nullptr ? *frozen : detach_state(raw.value(), box, w.lambda);
  cm.norm = normalize_map(raw, cm.state.lo, cm.state.hi);
  cm.masked_norm = hadamard(Grid<Scalar>(cm.state.mask), cm.norm);
  cm.box_hat_st = straight_through(cm.state.box_hat, cm.norm, cm.state.norm_anchor);
  cm.sharp = sigmoid(w.sharpness * (cm.norm - cm.state.tau));
  cm.edges = sobel(raw);
  return cm;
}

// ---------------------------------------------------------------------------
// Losses

namespace detail {
template <typename Scalar>
Grid<Scalar> scalar_grid(Scalar v) {
  return Grid<Scalar>::filled(1, 1, v);
}
}  // namespace detail

/// Σ(M̂_i ⊙ M̂_j^norm) / (Σ M̂_j^norm + eps): the share of concept j's foreground
/// attention that lies in concept i's foreground.
template <typename Scalar>
Grid<Scalar> pair_overlap(const ConceptMaps<Scalar>& i, const ConceptMaps<Scalar>& j, Scalar eps) {
  const Grid<Scalar> num = sum(hadamard(Grid<Scalar>(i.state.mask), j.masked_norm));
  const Grid<Scalar> den = sum(j.masked_norm) + eps;
  return divide(num, den);
}

/// Mean pair overlap over the k(k − 1) ordered pairs; 0 when k < 2.
template <typename Scalar>
Grid<Scalar> separation_loss(std::span<const ConceptMaps<Scalar>> concepts, Scalar eps) {
  const std::size_t k = concepts.size();
  if (k < 2) return detail::scalar_grid(Scalar(0));
  Grid<Scalar> total;
  bool first = true;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      Grid<Scalar> term = pair_overlap(concepts[i], concepts[j], eps);
      total = first ? term : total + term;
      first = false;
    }
  }
  return total / static_cast<Scalar>(k * (k - 1));
}

/// (1 − IoU)·[λ_s(1 − ΣM^s⊙b / ΣM^s) + λ_a(1 − Σb̂ᵃ⊙b / Σb̂ᵃ)].
template <typename Scalar>
Grid<Scalar> region_loss(const ConceptMaps<Scalar>& cm, const LossWeights<Scalar>& w) {
  Grid<Scalar> terms = detail::scalar_grid(Scalar(0));
  const Grid<Scalar> sharp_total = sum(cm.sharp);
  if (sharp_total.item() > Scalar(0)) {
    const Grid<Scalar> ratio = divide(sum(hadamard(cm.sharp, cm.box)), sharp_total);
    terms = terms + w.lambda_s * (Scalar(1) - ratio);
  }
  if (cm.state.box_hat.sum() > Scalar(0)) {
    const Grid<Scalar> ratio = divide(sum(hadamard(cm.box_hat_st, cm.box)), sum(cm.box_hat_st));
    terms = terms + w.lambda_a * (Scalar(1) - ratio);
  }
  return (Scalar(1) - cm.state.iou) * terms;
}

/// (1 − IoU)·(1 − Σε⊙b / Σε) with ε the Sobel edge map of M_i; 0 for a flat map.
template <typename Scalar>
Grid<Scalar> boundary_loss(const ConceptMaps<Scalar>& cm) {
  const Grid<Scalar> edge_total = sum(cm.edges);
  if (!(edge_total.item() > Scalar(0))) return detail::scalar_grid(Scalar(0));
  const Grid<Scalar> ratio = divide(sum(hadamard(cm.edges, cm.box)), edge_total);
  return (Scalar(1) - cm.state.iou) * (Scalar(1) - ratio);
}

/// Σ_i region_loss_i + boundary_loss_i.
template <typename Scalar>
Grid<Scalar> aggregation_loss(std::span<const ConceptMaps<Scalar>> concepts,
                              const LossWeights<Scalar>& w) {
  Grid<Scalar> total = detail::scalar_grid(Scalar(0));
  for (const auto& cm : concepts) total = total + region_loss(cm, w) + boundary_loss(cm);
  return total;
}

/// Detached summary of every loss term, as exported by reports and traces.
template <typename Scalar>
struct LossSummary {
  std::vector<Scalar> tau;
  std::vector<Scalar> iou;
  std::vector<Scalar> region;
  std::vector<Scalar> boundary;
  Scalar l_agg = 0;
  Scalar l_sep = 0;
  Matrix<Scalar> pair_overlaps;
};

template <typename Scalar>
LossSummary<Scalar> summarize_losses(std::span<const Matrix<Scalar>> maps,
                                     std::span<const Matrix<Scalar>> boxes,
                                     const LossWeights<Scalar>& w) {
  if (maps.size() != boxes.size()) throw InputError("summarize_losses: one box per map required");
  std::vector<ConceptMaps<Scalar>> cms;
  cms.reserve(maps.size());
  for (std::size_t i = 0; i < maps.size(); ++i) {
    cms.push_back(build_concept_maps(Grid<Scalar>(maps[i]), boxes[i], w));
  }
  LossSummary<Scalar> s;
  for (const auto& cm : cms) {
    s.tau.push_back(cm.state.tau);
    s.iou.push_back(cm.state.iou);
    s.region.push_back(region_loss(cm, w).item());
    s.boundary.push_back(boundary_loss(cm).item());
  }
  const std::span<const ConceptMaps<Scalar>> view(cms);
  s.l_agg = aggregation_loss(view, w).item();
  s.l_sep = separation_loss(view, w.eps).item();
  const auto k = static_cast<Index>(cms.size());
  s.pair_overlaps = Matrix<Scalar>::Zero(k, k);
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < k; ++j) {
      if (i != j) {
        s.pair_overlaps(i, j) = pair_overlap(cms[static_cast<std::size_t>(i)],
                                             cms[static_cast<std::size_t>(j)], w.eps)
                                    .item();
      }
    }
  }
  return s;
}

}  // namespace tolo
