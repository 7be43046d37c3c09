#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <string>
#include <vector>

#include "tolo/grid.hpp"

namespace tolo {

namespace detail {

template <typename Scalar>
Tape<Scalar>* common_tape(std::initializer_list<const Grid<Scalar>*> operands) {
  Tape<Scalar>* tape = nullptr;
  for (const auto* g : operands) {
    if (!g->on_tape()) continue;
    if (tape != nullptr && tape != g->tape()) {
      throw ContractError("operands belong to different tapes");
    }
    tape = g->tape();
  }
  return tape;
}

inline std::string shape_str(Index r, Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename Scalar>
void require_same_shape(const char* op, const Grid<Scalar>& a, const Grid<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) +
                     " vs " + shape_str(b.rows(), b.cols()));
  }
}

// Corner-aligned sampling positions: output index i reads from source
// coordinate i * (in - 1) / (out - 1), split into a base index and a fraction < 1.
struct AxisSamples {
  std::vector<Index> lo;
  std::vector<Index> hi;
  std::vector<double> frac;
};

inline AxisSamples corner_aligned_samples(Index in, Index out) {
  AxisSamples s;
  s.lo.resize(static_cast<std::size_t>(out));
  s.hi.resize(static_cast<std::size_t>(out));
  s.frac.resize(static_cast<std::size_t>(out));
  for (Index i = 0; i < out; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (out == 1 || in == 1) {
      s.lo[k] = 0;
      s.hi[k] = 0;
      s.frac[k] = 0.0;
      continue;
    }
    const double pos = static_cast<double>(i * (in - 1)) / static_cast<double>(out - 1);
    Index lo = static_cast<Index>(std::floor(pos));
    lo = std::min(lo, in - 1);
    const double f = pos - static_cast<double>(lo);
    s.lo[k] = lo;
    s.hi[k] = f > 0.0 ? std::min(lo + 1, in - 1) : lo;
    s.frac[k] = f;
  }
  return s;
}

inline constexpr int kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
inline constexpr int kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Grid<Scalar> matmul(const Grid<Scalar>& a, const Grid<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree (" + detail::shape_str(a.rows(), a.cols()) +
                     " x " + detail::shape_str(b.rows(), b.cols()) + ")");
  }
  Matrix<Scalar> out = a.value() * b.value();
  auto* tape = detail::common_tape({&a, &b});
  if (tape == nullptr) return Grid<Scalar>(std::move(out));

  const NodeId ia = a.on_tape() ? a.node() : kNoNode;
  const NodeId ib = b.on_tape() ? b.node() : kNoNode;
  Matrix<Scalar> av = ib != kNoNode ? a.value() : Matrix<Scalar>();
  Matrix<Scalar> bv = ia != kNoNode ? b.value() : Matrix<Scalar>();
  return tape->record(std::move(out), [ia, ib, av = std::move(av), bv = std::move(bv)](
                                          const Matrix<Scalar>& up, GradSink<Scalar>& sink) {
    if (sink.wants(ia)) sink.add(ia, up * bv.transpose());
    if (sink.wants(ib)) sink.add(ib, av.transpose() * up);
  });
}

template <typename Scalar>
Grid<Scalar> transpose(const Grid<Scalar>& a) {
  Matrix<Scalar> out = a.value().transpose();
  if (!a.on_tape()) return Grid<Scalar>(std::move(out));
  const NodeId ia = a.node();
  return a.tape()->record(std::move(out),
                          [ia](const Matrix<Scalar>& up, GradSink<Scalar>& sink) {
                            sink.add(ia, up.transpose());
                          });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename Scalar>
Grid<Scalar> operator+(const Grid<Scalar>& a, const Grid<Scalar>& b) {
  detail::require_same_shape("add", a, b);
  Matrix<Scalar> out = a.value() + b.value();
  auto* tape = detail::common_tape({&a, &b});
  if (tape == nullptr) return Grid<Scalar>(std::move(out));
  const NodeId ia = a.on_tape() ? a.node() : kNoNode;
  const NodeId ib = b.on_tape() ? b.node() : kNoNode;
  return tape->record(std::move(out), [ia, ib](const Matrix<Scalar>& up, GradSink<Scalar>& sink) {
    sink.add(ia, up);
    sink.add(ib, up);
  });
}

template <typename Scalar>
Grid<Scalar> operator-(const Grid<Scalar>& a, const Grid<Scalar>& b) {
  detail::require_same_shape("sub", a, b);
  Matrix<Scalar> out = a.value() - b.value();
  auto* tape = detail::common_tape({&a, &b});
  if (tape == nullptr) return Grid<Scalar>(std::move(out));
  const NodeId ia = a.on_tape() ? a.node() : kNoNode;
  const NodeId ib = b.on_tape() ? b.node() : kNoNode;
  return tape->record(std::move(out), [ia, ib](const Matrix<Scalar>& up, GradSink<Scalar>& sink) {
    sink.add(ia, up);
    if (sink.wants(ib)) sink.add(ib, -up);
  });
}

/// Elementwise product (⊙).
template <typename Scalar>
Grid<Scalar> hadamard(const Grid<Scalar>& a, const Grid<Scalar>& b) {
  detail::require_same_shape("hadamard", a, b);
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  auto* tape = detail::common_tape({&a, &b});
  if (tape == nullptr) return Grid<Scalar>(std::move(out));
  const NodeId ia = a.on_tape() ? a.node() : kNoNode;
  const NodeId ib = b.on_tape() ? b.node() : kNoNode;
  Matrix<Scalar> av = ib != kNoNode ? a.value() : Matrix<Scalar>();
  Matrix<Scalar> bv = ia != kNoNode ? b.value() : Matrix<Scalar>();
  return tape->record(std::move(out), [ia, ib, av = std::move(av), bv = std::move(bv)](
                                          const Matrix<Scalar>& up, GradSink<Scalar>& sink) {
    if (sink.wants(ia)) sink.add(ia, up.cwiseProduct(bv));
    if (sink.wants(ib)) sink.add(ib, up.cwiseProduct(av));
  });
}

/// Elementwise quotient a / b.
template <typename Scalar>
Grid<Scalar> divide(const Grid<Scalar>& a, const Grid<Scalar>& b) {
  detail::require_same_shape("divide", a, b);
  Matrix<Scalar> out = a.value().cwiseQuotient(b.value());
  auto* tape = detail::common_tape({&a, &b});
  if (tape == nullptr) return Grid<Scalar>(std::move(out));
  const NodeId ia = a.on_tape() ? a.node() : kNoNode;
  const NodeId ib = b.on_tape() ? b.node() : kNoNode;
  Matrix<Scalar> bv = b.value();
  Matrix<Scalar> q = out;
  return tape->record(std::move(out), [ia, ib, bv = std::move(bv), q = std::move(q)](
                                          const Matrix<Scalar>& up, GradSink<Scalar>& sink) {
    if (sink.wants(ia)) sink.add(ia, up.cwiseQuotient(bv));
    if (sink.wants(ib)) sink.add(ib, -(up.cwiseProduct(q).cwiseQuotient(bv)));
  });
}

template <typename Scalar>
Grid<Scalar> operator*(Scalar s, const Grid<Scalar>& a) {
  Matrix<Scalar> out = s * a.value();
  if (!a.on_tape()) return Grid<Scalar>(std::move(out));
  const NodeId ia = a.node();
  return a.tape()->record(std::move(out),
                          [ia, s](const Matrix<Scalar>& up, GradSink<Scalar>& sink) {
                            sink.add(ia, s * up);
                          });
}

template <typename Scalar>
Grid<Scalar> operator*(const Grid<Scalar>& a, Scalar s) {
  return s * a;
}

template <typename Scalar>
Grid<Scalar> operator/(const Grid<Scalar>& a, Scalar s) {
  Matrix<Scalar> out = a.value() / s;
  if (!a.on_tape()) return Grid<Scalar>(std::move(out));
  const NodeId ia = a.node();
  return a.tape()->record(std::move(out),
                          [ia, s](const Matrix<Scalar>& up, GradSink<Scalar>& sink) {
                            sink.add(ia, up / s);
                          });
}

template <typename Scalar>
Grid<Scalar> operator-(const Grid<Scalar>& a) {
  return Scalar(-1) * a;
}

/// Adds a constant to every cell.
template <typename Scalar>
Grid<Scalar> operator+(const Grid<Scalar>& a, Scalar s) {
  Matrix<Scalar> out = a.value().array() + s;
  if (!a.on_tape()) return Grid<Scalar>(std::move(out));
  const NodeId ia = a.node();
  return a.tape()->record(std::move(out), [ia](const Matrix<Scalar>& up, GradSink<Scalar>& sink) {
    sink.add(ia, up);
  });
}

template <typename Scalar>
Grid<Scalar> operator+(Scalar s, const Grid<Scalar>& a) {
  return a + s;
}

template <typename Scalar>
Grid<Scalar> operator-(const Grid<Scalar>& a, Scalar s) {
  return a + (-s);
}

template <typename Scalar>
Grid<Scalar> operator-(Scalar s, const Grid<Scalar>& a) {
  return (-a) + s;
}

template <typename Scalar>
Grid<Scalar> sigmoid(const Grid<Scalar>& a) {
  Matrix<Scalar> out = a.value().unaryExpr([](Scalar x) {
    if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
    const Scalar e = std::exp(x);
    return e / (Scalar(1) + e);
  });
  if (!a.on_tape()) return Grid<Scalar>(std::move(out));
  const NodeId ia = a.node();
  Matrix<Scalar> y = out;
  return a.tape()->record(std::move(out), [ia, y = std::move(y)](const Matrix<Scalar>& up,
                                                                 GradSink<Scalar>& sink) {
    sink.add(ia, up.cwiseProduct(y.cwiseProduct((Scalar(1) - y.array()).matrix())));
  });
}

// ---------------------------------------------------------------------------
// Reductions

/// Sum over every cell, as a 1x1 grid.
template <typename Scalar>
Grid<Scalar> sum(const Grid<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  if (!a.on_tape()) return Grid<Scalar>(std::move(out));
  const NodeId ia = a.node();
  const Index r = a.rows();
  const Index c = a.cols();
  return a.tape()->record(std::move(out),
                          [ia, r, c](const Matrix<Scalar>& up, GradSink<Scalar>& sink) {
                            sink.add(ia, Matrix<Scalar>::Constant(r, c, up(0, 0)));
                          });
}

// min/max are never differentiated; callers use them for detached statistics.
template <typename Scalar>
Scalar reduce_min(const Grid<Scalar>& a) {
  return a.value().minCoeff();
}

template <typename Scalar>
Scalar reduce_max(const Grid<Scalar>& a) {
  return a.value().maxCoeff();
}

// ---------------------------------------------------------------------------
// Attention-specific

/// Row-wise softmax with max subtraction.
template <typename Scalar>
Grid<Scalar> softmax_rows(const Grid<Scalar>& a) {
  Matrix<Scalar> out(a.rows(), a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    const Scalar m = a.value().row(r).maxCoeff();
    auto e = (a.value().row(r).array() - m).exp();
    out.row(r) = e / e.sum();
  }
  if (!a.on_tape()) return Grid<Scalar>(std::move(out));
  const NodeId ia = a.node();
  Matrix<Scalar> y = out;
  return a.tape()->record(std::move(out), [ia, y = std::move(y)](const Matrix<Scalar>& up,
                                                                 GradSink<Scalar>& sink) {
    // dx = y ⊙ (dy − <dy, y>_row)
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dots = up.cwiseProduct(y).rowwise().sum();
    Matrix<Scalar> g = y.cwiseProduct((up.colwise() - dots));
    sink.add(ia, g);
  });
}

/// Column `col` of `a`, reshaped row-major into a height x width grid.
template <typename Scalar>
Grid<Scalar> column_grid(const Grid<Scalar>& a, Index col, Index height, Index width) {
  if (col < 0 || col >= a.cols()) throw ShapeError("column_grid: column out of range");
  if (height * width != a.rows()) {
    throw ShapeError("column_grid: " + detail::shape_str(height, width) + " does not tile " +
                     std::to_string(a.rows()) + " rows");
  }
  Matrix<Scalar> out(height, width);
  for (Index i = 0; i < a.rows(); ++i) out(i / width, i % width) = a.value()(i, col);
  if (!a.on_tape()) return Grid<Scalar>(std::move(out));
  const NodeId ia = a.node();
  const Index rows = a.rows();
  const Index cols = a.cols();
  return a.tape()->record(std::move(out), [ia, rows, cols, col, width](
                                              const Matrix<Scalar>& up, GradSink<Scalar>& sink) {
    Matrix<Scalar> g = Matrix<Scalar>::Zero(rows, cols);
    for (Index i = 0; i < rows; ++i) g(i, col) = up(i / width, i % width);
    sink.add(ia, g);
  });
}

// ---------------------------------------------------------------------------
// Image operators

/// Corner-aligned bilinear resampling to out_h x out_w.
template <typename Scalar>
Grid<Scalar> upsample_bilinear(const Grid<Scalar>& g, Index out_h, Index out_w) {
  if (out_h < 1 || out_w < 1) throw ShapeError("upsample_bilinear: target size must be >= 1");
  if (g.rows() < 1 || g.cols() < 1) throw ShapeError("upsample_bilinear: empty input");
  const auto rs = detail::corner_aligned_samples(g.rows(), out_h);
  const auto cs = detail::corner_aligned_samples(g.cols(), out_w);
  const auto& in = g.value();

  Matrix<Scalar> tmp(out_h, g.cols());
  for (Index i = 0; i < out_h; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Scalar f = static_cast<Scalar>(rs.frac[k]);
    if (f == Scalar(0)) {
      tmp.row(i) = in.row(rs.lo[k]);
    } else {
      tmp.row(i) = in.row(rs.lo[k]) + f * (in.row(rs.hi[k]) - in.row(rs.lo[k]));
    }
  }
  Matrix<Scalar> out(out_h, out_w);
  for (Index j = 0; j < out_w; ++j) {
    const auto k = static_cast<std::size_t>(j);
    const Scalar f = static_cast<Scalar>(cs.frac[k]);
    if (f == Scalar(0)) {
      out.col(j) = tmp.col(cs.lo[k]);
    } else {
      out.col(j) = tmp.col(cs.lo[k]) + f * (tmp.col(cs.hi[k]) - tmp.col(cs.lo[k]));
    }
  }
  if (!g.on_tape()) return Grid<Scalar>(std::move(out));

  const NodeId ig = g.node();
  const Index in_h = g.rows();
  const Index in_w = g.cols();
  return g.tape()->record(std::move(out), [ig, in_h, in_w, rs, cs](const Matrix<Scalar>& up,
                                                                    GradSink<Scalar>& sink) {
    const Index oh = up.rows();
    const Index ow = up.cols();
    Matrix<Scalar> gtmp = Matrix<Scalar>::Zero(oh, in_w);
    for (Index j = 0; j < ow; ++j) {
      const auto k = static_cast<std::size_t>(j);
      const Scalar f = static_cast<Scalar>(cs.frac[k]);
      gtmp.col(cs.lo[k]) += (Scalar(1) - f) * up.col(j);
      if (f != Scalar(0)) gtmp.col(cs.hi[k]) += f * up.col(j);
    }
    Matrix<Scalar> gin = Matrix<Scalar>::Zero(in_h, in_w);
    for (Index i = 0; i < oh; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const Scalar f = static_cast<Scalar>(rs.frac[k]);
      gin.row(rs.lo[k]) += (Scalar(1) - f) * gtmp.row(i);
      if (f != Scalar(0)) gin.row(rs.hi[k]) += f * gtmp.row(i);
    }
    sink.add(ig, gin);
  });
}

/// Sobel gradient magnitude sqrt(Gx² + Gy²) with replicate-padded borders.
///
/// The forward value is the exact magnitude (zero on flat regions); the
/// derivative divides by sqrt(Gx² + Gy² + eps²) so it stays defined there.
template <typename Scalar>
Grid<Scalar> sobel(const Grid<Scalar>& g, Scalar eps = Scalar(1e-12)) {
  if (g.rows() < 3 || g.cols() < 3) {
    throw ShapeError("sobel: grid must be at least 3x3, got " +
                     detail::shape_str(g.rows(), g.cols()));
  }
  const Index h = g.rows();
  const Index w = g.cols();
  const auto& in = g.value();
  auto clampr = [h](Index r) { return std::clamp<Index>(r, 0, h - 1); };
  auto clampc = [w](Index c) { return std::clamp<Index>(c, 0, w - 1); };

  // Each response is (weighted far side) − (weighted near side) with both sides
  // summed in the same order, so flat neighbourhoods cancel exactly.
  Matrix<Scalar> gx(h, w);
  Matrix<Scalar> gy(h, w);
  for (Index r = 0; r < h; ++r) {
    for (Index c = 0; c < w; ++c) {
      auto p = [&](int dr, int dc) { return in(clampr(r + dr), clampc(c + dc)); };
      gx(r, c) = (p(-1, 1) + Scalar(2) * p(0, 1) + p(1, 1)) -
                 (p(-1, -1) + Scalar(2) * p(0, -1) + p(1, -1));
      gy(r, c) = (p(1, -1) + Scalar(2) * p(1, 0) + p(1, 1)) -
                 (p(-1, -1) + Scalar(2) * p(-1, 0) + p(-1, 1));
    }
  }
  Matrix<Scalar> out = (gx.array().square() + gy.array().square()).sqrt().matrix();
  if (!g.on_tape()) return Grid<Scalar>(std::move(out));

  const NodeId ig = g.node();
  Matrix<Scalar> denom =
      (gx.array().square() + gy.array().square() + eps * eps).sqrt().matrix();
  Matrix<Scalar> nx = gx.cwiseQuotient(denom);
  Matrix<Scalar> ny = gy.cwiseQuotient(denom);
  return g.tape()->record(std::move(out), [ig, h, w, nx = std::move(nx), ny = std::move(ny)](
                                              const Matrix<Scalar>& up, GradSink<Scalar>& sink) {
    auto clampr = [h](Index r) { return std::clamp<Index>(r, 0, h - 1); };
    auto clampc = [w](Index c) { return std::clamp<Index>(c, 0, w - 1); };
    Matrix<Scalar> gin = Matrix<Scalar>::Zero(h, w);
    for (Index r = 0; r < h; ++r) {
      for (Index c = 0; c < w; ++c) {
        const Scalar ux = up(r, c) * nx(r, c);
        const Scalar uy = up(r, c) * ny(r, c);
        if (ux == Scalar(0) && uy == Scalar(0)) continue;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            gin(clampr(r + dr), clampc(c + dc)) +=
                Scalar(detail::kSobelX[dr + 1][dc + 1]) * ux +
                Scalar(detail::kSobelY[dr + 1][dc + 1]) * uy;
          }
        }
      }
    }
    sink.add(ig, gin);
  });
}

// ---------------------------------------------------------------------------
// Gradient routing

template <typename Scalar>
Grid<Scalar> stop_gradient(const Grid<Scalar>& a) {
  return a.detached();
}

/// Forward value hard + (soft − anchor), gradient routed to `soft` unchanged.
///
/// With anchor equal to soft's current value this is stopgrad(hard − soft) + soft
/// whose forward value is `hard` bit for bit. Holding the anchor fixed while
/// `soft` moves reproduces the same construction with the stop-gradient term frozen.
template <typename Scalar>
Grid<Scalar> straight_through(const Matrix<Scalar>& hard, const Grid<Scalar>& soft,
                              const Matrix<Scalar>& anchor) {
  if (hard.rows() != soft.rows() || hard.cols() != soft.cols() || anchor.rows() != soft.rows() ||
      anchor.cols() != soft.cols()) {
    throw ShapeError("straight_through: shape mismatch");
  }
  Matrix<Scalar> out = hard + (soft.value() - anchor);
  if (!soft.on_tape()) return Grid<Scalar>(std::move(out));
  const NodeId is = soft.node();
  return soft.tape()->record(std::move(out),
                             [is](const Matrix<Scalar>& up, GradSink<Scalar>& sink) {
                               sink.add(is, up);
                             });
}

template <typename Scalar>
Grid<Scalar> straight_through(const Matrix<Scalar>& hard, const Grid<Scalar>& soft) {
  return straight_through(hard, soft, soft.value());
}

}  // namespace tolo
