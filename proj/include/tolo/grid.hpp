#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tolo/errors.hpp"

namespace tolo {

using Index = Eigen::Index;
using NodeId = std::ptrdiff_t;

inline constexpr NodeId kNoNode = -1;

/// Row-major dense matrix; every spatial field in the library uses this layout.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixXd = Matrix<double>;

template <typename Scalar>
class Tape;

/// Dense 2D scalar field with an optional identity on a differentiation tape.
///
/// Grids are values: copying one copies its data and keeps the same tape node, so
/// the copy still participates in gradient flow. A grid without a tape node is a
/// constant and may be shared freely.
template <typename Scalar>
class Grid {
 public:
  using MatrixType = Matrix<Scalar>;

  Grid() = default;
  explicit Grid(MatrixType value) : value_(std::move(value)) {}

  static Grid filled(Index rows, Index cols, Scalar v) {
    return Grid(MatrixType::Constant(rows, cols, v));
  }
  static Grid zeros(Index rows, Index cols) { return filled(rows, cols, Scalar(0)); }
  static Grid ones(Index rows, Index cols) { return filled(rows, cols, Scalar(1)); }

  Index rows() const { return value_.rows(); }
  Index cols() const { return value_.cols(); }
  Index size() const { return value_.size(); }

  const MatrixType& value() const { return value_; }
  Scalar operator()(Index r, Index c) const { return value_(r, c); }

  /// Value of a 1x1 grid.
  Scalar item() const {
    if (value_.rows() != 1 || value_.cols() != 1) {
      throw ShapeError("item() requires a 1x1 grid");
    }
    return value_(0, 0);
  }

  bool on_tape() const { return tape_ != nullptr; }
  Tape<Scalar>* tape() const { return tape_; }
  NodeId node() const { return node_; }

  /// Same values, no tape identity.
  Grid detached() const { return Grid(value_); }

 private:
  friend class Tape<Scalar>;

  MatrixType value_;
  Tape<Scalar>* tape_ = nullptr;
  NodeId node_ = kNoNode;
};

/// Receives gradient contributions from an op's backward closure.
template <typename Scalar>
class GradSink {
 public:
  explicit GradSink(std::vector<Matrix<Scalar>>& grads) : grads_(grads) {}

  bool wants(NodeId id) const { return id != kNoNode; }

  template <typename Derived>
  void add(NodeId id, const Eigen::MatrixBase<Derived>& contribution) {
    if (id == kNoNode) return;
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.size() == 0) {
      g = contribution;
    } else {
      g += contribution;
    }
  }

 private:
  std::vector<Matrix<Scalar>>& grads_;
};

/// Gradients of a scalar loss with respect to the leaves that require them.
template <typename Scalar>
class Gradients {
 public:
  void set(NodeId id, Matrix<Scalar> g) { grads_[id] = std::move(g); }

  const Matrix<Scalar>& operator[](const Grid<Scalar>& leaf) const {
    auto it = grads_.find(leaf.node());
    if (it == grads_.end()) {
      throw ContractError("no gradient recorded for this grid");
    }
    return it->second;
  }

  bool contains(const Grid<Scalar>& leaf) const { return grads_.count(leaf.node()) > 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<NodeId, Matrix<Scalar>> grads_;
};

/// Append-only record of differentiable operations.
///
/// Nodes are appended in evaluation order, so parents always precede children
/// and a single reverse sweep visits each node once. A tape and the grids that
/// reference it belong to one thread.
template <typename Scalar>
class Tape {
 public:
  using MatrixType = Matrix<Scalar>;
  using Backward = std::function<void(const MatrixType& upstream, GradSink<Scalar>& sink)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Grid<Scalar> leaf(MatrixType value, bool requires_grad = true) {
    Node node{value.rows(), value.cols(), requires_grad, nullptr};
    return push(std::move(value), std::move(node));
  }

  /// Appends an op result whose backward closure routes gradient to its parents.
  Grid<Scalar> record(MatrixType value, Backward backward) {
    Node node{value.rows(), value.cols(), false, std::move(backward)};
    return push(std::move(value), std::move(node));
  }

  std::size_t size() const { return nodes_.size(); }
  std::size_t last_visit_count() const { return visits_; }

  Gradients<Scalar> backward(const Grid<Scalar>& loss) {
    if (loss.tape() != this) {
      throw ContractError("backward: loss is not a node of this tape");
    }
    if (loss.rows() != 1 || loss.cols() != 1) {
      throw ContractError("backward: loss must be a 1x1 scalar node");
    }
    const auto root = static_cast<std::size_t>(loss.node());
    std::vector<MatrixType> grads(root + 1);
    grads[root] = MatrixType::Ones(1, 1);
    GradSink<Scalar> sink(grads);

    visits_ = 0;
    for (std::size_t i = root + 1; i-- > 0;) {
      ++visits_;
      const Node& node = nodes_[i];
      if (grads[i].size() == 0 || !node.backward) continue;
      node.backward(grads[i], sink);
    }

    Gradients<Scalar> out;
    for (std::size_t i = 0; i <= root; ++i) {
      const Node& node = nodes_[i];
      if (!node.requires_grad) continue;
      if (grads[i].size() == 0) {
        out.set(static_cast<NodeId>(i), MatrixType::Zero(node.rows, node.cols));
      } else {
        out.set(static_cast<NodeId>(i), std::move(grads[i]));
      }
    }
    return out;
  }

 private:
  struct Node {
    Index rows;
    Index cols;
    bool requires_grad;
    Backward backward;
  };

  Grid<Scalar> push(MatrixType value, Node node) {
    Grid<Scalar> g(std::move(value));
    g.tape_ = this;
    g.node_ = static_cast<NodeId>(nodes_.size());
    nodes_.push_back(std::move(node));
    return g;
  }

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

}  // namespace tolo
