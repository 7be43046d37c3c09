#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "support.hpp"
#include "tolo/box.hpp"
#include "tolo/errors.hpp"
#include "tolo/losses.hpp"

using namespace tolo;
using tolo::testing::Rng;
using tolo::testing::random_index;
using tolo::testing::random_mask;
using tolo::testing::random_matrix;

namespace {

MatrixXd mat(std::initializer_list<std::initializer_list<double>> rows) {
  MatrixXd m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index r = 0;
  for (const auto& row : rows) {
    Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

MatrixXd rect(Index n, Index r0, Index c0, Index r1, Index c1) {
  MatrixXd m = MatrixXd::Zero(n, n);
  m.block(r0, c0, r1 - r0, c1 - c0).setOnes();
  return m;
}

/// A smooth bump centered in a rectangle; positive everywhere.
MatrixXd bump(Index n, double cr, double cc, double sigma) {
  MatrixXd m(n, n);
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < n; ++c) {
      const double d2 = (r - cr) * (r - cr) + (c - cc) * (c - cc);
      m(r, c) = std::exp(-d2 / (2 * sigma * sigma));
    }
  }
  return m;
}

ConceptMaps<double> make_concept(const MatrixXd& raw, const MatrixXd& box, const LossWeights<double>& w = {}) {
  return build_concept_maps(Grid<double>(raw), box, w);
}

/// Brute-force bounding rectangle of the 1-cells.
MatrixXd mbr_oracle(const MatrixXd& m) {
  Index r0 = m.rows(), c0 = m.cols(), r1 = -1, c1 = -1;
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (m(r, c) != 0.0) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
    }
  }
  MatrixXd out = MatrixXd::Zero(m.rows(), m.cols());
  if (r1 >= 0) out.block(r0, c0, r1 - r0 + 1, c1 - c0 + 1).setOnes();
  return out;
}

}  // namespace

TEST_SUITE("guidance-losses") {

TEST_CASE("normalize_map examples") {
  CHECK(normalize_map(Grid<double>(mat({{0, 2}, {4, 8}}))).value() == mat({{0, 0.25}, {0.5, 1}}));
  CHECK((normalize_map(Grid<double>(MatrixXd::Constant(3, 3, 5.0))).value().array() == 0.0).all());
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const MatrixXd m = random_matrix(rng, random_index(rng, 1, 16), random_index(rng, 2, 16), -3, 7);
    const auto n = normalize_map(Grid<double>(m)).value();
    CHECK(n.minCoeff() == 0.0);
    CHECK(n.maxCoeff() == 1.0);
  }
}

TEST_CASE("dynamic_threshold examples") {
  Rng rng(1);
  const MatrixXd m = random_matrix(rng, 8, 8, 0, 1);
  const MatrixXd box = rect(8, 2, 2, 6, 5);
  const double inside = (m.array() * box.array()).sum() / box.sum();
  CHECK(dynamic_threshold(m, box, 1.0) == doctest::Approx(inside).epsilon(1e-15));
  CHECK(dynamic_threshold(mat({{1, 0}, {0, 0}}), mat({{1, 0}, {0, 0}}), 0.5) == 0.5);
  CHECK_THROWS_AS(dynamic_threshold(m, MatrixXd(MatrixXd::Ones(8, 8)), 0.5), InputError);
  CHECK_THROWS_AS(dynamic_threshold(m, MatrixXd(MatrixXd::Zero(8, 8)), 0.5), InputError);
}

TEST_CASE("foreground_mask examples") {
  Rng rng(2);
  const MatrixXd n = normalize_map(Grid<double>(random_matrix(rng, 6, 6))).value();
  CHECK((foreground_mask(n, 0.0).array() == 1.0).all());
  CHECK((foreground_mask(n, 1.0 + 1e-12).array() == 0.0).all());
  CHECK(foreground_mask(mat({{1, 0}, {0.5, 0}}), 0.5) == mat({{1, 0}, {1, 0}}));
}

TEST_CASE("separation_loss examples") {
  const MatrixXd box_a = rect(64, 0, 0, 32, 32);
  const MatrixXd box_b = rect(64, 32, 32, 64, 64);
  const auto a = make_concept(bump(64, 10, 10, 3), box_a);
  const auto b = make_concept(bump(64, 50, 50, 3), box_b);
  const std::vector<ConceptMaps<double>> disjoint{a, b};
  REQUIRE((a.state.mask.array() * b.state.mask.array()).sum() == 0.0);
  CHECK(separation_loss<double>(disjoint, 1e-6).item() == 0.0);

  const std::vector<ConceptMaps<double>> single{a};
  CHECK(separation_loss<double>(single, 1e-6).item() == 0.0);

  const MatrixXd plateau = rect(64, 12, 12, 52, 52);
  const auto p = make_concept(plateau, box_a);
  const auto q = make_concept(plateau, box_b);
  const std::vector<ConceptMaps<double>> same{p, q};
  CHECK(std::abs(separation_loss<double>(same, 1e-6).item() - 1.0) <= 1e-9);
}

TEST_CASE("mbr examples") {
  MatrixXd point = MatrixXd::Zero(5, 5);
  point(2, 3) = 1;
  CHECK(mbr(point) == point);
  MatrixXd two = MatrixXd::Zero(5, 5);
  two(1, 1) = 1;
  two(3, 2) = 1;
  CHECK(mbr(two) == rect(5, 1, 1, 4, 3));
  CHECK(mbr(MatrixXd(MatrixXd::Zero(5, 5))) == MatrixXd::Zero(5, 5));
}

TEST_CASE("mbr matches the brute-force oracle") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const MatrixXd m = random_mask(rng, random_index(rng, 1, 16), random_index(rng, 1, 16), 0.05);
    CHECK(mbr(m) == mbr_oracle(m));
  }
}

TEST_CASE("straight_through_box examples") {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const MatrixXd norm = normalize_map(Grid<double>(random_matrix(rng, 9, 9))).value();
    const MatrixXd box_hat = mbr(foreground_mask(norm, 0.7));
    Tape<double> tape;
    const auto leaf = tape.leaf(norm);
    const auto st = straight_through_box(box_hat, leaf);
    CHECK(st.value() == box_hat);
    const auto g = tape.backward(sum(st));
    CHECK((g[leaf].array() == 1.0).all());
  }
  const MatrixXd hard = rect(6, 1, 1, 4, 4);
  CHECK(straight_through_box(hard, Grid<double>(hard)).value() == hard);
  CHECK_THROWS_AS(straight_through_box(hard, Grid<double>::ones(5, 5)), ShapeError);
}

TEST_CASE("soft_iou examples") {
  const MatrixXd b = rect(20, 0, 0, 10, 10);
  CHECK(soft_iou(b, b) == 1.0);
  CHECK(soft_iou(rect(20, 10, 10, 20, 20), b) == 0.0);
  CHECK(soft_iou(rect(20, 0, 0, 5, 10), b) == 0.5);
  CHECK(soft_iou(MatrixXd(MatrixXd::Zero(20, 20)), MatrixXd(MatrixXd::Zero(20, 20))) == 0.0);
}

TEST_CASE("region_loss examples") {
  const LossWeights<double> w;
  const MatrixXd box = rect(64, 16, 16, 48, 48);
  // mass only inside the box, with a foreground that fills the box exactly
  const auto perfect = make_concept(box, box, w);
  REQUIRE(perfect.state.box_hat == box);
  CHECK(region_loss(perfect, w).item() == 0.0);
  CHECK(boundary_loss(perfect).item() == 0.0);

  // uniform sharp map: sigmoid of a constant
  auto flat = make_concept(MatrixXd::Constant(64, 64, 0.3), box, w);
  const double rho = box.sum() / 4096.0;
  LossWeights<double> only_s = w;
  only_s.lambda_a = 0.0;
  CHECK(region_loss(flat, only_s).item() ==
        doctest::Approx((1.0 - flat.state.iou) * w.lambda_s * (1.0 - rho)).epsilon(1e-12));

  // IoU of 1 annihilates the loss even with mass outside the box
  MatrixXd leaky = box;
  leaky(0, 0) = 0.1;
  const auto l = make_concept(leaky, box, w);
  REQUIRE(l.state.iou == 1.0);
  CHECK(region_loss(l, w).item() == 0.0);
}

TEST_CASE("boundary_loss examples") {
  MatrixXd step = MatrixXd::Zero(64, 64);
  step.rightCols(32).setOnes();
  const auto inside = make_concept(step, rect(64, 0, 20, 64, 40));
  CHECK(boundary_loss(inside).item() == 0.0);
  const auto outside = make_concept(step, rect(64, 0, 50, 64, 64));
  CHECK(boundary_loss(outside).item() == doctest::Approx(1.0 - outside.state.iou).epsilon(1e-15));
  const auto flat = make_concept(MatrixXd::Constant(64, 64, 2.0), rect(64, 0, 0, 8, 8));
  CHECK(boundary_loss(flat).item() == 0.0);
}

TEST_CASE("aggregation_loss is additive over concepts") {
  const LossWeights<double> w;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto a = make_concept(random_matrix(rng, 32, 32, 0, 1), rect(32, 2, 3, 20, 25), w);
    const auto b = make_concept(random_matrix(rng, 32, 32, 0, 1), rect(32, 10, 8, 30, 30), w);
    const std::vector<ConceptMaps<double>> one{a};
    const std::vector<ConceptMaps<double>> both{a, b};
    const double la = region_loss(a, w).item() + boundary_loss(a).item();
    const double lb = region_loss(b, w).item() + boundary_loss(b).item();
    CHECK(aggregation_loss<double>(one, w).item() == doctest::Approx(la).epsilon(1e-14));
    CHECK(aggregation_loss<double>(both, w).item() == doctest::Approx(la + lb).epsilon(1e-14));
  }
  const MatrixXd box_a = rect(64, 0, 0, 30, 30);
  const MatrixXd box_b = rect(64, 30, 30, 60, 60);
  const std::vector<ConceptMaps<double>> placed{make_concept(box_a, box_a, w), make_concept(box_b, box_b, w)};
  CHECK(aggregation_loss<double>(placed, w).item() == 0.0);
}

TEST_CASE("loss invariants on random maps") {
  const LossWeights<double> w;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    const Index n = random_index(rng, 8, 32);
    const std::size_t k = static_cast<std::size_t>(random_index(rng, 2, 4));
    std::vector<ConceptMaps<double>> cms;
    for (std::size_t i = 0; i < k; ++i) {
      const Index r0 = random_index(rng, 0, n - 3);
      const Index c0 = random_index(rng, 0, n - 3);
      const MatrixXd box = rect(n, r0, c0, random_index(rng, r0 + 1, n - 1), random_index(rng, c0 + 1, n - 1));
      cms.push_back(make_concept(random_matrix(rng, n, n, 0, 1), box, w));
    }
    const double sep = separation_loss<double>(cms, w.eps).item();
    CHECK(sep >= 0.0);
    double zero_pairs = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        if (i != j) zero_pairs += (cms[i].state.mask.array() * cms[j].masked_norm.value().array()).sum();
      }
    }
    CHECK((sep == 0.0) == (zero_pairs == 0.0));

    std::vector<ConceptMaps<double>> shuffled = cms;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    CHECK(separation_loss<double>(shuffled, w.eps).item() == doctest::Approx(sep).epsilon(1e-14));

    CHECK(aggregation_loss<double>(cms, w).item() >= 0.0);
    for (const auto& cm : cms) {
      CHECK(region_loss(cm, w).item() <= (1.0 - cm.state.iou) * (w.lambda_s + w.lambda_a) + 1e-15);
      CHECK(cm.box_hat_st.value() == cm.state.box_hat);
    }
  }
}

TEST_CASE("normalization invariance under positive scaling") {
  const LossWeights<double> w;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const MatrixXd raw = random_matrix(rng, 16, 16, 0, 1);
    const MatrixXd box = rect(16, 3, 4, 12, 14);
    const double c = std::exp(random_matrix(rng, 1, 1, -3, 3)(0, 0));
    const auto s1 = detach_state(raw, box, w.lambda);
    const auto s2 = detach_state(MatrixXd(c * raw), box, w.lambda);
    CHECK((s1.norm_anchor - s2.norm_anchor).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(s1.tau == doctest::Approx(s2.tau).epsilon(1e-12));
    // masks agree except where a cell sits within rounding of the threshold
    const MatrixXd margin = (s1.norm_anchor.array() - s1.tau).abs().matrix();
    for (Index i = 0; i < raw.size(); ++i) {
      if (margin.data()[i] > 1e-9) CHECK(s1.mask.data()[i] == s2.mask.data()[i]);
    }
    if (s1.mask == s2.mask) {
      CHECK(s1.box_hat == s2.box_hat);
      CHECK(s1.iou == s2.iou);
    }
  }
}

TEST_CASE("box rasterization uses cell centers") {
  const auto m = rasterize_box<double>(Box{0, 0, 16, 8}, 64);
  CHECK(m.sum() == 2.0);
  CHECK(m(0, 0) == 1.0);
  CHECK(m(0, 1) == 1.0);
  // centers sit at 4 + 8k; the upper bound is exclusive, the lower inclusive
  CHECK(rasterize_box<double>(Box{0, 0, 4, 4}, 64).sum() == 0.0);
  CHECK(rasterize_box<double>(Box{0, 0, 4.5, 4.5}, 64).sum() == 1.0);
  CHECK(rasterize_box<double>(Box{4, 4, 12, 12}, 64).sum() == 1.0);
}

TEST_CASE("loss weights validation") {
  LossWeights<double> w;
  CHECK_NOTHROW(w.validate());
  w.lambda = 1.5;
  CHECK_THROWS_AS(w.validate(), InputError);
  w = {};
  w.sharpness = 0.0;
  CHECK_THROWS_AS(w.validate(), InputError);
  w = {};
  w.eps = 0.0;
  CHECK_THROWS_AS(w.validate(), InputError);
}

}  // TEST_SUITE
