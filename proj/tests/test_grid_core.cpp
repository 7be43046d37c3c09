#include <doctest.h>

#include <filesystem>
#include <limits>

#include "support.hpp"
#include "tolo/errors.hpp"
#include "tolo/grid_io.hpp"

using namespace tolo;
using tolo::testing::Rng;
using tolo::testing::op_gradient_error;
using tolo::testing::random_index;
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

MatrixXd step_image() {
  MatrixXd m = MatrixXd::Zero(8, 8);
  m.rightCols(4).setOnes();
  return m;
}

}  // namespace

TEST_SUITE("grid-core") {

TEST_CASE("matmul examples") {
  const MatrixXd m = mat({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
  CHECK(matmul(Grid<double>(MatrixXd::Identity(3, 3)), Grid<double>(m)).value() == m);
  CHECK(matmul(Grid<double>(mat({{1, 2}, {3, 4}})), Grid<double>(mat({{1}, {1}}))).value() ==
        mat({{3}, {7}}));
  CHECK_THROWS_AS(matmul(Grid<double>::ones(2, 3), Grid<double>::ones(2, 3)), ShapeError);
}

TEST_CASE("softmax examples") {
  const auto uniform = softmax_rows(Grid<double>(MatrixXd::Constant(1, 5, 0.7))).value();
  for (Index c = 0; c < 5; ++c) CHECK(uniform(0, c) == doctest::Approx(0.2).epsilon(1e-15));

  const auto s = softmax_rows(Grid<double>(mat({{0.0, std::log(3.0)}}))).value();
  CHECK(s(0, 0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(s(0, 1) == doctest::Approx(0.75).epsilon(1e-14));

  const auto big = softmax_rows(Grid<double>(mat({{1000.0, 1000.0}}))).value();
  CHECK(big(0, 0) == 0.5);
  CHECK(big(0, 1) == 0.5);
}

TEST_CASE("upsample examples") {
  const auto c = upsample_bilinear(Grid<double>(MatrixXd::Constant(3, 5, 2.5)), 7, 4).value();
  CHECK((c.array() == 2.5).all());

  const auto up = upsample_bilinear(Grid<double>(mat({{0, 1}, {0, 1}})), 4, 4).value();
  for (Index r = 0; r < 4; ++r) {
    CHECK(up(r, 0) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(up(r, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(up(r, 2) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(up(r, 3) == doctest::Approx(1.0).epsilon(1e-15));
  }

  Rng rng(7);
  const MatrixXd g = random_matrix(rng, 5, 6);
  CHECK(upsample_bilinear(Grid<double>(g), 5, 6).value() == g);
  CHECK_THROWS_AS(upsample_bilinear(Grid<double>(g), 0, 6), ShapeError);
}

TEST_CASE("sobel examples") {
  CHECK((sobel(Grid<double>(MatrixXd::Constant(6, 9, 0.37))).value().array() == 0.0).all());

  const auto e = sobel(Grid<double>(step_image())).value();
  for (Index c = 0; c < 8; ++c) {
    const bool adjacent = c == 3 || c == 4;
    for (Index r = 0; r < 8; ++r) {
      if (adjacent) {
        CHECK(e(r, c) == doctest::Approx(4.0));
      } else {
        CHECK(e(r, c) == 0.0);
      }
    }
  }
  CHECK_THROWS_AS(sobel(Grid<double>::ones(2, 2)), ShapeError);
}

TEST_CASE("reductions and hadamard") {
  CHECK(sum(Grid<double>::ones(64, 64)).item() == 4096.0);
  Rng rng(3);
  const MatrixXd g = random_matrix(rng, 4, 5);
  CHECK(hadamard(Grid<double>(g), Grid<double>::ones(4, 5)).value() == g);
  CHECK_THROWS_AS(hadamard(Grid<double>::ones(2, 2), Grid<double>::ones(2, 3)), ShapeError);
  const Grid<double> q(mat({{0, 2}, {4, 6}}));
  CHECK(reduce_min(q) == 0.0);
  CHECK(reduce_max(q) == 6.0);
}

TEST_CASE("backward examples") {
  Rng rng(11);
  const MatrixXd z = random_matrix(rng, 6, 7);
  {
    Tape<double> tape;
    const auto leaf = tape.leaf(z);
    const auto g = tape.backward(sum(leaf));
    CHECK((g[leaf].array() == 1.0).all());
  }
  {
    Tape<double> tape;
    const auto leaf = tape.leaf(z);
    const auto g = tape.backward(sum(hadamard(leaf, leaf)));
    CHECK(g[leaf].isApprox(2.0 * z, 1e-15));
  }
}

TEST_CASE("backward contract errors") {
  Tape<double> tape;
  const auto leaf = tape.leaf(MatrixXd::Ones(3, 3));
  CHECK_THROWS_AS(tape.backward(leaf), ContractError);
  CHECK_THROWS_AS(tape.backward(Grid<double>::ones(1, 1)), ContractError);
  Tape<double> other;
  const auto foreign = other.leaf(MatrixXd::Ones(1, 1));
  CHECK_THROWS_AS(tape.backward(foreign), ContractError);
  const auto foreign3 = other.leaf(MatrixXd::Ones(3, 3));
  CHECK_THROWS_AS(leaf + foreign3, ContractError);
}

TEST_CASE("leaf without grad and unreached leaf") {
  Tape<double> tape;
  const auto a = tape.leaf(MatrixXd::Ones(2, 2));
  const auto b = tape.leaf(MatrixXd::Ones(2, 2));
  const auto fixed = tape.leaf(MatrixXd::Ones(2, 2), false);
  const auto g = tape.backward(sum(hadamard(a, fixed)));
  CHECK((g[a].array() == 1.0).all());
  CHECK((g[b].array() == 0.0).all());
  CHECK_FALSE(g.contains(fixed));
}

TEST_CASE("finite differences for every differentiable op") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    const Index h = random_index(rng, 3, 16);
    const Index w = random_index(rng, 3, 16);
    const MatrixXd x = random_matrix(rng, h, w);
    const MatrixXd other = random_matrix(rng, h, w);
    const MatrixXd positive = random_matrix(rng, h, w, 0.5, 2.0);
    const Index k = random_index(rng, 1, 16);
    const MatrixXd right = random_matrix(rng, w, k);
    const MatrixXd left = random_matrix(rng, k, h);
    const double s = random_matrix(rng, 1, 1)(0, 0) + 1.5;
    const auto weights = [&](Index r, Index c) { return random_matrix(rng, r, c); };
    const double tol = 1e-3;

    using G = Grid<double>;
    CHECK(op_gradient_error([&](const G& g) { return matmul(g, G(right)); }, x, weights(h, k)) <= tol);
    CHECK(op_gradient_error([&](const G& g) { return matmul(G(left), g); }, x, weights(k, w)) <= tol);
    CHECK(op_gradient_error([&](const G& g) { return matmul(g, transpose(g)); }, x, weights(h, h)) <= tol);
    CHECK(op_gradient_error([&](const G& g) { return transpose(g); }, x, weights(w, h)) <= tol);
    CHECK(op_gradient_error([&](const G& g) { return g + G(other); }, x, weights(h, w)) <= tol);
    CHECK(op_gradient_error([&](const G& g) { return G(other) - g; }, x, weights(h, w)) <= tol);
    CHECK(op_gradient_error([&](const G& g) { return hadamard(g, g); }, x, weights(h, w)) <= tol);
    CHECK(op_gradient_error([&](const G& g) { return divide(g, G(positive)); }, x, weights(h, w)) <= tol);
    CHECK(op_gradient_error([&](const G& g) { return divide(G(other), g + 3.0); }, x, weights(h, w)) <= tol);
    CHECK(op_gradient_error([&](const G& g) { return s * g - 0.5; }, x, weights(h, w)) <= tol);
    CHECK(op_gradient_error([&](const G& g) { return g / s + 1.0; }, x, weights(h, w)) <= tol);
    CHECK(op_gradient_error([&](const G& g) { return 2.0 - (-g) * s; }, x, weights(h, w)) <= tol);
    CHECK(op_gradient_error([&](const G& g) { return sigmoid(4.0 * g); }, x, weights(h, w)) <= tol);
    CHECK(op_gradient_error([&](const G& g) { return sum(hadamard(g, g)); }, x, weights(1, 1)) <= tol);
    CHECK(op_gradient_error([&](const G& g) { return softmax_rows(3.0 * g); }, x, weights(h, w)) <= tol);
    CHECK(op_gradient_error([&](const G& g) { return column_grid(g, w - 1, h, 1); }, x, weights(h, 1)) <= tol);
    const Index oh = random_index(rng, 1, 16);
    const Index ow = random_index(rng, 1, 16);
    CHECK(op_gradient_error([&](const G& g) { return upsample_bilinear(g, oh, ow); }, x, weights(oh, ow)) <= tol);
    CHECK(op_gradient_error([&](const G& g) { return sobel(g); }, x, weights(h, w)) <= tol);
    const MatrixXd hard = tolo::testing::random_mask(rng, h, w, 0.5);
    const MatrixXd anchor = random_matrix(rng, h, w);
    CHECK(op_gradient_error([&](const G& g) { return straight_through(hard, sigmoid(g), anchor); },
                            x, weights(h, w)) <= tol);
  }
}

TEST_CASE("softmax rows sum to one") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const MatrixXd x = random_matrix(rng, random_index(rng, 1, 16), random_index(rng, 1, 16), -50, 50);
    const auto s = softmax_rows(Grid<double>(x)).value();
    for (Index r = 0; r < s.rows(); ++r) CHECK(std::abs(s.row(r).sum() - 1.0) <= 1e-9);
  }
}

TEST_CASE("upsample stays within input bounds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const MatrixXd x = random_matrix(rng, random_index(rng, 1, 16), random_index(rng, 1, 16));
    const auto up = upsample_bilinear(Grid<double>(x), random_index(rng, 1, 64), random_index(rng, 1, 64)).value();
    CHECK(up.minCoeff() >= x.minCoeff());
    CHECK(up.maxCoeff() <= x.maxCoeff());
  }
}

TEST_CASE("sobel of any constant is exactly zero") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const double c = random_matrix(rng, 1, 1, -1e6, 1e6)(0, 0);
    const auto e = sobel(Grid<double>(MatrixXd::Constant(random_index(rng, 3, 16), random_index(rng, 3, 16), c)));
    CHECK((e.value().array() == 0.0).all());
  }
}

TEST_CASE("backward visits each node once") {
  for (int n : {1, 10, 100, 1000}) {
    Tape<double> tape;
    auto x = tape.leaf(MatrixXd::Ones(2, 2));
    Grid<double> y = x;
    for (int i = 0; i < n; ++i) y = 1.0001 * y;
    tape.backward(sum(y));
    CHECK(tape.last_visit_count() <= tape.size());
    CHECK(tape.last_visit_count() == static_cast<std::size_t>(n + 2));
  }
}

TEST_CASE("straight-through forward equals the hard value") {
  Rng rng(5);
  const MatrixXd hard = tolo::testing::random_mask(rng, 9, 9, 0.4);
  const MatrixXd soft = random_matrix(rng, 9, 9);
  Tape<double> tape;
  const auto leaf = tape.leaf(soft);
  CHECK(straight_through(hard, leaf).value() == hard);
  CHECK(straight_through(hard, leaf, soft).value() == hard);
  const auto g = tape.backward(sum(straight_through(hard, leaf)));
  CHECK((g[leaf].array() == 1.0).all());
}

TEST_CASE("stop_gradient blocks the path") {
  Tape<double> tape;
  const auto x = tape.leaf(MatrixXd::Constant(2, 2, 3.0));
  const auto g = tape.backward(sum(hadamard(x, stop_gradient(x))));
  CHECK((g[x].array() == 3.0).all());
}

TEST_CASE("item on non-scalar grid") {
  CHECK_THROWS_AS(Grid<double>::ones(2, 1).item(), ShapeError);
}

TEST_CASE("tologrid round trip") {
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    const MatrixXd m = random_matrix(rng, random_index(rng, 1, 16), random_index(rng, 1, 16), -1e3, 1e3);
    const MatrixXd single = m.cast<float>().cast<double>();
    CHECK(decode_tologrid(encode_tologrid(m)) == single);
  }
  const auto bytes = encode_tologrid(mat({{1, 2}, {3, 4}}));
  REQUIRE(bytes.size() == 16 + 16);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "TOLG");
  CHECK(bytes[4] == 1);
  CHECK(bytes[8] == 2);
  CHECK(bytes[12] == 2);
  // 1.0f little endian
  CHECK(bytes[16] == 0x00);
  CHECK(bytes[19] == 0x3f);
}

TEST_CASE("tologrid rejects malformed input") {
  auto bytes = encode_tologrid(mat({{1, 2}, {3, 4}}));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_tologrid(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 2;
  CHECK_THROWS_AS(decode_tologrid(bad_version), FormatError);
  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_tologrid(truncated), FormatError);
  auto zero_dim = bytes;
  zero_dim[8] = 0;
  CHECK_THROWS_AS(decode_tologrid(zero_dim), FormatError);
  auto nan = encode_tologrid(mat({{std::numeric_limits<double>::quiet_NaN()}}));
  CHECK_THROWS_AS(decode_tologrid(nan), FormatError);
  CHECK_THROWS_AS(read_tologrid("/nonexistent/grid.tolog"), IoError);
}

TEST_CASE("pgm export") {
  const auto pgm = encode_pgm(mat({{0, 1}, {2, 4}}));
  CHECK(pgm == "P2\n2 2\n255\n0 64\n128 255\n");
  const auto flat = encode_pgm(MatrixXd::Constant(1, 2, 3.0));
  CHECK(flat == "P2\n2 1\n255\n0 0\n");
}

TEST_CASE("atomic writes leave no temporary file") {
  const auto dir = std::filesystem::temp_directory_path() / "tolo_atomic_test";
  std::filesystem::remove_all(dir);
  const auto path = (dir / "nested" / "a.txt").string();
  write_file_atomic(path, "first");
  write_file_atomic(path, "second");
  CHECK(read_file(path) == "second");
  CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
