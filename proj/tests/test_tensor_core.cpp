#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mender/box.hpp"
#include "mender/hungarian.hpp"
#include "mender/rng.hpp"
#include "mender/tensor.hpp"

using namespace mender;

namespace {

Matrix mat(std::size_t r, std::size_t c, std::vector<double> v) {
  Matrix m(r, c);
  std::copy(v.begin(), v.end(), m.data().begin());
  return m;
}

// Exhaustive minimum over all permutations; rows ≤ cols.
double brute_force_cost(const Matrix& cost) {
  std::vector<int> cols(cost.cols());
  std::iota(cols.begin(), cols.end(), 0);
  double best = INFINITY;
  do {
    double s = 0.0;
    for (std::size_t r = 0; r < cost.rows(); ++r) s += cost(r, static_cast<std::size_t>(cols[r]));
    best = std::min(best, s);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

}  // namespace

TEST(Matmul, IdentityZeroAndHandExpansion) {
  const Matrix b = mat(2, 2, {3, 4, 5, 6});
  EXPECT_EQ(matmul(Matrix::identity(2), b), b);
  EXPECT_EQ(matmul(mat(1, 2, {1, 2}), mat(2, 1, {0, 0})), mat(1, 1, {0}));
  EXPECT_EQ(matmul(mat(2, 2, {1, 2, 3, 4}), mat(2, 1, {5, 6})), mat(2, 1, {17, 39}));
}

TEST(Matmul, ShapeMismatchThrows) { EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError); }

TEST(Matmul, TransposedVariantsAgree) {
  Rng rng(3);
  const Matrix a = Matrix::random_normal(4, 5, 1.0, rng), b = Matrix::random_normal(6, 5, 1.0, rng);
  EXPECT_LT(max_abs_diff(matmul_nt(a, b), matmul(a, transpose(b))), 1e-12);
  const Matrix c = Matrix::random_normal(4, 3, 1.0, rng);
  EXPECT_LT(max_abs_diff(matmul_tn(a, c), matmul(transpose(a), c)), 1e-12);
}

TEST(Softmax, RowCases) {
  const Matrix s = softmax_rows(mat(3, 2, {0, 0, std::log(2.0), 0, 1000, 0}));
  EXPECT_DOUBLE_EQ(s(0, 0), 0.5);
  EXPECT_NEAR(s(1, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s(1, 1), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(s(2, 0), 1.0, 1e-15);
  EXPECT_TRUE(all_finite(s));
}

TEST(Softmax, RandomRowsSumToOne) {
  Rng rng(11);
  const Matrix s = softmax_rows(Matrix::random_normal(20, 9, 30.0, rng));
  for (std::size_t r = 0; r < s.rows(); ++r) {
    double sum = 0.0;
    for (double v : s.row(r)) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(CrossAttention, SingleKeyGivesOnes) {
  Rng rng(5);
  const auto p = AttentionParams::random(8, 2, rng);
  const Matrix a = cross_attention(Matrix::random_normal(4, 8, 1.0, rng), Matrix::random_normal(1, 8, 1.0, rng), p);
  for (std::size_t r = 0; r < 4; ++r) EXPECT_DOUBLE_EQ(a(r, 0), 1.0);
}

TEST(CrossAttention, OrthonormalIdentityIsDiagonallyDominant) {
  const Matrix x = Matrix::identity(3);
  const Matrix a = cross_attention(x, x, AttentionParams::identity(3));
  // logits are I/√3, so each row is softmax of (1/√3, 0, 0)
  const double e = std::exp(1.0 / std::sqrt(3.0));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(a(i, j), (i == j ? e : 1.0) / (e + 2.0), 1e-15);
}

TEST(CrossAttention, PermutingKeysPermutesColumns) {
  Rng rng(8);
  const auto p = AttentionParams::random(8, 4, rng);
  const Matrix x = Matrix::random_normal(3, 8, 1.0, rng), y = Matrix::random_normal(4, 8, 1.0, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Matrix yp(4, 8);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t c = 0; c < 8; ++c) yp(j, c) = y(perm[j], c);
  const Matrix a = cross_attention(x, y, p), ap = cross_attention(x, yp, p);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(ap(i, j), a(i, perm[j]), 1e-15);
}

TEST(CrossAttention, WidthMismatchThrows) {
  EXPECT_THROW(cross_attention(Matrix(2, 4), Matrix(2, 3), AttentionParams::identity(4)), ShapeError);
}

TEST(CrossAttention, HeadCountMustDivideWidth) {
  EXPECT_THROW(AttentionParams::identity(6, 4), ConfigError);
}

TEST(TripleCorrelation, HandExpansions) {
  const Matrix e = mat(1, 2, {1, 2}), x = mat(1, 2, {3, 4}), p = mat(1, 2, {5, 6});
  EXPECT_DOUBLE_EQ(triple_correlation(e, x, p)(0, 0, 0), 63.0);
  EXPECT_DOUBLE_EQ(triple_correlation(e, x, p, CoreKind::kAllOnes)(0, 0, 0), 231.0);
}

TEST(TripleCorrelation, AllOnesCoreIsRankOne) {
  Rng rng(2);
  const Tensor3 t = triple_correlation(Matrix::random_normal(3, 4, 1.0, rng), Matrix::random_normal(3, 4, 1.0, rng),
                                       Matrix::random_normal(3, 4, 1.0, rng), CoreKind::kAllOnes);
  for (auto axis : {Axis::kRegion, Axis::kTracklet, Axis::kPrompt})
    for (std::size_t s = 0; s < 3; ++s) {
      const Matrix m = tensor_slice(t, axis, s);
      for (std::size_t a = 0; a + 1 < m.rows(); ++a)
        for (std::size_t b = 0; b + 1 < m.cols(); ++b)
          EXPECT_NEAR(m(a, b) * m(a + 1, b + 1) - m(a, b + 1) * m(a + 1, b), 0.0, 1e-10);
    }
}

TEST(TripleCorrelation, ZeroRowGivesZeroSliceAndScalingIsExact) {
  Rng rng(4);
  Matrix e = Matrix::random_normal(3, 4, 1.0, rng);
  const Matrix x = Matrix::random_normal(2, 4, 1.0, rng), p = Matrix::random_normal(2, 4, 1.0, rng);
  for (double& v : e.row(1)) v = 0.0;
  const Tensor3 t = triple_correlation(e, x, p);
  const Matrix zero_slice = tensor_slice(t, Axis::kRegion, 1);
  for (double v : zero_slice.data()) EXPECT_EQ(v, 0.0);
  Matrix e2 = e;
  for (double& v : e2.row(0)) v *= 2.0;
  const Tensor3 t2 = triple_correlation(e2, x, p);
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(t2(0, j, k), 2.0 * t(0, j, k));
}

TEST(TripleCorrelation, WidthMismatchThrows) {
  EXPECT_THROW(triple_correlation(Matrix(1, 2), Matrix(1, 3), Matrix(1, 2)), ShapeError);
  EXPECT_THROW(parse_core_kind("diagonal-ish"), ConfigError);
}

TEST(TensorSlice, StackRoundTripAndLateralSliceOracle) {
  Rng rng(6);
  const Matrix e = Matrix::random_normal(3, 5, 1.0, rng), x = Matrix::random_normal(3, 5, 1.0, rng),
               p = Matrix::random_normal(3, 5, 1.0, rng);
  const Tensor3 t = triple_correlation(e, x, p);
  for (auto axis : {Axis::kRegion, Axis::kTracklet, Axis::kPrompt}) {
    std::vector<Matrix> slices;
    for (std::size_t s = 0; s < 3; ++s) slices.push_back(tensor_slice(t, axis, s));
    EXPECT_EQ(stack_slices(slices, axis), t);
  }
  for (std::size_t j = 0; j < 3; ++j) {
    const Matrix lateral = tensor_slice(t, Axis::kTracklet, j);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t k = 0; k < 3; ++k) {
        double s = 0.0;
        for (std::size_t d = 0; d < 5; ++d) s += e(i, d) * x(j, d) * p(k, d);
        EXPECT_NEAR(lateral(i, k), s, 1e-12);
      }
  }
  EXPECT_THROW(tensor_slice(t, Axis::kRegion, 3), IndexError);
}

TEST(LayerNorm, Cases) {
  const std::vector<double> g{1, 1}, b{0, 0};
  const Matrix c = layer_norm(mat(1, 2, {3, 3}), g, b);
  EXPECT_EQ(c(0, 0), 0.0);
  EXPECT_EQ(c(0, 1), 0.0);
  const Matrix u = layer_norm(mat(1, 2, {1, -1}), g, b);
  EXPECT_NEAR(u(0, 0), 1.0, 1e-5);
  EXPECT_NEAR(u(0, 1), -1.0, 1e-5);
}

TEST(LayerNorm, OutputStatisticsFollowGainAndBias) {
  Rng rng(9);
  const std::size_t d = 64;
  std::vector<double> gain(d, 2.0), bias(d, 0.5);
  const Matrix y = layer_norm(Matrix::random_normal(5, d, 3.0, rng), gain, bias);
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0.0, var = 0.0;
    for (double v : y.row(r)) mean += v;
    mean /= d;
    for (double v : y.row(r)) var += (v - mean) * (v - mean);
    var /= d;
    EXPECT_NEAR(mean, 0.5, 1e-12);
    EXPECT_NEAR(var, 4.0, 1e-4);
  }
}

TEST(Giou, HandCases) {
  const Box a{0, 0, 1, 1};
  // area epsilon keeps the degenerate hull finite
  EXPECT_NEAR(giou(a, a), 1.0, 1e-8);
  EXPECT_NEAR(giou_loss(a, a), 0.0, 1e-8);
  EXPECT_NEAR(giou(a, Box{2, 0, 1, 1}), -1.0 / 3.0, 1e-9);
  EXPECT_NEAR(giou(a, Box{1e6, 0, 1, 1}), -1.0, 1e-5);
}

TEST(Giou, ContainedBoxEqualsIou) {
  const Box outer{0.5, 0.5, 0.4, 0.4}, inner{0.5, 0.5, 0.2, 0.1};
  EXPECT_NEAR(giou(outer, inner), iou(outer, inner), 1e-8);
  Rng rng(12);
  for (int n = 0; n < 200; ++n) {
    const Box p{rng.uniform(), rng.uniform(), 0.01 + rng.uniform() * 0.3, 0.01 + rng.uniform() * 0.3};
    const Box q{rng.uniform(), rng.uniform(), 0.01 + rng.uniform() * 0.3, 0.01 + rng.uniform() * 0.3};
    const double g = giou(p, q);
    EXPECT_GE(g, -1.0);
    EXPECT_LE(g, 1.0);
  }
}

TEST(Hungarian, FixedCases) {
  const Assignment a = hungarian(mat(2, 2, {1, 2, 2, 4}));
  EXPECT_EQ(a.row_to_col, (std::vector<int>{1, 0}));
  EXPECT_DOUBLE_EQ(a.total_cost, 4.0);
  const Assignment d = hungarian(mat(3, 3, {0, 5, 5, 5, 0, 5, 5, 5, 0}));
  EXPECT_EQ(d.row_to_col, (std::vector<int>{0, 1, 2}));
}

TEST(Hungarian, RectangularLeavesRowsUnassigned) {
  const Assignment a = hungarian(mat(3, 2, {1, 9, 9, 1, 0, 0}));
  int unassigned = 0;
  for (int c : a.row_to_col) unassigned += c < 0;
  EXPECT_EQ(unassigned, 1);
  EXPECT_DOUBLE_EQ(a.total_cost, 1.0);
}

TEST(Hungarian, MatchesExhaustiveSearch) {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(7);
    Matrix c(n, n);
    for (double& v : c.data()) v = std::floor(rng.uniform() * 20.0);
    EXPECT_DOUBLE_EQ(hungarian(c).total_cost, brute_force_cost(c)) << "trial " << trial;
  }
}

TEST(Hungarian, GatedPairsAreNeverMatched) {
  const Matrix c = mat(2, 2, {0, 1, 1, 0});
  const GatedMatch m = gated_hungarian(c, [](std::size_t r, std::size_t col) { return !(r == 0 && col == 0); });
  for (auto [r, col] : m.pairs) EXPECT_FALSE(r == 0 && col == 0);
  EXPECT_EQ(m.pairs.size() + m.unmatched_rows.size(), 2u);
}
