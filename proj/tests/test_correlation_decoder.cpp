#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mender/model.hpp"
#include "mender/simworld.hpp"

using namespace mender;

namespace {

TokenMatrix tokens(TokenFamily f, Matrix m) {
  const std::size_t n = m.rows();
  return {f, std::move(m), std::vector<TokenOrigin>(n)};
}

// Straight-line Z = (A_IT A_TP)(prm W^P_V) + A_IT (trk W^T_V) with A per head
// averaged, no shared helpers.
Matrix reference_z(const Matrix& img, const Matrix& trk, const Matrix& prm, const ModelWeights& w) {
  auto attention = [](const Matrix& x, const Matrix& y, const AttentionParams& p) {
    const std::size_t d = p.query.rows(), hw = d / p.heads;
    Matrix a(x.rows(), y.rows());
    for (std::size_t h = 0; h < p.heads; ++h)
      for (std::size_t i = 0; i < x.rows(); ++i) {
        std::vector<double> logit(y.rows());
        double mx = -INFINITY;
        for (std::size_t j = 0; j < y.rows(); ++j) {
          double s = 0.0;
          for (std::size_t c = h * hw; c < (h + 1) * hw; ++c) {
            double q = 0.0, k = 0.0;
            for (std::size_t e = 0; e < d; ++e) {
              q += x(i, e) * p.query(e, c);
              k += y(j, e) * p.key(e, c);
            }
            s += q * k;
          }
          logit[j] = s / std::sqrt(static_cast<double>(d));
          mx = std::max(mx, logit[j]);
        }
        double z = 0.0;
        for (double& v : logit) z += (v = std::exp(v - mx));
        for (std::size_t j = 0; j < y.rows(); ++j) a(i, j) += logit[j] / z / static_cast<double>(p.heads);
      }
    return a;
  };
  const Matrix a_it = attention(img, trk, w.region_tracklet), a_tp = attention(trk, prm, w.visual_prompt);
  const std::size_t d = w.width();
  Matrix z(img.rows(), d);
  for (std::size_t i = 0; i < img.rows(); ++i)
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < trk.rows(); ++j) {
        double vt = 0.0;
        for (std::size_t e = 0; e < d; ++e) vt += trk(j, e) * w.region_tracklet.value(e, c);
        double chain = 0.0;
        for (std::size_t k = 0; k < prm.rows(); ++k) {
          double vp = 0.0;
          for (std::size_t e = 0; e < d; ++e) vp += prm(k, e) * w.visual_prompt.value(e, c);
          chain += a_tp(j, k) * vp;
        }
        acc += a_it(i, j) * (chain + vt);
      }
      z(i, c) = acc;
    }
  return z;
}

}  // namespace

TEST(ForwardSimplified, ChainIsRowStochastic) {
  Rng rng(1);
  const ModelWeights w = ModelWeights::random(16, 4, rng);
  const auto img = tokens(TokenFamily::kImage, Matrix::random_normal(6, 16, 1.0, rng));
  const auto trk1 = tokens(TokenFamily::kTracklet, Matrix::random_normal(1, 16, 1.0, rng));
  const auto prm1 = tokens(TokenFamily::kPrompt, Matrix::random_normal(1, 16, 1.0, rng));
  const TrackingOutput one = forward_simplified(img, trk1, prm1, w);
  const Matrix chain1 = matmul(one.a_it, one.a_tp);
  for (double v : chain1.data()) EXPECT_DOUBLE_EQ(v, 1.0);

  const auto trk = tokens(TokenFamily::kTracklet, Matrix::random_normal(3, 16, 1.0, rng));
  const auto prm = tokens(TokenFamily::kPrompt, Matrix::random_normal(4, 16, 1.0, rng));
  const Matrix chain = matmul(forward_simplified(img, trk, prm, w).a_it, forward_simplified(img, trk, prm, w).a_tp);
  for (std::size_t r = 0; r < chain.rows(); ++r) {
    double s = 0.0;
    for (double v : chain.row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(ForwardSimplified, MatchesStraightLineReference) {
  Rng rng(42);
  const ModelWeights w = ModelWeights::random(8, 2, rng);
  const Matrix img = Matrix::random_normal(4, 8, 1.0, rng), trk = Matrix::random_normal(2, 8, 1.0, rng),
               prm = Matrix::random_normal(3, 8, 1.0, rng);
  const TrackingOutput out = forward_simplified(tokens(TokenFamily::kImage, img), tokens(TokenFamily::kTracklet, trk),
                                                tokens(TokenFamily::kPrompt, prm), w);
  EXPECT_LT(max_abs_diff(out.z, reference_z(img, trk, prm, w)), 1e-12);
}

TEST(ForwardSimplified, InputErrors) {
  Rng rng(2);
  const ModelWeights w = ModelWeights::random(8, 2, rng);
  const auto img = tokens(TokenFamily::kImage, Matrix(4, 8));
  EXPECT_THROW(forward_simplified(img, tokens(TokenFamily::kTracklet, Matrix(0, 8)),
                                  tokens(TokenFamily::kPrompt, Matrix(1, 8)), w),
               ConfigError);
  EXPECT_THROW(forward_simplified(img, tokens(TokenFamily::kTracklet, Matrix(1, 8)),
                                  tokens(TokenFamily::kPrompt, Matrix(0, 8)), w),
               EmptyPromptError);
}

TEST(SliceEquivalence, TrackletPromptLogitsEqualRegionPromptLogitsOfTheSourceCells) {
  const Model m = Model::create({});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scenario s = generate(seed);
    const TokenMatrix prev = m.encode(s.frame(0));
    const TokenMatrix prm = m.embed({ScenarioKind::kName, {"person", "car", "dog"}});
    std::vector<std::vector<std::size_t>> groups;
    for (const auto& o : s.frame(0).objects) groups.push_back({cell_index(o.box, 8, 8)});
    const Matrix trk = pool_rows(prev.tokens, groups);
    const auto region = attention_logits(prev.tokens, prm.tokens, m.weights.visual_prompt);
    const auto tracklet = attention_logits(trk, prm.tokens, m.weights.visual_prompt);
    for (std::size_t h = 0; h < region.size(); ++h)
      for (std::size_t j = 0; j < groups.size(); ++j)
        for (std::size_t k = 0; k < prm.count(); ++k) EXPECT_EQ(tracklet[h](j, k), region[h](groups[j][0], k));
  }
}

TEST(ForwardFull, SinglePromptTokenWithUnitKeyMatchesSimplified) {
  Rng rng(7);
  const std::size_t d = 8;
  ModelWeights w = ModelWeights::random(d, 2, rng);
  // prm·W_K = all-ones row, so Σ_k T = q kᵀ / √D
  Matrix prm(1, d);
  prm(0, 0) = 1.0;
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t r = 0; r < d; ++r) w.visual_prompt.key(r, c) = 0.0;
    w.visual_prompt.key(0, c) = 1.0;
  }
  const auto img = tokens(TokenFamily::kImage, Matrix::random_normal(5, d, 1.0, rng));
  const auto trk = tokens(TokenFamily::kTracklet, Matrix::random_normal(3, d, 1.0, rng));
  const auto p = tokens(TokenFamily::kPrompt, prm);
  EXPECT_LT(max_abs_diff(forward_full(img, trk, p, w).a_it, forward_simplified(img, trk, p, w).a_it), 1e-12);
}

TEST(ForwardFull, ZeroTokensGiveUniformAttention) {
  Rng rng(3);
  const ModelWeights w = ModelWeights::random(8, 2, rng);
  const TrackingOutput out = forward_full(tokens(TokenFamily::kImage, Matrix(4, 8)),
                                          tokens(TokenFamily::kTracklet, Matrix(2, 8)),
                                          tokens(TokenFamily::kPrompt, Matrix(5, 8)), w);
  for (double v : out.a_it.data()) EXPECT_DOUBLE_EQ(v, 0.5);
  for (double v : out.a_tp.data()) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(ForwardFull, TensorIsHeadSumOfScaledTripleProducts) {
  Rng rng(5);
  const std::size_t d = 8;
  const ModelWeights w = ModelWeights::random(d, 2, rng);
  const Matrix img = Matrix::random_normal(3, d, 1.0, rng), trk = Matrix::random_normal(2, d, 1.0, rng),
               prm = Matrix::random_normal(2, d, 1.0, rng);
  const TrackingOutput out = forward_full(tokens(TokenFamily::kImage, img), tokens(TokenFamily::kTracklet, trk),
                                          tokens(TokenFamily::kPrompt, prm), w);
  const Matrix q = matmul(img, w.region_tracklet.query), k = matmul(trk, w.region_tracklet.key),
               p = matmul(prm, w.visual_prompt.key);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t c = 0; c < 2; ++c) {
        double s = 0.0;
        for (std::size_t e = 0; e < d; ++e) s += q(i, e) * k(j, e) * p(c, e);
        EXPECT_NEAR(out.t(i, j, c), s / std::sqrt(8.0), 1e-12);
      }
}

TEST(FlopCount, DoublingScalesCubicVersusQuadratic) {
  Rng rng(9);
  const std::size_t d = 16;
  const ModelWeights w = ModelWeights::random(d, 4, rng);
  auto count = [&](std::size_t n, ForwardMode mode) {
    FlopCounter c;
    forward(mode, tokens(TokenFamily::kImage, Matrix::random_normal(n, d, 1.0, rng)),
            tokens(TokenFamily::kTracklet, Matrix::random_normal(n, d, 1.0, rng)),
            tokens(TokenFamily::kPrompt, Matrix::random_normal(n, d, 1.0, rng)), w, &c);
    return static_cast<double>(c.correlation);
  };
  EXPECT_NEAR(count(64, ForwardMode::kFull) / count(32, ForwardMode::kFull), 8.0, 0.5);
  EXPECT_NEAR(count(64, ForwardMode::kSimplified) / count(32, ForwardMode::kSimplified), 4.0, 0.3);
}

TEST(Decode, ThresholdAndResidual) {
  const Model m = Model::create({});
  const TokenMatrix img = m.encode(generate(1).frame(0));
  const Matrix zero(img.count(), img.width());
  EXPECT_EQ(decode(zero, img, m.weights, 0.0).size(), img.count());
  const Matrix raw = ffn_forward(img.tokens, m.weights.ffn);
  EXPECT_EQ(decoder_logits(zero, img, m.weights), raw);
  std::size_t last = img.count();
  for (double g : {0.0, 0.05, 0.1, 0.12, 0.2, 0.5}) {
    const std::size_t n = decode(zero, img, m.weights, g).size();
    EXPECT_LE(n, last);
    last = n;
  }
}

TEST(Decode, BoxesStayInsideUnitSquare) {
  std::vector<double> raw{40.0, -40.0, 30.0, -30.0, 0.0};
  const Box b = box_from_logits(raw, Box{0.95, 0.05, 0.08, 0.08});
  EXPECT_LE(b.cx, 1.0);
  EXPECT_GE(b.cy, 0.0);
  EXPECT_LT(b.w, 1.0);
  EXPECT_GT(b.h, 0.0);
  const std::vector<double> zero(5, 0.0);
  const Box a = box_from_logits(zero, Box{0.3, 0.4, 0.08, 0.08});
  EXPECT_NEAR(a.cx, 0.3, 1e-15);
  EXPECT_NEAR(a.w, 0.08, 1e-15);
}

TEST(GroundRegions, ThresholdExtremes) {
  const Model m = Model::create({});
  const TokenMatrix img = m.encode(generate(1).frame(0));
  const TokenMatrix prm = m.embed({ScenarioKind::kName, {"person"}});
  EXPECT_TRUE(ground_regions(img, prm, m.weights, 1.0).empty());
  EXPECT_THROW(ground_regions(img, prm, m.weights, 0.0), ConfigError);
}

TEST(TripletObjective, DegenerateAndUniformCases) {
  EXPECT_DOUBLE_EQ(triplet_objective(Tensor3(1, 1, 1, 3.0), 0, 0, 0), 0.0);
  EXPECT_NEAR(triplet_objective(Tensor3(3, 4, 5, 0.7), 1, 2, 3), std::log(60.0), 1e-12);
  EXPECT_THROW(triplet_objective(Tensor3(1, 1, 1), 1, 0, 0), IndexError);
}
