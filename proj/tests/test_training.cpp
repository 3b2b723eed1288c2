#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mender/checkpoint.hpp"
#include "mender/losses.hpp"
#include "mender/training.hpp"

using namespace mender;

namespace {

std::vector<double> flatten(const std::vector<Matrix>& ms) {
  std::vector<double> out;
  for (const auto& m : ms) out.insert(out.end(), m.data().begin(), m.data().end());
  return out;
}

// Splits x back into matrices shaped like `like`.
std::vector<Matrix> unflatten(const std::vector<double>& x, const std::vector<Matrix>& like) {
  std::vector<Matrix> out;
  std::size_t n = 0;
  for (const auto& m : like) {
    Matrix r(m.rows(), m.cols());
    for (double& v : r.data()) v = x[n++];
    out.push_back(std::move(r));
  }
  return out;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.epochs = 2;
  c.steps_per_epoch = 15;
  return c;
}

std::string checkpoint_text(const Model& m, const OptimizerState* opt = nullptr) {
  std::ostringstream out;
  write_checkpoint(out, m, opt);
  return out.str();
}

}  // namespace

TEST(AlignmentLoss, Cases) {
  const Matrix one(1, 4, 0.3);
  EXPECT_NEAR(alignment_loss_grad(one, one, PositivePairs::from_links({{0, 0}})).value, 0.0, 1e-15);
  Matrix trk = Matrix::identity(2), prm = Matrix::identity(2);
  const auto pos = PositivePairs::from_links({{0, 0}, {1, 1}});
  const double small = alignment_loss_grad(trk, prm, pos).value;
  trk *= std::sqrt(10.0);
  prm *= std::sqrt(10.0);
  EXPECT_LT(alignment_loss_grad(trk, prm, pos).value, small);
  EXPECT_NEAR(small, 2.0 * std::log(1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_THROW(alignment_loss_grad(trk, prm, PositivePairs{}), SupervisionError);
}

TEST(AlignmentLoss, SwapSymmetry) {
  Rng rng(3);
  const Matrix trk = Matrix::random_normal(3, 5, 1.0, rng), prm = Matrix::random_normal(4, 5, 1.0, rng);
  const std::vector<std::pair<std::size_t, std::size_t>> links{{0, 1}, {2, 3}, {1, 1}};
  std::vector<std::pair<std::size_t, std::size_t>> swapped;
  for (auto [j, k] : links) swapped.emplace_back(k, j);
  EXPECT_NEAR(alignment_loss_grad(trk, prm, PositivePairs::from_links(links)).value,
              alignment_loss_grad(prm, trk, PositivePairs::from_links(swapped)).value, 1e-12);
}

TEST(ObjectnessLoss, Cases) {
  Rng rng(4);
  const Matrix img = Matrix::random_normal(5, 3, 1.0, rng);
  EXPECT_NEAR(objectness_loss_grad(Matrix::random_normal(1, 3, 1.0, rng), img, {{0, 2}}).value, 0.0, 1e-15);
  const Matrix twins(2, 3, 0.7);
  EXPECT_NEAR(objectness_loss_grad(twins, img, {{0, 1}}).value, std::log(2.0), 1e-12);
  // shifting every tracklet by the same vector shifts each logit row uniformly
  Matrix trk = Matrix::random_normal(3, 3, 1.0, rng), shifted = trk;
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t c = 0; c < 3; ++c) shifted(j, c) += 0.5 * static_cast<double>(c + 1);
  const std::vector<std::pair<std::size_t, std::size_t>> a{{0, 0}, {1, 3}, {2, 4}};
  EXPECT_NEAR(objectness_loss_grad(trk, img, a).value, objectness_loss_grad(shifted, img, a).value, 1e-12);
  EXPECT_EQ(objectness_loss_grad(trk, img, {}).value, 0.0);
}

TEST(TotalLoss, Weights) {
  EXPECT_NEAR(total_loss({1, 1, 1}), 0.9, 1e-15);
  EXPECT_THROW(total_loss({1, 1, 1}, LossWeights{0, 0, 0}), ConfigError);
  EXPECT_THROW(total_loss({1, 1, 1}, LossWeights{-1, 1, 1}), ConfigError);
}

TEST(GradCheck, QuadraticIsExact) {
  const Objective f = [](const std::vector<double>& x, std::vector<double>* g) {
    double v = 0.0;
    if (g) g->assign(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      v += (i + 1.0) * x[i] * x[i];
      if (g) (*g)[i] = 2.0 * (i + 1.0) * x[i];
    }
    return v;
  };
  EXPECT_LT(grad_check(f, {0.3, -1.2, 2.0}), 1e-9);
  const Objective wrong = [&](const std::vector<double>& x, std::vector<double>* g) {
    const double v = f(x, g);
    if (g) (*g)[0] += 1.0;
    return v;
  };
  EXPECT_GT(grad_check(wrong, {0.3, -1.2, 2.0}), 0.5);
}

TEST(GradCheck, AlignmentAndObjectness) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const std::vector<Matrix> like{Matrix::random_normal(3, 4, 1.0, rng), Matrix::random_normal(5, 4, 1.0, rng)};
    const auto pos = PositivePairs::from_links({{0, 1}, {1, 4}, {2, 1}});
    const Objective align = [&](const std::vector<double>& x, std::vector<double>* g) {
      const auto m = unflatten(x, like);
      const PairGrad r = alignment_loss_grad(m[0], m[1], pos);
      if (g) *g = flatten({r.d_first, r.d_second});
      return r.value;
    };
    EXPECT_LT(grad_check(align, flatten(like)), 1e-7);
    const Objective obj = [&](const std::vector<double>& x, std::vector<double>* g) {
      const auto m = unflatten(x, like);
      const PairGrad r = objectness_loss_grad(m[0], m[1], {{0, 0}, {1, 2}, {2, 4}});
      if (g) *g = flatten({r.d_first, r.d_second});
      return r.value;
    };
    EXPECT_LT(grad_check(obj, flatten(like)), 1e-7);
  }
}

TEST(GradCheck, TripletLoss) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed + 10);
    const std::vector<Matrix> like{Matrix::random_normal(4, 6, 1.0, rng), Matrix::random_normal(3, 6, 1.0, rng),
                                   Matrix::random_normal(2, 6, 1.0, rng)};
    const std::vector<std::array<std::size_t, 3>> pos{{0, 0, 1}, {3, 2, 0}};
    const Objective f = [&](const std::vector<double>& x, std::vector<double>* g) {
      const auto m = unflatten(x, like);
      const TripleGrad r = triplet_loss_grad(m[0], m[1], m[2], pos);
      if (g) *g = flatten({r.d_q, r.d_k, r.d_p});
      return r.value;
    };
    EXPECT_LT(grad_check(f, flatten(like)), 1e-7);
  }
  EXPECT_THROW(triplet_loss_grad(Matrix(1, 2), Matrix(1, 2), Matrix(1, 2), {}), SupervisionError);
}

TEST(GradCheck, TripletValueMatchesTensorObjective) {
  Rng rng(2);
  const Matrix q = Matrix::random_normal(3, 4, 1.0, rng), k = Matrix::random_normal(2, 4, 1.0, rng),
               p = Matrix::random_normal(2, 4, 1.0, rng);
  Tensor3 t = triple_correlation(q, k, p);
  for (double& v : t.data()) v *= 0.5;
  EXPECT_NEAR(triplet_loss_grad(q, k, p, {{2, 1, 0}}).value, triplet_objective(t, 2, 1, 0), 1e-12);
}

TEST(GradCheck, BoxTerms) {
  Rng rng(5);
  const std::vector<Box> anchors{{0.2, 0.3, 0.08, 0.08}, {0.7, 0.6, 0.08, 0.08}, {0.5, 0.5, 0.08, 0.08}};
  const std::vector<Box> targets{{0.22, 0.31, 0.07, 0.09}, {0.66, 0.62, 0.1, 0.06}};
  const std::vector<std::pair<std::size_t, std::size_t>> matches{{0, 0}, {1, 1}};
  const std::vector<Matrix> like{Matrix::random_normal(3, 5, 0.5, rng)};
  const Objective giou_term = [&](const std::vector<double>& x, std::vector<double>* g) {
    const RawGrad r = giou_loss_grad(unflatten(x, like)[0], anchors, targets, matches);
    if (g) *g = flatten({r.d_raw});
    return r.value;
  };
  EXPECT_LT(grad_check(giou_term, flatten(like), 1e-7), 1e-5);
  const Objective conf = [&](const std::vector<double>& x, std::vector<double>* g) {
    const RawGrad r = confidence_loss_grad(unflatten(x, like)[0], {1, 0, 1}, 2.0);
    if (g) *g = flatten({r.d_raw});
    return r.value;
  };
  EXPECT_LT(grad_check(conf, flatten(like)), 1e-8);
  const Objective l1 = [&](const std::vector<double>& x, std::vector<double>* g) {
    const RawGrad r = l1_loss_grad(unflatten(x, like)[0], anchors, targets, matches);
    if (g) *g = flatten({r.d_raw});
    return r.value;
  };
  EXPECT_LT(grad_check(l1, flatten(like)), 1e-6);
}

TEST(GradCheck, GiouGradAcrossGeometries) {
  Rng rng(8);
  for (int n = 0; n < 50; ++n) {
    const Box b{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3)};
    const Objective f = [&](const std::vector<double>& x, std::vector<double>* g) {
      const GiouGrad r = giou_grad(Box{x[0], x[1], x[2], x[3]}, b);
      if (g) g->assign(r.d_pred.begin(), r.d_pred.end());
      return r.value;
    };
    const std::vector<double> x{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3)};
    EXPECT_LT(grad_check(f, x, 1e-7), 1e-5);
  }
}

TEST(Tape, EncoderAndForwardMatchPlainModel) {
  const Model model = Model::create(TrainConfig{}.model);
  Model m = model;
  const Scenario s = generate(3);
  for (auto mode : {ForwardMode::kSimplified, ForwardMode::kFull}) {
    ad::Tape t;
    const TapeModel tm(t, m);
    const ad::Var img = tape_encode(t, tm, s.frame(1), nullptr);
    const ad::Var prev = tape_encode(t, tm, s.frame(0), nullptr);
    const PromptText prompt{ScenarioKind::kName, {"person", "car"}};
    const ad::Var prm = tape_embed(t, tm, prompt);
    const TokenMatrix img_plain = model.encode(s.frame(1)), prev_plain = model.encode(s.frame(0));
    EXPECT_LT(max_abs_diff(t.value(img), img_plain.tokens), 1e-12);
    EXPECT_LT(max_abs_diff(t.value(prm), model.embed(prompt).tokens), 1e-12);
    const std::vector<std::vector<std::size_t>> groups{{3}, {17, 18}};
    const ad::Var trk = ad::pool_rows(t, prev, groups);
    const TapeTracking tr = tape_track(t, tm, img, trk, prm, mode);
    const TokenMatrix trk_plain{TokenFamily::kTracklet, pool_rows(prev_plain.tokens, groups), std::vector<TokenOrigin>(2)};
    const TrackingOutput plain = forward(mode, img_plain, trk_plain, model.embed(prompt), model.weights);
    EXPECT_LT(max_abs_diff(t.value(tr.z), plain.z), 1e-10);
    EXPECT_LT(max_abs_diff(t.value(tape_decode(t, tm, tr.z, img)), decoder_logits(plain.z, img_plain, model.weights)),
              1e-10);
  }
}

TEST(Tape, WholeSampleGradientMatchesFiniteDifferences) {
  TrainConfig cfg;
  cfg.l1_weight = 0.0;  // keeps the objective smooth
  Model model = Model::create(cfg.model);
  const Scenario world = generate(21);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(seed);
    const TrainingSample sample = draw_sample(world, rng);
    auto loss_at = [&](Model& m) {
      ad::Tape t;
      const TapeModel tm(t, m);
      return sample_loss(t, tm, sample, cfg, nullptr).second.total;
    };
    ad::Tape t;
    const TapeModel tm(t, model);
    const ad::Var root = sample_loss(t, tm, sample, cfg, nullptr).first;
    t.backward(root);
    auto params = parameters(model);
    for (std::size_t n = 0; n < params.size(); ++n) {
      const Matrix g = t.grad(tm.leaves[n]);
      Matrix& w = *params[n].value;
      // a handful of coordinates per parameter
      for (std::size_t probe = 0; probe < 3; ++probe) {
        const std::size_t i = (probe * 7919 + seed * 31) % w.size();
        const double keep = w.data()[i], eps = 1e-5;
        w.data()[i] = keep + eps;
        const double up = loss_at(model);
        w.data()[i] = keep - eps;
        const double down = loss_at(model);
        w.data()[i] = keep;
        const double numeric = (up - down) / (2 * eps);
        EXPECT_LT(std::abs(numeric - g.data()[i]) / std::max(1.0, std::abs(numeric)), 1e-4)
            << params[n].name << "[" << i << "] seed " << seed;
      }
    }
  }
}

TEST(Train, ZeroEpochsLeavesWeightsUntouched) {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 0;
  Model m = Model::create(cfg.model);
  const std::string before = checkpoint_text(m);
  OptimizerState opt;
  EXPECT_TRUE(train(m, opt, cfg).empty());
  EXPECT_EQ(checkpoint_text(m), before);
}

TEST(Train, RunsAreBitIdenticalAndLossIsFinite) {
  const TrainConfig cfg = tiny_config();
  Model a = Model::create(cfg.model), b = Model::create(cfg.model);
  OptimizerState oa, ob;
  const auto curve = train(a, oa, cfg);
  train(b, ob, cfg);
  EXPECT_EQ(checkpoint_text(a, &oa), checkpoint_text(b, &ob));
  ASSERT_EQ(curve.size(), 2u);
  for (const auto& e : curve) EXPECT_TRUE(std::isfinite(e.total));
  EXPECT_NE(checkpoint_text(a), checkpoint_text(Model::create(cfg.model)));
}

TEST(Train, ResumeFromCheckpointContinuesBitIdentically) {
  const TrainConfig cfg = tiny_config();
  Model straight = Model::create(cfg.model);
  OptimizerState so;
  train(straight, so, cfg);

  TrainConfig first = cfg;
  first.epochs = 1;
  Model half = Model::create(cfg.model);
  OptimizerState ho;
  train(half, ho, first);
  std::stringstream file;
  write_checkpoint(file, half, &ho);
  Checkpoint ck = read_checkpoint(file);
  ASSERT_TRUE(ck.optimizer);
  EXPECT_EQ(ck.optimizer->step, cfg.steps_per_epoch);
  train(ck.model, *ck.optimizer, cfg);
  EXPECT_EQ(checkpoint_text(ck.model, &*ck.optimizer), checkpoint_text(straight, &so));
}

TEST(Checkpoint, RoundTripAndErrors) {
  const Model m = Model::create({});
  std::stringstream io(checkpoint_text(m));
  const Checkpoint ck = read_checkpoint(io);
  EXPECT_FALSE(ck.optimizer);
  EXPECT_EQ(checkpoint_text(ck.model), checkpoint_text(m));
  const Scenario s = generate(2);
  EXPECT_EQ(ck.model.encode(s.frame(4)).tokens, m.encode(s.frame(4)).tokens);
  std::stringstream junk("not a checkpoint");
  EXPECT_THROW(read_checkpoint(junk), SchemaError);
  std::string text = checkpoint_text(m);
  std::stringstream truncated(text.substr(0, text.size() / 2));
  EXPECT_THROW(read_checkpoint(truncated), SchemaError);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.triplet_weight = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.steps_per_epoch = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(LossCsv, HeaderAndRow) {
  std::ostringstream out;
  write_loss_header(out);
  write_loss_row(out, EpochLoss{3, 1.5, 0.25, 0.5, 0.675, 2.0});
  EXPECT_EQ(out.str(), "epoch,L_TP,L_IT,L_GIoU,total,L_conf\n3,1.5,0.25,0.5,0.675,2\n");
}
