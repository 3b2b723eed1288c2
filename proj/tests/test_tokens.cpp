#include <gtest/gtest.h>

#include <cmath>

#include "mender/model.hpp"
#include "mender/simworld.hpp"
#include "mender/tokens.hpp"

using namespace mender;

namespace {

SceneFrame empty_frame() { return SceneFrame{0, 8, 8, {}}; }

SceneFrame one_object_frame() {
  SceneFrame f = empty_frame();
  f.objects.push_back({1, Attributes{1, 0, 2}, Box{0.30, 0.55, 0.08, 0.09}});
  return f;
}

}  // namespace

TEST(EncodeImage, EmptyFrameRowsDifferOnlyByPosition) {
  const Model m = Model::create({});
  const TokenMatrix t = m.encode(empty_frame());
  ASSERT_EQ(t.count(), 64u);
  ASSERT_EQ(t.width(), 64u);
  const Matrix pe = positional_encoding(64, 64);
  const Matrix base = t.tokens - pe;
  for (std::size_t r = 1; r < base.rows(); ++r)
    for (std::size_t c = 0; c < base.cols(); ++c) EXPECT_NEAR(base(r, c), base(0, c), 1e-12);
}

TEST(EncodeImage, OneObjectChangesExactlyOneRow) {
  const Model m = Model::create({});
  const Matrix diff = m.encode(one_object_frame()).tokens - m.encode(empty_frame()).tokens;
  const std::size_t cell = cell_index(Box{0.30, 0.55, 0.08, 0.09}, 8, 8);
  for (std::size_t r = 0; r < diff.rows(); ++r) {
    double mx = 0.0;
    for (double v : diff.row(r)) mx = std::max(mx, std::abs(v));
    if (r == cell) EXPECT_GT(mx, 1e-3);
    else EXPECT_EQ(mx, 0.0) << "row " << r;
  }
}

TEST(EncodeImage, Deterministic) {
  const Model a = Model::create({}), b = Model::create({});
  EXPECT_EQ(a.encode(one_object_frame()).tokens, b.encode(one_object_frame()).tokens);
}

TEST(EncodeImage, GridMismatchThrows) {
  const Model m = Model::create({});
  EXPECT_THROW(m.encode(SceneFrame{0, 4, 4, {}}), ConfigError);
}

TEST(EmbedPrompt, WordAndSentenceTokens) {
  const Model m = Model::create({});
  EXPECT_EQ(m.embed({ScenarioKind::kName, {"person"}}).count(), 1u);
  EXPECT_EQ(m.embed({ScenarioKind::kSynonym, {"man", "woman"}}).count(), 2u);
  const TokenMatrix cap = m.embed({ScenarioKind::kCaption, {"a red car", "a red car"}});
  ASSERT_EQ(cap.count(), 2u);
  for (std::size_t c = 0; c < cap.width(); ++c) EXPECT_EQ(cap.tokens(0, c), cap.tokens(1, c));
}

TEST(EmbedPrompt, SentenceIsMeanOfWords) {
  const Model m = Model::create({});
  const TokenMatrix s = m.embed({ScenarioKind::kCaption, {"red car"}});
  const auto red = *m.vocab.find("red"), car = *m.vocab.find("car");
  for (std::size_t c = 0; c < s.width(); ++c)
    EXPECT_NEAR(s.tokens(0, c), 0.5 * (m.vocab.table()(red, c) + m.vocab.table()(car, c)), 1e-15);
}

TEST(EmbedPrompt, UnknownWordsMapToUnknownRow) {
  const Model m = Model::create({});
  const TokenMatrix t = m.embed({ScenarioKind::kName, {"zeppelin"}});
  for (std::size_t c = 0; c < t.width(); ++c) EXPECT_EQ(t.tokens(0, c), m.vocab.table()(Vocabulary::kUnknown, c));
  EXPECT_THROW(m.embed({ScenarioKind::kName, {}}), EmptyPromptError);
}

TEST(ExtractTracklets, PoolingCases) {
  Matrix img(3, 2);
  img(0, 0) = 1;
  img(0, 1) = 2;
  img(1, 0) = 3;
  img(1, 1) = 6;
  const TokenMatrix prev{TokenFamily::kImage, img, std::vector<TokenOrigin>(3)};
  Tracklet one, two;
  one.assigned_token_indices = {1};
  two.assigned_token_indices = {0, 1};
  const TokenMatrix t = extract_tracklets(std::vector<Tracklet>{one, two}, prev);
  EXPECT_EQ(t.tokens(0, 0), 3.0);
  EXPECT_EQ(t.tokens(0, 1), 6.0);
  EXPECT_EQ(t.tokens(1, 0), 2.0);
  EXPECT_EQ(t.tokens(1, 1), 4.0);
  const TokenMatrix none = extract_tracklets(std::vector<Tracklet>{}, prev);
  EXPECT_EQ(none.count(), 0u);
  EXPECT_EQ(none.width(), 2u);
}

TEST(ExtractTracklets, InactiveTrackletUsesStoredFeature) {
  const TokenMatrix prev{TokenFamily::kImage, Matrix(2, 2), std::vector<TokenOrigin>(2)};
  Tracklet tr;
  tr.feature = {7.0, 8.0};
  const TokenMatrix t = extract_tracklets(std::vector<Tracklet>{tr}, prev);
  EXPECT_EQ(t.tokens(0, 1), 8.0);
  tr.assigned_token_indices = {5};
  EXPECT_THROW(extract_tracklets(std::vector<Tracklet>{tr}, prev), IndexError);
}

TEST(PositionalEncoding, Values) {
  const Matrix pe = positional_encoding(3, 8);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(pe(0, c), c % 2 == 0 ? 0.0 : 1.0);
  for (double v : pe.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_NE(pe(1, 0), pe(2, 0));
  EXPECT_NE(pe(1, 1), pe(2, 1));
  EXPECT_NEAR(pe(1, 0), std::sin(1.0), 1e-15);
}

TEST(FeatureResize, Contracts) {
  Rng rng(1);
  const ResizerParams p = ResizerParams::random(7, 16, 0.0, rng);
  const Matrix zero = feature_resize(Matrix(3, 7), p);
  EXPECT_EQ(zero.cols(), 16u);
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);  // zero bias and shift
  const Matrix x = Matrix::random_normal(4, 7, 1.0, rng);
  Rng drop(2);
  EXPECT_EQ(feature_resize(x, p, &drop), feature_resize(x, p));
  EXPECT_THROW(feature_resize(Matrix(1, 6), p), ShapeError);
}

TEST(FeatureResize, DropoutMasksDuringTraining) {
  Rng rng(1);
  const ResizerParams p = ResizerParams::random(7, 64, 0.5, rng);
  const Matrix x = Matrix::random_normal(8, 7, 1.0, rng);
  Rng drop(3);
  const Matrix y = feature_resize(x, p, &drop), ref = feature_resize(x, p);
  std::size_t zeros = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y.data()[i] == 0.0) ++zeros;
    else EXPECT_NEAR(y.data()[i], 2.0 * ref.data()[i], 1e-12);
  }
  EXPECT_GT(zeros, 150u);
  EXPECT_LT(zeros, 362u);
}

TEST(TokenMatrix, CapsEnforced) {
  const TokenMatrix big{TokenFamily::kPrompt, Matrix(251, 4), std::vector<TokenOrigin>(251)};
  EXPECT_THROW(big.validate(4), ConfigError);
}
