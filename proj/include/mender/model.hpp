#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mender/attributes.hpp"
#include "mender/box.hpp"
#include "mender/errors.hpp"
#include "mender/prompt.hpp"
#include "mender/rng.hpp"
#include "mender/tensor.hpp"
#include "mender/tokens.hpp"
#include "mender/tracklet.hpp"

namespace mender {

/// Three-layer decoder D→D→D→5 with rectifiers between layers. Output columns
/// are (x, y, w, h, conf) logits.
struct FfnParams {
  Matrix w1, b1, w2, b2, w3, b3;

  static FfnParams random(std::size_t d, Rng& rng) {
    const double he = std::sqrt(2.0 / static_cast<double>(d));
    FfnParams f;
    f.w1 = Matrix::random_normal(d, d, he, rng);
    f.b1 = Matrix(1, d);
    f.w2 = Matrix::random_normal(d, d, he, rng);
    f.b2 = Matrix(1, d);
    f.w3 = Matrix::random_normal(d, 5, 0.01, rng);
    f.b3 = Matrix(1, 5);
    f.b3(0, 4) = -2.0;
    return f;
  }
};

inline Matrix ffn_forward(const Matrix& x, const FfnParams& f) {
  auto relu = [](Matrix m) {
    for (double& v : m.data()) v = v > 0.0 ? v : 0.0;
    return m;
  };
  const Matrix h1 = relu(add_row_broadcast(matmul(x, f.w1), f.b1.row(0)));
  const Matrix h2 = relu(add_row_broadcast(matmul(h1, f.w2), f.b2.row(0)));
  return add_row_broadcast(matmul(h2, f.w3), f.b3.row(0));
}

/// Correlation weights. `visual_prompt` serves both the region|prompt and the
/// tracklet|prompt correlation, since tracklet tokens are pooled region tokens;
/// its value projection is W^P_V. The value projection of `region_tracklet` is
/// W^T_V.
struct ModelWeights {
  AttentionParams region_tracklet;
  AttentionParams visual_prompt;
  FfnParams ffn;

  std::size_t width() const noexcept { return region_tracklet.width(); }

  void validate() const {
    region_tracklet.validate();
    visual_prompt.validate();
    if (visual_prompt.width() != width()) throw ShapeError("attention widths differ");
    if (ffn.w1.rows() != width() || ffn.w3.cols() != 5) throw ShapeError("decoder shape mismatch");
  }

  static ModelWeights random(std::size_t d, std::size_t heads, Rng& rng) {
    ModelWeights w{AttentionParams::random(d, heads, rng), AttentionParams::random(d, heads, rng),
                   FfnParams::random(d, rng)};
    w.validate();
    return w;
  }
};

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t heads = 4;
  CoreKind core = CoreKind::kSuperdiagonal;
  std::uint64_t seed = 1;

  std::size_t width() const noexcept { return encoder.model_dim; }
};

/// Everything needed to turn a frame and a prompt into candidates.
struct Model {
  ModelConfig config;
  EncoderParams encoder;
  Vocabulary vocab;
  ModelWeights weights;
  Matrix projection;  // fixed attribute projection, derived from config

  static Model create(const ModelConfig& cfg) {
    cfg.encoder.validate();
    Rng rng(mix_seed(cfg.seed, 0x30de1));
    Model m;
    m.config = cfg;
    m.encoder = EncoderParams::random(cfg.encoder, rng);
    m.vocab = Vocabulary::random(Vocabulary::default_words(), cfg.width(), cfg.seed);
    m.weights = ModelWeights::random(cfg.width(), cfg.heads, rng);
    m.projection = attribute_projection(cfg.encoder);
    return m;
  }

  TokenMatrix encode(const SceneFrame& frame, Rng* dropout_rng = nullptr) const {
    return encode_image(frame, config.encoder, encoder, projection, dropout_rng);
  }

  TokenMatrix embed(const PromptText& prompt) const { return embed_prompt(prompt, vocab); }
};

// ---------------------------------------------------------------------------
// Forward passes

struct GroundingOutput {
  Matrix a_ip;  // M×K
  Matrix z;     // M×D
};

/// Region|prompt correlation: Z = A_{I|P}(emb·W^P_V).
inline GroundingOutput ground_forward(const TokenMatrix& img, const TokenMatrix& prm, const ModelWeights& w,
                                      FlopCounter* counter = nullptr) {
  if (prm.count() == 0) throw EmptyPromptError("grounding needs at least one prompt token");
  GroundingOutput out;
  out.a_ip = cross_attention(img.tokens, prm.tokens, w.visual_prompt, counter);
  const Matrix v = matmul(prm.tokens, w.visual_prompt.value);
  out.z = matmul(out.a_ip, v);
  if (counter) {
    counter->projection += matmul_flops(prm.count(), w.width(), w.width());
    counter->correlation += matmul_flops(img.count(), prm.count(), w.width());
  }
  return out;
}

struct TrackingOutput {
  Tensor3 t;    // only filled by forward_full
  Matrix a_it;  // M×N
  Matrix a_tp;  // N×K
  Matrix z;     // M×D
};

namespace detail {

// Z = A_IT(A_TP(prm·W^P_V)) + A_IT(trk·W^T_V), associated right to left.
inline Matrix chain_values(const Matrix& a_it, const Matrix& a_tp, const TokenMatrix& trk,
                           const TokenMatrix& prm, const ModelWeights& w, FlopCounter* counter) {
  const std::size_t d = w.width();
  const Matrix vp = matmul(prm.tokens, w.visual_prompt.value);
  const Matrix vt = matmul(trk.tokens, w.region_tracklet.value);
  Matrix per_tracklet = matmul(a_tp, vp);
  per_tracklet += vt;
  if (counter) {
    counter->projection += matmul_flops(prm.count(), d, d) + matmul_flops(trk.count(), d, d);
    counter->correlation += matmul_flops(trk.count(), prm.count(), d) + trk.count() * d +
                            matmul_flops(a_it.rows(), trk.count(), d);
  }
  return matmul(a_it, per_tracklet);
}

inline void check_tracking_inputs(const TokenMatrix& img, const TokenMatrix& trk, const TokenMatrix& prm) {
  if (trk.count() == 0) throw ConfigError("tracking forward needs tracklets; use grounding");
  if (prm.count() == 0) throw EmptyPromptError("tracking forward needs at least one prompt token");
  if (img.width() != trk.width() || trk.width() != prm.width()) throw ShapeError("token widths differ");
}

}  // namespace detail

/// Factorised mode: two pairwise attentions chained through the tracklets.
inline TrackingOutput forward_simplified(const TokenMatrix& img, const TokenMatrix& trk, const TokenMatrix& prm,
                                         const ModelWeights& w, FlopCounter* counter = nullptr) {
  detail::check_tracking_inputs(img, trk, prm);
  TrackingOutput out;
  out.a_it = cross_attention(img.tokens, trk.tokens, w.region_tracklet, counter);
  out.a_tp = cross_attention(trk.tokens, prm.tokens, w.visual_prompt, counter);
  out.z = detail::chain_values(out.a_it, out.a_tp, trk, prm, w, counter);
  return out;
}

/// Full third-order mode. Per head h, T_h[i,j,k] = Σ_{d∈h} q_i k_j p_k / √D with
/// q = img·W_Q (region|tracklet), k = trk·W_K (region|tracklet) and
/// p = prm·W_K (visual|prompt). A_IT and A_TP are head-averaged softmaxes of
/// the marginals Σ_k T_h and Σ_i T_h. `t` holds Σ_h T_h.
inline TrackingOutput forward_full(const TokenMatrix& img, const TokenMatrix& trk, const TokenMatrix& prm,
                                   const ModelWeights& w, FlopCounter* counter = nullptr,
                                   CoreKind core = CoreKind::kSuperdiagonal) {
  detail::check_tracking_inputs(img, trk, prm);
  w.validate();
  const std::size_t d = w.width();
  const std::size_t heads = w.region_tracklet.heads;
  if (w.visual_prompt.heads != heads) throw ConfigError("full mode needs equal head counts");
  const std::size_t hw = d / heads;
  const std::size_t m = img.count(), n = trk.count(), k = prm.count();
  const Matrix q = matmul(img.tokens, w.region_tracklet.query);
  const Matrix kt = matmul(trk.tokens, w.region_tracklet.key);
  const Matrix pk = matmul(prm.tokens, w.visual_prompt.key);
  if (counter) counter->projection += matmul_flops(m + n + k, d, d);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  TrackingOutput out;
  out.t = Tensor3(m, n, k);
  std::vector<Matrix> it_logits, tp_logits;
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor3 th = triple_correlation(slice_cols(q, h * hw, hw), slice_cols(kt, h * hw, hw),
                                         slice_cols(pk, h * hw, hw), core, counter);
    Matrix it(m, n), tp(n, k);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < k; ++c) {
          const double v = th(i, j, c) * scale;
          out.t(i, j, c) += v;
          it(i, j) += v;
          tp(j, c) += v;
        }
    if (counter) counter->correlation += 4ULL * m * n * k;
    it_logits.push_back(std::move(it));
    tp_logits.push_back(std::move(tp));
  }
  out.a_it = average_head_softmax(it_logits, counter);
  out.a_tp = average_head_softmax(tp_logits, counter);
  out.z = detail::chain_values(out.a_it, out.a_tp, trk, prm, w, counter);
  return out;
}

// ---------------------------------------------------------------------------
// Decoder

/// Raw decoder output FFN(Z + img), M×5.
inline Matrix decoder_logits(const Matrix& z, const TokenMatrix& img, const ModelWeights& w) {
  if (z.rows() != img.count() || z.cols() != img.width()) {
    throw ShapeError("decode: Z " + z.shape_string() + " vs image tokens " + img.tokens.shape_string());
  }
  return ffn_forward(z + img.tokens, w.ffn);
}

// Largest displacement of a box center from its anchor.
inline constexpr double kCenterRange = 0.25;

/// Center = anchor + R·(2σ(raw) − 1), clamped to [0, 1]; size = σ(raw + logit(anchor size)).
inline Box box_from_logits(std::span<const double> raw, const Box& anchor) {
  auto center = [](double r, double a) { return std::clamp(a + kCenterRange * (2.0 * sigmoid(r) - 1.0), 0.0, 1.0); };
  return {center(raw[0], anchor.cx), center(raw[1], anchor.cy), sigmoid(raw[2] + logit(anchor.w)),
          sigmoid(raw[3] + logit(anchor.h))};
}

/// ∂(cx, cy, w, h)/∂raw[0..3]; zero where a center is clamped.
inline std::array<double, 4> box_logit_slopes(std::span<const double> raw, const Box& anchor) {
  auto center = [](double r, double a) {
    const double s = sigmoid(r);
    const double v = a + kCenterRange * (2.0 * s - 1.0);
    return (v <= 0.0 || v >= 1.0) ? 0.0 : 2.0 * kCenterRange * s * (1.0 - s);
  };
  const double w = sigmoid(raw[2] + logit(anchor.w)), h = sigmoid(raw[3] + logit(anchor.h));
  return {center(raw[0], anchor.cx), center(raw[1], anchor.cy), w * (1.0 - w), h * (1.0 - h)};
}

inline Candidate candidate_from_logits(std::span<const double> raw, const Box& anchor, std::size_t source) {
  Candidate c;
  c.box = box_from_logits(raw, anchor);
  c.conf = sigmoid(raw[4]);
  c.source = source;
  return c;
}

/// Category id named by prompt token `k`, or -1.
inline int prompt_token_category(const TokenMatrix& prm, std::size_t k) {
  const std::string& text = prm.origins[k].text;
  for (const auto& word : split_words(text)) {
    if (auto c = category_index_of_word(word)) return kCategories[*c].id;
  }
  const auto constraint = parse_constraint(text);
  if (constraint.category) return kCategories[*constraint.category].id;
  return -1;
}

/// Per image token: category of the prompt token it attends to most.
inline std::vector<int> attended_labels(const Matrix& image_to_prompt, const TokenMatrix& prm) {
  std::vector<int> labels(image_to_prompt.rows(), -1);
  for (std::size_t i = 0; i < image_to_prompt.rows(); ++i) {
    const auto row = image_to_prompt.row(i);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    labels[i] = prompt_token_category(prm, best);
  }
  return labels;
}

/// FFN(Z + img) per row, kept when conf ≥ γ. `labels` is optional.
inline CandidateSet decode(const Matrix& z, const TokenMatrix& img, const ModelWeights& w, double gamma,
                           const std::vector<int>& labels = {}) {
  const Matrix raw = decoder_logits(z, img, w);
  CandidateSet out;
  for (std::size_t i = 0; i < raw.rows(); ++i) {
    Candidate c = candidate_from_logits(raw.row(i), img.origins[i].anchor, i);
    if (c.conf < gamma) continue;
    if (i < labels.size()) c.label = labels[i];
    out.push_back(c);
  }
  return out;
}

inline void check_threshold(double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("threshold must lie in (0, 1]");
}

/// Grounding branch: region|prompt correlation decoded and thresholded.
inline CandidateSet ground_regions(const TokenMatrix& img, const TokenMatrix& prm, const ModelWeights& w,
                                   double gamma) {
  check_threshold(gamma);
  const GroundingOutput g = ground_forward(img, prm, w);
  return decode(g.z, img, w, gamma, attended_labels(g.a_ip, prm));
}

enum class ForwardMode { kSimplified, kFull };

inline ForwardMode parse_forward_mode(const std::string& s) {
  if (s == "simplified") return ForwardMode::kSimplified;
  if (s == "full") return ForwardMode::kFull;
  throw ConfigError("unknown mode '" + s + "'");
}

inline TrackingOutput forward(ForwardMode mode, const TokenMatrix& img, const TokenMatrix& trk,
                              const TokenMatrix& prm, const ModelWeights& w, FlopCounter* counter = nullptr) {
  return mode == ForwardMode::kFull ? forward_full(img, trk, prm, w, counter)
                                    : forward_simplified(img, trk, prm, w, counter);
}

/// Triplet diagnostic: −log softmax over all entries of T at (i, j, k).
inline double triplet_objective(const Tensor3& t, std::size_t i, std::size_t j, std::size_t k) {
  if (i >= t.regions() || j >= t.tracklets() || k >= t.prompts()) throw IndexError("triplet out of range");
  const auto data = t.data();
  const double mx = *std::max_element(data.begin(), data.end());
  double sum = 0.0;
  for (double v : data) sum += std::exp(v - mx);
  return -(t(i, j, k) - mx - std::log(sum));
}

}  // namespace mender
