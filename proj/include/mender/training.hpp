#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mender/autodiff.hpp"
#include "mender/errors.hpp"
#include "mender/losses.hpp"
#include "mender/metrics.hpp"
#include "mender/model.hpp"
#include "mender/simworld.hpp"
#include "mender/tracker.hpp"

namespace mender {

// ---------------------------------------------------------------------------
// Parameters

struct ParamRef {
  std::string name;
  Matrix* value;
  bool embedding;  // word-embedding table, trained at the lower rate
};

/// Every trainable matrix of the model, in checkpoint order.
inline std::vector<ParamRef> parameters(Model& m) {
  auto& w = m.weights;
  auto& r = m.encoder.resizer;
  return {{"encoder.no_object", &m.encoder.no_object, false},
          {"encoder.weight", &r.weight, false},
          {"encoder.bias", &r.bias, false},
          {"encoder.gain", &r.gain, false},
          {"encoder.shift", &r.shift, false},
          {"vocab.table", &m.vocab.table(), true},
          {"region_tracklet.query", &w.region_tracklet.query, false},
          {"region_tracklet.key", &w.region_tracklet.key, false},
          {"region_tracklet.value", &w.region_tracklet.value, false},
          {"visual_prompt.query", &w.visual_prompt.query, false},
          {"visual_prompt.key", &w.visual_prompt.key, false},
          {"visual_prompt.value", &w.visual_prompt.value, false},
          {"ffn.w1", &w.ffn.w1, false},
          {"ffn.b1", &w.ffn.b1, false},
          {"ffn.w2", &w.ffn.w2, false},
          {"ffn.b2", &w.ffn.b2, false},
          {"ffn.w3", &w.ffn.w3, false},
          {"ffn.b3", &w.ffn.b3, false}};
}

// ---------------------------------------------------------------------------
// Differentiable forward, mirroring model.hpp

/// Model parameters as tape leaves.
struct TapeModel {
  const Model* model = nullptr;
  std::vector<ad::Var> leaves;  // same order as parameters()

  enum Slot {
    kNoObject, kWeight, kBias, kGain, kShift, kVocab,
    kRtQuery, kRtKey, kRtValue, kVpQuery, kVpKey, kVpValue,
    kW1, kB1, kW2, kB2, kW3, kB3
  };

  TapeModel(ad::Tape& t, Model& m) : model(&m) {
    for (const auto& p : parameters(m)) leaves.push_back(t.leaf(*p.value));
  }

  ad::Var operator[](Slot s) const { return leaves[s]; }
};

/// Image tokens of `frame`. Dropout masks are drawn in the same order as
/// feature_resize, so the values match the plain encoder given the same rng.
inline ad::Var tape_encode(ad::Tape& t, const TapeModel& tm, const SceneFrame& frame, Rng* dropout_rng) {
  const Model& m = *tm.model;
  const EncoderConfig& cfg = m.config.encoder;
  const RawCellFeatures raw = raw_cell_features(frame, cfg, m.projection);
  ad::Var x = ad::fill_rows(t, t.constant(raw.occupied), raw.empty, tm[TapeModel::kNoObject]);
  ad::Var h = ad::add_row(t, ad::matmul(t, x, tm[TapeModel::kWeight]), tm[TapeModel::kBias]);
  h = ad::layer_norm(t, h, tm[TapeModel::kGain], tm[TapeModel::kShift]);
  const double rate = m.encoder.resizer.dropout_rate;
  if (dropout_rng != nullptr && rate > 0.0) {
    const double keep = 1.0 - rate;
    Matrix mask(cfg.cells(), cfg.model_dim);
    for (double& v : mask.data()) v = dropout_rng->bernoulli(keep) ? 1.0 / keep : 0.0;
    h = ad::mul_const(t, h, std::move(mask));
  }
  return ad::add_const(t, h, positional_encoding(cfg.cells(), cfg.model_dim));
}

inline ad::Var tape_embed(ad::Tape& t, const TapeModel& tm, const PromptText& prompt) {
  const PromptTokenization tok = tokenize_prompt(prompt, tm.model->vocab, prompt.kind);
  return ad::pool_rows(t, tm[TapeModel::kVocab], tok.groups);
}

inline ad::Var tape_ground(ad::Tape& t, const TapeModel& tm, ad::Var img, ad::Var prm) {
  const std::size_t heads = tm.model->weights.visual_prompt.heads;
  const ad::Var a = ad::cross_attention(t, img, prm, tm[TapeModel::kVpQuery], tm[TapeModel::kVpKey], heads);
  return ad::matmul(t, a, ad::matmul(t, prm, tm[TapeModel::kVpValue]));
}

struct TapeTracking {
  ad::Var a_it, a_tp, z;
};

inline TapeTracking tape_track(ad::Tape& t, const TapeModel& tm, ad::Var img, ad::Var trk, ad::Var prm,
                               ForwardMode mode) {
  const ModelWeights& w = tm.model->weights;
  const std::size_t heads = w.region_tracklet.heads;
  TapeTracking out{};
  if (mode == ForwardMode::kSimplified) {
    out.a_it = ad::cross_attention(t, img, trk, tm[TapeModel::kRtQuery], tm[TapeModel::kRtKey], heads);
    out.a_tp = ad::cross_attention(t, trk, prm, tm[TapeModel::kVpQuery], tm[TapeModel::kVpKey], w.visual_prompt.heads);
  } else {
    if (tm.model->config.core != CoreKind::kSuperdiagonal) throw ConfigError("full-mode training needs the superdiagonal core");
    // Marginals of the superdiagonal triple product: Σ_k T_h = (q ⊙ Σ_k p) kᵀ, Σ_i T_h = (k ⊙ Σ_i q) pᵀ.
    const ad::Var q = ad::matmul(t, img, tm[TapeModel::kRtQuery]);
    const ad::Var k = ad::matmul(t, trk, tm[TapeModel::kRtKey]);
    const ad::Var p = ad::matmul(t, prm, tm[TapeModel::kVpKey]);
    const std::size_t d = w.width(), hw = d / heads;
    const double s = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t h = 0; h < heads; ++h) {
      const ad::Var qh = ad::slice_cols(t, q, h * hw, hw);
      const ad::Var kh = ad::slice_cols(t, k, h * hw, hw);
      const ad::Var ph = ad::slice_cols(t, p, h * hw, hw);
      const ad::Var it = ad::softmax_rows(t, ad::scale(t, ad::matmul_nt(t, ad::mul_row(t, qh, ad::col_sum(t, ph)), kh), s));
      const ad::Var tp = ad::softmax_rows(t, ad::scale(t, ad::matmul_nt(t, ad::mul_row(t, kh, ad::col_sum(t, qh)), ph), s));
      out.a_it = h == 0 ? it : ad::add(t, out.a_it, it);
      out.a_tp = h == 0 ? tp : ad::add(t, out.a_tp, tp);
    }
    out.a_it = ad::scale(t, out.a_it, 1.0 / static_cast<double>(heads));
    out.a_tp = ad::scale(t, out.a_tp, 1.0 / static_cast<double>(heads));
  }
  const ad::Var vp = ad::matmul(t, prm, tm[TapeModel::kVpValue]);
  const ad::Var vt = ad::matmul(t, trk, tm[TapeModel::kRtValue]);
  out.z = ad::matmul(t, out.a_it, ad::add(t, ad::matmul(t, out.a_tp, vp), vt));
  return out;
}

/// FFN(Z + img), M×5.
inline ad::Var tape_decode(ad::Tape& t, const TapeModel& tm, ad::Var z, ad::Var img) {
  ad::Var x = ad::add(t, z, img);
  x = ad::relu(t, ad::add_row(t, ad::matmul(t, x, tm[TapeModel::kW1]), tm[TapeModel::kB1]));
  x = ad::relu(t, ad::add_row(t, ad::matmul(t, x, tm[TapeModel::kW2]), tm[TapeModel::kB2]));
  return ad::add_row(t, ad::matmul(t, x, tm[TapeModel::kW3]), tm[TapeModel::kB3]);
}

// ---------------------------------------------------------------------------
// Training samples

/// One adjacent-frame pair with its prompt and supervision.
struct TrainingSample {
  SceneFrame prev, cur;
  PromptText prompt;
  std::vector<int> prompt_categories;          // category index per prompt token
  std::vector<int> tracked;                    // track ids forming the tracklet set at prev
  std::vector<std::size_t> tracked_cells;      // their cells at prev
};

namespace detail {

inline std::vector<const SceneObject*> owners(const SceneFrame& f) {
  // Objects that own their cell; only those have an image token.
  std::vector<const SceneObject*> out;
  for (const auto& o : f.objects) {
    bool owns = true;
    const std::size_t cell = cell_index(o.box, f.grid_w, f.grid_h);
    for (const auto& other : f.objects)
      if (&other != &o && cell_index(other.box, f.grid_w, f.grid_h) == cell && other.box.area() > o.box.area())
        owns = false;
    if (owns) out.push_back(&o);
  }
  return out;
}

inline bool in_prompt(const SceneObject& o, const std::vector<int>& cats) {
  return std::find(cats.begin(), cats.end(), static_cast<int>(o.attributes.category)) != cats.end();
}

}  // namespace detail

/// Draws a frame pair, a names/synonyms prompt and a tracked set. The tracked
/// set is the prompt's targets at t−1, sometimes widened by other objects and
/// sometimes replaced by them.
inline TrainingSample draw_sample(const Scenario& s, Rng& rng) {
  TrainingSample out;
  const int t = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(s.frames - 1)));
  out.prev = s.frame(t - 1);
  out.cur = s.frame(t);

  std::vector<int> present;
  for (const auto& o : out.prev.objects)
    if (std::find(present.begin(), present.end(), static_cast<int>(o.attributes.category)) == present.end())
      present.push_back(static_cast<int>(o.attributes.category));
  std::vector<int> cats;
  if (!present.empty()) cats.push_back(present[rng.below(present.size())]);
  const std::size_t extra = rng.below(3);  // 0..2 more categories, possibly absent ones
  for (std::size_t e = 0; e < extra; ++e) {
    const int c = static_cast<int>(rng.below(kCategories.size()));
    if (std::find(cats.begin(), cats.end(), c) == cats.end()) cats.push_back(c);
  }
  if (cats.empty()) cats.push_back(static_cast<int>(rng.below(kCategories.size())));
  for (std::size_t i = cats.size(); i > 1; --i) std::swap(cats[i - 1], cats[rng.below(i)]);

  const bool synonyms = rng.bernoulli(0.3);
  out.prompt.kind = synonyms ? ScenarioKind::kSynonym : ScenarioKind::kName;
  for (int c : cats) {
    const auto& info = kCategories[static_cast<std::size_t>(c)];
    out.prompt.phrases.emplace_back(synonyms ? info.synonyms[rng.below(info.synonyms.size())] : info.name);
    out.prompt_categories.push_back(c);
  }

  const double u = rng.uniform();
  const auto own = detail::owners(out.prev);
  for (const SceneObject* o : own) {
    const bool target = detail::in_prompt(*o, cats);
    bool keep = false;
    if (u < 0.15) keep = !target;                             // disjoint
    else if (u < 0.6) keep = target || rng.bernoulli(0.5);    // superset
    else keep = target;
    if (!keep) continue;
    out.tracked.push_back(o->track_id);
    out.tracked_cells.push_back(cell_index(o->box, out.prev.grid_w, out.prev.grid_h));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss of one sample

struct StepLoss {
  LossComponents parts;     // tracklet|prompt, image|tracklet, GIoU (both branches)
  double confidence = 0.0;  // confidence BCE, both branches
  double triplet = 0.0;     // triplet term, tracking branch
  double total = 0.0;       // optimized objective
};

struct TrainConfig {
  ModelConfig model = [] {
    ModelConfig m;
    m.encoder.dropout_rate = 0.0;
    return m;
  }();
  WorldConfig world;
  std::uint64_t seed = 1;
  int epochs = 40;
  int steps_per_epoch = 500;
  double lr_embedding = 2.5e-4;
  double lr = 5e-4;
  bool adam = true;
  LossWeights weights;
  double confidence_weight = 5.0;
  double positive_weight = 2.0;
  double l1_weight = 5.0;
  double triplet_weight = 0.1;
  ForwardMode mode = ForwardMode::kSimplified;

  void validate() const {
    weights.validate();
    world.validate();
    if (epochs < 0 || steps_per_epoch <= 0) throw ConfigError("epochs must be ≥ 0 and steps per epoch > 0");
    if (!(lr > 0.0) || !(lr_embedding > 0.0)) throw ConfigError("learning rates must be positive");
    if (confidence_weight < 0.0 || positive_weight < 0.0 || l1_weight < 0.0 || triplet_weight < 0.0)
      throw ConfigError("auxiliary loss weights must be non-negative");
  }
};

namespace detail {

inline std::vector<Box> target_boxes(const SceneFrame& f, const std::vector<int>& cats) {
  std::vector<Box> out;
  for (const SceneObject* o : owners(f))
    if (in_prompt(*o, cats)) out.push_back(o->box);
  return out;
}

// GIoU + confidence terms on one decoded frame; returns the two raw values.
inline std::pair<double, double> box_terms(ad::Tape& t, ad::Var raw, const std::vector<Box>& anchors,
                                           const std::vector<Box>& targets, const TrainConfig& cfg,
                                           std::vector<std::pair<ad::Var, double>>& terms) {
  const Matrix& rv = t.value(raw);
  const auto matches = match_targets(rv, anchors, targets);
  const RawGrad g = giou_loss_grad(rv, anchors, targets, matches);
  std::vector<char> positive(rv.rows(), 0);
  for (auto [i, tgt] : matches) positive[i] = 1;
  const RawGrad c = confidence_loss_grad(rv, positive, cfg.positive_weight);
  terms.emplace_back(ad::fused(t, {raw}, g.value, {g.d_raw}), cfg.weights.giou);
  terms.emplace_back(ad::fused(t, {raw}, c.value, {c.d_raw}), cfg.confidence_weight);
  if (cfg.l1_weight > 0.0) {
    const RawGrad l = l1_loss_grad(rv, anchors, targets, matches);
    terms.emplace_back(ad::fused(t, {raw}, l.value, {l.d_raw}), cfg.l1_weight);
  }
  return {g.value, c.value};
}

}  // namespace detail

/// Builds the loss of one sample on the tape; returns the root and its parts.
inline std::pair<ad::Var, StepLoss> sample_loss(ad::Tape& t, const TapeModel& tm, const TrainingSample& s,
                                                const TrainConfig& cfg, Rng* dropout_rng) {
  const EncoderConfig& ec = tm.model->config.encoder;
  const auto origins = image_origins(ec);
  std::vector<Box> anchors;
  for (const auto& o : origins) anchors.push_back(o.anchor);

  std::vector<std::pair<ad::Var, double>> terms;
  StepLoss loss;
  const ad::Var img_prev = tape_encode(t, tm, s.prev, dropout_rng);
  const ad::Var img_cur = tape_encode(t, tm, s.cur, dropout_rng);
  const ad::Var prm = tape_embed(t, tm, s.prompt);

  // grounding branch at t−1
  {
    const ad::Var raw = tape_decode(t, tm, tape_ground(t, tm, img_prev, prm), img_prev);
    const auto [g, c] = detail::box_terms(t, raw, anchors, detail::target_boxes(s.prev, s.prompt_categories), cfg, terms);
    loss.parts.giou += g;
    loss.confidence += c;
  }

  // tracking branch at t
  if (!s.tracked.empty()) {
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t cell : s.tracked_cells) groups.push_back({cell});
    const ad::Var trk = ad::pool_rows(t, img_prev, groups);
    const TapeTracking tr = tape_track(t, tm, img_cur, trk, prm, cfg.mode);
    const ad::Var raw = tape_decode(t, tm, tr.z, img_cur);
    const auto [g, c] = detail::box_terms(t, raw, anchors, detail::target_boxes(s.cur, s.prompt_categories), cfg, terms);
    loss.parts.giou += g;
    loss.confidence += c;

    std::vector<std::pair<std::size_t, std::size_t>> links, assignment;
    const auto own_cur = detail::owners(s.cur);
    for (std::size_t j = 0; j < s.tracked.size(); ++j) {
      const SceneObject* obj = nullptr;
      for (const auto& o : s.prev.objects)
        if (o.track_id == s.tracked[j]) obj = &o;
      for (std::size_t k = 0; k < s.prompt_categories.size(); ++k)
        if (obj && static_cast<int>(obj->attributes.category) == s.prompt_categories[k]) links.emplace_back(j, k);
      for (const SceneObject* o : own_cur)
        if (o->track_id == s.tracked[j]) assignment.emplace_back(j, cell_index(o->box, s.cur.grid_w, s.cur.grid_h));
    }
    if (!links.empty()) {
      const PairGrad a = alignment_loss_grad(t.value(trk), t.value(prm), PositivePairs::from_links(links));
      terms.emplace_back(ad::fused(t, {trk, prm}, a.value, {a.d_first, a.d_second}), cfg.weights.tp);
      loss.parts.tp = a.value;
    }
    if (!assignment.empty()) {
      const PairGrad o = objectness_loss_grad(t.value(trk), t.value(img_cur), assignment);
      terms.emplace_back(ad::fused(t, {trk, img_cur}, o.value, {o.d_first, o.d_second}), cfg.weights.it);
      loss.parts.it = o.value;
    }
    std::vector<std::array<std::size_t, 3>> triples;
    for (const auto& [j, k] : links)
      for (const auto& [j2, i] : assignment)
        if (j2 == j) triples.push_back({i, j, k});
    if (cfg.triplet_weight > 0.0 && !triples.empty()) {
      const ad::Var q = ad::matmul(t, img_cur, tm[TapeModel::kRtQuery]);
      const ad::Var k = ad::matmul(t, trk, tm[TapeModel::kRtKey]);
      const ad::Var p = ad::matmul(t, prm, tm[TapeModel::kVpKey]);
      const TripleGrad g = triplet_loss_grad(t.value(q), t.value(k), t.value(p), triples);
      terms.emplace_back(ad::fused(t, {q, k, p}, g.value, {g.d_q, g.d_k, g.d_p}), cfg.triplet_weight);
      loss.triplet = g.value;
    }
  }
  const ad::Var root = ad::weighted_sum(t, terms);
  loss.total = t.value(root)(0, 0);
  return {root, loss};
}

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerState {
  std::int64_t step = 0;  // completed steps
  std::vector<Matrix> m, v;  // Adam moments, one per parameter (empty for plain descent)
};

inline void apply_gradients(Model& model, const std::vector<Matrix>& grads, OptimizerState& opt,
                            const TrainConfig& cfg) {
  auto params = parameters(model);
  if (cfg.adam && opt.m.empty()) {
    for (const auto& p : params) {
      opt.m.emplace_back(p.value->rows(), p.value->cols());
      opt.v.emplace_back(p.value->rows(), p.value->cols());
    }
  }
  ++opt.step;
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(opt.step));
  for (std::size_t n = 0; n < params.size(); ++n) {
    const double lr = params[n].embedding ? cfg.lr_embedding : cfg.lr;
    auto w = params[n].value->data();
    const auto g = grads[n].data();
    if (!cfg.adam) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
      continue;
    }
    auto m = opt.m[n].data();
    auto v = opt.v[n].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Loop

struct EpochLoss {
  int epoch = 0;
  double tp = 0.0, it = 0.0, giou = 0.0, total = 0.0, confidence = 0.0;
};

inline void write_loss_header(std::ostream& out) { out << "epoch,L_TP,L_IT,L_GIoU,total,L_conf\n"; }

inline void write_loss_row(std::ostream& out, const EpochLoss& e) {
  out << e.epoch << ',' << e.tp << ',' << e.it << ',' << e.giou << ',' << e.total << ',' << e.confidence << '\n';
}

/// The world of a given epoch.
inline Scenario training_world(const TrainConfig& cfg, int epoch) {
  return generate(mix_seed(cfg.seed, 0x7a11000ULL + static_cast<std::uint64_t>(epoch)), cfg.world);
}

/// One optimisation step at global index `opt.step`.
inline StepLoss train_step(Model& model, const Scenario& world, OptimizerState& opt, const TrainConfig& cfg) {
  Rng rng(mix_seed(cfg.seed, 0x57e900000ULL + static_cast<std::uint64_t>(opt.step)));
  const TrainingSample sample = draw_sample(world, rng);
  ad::Tape tape;
  const TapeModel tm(tape, model);
  auto [root, loss] = sample_loss(tape, tm, sample, cfg, &rng);
  if (!std::isfinite(loss.total)) {
    std::ostringstream msg;
    msg << "loss became non-finite at step " << opt.step << " (L_TP=" << loss.parts.tp << ", L_IT=" << loss.parts.it
        << ", L_GIoU=" << loss.parts.giou << ", L_conf=" << loss.confidence << ")";
    throw DivergenceError(msg.str());
  }
  tape.backward(root);
  std::vector<Matrix> grads;
  for (ad::Var v : tm.leaves) grads.push_back(tape.grad(v));
  apply_gradients(model, grads, opt, cfg);
  return loss;
}

using EpochCallback = std::function<void(const EpochLoss&)>;

/// Trains until `cfg.epochs` epochs are complete, continuing from `opt.step`.
/// Every step's randomness derives from (seed, step), so a run resumed from a
/// checkpoint continues bit-identically.
inline std::vector<EpochLoss> train(Model& model, OptimizerState& opt, const TrainConfig& cfg,
                                    const EpochCallback& on_epoch = {}) {
  cfg.validate();
  std::vector<EpochLoss> curve;
  const std::int64_t total = static_cast<std::int64_t>(cfg.epochs) * cfg.steps_per_epoch;
  std::optional<Scenario> world;
  int world_epoch = -1;
  EpochLoss acc;
  int in_epoch = 0;
  while (opt.step < total) {
    const int epoch = static_cast<int>(opt.step / cfg.steps_per_epoch);
    if (epoch != world_epoch) {
      world = training_world(cfg, epoch);
      world_epoch = epoch;
      acc = EpochLoss{epoch + 1};
      in_epoch = 0;
    }
    const StepLoss l = train_step(model, *world, opt, cfg);
    acc.tp += l.parts.tp;
    acc.it += l.parts.it;
    acc.giou += l.parts.giou;
    acc.total += total_loss(l.parts, cfg.weights);
    acc.confidence += l.confidence;
    ++in_epoch;
    if (opt.step % cfg.steps_per_epoch == 0) {
      const double inv = 1.0 / in_epoch;
      EpochLoss e = acc;
      e.tp *= inv;
      e.it *= inv;
      e.giou *= inv;
      e.total *= inv;
      e.confidence *= inv;
      curve.push_back(e);
      if (on_epoch) on_epoch(e);
    }
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Evaluation helpers

/// Mean triplet objective over held-out frames: for every frame pair, the
/// tracked set is the targets at t−1 and each positive is (cell at t,
/// tracklet, matching prompt token).
inline double heldout_triplet(const Model& model, const Scenario& s) {
  double sum = 0.0;
  std::size_t count = 0;
  const auto order = detail::categories_by_count(s.objects);
  for (int t = 1; t < s.frames; ++t) {
    const SceneFrame prev = s.frame(t - 1), cur = s.frame(t);
    const std::vector<int> cats{static_cast<int>(order[0]), static_cast<int>(order[1])};
    PromptText prompt{ScenarioKind::kName, {std::string(kCategories[order[0]].name), std::string(kCategories[order[1]].name)}};
    std::vector<std::size_t> cells;
    std::vector<int> ids;
    for (const SceneObject* o : detail::owners(prev))
      if (detail::in_prompt(*o, cats)) {
        cells.push_back(cell_index(o->box, prev.grid_w, prev.grid_h));
        ids.push_back(o->track_id);
      }
    if (cells.empty()) continue;
    const TokenMatrix img_prev = model.encode(prev), img_cur = model.encode(cur);
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t c : cells) groups.push_back({c});
    const TokenMatrix trk{TokenFamily::kTracklet, pool_rows(img_prev.tokens, groups),
                          std::vector<TokenOrigin>(cells.size())};
    const TokenMatrix prm = model.embed(prompt);
    const TrackingOutput out = forward_full(img_cur, trk, prm, model.weights, nullptr, model.config.core);
    for (std::size_t j = 0; j < ids.size(); ++j) {
      const SceneObject* now = nullptr;
      for (const SceneObject* o : detail::owners(cur))
        if (o->track_id == ids[j]) now = o;
      if (!now) continue;
      const std::size_t i = cell_index(now->box, cur.grid_w, cur.grid_h);
      for (std::size_t k = 0; k < cats.size(); ++k)
        if (static_cast<int>(now->attributes.category) == cats[k]) {
          sum += triplet_objective(out.t, i, j, k);
          ++count;
        }
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

/// Runs the learned tracker on a scenario with its own schedule and scores it.
inline MetricReport evaluate_model(const Model& model, const Scenario& s, ForwardMode mode = ForwardMode::kSimplified,
                                   const TrackerParams& params = {}) {
  ModelBackend backend(model, mode);
  const TrackSet pred = run_tracker(s, backend, s.schedule, params);
  return summary(ground_truth(s), pred);
}

}  // namespace mender
