#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mender/box.hpp"
#include "mender/errors.hpp"
#include "mender/hungarian.hpp"
#include "mender/model.hpp"
#include "mender/prompt.hpp"
#include "mender/scene.hpp"
#include "mender/simworld.hpp"
#include "mender/track_io.hpp"
#include "mender/tracklet.hpp"

namespace mender {

struct TrackerParams {
  double gamma = 0.7;
  double gamma_reassign = 0.75;
  int t_tlr = 30;
  double iou_gate = 0.5;

  void validate() const {
    check_threshold(gamma);
    if (!(gamma_reassign >= -1.0 && gamma_reassign <= 1.0)) throw ConfigError("gamma_reassign must lie in [-1, 1]");
    if (t_tlr < 0) throw ConfigError("t_tlr must be non-negative");
  }
};

struct TrackerState {
  TrackletSet active;
  TrackletSet inactive;
  int next_id = 1;
  int frame = 0;  // next expected frame index
  std::optional<PromptText> current_prompt;
  TrackerParams params;
};

/// Decoded candidates of one frame with the feature row of each.
struct Detections {
  CandidateSet candidates;
  std::vector<std::vector<double>> features;
};

struct FrameResult {
  int frame = 0;
  TrackSet records;                // surviving active tracklets
  std::optional<PromptText> prompt_applied;  // set on frames where the prompt changed
  bool grounding = false;          // true when the grounding branch ran
};

// ---------------------------------------------------------------------------
// Lifecycle operations

/// New active tracklets with ascending ids.
inline TrackletSet initialize(const Detections& dets, std::span<const std::size_t> which, TrackerState& state) {
  TrackletSet out;
  for (std::size_t idx : which) {
    const Candidate& c = dets.candidates[idx];
    Tracklet tr;
    tr.box = c.box;
    tr.conf = c.conf;
    tr.id = state.next_id++;
    tr.feature = dets.features[idx];
    tr.state = TrackletState::kActive;
    tr.assigned_token_indices = {c.source};
    tr.label = c.label;
    out.push_back(std::move(tr));
  }
  return out;
}

inline TrackletSet initialize(const Detections& dets, TrackerState& state) {
  std::vector<std::size_t> all(dets.candidates.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return initialize(dets, all, state);
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("feature widths differ");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

struct CascadeResult {
  std::vector<std::pair<std::size_t, std::size_t>> matched;  // (new index, prev index)
  std::vector<std::size_t> unmatched_new;
  std::vector<std::size_t> unmatched_old;
};

/// Stage 1: Hungarian on 1 − cosine over pairs with similarity ≥ γ_reassign.
/// Stage 2: Hungarian on 1 − IoU over the rest with IoU ≥ `iou_gate`.
inline CascadeResult cascade_matching(const TrackletSet& fresh, const TrackletSet& prev, double gamma_reassign,
                                      double iou_gate = 0.5) {
  Matrix sim(fresh.size(), prev.size());
  for (std::size_t i = 0; i < fresh.size(); ++i)
    for (std::size_t j = 0; j < prev.size(); ++j) sim(i, j) = cosine_similarity(fresh[i].feature, prev[j].feature);
  Matrix cost(fresh.size(), prev.size());
  for (std::size_t i = 0; i < cost.size(); ++i) cost.data()[i] = 1.0 - sim.data()[i];
  const GatedMatch first = gated_hungarian(cost, [&](std::size_t i, std::size_t j) { return sim(i, j) >= gamma_reassign; });

  CascadeResult out;
  out.matched = first.pairs;
  const auto& rows = first.unmatched_rows;
  const auto& cols = first.unmatched_cols;
  Matrix overlap(rows.size(), cols.size()), iou_cost(rows.size(), cols.size());
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = 0; b < cols.size(); ++b) {
      overlap(a, b) = iou(fresh[rows[a]].box, prev[cols[b]].box);
      iou_cost(a, b) = 1.0 - overlap(a, b);
    }
  const GatedMatch second = gated_hungarian(iou_cost, [&](std::size_t a, std::size_t b) { return overlap(a, b) >= iou_gate; });
  for (auto [a, b] : second.pairs) out.matched.emplace_back(rows[a], cols[b]);
  for (std::size_t a : second.unmatched_rows) out.unmatched_new.push_back(rows[a]);
  for (std::size_t b : second.unmatched_cols) out.unmatched_old.push_back(cols[b]);
  std::sort(out.matched.begin(), out.matched.end());
  std::sort(out.unmatched_new.begin(), out.unmatched_new.end());
  std::sort(out.unmatched_old.begin(), out.unmatched_old.end());
  return out;
}

/// Old ids carrying new boxes, confidences, features and assignments.
inline TrackletSet update(const TrackletSet& matched_new, const TrackletSet& matched_old) {
  if (matched_new.size() != matched_old.size()) throw ShapeError("update: unaligned match lists");
  TrackletSet out;
  for (std::size_t i = 0; i < matched_new.size(); ++i) {
    Tracklet tr = matched_new[i];
    tr.id = matched_old[i].id;
    tr.state = TrackletState::kActive;
    tr.last_seen = -1;
    if (tr.label < 0) tr.label = matched_old[i].label;
    out.push_back(std::move(tr));
  }
  return out;
}

/// Keeps inactive tracklets with now − last_seen ≤ t_tlr.
inline TrackletSet remove_deprecation(const TrackletSet& inactive, int t_tlr, int now) {
  TrackletSet out;
  for (const auto& tr : inactive)
    if (now - tr.last_seen <= t_tlr) out.push_back(tr);
  return out;
}

inline TrackRecord to_record(const Tracklet& tr, int frame) { return {frame, tr.id, tr.box, tr.conf, tr.label}; }

// ---------------------------------------------------------------------------
// Detection backends

/// The learned network. Keeps the previous frame's image tokens for ext(·).
class ModelBackend {
 public:
  ModelBackend(const Model& model, ForwardMode mode = ForwardMode::kSimplified)
      : model_(&model), mode_(mode) {}

  /// Rejects prompts without any in-vocabulary word.
  void set_prompt(const PromptText& prompt) {
    TokenMatrix tokens = model_->embed(prompt);
    std::size_t known = 0;
    for (const auto& origin : tokens.origins)
      for (const auto& w : split_words(origin.text))
        if (model_->vocab.find(w)) ++known;
    if (known == 0) throw EmptyPromptError("prompt has no words in the vocabulary");
    prompt_tokens_ = std::move(tokens);
  }

  Detections ground(const SceneFrame& frame, double gamma) {
    TokenMatrix img = model_->encode(frame);
    const GroundingOutput g = ground_forward(img, prompt_tokens_, model_->weights, counter_);
    Detections d = collect(g.z, img, g.a_ip, gamma);
    prev_tokens_ = std::move(img);
    return d;
  }

  Detections track(const SceneFrame& frame, const TrackletSet& prev, double gamma) {
    TokenMatrix img = model_->encode(frame);
    const TokenMatrix trk = extract_tracklets(prev, prev_tokens_);
    const TrackingOutput out = forward(mode_, img, trk, prompt_tokens_, model_->weights, counter_);
    Detections d = collect(out.z, img, matmul(out.a_it, out.a_tp), gamma);
    prev_tokens_ = std::move(img);
    return d;
  }

  bool knows(std::string_view word) const { return model_->vocab.find(word).has_value(); }

  void set_counter(FlopCounter* counter) { counter_ = counter; }
  const TokenMatrix& prompt_tokens() const noexcept { return prompt_tokens_; }

 private:
  Detections collect(const Matrix& z, const TokenMatrix& img, const Matrix& to_prompt, double gamma) const {
    Detections d;
    d.candidates = decode(z, img, model_->weights, gamma, attended_labels(to_prompt, prompt_tokens_));
    for (const auto& c : d.candidates) {
      const auto row = img.tokens.row(c.source);
      d.features.emplace_back(row.begin(), row.end());
    }
    return d;
  }

  const Model* model_;
  ForwardMode mode_;
  TokenMatrix prompt_tokens_;
  TokenMatrix prev_tokens_{TokenFamily::kImage, Matrix(), {}};
  FlopCounter* counter_ = nullptr;
};

/// Ground-truth decoder for lifecycle tests. Features are the one-hot of the
/// object's attribute combination, so similarity is exact for one object and
/// zero between distinct objects.
class OracleBackend {
 public:
  explicit OracleBackend(const Scenario& scenario) : scenario_(&scenario) {}

  void set_prompt(const PromptText& prompt) {
    if (prompt.phrases.empty()) throw EmptyPromptError("empty prompt");
    prompt_ = prompt;
  }

  Detections ground(const SceneFrame& frame, double gamma) { return detect(frame, gamma); }
  Detections track(const SceneFrame& frame, const TrackletSet&, double gamma) { return detect(frame, gamma); }

  bool knows(std::string_view word) const {
    static const Vocabulary words(Vocabulary::default_words(), Matrix(Vocabulary::default_words().size(), 1));
    return words.find(word).has_value();
  }

  static constexpr std::size_t kFeatureWidth = kCategories.size() * kColors.size() * kActions.size();

 private:
  Detections detect(const SceneFrame& frame, double gamma) const {
    Detections d;
    for (const auto& c : oracle_decode(*scenario_, frame.index, prompt_)) {
      if (c.conf < gamma) continue;
      d.candidates.push_back(c);
      std::vector<double> f(kFeatureWidth, 0.0);
      for (const auto& o : frame.objects) {
        if (cell_index(o.box, frame.grid_w, frame.grid_h) != c.source || !(o.box == c.box)) continue;
        const auto& a = o.attributes;
        f[(a.category * kColors.size() + a.color) * kActions.size() + a.action] = 1.0;
      }
      d.features.push_back(std::move(f));
    }
    return d;
  }

  const Scenario* scenario_;
  PromptText prompt_;
};

// ---------------------------------------------------------------------------
// Pipeline

inline bool shares_no_phrase(const PromptText& a, const PromptText& b) {
  for (const auto& x : a.phrases)
    if (std::find(b.phrases.begin(), b.phrases.end(), x) != b.phrases.end()) return false;
  return true;
}

/// One frame of the inference pipeline. The prompt swap happens before any
/// forward pass of the frame.
template <class Backend>
FrameResult step(TrackerState& state, Backend& backend, const SceneFrame& frame, const PromptSchedule& schedule) {
  if (frame.index != state.frame) {
    throw SequencingError("expected frame " + std::to_string(state.frame) + ", got " + std::to_string(frame.index));
  }
  state.params.validate();
  FrameResult result;
  result.frame = frame.index;
  if (const PromptText* p = schedule.fires_at(frame.index)) {
    backend.set_prompt(*p);
    // a prompt sharing no phrase with the current one starts over from grounding
    if (state.current_prompt && shares_no_phrase(*state.current_prompt, *p)) {
      state.active.clear();
      state.inactive.clear();
    }
    state.current_prompt = *p;
    result.prompt_applied = *p;
  }
  if (!state.current_prompt) throw SequencingError("no prompt in effect at frame " + std::to_string(frame.index));

  const double gamma = state.params.gamma;
  if (state.active.empty() && state.inactive.empty()) {
    result.grounding = true;
    const Detections dets = backend.ground(frame, gamma);
    state.active = initialize(dets, state);
  } else {
    TrackletSet prev = state.active;
    prev.insert(prev.end(), state.inactive.begin(), state.inactive.end());
    const Detections dets = backend.track(frame, prev, gamma);

    TrackletSet fresh;
    for (std::size_t i = 0; i < dets.candidates.size(); ++i) {
      const Candidate& c = dets.candidates[i];
      Tracklet tr;
      tr.box = c.box;
      tr.conf = c.conf;
      tr.feature = dets.features[i];
      tr.assigned_token_indices = {c.source};
      tr.label = c.label;
      fresh.push_back(std::move(tr));
    }
    const CascadeResult m = cascade_matching(fresh, prev, state.params.gamma_reassign, state.params.iou_gate);

    TrackletSet matched_new, matched_old;
    for (auto [n, o] : m.matched) {
      matched_new.push_back(fresh[n]);
      matched_old.push_back(prev[o]);
    }
    TrackletSet active = update(matched_new, matched_old);
    const TrackletSet born = initialize(dets, m.unmatched_new, state);
    active.insert(active.end(), born.begin(), born.end());

    TrackletSet inactive;
    for (std::size_t o : m.unmatched_old) {
      Tracklet tr = prev[o];
      if (tr.state == TrackletState::kActive) {
        tr.state = TrackletState::kInactive;
        tr.last_seen = frame.index;
        tr.assigned_token_indices.clear();
      }
      inactive.push_back(std::move(tr));
    }
    state.active = std::move(active);
    state.inactive = remove_deprecation(inactive, state.params.t_tlr, frame.index);
  }
  for (const auto& tr : state.active) result.records.push_back(to_record(tr, frame.index));
  ++state.frame;
  return result;
}

/// Runs every frame of a scenario and concatenates the emitted records.
template <class Backend>
TrackSet run_tracker(const Scenario& scenario, Backend& backend, const PromptSchedule& schedule,
                     const TrackerParams& params = {}) {
  TrackerState state;
  state.params = params;
  TrackSet out;
  for (int t = 0; t < scenario.frames; ++t) {
    const FrameResult r = step(state, backend, scenario.frame(t), schedule);
    out.insert(out.end(), r.records.begin(), r.records.end());
  }
  return out;
}

}  // namespace mender
