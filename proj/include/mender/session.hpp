#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mender/errors.hpp"
#include "mender/prompt.hpp"
#include "mender/rng.hpp"
#include "mender/simworld.hpp"
#include "mender/track_io.hpp"
#include "mender/tracker.hpp"

namespace mender {

// Session protocol. Every message is one UTF-8 JSON object with a "kind":
//
//   server → client
//     hello         {version, frames, grid:[w,h], seed, prompt}
//     prompt_change {text, frame, dropped:[words]}      acknowledgement
//     frame_result  {frame, grounding, prompt?, tracks:[{id, box, conf, class, color}]}
//     error         {message}
//     end           {frames}
//   client → server
//     frame_request {frame?}
//     prompt_change {text}
//     end           {}

inline constexpr int kProtocolVersion = 1;

enum class MessageKind { kHello, kFrameRequest, kPromptChange, kFrameResult, kError, kEnd };

inline std::string_view to_string(MessageKind k) {
  switch (k) {
    case MessageKind::kHello: return "hello";
    case MessageKind::kFrameRequest: return "frame_request";
    case MessageKind::kPromptChange: return "prompt_change";
    case MessageKind::kFrameResult: return "frame_result";
    case MessageKind::kError: return "error";
    case MessageKind::kEnd: return "end";
  }
  return "?";
}

inline MessageKind parse_message_kind(std::string_view s) {
  for (auto k : {MessageKind::kHello, MessageKind::kFrameRequest, MessageKind::kPromptChange,
                 MessageKind::kFrameResult, MessageKind::kError, MessageKind::kEnd})
    if (to_string(k) == s) return k;
  throw SchemaError("$.kind", "unknown message kind '" + std::string(s) + "'");
}

using Message = nlohmann::ordered_json;

inline Message make_message(MessageKind kind) {
  Message m;
  m["kind"] = std::string(to_string(kind));
  return m;
}

inline Message error_message(const std::string& text) {
  Message m = make_message(MessageKind::kError);
  m["message"] = text;
  return m;
}

/// Stable display color of an id, "#rrggbb".
inline std::string id_color(int id) {
  const std::uint64_t h = mix_seed(static_cast<std::uint64_t>(id), 0xc0104ULL);
  // keep every channel away from black and white
  const unsigned r = 48 + (h & 0xff) % 176, g = 48 + ((h >> 8) & 0xff) % 176, b = 48 + ((h >> 16) & 0xff) % 176;
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

/// Free text filtered against a vocabulary: unknown words are dropped.
struct FilteredPrompt {
  PromptText prompt;
  std::vector<std::string> dropped;
};

template <class Known>
FilteredPrompt filter_prompt(std::string_view text, Known&& known) {
  const PromptText raw = parse_free_prompt(text);
  FilteredPrompt out;
  bool single_words = true;
  for (const auto& phrase : raw.phrases) {
    std::string kept;
    std::size_t n = 0;
    for (const auto& w : split_words(phrase)) {
      if (!known(w)) {
        out.dropped.push_back(w);
        continue;
      }
      kept += (n++ ? " " : "") + w;
    }
    if (n == 0) continue;
    single_words = single_words && n == 1;
    out.prompt.phrases.push_back(std::move(kept));
  }
  out.prompt.kind = single_words ? ScenarioKind::kName : ScenarioKind::kRetrieval;
  return out;
}

/// One interactive session over a scenario. Transport-free: feed client
/// messages to handle() and send back whatever it returns.
template <class Backend>
class Session {
 public:
  Session(const Scenario& scenario, Backend backend, const TrackerParams& params = {},
          std::optional<PromptText> initial = std::nullopt)
      : scenario_(&scenario), backend_(std::move(backend)) {
    params.validate();
    state_.params = params;
    if (initial) entries_.push_back({0, std::move(*initial)});
  }

  Message hello() const {
    Message m = make_message(MessageKind::kHello);
    m["version"] = kProtocolVersion;
    m["frames"] = scenario_->frames;
    m["grid"] = {scenario_->grid_w, scenario_->grid_h};
    m["seed"] = scenario_->seed;
    m["prompt"] = entries_.empty() ? Message() : Message(entries_.front().prompt.text());
    return m;
  }

  /// Replies to one client message. Never throws on bad input; errors become
  /// error messages and the session continues.
  std::vector<Message> handle(const nlohmann::json& msg) {
    try {
      if (!msg.is_object() || !msg.contains("kind") || !msg["kind"].is_string())
        throw SchemaError("$.kind", "missing message kind");
      switch (parse_message_kind(msg["kind"].get<std::string>())) {
        case MessageKind::kFrameRequest: return on_frame_request(msg);
        case MessageKind::kPromptChange: return {on_prompt_change(msg)};
        case MessageKind::kEnd:
          finished_ = true;
          return {end_message()};
        default: throw SchemaError("$.kind", "clients may only send frame_request, prompt_change or end");
      }
    } catch (const std::exception& e) {
      return {error_message(e.what())};
    }
  }

  std::vector<Message> handle_text(std::string_view text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      return {error_message(std::string("malformed message: ") + e.what())};
    }
    return handle(j);
  }

  bool finished() const noexcept { return finished_; }
  int next_frame() const noexcept { return state_.frame; }
  const TrackerState& state() const noexcept { return state_; }

 private:
  Message end_message() const {
    Message m = make_message(MessageKind::kEnd);
    m["frames"] = state_.frame;
    return m;
  }

  Message on_prompt_change(const nlohmann::json& msg) {
    if (!msg.contains("text") || !msg["text"].is_string()) throw SchemaError("$.text", "prompt_change needs text");
    const std::string text = msg["text"].get<std::string>();
    if (trim(text).empty()) throw EmptyPromptError("prompt_change carries empty text");
    if (finished_) throw SequencingError("session has ended");
    FilteredPrompt f = filter_prompt(text, [&](const std::string& w) { return backend_.knows(w); });
    if (f.prompt.empty()) throw EmptyPromptError("prompt '" + text + "' has no words in the vocabulary; keeping the current prompt");
    // a later change before the same frame boundary replaces the earlier one
    if (!entries_.empty() && entries_.back().frame == state_.frame) entries_.back().prompt = f.prompt;
    else entries_.push_back({state_.frame, f.prompt});
    Message ack = make_message(MessageKind::kPromptChange);
    ack["text"] = f.prompt.text();
    ack["frame"] = state_.frame;
    ack["dropped"] = f.dropped;
    return ack;
  }

  std::vector<Message> on_frame_request(const nlohmann::json& msg) {
    if (finished_) throw SequencingError("session has ended");
    if (msg.contains("frame") && msg["frame"].get<int>() != state_.frame)
      throw SequencingError("expected a request for frame " + std::to_string(state_.frame));
    const PromptSchedule schedule(entries_);
    const FrameResult r = step(state_, backend_, scenario_->frame(state_.frame), schedule);
    Message m = make_message(MessageKind::kFrameResult);
    m["frame"] = r.frame;
    m["grounding"] = r.grounding;
    if (r.prompt_applied) m["prompt"] = r.prompt_applied->text();
    auto tracks = Message::array();
    for (const auto& rec : r.records) {
      Message t = track_to_json(rec);
      t.erase("frame");
      t["color"] = id_color(rec.id);
      tracks.push_back(std::move(t));
    }
    m["tracks"] = std::move(tracks);
    std::vector<Message> out{std::move(m)};
    if (state_.frame >= scenario_->frames) {
      finished_ = true;
      out.push_back(end_message());
    }
    return out;
  }

  const Scenario* scenario_;
  Backend backend_;
  TrackerState state_;
  std::vector<PromptSchedule::Entry> entries_;
  bool finished_ = false;
};

/// Track records carried by a frame_result message.
inline TrackSet records_from_result(const nlohmann::json& msg) {
  if (!msg.contains("kind") || msg["kind"] != "frame_result") throw SchemaError("$.kind", "not a frame_result");
  TrackSet out;
  const int frame = msg.at("frame").get<int>();
  for (std::size_t i = 0; i < msg.at("tracks").size(); ++i) {
    nlohmann::json t = msg["tracks"][i];
    t["frame"] = frame;
    out.push_back(track_from_json(t, "$.tracks[" + std::to_string(i) + "]"));
  }
  return out;
}

}  // namespace mender
