#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mender/errors.hpp"

namespace mender {

/// The five prompt scenarios.
enum class ScenarioKind {
  kName,        // nm.   category names
  kSynonym,     // syn.  category synonyms
  kDefinition,  // def.  category definitions
  kCaption,     // cap.  tracklet captions
  kRetrieval,   // retr. short one-to-many retrieval prompts
};

inline std::string_view to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kName: return "nm";
    case ScenarioKind::kSynonym: return "syn";
    case ScenarioKind::kDefinition: return "def";
    case ScenarioKind::kCaption: return "cap";
    case ScenarioKind::kRetrieval: return "retr";
  }
  return "?";
}

inline ScenarioKind parse_scenario_kind(std::string_view text) {
  std::string s(text);
  if (!s.empty() && s.back() == '.') s.pop_back();
  if (s == "nm" || s == "name") return ScenarioKind::kName;
  if (s == "syn" || s == "synonym") return ScenarioKind::kSynonym;
  if (s == "def" || s == "definition") return ScenarioKind::kDefinition;
  if (s == "cap" || s == "caption") return ScenarioKind::kCaption;
  if (s == "retr" || s == "retrieval") return ScenarioKind::kRetrieval;
  throw ConfigError("unknown scenario kind '" + std::string(text) + "'");
}

/// Word-level scenarios emit one token per word; the others one per sentence.
inline bool is_word_level(ScenarioKind kind) {
  return kind == ScenarioKind::kName || kind == ScenarioKind::kSynonym;
}

/// A request prompt: an ordered list of phrases (words for nm./syn.,
/// sentences for def./cap./retr.).
struct PromptText {
  ScenarioKind kind = ScenarioKind::kName;
  std::vector<std::string> phrases;

  bool empty() const noexcept { return phrases.empty(); }

  /// Phrases joined by ". ", the separator used for word-level prompts.
  std::string text() const {
    std::string out;
    for (std::size_t i = 0; i < phrases.size(); ++i) {
      if (i) out += ". ";
      out += phrases[i];
    }
    return out;
  }

  bool operator==(const PromptText&) const = default;
};

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

/// Lower-cased alphanumeric words; punctuation other than '-' and '\'' splits.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '-' || ch == '\'' || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

/// Splits free text on '.' into phrases. A prompt made only of single-word
/// phrases is word-level (nm.), anything longer is a retrieval sentence list.
inline PromptText parse_free_prompt(std::string_view text) {
  PromptText p;
  std::string cur;
  auto flush = [&] {
    std::string t = trim(cur);
    if (!t.empty()) p.phrases.push_back(lowercase(t));
    cur.clear();
  };
  for (char c : text) {
    if (c == '.' || c == '\n') flush();
    else cur.push_back(c);
  }
  flush();
  const bool single_words = std::all_of(p.phrases.begin(), p.phrases.end(), [](const auto& s) {
    return split_words(s).size() == 1;
  });
  p.kind = single_words ? ScenarioKind::kName : ScenarioKind::kRetrieval;
  return p;
}

/// Frame-indexed prompt changes. The first entry is at frame 0 and frame
/// indices strictly increase.
class PromptSchedule {
 public:
  struct Entry {
    int frame = 0;
    PromptText prompt;
    bool operator==(const Entry&) const = default;
  };

  PromptSchedule() = default;
  explicit PromptSchedule(std::vector<Entry> entries) : entries_(std::move(entries)) { validate(); }

  static PromptSchedule constant(PromptText prompt) { return PromptSchedule({{0, std::move(prompt)}}); }

  void validate() const {
    if (entries_.empty()) return;
    if (entries_.front().frame != 0) throw ConfigError("prompt schedule must start at frame 0");
    for (std::size_t i = 1; i < entries_.size(); ++i)
      if (entries_[i].frame <= entries_[i - 1].frame)
        throw ConfigError("prompt schedule frames must strictly increase");
  }

  /// Appends a change; `frame` must exceed every existing entry.
  void push(int frame, PromptText prompt) {
    entries_.push_back({frame, std::move(prompt)});
    try {
      validate();
    } catch (...) {
      entries_.pop_back();
      throw;
    }
  }

  /// The prompt that fires exactly at `frame`, if any.
  const PromptText* fires_at(int frame) const {
    for (const auto& e : entries_)
      if (e.frame == frame) return &e.prompt;
    return nullptr;
  }

  /// The prompt in effect at `frame` (last entry at or before it).
  const PromptText* active_at(int frame) const {
    const PromptText* out = nullptr;
    for (const auto& e : entries_)
      if (e.frame <= frame) out = &e.prompt;
    return out;
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  bool empty() const noexcept { return entries_.empty(); }
  bool operator==(const PromptSchedule&) const = default;

 private:
  std::vector<Entry> entries_;
};

}  // namespace mender
