#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mender/prompt.hpp"

namespace mender {

// Attribute vocabulary of the synthetic world.

struct CategoryInfo {
  int id;
  std::string_view name;
  std::string_view definition;
  std::array<std::string_view, 4> synonyms;
};

inline constexpr std::array<CategoryInfo, 4> kCategories{{
    {1, "person", "a human being", {"man", "woman", "pedestrian", "child"}},
    {2, "car", "a motor vehicle with four wheels", {"auto", "automobile", "sedan", "vehicle"}},
    {3, "bicycle", "a vehicle with two wheels moved by pedals", {"bike", "cycle", "pushbike", "velocipede"}},
    {4, "dog", "a domestic animal kept as a pet", {"puppy", "hound", "doggy", "pooch"}},
}};

inline constexpr std::array<std::string_view, 5> kColors{"red", "blue", "green", "white", "black"};

// Actions double as motion regimes: standing objects do not move, running
// objects move fastest.
inline constexpr std::array<std::string_view, 3> kActions{"standing", "walking", "running"};

inline constexpr std::size_t kAttributeCount = kCategories.size() + kColors.size() + kActions.size();

inline std::optional<std::size_t> category_index_of_word(std::string_view word) {
  for (std::size_t i = 0; i < kCategories.size(); ++i) {
    if (kCategories[i].name == word) return i;
    for (auto s : kCategories[i].synonyms)
      if (s == word) return i;
  }
  if (word == "people" || word == "human") return 0;
  if (word == "cars") return 1;
  if (word == "bicycles" || word == "bikes") return 2;
  if (word == "dogs") return 3;
  return std::nullopt;
}

inline std::optional<std::size_t> category_index_of_id(int id) {
  for (std::size_t i = 0; i < kCategories.size(); ++i)
    if (kCategories[i].id == id) return i;
  return std::nullopt;
}

inline std::optional<std::size_t> color_index_of_word(std::string_view word) {
  for (std::size_t i = 0; i < kColors.size(); ++i)
    if (kColors[i] == word) return i;
  return std::nullopt;
}

inline std::optional<std::size_t> action_index_of_word(std::string_view word) {
  for (std::size_t i = 0; i < kActions.size(); ++i)
    if (kActions[i] == word) return i;
  return std::nullopt;
}

/// Attributes of one world object.
struct Attributes {
  std::size_t category = 0;
  std::size_t color = 0;
  std::size_t action = 0;
  bool operator==(const Attributes&) const = default;
};

/// Conjunction of mentioned attributes; unmentioned ones are unconstrained.
struct AttributeConstraint {
  std::optional<std::size_t> category;
  std::optional<std::size_t> color;
  std::optional<std::size_t> action;
  bool contradictory = false;  // two different values for one attribute

  bool constrains_anything() const noexcept {
    return category.has_value() || color.has_value() || action.has_value();
  }

  bool matches(const Attributes& a) const noexcept {
    if (contradictory || !constrains_anything()) return false;
    if (category && *category != a.category) return false;
    if (color && *color != a.color) return false;
    if (action && *action != a.action) return false;
    return true;
  }
};

inline AttributeConstraint parse_constraint(std::string_view phrase) {
  AttributeConstraint c;
  const std::string lowered = lowercase(trim(phrase));
  for (std::size_t i = 0; i < kCategories.size(); ++i) {
    if (kCategories[i].definition == lowered) {
      c.category = i;
      return c;
    }
  }
  auto set = [&c](std::optional<std::size_t>& slot, std::size_t value) {
    if (slot && *slot != value) c.contradictory = true;
    slot = value;
  };
  for (const auto& w : split_words(lowered)) {
    if (auto k = category_index_of_word(w)) set(c.category, *k);
    else if (auto col = color_index_of_word(w)) set(c.color, *col);
    else if (auto act = action_index_of_word(w)) set(c.action, *act);
  }
  return c;
}

/// Disjunction over a prompt's phrases.
struct AttributeQuery {
  std::vector<AttributeConstraint> phrases;

  explicit AttributeQuery(const PromptText& prompt) {
    for (const auto& p : prompt.phrases) phrases.push_back(parse_constraint(p));
  }

  bool matches(const Attributes& a) const noexcept {
    for (const auto& c : phrases)
      if (c.matches(a)) return true;
    return false;
  }
};

inline std::string appearance_caption(const Attributes& a) {
  return "a " + std::string(kColors[a.color]) + " " + std::string(kCategories[a.category].name);
}

inline std::string action_caption(const Attributes& a) {
  return std::string(kCategories[a.category].name) + " " + std::string(kActions[a.action]);
}

}  // namespace mender
