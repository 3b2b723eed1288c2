#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mender/errors.hpp"
#include "mender/prompt.hpp"
#include "mender/rng.hpp"

namespace mender {

using ojson = nlohmann::ordered_json;

// GroOT annotation documents (COCO/TAO layout plus `captions', `synonyms',
// `def' and per-image `prompt'). Every entry keeps its source object so unknown
// keys and key order survive a rewrite.

struct Category {
  int id = 0;
  std::string name;
  std::optional<std::string> frequency;
  std::optional<std::string> synset;
  std::optional<long> image_count;
  std::optional<long> instance_count;
  std::vector<std::string> synonyms;
  std::optional<std::string> def;
  ojson source = ojson::object();
};

struct Annotation {
  int id = 0;
  int image_id = 0;
  int category_id = 0;
  int track_id = 0;
  int video_id = 0;
  std::array<double, 4> bbox{};  // x, y, width, height
  std::optional<std::string> scale_category;
  std::optional<ojson> segmentation;
  std::optional<double> area;
  std::optional<int> iscrowd;
  std::vector<std::string> captions;  // appearance first, then action
  ojson source = ojson::object();

  std::optional<std::string> appearance() const {
    return captions.empty() ? std::nullopt : std::optional<std::string>(captions[0]);
  }
  std::optional<std::string> action() const {
    return captions.size() < 2 ? std::nullopt : std::optional<std::string>(captions[1]);
  }
};

struct ImageEntry {
  int id = 0;
  int frame_index = 0;
  int video_id = 0;
  std::optional<std::string> file_name;
  std::optional<int> width;
  std::optional<int> height;
  std::optional<std::string> video;
  std::optional<std::string> prompt;  // absent or null carries the last prompt forward
  ojson source = ojson::object();
};

struct AnnotationSet {
  std::vector<Category> categories;
  std::vector<Annotation> annotations;
  std::vector<ImageEntry> images;
  ojson source = ojson::object();

  const Category* category(int id) const {
    for (const auto& c : categories)
      if (c.id == id) return &c;
    return nullptr;
  }
  const ImageEntry* image(int id) const {
    for (const auto& i : images)
      if (i.id == id) return &i;
    return nullptr;
  }
};

namespace detail {

inline const ojson& require(const ojson& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) throw SchemaError(path, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(path + "." + key, "missing required key");
  return *it;
}

template <class T>
T get_as(const ojson& v, const std::string& path) {
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path, std::string("wrong type: ") + e.what());
  }
}

template <class T>
std::optional<T> optional_key(const ojson& obj, const std::string& key, const std::string& path) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  return get_as<T>(*it, path + "." + key);
}

template <class T>
T required_key(const ojson& obj, const std::string& key, const std::string& path) {
  return get_as<T>(require(obj, key, path), path + "." + key);
}

template <class T>
void put_optional(ojson& obj, const std::string& key, const std::optional<T>& v) {
  if (v) obj[key] = *v;
  else if (obj.contains(key) && !obj[key].is_null()) obj.erase(key);
}

}  // namespace detail

inline Category parse_category(const ojson& j, const std::string& path) {
  using namespace detail;
  Category c;
  c.source = j;
  c.id = required_key<int>(j, "id", path);
  c.name = required_key<std::string>(j, "name", path);
  c.frequency = optional_key<std::string>(j, "frequency", path);
  c.synset = optional_key<std::string>(j, "synset", path);
  c.image_count = optional_key<long>(j, "image_count", path);
  c.instance_count = optional_key<long>(j, "instance_count", path);
  c.synonyms = optional_key<std::vector<std::string>>(j, "synonyms", path).value_or(std::vector<std::string>{});
  c.def = optional_key<std::string>(j, "def", path);
  return c;
}

inline Annotation parse_annotation(const ojson& j, const std::string& path) {
  using namespace detail;
  Annotation a;
  a.source = j;
  a.id = required_key<int>(j, "id", path);
  a.image_id = required_key<int>(j, "image_id", path);
  a.category_id = required_key<int>(j, "category_id", path);
  a.track_id = required_key<int>(j, "track_id", path);
  a.video_id = required_key<int>(j, "video_id", path);
  const auto bbox = required_key<std::vector<double>>(j, "bbox", path);
  if (bbox.size() != 4) throw SchemaError(path + ".bbox", "expected [x, y, width, height]");
  if (bbox[2] < 0.0 || bbox[3] < 0.0) throw SchemaError(path + ".bbox", "negative width or height");
  std::copy(bbox.begin(), bbox.end(), a.bbox.begin());
  a.scale_category = optional_key<std::string>(j, "scale_category", path);
  if (j.contains("segmentation") && !j["segmentation"].is_null()) a.segmentation = j["segmentation"];
  a.area = optional_key<double>(j, "area", path);
  a.iscrowd = optional_key<int>(j, "iscrowd", path);
  if (a.iscrowd && *a.iscrowd != 0 && *a.iscrowd != 1) throw SchemaError(path + ".iscrowd", "must be 0 or 1");
  a.captions = optional_key<std::vector<std::string>>(j, "captions", path).value_or(std::vector<std::string>{});
  return a;
}

inline ImageEntry parse_image(const ojson& j, const std::string& path) {
  using namespace detail;
  ImageEntry im;
  im.source = j;
  im.id = required_key<int>(j, "id", path);
  im.frame_index = required_key<int>(j, "frame_index", path);
  im.video_id = required_key<int>(j, "video_id", path);
  im.file_name = optional_key<std::string>(j, "file_name", path);
  im.width = optional_key<int>(j, "width", path);
  im.height = optional_key<int>(j, "height", path);
  im.video = optional_key<std::string>(j, "video", path);
  im.prompt = optional_key<std::string>(j, "prompt", path);
  return im;
}

/// Duplicate ids and dangling image/category references raise IntegrityError.
inline void check_integrity(const AnnotationSet& set) {
  std::set<int> cats, imgs, anns;
  for (const auto& c : set.categories)
    if (!cats.insert(c.id).second) throw IntegrityError("duplicate category id " + std::to_string(c.id));
  for (const auto& i : set.images)
    if (!imgs.insert(i.id).second) throw IntegrityError("duplicate image id " + std::to_string(i.id));
  for (std::size_t k = 0; k < set.annotations.size(); ++k) {
    const auto& a = set.annotations[k];
    const std::string where = "annotations[" + std::to_string(k) + "]";
    if (!anns.insert(a.id).second) throw IntegrityError(where + ": duplicate annotation id " + std::to_string(a.id));
    if (!imgs.count(a.image_id)) throw IntegrityError(where + ": unknown image_id " + std::to_string(a.image_id));
    if (!cats.count(a.category_id))
      throw IntegrityError(where + ": unknown category_id " + std::to_string(a.category_id));
    if (set.image(a.image_id)->video_id != a.video_id)
      throw IntegrityError(where + ": video_id disagrees with its image");
  }
}

inline AnnotationSet parse_annotations(const ojson& doc) {
  if (!doc.is_object()) throw SchemaError("$", "expected an object");
  AnnotationSet set;
  set.source = doc;
  auto list = [&](const char* key) -> const ojson& {
    const ojson& v = detail::require(doc, key, "$");
    if (!v.is_array()) throw SchemaError(std::string("$.") + key, "expected an array");
    return v;
  };
  const ojson& cats = list("categories");
  for (std::size_t i = 0; i < cats.size(); ++i)
    set.categories.push_back(parse_category(cats[i], "$.categories[" + std::to_string(i) + "]"));
  const ojson& imgs = list("images");
  for (std::size_t i = 0; i < imgs.size(); ++i)
    set.images.push_back(parse_image(imgs[i], "$.images[" + std::to_string(i) + "]"));
  const ojson& anns = list("annotations");
  for (std::size_t i = 0; i < anns.size(); ++i)
    set.annotations.push_back(parse_annotation(anns[i], "$.annotations[" + std::to_string(i) + "]"));
  check_integrity(set);
  return set;
}

inline AnnotationSet parse_annotations(const std::string& text) {
  ojson doc;
  try {
    doc = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("$", e.what());
  }
  return parse_annotations(doc);
}

inline ojson to_json(const Category& c) {
  ojson j = c.source.is_object() ? c.source : ojson::object();
  detail::put_optional(j, "frequency", c.frequency);
  j["id"] = c.id;
  detail::put_optional(j, "synset", c.synset);
  detail::put_optional(j, "image_count", c.image_count);
  detail::put_optional(j, "instance_count", c.instance_count);
  j["name"] = c.name;
  if (!c.synonyms.empty() || j.contains("synonyms")) j["synonyms"] = c.synonyms;
  detail::put_optional(j, "def", c.def);
  return j;
}

inline ojson to_json(const Annotation& a) {
  ojson j = a.source.is_object() ? a.source : ojson::object();
  j["id"] = a.id;
  j["image_id"] = a.image_id;
  j["category_id"] = a.category_id;
  detail::put_optional(j, "scale_category", a.scale_category);
  j["track_id"] = a.track_id;
  j["video_id"] = a.video_id;
  detail::put_optional(j, "segmentation", a.segmentation);
  detail::put_optional(j, "area", a.area);
  j["bbox"] = a.bbox;
  detail::put_optional(j, "iscrowd", a.iscrowd);
  if (!a.captions.empty() || j.contains("captions")) j["captions"] = a.captions;
  return j;
}

inline ojson to_json(const ImageEntry& im) {
  ojson j = im.source.is_object() ? im.source : ojson::object();
  j["id"] = im.id;
  j["frame_index"] = im.frame_index;
  j["video_id"] = im.video_id;
  detail::put_optional(j, "file_name", im.file_name);
  detail::put_optional(j, "width", im.width);
  detail::put_optional(j, "height", im.height);
  detail::put_optional(j, "video", im.video);
  detail::put_optional(j, "prompt", im.prompt);
  return j;
}

inline ojson to_json(const AnnotationSet& set) {
  ojson doc = set.source.is_object() ? set.source : ojson::object();
  ojson cats = ojson::array(), imgs = ojson::array(), anns = ojson::array();
  for (const auto& c : set.categories) cats.push_back(to_json(c));
  for (const auto& i : set.images) imgs.push_back(to_json(i));
  for (const auto& a : set.annotations) anns.push_back(to_json(a));
  doc["categories"] = std::move(cats);
  doc["annotations"] = std::move(anns);
  doc["images"] = std::move(imgs);
  return doc;
}

/// Two-space indented UTF-8 JSON.
inline std::string write_annotations(const AnnotationSet& set) { return to_json(set).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Prompt construction

struct PromptOptions {
  std::uint64_t seed = 0;
  std::size_t synonyms_per_category = 1;
};

namespace detail {

inline void push_unique(PromptText& p, const std::string& phrase) {
  if (phrase.empty()) return;
  if (std::find(p.phrases.begin(), p.phrases.end(), phrase) == p.phrases.end()) p.phrases.push_back(phrase);
}

// Category ids in order of first appearance among the video's annotations.
inline std::vector<int> video_categories(const AnnotationSet& ann, int video) {
  std::vector<int> ids;
  for (const auto& a : ann.annotations)
    if (a.video_id == video && std::find(ids.begin(), ids.end(), a.category_id) == ids.end())
      ids.push_back(a.category_id);
  return ids;
}

// k distinct entries drawn with a seeded generator, kept in list order.
inline std::vector<std::string> draw_synonyms(const std::vector<std::string>& list, std::size_t k, Rng& rng) {
  if (k >= list.size()) return list;
  std::vector<std::size_t> idx(list.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  std::vector<std::string> out;
  for (std::size_t i : idx) out.push_back(list[i]);
  return out;
}

}  // namespace detail

/// The request prompt of one scenario for (video, frame).
inline PromptText build_prompt(ScenarioKind kind, const AnnotationSet& ann, int video, int frame,
                               const PromptOptions& opt = {}) {
  PromptText p;
  p.kind = kind;
  switch (kind) {
    case ScenarioKind::kName:
      for (int id : detail::video_categories(ann, video)) detail::push_unique(p, ann.category(id)->name);
      break;
    case ScenarioKind::kSynonym:
      for (int id : detail::video_categories(ann, video)) {
        const Category* c = ann.category(id);
        if (c->synonyms.empty()) throw ScenarioUnavailableError("category '" + c->name + "' has no synonyms");
        Rng rng(mix_seed(opt.seed, static_cast<std::uint64_t>(id)));
        for (const auto& s : detail::draw_synonyms(c->synonyms, opt.synonyms_per_category, rng))
          detail::push_unique(p, s);
      }
      break;
    case ScenarioKind::kDefinition:
      for (int id : detail::video_categories(ann, video)) {
        const Category* c = ann.category(id);
        if (!c->def) throw ScenarioUnavailableError("category '" + c->name + "' has no definition");
        detail::push_unique(p, *c->def);
      }
      break;
    case ScenarioKind::kCaption:
      for (const auto& a : ann.annotations)
        if (a.video_id == video)
          for (const auto& cap : a.captions) detail::push_unique(p, cap);
      break;
    case ScenarioKind::kRetrieval: {
      const ImageEntry* best = nullptr;
      for (const auto& im : ann.images) {
        if (im.video_id != video || im.frame_index > frame || !im.prompt) continue;
        if (!best || im.frame_index > best->frame_index) best = &im;
      }
      if (!best) {
        throw ScenarioUnavailableError("no retrieval prompt at or before frame " + std::to_string(frame) +
                                       " of video " + std::to_string(video));
      }
      for (const auto& phrase : parse_free_prompt(*best->prompt).phrases) detail::push_unique(p, phrase);
      break;
    }
  }
  if (p.empty()) throw ScenarioUnavailableError("scenario '" + std::string(to_string(kind)) + "' yields no prompt");
  return p;
}

struct RetrievalSelection {
  std::string prompt;
  int category_id = 0;
  std::vector<int> track_ids;
};

/// Step 1: the category with the most annotation records in the video (ties to
/// the lowest id). Step 2: its track with the longest frame span (ties to the
/// lowest track_id).
inline RetrievalSelection generate_retrieval_prompt(const AnnotationSet& ann, int video) {
  std::map<int, long> per_category;
  std::map<int, std::pair<int, int>> span;  // track -> (first, last) frame
  std::map<int, int> track_category;
  for (const auto& a : ann.annotations) {
    if (a.video_id != video) continue;
    ++per_category[a.category_id];
    const ImageEntry* im = ann.image(a.image_id);
    const int f = im ? im->frame_index : 0;
    auto [it, fresh] = span.try_emplace(a.track_id, f, f);
    if (!fresh) {
      it->second.first = std::min(it->second.first, f);
      it->second.second = std::max(it->second.second, f);
    }
    track_category[a.track_id] = a.category_id;
  }
  if (per_category.empty()) throw ScenarioUnavailableError("video " + std::to_string(video) + " has no annotations");
  int best_cat = per_category.begin()->first;
  for (auto [id, n] : per_category)
    if (n > per_category[best_cat]) best_cat = id;
  int best_track = -1, best_len = -1;
  for (auto [track, s] : span) {
    if (track_category[track] != best_cat) continue;
    const int len = s.second - s.first + 1;
    if (len > best_len) {
      best_len = len;
      best_track = track;
    }
  }
  RetrievalSelection out;
  out.category_id = best_cat;
  out.track_ids = {best_track};
  const Category* c = ann.category(best_cat);
  out.prompt = (c ? c->name : std::to_string(best_cat)) + " appearing longest in the scene";
  return out;
}

}  // namespace mender
