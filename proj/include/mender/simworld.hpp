#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mender/annotations.hpp"
#include "mender/attributes.hpp"
#include "mender/errors.hpp"
#include "mender/prompt.hpp"
#include "mender/rng.hpp"
#include "mender/scene.hpp"
#include "mender/track_io.hpp"
#include "mender/tracklet.hpp"

namespace mender {

struct WorldConfig {
  int frames = 60;
  int grid_w = 8;
  int grid_h = 8;
  int objects = 6;
  double noise = 0.002;  // bound on the per-frame jitter of each coordinate
  double min_size = 0.06;
  double max_size = 0.10;
  int occlusions = 1;
  int occlusion_length = 5;
  int entries = 1;
  int exits = 1;
  std::vector<int> schedule_frames{0, 20, 40};

  void validate() const {
    if (frames <= 0) throw ConfigError("world needs at least one frame");
    if (grid_w <= 0 || grid_h <= 0) throw ConfigError("grid must be positive");
    if (objects <= 0 || objects > grid_h) throw ConfigError("objects must fit one per grid row");
    if (noise < 0.0) throw ConfigError("noise bound must be non-negative");
    if (!(0.0 < min_size && min_size <= max_size && max_size < 0.5)) throw ConfigError("bad object size range");
    if (occlusions < 0 || entries < 0 || exits < 0) throw ConfigError("event counts must be non-negative");
    if (occlusions + entries + exits > objects) throw ConfigError("more events than objects");
    if (occlusions > 0 && occlusion_length >= frames) throw ConfigError("occlusion longer than the world");
    if (schedule_frames.size() > 3 || schedule_frames.empty() || schedule_frames[0] != 0)
      throw ConfigError("schedule needs one to three frames starting at 0");
    for (std::size_t i = 1; i < schedule_frames.size(); ++i)
      if (schedule_frames[i] <= schedule_frames[i - 1] || schedule_frames[i] >= frames)
        throw ConfigError("schedule frames must increase inside the world");
  }

  /// Noise-free world: no jitter, occlusion, entries or exits.
  static WorldConfig still() {
    WorldConfig c;
    c.noise = 0.0;
    c.occlusions = c.entries = c.exits = 0;
    return c;
  }
};

/// Maximum per-frame displacement along x for each action (standing, walking, running).
inline constexpr std::array<double, 3> kActionSpeed{0.0, 0.008, 0.016};

struct WorldObject {
  int track_id = 0;
  Attributes attributes;
  int spawn = 0;    // first visible frame
  int despawn = 0;  // one past the last frame
  std::vector<std::pair<int, int>> occluded;  // [begin, end) windows
  std::vector<Box> trajectory;                // boxes for frames spawn..despawn-1

  bool alive(int frame) const { return frame >= spawn && frame < despawn; }
  bool visible(int frame) const {
    if (!alive(frame)) return false;
    for (auto [b, e] : occluded)
      if (frame >= b && frame < e) return false;
    return true;
  }
  const Box& box(int frame) const { return trajectory.at(static_cast<std::size_t>(frame - spawn)); }
};

struct Scenario {
  static constexpr int kVersion = 1;
  std::uint64_t seed = 0;
  int frames = 0;
  int grid_w = 8;
  int grid_h = 8;
  std::vector<WorldObject> objects;
  PromptSchedule schedule;

  SceneFrame frame(int t) const {
    if (t < 0 || t >= frames) throw IndexError("frame " + std::to_string(t) + " outside the scenario");
    SceneFrame f{t, grid_w, grid_h, {}};
    for (const auto& o : objects)
      if (o.visible(t)) f.objects.push_back({o.track_id, o.attributes, o.box(t)});
    return f;
  }

  const WorldObject* object(int track_id) const {
    for (const auto& o : objects)
      if (o.track_id == track_id) return &o;
    return nullptr;
  }
};

namespace detail {

// Category indices ordered by object count, ties to the lower index.
inline std::vector<std::size_t> categories_by_count(const std::vector<WorldObject>& objects) {
  std::array<int, kCategories.size()> count{};
  for (const auto& o : objects) ++count[o.attributes.category];
  std::vector<std::size_t> order;
  for (std::size_t c = 0; c < count.size(); ++c)
    if (count[c] > 0) order.push_back(c);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return count[a] > count[b]; });
  return order;
}

inline PromptText names_prompt(std::initializer_list<std::size_t> cats) {
  PromptText p{ScenarioKind::kName, {}};
  for (std::size_t c : cats) p.phrases.emplace_back(kCategories[c].name);
  return p;
}

}  // namespace detail

/// Schedule over `frames`: the two most frequent categories, then the most
/// frequent one alone (a subset), then a category outside the first prompt.
inline PromptSchedule default_schedule(const std::vector<WorldObject>& objects, const std::vector<int>& frames) {
  const auto order = detail::categories_by_count(objects);
  if (order.size() < 3) throw ConfigError("default schedule needs three categories");
  std::vector<PromptSchedule::Entry> entries;
  const PromptText prompts[3] = {detail::names_prompt({order[0], order[1]}), detail::names_prompt({order[0]}),
                                 detail::names_prompt({order[2]})};
  for (std::size_t i = 0; i < frames.size(); ++i) entries.push_back({frames[i], prompts[i]});
  return PromptSchedule(std::move(entries));
}

/// Seeded world. Objects move horizontally in distinct grid rows with
/// action-dependent speed, bounce at the borders and jitter within `noise`.
/// Attribute combinations are distinct and at least three categories occur.
inline Scenario generate(std::uint64_t seed, const WorldConfig& cfg = {}) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0x5ce9e));
  Scenario s;
  s.seed = seed;
  s.frames = cfg.frames;
  s.grid_w = cfg.grid_w;
  s.grid_h = cfg.grid_h;

  std::vector<Attributes> attrs;
  const std::size_t need_categories = std::min<std::size_t>(3, static_cast<std::size_t>(cfg.objects));
  do {
    attrs.clear();
    std::set<std::size_t> cats;
    while (attrs.size() < static_cast<std::size_t>(cfg.objects)) {
      Attributes a{static_cast<std::size_t>(rng.below(kCategories.size())),
                   static_cast<std::size_t>(rng.below(kColors.size())),
                   static_cast<std::size_t>(rng.below(kActions.size()))};
      if (std::find(attrs.begin(), attrs.end(), a) != attrs.end()) continue;
      attrs.push_back(a);
      cats.insert(a.category);
    }
    if (cats.size() >= need_categories) break;
  } while (true);

  std::vector<int> rows(static_cast<std::size_t>(cfg.grid_h));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
  for (std::size_t i = rows.size(); i > 1; --i) std::swap(rows[i - 1], rows[rng.below(i)]);

  for (int k = 0; k < cfg.objects; ++k) {
    WorldObject o;
    o.track_id = k + 1;
    o.attributes = attrs[static_cast<std::size_t>(k)];
    o.spawn = 0;
    o.despawn = cfg.frames;
    const double w = rng.uniform(cfg.min_size, cfg.max_size);
    const double h = rng.uniform(cfg.min_size, cfg.max_size);
    const double lane = (rows[static_cast<std::size_t>(k)] + 0.5) / cfg.grid_h;
    const double lane_slack = 0.2 / cfg.grid_h;
    const double cy_lo = std::max(lane - lane_slack, 0.5 * h), cy_hi = std::min(lane + lane_slack, 1.0 - 0.5 * h);
    double cy = std::clamp(lane + rng.uniform(-lane_slack, lane_slack), cy_lo, cy_hi);
    double cx = rng.uniform(0.5 * w + 0.02, 1.0 - 0.5 * w - 0.02);
    const double top = kActionSpeed[o.attributes.action];
    double vx = top == 0.0 ? 0.0 : rng.uniform(0.5 * top, top) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
    for (int t = 0; t < cfg.frames; ++t) {
      o.trajectory.push_back({cx, cy, w, h});
      cx += vx + (cfg.noise > 0.0 ? rng.uniform(-cfg.noise, cfg.noise) : 0.0);
      if (cx < 0.5 * w) {
        cx = w - cx;
        vx = -vx;
      } else if (cx > 1.0 - 0.5 * w) {
        cx = 2.0 - w - cx;
        vx = -vx;
      }
      if (cfg.noise > 0.0) cy = std::clamp(cy + rng.uniform(-cfg.noise, cfg.noise), cy_lo, cy_hi);
    }
    s.objects.push_back(std::move(o));
  }

  // Events go to distinct objects in a seeded order.
  std::vector<std::size_t> pick(s.objects.size());
  for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
  for (std::size_t i = pick.size(); i > 1; --i) std::swap(pick[i - 1], pick[rng.below(i)]);
  std::size_t next = 0;
  const int half = cfg.frames / 2;
  for (int e = 0; e < cfg.entries; ++e) {
    WorldObject& o = s.objects[pick[next++]];
    o.spawn = std::max(1, static_cast<int>(rng.uniform(cfg.frames / 6.0, half)));
    o.trajectory.erase(o.trajectory.begin(), o.trajectory.begin() + o.spawn);
  }
  for (int e = 0; e < cfg.exits; ++e) {
    WorldObject& o = s.objects[pick[next++]];
    o.despawn = std::min(cfg.frames - 1, static_cast<int>(rng.uniform(half + 1, cfg.frames - cfg.frames / 12.0)));
    o.trajectory.resize(static_cast<std::size_t>(o.despawn - o.spawn));
  }
  for (int e = 0; e < cfg.occlusions; ++e) {
    WorldObject& o = s.objects[pick[next++]];
    const int lo = std::min(5, cfg.frames - cfg.occlusion_length - 1);
    const int hi = std::max(lo, cfg.frames - cfg.occlusion_length - 5);
    const int begin = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
    o.occluded.emplace_back(begin, begin + cfg.occlusion_length);
  }

  std::vector<int> frames = cfg.schedule_frames;
  s.schedule = detail::categories_by_count(s.objects).size() >= 3
                   ? default_schedule(s.objects, frames)
                   : PromptSchedule::constant(detail::names_prompt({detail::categories_by_count(s.objects)[0]}));
  return s;
}

// ---------------------------------------------------------------------------
// Ground truth and the oracle decoder

/// Visible objects satisfying the prompt at each frame.
inline TrackSet ground_truth(const Scenario& s, const PromptSchedule& schedule) {
  TrackSet out;
  for (int t = 0; t < s.frames; ++t) {
    const PromptText* prompt = schedule.active_at(t);
    if (!prompt) continue;
    const AttributeQuery q(*prompt);
    for (const auto& o : s.objects)
      if (o.visible(t) && q.matches(o.attributes))
        out.push_back({t, o.track_id, o.box(t), 1.0, kCategories[o.attributes.category].id});
  }
  return out;
}

inline TrackSet ground_truth(const Scenario& s) { return ground_truth(s, s.schedule); }

/// Exact boxes of visible objects matching the prompt, conf 1.
inline CandidateSet oracle_decode(const Scenario& s, int frame, const PromptText& prompt) {
  const AttributeQuery q(prompt);
  CandidateSet out;
  for (const auto& o : s.objects) {
    if (!o.visible(frame) || !q.matches(o.attributes)) continue;
    out.push_back({o.box(frame), 1.0, cell_index(o.box(frame), s.grid_w, s.grid_h),
                   kCategories[o.attributes.category].id});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario file

inline nlohmann::ordered_json prompt_to_json(const PromptText& p) {
  nlohmann::ordered_json j;
  j["kind"] = std::string(to_string(p.kind));
  j["phrases"] = p.phrases;
  return j;
}

inline PromptText prompt_from_json(const nlohmann::json& j, const std::string& path) {
  try {
    return {parse_scenario_kind(j.at("kind").get<std::string>()), j.at("phrases").get<std::vector<std::string>>()};
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path, e.what());
  }
}

inline nlohmann::ordered_json schedule_to_json(const PromptSchedule& schedule) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& e : schedule.entries()) {
    auto j = prompt_to_json(e.prompt);
    nlohmann::ordered_json entry;
    entry["frame"] = e.frame;
    entry["kind"] = j["kind"];
    entry["phrases"] = j["phrases"];
    arr.push_back(std::move(entry));
  }
  return arr;
}

inline PromptSchedule schedule_from_json(const nlohmann::json& arr, const std::string& path = "$.schedule") {
  if (!arr.is_array()) throw SchemaError(path, "expected an array");
  std::vector<PromptSchedule::Entry> entries;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    if (!arr[i].contains("frame")) throw SchemaError(p + ".frame", "missing required key");
    entries.push_back({arr[i]["frame"].get<int>(), prompt_from_json(arr[i], p)});
  }
  return PromptSchedule(std::move(entries));
}

inline std::string write_scenario(const Scenario& s) {
  nlohmann::ordered_json doc;
  doc["format"] = "mender-scenario";
  doc["version"] = Scenario::kVersion;
  doc["seed"] = s.seed;
  doc["frames"] = s.frames;
  doc["grid"] = {s.grid_w, s.grid_h};
  auto objs = nlohmann::ordered_json::array();
  for (const auto& o : s.objects) {
    nlohmann::ordered_json j;
    j["track_id"] = o.track_id;
    j["category"] = std::string(kCategories[o.attributes.category].name);
    j["color"] = std::string(kColors[o.attributes.color]);
    j["action"] = std::string(kActions[o.attributes.action]);
    j["spawn"] = o.spawn;
    j["despawn"] = o.despawn;
    auto occ = nlohmann::ordered_json::array();
    for (auto [b, e] : o.occluded) occ.push_back({b, e});
    j["occluded"] = occ;
    auto traj = nlohmann::ordered_json::array();
    for (const auto& b : o.trajectory) traj.push_back({b.cx, b.cy, b.w, b.h});
    j["trajectory"] = traj;
    objs.push_back(std::move(j));
  }
  doc["objects"] = objs;
  doc["schedule"] = schedule_to_json(s.schedule);
  return doc.dump(1) + "\n";
}

inline Scenario read_scenario_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("$", e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != "mender-scenario") throw SchemaError("$.format", "not a scenario file");
  if (doc.value("version", 0) != Scenario::kVersion)
    throw SchemaError("$.version", "unsupported version " + doc.value("version", nlohmann::json()).dump());
  Scenario s;
  try {
    s.seed = doc.at("seed").get<std::uint64_t>();
    s.frames = doc.at("frames").get<int>();
    s.grid_w = doc.at("grid").at(0).get<int>();
    s.grid_h = doc.at("grid").at(1).get<int>();
    const auto& objs = doc.at("objects");
    for (std::size_t i = 0; i < objs.size(); ++i) {
      const auto& j = objs[i];
      const std::string path = "$.objects[" + std::to_string(i) + "]";
      WorldObject o;
      o.track_id = j.at("track_id").get<int>();
      const auto cat = category_index_of_word(j.at("category").get<std::string>());
      const auto col = color_index_of_word(j.at("color").get<std::string>());
      const auto act = action_index_of_word(j.at("action").get<std::string>());
      if (!cat || !col || !act) throw SchemaError(path, "unknown attribute value");
      o.attributes = {*cat, *col, *act};
      o.spawn = j.at("spawn").get<int>();
      o.despawn = j.at("despawn").get<int>();
      if (o.spawn >= o.despawn) throw SchemaError(path, "spawn must precede despawn");
      for (const auto& w : j.at("occluded")) o.occluded.emplace_back(w.at(0).get<int>(), w.at(1).get<int>());
      for (const auto& b : j.at("trajectory"))
        o.trajectory.push_back({b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()});
      if (o.trajectory.size() != static_cast<std::size_t>(o.despawn - o.spawn))
        throw SchemaError(path + ".trajectory", "length does not match the lifespan");
      s.objects.push_back(std::move(o));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("$", e.what());
  }
  s.schedule = schedule_from_json(doc.at("schedule"));
  return s;
}

inline Scenario read_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return read_scenario_text(buf.str());
}

// ---------------------------------------------------------------------------
// GroOT export

inline constexpr int kExportImageSize = 640;

/// Categories with synonyms and definitions, per-frame annotations with
/// (appearance, action) captions, and per-segment retrieval prompts on the
/// first image of every schedule segment.
inline AnnotationSet export_groot(const Scenario& s, int video_id = 1) {
  AnnotationSet set;
  const double W = kExportImageSize, H = kExportImageSize;
  std::map<std::size_t, long> instances, images_with;
  std::map<std::size_t, std::set<int>> cat_frames;
  const std::string video = "simworld-" + std::to_string(s.seed);
  for (int t = 0; t < s.frames; ++t) {
    ImageEntry im;
    im.id = t + 1;
    im.frame_index = t;
    im.video_id = video_id;
    char name[64];
    std::snprintf(name, sizeof name, "%s/%06d.jpg", video.c_str(), t);
    im.file_name = name;
    im.width = kExportImageSize;
    im.height = kExportImageSize;
    im.video = video;
    set.images.push_back(im);
  }
  int ann_id = 1;
  for (int t = 0; t < s.frames; ++t) {
    for (const auto& o : s.objects) {
      if (!o.visible(t)) continue;
      const Box& b = o.box(t);
      Annotation a;
      a.id = ann_id++;
      a.image_id = t + 1;
      a.category_id = kCategories[o.attributes.category].id;
      a.track_id = o.track_id;
      a.video_id = video_id;
      a.bbox = {b.left() * W, b.top() * H, b.w * W, b.h * H};
      a.area = a.bbox[2] * a.bbox[3];
      a.scale_category = *a.area < 32.0 * 32.0 ? "small" : (*a.area < 96.0 * 96.0 ? "medium" : "large");
      a.segmentation = nlohmann::ordered_json::array(
          {{a.bbox[0], a.bbox[1], a.bbox[0] + a.bbox[2], a.bbox[1], a.bbox[0] + a.bbox[2], a.bbox[1] + a.bbox[3],
            a.bbox[0], a.bbox[1] + a.bbox[3]}});
      a.iscrowd = 0;
      a.captions = {appearance_caption(o.attributes), action_caption(o.attributes)};
      set.annotations.push_back(std::move(a));
      ++instances[o.attributes.category];
      cat_frames[o.attributes.category].insert(t);
    }
  }
  for (std::size_t c = 0; c < kCategories.size(); ++c) {
    Category cat;
    cat.frequency = instances[c] > 0 ? "f" : "r";
    cat.id = kCategories[c].id;
    cat.synset = std::string(kCategories[c].name) + ".n.01";
    cat.image_count = static_cast<long>(cat_frames[c].size());
    cat.instance_count = instances[c];
    cat.name = std::string(kCategories[c].name);
    for (auto syn : kCategories[c].synonyms) cat.synonyms.emplace_back(syn);
    cat.def = std::string(kCategories[c].definition);
    set.categories.push_back(std::move(cat));
  }
  // One retrieval prompt per schedule segment, chosen over that segment's records.
  const auto& entries = s.schedule.entries();
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const int begin = entries[e].frame;
    const int end = e + 1 < entries.size() ? entries[e + 1].frame : s.frames;
    AnnotationSet window;
    window.categories = set.categories;
    window.images = set.images;
    for (const auto& a : set.annotations) {
      const int f = a.image_id - 1;
      if (f >= begin && f < end) window.annotations.push_back(a);
    }
    if (window.annotations.empty()) continue;
    set.images[static_cast<std::size_t>(begin)].prompt = generate_retrieval_prompt(window, video_id).prompt;
  }
  check_integrity(set);
  return set;
}

/// Annotation records of one video as normalised track records.
inline TrackSet tracks_from_annotations(const AnnotationSet& ann, int video_id) {
  TrackSet out;
  for (const auto& a : ann.annotations) {
    if (a.video_id != video_id) continue;
    const ImageEntry* im = ann.image(a.image_id);
    const double W = im && im->width ? *im->width : 1.0;
    const double H = im && im->height ? *im->height : 1.0;
    out.push_back({im ? im->frame_index : 0, a.track_id,
                   {(a.bbox[0] + 0.5 * a.bbox[2]) / W, (a.bbox[1] + 0.5 * a.bbox[3]) / H, a.bbox[2] / W, a.bbox[3] / H},
                   1.0, a.category_id});
  }
  return out;
}

}  // namespace mender
