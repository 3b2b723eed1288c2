#include <gtest/gtest.h>

#include <map>

#include "mender/metrics.hpp"
#include "mender/simworld.hpp"

using namespace mender;

namespace {

PromptText phrase(std::string p) { return {ScenarioKind::kRetrieval, {std::move(p)}}; }

Scenario hand_scene() {
  Scenario s;
  s.frames = 1;
  auto add = [&](int id, Attributes a, double cy) {
    WorldObject o;
    o.track_id = id;
    o.attributes = a;
    o.despawn = 1;
    o.trajectory = {Box{0.5, cy, 0.08, 0.08}};
    s.objects.push_back(o);
  };
  add(1, {1, 0, 0}, 0.1);  // red car
  add(2, {1, 1, 1}, 0.3);  // blue car
  add(3, {0, 0, 2}, 0.5);  // red person
  s.schedule = PromptSchedule::constant({ScenarioKind::kName, {"car"}});
  return s;
}

}  // namespace

TEST(Generate, SameSeedSameWorld) {
  EXPECT_EQ(write_scenario(generate(9)), write_scenario(generate(9)));
  EXPECT_NE(write_scenario(generate(9)), write_scenario(generate(10)));
}

TEST(Generate, InvariantsHoldAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const WorldConfig cfg;
    const Scenario s = generate(seed, cfg);
    std::map<std::size_t, int> cats;
    for (const auto& o : s.objects) {
      ++cats[o.attributes.category];
      EXPECT_LT(o.spawn, o.despawn);
      ASSERT_EQ(o.trajectory.size(), static_cast<std::size_t>(o.despawn - o.spawn));
      for (int t = o.spawn; t < o.despawn; ++t) {
        const Box& b = o.box(t);
        EXPECT_GE(b.left(), 0.0);
        EXPECT_LE(b.right(), 1.0);
        EXPECT_GE(b.top(), 0.0);
        EXPECT_LE(b.bottom(), 1.0);
        if (t > o.spawn)
          EXPECT_LE(std::abs(b.cx - o.box(t - 1).cx), kActionSpeed[2] + 2 * cfg.noise + 1e-12);
      }
    }
    EXPECT_GE(cats.size(), 3u);
    EXPECT_EQ(s.schedule.entries().size(), 3u);
  }
}

TEST(Generate, StillWorldKeepsEveryObjectVisible) {
  const Scenario s = generate(3, WorldConfig::still());
  for (int t = 0; t < s.frames; ++t) EXPECT_EQ(s.frame(t).objects.size(), s.objects.size());
  for (const auto& o : s.objects) {
    EXPECT_EQ(o.box(0).cy, o.box(s.frames - 1).cy);
    if (o.attributes.action == 0) EXPECT_EQ(o.box(0), o.box(s.frames - 1));
  }
}

TEST(Generate, OcclusionWindowIsShorterThanRetention) {
  const Scenario s = generate(4);
  int windows = 0;
  for (const auto& o : s.objects)
    for (auto [b, e] : o.occluded) {
      ++windows;
      EXPECT_EQ(e - b, 5);
      EXPECT_FALSE(o.visible(b));
      EXPECT_TRUE(o.visible(e));
    }
  EXPECT_EQ(windows, 1);
}

TEST(Generate, BadConfigThrows) {
  WorldConfig cfg;
  cfg.objects = 9;
  EXPECT_THROW(generate(0, cfg), ConfigError);
  cfg = {};
  cfg.schedule_frames = {1};
  EXPECT_THROW(generate(0, cfg), ConfigError);
}

TEST(DefaultSchedule, SubsetThenDisjoint) {
  const Scenario s = generate(8);
  const auto& e = s.schedule.entries();
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e[0].prompt.phrases.size(), 2u);
  EXPECT_EQ(e[1].prompt.phrases, std::vector<std::string>{e[0].prompt.phrases[0]});
  for (const auto& w : e[2].prompt.phrases)
    EXPECT_EQ(std::count(e[0].prompt.phrases.begin(), e[0].prompt.phrases.end(), w), 0);
}

TEST(OracleDecode, AttributeConjunction) {
  const Scenario s = hand_scene();
  const auto red_car = oracle_decode(s, 0, phrase("red car"));
  ASSERT_EQ(red_car.size(), 1u);
  EXPECT_EQ(red_car[0].box.cy, 0.1);
  EXPECT_EQ(red_car[0].conf, 1.0);
  EXPECT_EQ(red_car[0].label, 2);
  EXPECT_EQ(oracle_decode(s, 0, phrase("car")).size(), 2u);
  EXPECT_EQ(oracle_decode(s, 0, phrase("red")).size(), 2u);
  EXPECT_EQ(oracle_decode(s, 0, phrase("person running")).size(), 1u);
  EXPECT_TRUE(oracle_decode(s, 0, phrase("dog")).empty());
  EXPECT_TRUE(oracle_decode(s, 0, phrase("car dog")).empty());
  EXPECT_EQ(oracle_decode(s, 0, {ScenarioKind::kName, {"car", "person"}}).size(), 3u);
  EXPECT_EQ(oracle_decode(s, 0, phrase("a four-wheeled motor vehicle")).size(), 2u);
}

TEST(OracleDecode, SubsetOfVisibleGroundTruth) {
  const Scenario s = generate(12);
  const PromptText all{ScenarioKind::kName, {"person", "car", "bicycle", "dog"}};
  for (int t = 0; t < s.frames; ++t) {
    const auto c = oracle_decode(s, t, all);
    EXPECT_EQ(c.size(), s.frame(t).objects.size());
    for (const auto& cand : oracle_decode(s, t, s.schedule.entries()[0].prompt)) {
      bool found = false;
      for (const auto& o : s.frame(t).objects) found = found || o.box == cand.box;
      EXPECT_TRUE(found);
    }
  }
}

TEST(Export, CategoryCountsAndSelfEvaluation) {
  const Scenario s = generate(0);
  const AnnotationSet a = parse_annotations(write_annotations(export_groot(s)));
  std::map<int, long> objects;
  for (const auto& o : s.objects) ++objects[kCategories[o.attributes.category].id];
  for (const auto& c : a.categories) {
    std::set<int> tracks;
    for (const auto& ann : a.annotations)
      if (ann.category_id == c.id) tracks.insert(ann.track_id);
    EXPECT_EQ(static_cast<long>(tracks.size()), objects[c.id]) << c.name;
  }
  const TrackSet gt = tracks_from_annotations(a, 1);
  const MetricReport r = summary(gt, gt);
  EXPECT_EQ(r.ca_mota, 1.0);
  EXPECT_EQ(r.ca_idf1, 1.0);
  EXPECT_EQ(r.map50, 1.0);
}

TEST(Export, CaptionsCarryAppearanceThenAction) {
  const Scenario s = hand_scene();
  const AnnotationSet a = export_groot(s);
  ASSERT_EQ(a.annotations.size(), 3u);
  EXPECT_EQ(a.annotations[0].captions, (std::vector<std::string>{"a red car", "car standing"}));
  EXPECT_EQ(a.annotations[2].captions, (std::vector<std::string>{"a red person", "person running"}));
}
