#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "hrhf/dataset.hpp"

using namespace hrhf;

namespace {

SceneConfig small_cfg() {
  SceneConfig cfg;
  cfg.canvas = 48;
  return cfg;
}

}  // namespace

TEST_CASE("empty subset gives an all-background scene") {
  Rng rng(1);
  const Scene s = gen_scene(rng, {}, small_cfg());
  for (int v : s.labels.idx) CHECK(v == 0);
  CHECK(s.instances.empty());
}

TEST_CASE("circle of radius 8: rasterized area within +/-8 of pi*64") {
  Scene s;
  s.image = Tensor::zeros({64, 64, 3});
  s.labels = LabelMap::filled(64, 64, 0);
  paint_instance(s, 1, 32.0, 32.0, 8.0, 0.0, nullptr);
  int count = 0;
  for (int v : s.labels.idx) count += v == 1 ? 1 : 0;
  const double expect = 3.14159265358979 * 64.0;
  CHECK(std::abs(count - expect) <= 8.0);
}

TEST_CASE("same seed twice gives bit-identical scenes") {
  Rng a(7), b(7);
  const Scene s1 = gen_scene(a, {1, 3}, small_cfg());
  const Scene s2 = gen_scene(b, {1, 3}, small_cfg());
  CHECK(bit_equal(s1.image, s2.image));
  CHECK(s1.labels == s2.labels);
}

TEST_CASE("every labeled pixel's class appears in the instance list") {
  Rng rng(9);
  const Scene s = gen_scene(rng, {2, 4, 5}, small_cfg());
  std::set<int> listed;
  for (const auto& in : s.instances) listed.insert(in.class_id);
  for (int v : s.labels.idx)
    if (v != 0) CHECK(listed.count(v) == 1);
}

TEST_CASE("split semantics: pure-old scene goes to step 0 in both modes") {
  Rng rng(11);
  SceneConfig cfg = small_cfg();
  std::vector<Scene> scenes{gen_scene(rng, {1}, cfg)};
  for (SplitMode mode : {SplitMode::Disjoint, SplitMode::Overlapped}) {
    StepSpec spec{{{1, 2}, {3}}, mode};
    const auto splits = split_incremental(scenes, spec);
    CHECK(splits[0] == std::vector<int>{0});
    CHECK(splits[1].empty());
  }
}

TEST_CASE("split semantics: mixed old+new scene") {
  Rng rng(13);
  SceneConfig cfg = small_cfg();
  // class 1 in step 0, class 3 in step 1
  std::vector<Scene> scenes{gen_scene(rng, {1, 3}, cfg)};
  {
    StepSpec spec{{{1, 2}, {3}}, SplitMode::Disjoint};
    const auto splits = split_incremental(scenes, spec);
    CHECK(splits[0].empty());
    CHECK(splits[1] == std::vector<int>{0});
  }
  {
    StepSpec spec{{{1, 2}, {3}}, SplitMode::Overlapped};
    const auto splits = split_incremental(scenes, spec);
    CHECK(splits[0] == std::vector<int>{0});
    CHECK(splits[1] == std::vector<int>{0});
  }
}

TEST_CASE("disjoint step sets are pairwise image-disjoint") {
  Rng rng(17);
  SceneConfig cfg = small_cfg();
  const std::vector<int> universe{1, 2, 3, 4, 5, 6};
  const auto scenes = gen_scenes(rng, 60, universe, cfg);
  StepSpec spec{{{1, 2, 3}, {4}, {5}, {6}}, SplitMode::Disjoint};
  const auto splits = split_incremental(scenes, spec);
  std::set<int> seen;
  for (const auto& step : splits)
    for (int idx : step) CHECK(seen.insert(idx).second);
}

TEST_CASE("scene with a class outside the universe is rejected") {
  Rng rng(19);
  std::vector<Scene> scenes{gen_scene(rng, {5}, small_cfg())};
  StepSpec spec{{{1, 2}, {3}}, SplitMode::Disjoint};
  CHECK_THROWS_AS(split_incremental(scenes, spec), Error);
}

TEST_CASE("relabel keeps step classes and backgrounds the rest") {
  Rng rng(23);
  const Scene s = gen_scene(rng, {1, 3}, small_cfg());
  StepSpec spec{{{1, 2}, {3}}, SplitMode::Disjoint};

  const LabelMap step1 = relabel_for_step(s, spec, 1);
  int bg_brute = 0;
  for (size_t i = 0; i < s.labels.idx.size(); ++i) {
    const int orig = s.labels.idx[i];
    if (orig == 3) {
      CHECK(step1.idx[i] == spec.cumulative_index(3));
    } else {
      CHECK(step1.idx[i] == 0);
      ++bg_brute;
    }
  }
  int bg_count = 0;
  for (int v : step1.idx) bg_count += v == 0 ? 1 : 0;
  CHECK(bg_count == bg_brute);

  // no scene classes in the step -> all background
  const Scene s2 = gen_scene(rng, {2}, small_cfg());
  const LabelMap none = relabel_for_step(s2, spec, 1);
  for (int v : none.idx) CHECK(v == 0);

  // all scene classes in the step -> unchanged up to index remap
  const Scene s3 = gen_scene(rng, {1, 2}, small_cfg());
  const LabelMap all = relabel_for_step(s3, spec, 0);
  for (size_t i = 0; i < s3.labels.idx.size(); ++i) {
    const int orig = s3.labels.idx[i];
    CHECK(all.idx[i] == (orig == 0 ? 0 : spec.cumulative_index(orig)));
  }
}

TEST_CASE("relabel never invents classes; background mass nondecreasing") {
  Rng rng(29);
  SceneConfig cfg = small_cfg();
  StepSpec spec{{{1, 2, 3}, {4}}, SplitMode::Disjoint};
  const auto scenes = gen_scenes(rng, 20, {1, 2, 3, 4}, cfg);
  for (const auto& s : scenes) {
    const auto present = scene_pixel_classes(s);
    for (int t = 0; t < spec.num_steps(); ++t) {
      const LabelMap lm = relabel_for_step(s, spec, t);
      std::set<int> out_classes;
      for (int v : lm.idx)
        if (v != 0) out_classes.insert(v);
      for (int c : out_classes) {
        bool found = false;
        for (int p : present) found |= spec.cumulative_index(p) == c;
        CHECK(found);
      }
      int bg_before = 0, bg_after = 0;
      for (int v : s.labels.idx) bg_before += v == 0 ? 1 : 0;
      for (int v : lm.idx) bg_after += v == 0 ? 1 : 0;
      CHECK(bg_after >= bg_before);
    }
  }
}

TEST_CASE("disjoint and overlapped step-0 sets coincide without future pixels") {
  Rng rng(31);
  SceneConfig cfg = small_cfg();
  // only step-0 classes exist anywhere
  const auto scenes = gen_scenes(rng, 15, {1, 2}, cfg);
  StepSpec d{{{1, 2}, {3}}, SplitMode::Disjoint};
  StepSpec o{{{1, 2}, {3}}, SplitMode::Overlapped};
  CHECK(split_incremental(scenes, d)[0] == split_incremental(scenes, o)[0]);
}

TEST_CASE("dataset generation is a pure function of seed and config") {
  Rng a(37), b(37);
  const auto s1 = gen_scenes(a, 5, {1, 2, 3}, small_cfg());
  const auto s2 = gen_scenes(b, 5, {1, 2, 3}, small_cfg());
  REQUIRE(s1.size() == s2.size());
  for (size_t i = 0; i < s1.size(); ++i) {
    CHECK(bit_equal(s1[i].image, s2[i].image));
    CHECK(s1[i].labels == s2[i].labels);
  }
}

TEST_CASE("step spec validation rejects overlapping class sets") {
  StepSpec spec{{{1, 2}, {2, 3}}, SplitMode::Disjoint};
  CHECK_THROWS_AS(spec.validate(), Error);
}
