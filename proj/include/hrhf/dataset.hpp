#pragma once

#include <cstdint>
#include <vector>

#include "hrhf/labelmap.hpp"
#include "hrhf/rng.hpp"
#include "hrhf/tensor.hpp"

namespace hrhf {

// Six shape families, one per foreground class, each with its own texture so
// the network has to read local structure rather than flat color.
enum class ShapeFamily { Circle, Square, Triangle, Cross, Stripe, Ring };

ShapeFamily family_of_class(int global_class);

struct SceneConfig {
  std::int64_t canvas = 64;
  int min_classes = 1;
  int max_classes = 4;
  double min_size = 7.0;
  double max_size = 13.0;
  double second_instance_prob = 0.3;
};

struct Instance {
  int class_id = 0;  // global id
  std::int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive bounding box
};

// Image in [0,1], labels over the global class universe (0 = background).
struct Scene {
  Tensor image;  // [H,W,3]
  LabelMap labels;
  std::vector<Instance> instances;
};

// Paints one textured instance (image + exact analytic label mask). Exposed
// so tests can rasterize known geometry directly.
void paint_instance(Scene& scene, int global_class, double cx, double cy,
                    double size, double phase, Instance* out_instance);

Scene gen_scene(Rng& rng, const std::vector<int>& class_subset,
                const SceneConfig& cfg);

// classes with at least one labeled pixel
std::vector<int> scene_pixel_classes(const Scene& scene);

enum class SplitMode { Disjoint, Overlapped };

struct StepSpec {
  std::vector<std::vector<int>> step_classes;  // global ids, pairwise disjoint
  SplitMode mode = SplitMode::Disjoint;

  int num_steps() const { return static_cast<int>(step_classes.size()); }
  std::vector<int> universe() const;  // sorted union of all steps
  // head width after step t: background + all classes up to and including t
  int class_count_at(int t) const;
  // channel index of a global class in the cumulative head layout (>= 1)
  int cumulative_index(int global_class) const;
  void validate() const;
};

// Per-step scene indices under the configured mode. Disjoint: a scene lands
// in step t iff it has a pixel of step t's classes and no pixel of any later
// step's classes (a partition). Overlapped: every scene with at least one
// pixel of step t's classes (scenes may repeat).
std::vector<std::vector<int>> split_incremental(
    const std::vector<Scene>& scenes, const StepSpec& spec);

// Training labels for step t: pixels of step-t classes keep their cumulative
// index, everything else becomes background.
LabelMap relabel_for_step(const Scene& scene, const StepSpec& spec, int t);

// Complete ground truth over the whole universe, cumulative indices.
LabelMap full_labels(const Scene& scene, const StepSpec& spec);

std::vector<Scene> gen_scenes(Rng& rng, int count,
                              const std::vector<int>& universe,
                              const SceneConfig& cfg);

}  // namespace hrhf
