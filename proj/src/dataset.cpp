#include "hrhf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace hrhf {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// distinct base colors per class (r,g,b)
constexpr double kPalette[6][3] = {
    {0.85, 0.30, 0.25},  // circle: red
    {0.25, 0.60, 0.85},  // square: blue
    {0.30, 0.75, 0.35},  // triangle: green
    {0.85, 0.75, 0.25},  // cross: yellow
    {0.70, 0.35, 0.80},  // stripe: purple
    {0.30, 0.75, 0.75},  // ring: cyan
};

bool inside_shape(ShapeFamily f, double dx, double dy, double s) {
  switch (f) {
    case ShapeFamily::Circle:
      return dx * dx + dy * dy <= s * s;
    case ShapeFamily::Square:
      return std::abs(dx) <= s && std::abs(dy) <= s;
    case ShapeFamily::Triangle: {
      // upward triangle: apex at -s, base at +s
      if (dy < -s || dy > s) return false;
      return std::abs(dx) <= (dy + s) * 0.5;
    }
    case ShapeFamily::Cross: {
      const double arm = s / 3.0;
      return (std::abs(dx) <= arm && std::abs(dy) <= s) ||
             (std::abs(dy) <= arm && std::abs(dx) <= s);
    }
    case ShapeFamily::Stripe: {
      // diagonal bar
      const double u = (dx + dy) * 0.7071067811865476;
      const double v = (dx - dy) * 0.7071067811865476;
      return std::abs(u) <= s / 3.0 && std::abs(v) <= s;
    }
    case ShapeFamily::Ring: {
      const double d2 = dx * dx + dy * dy;
      const double inner = 0.55 * s;
      return d2 <= s * s && d2 >= inner * inner;
    }
  }
  return false;
}

// class-specific periodic pattern in [-1, 1]
double texture_value(ShapeFamily f, double px, double py, double phase) {
  switch (f) {
    case ShapeFamily::Circle:
      return std::sin(kTwoPi * py / 4.0 + phase);
    case ShapeFamily::Square:
      return std::sin(kTwoPi * px / 4.0 + phase);
    case ShapeFamily::Triangle: {
      const int cx = static_cast<int>(std::floor((px + phase) / 3.0));
      const int cy = static_cast<int>(std::floor(py / 3.0));
      return ((cx + cy) & 1) ? 1.0 : -1.0;
    }
    case ShapeFamily::Cross:
      return std::sin(kTwoPi * (px + py) / 6.0 + phase);
    case ShapeFamily::Stripe: {
      const int cx = static_cast<int>(std::floor((px + phase) / 2.0));
      const int cy = static_cast<int>(std::floor(py / 2.0));
      return ((cx + cy) & 1) ? 1.0 : -1.0;
    }
    case ShapeFamily::Ring:
      return std::sin(kTwoPi * (px - py) / 4.0 + phase);
  }
  return 0.0;
}

}  // namespace

ShapeFamily family_of_class(int global_class) {
  if (global_class < 1) throw Error("family_of_class: class must be >= 1");
  return static_cast<ShapeFamily>((global_class - 1) % 6);
}

void paint_instance(Scene& scene, int global_class, double cx, double cy,
                    double size, double phase, Instance* out_instance) {
  const auto H = scene.labels.height;
  const auto W = scene.labels.width;
  const ShapeFamily fam = family_of_class(global_class);
  const double* base = kPalette[(global_class - 1) % 6];
  std::int64_t x0 = W, y0 = H, x1 = -1, y1 = -1;
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      const double py = static_cast<double>(y) + 0.5;
      if (!inside_shape(fam, px - cx, py - cy, size)) continue;
      const double t = texture_value(fam, px, py, phase);
      const double shade = 0.62 + 0.38 * t;
      for (int c = 0; c < 3; ++c) {
        const double v = base[c] * shade;
        scene.image[(y * W + x) * 3 + c] = std::clamp(v, 0.0, 1.0);
      }
      scene.labels.idx[static_cast<size_t>(y * W + x)] = global_class;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (out_instance) {
    out_instance->class_id = global_class;
    out_instance->x0 = x0;
    out_instance->y0 = y0;
    out_instance->x1 = x1;
    out_instance->y1 = y1;
  }
}

Scene gen_scene(Rng& rng, const std::vector<int>& class_subset,
                const SceneConfig& cfg) {
  if (cfg.canvas < 32) throw Error("gen_scene: canvas must be >= 32");
  const auto N = cfg.canvas;
  Scene scene;
  scene.image = Tensor::zeros({N, N, 3});
  scene.labels = LabelMap::filled(N, N, 0);

  // noisy gray background with a slow diagonal gradient
  const double base = 0.40 + 0.10 * rng.uniform();
  const double slope = 0.06 * (rng.uniform() - 0.5);
  for (std::int64_t y = 0; y < N; ++y)
    for (std::int64_t x = 0; x < N; ++x) {
      const double g =
          base + slope * static_cast<double>(x + y) / static_cast<double>(N);
      for (int c = 0; c < 3; ++c)
        scene.image[(y * N + x) * 3 + c] =
            std::clamp(g + 0.08 * (rng.uniform() - 0.5), 0.0, 1.0);
    }

  std::vector<int> ordered = class_subset;
  std::sort(ordered.begin(), ordered.end());
  for (int cls : ordered) {
    if (cls < 1) throw Error("gen_scene: class ids must be >= 1");
    const int copies = 1 + (rng.uniform() < cfg.second_instance_prob ? 1 : 0);
    for (int k = 0; k < copies; ++k) {
      const double size =
          cfg.min_size + (cfg.max_size - cfg.min_size) * rng.uniform();
      const double margin = size + 1.0;
      const double cx =
          margin + (static_cast<double>(N) - 2.0 * margin) * rng.uniform();
      const double cy =
          margin + (static_cast<double>(N) - 2.0 * margin) * rng.uniform();
      const double phase = kTwoPi * rng.uniform();
      Instance inst;
      paint_instance(scene, cls, cx, cy, size, phase, &inst);
      scene.instances.push_back(inst);
    }
  }
  return scene;
}

std::vector<int> scene_pixel_classes(const Scene& scene) {
  std::set<int> present;
  for (int v : scene.labels.idx)
    if (v != 0) present.insert(v);
  return {present.begin(), present.end()};
}

std::vector<int> StepSpec::universe() const {
  std::set<int> u;
  for (const auto& s : step_classes) u.insert(s.begin(), s.end());
  return {u.begin(), u.end()};
}

int StepSpec::class_count_at(int t) const {
  if (t < 0 || t >= num_steps()) throw Error("class_count_at: bad step");
  int n = 1;
  for (int i = 0; i <= t; ++i)
    n += static_cast<int>(step_classes[static_cast<size_t>(i)].size());
  return n;
}

int StepSpec::cumulative_index(int global_class) const {
  int idx = 1;
  for (const auto& s : step_classes)
    for (int c : s) {
      if (c == global_class) return idx;
      ++idx;
    }
  throw Error("cumulative_index: class " + std::to_string(global_class) +
              " not in any step");
}

void StepSpec::validate() const {
  if (step_classes.empty()) throw Error("StepSpec: no steps");
  std::set<int> seen;
  for (const auto& s : step_classes) {
    if (s.empty()) throw Error("StepSpec: empty step class set");
    for (int c : s) {
      if (c < 1) throw Error("StepSpec: class ids must be >= 1 (0 is background)");
      if (!seen.insert(c).second)
        throw Error("StepSpec: class " + std::to_string(c) +
                    " appears in more than one step");
    }
  }
}

std::vector<std::vector<int>> split_incremental(
    const std::vector<Scene>& scenes, const StepSpec& spec) {
  spec.validate();
  const auto uni = spec.universe();
  const std::set<int> uni_set(uni.begin(), uni.end());

  // class -> step index
  std::vector<std::pair<int, int>> cls_step;
  for (int t = 0; t < spec.num_steps(); ++t)
    for (int c : spec.step_classes[static_cast<size_t>(t)])
      cls_step.emplace_back(c, t);

  std::vector<std::vector<int>> out(static_cast<size_t>(spec.num_steps()));
  for (size_t si = 0; si < scenes.size(); ++si) {
    const auto present = scene_pixel_classes(scenes[si]);
    for (int c : present)
      if (!uni_set.count(c))
        throw Error("split_incremental: scene class " + std::to_string(c) +
                    " outside the step universe");
    std::vector<bool> has_step(static_cast<size_t>(spec.num_steps()), false);
    for (int c : present)
      for (const auto& [cc, t] : cls_step)
        if (cc == c) has_step[static_cast<size_t>(t)] = true;

    for (int t = 0; t < spec.num_steps(); ++t) {
      if (!has_step[static_cast<size_t>(t)]) continue;
      if (spec.mode == SplitMode::Overlapped) {
        out[static_cast<size_t>(t)].push_back(static_cast<int>(si));
      } else {
        bool future = false;
        for (int u = t + 1; u < spec.num_steps(); ++u)
          future = future || has_step[static_cast<size_t>(u)];
        if (!future) out[static_cast<size_t>(t)].push_back(static_cast<int>(si));
      }
    }
  }
  return out;
}

LabelMap relabel_for_step(const Scene& scene, const StepSpec& spec, int t) {
  if (t < 0 || t >= spec.num_steps())
    throw Error("relabel_for_step: bad step index");
  const auto& step = spec.step_classes[static_cast<size_t>(t)];
  LabelMap out = LabelMap::filled(scene.labels.height, scene.labels.width, 0);
  for (size_t i = 0; i < scene.labels.idx.size(); ++i) {
    const int c = scene.labels.idx[i];
    if (c == 0) continue;
    if (std::find(step.begin(), step.end(), c) != step.end())
      out.idx[i] = spec.cumulative_index(c);
  }
  return out;
}

LabelMap full_labels(const Scene& scene, const StepSpec& spec) {
  LabelMap out = LabelMap::filled(scene.labels.height, scene.labels.width, 0);
  for (size_t i = 0; i < scene.labels.idx.size(); ++i) {
    const int c = scene.labels.idx[i];
    if (c != 0) out.idx[i] = spec.cumulative_index(c);
  }
  return out;
}

std::vector<Scene> gen_scenes(Rng& rng, int count,
                              const std::vector<int>& universe,
                              const SceneConfig& cfg) {
  if (universe.empty()) throw Error("gen_scenes: empty class universe");
  std::vector<Scene> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng srng = rng.split(static_cast<std::uint64_t>(i));
    const int lo = std::min<int>(cfg.min_classes,
                                 static_cast<int>(universe.size()));
    const int hi = std::min<int>(cfg.max_classes,
                                 static_cast<int>(universe.size()));
    const int k =
        lo + static_cast<int>(srng.uniform_int(
                 static_cast<std::uint64_t>(hi - lo + 1)));
    std::vector<int> pool = universe;
    std::vector<int> subset;
    for (int j = 0; j < k; ++j) {
      const size_t pick = srng.uniform_int(pool.size());
      subset.push_back(pool[pick]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    out.push_back(gen_scene(srng, subset, cfg));
  }
  return out;
}

}  // namespace hrhf
