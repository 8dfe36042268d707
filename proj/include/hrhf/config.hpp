#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "hrhf/protocol.hpp"

namespace hrhf {

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Whole-run configuration document. Parsing is strict: unknown keys are
// rejected so typos cannot silently fall back to defaults. Every run emits
// the fully resolved document, and its FNV-1a hash tags all artifacts.
struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  Method method = Method::HRHF;
  ArchConfig arch;
  SceneConfig scene;
  int train_scenes = 200;
  int test_scenes = 60;
  StepSpec steps{{{1, 2, 3}, {4}}, SplitMode::Disjoint};
  TrainConfig train;
  InversionConfig inversion;

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::string& path);

  nlohmann::json to_json() const;
  std::string hash() const;
  RunPlan plan() const;  // config_hash filled in
};

struct DatasetBundle {
  std::vector<Scene> train;
  std::vector<Scene> test;
};

// Train/test scenes from fixed RNG streams off the config seed; the train
// command regenerates exactly this, so file-based and in-process runs see
// the same data.
DatasetBundle generate_dataset(const RunConfig& cfg);

}  // namespace hrhf
