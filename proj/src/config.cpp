#include "hrhf/config.hpp"

#include <fstream>
#include <set>

#include "hrhf/io.hpp"

namespace hrhf {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("config: unknown key '" + where + it.key() + "'");
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

AggregationKind agg_from_name(const std::string& s) {
  if (s == "SAA") return AggregationKind::SAA;
  if (s == "AVG") return AggregationKind::AVG;
  if (s == "MAX") return AggregationKind::MAX;
  throw ConfigError("config: unknown aggregation '" + s + "'");
}

std::string agg_name(AggregationKind k) {
  switch (k) {
    case AggregationKind::SAA: return "SAA";
    case AggregationKind::AVG: return "AVG";
    case AggregationKind::MAX: return "MAX";
  }
  return "?";
}

KdScope kd_scope_from_name(const std::string& s) {
  if (s == "both") return KdScope::Both;
  if (s == "real") return KdScope::RealOnly;
  if (s == "fake") return KdScope::FakeOnly;
  throw ConfigError("config: unknown kd_scope '" + s + "'");
}

std::string kd_scope_name(KdScope s) {
  switch (s) {
    case KdScope::Both: return "both";
    case KdScope::RealOnly: return "real";
    case KdScope::FakeOnly: return "fake";
  }
  return "?";
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  reject_unknown(j, {"seed", "threads", "method", "arch", "data", "steps",
                     "train", "inversion"},
                 "");
  get_if(j, "seed", c.seed);
  get_if(j, "threads", c.threads);
  if (j.contains("method"))
    c.method = method_from_name(j.at("method").get<std::string>());

  if (j.contains("arch")) {
    const json& a = j.at("arch");
    reject_unknown(a, {"blocks", "channels", "kernel", "bn_eps",
                       "bn_momentum", "head_init_sigma"},
                   "arch.");
    get_if(a, "blocks", c.arch.blocks);
    get_if(a, "channels", c.arch.channels);
    get_if(a, "kernel", c.arch.kernel);
    get_if(a, "bn_eps", c.arch.bn_eps);
    get_if(a, "bn_momentum", c.arch.bn_momentum);
    get_if(a, "head_init_sigma", c.arch.head_init_sigma);
  }

  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d,
                   {"canvas", "train_scenes", "test_scenes", "min_classes",
                    "max_classes", "min_size", "max_size",
                    "second_instance_prob"},
                   "data.");
    get_if(d, "canvas", c.scene.canvas);
    get_if(d, "train_scenes", c.train_scenes);
    get_if(d, "test_scenes", c.test_scenes);
    get_if(d, "min_classes", c.scene.min_classes);
    get_if(d, "max_classes", c.scene.max_classes);
    get_if(d, "min_size", c.scene.min_size);
    get_if(d, "max_size", c.scene.max_size);
    get_if(d, "second_instance_prob", c.scene.second_instance_prob);
  }

  if (j.contains("steps")) {
    const json& s = j.at("steps");
    reject_unknown(s, {"classes", "mode"}, "steps.");
    if (s.contains("classes"))
      c.steps.step_classes =
          s.at("classes").get<std::vector<std::vector<int>>>();
    if (s.contains("mode")) {
      const std::string m = s.at("mode").get<std::string>();
      if (m == "disjoint")
        c.steps.mode = SplitMode::Disjoint;
      else if (m == "overlapped")
        c.steps.mode = SplitMode::Overlapped;
      else
        throw ConfigError("config: unknown split mode '" + m + "'");
    }
    c.steps.validate();
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t,
                   {"epochs_step0", "epochs_incr", "batch", "lr", "lambda",
                    "ratio_real", "ratio_fake", "kd_scope",
                    "fake_pool_factor", "fake_pool_min", "log_floor"},
                   "train.");
    get_if(t, "epochs_step0", c.train.epochs_step0);
    get_if(t, "epochs_incr", c.train.epochs_incr);
    get_if(t, "batch", c.train.batch);
    get_if(t, "lr", c.train.lr);
    get_if(t, "lambda", c.train.lambda);
    get_if(t, "ratio_real", c.train.ratio_real);
    get_if(t, "ratio_fake", c.train.ratio_fake);
    if (t.contains("kd_scope"))
      c.train.kd_scope =
          kd_scope_from_name(t.at("kd_scope").get<std::string>());
    get_if(t, "fake_pool_factor", c.train.fake_pool_factor);
    get_if(t, "fake_pool_min", c.train.fake_pool_min);
    get_if(t, "log_floor", c.train.log_floor);
  }

  if (j.contains("inversion")) {
    const json& v = j.at("inversion");
    reject_unknown(v,
                   {"steps", "lr", "batch", "resolution", "stop_loss", "w_tv",
                    "w_l2", "w_feat", "r_set", "aggregation",
                    "aggregate_logits", "max_target_classes",
                    "extra_class_prob", "log_floor"},
                   "inversion.");
    get_if(v, "steps", c.inversion.steps);
    get_if(v, "lr", c.inversion.lr);
    get_if(v, "batch", c.inversion.batch);
    get_if(v, "resolution", c.inversion.resolution);
    get_if(v, "stop_loss", c.inversion.stop_loss);
    get_if(v, "w_tv", c.inversion.w_tv);
    get_if(v, "w_l2", c.inversion.w_l2);
    get_if(v, "w_feat", c.inversion.w_feat);
    get_if(v, "r_set", c.inversion.r_set);
    if (v.contains("aggregation"))
      c.inversion.aggregation =
          agg_from_name(v.at("aggregation").get<std::string>());
    get_if(v, "aggregate_logits", c.inversion.aggregate_logits);
    get_if(v, "max_target_classes", c.inversion.max_target_classes);
    get_if(v, "extra_class_prob", c.inversion.extra_class_prob);
    get_if(v, "log_floor", c.inversion.log_floor);
  }
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config: cannot parse " + path + ": " + e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["threads"] = threads;
  j["method"] = method_name(method);
  j["arch"] = {{"blocks", arch.blocks},
               {"channels", arch.channels},
               {"kernel", arch.kernel},
               {"bn_eps", arch.bn_eps},
               {"bn_momentum", arch.bn_momentum},
               {"head_init_sigma", arch.head_init_sigma}};
  j["data"] = {{"canvas", scene.canvas},
               {"train_scenes", train_scenes},
               {"test_scenes", test_scenes},
               {"min_classes", scene.min_classes},
               {"max_classes", scene.max_classes},
               {"min_size", scene.min_size},
               {"max_size", scene.max_size},
               {"second_instance_prob", scene.second_instance_prob}};
  j["steps"] = {{"classes", steps.step_classes},
                {"mode", steps.mode == SplitMode::Disjoint ? "disjoint"
                                                           : "overlapped"}};
  j["train"] = {{"epochs_step0", train.epochs_step0},
                {"epochs_incr", train.epochs_incr},
                {"batch", train.batch},
                {"lr", train.lr},
                {"lambda", train.lambda},
                {"ratio_real", train.ratio_real},
                {"ratio_fake", train.ratio_fake},
                {"kd_scope", kd_scope_name(train.kd_scope)},
                {"fake_pool_factor", train.fake_pool_factor},
                {"fake_pool_min", train.fake_pool_min},
                {"log_floor", train.log_floor}};
  j["inversion"] = {{"steps", inversion.steps},
                    {"lr", inversion.lr},
                    {"batch", inversion.batch},
                    {"resolution", inversion.resolution},
                    {"stop_loss", inversion.stop_loss},
                    {"w_tv", inversion.w_tv},
                    {"w_l2", inversion.w_l2},
                    {"w_feat", inversion.w_feat},
                    {"r_set", inversion.r_set},
                    {"aggregation", agg_name(inversion.aggregation)},
                    {"aggregate_logits", inversion.aggregate_logits},
                    {"max_target_classes", inversion.max_target_classes},
                    {"extra_class_prob", inversion.extra_class_prob},
                    {"log_floor", inversion.log_floor}};
  return j;
}

std::string RunConfig::hash() const { return io::fnv1a_hex(to_json().dump()); }

DatasetBundle generate_dataset(const RunConfig& cfg) {
  cfg.steps.validate();
  const Rng master(cfg.seed);
  Rng train_rng = master.split(1000);
  Rng test_rng = master.split(1001);
  DatasetBundle out;
  const auto universe = cfg.steps.universe();
  out.train = gen_scenes(train_rng, cfg.train_scenes, universe, cfg.scene);
  out.test = gen_scenes(test_rng, cfg.test_scenes, universe, cfg.scene);
  return out;
}

RunPlan RunConfig::plan() const {
  RunPlan p;
  p.steps = steps;
  p.method = method;
  p.arch = arch;
  p.train = train;
  p.inversion = inversion;
  p.seed = seed;
  p.config_hash = hash();
  return p;
}

}  // namespace hrhf
