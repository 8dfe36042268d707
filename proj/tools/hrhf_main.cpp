// hrhf: data generation, incremental training, model inversion, evaluation,
// and the ablation table, all driven by one JSON config.

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hrhf/config.hpp"
#include "hrhf/io.hpp"
#include "hrhf/kernels.hpp"
#include "hrhf/protocol.hpp"

using nlohmann::json;
using namespace hrhf;

namespace {

enum ExitCode {
  kOk = 0,
  kConfigError = 2,
  kMissingFile = 3,
  kVersionMismatch = 4,
  kRuntimeError = 5,
};

int resolve_threads(int config_threads) {
  const char* env = std::getenv("HRHF_THREADS");
  if (!env) return config_threads;
  const long cap = std::strtol(env, nullptr, 10);
  if (cap <= 0) return config_threads;
  return std::min<int>(static_cast<int>(cap), config_threads > 0
                                                  ? config_threads
                                                  : static_cast<int>(cap));
}

std::string scene_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04d", prefix, i);
  return buf;
}

json report_to_json(const MetricsReport& r) {
  json j;
  j["step"] = r.step;
  j["method"] = r.method;
  j["miou_old"] = r.miou_old;
  j["miou_new"] = r.miou_new;
  j["miou_all"] = r.miou_all;
  json iou = json::array();
  for (double v : r.per_class_iou) {
    if (std::isnan(v))
      iou.push_back(nullptr);
    else
      iou.push_back(v);
  }
  j["per_class_iou"] = iou;
  j["old_group"] = r.old_group;
  j["new_group"] = r.new_group;
  return j;
}

void write_reports(const std::string& dir,
                   const std::vector<MetricsReport>& reports,
                   const std::string& config_hash, std::uint64_t seed) {
  json j;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  json steps = json::array();
  for (const auto& r : reports) steps.push_back(report_to_json(r));
  j["steps"] = steps;
  io::write_file_atomic(dir + "/report.json", j.dump(2) + "\n");

  std::ostringstream csv;
  csv << "step,method,miou_old,miou_new,miou_all,seed,config_hash\n";
  for (const auto& r : reports)
    csv << r.step << "," << r.method << "," << r.miou_old << ","
        << r.miou_new << "," << r.miou_all << "," << seed << ","
        << config_hash << "\n";
  io::write_file_atomic(dir + "/report.csv", csv.str());
}

void write_scenes(const std::string& dir, const char* split,
                  const std::vector<Scene>& scenes, const StepSpec& spec,
                  json& manifest_list) {
  for (size_t i = 0; i < scenes.size(); ++i) {
    const std::string base = scene_name(split, static_cast<int>(i));
    io::write_ppm(dir + "/" + base + ".ppm", scenes[i].image);
    io::write_pgm(dir + "/" + base + ".pgm", scenes[i].labels);
    json e;
    e["image"] = base + ".ppm";
    e["labels"] = base + ".pgm";
    e["split"] = split;
    e["classes"] = scene_pixel_classes(scenes[i]);
    json insts = json::array();
    for (const auto& in : scenes[i].instances)
      insts.push_back({{"class", in.class_id},
                       {"bbox", {in.x0, in.y0, in.x1, in.y1}}});
    e["instances"] = insts;
    manifest_list.push_back(e);
    (void)spec;
  }
}

int cmd_gen_data(const RunConfig& cfg, const std::string& out) {
  const DatasetBundle data = generate_dataset(cfg);
  io::make_dirs(out);
  json manifest;
  manifest["config_hash"] = cfg.hash();
  manifest["seed"] = cfg.seed;
  manifest["canvas"] = cfg.scene.canvas;
  manifest["universe"] = cfg.steps.universe();
  json entries = json::array();
  write_scenes(out, "train", data.train, cfg.steps, entries);
  write_scenes(out, "test", data.test, cfg.steps, entries);
  manifest["scenes"] = entries;
  io::write_file_atomic(out + "/manifest.json", manifest.dump(2) + "\n");
  io::write_file_atomic(out + "/resolved_config.json",
                        cfg.to_json().dump(2) + "\n");
  std::cout << "wrote " << data.train.size() << " train + "
            << data.test.size() << " test scenes to " << out << "\n";
  return kOk;
}

void dump_fakes(const std::string& dir, int step,
                const std::vector<FakeSample>& fakes,
                const std::string& config_hash) {
  const std::string fdir = dir + "/fakes/step_" + std::to_string(step);
  io::make_dirs(fdir);
  for (size_t i = 0; i < fakes.size(); ++i) {
    const FakeSample& fs = fakes[i];
    const std::string base = scene_name("fake", static_cast<int>(i));
    io::write_ppm(fdir + "/" + base + ".ppm", fs.image);
    json side;
    side["target_classes"] = fs.target.active();
    side["r"] = fs.r;
    side["final_loss"] = fs.final_loss;
    side["initial_cls"] = fs.initial_cls;
    side["final_cls"] = fs.final_cls;
    side["seed"] = fs.seed;
    side["config_hash"] = config_hash;
    io::write_file_atomic(fdir + "/" + base + ".json", side.dump(2) + "\n");
  }
}

int cmd_train(const RunConfig& cfg, const std::string& out) {
  io::make_dirs(out);
  io::write_file_atomic(out + "/resolved_config.json",
                        cfg.to_json().dump(2) + "\n");
  const DatasetBundle data = generate_dataset(cfg);
  const RunPlan plan = cfg.plan();

  std::ostringstream losses;
  losses << "step,epoch,loss_kd,loss_seg,loss_all\n";
  auto on_epoch = [&](const EpochLoss& e) {
    losses << e.step << "," << e.epoch << "," << e.kd << "," << e.seg << ","
           << e.total << "\n";
  };
  auto on_warn = [](const std::string& w) {
    std::cerr << "[warn] " << w << "\n";
  };
  auto on_fakes = [&](int step, const std::vector<FakeSample>& fakes) {
    if (!fakes.empty()) dump_fakes(out, step, fakes, plan.config_hash);
  };

  const RunResult res =
      run_plan(plan, data.train, data.test, on_epoch, on_warn, on_fakes);

  for (size_t t = 0; t < res.step_models.size(); ++t)
    io::save_checkpoint(out + "/step_" + std::to_string(t) + ".ckpt",
                        res.step_models[t], plan.steps, plan.seed,
                        plan.config_hash);
  io::write_file_atomic(out + "/losses.csv", losses.str());
  write_reports(out, res.reports, plan.config_hash, plan.seed);

  for (const auto& r : res.reports)
    std::cout << "step " << r.step << " [" << r.method
              << "] mIoU old/new/all = " << r.miou_old << " / " << r.miou_new
              << " / " << r.miou_all << "\n";
  return kOk;
}

int cmd_invert(const RunConfig& cfg, const std::string& ckpt_path,
               const std::string& out, int count) {
  const io::Checkpoint ck = io::load_checkpoint(ckpt_path);
  io::make_dirs(out);
  InversionConfig icfg = cfg.inversion;
  Rng rng(cfg.seed);
  Rng target_rng = rng.split(1);
  Rng invert_rng = rng.split(2);
  const int n = count > 0 ? count : icfg.batch;
  const auto targets =
      make_targets(n, ck.model.class_count, icfg, target_rng);
  std::vector<std::string> diags;
  const auto fakes = invert(ck.model, targets, icfg, invert_rng, &diags);
  for (const auto& d : diags) std::cerr << "[warn] " << d << "\n";
  dump_fakes(out, ck.model.step_index, fakes, cfg.hash());
  json summary;
  summary["config_hash"] = cfg.hash();
  summary["seed"] = cfg.seed;
  summary["checkpoint"] = ckpt_path;
  summary["samples"] = fakes.size();
  summary["aborted"] = diags.size();
  io::write_file_atomic(out + "/inversion_summary.json",
                        summary.dump(2) + "\n");
  std::cout << "inverted " << fakes.size() << " samples to " << out << "\n";
  return kOk;
}

std::vector<Scene> load_scenes_from_manifest(const std::string& dir,
                                             const char* split) {
  json manifest;
  try {
    manifest = json::parse(io::read_file(dir + "/manifest.json"));
  } catch (const json::exception& e) {
    throw Error(dir + "/manifest.json: " + e.what());
  }
  std::vector<Scene> out;
  for (const auto& e : manifest.at("scenes")) {
    if (e.at("split").get<std::string>() != split) continue;
    Scene s;
    s.image = io::read_ppm(dir + "/" + e.at("image").get<std::string>());
    s.labels = io::read_pgm(dir + "/" + e.at("labels").get<std::string>());
    out.push_back(std::move(s));
  }
  if (out.empty())
    throw Error(dir + ": manifest has no '" + split + "' scenes");
  return out;
}

int cmd_eval(const RunConfig* cfg, const std::string& ckpt_path,
             const std::string& data_dir, const std::string& out) {
  const io::Checkpoint ck = io::load_checkpoint(ckpt_path);
  std::vector<Scene> scenes;
  std::string hash = ck.config_hash;
  std::uint64_t seed = ck.seed;
  if (!data_dir.empty()) {
    scenes = load_scenes_from_manifest(data_dir, "test");
  } else if (cfg) {
    scenes = generate_dataset(*cfg).test;
    hash = cfg->hash();
    seed = cfg->seed;
  } else {
    throw ConfigError("config: eval needs --data or --config");
  }
  MetricsReport rep =
      evaluate_model(ck.model, scenes, ck.steps, ck.model.step_index);
  rep.method = "eval";
  rep.seed = seed;
  rep.config_hash = hash;
  io::make_dirs(out);
  write_reports(out, {rep}, hash, seed);
  std::cout << "step " << rep.step << " mIoU old/new/all = " << rep.miou_old
            << " / " << rep.miou_new << " / " << rep.miou_all << "\n";
  return kOk;
}

struct AblationRow {
  std::string dimension;
  std::string setting;
  RunConfig cfg;
};

int cmd_ablate(const RunConfig& base, const std::string& out) {
  std::vector<AblationRow> rows;
  {
    RunConfig c = base;
    c.method = Method::HRHF;
    for (AggregationKind k :
         {AggregationKind::AVG, AggregationKind::MAX, AggregationKind::SAA}) {
      RunConfig r = c;
      r.inversion.aggregation = k;
      const char* n = k == AggregationKind::AVG   ? "AVG"
                      : k == AggregationKind::MAX ? "MAX"
                                                  : "SAA";
      rows.push_back({"aggregation", n, r});
    }
    for (double rv : {0.5, 1.0, 5.0, 10.0, 20.0}) {
      RunConfig r = c;
      r.inversion.aggregation = AggregationKind::SAA;
      r.inversion.r_set = {rv};
      std::ostringstream name;
      name << "r=" << rv;
      rows.push_back({"r", name.str(), r});
    }
    {
      RunConfig r = c;
      r.inversion.r_set = {0.5, 1.0, 5.0, 10.0, 20.0};
      rows.push_back({"r", "random", r});
    }
    for (auto [a, b] : {std::pair{1, 1}, {1, 2}, {2, 1}}) {
      RunConfig r = c;
      r.train.ratio_real = a;
      r.train.ratio_fake = b;
      rows.push_back(
          {"ratio", std::to_string(a) + ":" + std::to_string(b), r});
    }
    {
      RunConfig r = c;
      rows.push_back({"kd", "lambda=1", r});
      r.method = Method::HRHFNoKD;
      rows.push_back({"kd", "lambda=0", r});
    }
    {
      RunConfig r = c;
      r.method = Method::NoiseReplay;
      rows.push_back({"pool", "noise", r});
      r.method = Method::Baseline;
      rows.push_back({"pool", "none", r});
      r.method = Method::FT;
      rows.push_back({"pool", "ft", r});
    }
  }

  const DatasetBundle data = generate_dataset(base);
  io::make_dirs(out);
  std::ostringstream csv;
  csv << "dimension,setting,method,step,miou_old,miou_new,miou_all\n";
  json jrows = json::array();
  for (const auto& row : rows) {
    const RunPlan plan = row.cfg.plan();
    const RunResult res = run_plan(plan, data.train, data.test);
    const MetricsReport& last = res.reports.back();
    csv << row.dimension << "," << row.setting << "," << last.method << ","
        << last.step << "," << last.miou_old << "," << last.miou_new << ","
        << last.miou_all << "\n";
    json jr = report_to_json(last);
    jr["dimension"] = row.dimension;
    jr["setting"] = row.setting;
    jrows.push_back(jr);
    std::cout << row.dimension << "/" << row.setting << ": old "
              << last.miou_old << ", new " << last.miou_new << ", all "
              << last.miou_all << "\n";
  }
  json j;
  j["config_hash"] = base.hash();
  j["seed"] = base.seed;
  j["rows"] = jrows;
  io::write_file_atomic(out + "/ablation.json", j.dump(2) + "\n");
  io::write_file_atomic(out + "/ablation.csv", csv.str());
  return kOk;
}

void emit_error(const std::string& msg, int code) {
  json e;
  e["error"] = msg;
  e["code"] = code;
  std::cerr << e.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Half-real half-fake class-incremental segmentation"};
  app.require_subcommand(1);

  std::string config_path, out_dir, ckpt_path, data_dir;
  std::int64_t seed_override = -1;
  int invert_count = 0;

  auto add_common = [&](CLI::App* sub, bool need_config) {
    auto* copt = sub->add_option("--config", config_path, "JSON config path");
    if (need_config) copt->required();
    sub->add_option("--seed", seed_override, "override the config seed");
    sub->add_option("--out", out_dir, "output directory")->required();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the shapes dataset");
  add_common(gen, true);
  CLI::App* train = app.add_subcommand("train", "run the incremental protocol");
  add_common(train, true);
  CLI::App* invert_cmd =
      app.add_subcommand("invert", "synthesize images from a checkpoint");
  add_common(invert_cmd, true);
  invert_cmd->add_option("--checkpoint", ckpt_path, "teacher checkpoint")
      ->required();
  invert_cmd->add_option("--count", invert_count, "number of samples");
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, false);
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint path")
      ->required();
  eval_cmd->add_option("--data", data_dir, "gen-data output directory");
  CLI::App* ablate =
      app.add_subcommand("ablate", "aggregation / r / ratio / kd sweeps");
  add_common(ablate, true);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    const bool have_config = !config_path.empty();
    if (have_config) cfg = RunConfig::from_file(config_path);
    if (seed_override >= 0)
      cfg.seed = static_cast<std::uint64_t>(seed_override);
    kernels::set_threads(resolve_threads(cfg.threads));

    if (gen->parsed()) return cmd_gen_data(cfg, out_dir);
    if (train->parsed()) return cmd_train(cfg, out_dir);
    if (invert_cmd->parsed())
      return cmd_invert(cfg, ckpt_path, out_dir, invert_count);
    if (eval_cmd->parsed())
      return cmd_eval(have_config ? &cfg : nullptr, ckpt_path, data_dir,
                      out_dir);
    if (ablate->parsed()) return cmd_ablate(cfg, out_dir);
    emit_error("no subcommand", kConfigError);
    return kConfigError;
  } catch (const ConfigError& e) {
    emit_error(e.what(), kConfigError);
    return kConfigError;
  } catch (const MissingFileError& e) {
    emit_error(e.what(), kMissingFile);
    return kMissingFile;
  } catch (const VersionError& e) {
    emit_error(e.what(), kVersionMismatch);
    return kVersionMismatch;
  } catch (const std::exception& e) {
    emit_error(e.what(), kRuntimeError);
    return kRuntimeError;
  }
}
