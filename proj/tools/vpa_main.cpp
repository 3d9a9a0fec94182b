#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "vpa/checkpoint.hpp"
#include "vpa/pipeline.hpp"
#include "vpa/synthdata.hpp"
#include "vpa/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vpa;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

GeneratorConfig gen_from_kv(const KvConfig& kv) {
  GeneratorConfig g;
  g.n_concepts = kv.get_int("gen.n_concepts", g.n_concepts);
  g.n_pretrain = kv.get_int("gen.n_pretrain", g.n_pretrain);
  g.n_train = kv.get_int("gen.n_train", g.n_train);
  g.n_val = kv.get_int("gen.n_val", g.n_val);
  g.n_test = kv.get_int("gen.n_test", g.n_test);
  g.frames = kv.get_int("gen.frames", g.frames);
  g.patches = kv.get_int("gen.patches", g.patches);
  g.patch_dim = kv.get_int("gen.patch_dim", g.patch_dim);
  g.vocab = kv.get_int("gen.vocab", g.vocab);
  g.max_words = kv.get_int("gen.max_words", g.max_words);
  g.domain_shift = kv.get_double("gen.domain_shift", g.domain_shift);
  g.noise_std = kv.get_double("gen.noise_std", g.noise_std);
  g.seed = kv.get_u64("gen.seed", g.seed);
  g.multilabel = kv.get_bool("gen.multilabel", g.multilabel);
  g.labels_per_item = kv.get_int("gen.labels_per_item", g.labels_per_item);
  g.validate();
  return g;
}

std::string gen_dump(const GeneratorConfig& g) {
  std::ostringstream os;
  os << "gen.n_concepts = " << g.n_concepts << "\n"
     << "gen.n_pretrain = " << g.n_pretrain << "\n"
     << "gen.n_train = " << g.n_train << "\n"
     << "gen.n_val = " << g.n_val << "\n"
     << "gen.n_test = " << g.n_test << "\n"
     << "gen.frames = " << g.frames << "\n"
     << "gen.patches = " << g.patches << "\n"
     << "gen.patch_dim = " << g.patch_dim << "\n"
     << "gen.vocab = " << g.vocab << "\n"
     << "gen.max_words = " << g.max_words << "\n"
     << "gen.domain_shift = " << g.domain_shift << "\n"
     << "gen.noise_std = " << g.noise_std << "\n"
     << "gen.seed = " << g.seed << "\n"
     << "gen.multilabel = " << (g.multilabel ? "true" : "false") << "\n"
     << "gen.labels_per_item = " << g.labels_per_item << "\n";
  return os.str();
}

void write_manifest(const std::string& dir, const json& manifest) {
  std::ofstream f(fs::path(dir) / "manifest.json");
  if (!f) throw DataError("cannot write run manifest in " + dir);
  f << manifest.dump(2) << "\n";
}

json eval_to_json(const EvalResult& r) {
  return {{"map", r.map},
          {"top1", r.top1},
          {"mean_class", r.mean_class},
          {"v2t_map", r.retrieval.v2t.map},
          {"v2t_ndcg", r.retrieval.v2t.ndcg},
          {"t2v_map", r.retrieval.t2v.map},
          {"t2v_ndcg", r.retrieval.t2v.ndcg}};
}

// pretrain hyperparameters default to the train.* block
TrainConfig pretrain_config(const KvConfig& kv, const ModelConfig& cfg) {
  TrainConfig tc = cfg.train;
  tc.method = Method::kFull;
  tc.epochs = kv.get_int("pretrain.epochs", tc.epochs);
  tc.batch_size = kv.get_int("pretrain.batch_size", tc.batch_size);
  tc.lr = kv.get_double("pretrain.lr", tc.lr);
  tc.weight_decay = kv.get_double("pretrain.weight_decay", tc.weight_decay);
  tc.seed = kv.get_u64("pretrain.seed", tc.seed);
  return tc;
}

int cmd_gen(const std::string& config_path, const std::string& out_dir) {
  const KvConfig kv = KvConfig::parse_file(config_path);
  const GeneratorConfig g = gen_from_kv(kv);
  Dataset ds = generate(g);
  save(ds, out_dir);
  const double floor = centroid_accuracy(ds, Split::kAdaptTrain);
  std::cout << json{{"items", ds.items.size()},
                    {"out", out_dir},
                    {"centroid_accuracy", floor}}
                   .dump()
            << "\n";
  return kExitOk;
}

// shared by train and ablate: adapt one model on a loaded dataset starting
// from a backbone checkpoint
struct AdaptOutcome {
  EvalResult val;
  EvalResult test;
  std::vector<EpochStats> epochs;
};

AdaptOutcome adapt_model(Model& m, const Dataset& ds,
                         const std::string& backbone_ckpt, double data_fraction,
                         std::ostream* log, bool eval_each_epoch) {
  load_checkpoint(backbone_ckpt, m.store, true);
  RunOptions opt;
  opt.log = log;
  opt.data_fraction = data_fraction;
  opt.eval_each_epoch = eval_each_epoch;
  AdaptOutcome out;
  out.epochs = run_adaptation(m, ds, opt);
  out.val = evaluate(m, ds, Split::kAdaptVal);
  out.test = evaluate(m, ds, Split::kAdaptTest);
  return out;
}

int cmd_train(const std::string& config_path, const std::string& method_str,
              const std::string& dataset_dir, const std::string& out_dir,
              const std::string& phase, const std::string& pretrain_ckpt) {
  const KvConfig kv = KvConfig::parse_file(config_path);
  ModelConfig cfg = model_config_from_kv(kv);
  if (!method_str.empty()) cfg.train.method = method_from_string(method_str);
  Dataset ds = load(dataset_dir);
  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "log.jsonl");

  json manifest = {{"config", model_config_dump(cfg)},
                   {"seed", cfg.train.seed},
                   {"dataset", dataset_dir},
                   {"phase", phase},
                   {"method", method_name(cfg.train.method)},
                   {"version", 1}};

  if (phase == "pretrain") {
    ModelConfig pcfg = cfg;
    pcfg.train = pretrain_config(kv, cfg);
    Model m = build_model(pcfg);
    run_pretraining(m, ds, pcfg.train, {&log, 1.0, true});
    const std::string ckpt = (fs::path(out_dir) / "checkpoint.ckpt").string();
    save_checkpoint(ckpt, m.store, {{}, model_config_dump(pcfg)});
    manifest["checkpoint"] = ckpt;
    manifest["metrics"] = eval_to_json(evaluate(m, ds, Split::kAdaptVal));
    write_manifest(out_dir, manifest);
    std::cout << manifest["metrics"].dump() << "\n";
    return kExitOk;
  }
  if (phase != "adapt") throw ConfigError("phase must be pretrain or adapt");

  if (pretrain_ckpt.empty() || !fs::exists(pretrain_ckpt))
    throw DataError(
        "adaptation needs a backbone checkpoint; run the pretrain phase first "
        "(vpa train --phase pretrain) and pass it via --pretrain");

  Model m = build_model(cfg);
  if (cfg.train.method == Method::kZeroShot) {
    load_checkpoint(pretrain_ckpt, m.store, true);
    const EvalResult val = evaluate(m, ds, Split::kAdaptVal);
    const EvalResult test = evaluate(m, ds, Split::kAdaptTest);
    manifest["metrics"] = {{"val", eval_to_json(val)},
                           {"test", eval_to_json(test)}};
    write_manifest(out_dir, manifest);
    std::cout << manifest["metrics"].dump() << "\n";
    return kExitOk;
  }

  const double fraction = kv.get_double("train.data_fraction", 1.0);
  const auto outcome = adapt_model(m, ds, pretrain_ckpt, fraction, &log, true);
  const std::string ckpt = (fs::path(out_dir) / "checkpoint.ckpt").string();
  CheckpointExtras extras;
  extras.config_dump = model_config_dump(cfg);
  if (m.has_basis) extras.basis_counts = m.basis.counts();
  save_checkpoint(ckpt, m.store, extras);
  manifest["checkpoint"] = ckpt;
  manifest["metrics"] = {{"val", eval_to_json(outcome.val)},
                         {"test", eval_to_json(outcome.test)}};
  write_manifest(out_dir, manifest);
  std::cout << manifest["metrics"].dump() << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& dataset_dir,
             const std::string& task, const std::string& split_str) {
  Dataset ds = load(dataset_dir);

  // the model is rebuilt from the config dump embedded in the checkpoint
  std::string cfg_text;
  {
    std::ifstream f(ckpt, std::ios::binary);
    if (!f) throw DataError("cannot open " + ckpt);
    f.seekg(8);
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    if (!f.read(hs.data(), static_cast<std::streamsize>(hlen)))
      throw DataError("truncated: checkpoint header incomplete");
    json header = json::parse(hs, nullptr, false);
    if (header.is_discarded())
      throw DataError("version-mismatch: unreadable checkpoint header");
    cfg_text = header.value("config", "");
  }
  ModelConfig cfg = model_config_from_kv(KvConfig::parse_string(cfg_text));
  Model m = build_model(cfg);
  CheckpointExtras extras = load_checkpoint(ckpt, m.store, true);
  if (m.has_basis && !extras.basis_counts.empty())
    m.basis.counts() = extras.basis_counts;

  const Split split =
      split_str.empty() ? Split::kAdaptTest : split_from_string(split_str);
  const EvalResult r = evaluate(m, ds, split);
  json rec = {{"task", task},
              {"split", split_name(split)},
              {"method", method_name(cfg.train.method)}};
  if (task == "classify") {
    rec["map"] = r.map;
    rec["top1"] = r.top1;
    rec["mean_class"] = r.mean_class;
  } else if (task == "retrieve") {
    rec["v2t_map"] = r.retrieval.v2t.map;
    rec["v2t_ndcg"] = r.retrieval.v2t.ndcg;
    rec["t2v_map"] = r.retrieval.t2v.map;
    rec["t2v_ndcg"] = r.retrieval.t2v.ndcg;
  } else {
    throw ConfigError("task must be classify or retrieve");
  }
  std::cout << rec.dump() << "\n";
  return kExitOk;
}

int cmd_params(const std::string& config_path, const std::string& method_str) {
  ModelConfig cfg;
  if (!config_path.empty())
    cfg = model_config_from_kv(KvConfig::parse_file(config_path));
  const Method method = method_from_string(method_str);
  const ParamBreakdown bd = count_params(cfg, method);
  std::cout << "method: " << method_name(method) << "\n";
  for (const auto& [name, count] : bd.groups)
    std::cout << "  " << name << ": " << count << "\n";
  std::cout << "trainable: " << bd.trainable << "\n"
            << "frozen: " << bd.frozen << "\n"
            << "fraction: " << 100.0 * bd.fraction << "%\n";
  const ModelConfig ref = ModelConfig::reference_scale();
  std::cout << "formula (reference scale): ego-vpa video side d_f(B+2*d_vid) = "
            << ego_vpa_video_weights(ref.prompt.d_f, ref.prompt.basis_size,
                                     ref.enc.d_vid)
            << ", cmm (16+2*M_v*T)*d_vid^2 = "
            << cmm_weights(ref.prompt.video_prompts, ref.enc.frames,
                           ref.enc.d_vid)
            << "\n";
  return kExitOk;
}

int cmd_verify(const std::string& suite) {
  SuiteResult total;
  auto run = [&](const std::string& name) {
    SuiteResult r;
    if (name == "grad") r = grad_suite(std::cout);
    else if (name == "oracle") r = oracle_suite(std::cout);
    else if (name == "stats") r = stats_suite(std::cout);
    else throw ConfigError("suite must be grad, oracle, stats or all");
    total.checks += r.checks;
    total.failures += r.failures;
  };
  if (suite == "all") {
    run("oracle");
    run("stats");
    run("grad");
  } else {
    run(suite);
  }
  std::cout << total.checks - total.failures << "/" << total.checks
            << " checks passed\n";
  return total.failures == 0 ? kExitOk : kExitNumeric;
}

struct Table3Row {
  std::string variant;
  std::string generation;  // CMM or PS
  bool cross_modal = false;
  bool orth = false;
  std::string query;  // pi_m, top-k or n/a
};

ModelConfig variant_config(const ModelConfig& base, const Table3Row& row) {
  ModelConfig cfg = base;
  if (row.generation == "CMM") {
    cfg.train.method = Method::kVopFC;
  } else {
    cfg.train.method = Method::kEgoVpa;
    cfg.prompt.cross_modal = row.cross_modal;
    cfg.prompt.orth_penalty = row.orth;
    cfg.prompt.sampled_query = row.query == "pi_m";
  }
  return cfg;
}

std::vector<Table3Row> table3_rows() {
  return {{"m1", "CMM", false, false, "n/a"},
          {"m2", "PS", false, false, "pi_m"},
          {"m3", "PS", false, true, "pi_m"},
          {"m4", "PS", true, false, "pi_m"},
          {"m5", "PS", true, true, "pi_m"},
          {"m6", "PS", true, false, "top-k"},
          {"m7", "PS", true, true, "top-k"}};
}

int cmd_ablate(const std::string& grid_path, const std::string& dataset_dir,
               const std::string& out_dir) {
  const KvConfig kv = KvConfig::parse_file(grid_path);
  const ModelConfig base = model_config_from_kv(kv);
  const std::string ds_dir =
      dataset_dir.empty() ? kv.get("grid.dataset", "") : dataset_dir;
  if (ds_dir.empty())
    throw ConfigError("grid.dataset (or --dataset) is required");
  Dataset ds = load(ds_dir);
  fs::create_directories(out_dir);

  // one shared backbone pretraining for every cell
  const std::string backbone =
      (fs::path(out_dir) / "backbone.ckpt").string();
  {
    ModelConfig pcfg = base;
    pcfg.train = pretrain_config(kv, base);
    Model m = build_model(pcfg);
    std::ofstream plog(fs::path(out_dir) / "pretrain_log.jsonl");
    run_pretraining(m, ds, pcfg.train, {&plog, 1.0, false});
    save_checkpoint(backbone, m.store, {{}, model_config_dump(pcfg)});
  }

  auto run_cell = [&](const ModelConfig& cfg, double fraction) {
    Model m = build_model(cfg);
    return adapt_model(m, ds, backbone, fraction, nullptr, false);
  };

  {  // Table-3 style feature-flag grid
    const auto wanted = kv.get_list("grid.table3");
    std::ofstream t3(fs::path(out_dir) / "table3.csv");
    t3 << "variant,prompt_generation,cross_modality,orthogonality,query_mode,"
          "val_map,val_top1\n";
    for (const auto& row : table3_rows()) {
      if (!wanted.empty() &&
          std::find(wanted.begin(), wanted.end(), row.variant) == wanted.end())
        continue;
      const auto r = run_cell(variant_config(base, row), 1.0);
      t3 << row.variant << "," << row.generation << ","
         << (row.generation == "CMM" ? "n/a" : (row.cross_modal ? "yes" : "no"))
         << ","
         << (row.generation == "CMM" ? "n/a" : (row.orth ? "yes" : "no")) << ","
         << row.query << "," << r.val.map << "," << r.val.top1 << "\n";
      std::cout << "table3 " << row.variant << " val_map=" << r.val.map << "\n";
    }
  }

  auto sweep = [&](const std::string& axis,
                   const std::function<ModelConfig(double)>& apply,
                   const std::function<double(double)>& fraction_of) {
    const auto points = kv.get_list("grid.sweep." + axis);
    if (points.empty()) return;
    std::ofstream f(fs::path(out_dir) / ("sweep_" + axis + ".csv"));
    f << axis << ",val_map,val_top1\n";
    for (const auto& p : points) {
      const double v = std::stod(p);
      const auto r = run_cell(apply(v), fraction_of(v));
      f << p << "," << r.val.map << "," << r.val.top1 << "\n";
      std::cout << "sweep " << axis << "=" << p << " val_map=" << r.val.map
                << "\n";
    }
  };
  auto ego = [&](auto mut) {
    return [&, mut](double v) {
      ModelConfig cfg = base;
      cfg.train.method = Method::kEgoVpa;
      mut(cfg, v);
      return cfg;
    };
  };
  auto full_fraction = [](double) { return 1.0; };
  sweep("basis_size", ego([](ModelConfig& c, double v) {
          c.prompt.basis_size = static_cast<int>(v);
          c.prompt.topk = std::min(c.prompt.topk, c.prompt.basis_size);
        }),
        full_fraction);
  sweep("k_ratio", ego([](ModelConfig& c, double v) {
          c.prompt.topk = std::max(
              1, static_cast<int>(std::lround(v * c.prompt.basis_size)));
        }),
        full_fraction);
  sweep("boundary", ego([](ModelConfig& c, double v) {
          c.prompt.boundary = static_cast<int>(v);
        }),
        full_fraction);
  sweep("data_fraction", ego([](ModelConfig&, double) {}),
        [](double v) { return v; });

  write_manifest(out_dir, {{"grid", grid_path},
                           {"dataset", ds_dir},
                           {"seed", base.train.seed},
                           {"config", model_config_dump(base)},
                           {"version", 1}});
  return kExitOk;
}

int cmd_defaults() {
  std::cout << model_config_dump(ModelConfig{}) << gen_dump(GeneratorConfig{})
            << "train.data_fraction = 1\n"
            << "# pretrain.* keys default to the train.* block\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic video-text prompt adaptation workbench"};
  app.require_subcommand(1);

  std::string config_path, out_dir, dataset_dir, method_str, phase = "adapt";
  std::string pretrain_ckpt, ckpt, task = "classify", split_str, suite = "all";
  std::string grid_path;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--config", config_path)->required();
  gen->add_option("--out", out_dir)->required();

  auto* train = app.add_subcommand("train", "pretrain or adapt a model");
  train->add_option("--config", config_path)->required();
  train->add_option("--dataset", dataset_dir)->required();
  train->add_option("--out", out_dir)->required();
  train->add_option("--method", method_str);
  train->add_option("--phase", phase)->check(CLI::IsMember({"pretrain", "adapt"}));
  train->add_option("--pretrain", pretrain_ckpt);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", ckpt)->required();
  ev->add_option("--dataset", dataset_dir)->required();
  ev->add_option("--task", task)->check(CLI::IsMember({"classify", "retrieve"}));
  ev->add_option("--split", split_str);

  auto* ab = app.add_subcommand("ablate", "run the ablation grid");
  ab->add_option("--grid", grid_path)->required();
  ab->add_option("--dataset", dataset_dir);
  ab->add_option("--out", out_dir)->required();

  auto* pa = app.add_subcommand("params", "parameter accounting");
  pa->add_option("--config", config_path);
  pa->add_option("--method", method_str)->required();

  auto* vf = app.add_subcommand("verify", "run the verification suites");
  vf->add_option("--suite", suite)
      ->check(CLI::IsMember({"grad", "oracle", "stats", "all"}));

  app.add_subcommand("defaults", "print every config default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(config_path, out_dir);
    if (train->parsed())
      return cmd_train(config_path, method_str, dataset_dir, out_dir, phase,
                       pretrain_ckpt);
    if (ev->parsed()) return cmd_eval(ckpt, dataset_dir, task, split_str);
    if (ab->parsed()) return cmd_ablate(grid_path, dataset_dir, out_dir);
    if (pa->parsed()) return cmd_params(config_path, method_str);
    if (vf->parsed()) return cmd_verify(suite);
    return cmd_defaults();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
