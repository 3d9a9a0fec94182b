// Acceptance gate: one pass/fail line per criterion, nonzero exit when any
// criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vpa/pipeline.hpp"
#include "vpa/verify.hpp"

using namespace vpa;
namespace fs = std::filesystem;
using nlohmann::json;
using clk = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int idx, const std::string& name, bool ok,
            const std::string& detail) {
  std::printf("%s  criterion %2d  %-24s %s\n", ok ? "PASS" : "FAIL", idx,
              name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double seconds_since(clk::time_point t0) {
  return std::chrono::duration<double>(clk::now() - t0).count();
}

int run_cmd(const std::string& args, const std::string& stdout_file = "") {
  std::string cmd = std::string(VPA_BIN) + " " + args;
  cmd += stdout_file.empty() ? " >/dev/null" : (" > " + stdout_file);
  cmd += " 2>/dev/null";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

json last_json_line(const fs::path& p) {
  std::ifstream f(p);
  std::string line, last;
  while (std::getline(f, line))
    if (!line.empty()) last = line;
  return json::parse(last);
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

// ---------------------------------------------------------------- criterion 1
void criterion_gradients() {
  const auto t0 = clk::now();
  std::ostringstream sink;
  SuiteResult r = grad_suite(sink);
  const double dt = seconds_since(t0);
  std::ostringstream d;
  d << r.checks - r.failures << "/" << r.checks << " checks, " << dt << " s";
  report(1, "gradient-suite", r.failures == 0 && dt < 60.0, d.str());
}

// ---------------------------------------------------------------- criterion 2
void criterion_subspace_oracle() {
  const auto t0 = clk::now();
  int mismatches = 0, cases = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Rng r(40'000 + trial);
    ParamStore store;
    const int B = 2 + r.uniform_int(9);  // B in [2, 10]
    const int d = B + r.uniform_int(4);
    PromptBasis basis(B, d, r, store);
    std::vector<double> hz(d);
    double n2 = 0.0;
    for (auto& v : hz) {
      v = r.gauss();
      n2 += v * v;
    }
    for (auto& v : hz) v /= std::sqrt(n2);

    // skip ties in dot-product magnitude: the criterion only pins down the
    // selection when magnitudes are distinct
    std::vector<double> mags(B);
    const auto& F = basis.matrix().values();
    for (int i = 0; i < B; ++i) {
      double dot = 0.0;
      for (int c = 0; c < d; ++c)
        dot += hz[c] * F[static_cast<std::size_t>(i) * d + c];
      mags[i] = std::fabs(dot);
    }
    std::vector<double> sorted = mags;
    std::sort(sorted.begin(), sorted.end());
    bool tied = false;
    for (int i = 0; i + 1 < B; ++i)
      if (sorted[i + 1] - sorted[i] < 1e-9) tied = true;
    if (tied) continue;

    for (int k = 1; k <= B; ++k) {
      ++cases;
      SubspaceSelection sel = select_topk(hz, basis, k);
      std::vector<int> got = sel.indices;
      std::sort(got.begin(), got.end());
      std::vector<int> want =
          oracle::best_subset(hz, basis.matrix().values(), B, d, k);
      std::sort(want.begin(), want.end());
      if (got != want) ++mismatches;
    }
  }
  const double dt = seconds_since(t0);
  std::ostringstream d;
  d << cases << " cases, " << mismatches << " mismatches, " << dt << " s";
  report(2, "subspace-oracle", mismatches == 0 && dt < 30.0, d.str());
}

// ---------------------------------------------------------------- criterion 3
void criterion_eq6_identity() {
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Rng r(50'000 + trial);
    ParamStore store;
    const int B = 2 + r.uniform_int(7), d = B + r.uniform_int(4);
    PromptBasis basis(B, d, r, store);
    std::vector<double> hz(d);
    double n2 = 0.0;
    for (auto& v : hz) {
      v = r.gauss();
      n2 += v * v;
    }
    const int k = 1 + r.uniform_int(B);
    SubspaceSelection sel = select_topk(hz, basis, k);
    const double rl = recon_loss(Tensor::from({1, d}, hz), sel, basis).item();
    double a2 = 0.0;
    for (double a : sel.alpha) a2 += a * a;
    worst = std::max(worst, std::fabs(rl * rl + a2 - n2));
  }
  std::ostringstream d;
  d << "max |residual^2 + |alpha|^2 - |hz|^2| = " << worst;
  report(3, "eq6-identity", worst <= 1e-9, d.str());
}

// ---------------------------------------------------------------- criterion 4
struct OrthRun {
  double offdiag = 0.0;
  double worst_norm_err = 0.0;
};

OrthRun orth_run(bool penalty) {
  GeneratorConfig g;
  g.n_pretrain = 0;
  g.n_train = 32;
  g.n_val = 4;
  g.n_test = 4;
  g.frames = 2;
  g.patches = 2;
  g.patch_dim = 8;
  Dataset ds = generate(g);

  ModelConfig cfg;
  cfg.enc.layers = 2;
  cfg.enc.d_txt = 16;
  cfg.enc.d_vid = 16;
  cfg.enc.frames = 2;
  cfg.enc.patches = 2;
  cfg.enc.heads = 2;
  cfg.enc.patch_dim = 8;
  cfg.enc.embed_dim = 16;
  cfg.enc.mlp_ratio = 2;
  cfg.prompt.video_prompts = 2;
  cfg.prompt.text_prompts = 2;
  cfg.prompt.boundary = 1;
  cfg.prompt.basis_size = 8;
  cfg.prompt.topk = 4;
  cfg.prompt.d_f = 16;
  cfg.prompt.orth_penalty = penalty;
  cfg.train.method = Method::kEgoVpa;
  cfg.train.epochs = 50;  // 4 batches of 8 per epoch: 200 optimizer steps
  cfg.train.batch_size = 8;
  cfg.train.lr = 0.02;
  cfg.loss.lambda = 1.0;

  Model m = build_model(cfg);
  run_adaptation(m, ds, {nullptr, 1.0, false});

  OrthRun out;
  out.offdiag = m.basis.gram_offdiag_max();
  const auto& F = m.basis.matrix().values();
  const int B = m.basis.size(), d = m.basis.dim();
  for (int i = 0; i < B; ++i) {
    double n2 = 0.0;
    for (int c = 0; c < d; ++c) {
      const double v = F[static_cast<std::size_t>(i) * d + c];
      n2 += v * v;
    }
    out.worst_norm_err =
        std::max(out.worst_norm_err, std::fabs(std::sqrt(n2) - 1.0));
  }
  return out;
}

void criterion_orthogonality() {
  OrthRun with = orth_run(true);
  OrthRun without = orth_run(false);
  const bool ok = with.offdiag <= 0.1 && with.worst_norm_err <= 1e-9 &&
                  without.offdiag > with.offdiag;
  std::ostringstream d;
  d << "offdiag " << with.offdiag << " (penalty off: " << without.offdiag
    << "), norm err " << with.worst_norm_err;
  report(4, "orthogonality", ok, d.str());
}

// ---------------------------------------------------------------- criterion 5
void criterion_sampling() {
  Rng r(60'001);
  ParamStore store;
  const int B = 8;
  PromptBasis basis(B, 12, r, store);
  std::vector<double> hz(12);
  for (auto& v : hz) v = r.gauss();

  SamplerState st{0.0, Rng(60'002)};
  std::vector<long> freq(B, 0);
  const int draws = 100'000;
  for (int i = 0; i < draws; ++i) {
    basis.reset_counts();  // keep counts uniform for every draw
    SubspaceSelection s = select_sampled(hz, basis, 1, st);
    ++freq[s.indices[0]];
  }
  double tv = 0.0;
  for (int i = 0; i < B; ++i)
    tv += std::fabs(static_cast<double>(freq[i]) / draws - 1.0 / B);
  tv *= 0.5;

  TrainConfig tc;
  tc.epochs = 12;
  tc.ramp_fraction = 0.5;
  const bool endpoints = gamma_at(0, tc) == 0.0 && gamma_at(tc.epochs, tc) == 1.0;

  std::ostringstream d;
  d << "TV " << tv << ", gamma(0)=" << gamma_at(0, tc)
    << ", gamma(final)=" << gamma_at(tc.epochs, tc);
  report(5, "sampling-statistics", tv <= 0.05 && endpoints, d.str());
}

// ---------------------------------------------------------------- criterion 6
void criterion_param_accounting() {
  const bool formulas = ego_vpa_video_weights(512, 10, 768) == 791552u &&
                        cmm_weights(8, 16, 768) == 160432128u;

  ModelConfig ref = ModelConfig::reference_scale();
  ParamBreakdown ego_ref = count_params(ref, Method::kEgoVpa);
  const bool ref_groups =
      ego_ref.group("basis+video_adapter") ==
      ego_vpa_video_weights(ref.prompt.d_f, ref.prompt.basis_size,
                            ref.enc.d_vid);

  // toy accounting model: a mid-sized backbone against the tiny prompt side
  ModelConfig toy;
  toy.enc.layers = 4;
  toy.enc.d_txt = 64;
  toy.enc.d_vid = 64;
  toy.enc.heads = 4;
  toy.enc.mlp_ratio = 4;
  toy.prompt.d_f = 16;
  toy.prompt.basis_size = 10;
  toy.prompt.topk = 4;
  ParamBreakdown ego = count_params(toy, Method::kEgoVpa);
  ParamBreakdown vopc = count_params(toy, Method::kVopC);
  const bool toy_ok =
      ego.fraction < 0.02 && vopc.fraction >= 5.0 * ego.fraction;

  std::ostringstream d;
  d << "791552/160432128 " << (formulas ? "exact" : "WRONG") << ", toy ego "
    << ego.fraction * 100 << "% vs vop-c " << vopc.fraction * 100 << "%";
  report(6, "parameter-accounting", formulas && ref_groups && toy_ok, d.str());
}

// ---------------------------------------------------------------- criterion 7
void criterion_metric_oracles() {
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    Rng r(70'000 + t);
    const int n = 4 + r.uniform_int(8), c = 2 + r.uniform_int(5);
    ScoreMatrix sc = ScoreMatrix::zeros(n, c), rel = ScoreMatrix::zeros(n, c);
    std::vector<int> labels(n), rel_int;
    for (int i = 0; i < n; ++i) {
      labels[i] = r.uniform_int(c);
      for (int j = 0; j < c; ++j) {
        sc.set(i, j, r.gauss());
        rel.set(i, j, (j == labels[i] || r.uniform() < 0.25) ? 1.0 : 0.0);
      }
    }
    rel_int.assign(rel.data.begin(), rel.data.end());
    worst = std::max(worst, std::fabs(multilabel_map(sc, rel) -
                                      oracle::multilabel_map(sc.data, rel_int,
                                                             n, c)));
    auto acc = accuracy(sc, labels);
    worst = std::max(worst, std::fabs(acc.top1 - oracle::top1_accuracy(
                                                     sc.data, labels, n, c)));
    worst = std::max(worst,
                     std::fabs(acc.mean_class - oracle::mean_class_accuracy(
                                                    sc.data, labels, n, c)));

    ScoreMatrix sim = ScoreMatrix::zeros(n, n), gr = ScoreMatrix::zeros(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        sim.set(i, j, r.gauss());
        gr.set(i, j, j == i ? 1.0 : (r.uniform() < 0.3 ? r.uniform() : 0.0));
      }
    double omap = 0.0, ondcg = 0.0;
    oracle::retrieval(sim.data, gr.data, n, n, &omap, &ondcg);
    auto rr = retrieval_metrics_oneway(sim, gr);
    worst = std::max({worst, std::fabs(rr.map - omap),
                      std::fabs(rr.ndcg - ondcg)});
  }
  std::ostringstream d;
  d << "max diff " << worst << " over 200 instances per metric";
  report(7, "metric-oracles", worst <= 1e-9, d.str());
}

// ---------------------------------------------------------- criteria 8, 9, 10
void criteria_end_to_end(const fs::path& work) {
  const std::string cfg = std::string(VPA_CONFIG_DIR) + "/toy.cfg";
  const std::string grid = std::string(VPA_CONFIG_DIR) + "/grid.cfg";
  const std::string data = (work / "data").string();
  const auto t0 = clk::now();

  bool ok = run_cmd("gen --config " + cfg + " --out " + data) == 0;
  ok = ok && run_cmd("train --config " + cfg + " --dataset " + data +
                     " --phase pretrain --out " + (work / "pre").string()) == 0;
  const std::string pre = (work / "pre" / "checkpoint.ckpt").string();

  std::map<std::string, double> val_map;
  for (const std::string m : {"zero-shot", "tpt", "vpt", "ego-vpa"}) {
    const fs::path out = work / ("m-" + m);
    const fs::path summary = work / ("m-" + m + ".json");
    ok = ok && run_cmd("train --config " + cfg + " --dataset " + data +
                           " --phase adapt --method " + m + " --pretrain " +
                           pre + " --out " + out.string(),
                       summary.string()) == 0;
    if (ok) val_map[m] = last_json_line(summary)["val"]["map"].get<double>();
  }
  const double dt = seconds_since(t0);

  if (!ok) {
    report(8, "end-to-end-ordering", false, "a pipeline command failed");
  } else {
    const double ego = val_map["ego-vpa"], zs = val_map["zero-shot"];
    const bool order = ego > zs + 0.10 && ego >= val_map["tpt"] &&
                       ego >= val_map["vpt"] && dt < 300.0;
    std::ostringstream d;
    d << "val mAP ego " << ego << " zs " << zs << " tpt " << val_map["tpt"]
      << " vpt " << val_map["vpt"] << ", " << dt << " s";
    report(8, "end-to-end-ordering", order, d.str());

    // full method report, informational only
    std::printf("      method ordering report (val multi-label mAP):\n");
    for (const auto& [m, v] : val_map)
      std::printf("        %-10s %.4f\n", m.c_str(), v);
  }

  // criterion 9: full ablation grid
  {
    const fs::path abl = work / "abl";
    bool aok =
        run_cmd("ablate --grid " + grid + " --dataset " + data + " --out " +
                abl.string()) == 0;
    int t3_rows = 0;
    std::string detail;
    if (aok) {
      std::ifstream t3(abl / "table3.csv");
      std::string line;
      std::getline(t3, line);
      aok = aok &&
            line ==
                "variant,prompt_generation,cross_modality,orthogonality,"
                "query_mode,val_map,val_top1";
      while (std::getline(t3, line))
        if (!line.empty()) ++t3_rows;
      aok = aok && t3_rows == 7;
      for (const std::string axis :
           {"basis_size", "k_ratio", "boundary", "data_fraction"}) {
        const std::string body = read_file(abl / ("sweep_" + axis + ".csv"));
        aok = aok && body.rfind(axis + ",val_map,val_top1", 0) == 0;
      }
      aok = aok &&
            read_file(abl / "sweep_k_ratio.csv").find("\n0.8,") !=
                std::string::npos;
      detail = "7 table rows, 4 sweeps, k/B=0.8 present";
    } else {
      detail = "harness failed";
    }
    report(9, "ablation-harness", aok, detail);
  }

  // criterion 10: byte-level reproducibility of a full command
  {
    bool dok = run_cmd("train --config " + cfg + " --dataset " + data +
                       " --phase adapt --method ego-vpa --pretrain " + pre +
                       " --out " + (work / "rep").string()) == 0;
    dok = dok && read_file(work / "m-ego-vpa" / "log.jsonl") ==
                     read_file(work / "rep" / "log.jsonl");
    dok = dok && read_file(work / "m-ego-vpa" / "checkpoint.ckpt") ==
                     read_file(work / "rep" / "checkpoint.ckpt");
    report(10, "determinism", dok,
           dok ? "re-run logs and checkpoint byte-identical"
               : "re-run diverged");
  }
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "vpa_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  criterion_gradients();
  criterion_subspace_oracle();
  criterion_eq6_identity();
  criterion_orthogonality();
  criterion_sampling();
  criterion_param_accounting();
  criterion_metric_oracles();
  criteria_end_to_end(work);

  fs::remove_all(work);
  std::printf("%s: %d/10 criteria passed\n",
              g_failures == 0 ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL",
              10 - g_failures);
  return g_failures == 0 ? 0 : 1;
}
