#include <chrono>
#include <cmath>
#include <map>
#include <set>

#include "vpa/kernels.hpp"
#include "vpa/pipeline.hpp"
#include "vpa/training.hpp"
#include "vpa/verify.hpp"

namespace vpa {

void SuiteResult::note(std::ostream& out, const std::string& name, bool ok,
                       const std::string& detail) {
  ++checks;
  if (!ok) ++failures;
  out << (ok ? "ok   " : "FAIL ") << name;
  if (!detail.empty()) out << "  (" << detail << ")";
  out << "\n";
}

namespace {

Tensor leaf(Shape s, Rng& rng, double std = 0.5) {
  return Tensor::randn(std::move(s), rng, std, true);
}

// scalarize a tensor-valued op so one backward sweep covers every output
Tensor pot(const Tensor& t) { return sum_all(square(add_scalar(t, 0.3))); }

double max_abs_diff(const std::vector<double>& a,
                    const std::vector<double>& b) {
  double mx = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    mx = std::max(mx, std::fabs(a[i] - b[i]));
  return mx;
}

}  // namespace

SuiteResult grad_suite(std::ostream& out, bool inject_fault) {
  SuiteResult res;
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kSeeds = 100;
  constexpr double kTol = 1e-5;

  struct OpCase {
    std::string name;
    std::function<double(Rng&)> run;  // returns worst relative error
  };
  std::vector<OpCase> cases;

  cases.push_back({"matmul", [](Rng& r) {
    Tensor a = leaf({3, 4}, r), b = leaf({4, 2}, r);
    return finite_diff_check([&] { return pot(matmul(a, b)); }, {a, b});
  }});
  cases.push_back({"linear", [](Rng& r) {
    Tensor x = leaf({3, 4}, r), w = leaf({4, 2}, r), b = leaf({2}, r);
    return finite_diff_check([&] { return pot(linear(x, w, &b)); }, {x, w, b});
  }});
  cases.push_back({"transpose", [](Rng& r) {
    Tensor a = leaf({3, 4}, r);
    return finite_diff_check([&] { return pot(transpose(a)); }, {a});
  }});
  cases.push_back({"add_sub_mul", [](Rng& r) {
    Tensor a = leaf({3, 3}, r), b = leaf({3, 3}, r);
    return finite_diff_check(
        [&] { return pot(mul(sub(add(a, b), mul(a, b)), a)); }, {a, b});
  }});
  cases.push_back({"scale_add_scalar", [](Rng& r) {
    Tensor a = leaf({2, 5}, r);
    return finite_diff_check([&] { return pot(add_scalar(scale(a, -1.7), 0.4)); },
                             {a});
  }});
  cases.push_back({"square_sqrt", [](Rng& r) {
    Tensor a = leaf({2, 3}, r);
    return finite_diff_check(
        [&] { return pot(sqrt_clamped(add_scalar(square(a), 0.5))); }, {a});
  }});
  cases.push_back({"gelu", [](Rng& r) {
    Tensor a = leaf({2, 4}, r);
    return finite_diff_check([&] { return pot(gelu(a)); }, {a});
  }});
  cases.push_back({"sigmoid_tanh", [](Rng& r) {
    Tensor a = leaf({2, 4}, r);
    return finite_diff_check([&] { return pot(tanh_act(sigmoid(a))); }, {a});
  }});
  cases.push_back({"reshape", [](Rng& r) {
    Tensor a = leaf({2, 6}, r);
    return finite_diff_check([&] { return pot(reshape(a, {3, 4})); }, {a});
  }});
  cases.push_back({"softmax_rows", [](Rng& r) {
    Tensor a = leaf({3, 4}, r);
    return finite_diff_check([&] { return pot(softmax(a, 1)); }, {a});
  }});
  cases.push_back({"softmax_cols", [](Rng& r) {
    Tensor a = leaf({3, 4}, r);
    return finite_diff_check([&] { return pot(softmax(a, 0)); }, {a});
  }});
  cases.push_back({"layer_norm", [](Rng& r) {
    Tensor x = leaf({3, 5}, r), g = leaf({5}, r), b = leaf({5}, r);
    return finite_diff_check([&] { return pot(layer_norm(x, g, b)); },
                             {x, g, b});
  }});
  cases.push_back({"l2_normalize_rows", [](Rng& r) {
    Tensor x = leaf({3, 4}, r);
    return finite_diff_check([&] { return pot(l2_normalize_rows(x)); }, {x});
  }});
  cases.push_back({"concat_slice", [](Rng& r) {
    Tensor a = leaf({2, 4}, r), b = leaf({3, 4}, r);
    return finite_diff_check(
        [&] {
          std::vector<Tensor> parts{a, b};
          Tensor c = concat_rows(parts);
          return pot(slice_cols(slice_rows(c, 1, 4), 1, 3));
        },
        {a, b});
  }});
  cases.push_back({"concat_cols", [](Rng& r) {
    Tensor a = leaf({3, 2}, r), b = leaf({3, 3}, r);
    return finite_diff_check(
        [&] {
          std::vector<Tensor> parts{a, b};
          return pot(concat_cols(parts));
        },
        {a, b});
  }});
  cases.push_back({"gather_rows", [](Rng& r) {
    Tensor t = leaf({5, 3}, r);
    const std::vector<int> ids{4, 0, 2, 0};
    return finite_diff_check([&] { return pot(gather_rows(t, ids)); }, {t});
  }});
  cases.push_back({"mean_rows_row", [](Rng& r) {
    Tensor a = leaf({4, 3}, r);
    return finite_diff_check(
        [&] { return pot(add(mean_rows(a), row(a, 2))); }, {a});
  }});
  cases.push_back({"logsumexp_diagonal", [](Rng& r) {
    Tensor a = leaf({4, 4}, r);
    return finite_diff_check(
        [&] { return pot(add(logsumexp_rows(a), diagonal(a))); }, {a});
  }});
  cases.push_back({"masked_attention", [](Rng& r) {
    const int d = 4, n = 3, heads = 2;
    Tensor q = leaf({n, d}, r), kv = leaf({n, d}, r);
    AttentionParams p{leaf({d, d}, r), leaf({d}, r), leaf({d, d}, r),
                      leaf({d}, r),    leaf({d, d}, r), leaf({d}, r),
                      leaf({d, d}, r), leaf({d}, r)};
    Mask mask = Mask::all_true(n, n);
    mask.set(0, 2, false);
    mask.set(2, 0, false);
    return finite_diff_check(
        [&] { return pot(masked_attention(q, kv, mask, heads, p)); },
        {q, kv, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo});
  }});
  cases.push_back({"info_nce", [](Rng& r) {
    Tensor v = leaf({3, 4}, r), t = leaf({3, 4}, r);
    return finite_diff_check(
        [&] {
          return info_nce(l2_normalize_rows(v), l2_normalize_rows(t), 0.3);
        },
        {v, t});
  }});
  cases.push_back({"cmm_generate", [](Rng& r) {
    const int d = 4, T = 2, M = 2;
    ParamStore store;
    CmmParams p = CmmParams::create(d, T, M, r, store);
    Tensor ctx = leaf({T, d}, r);
    std::vector<Tensor> leaves{ctx};
    for (const auto& [n, t] : store.items()) leaves.push_back(t);
    return finite_diff_check([&] { return pot(cmm_generate(ctx, p, M)); },
                             leaves);
  }});
  cases.push_back({"recon_orth_syn", [](Rng& r) {
    ParamStore store;
    PromptBasis basis(3, 5, r, store);
    ModalityAdapter ad = ModalityAdapter::create("video", 4, 5, r, store);
    Tensor z = leaf({1, 4}, r);
    // selection frozen at the base point (straight-through contract)
    Tensor hz0 = project(z, ad);
    SubspaceSelection sel = select_topk(hz0.values(), basis, 2);
    return finite_diff_check(
        [&] {
          Tensor hz = project(z, ad);
          Tensor rl = recon_loss(hz, sel, basis);
          Tensor op = orth_penalty(basis, OrthVariant::kSquared);
          Tensor syn = pot(synthesize(sel, basis, ad));
          return add(add(rl, op), syn);
        },
        {z, basis.matrix(), ad.h_weight, ad.g_weight});
  }});

  if (inject_fault) {
    // backward claims d(x^2)/dx = 3x; the suite must flag it
    cases.push_back({"injected_fault", [](Rng& r) {
      Tensor a = leaf({2, 2}, r);
      auto bad_square = [](const Tensor& x) {
        std::vector<double> v = x.values();
        for (auto& e : v) e *= e;
        return make_node(x.shape(), std::move(v), {x},
                         [xi = x.impl()](detail::TensorImpl& self) {
                           for (std::size_t i = 0; i < self.grad.size(); ++i)
                             xi->grad[i] += 3.0 * xi->values[i] * self.grad[i];
                         });
      };
      return finite_diff_check([&] { return sum_all(bad_square(a)); }, {a});
    }});
  }

  for (const auto& c : cases) {
    double worst = 0.0;
    for (int s = 0; s < kSeeds; ++s) {
      Rng r(1000 + 77 * s);
      worst = std::max(worst, c.run(r));
    }
    res.note(out, "grad." + c.name, worst <= kTol,
             "max rel err " + std::to_string(worst));
  }

  // full training objective at microscopic dimensions, gradients taken with
  // respect to the adaptation-time trainable set
  {
    double worst = 0.0;
    for (int s = 0; s < kSeeds; ++s) {
      ModelConfig cfg;
      cfg.enc.layers = 1;
      cfg.enc.d_txt = 4;
      cfg.enc.d_vid = 4;
      cfg.enc.frames = 2;
      cfg.enc.patches = 1;
      cfg.enc.max_words = 4;
      cfg.enc.heads = 2;
      cfg.enc.vocab = 12;
      cfg.enc.patch_dim = 2;
      cfg.enc.embed_dim = 4;
      cfg.enc.mlp_ratio = 1;
      cfg.prompt.video_prompts = 2;
      cfg.prompt.text_prompts = 2;
      cfg.prompt.boundary = 1;
      cfg.prompt.basis_size = 3;
      cfg.prompt.topk = 2;
      cfg.prompt.d_f = 4;
      cfg.prompt.sampled_query = false;
      cfg.train.method = Method::kEgoVpa;
      cfg.train.seed = 5000 + s;
      Model m = build_model(cfg);
      Rng r(900 + s);
      Dataset ds;
      ds.cfg.n_concepts = 2;
      ds.cfg.frames = 2;
      ds.cfg.patches = 1;
      ds.cfg.patch_dim = 2;
      ds.cfg.vocab = 12;
      ds.cfg.max_words = 4;
      for (int i = 0; i < 2; ++i) {
        PairedItem it;
        it.id = i;
        it.split = Split::kAdaptTrain;
        it.patches.resize(4);
        for (auto& v : it.patches) v = static_cast<float>(r.gauss());
        it.tokens = {0, 6 + i, 1};
        it.labels = {i};
        ds.items.push_back(it);
      }

      // record the selections once, then hold them fixed: the discrete index
      // choice carries no gradient
      std::vector<SubspaceSelection> trace;
      std::size_t cursor = 0;
      bool recording = true;
      auto pick = [&](const Tensor& hz) {
        if (recording)
          trace.push_back(select_topk(hz.values(), m.basis, cfg.prompt.topk));
        return trace[cursor++];
      };
      auto loss_fn = [&]() -> Tensor {
        cursor = 0;
        std::vector<Tensor> vf, tf;
        std::vector<SynItemTerms> syn(ds.items.size());
        for (std::size_t i = 0; i < ds.items.size(); ++i) {
          const auto& item = ds.items[i];
          auto* terms = &syn[i];
          VideoPromptFn vfn = [&, terms](int layer, const Tensor& ctx) {
            std::vector<Tensor> packs;
            for (int f = 0; f < cfg.enc.frames; ++f) {
              Tensor hz = project(slice_rows(ctx, f, f + 1), m.vid_adapter);
              SubspaceSelection sel = pick(hz);
              if (layer == 0) {
                terms->video_hz.push_back(hz);
                terms->video_sel.push_back(sel);
              }
              packs.push_back(synthesize(sel, m.basis, m.vid_adapter));
            }
            return concat_rows(packs);
          };
          TextPromptFn tfn = [&, terms](int layer,
                                        const Tensor& eos) -> Tensor {
            if (layer > 0) return Tensor();
            Tensor q = reshape(eos, {1, static_cast<int>(eos.numel())});
            Tensor hz = project(q, m.txt_adapter);
            SubspaceSelection sel = pick(hz);
            terms->text_hz = hz;
            terms->text_sel = sel;
            return synthesize(sel, m.basis, m.txt_adapter);
          };
          std::vector<double> pv(item.patches.begin(), item.patches.end());
          Tensor patches = Tensor::from(
              {cfg.enc.frames * cfg.enc.patches, cfg.enc.patch_dim}, pv);
          AttnModeFn mode = [&](int layer) {
            return layer < cfg.prompt.boundary ? AttnMode::kIntra
                                               : AttnMode::kInter;
          };
          vf.push_back(
              m.video->encode_item(patches, cfg.prompt.topk, vfn, mode));
          tf.push_back(m.text->encode_item(item.tokens, tfn));
        }
        Tensor cl = info_nce(concat_rows(vf), concat_rows(tf), cfg.loss.tau);
        Tensor s2 = syn_loss(syn, m.basis, cfg.prompt.orth_variant, true);
        return total_loss(cl, &s2, cfg.loss.lambda);
      };
      (void)loss_fn().item();
      recording = false;
      worst = std::max(worst,
                       finite_diff_check(loss_fn, trainable_params(m), 1e-6));
    }
    res.note(out, "grad.full_objective", worst <= kTol,
             "max rel err " + std::to_string(worst));
  }

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  res.note(out, "grad.runtime_under_60s", secs < 60.0,
           std::to_string(secs) + " s");
  return res;
}

SuiteResult oracle_suite(std::ostream& out) {
  SuiteResult res;
  Rng rng(42);

  {  // matmul vs naive triple loop, parallel kernel vs serial reference
    double worst = 0.0, pdiff = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 1 + rng.uniform_int(8), k = 1 + rng.uniform_int(8),
                mm = 1 + rng.uniform_int(8);
      std::vector<double> a(static_cast<std::size_t>(n) * k),
          b(static_cast<std::size_t>(k) * mm);
      for (auto& v : a) v = rng.gauss();
      for (auto& v : b) v = rng.gauss();
      const auto want = oracle::matmul(a, b, n, k, mm);
      std::vector<double> got(want.size()), got_ser(want.size());
      kernels::matmul(a.data(), b.data(), got.data(), n, k, mm);
      kernels::serial::matmul(a.data(), b.data(), got_ser.data(), n, k, mm);
      worst = std::max(worst, max_abs_diff(want, got));
      pdiff = std::max(pdiff, max_abs_diff(got, got_ser));
    }
    res.note(out, "oracle.matmul_naive", worst <= 1e-12,
             "max diff " + std::to_string(worst));
    res.note(out, "oracle.matmul_parallel_serial_identical", pdiff == 0.0);
  }

  {  // masked attention vs naive oracle
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const int heads = 2, d = 6, nq = 4, nk = 5;
      Rng r(500 + trial);
      auto vec = [&](int n) {
        std::vector<double> v(n);
        for (auto& e : v) e = r.gauss();
        return v;
      };
      auto q = vec(nq * d), kv = vec(nk * d);
      auto wq = vec(d * d), wk = vec(d * d), wv = vec(d * d), wo = vec(d * d);
      auto bq = vec(d), bk = vec(d), bv = vec(d), bo = vec(d);
      Mask mask = Mask::all_true(nq, nk);
      for (int i = 0; i < nq; ++i)
        for (int j = 0; j < nk; ++j)
          if (r.uniform() < 0.3 && j != 0) mask.set(i, j, false);
      const auto want = oracle::attention(q, kv, nq, nk, d, heads, wq, bq, wk,
                                          bk, wv, bv, wo, bo, mask.allow);
      AttentionParams p{Tensor::from({d, d}, wq), Tensor::from({d}, bq),
                        Tensor::from({d, d}, wk), Tensor::from({d}, bk),
                        Tensor::from({d, d}, wv), Tensor::from({d}, bv),
                        Tensor::from({d, d}, wo), Tensor::from({d}, bo)};
      Tensor got = masked_attention(Tensor::from({nq, d}, q),
                                    Tensor::from({nk, d}, kv), mask, heads, p);
      worst = std::max(worst, max_abs_diff(want, got.values()));
    }
    res.note(out, "oracle.attention_naive", worst <= 1e-9,
             "max diff " + std::to_string(worst));
  }

  {  // top-k selection vs exhaustive subset minimization, Eq. 6 identity
    int mismatches = 0, skipped = 0, eq6_bad = 0;
    double max_gap = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      Rng r(10'000 + trial);
      const int B = 2 + r.uniform_int(9);  // 2..10
      const int d = B + r.uniform_int(4);
      ParamStore store;
      PromptBasis basis(B, d, r, store);
      std::vector<double> hz(d);
      for (auto& v : hz) v = r.gauss();
      double nrm = 0.0;
      for (double v : hz) nrm += v * v;
      nrm = std::sqrt(nrm);
      for (auto& v : hz) v /= nrm;
      for (int k = 1; k <= B; ++k) {
        SubspaceSelection sel = select_topk(hz, basis, k);
        // magnitude-distinctness guard
        std::vector<double> mags;
        for (int i = 0; i < B; ++i) {
          double dot = 0.0;
          for (int c = 0; c < d; ++c)
            dot += hz[c] * basis.matrix().values()[static_cast<std::size_t>(i) * d + c];
          mags.push_back(std::fabs(dot));
        }
        std::sort(mags.begin(), mags.end());
        bool distinct = true;
        for (int i = 1; i < B; ++i)
          if (mags[i] - mags[i - 1] < 1e-9) distinct = false;
        if (!distinct) {
          ++skipped;
          continue;
        }
        double best_r = 0.0;
        auto best = oracle::best_subset(hz, basis.matrix().values(), B, d, k,
                                        &best_r);
        auto got = sel.indices;
        std::sort(got.begin(), got.end());
        if (got != best) ++mismatches;
        const double got_r =
            oracle::subset_residual(hz, basis.matrix().values(), d, got);
        max_gap = std::max(max_gap, std::fabs(got_r - best_r));

        // Eq. 6: residual^2 = ||hz||^2 - ||alpha||^2 for orthonormal rows
        ParamStore s2;
        PromptBasis b2(B, d, r, s2);
        Tensor q = Tensor::from({1, d}, hz);
        SubspaceSelection sel2 = select_topk(hz, b2, k);
        const double rl = recon_loss(q, sel2, b2).item();
        double a2 = 0.0;
        for (double a : sel2.alpha) a2 += a * a;
        if (std::fabs(rl * rl + a2 - 1.0) > 1e-9) ++eq6_bad;
      }
    }
    res.note(out, "oracle.topk_exhaustive", mismatches == 0,
             std::to_string(mismatches) + " mismatches, " +
                 std::to_string(skipped) + " skipped ties, max residual gap " +
                 std::to_string(max_gap));
    res.note(out, "oracle.eq6_identity", eq6_bad == 0,
             std::to_string(eq6_bad) + " violations");
  }

  {  // project / synthesize naive oracles
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      Rng r(7'000 + trial);
      const int din = 5, df = 6, B = 4;
      ParamStore store;
      ModalityAdapter ad = ModalityAdapter::create("video", din, df, r, store);
      PromptBasis basis(B, df, r, store);
      std::vector<double> z(din);
      for (auto& v : z) v = r.gauss();
      auto hw = ad.h_weight.values();
      std::vector<double> want(df, 0.0);
      for (int j = 0; j < df; ++j)
        for (int i = 0; i < din; ++i)
          want[j] += z[i] * hw[static_cast<std::size_t>(i) * df + j];
      double nrm = 0.0;
      for (double v : want) nrm += v * v;
      nrm = std::sqrt(nrm + 1e-12);  // same stabilizer as the row normalizer
      for (auto& v : want) v /= nrm;
      Tensor got = project(Tensor::from({1, din}, z), ad);
      worst = std::max(worst, max_abs_diff(want, got.values()));

      SubspaceSelection sel = select_topk(got.values(), basis, 2);
      Tensor sv = synthesize(sel, basis, ad);
      const auto& gw = ad.g_weight.values();
      for (int ri = 0; ri < 2; ++ri)
        for (int c = 0; c < din; ++c) {
          double s = 0.0;
          for (int j = 0; j < df; ++j)
            s += basis.matrix().values()[static_cast<std::size_t>(
                     sel.indices[ri]) * df + j] *
                 gw[static_cast<std::size_t>(j) * din + c];
          worst = std::max(worst, std::fabs(s - sv.at(ri, c)));
        }
    }
    res.note(out, "oracle.project_synthesize_naive", worst <= 1e-12,
             "max diff " + std::to_string(worst));
  }

  {  // metric implementations vs brute-force oracles
    double w_map = 0.0, w_acc = 0.0, w_ret = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      Rng r(20'000 + trial);
      const int n = 2 + r.uniform_int(9), c = 2 + r.uniform_int(5);
      ScoreMatrix sc = ScoreMatrix::zeros(n, c), rel = ScoreMatrix::zeros(n, c);
      std::vector<double> scores_flat, rel_grades;
      std::vector<int> rel_flat, labels(n);
      for (int i = 0; i < n; ++i) {
        labels[i] = r.uniform_int(c);
        for (int j = 0; j < c; ++j) {
          const double s = r.gauss();
          const int rv = (j == labels[i] || r.uniform() < 0.3) ? 1 : 0;
          sc.set(i, j, s);
          rel.set(i, j, rv);
          scores_flat.push_back(s);
          rel_flat.push_back(rv);
        }
      }
      w_map = std::max(w_map, std::fabs(multilabel_map(sc, rel) -
                                        oracle::multilabel_map(scores_flat,
                                                               rel_flat, n, c)));
      const auto acc = accuracy(sc, labels);
      w_acc = std::max(
          w_acc, std::fabs(acc.top1 -
                           oracle::top1_accuracy(scores_flat, labels, n, c)));
      w_acc = std::max(w_acc,
                       std::fabs(acc.mean_class - oracle::mean_class_accuracy(
                                                      scores_flat, labels, n, c)));

      const int g = 2 + r.uniform_int(7);
      ScoreMatrix sim = ScoreMatrix::zeros(n, g), gr = ScoreMatrix::zeros(n, g);
      std::vector<double> sim_flat, gr_flat;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < g; ++j) {
          const double s = r.gauss();
          double rv = r.uniform() < 0.4 ? r.uniform() : 0.0;
          if (j == i % g) rv = std::max(rv, 0.5);  // every query has a hit
          sim.set(i, j, s);
          gr.set(i, j, rv);
          sim_flat.push_back(s);
          gr_flat.push_back(rv);
        }
      const auto got = retrieval_metrics_oneway(sim, gr);
      double om = 0.0, on = 0.0;
      oracle::retrieval(sim_flat, gr_flat, n, g, &om, &on);
      w_ret = std::max({w_ret, std::fabs(got.map - om), std::fabs(got.ndcg - on)});
    }
    res.note(out, "oracle.multilabel_map", w_map <= 1e-9,
             "max diff " + std::to_string(w_map));
    res.note(out, "oracle.accuracy", w_acc <= 1e-9,
             "max diff " + std::to_string(w_acc));
    res.note(out, "oracle.retrieval", w_ret <= 1e-9,
             "max diff " + std::to_string(w_ret));
  }

  {  // CMM: reversing the input swaps the recurrent directions exactly when
     // both directions share weights and heads are swap-symmetric
    Rng r(99);
    const int d = 4, T = 3, M = 2;
    ParamStore store;
    CmmParams p = CmmParams::create(d, T, M, r, store);
    p.wx_b.values() = p.wx_f.values();
    p.wh_b.values() = p.wh_f.values();
    p.b_b.values() = p.b_f.values();
    for (int f = 0; f < T; ++f) {
      auto& w = p.head_w[f].values();
      // make the top (forward) and bottom (backward) halves identical
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < M * d; ++j)
          w[static_cast<std::size_t>(d + i) * M * d + j] =
              w[static_cast<std::size_t>(i) * M * d + j];
      p.head_w[f].values() = p.head_w[0].values();
      p.head_b[f].values() = p.head_b[0].values();
    }
    std::vector<double> ctx(static_cast<std::size_t>(T) * d);
    for (auto& v : ctx) v = r.gauss();
    std::vector<double> rev(ctx.size());
    for (int f = 0; f < T; ++f)
      for (int c = 0; c < d; ++c)
        rev[static_cast<std::size_t>(f) * d + c] =
            ctx[static_cast<std::size_t>(T - 1 - f) * d + c];
    Tensor fwd_out = cmm_generate(Tensor::from({T, d}, ctx), p, M, true);
    Tensor rev_out = cmm_generate(Tensor::from({T, d}, rev), p, M, true);
    double worst = 0.0;
    for (int f = 0; f < T; ++f)
      for (int i = 0; i < M; ++i)
        for (int c = 0; c < d; ++c)
          worst = std::max(worst, std::fabs(fwd_out.at(f * M + i, c) -
                                            rev_out.at((T - 1 - f) * M + i, c)));
    res.note(out, "oracle.cmm_reversal_symmetry", worst <= 1e-9,
             "max diff " + std::to_string(worst));
  }

  {  // closed-form parameter counts at the reference-scale config
    const ModelConfig ref = ModelConfig::reference_scale();
    const std::size_t ego =
        ego_vpa_video_weights(ref.prompt.d_f, ref.prompt.basis_size,
                              ref.enc.d_vid);
    res.note(out, "oracle.ego_vpa_weight_formula", ego == 791'552ull,
             std::to_string(ego));
    const std::size_t cmm = cmm_weights(ref.prompt.video_prompts,
                                        ref.enc.frames, ref.enc.d_vid);
    res.note(out, "oracle.cmm_weight_formula", cmm == 160'432'128ull,
             std::to_string(cmm));
    const auto bd = count_params(ref, Method::kEgoVpa);
    res.note(out, "oracle.count_params_groups",
             bd.group("basis+video_adapter") == ego &&
                 bd.group("text_adapter") ==
                     2ull * ref.prompt.d_f * ref.enc.d_txt);
  }

  return res;
}

SuiteResult stats_suite(std::ostream& out) {
  SuiteResult res;

  {  // gamma schedule endpoints and midpoint
    TrainConfig tc;
    tc.epochs = 10;
    tc.ramp_fraction = 0.5;
    res.note(out, "stats.gamma_endpoints",
             gamma_at(0, tc) == 0.0 && gamma_at(10, tc) == 1.0 &&
                 gamma_at(5, tc) == 1.0);
    TrainConfig tc2 = tc;
    tc2.epochs = 8;
    res.note(out, "stats.gamma_quarter",
             std::fabs(gamma_at(2, tc2) - 0.5) < 1e-12);
  }

  {  // pi_m is a valid distribution for every gamma
    Rng r(3);
    ParamStore store;
    PromptBasis basis(6, 8, r, store);
    std::vector<double> hz(8);
    for (auto& v : hz) v = r.gauss();
    basis.counts() = {5, 0, 3, 1, 0, 9};
    bool ok = true;
    for (double g : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      auto pm = selection_distribution(hz, basis, g);
      double sum = 0.0;
      for (double p : pm) {
        if (p < 0.0) ok = false;
        sum += p;
      }
      if (std::fabs(sum - 1.0) > 1e-12) ok = false;
    }
    res.note(out, "stats.pi_m_valid_distribution", ok);
  }

  {  // gamma = 0, uniform counts: empirical frequency uniform within TV 0.05
    Rng r(11);
    const int B = 8;
    ParamStore store;
    PromptBasis basis(B, 8, r, store);
    std::vector<double> hz(8);
    for (auto& v : hz) v = r.gauss();
    SamplerState sampler{0.0, Rng(77)};
    std::vector<long> freq(B, 0);
    const int draws = 100'000;
    for (int i = 0; i < draws; ++i) {
      auto sel = select_sampled(hz, basis, 1, sampler);
      ++freq[sel.indices[0]];
      basis.reset_counts();
    }
    double tv = 0.0;
    for (long f : freq)
      tv += std::fabs(static_cast<double>(f) / draws - 1.0 / B);
    tv *= 0.5;
    res.note(out, "stats.uniform_tv", tv <= 0.05,
             "TV " + std::to_string(tv));
  }

  {  // gamma = 0, skewed counts: frequency ranking matches pi_invf ranking
    Rng r(12);
    const int B = 5;
    ParamStore store;
    PromptBasis basis(B, 8, r, store);
    std::vector<double> hz(8);
    for (auto& v : hz) v = r.gauss();
    const std::vector<long> skew{9, 0, 0, 0, 0};
    SamplerState sampler{0.0, Rng(78)};
    std::vector<long> freq(B, 0);
    const int draws = 100'000;
    for (int i = 0; i < draws; ++i) {
      basis.counts() = skew;
      auto sel = select_sampled(hz, basis, 1, sampler);
      ++freq[sel.indices[0]];
    }
    bool least = true;
    for (int i = 1; i < B; ++i)
      if (freq[0] >= freq[i]) least = false;
    res.note(out, "stats.invf_count_skew", least,
             "freq[0] " + std::to_string(freq[0]));
  }

  {  // gamma = 1 with one dominant (sharpened) dot: draws match top-k
    Rng r(13);
    const int B = 6, k = 2;
    ParamStore store;
    PromptBasis basis(B, 8, r, store);
    // query strongly aligned with rows 0 and 1
    std::vector<double> hz(8, 0.0);
    const auto& F = basis.matrix().values();
    for (int c = 0; c < 8; ++c)
      hz[c] = 20.0 * F[c] + 12.0 * F[8 + c];
    auto want = select_topk(hz, basis, k).indices;
    std::sort(want.begin(), want.end());
    SamplerState sampler{1.0, Rng(79)};
    int hits = 0;
    const int draws = 10'000;
    for (int i = 0; i < draws; ++i) {
      auto got = select_sampled(hz, basis, k, sampler).indices;
      std::sort(got.begin(), got.end());
      if (got == want) ++hits;
      basis.reset_counts();
    }
    const double rate = static_cast<double>(hits) / draws;
    res.note(out, "stats.dominant_dot_matches_topk", rate >= 0.99,
             "match rate " + std::to_string(rate));
  }

  return res;
}

}  // namespace vpa
