#include "vpa/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace vpa {

using nlohmann::json;

Model build_model(const ModelConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng(cfg.train.seed);
  m.text = std::make_unique<TextEncoder>(cfg.enc, rng, m.store);
  m.video = std::make_unique<VideoEncoder>(cfg.enc, rng, m.store);

  const Method method = cfg.train.method;
  if (method == Method::kTpt || method == Method::kVop ||
      method == Method::kVopC || method == Method::kVopFC) {
    m.tpt_prompts = m.store.add(
        "tpt.prompts",
        Tensor::randn({cfg.prompt.text_prompts, cfg.enc.d_txt}, rng, 0.02));
  }
  if (method == Method::kVpt || method == Method::kVop) {
    for (int l = 0; l < cfg.enc.layers; ++l)
      m.vpt_prompts.push_back(m.store.add(
          "vpt.layer" + std::to_string(l),
          Tensor::randn({cfg.prompt.video_prompts, cfg.enc.d_vid}, rng, 0.02)));
  }
  if (method == Method::kVopC || method == Method::kVopFC) {
    m.cmm = CmmParams::create(cfg.enc.d_vid, cfg.enc.frames,
                              cfg.prompt.video_prompts, rng, m.store);
    m.has_cmm = true;
  }
  if (method == Method::kEgoVpa) {
    m.basis = PromptBasis(cfg.prompt.basis_size, cfg.prompt.d_f, rng, m.store);
    m.vid_adapter = ModalityAdapter::create("video", cfg.enc.d_vid,
                                            cfg.prompt.d_f, rng, m.store);
    m.has_basis = true;
    if (cfg.prompt.cross_modal) {
      m.txt_adapter = ModalityAdapter::create("text", cfg.enc.d_txt,
                                              cfg.prompt.d_f, rng, m.store);
      m.has_txt_adapter = true;
    }
  }
  return m;
}

namespace {

bool starts_with(const std::string& s, const std::string& p) {
  return s.rfind(p, 0) == 0;
}
bool ends_with(const std::string& s, const std::string& p) {
  return s.size() >= p.size() && s.compare(s.size() - p.size(), p.size(), p) == 0;
}

bool is_trainable_name(Method method, const std::string& name) {
  switch (method) {
    case Method::kZeroShot: return false;
    case Method::kFull: return true;
    case Method::kBias: return ends_with(name, ".bias");
    case Method::kTpt: return name == "tpt.prompts";
    case Method::kVpt: return starts_with(name, "vpt.");
    case Method::kVop:
      return name == "tpt.prompts" || starts_with(name, "vpt.");
    case Method::kVopC:
    case Method::kVopFC:
      return name == "tpt.prompts" || starts_with(name, "cmm.");
    case Method::kEgoVpa:
      return name == "basis.F" || starts_with(name, "adapter.");
  }
  return false;
}

}  // namespace

std::vector<Tensor> trainable_params(const Model& m,
                                     std::vector<std::string>* names) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : m.store.items())
    if (is_trainable_name(m.method(), name)) {
      out.push_back(t);
      if (names) names->push_back(name);
    }
  return out;
}

namespace {

// the method's prompt closures for one item; rec (when non-null) collects the
// layer-0 reconstruction terms
struct PromptClosures {
  VideoPromptFn vfn;
  TextPromptFn tfn;
  AttnModeFn mode;
  int video_prompts_per_frame = 0;
};

PromptClosures make_closures(Model& m, Method method, bool training,
                             SamplerState* sampler, SynItemTerms* rec) {
  PromptClosures c;
  const auto& cfg = m.cfg;
  const int T = cfg.enc.frames;

  switch (method) {
    case Method::kZeroShot:
    case Method::kFull:
    case Method::kBias:
      break;
    case Method::kTpt:
      c.tfn = [&m](int layer, const Tensor&) {
        return layer == 0 ? m.tpt_prompts : Tensor();
      };
      break;
    case Method::kVpt:
      c.video_prompts_per_frame = cfg.prompt.video_prompts;
      c.vfn = [&m, T](int layer, const Tensor&) {
        std::vector<Tensor> reps(T, m.vpt_prompts[layer]);
        return concat_rows(reps);
      };
      break;
    case Method::kVop: {
      auto tpt = make_closures(m, Method::kTpt, training, sampler, rec);
      auto vpt = make_closures(m, Method::kVpt, training, sampler, rec);
      c.tfn = tpt.tfn;
      c.vfn = vpt.vfn;
      c.video_prompts_per_frame = vpt.video_prompts_per_frame;
      break;
    }
    case Method::kVopC:
    case Method::kVopFC: {
      auto tpt = make_closures(m, Method::kTpt, training, sampler, rec);
      c.tfn = tpt.tfn;
      c.video_prompts_per_frame = cfg.prompt.video_prompts;
      c.vfn = [&m](int, const Tensor& ctx) {
        return cmm_generate(ctx, m.cmm, m.cfg.prompt.video_prompts);
      };
      if (method == Method::kVopFC) {
        const int K = cfg.prompt.boundary;
        c.mode = [K](int layer) {
          return layer < K ? AttnMode::kIntra : AttnMode::kInter;
        };
      }
      break;
    }
    case Method::kEgoVpa: {
      const int k = cfg.prompt.topk;
      c.video_prompts_per_frame = k;
      const bool sample = training && sampler && cfg.prompt.sampled_query;
      c.vfn = [&m, T, k, training, sample, sampler, rec](int layer,
                                                         const Tensor& ctx) {
        std::vector<Tensor> packs;
        packs.reserve(T);
        for (int f = 0; f < T; ++f) {
          Tensor hz = project(slice_rows(ctx, f, f + 1), m.vid_adapter);
          SubspaceSelection sel =
              sample ? select_sampled(hz.values(), m.basis, k, *sampler)
                     : select_topk(hz.values(), m.basis, k, training);
          if (layer == 0 && rec) {
            rec->video_hz.push_back(hz);
            rec->video_sel.push_back(sel);
          }
          packs.push_back(synthesize(sel, m.basis, m.vid_adapter));
        }
        return concat_rows(packs);
      };
      if (cfg.prompt.cross_modal) {
        const bool per_layer = cfg.prompt.per_layer_text_prompts;
        c.tfn = [&m, k, training, sample, sampler, rec, per_layer](
                    int layer, const Tensor& eos) -> Tensor {
          if (layer > 0 && !per_layer) return Tensor();
          Tensor q = reshape(eos, {1, static_cast<int>(eos.numel())});
          Tensor hz = project(q, m.txt_adapter);
          SubspaceSelection sel =
              sample ? select_sampled(hz.values(), m.basis, k, *sampler)
                     : select_topk(hz.values(), m.basis, k, training);
          if (layer == 0 && rec) {
            rec->text_hz = hz;
            rec->text_sel = sel;
          }
          return synthesize(sel, m.basis, m.txt_adapter);
        };
      }
      const int K = cfg.prompt.boundary;
      c.mode = [K](int layer) {
        return layer < K ? AttnMode::kIntra : AttnMode::kInter;
      };
      break;
    }
  }
  return c;
}

Tensor patch_tensor(const Model& m, const PairedItem& item) {
  const auto& e = m.cfg.enc;
  std::vector<double> v(item.patches.begin(), item.patches.end());
  return Tensor::from({e.frames * e.patches, e.patch_dim}, std::move(v));
}

ItemForward forward_item_as(Model& m, Method method, const PairedItem& item,
                            bool training, SamplerState* sampler) {
  ItemForward out;
  out.has_syn = training && method == Method::kEgoVpa;
  auto c = make_closures(m, method, training, sampler,
                         out.has_syn ? &out.syn : nullptr);
  out.video_feat = m.video->encode_item(patch_tensor(m, item),
                                        c.video_prompts_per_frame, c.vfn, c.mode);
  out.text_feat = m.text->encode_item(item.tokens, c.tfn);
  return out;
}

BatchForward forward_batch_as(Model& m, Method method, const Dataset& ds,
                              const std::vector<int>& idx, bool training,
                              SamplerState* sampler) {
  if (idx.empty()) throw DataError("forward_batch: empty batch");
  BatchForward out;
  std::vector<Tensor> vf, tf;
  for (int i : idx) {
    auto f = forward_item_as(m, method, ds.items[i], training, sampler);
    vf.push_back(f.video_feat);
    tf.push_back(f.text_feat);
    if (f.has_syn) out.syn.push_back(std::move(f.syn));
  }
  out.video_feats = concat_rows(vf);
  out.text_feats = concat_rows(tf);
  return out;
}

}  // namespace

ItemForward forward_item(Model& m, const PairedItem& item, bool training,
                         SamplerState* sampler) {
  return forward_item_as(m, m.method(), item, training, sampler);
}

BatchForward forward_batch(Model& m, const Dataset& ds,
                           const std::vector<int>& idx, bool training,
                           SamplerState* sampler) {
  return forward_batch_as(m, m.method(), ds, idx, training, sampler);
}

Tensor encode_video_eval(Model& m, const PairedItem& item) {
  auto c = make_closures(m, m.method(), false, nullptr, nullptr);
  return m.video->encode_item(patch_tensor(m, item), c.video_prompts_per_frame,
                              c.vfn, c.mode);
}

Tensor encode_text_eval(Model& m, const std::vector<int>& tokens) {
  auto c = make_closures(m, m.method(), false, nullptr, nullptr);
  return m.text->encode_item(tokens, c.tfn);
}

EvalResult evaluate(Model& m, const Dataset& ds, Split split) {
  const auto idx = ds.split_indices(split);
  if (idx.empty())
    throw DataError("evaluate: split " + split_name(split) + " is empty");
  const int n = static_cast<int>(idx.size());
  const int C = ds.cfg.n_concepts;
  const int d = m.cfg.enc.embed_dim;

  std::vector<std::vector<double>> vfeat(n), tfeat(n);
  for (int i = 0; i < n; ++i) {
    vfeat[i] = encode_video_eval(m, ds.items[idx[i]]).values();
    tfeat[i] = encode_text_eval(m, ds.items[idx[i]].tokens).values();
  }
  std::vector<std::vector<double>> cfeat(C);
  for (int c = 0; c < C; ++c)
    cfeat[c] = encode_text_eval(m, ds.class_template(c)).values();

  auto dot = [d](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += a[j] * b[j];
    return s;
  };

  EvalResult out;
  ScoreMatrix scores = ScoreMatrix::zeros(n, C);
  ScoreMatrix rel = ScoreMatrix::zeros(n, C);
  std::vector<int> primary(n);
  for (int i = 0; i < n; ++i) {
    const auto& item = ds.items[idx[i]];
    primary[i] = item.labels[0];
    for (int c = 0; c < C; ++c) scores.set(i, c, dot(vfeat[i], cfeat[c]));
    for (int l : item.labels) rel.set(i, l, 1.0);
  }
  out.map = multilabel_map(scores, rel);
  const auto acc = accuracy(scores, primary);
  out.top1 = acc.top1;
  out.mean_class = acc.mean_class;

  ScoreMatrix sim = ScoreMatrix::zeros(n, n);
  ScoreMatrix pair_rel = ScoreMatrix::zeros(n, n);
  for (int i = 0; i < n; ++i) {
    pair_rel.set(i, i, 1.0);
    for (int j = 0; j < n; ++j) sim.set(i, j, dot(vfeat[i], tfeat[j]));
  }
  out.retrieval = retrieval_metrics(sim, pair_rel);
  return out;
}

std::string epoch_record(const Model& m, const EpochStats& s,
                         const std::string& phase) {
  json rec = {{"phase", phase},
              {"epoch", s.epoch},
              {"loss_cl", s.loss_cl},
              {"gamma", s.gamma},
              {"val_map", s.val.map},
              {"val_top1", s.val.top1},
              {"val_mean_class", s.val.mean_class},
              {"val_v2t_map", s.val.retrieval.v2t.map},
              {"val_v2t_ndcg", s.val.retrieval.v2t.ndcg},
              {"val_t2v_map", s.val.retrieval.t2v.map},
              {"val_t2v_ndcg", s.val.retrieval.t2v.ndcg}};
  if (phase == "adapt" && m.method() == Method::kEgoVpa) {
    rec["loss_syn"] = s.loss_syn;
    rec["gram_offdiag_max"] = s.gram_offdiag_max;
    rec["selection_counts"] = m.basis.counts();
  }
  return rec.dump();
}

namespace {

std::vector<EpochStats> train_phase(Model& m, const Dataset& ds, Split split,
                                    Method method, const TrainConfig& tc,
                                    const RunOptions& opt,
                                    const std::string& phase) {
  std::vector<int> pool = ds.split_indices(split);
  if (pool.empty())
    throw DataError("training split " + split_name(split) + " is empty");
  if (opt.data_fraction <= 0.0 || opt.data_fraction > 1.0)
    throw ConfigError("data_fraction must be in (0,1]");
  const int n_used = std::max(
      1, static_cast<int>(std::lround(opt.data_fraction * pool.size())));
  pool.resize(n_used);

  std::vector<Tensor> params;
  std::vector<std::string> names;
  for (const auto& [name, t] : m.store.items())
    if (is_trainable_name(method, name)) {
      params.push_back(t);
      names.push_back(name);
    }
  // freeze everything the method does not tune
  for (const auto& [name, t] : m.store.items()) {
    Tensor p = t;
    p.set_requires_grad(is_trainable_name(method, name));
  }
  std::vector<bool> no_decay(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    no_decay[i] = ends_with(names[i], ".bias") || ends_with(names[i], ".gain");

  AdamW optim(tc.lr, 0.9, 0.999, 1e-8, tc.weight_decay);
  const bool ego = method == Method::kEgoVpa;
  SamplerState sampler{0.0, Rng(tc.seed ^ 0x5eedfacecafef00dULL)};
  Rng shuffle_rng(tc.seed ^ 0xba7c4e11ULL);

  std::vector<EpochStats> log;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    EpochStats st;
    st.epoch = epoch;
    st.gamma = ego ? gamma_at(epoch, tc) : 0.0;
    sampler.gamma = st.gamma;
    if (ego) m.basis.reset_counts();
    shuffle_rng.shuffle(pool);

    double cl_sum = 0.0, syn_sum = 0.0;
    int steps = 0;
    for (std::size_t b0 = 0; b0 < pool.size();
         b0 += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t b1 =
          std::min(pool.size(), b0 + static_cast<std::size_t>(tc.batch_size));
      std::vector<int> batch(pool.begin() + b0, pool.begin() + b1);
      auto bf =
          forward_batch_as(m, method, ds, batch, true, ego ? &sampler : nullptr);
      Tensor cl = info_nce(bf.video_feats, bf.text_feats, m.cfg.loss.tau);
      Tensor loss = cl;
      double syn_val = 0.0;
      if (ego && !bf.syn.empty()) {
        Tensor syn = syn_loss(bf.syn, m.basis, m.cfg.prompt.orth_variant,
                              m.cfg.prompt.orth_penalty);
        syn_val = syn.item();
        loss = total_loss(cl, &syn, m.cfg.loss.lambda);
      }
      if (!std::isfinite(loss.item()))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
      for (auto& p : params) p.zero_grad();
      backward(loss);
      optim.step(params, no_decay);
      if (ego) m.basis.renormalize_rows();
      cl_sum += cl.item();
      syn_sum += syn_val;
      ++steps;
    }
    st.loss_cl = cl_sum / steps;
    st.loss_syn = syn_sum / steps;
    if (ego) st.gram_offdiag_max = m.basis.gram_offdiag_max();
    if (opt.eval_each_epoch) st.val = evaluate(m, ds, Split::kAdaptVal);
    if (opt.log) *opt.log << epoch_record(m, st, phase) << "\n";
    log.push_back(st);
  }
  return log;
}

}  // namespace

std::vector<EpochStats> run_pretraining(Model& m, const Dataset& ds,
                                        const TrainConfig& tc,
                                        const RunOptions& opt) {
  return train_phase(m, ds, Split::kPretrain, Method::kFull, tc, opt,
                     "pretrain");
}

std::vector<EpochStats> run_adaptation(Model& m, const Dataset& ds,
                                       const RunOptions& opt) {
  if (m.method() == Method::kZeroShot) return {};
  return train_phase(m, ds, Split::kAdaptTrain, m.method(), m.cfg.train, opt,
                     "adapt");
}

}  // namespace vpa
