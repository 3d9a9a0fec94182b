#include "vpa/prompting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vpa {

PromptBasis::PromptBasis(int basis_size, int d_f, Rng& rng, ParamStore& store,
                         const std::string& name)
    : B_(basis_size), d_f_(d_f), counts_(basis_size, 0) {
  if (basis_size > d_f)
    throw ConfigError("basis size " + std::to_string(basis_size) +
                      " exceeds latent width " + std::to_string(d_f) +
                      "; orthonormal rows impossible");
  std::vector<double> rows(static_cast<std::size_t>(basis_size) * d_f);
  for (auto& v : rows) v = rng.gauss();
  // Gram-Schmidt
  for (int i = 0; i < basis_size; ++i) {
    double* ri = rows.data() + static_cast<std::size_t>(i) * d_f;
    for (int j = 0; j < i; ++j) {
      const double* rj = rows.data() + static_cast<std::size_t>(j) * d_f;
      double dot = 0.0;
      for (int c = 0; c < d_f; ++c) dot += ri[c] * rj[c];
      for (int c = 0; c < d_f; ++c) ri[c] -= dot * rj[c];
    }
    double nrm = 0.0;
    for (int c = 0; c < d_f; ++c) nrm += ri[c] * ri[c];
    nrm = std::sqrt(nrm);
    if (nrm < 1e-12)
      throw NumericError("degenerate draw during basis orthonormalization");
    for (int c = 0; c < d_f; ++c) ri[c] /= nrm;
  }
  F_ = store.add(name, Tensor::from({basis_size, d_f}, std::move(rows)));
}

void PromptBasis::renormalize_rows() {
  auto& v = F_.values();
  for (int i = 0; i < B_; ++i) {
    double* ri = v.data() + static_cast<std::size_t>(i) * d_f_;
    double nrm = 0.0;
    for (int c = 0; c < d_f_; ++c) nrm += ri[c] * ri[c];
    nrm = std::sqrt(nrm);
    // skip degenerate rows and rows already unit within rounding, so a
    // no-op training step leaves the matrix bit-identical
    if (nrm < 1e-12 || std::fabs(nrm - 1.0) < 1e-12) continue;
    for (int c = 0; c < d_f_; ++c) ri[c] /= nrm;
  }
}

double PromptBasis::gram_offdiag_max() const {
  const auto& v = F_.values();
  double mx = 0.0;
  for (int i = 0; i < B_; ++i)
    for (int j = i + 1; j < B_; ++j) {
      double dot = 0.0;
      for (int c = 0; c < d_f_; ++c)
        dot += v[static_cast<std::size_t>(i) * d_f_ + c] *
               v[static_cast<std::size_t>(j) * d_f_ + c];
      mx = std::max(mx, std::fabs(dot));
    }
  return mx;
}

ModalityAdapter ModalityAdapter::create(const std::string& modality, int d_io,
                                        int d_f, Rng& rng, ParamStore& store) {
  ModalityAdapter a;
  a.modality = modality;
  a.h_weight = store.add(
      "adapter." + modality + ".h.weight",
      Tensor::randn({d_io, d_f}, rng, 1.0 / std::sqrt(static_cast<double>(d_io))));
  a.g_weight = store.add(
      "adapter." + modality + ".g.weight",
      Tensor::randn({d_f, d_io}, rng, 1.0 / std::sqrt(static_cast<double>(d_f))));
  return a;
}

std::vector<double> SubspaceSelection::one_hot(int basis_size) const {
  std::vector<double> a(static_cast<std::size_t>(basis_size) * indices.size(),
                        0.0);
  for (std::size_t c = 0; c < indices.size(); ++c)
    a[static_cast<std::size_t>(indices[c]) * indices.size() + c] = 1.0;
  return a;
}

Tensor project(const Tensor& z, const ModalityAdapter& adapter) {
  if (z.cols() != adapter.h_weight.rows())
    throw ShapeError("project: feature width " + std::to_string(z.cols()) +
                     " does not match adapter input " +
                     std::to_string(adapter.h_weight.rows()));
  return l2_normalize_rows(matmul(z, adapter.h_weight));
}

namespace {

std::vector<double> basis_dots(const std::vector<double>& hz,
                               const PromptBasis& basis) {
  const int B = basis.size(), d = basis.dim();
  if (static_cast<int>(hz.size()) != d)
    throw ShapeError("query width " + std::to_string(hz.size()) +
                     " does not match basis dim " + std::to_string(d));
  const auto& F = basis.matrix().values();
  std::vector<double> dots(B, 0.0);
  for (int i = 0; i < B; ++i)
    for (int c = 0; c < d; ++c)
      dots[i] += hz[c] * F[static_cast<std::size_t>(i) * d + c];
  return dots;
}

double vec_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

SubspaceSelection finish_selection(std::vector<int> idx,
                                   const std::vector<double>& dots,
                                   const std::vector<double>& hz) {
  SubspaceSelection sel;
  sel.indices = std::move(idx);
  sel.alpha.reserve(sel.indices.size());
  for (int i : sel.indices) sel.alpha.push_back(dots[i]);
  sel.query_norm = vec_norm(hz);
  return sel;
}

}  // namespace

SubspaceSelection select_topk(const std::vector<double>& hz, PromptBasis& basis,
                              int k, bool training) {
  const int B = basis.size();
  if (k < 1 || k > B) throw ConfigError("select_topk: k out of range");
  const auto dots = basis_dots(hz, basis);
  std::vector<int> order(B);
  std::iota(order.begin(), order.end(), 0);
  // descending by |dot| (the subset maximizing ||alpha|| for orthonormal F),
  // ties broken by lowest index
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::fabs(dots[a]) > std::fabs(dots[b]);
  });
  std::vector<int> idx(order.begin(), order.begin() + k);
  if (training)
    for (int i : idx) ++basis.counts()[i];
  return finish_selection(std::move(idx), dots, hz);
}

std::vector<double> selection_distribution(const std::vector<double>& hz,
                                           const PromptBasis& basis,
                                           double gamma) {
  const int B = basis.size();
  const auto dots = basis_dots(hz, basis);
  // pi_sim: softmax over dot products
  double mx = *std::max_element(dots.begin(), dots.end());
  std::vector<double> sim(B);
  double zsum = 0.0;
  for (int i = 0; i < B; ++i) {
    sim[i] = std::exp(dots[i] - mx);
    zsum += sim[i];
  }
  for (auto& s : sim) s /= zsum;
  // pi_invf: proportional to 1/(count+1)
  std::vector<double> invf(B);
  double isum = 0.0;
  for (int i = 0; i < B; ++i) {
    invf[i] = 1.0 / (static_cast<double>(basis.counts()[i]) + 1.0);
    isum += invf[i];
  }
  for (auto& v : invf) v /= isum;
  std::vector<double> pm(B);
  for (int i = 0; i < B; ++i)
    pm[i] = gamma * sim[i] + (1.0 - gamma) * invf[i];
  return pm;
}

SubspaceSelection select_sampled(const std::vector<double>& hz,
                                 PromptBasis& basis, int k,
                                 SamplerState& sampler) {
  const int B = basis.size();
  if (k < 1 || k > B) throw ConfigError("select_sampled: k out of range");
  if (sampler.gamma < 0.0 || sampler.gamma > 1.0)
    throw ConfigError("sampler gamma outside [0,1]");
  const auto dots = basis_dots(hz, basis);
  std::vector<double> pm = selection_distribution(hz, basis, sampler.gamma);
  std::vector<int> idx;
  idx.reserve(k);
  std::vector<bool> taken(B, false);
  for (int draw = 0; draw < k; ++draw) {
    double rest = 0.0;
    for (int i = 0; i < B; ++i)
      if (!taken[i]) rest += pm[i];
    double u = sampler.rng.uniform() * rest;
    int pick = -1;
    for (int i = 0; i < B; ++i) {
      if (taken[i]) continue;
      u -= pm[i];
      pick = i;
      if (u < 0.0) break;
    }
    taken[pick] = true;
    idx.push_back(pick);
  }
  for (int i : idx) ++basis.counts()[i];
  return finish_selection(std::move(idx), dots, hz);
}

Tensor synthesize(const SubspaceSelection& sel, const PromptBasis& basis,
                  const ModalityAdapter& adapter) {
  for (int i : sel.indices)
    if (i < 0 || i >= basis.size())
      throw ConfigError("selection index out of basis range");
  Tensor rows = gather_rows(basis.matrix(), sel.indices);
  return matmul(rows, adapter.g_weight);
}

Tensor recon_loss(const Tensor& hz, const SubspaceSelection& sel,
                  const PromptBasis& basis) {
  Tensor q = hz.rank() == 1 ? reshape(hz, {1, static_cast<int>(hz.numel())})
                            : hz;
  if (sel.indices.empty()) {
    // degenerate k = 0: residual is the query itself
    return sqrt_clamped(sum_all(square(q)));
  }
  Tensor fsel = gather_rows(basis.matrix(), sel.indices);  // [k x d_f]
  Tensor alpha = matmul(q, transpose(fsel));               // [1 x k]
  Tensor recon = matmul(alpha, fsel);                      // [1 x d_f]
  return sqrt_clamped(sum_all(square(sub(recon, q))));
}

Tensor orth_penalty(const PromptBasis& basis, OrthVariant variant) {
  Tensor gram = matmul(basis.matrix(), transpose(basis.matrix()));
  if (variant == OrthVariant::kSquared)
    return sub(sum_all(square(gram)), sum_all(square(diagonal(gram))));
  return sub(sum_all(gram), sum_all(diagonal(gram)));
}

Tensor syn_loss(const std::vector<SynItemTerms>& items, const PromptBasis& basis,
                OrthVariant variant, bool include_orth) {
  if (items.empty()) throw ConfigError("syn_loss: empty batch");
  Tensor acc = Tensor::scalar(0.0);
  for (const auto& it : items) {
    if (it.video_hz.size() != it.video_sel.size())
      throw ConfigError("syn_loss: frame term count mismatch");
    for (std::size_t f = 0; f < it.video_hz.size(); ++f)
      acc = add(acc, recon_loss(it.video_hz[f], it.video_sel[f], basis));
    if (it.text_hz.defined())
      acc = add(acc, recon_loss(it.text_hz, it.text_sel, basis));
  }
  acc = scale(acc, 1.0 / static_cast<double>(items.size()));
  if (include_orth) acc = add(acc, orth_penalty(basis, variant));
  return acc;
}

CmmParams CmmParams::create(int d_vid, int frames, int video_prompts, Rng& rng,
                            ParamStore& store) {
  CmmParams p;
  const double sx = 1.0 / std::sqrt(static_cast<double>(d_vid));
  auto w = [&](const std::string& n, int in, int out) {
    return store.add(n, Tensor::randn({in, out}, rng,
                                      1.0 / std::sqrt(static_cast<double>(in))));
  };
  (void)sx;
  p.wx_f = w("cmm.fwd.wx", d_vid, 4 * d_vid);
  p.wh_f = w("cmm.fwd.wh", d_vid, 4 * d_vid);
  p.b_f = store.add("cmm.fwd.bias", Tensor::zeros({4 * d_vid}));
  p.wx_b = w("cmm.bwd.wx", d_vid, 4 * d_vid);
  p.wh_b = w("cmm.bwd.wh", d_vid, 4 * d_vid);
  p.b_b = store.add("cmm.bwd.bias", Tensor::zeros({4 * d_vid}));
  for (int f = 0; f < frames; ++f) {
    p.head_w.push_back(w("cmm.head" + std::to_string(f) + ".weight", 2 * d_vid,
                         video_prompts * d_vid));
    p.head_b.push_back(store.add("cmm.head" + std::to_string(f) + ".bias",
                                 Tensor::zeros({video_prompts * d_vid})));
  }
  return p;
}

namespace {

// one LSTM pass, returns per-step hidden states [T x d]
std::vector<Tensor> lstm_pass(const std::vector<Tensor>& steps,
                              const Tensor& wx, const Tensor& wh,
                              const Tensor& b, int d, bool linear_acts) {
  auto act_s = [&](const Tensor& t) { return linear_acts ? t : sigmoid(t); };
  auto act_t = [&](const Tensor& t) { return linear_acts ? t : tanh_act(t); };
  Tensor h = Tensor::zeros({1, d});
  Tensor c = Tensor::zeros({1, d});
  std::vector<Tensor> out;
  out.reserve(steps.size());
  for (const auto& x : steps) {
    Tensor z = add(linear(x, wx, &b), matmul(h, wh));
    Tensor i = act_s(slice_cols(z, 0, d));
    Tensor f = act_s(slice_cols(z, d, 2 * d));
    Tensor g = act_t(slice_cols(z, 2 * d, 3 * d));
    Tensor o = act_s(slice_cols(z, 3 * d, 4 * d));
    c = add(mul(f, c), mul(i, g));
    h = mul(o, act_t(c));
    out.push_back(h);
  }
  return out;
}

}  // namespace

Tensor cmm_generate(const Tensor& frame_ctx, const CmmParams& params,
                    int video_prompts, bool linear_activation) {
  const int T = frame_ctx.rows(), d = frame_ctx.cols();
  if (T < 1) throw ConfigError("cmm_generate: need at least one frame");
  if (static_cast<int>(params.head_w.size()) != T)
    throw ConfigError("cmm_generate: head count does not match frames");
  std::vector<Tensor> steps;
  steps.reserve(T);
  for (int f = 0; f < T; ++f) steps.push_back(slice_rows(frame_ctx, f, f + 1));

  auto fwd = lstm_pass(steps, params.wx_f, params.wh_f, params.b_f, d,
                       linear_activation);
  std::vector<Tensor> rev(steps.rbegin(), steps.rend());
  auto bwd_rev = lstm_pass(rev, params.wx_b, params.wh_b, params.b_b, d,
                           linear_activation);

  std::vector<Tensor> out;
  out.reserve(T);
  for (int f = 0; f < T; ++f) {
    std::vector<Tensor> pair{fwd[f], bwd_rev[T - 1 - f]};
    Tensor hcat = concat_cols(pair);  // [1 x 2d]
    Tensor flat = linear(hcat, params.head_w[f], &params.head_b[f]);
    out.push_back(reshape(flat, {video_prompts, d}));
  }
  return concat_rows(out);
}

// ---------------------------------------------------------------------------
// parameter accounting

std::size_t ego_vpa_video_weights(int d_f, int basis_size, int d_vid) {
  return static_cast<std::size_t>(d_f) *
         (static_cast<std::size_t>(basis_size) + 2ull * d_vid);
}

std::size_t cmm_weights(int video_prompts, int frames, int d_vid) {
  return (16ull + 2ull * video_prompts * frames) *
         static_cast<std::size_t>(d_vid) * d_vid;
}

std::size_t ParamBreakdown::group(const std::string& name) const {
  for (const auto& [n, c] : groups)
    if (n == name) return c;
  return 0;
}

ParamBreakdown count_params(const ModelConfig& cfg, Method method) {
  const auto& e = cfg.enc;
  const auto& p = cfg.prompt;
  ParamBreakdown out;
  const std::size_t backbone =
      text_encoder_numel(e) + video_encoder_numel(e);
  out.groups.emplace_back("backbone", backbone);

  std::size_t extra = 0;
  auto grp = [&](const std::string& n, std::size_t c) {
    out.groups.emplace_back(n, c);
    extra += c;
  };

  const std::size_t tpt_count =
      static_cast<std::size_t>(p.text_prompts) * e.d_txt;
  const std::size_t vpt_count = static_cast<std::size_t>(e.layers) *
                                p.video_prompts * e.d_vid;
  const std::size_t cmm_total =
      cmm_weights(p.video_prompts, e.frames, e.d_vid) +
      8ull * e.d_vid /*gate biases*/ +
      static_cast<std::size_t>(e.frames) * p.video_prompts * e.d_vid
      /*head biases*/;

  std::size_t trainable = 0;
  switch (method) {
    case Method::kZeroShot:
      break;
    case Method::kFull:
      trainable = backbone;
      break;
    case Method::kBias:
      trainable = text_encoder_bias_numel(e) + video_encoder_bias_numel(e);
      break;
    case Method::kTpt:
      grp("text_prompts", tpt_count);
      trainable = tpt_count;
      break;
    case Method::kVpt:
      grp("video_prompts", vpt_count);
      trainable = vpt_count;
      break;
    case Method::kVop:
      grp("text_prompts", tpt_count);
      grp("video_prompts", vpt_count);
      trainable = tpt_count + vpt_count;
      break;
    case Method::kVopC:
    case Method::kVopFC:
      grp("text_prompts", tpt_count);
      grp("cmm", cmm_total);
      trainable = tpt_count + cmm_total;
      break;
    case Method::kEgoVpa: {
      const std::size_t vid_side =
          ego_vpa_video_weights(p.d_f, p.basis_size, e.d_vid);
      grp("basis+video_adapter", vid_side);
      trainable = vid_side;
      if (p.cross_modal) {
        const std::size_t txt_side = 2ull * p.d_f * e.d_txt;
        grp("text_adapter", txt_side);
        trainable += txt_side;
      }
      break;
    }
  }
  const std::size_t total = backbone + extra;
  out.trainable = trainable;
  out.frozen = total - trainable;
  out.fraction = total == 0 ? 0.0
                            : static_cast<double>(trainable) /
                                  static_cast<double>(total);
  return out;
}

}  // namespace vpa
