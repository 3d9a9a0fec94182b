#include "vpa/encoders.hpp"

#include <cmath>

namespace vpa {

Tensor ParamStore::add(const std::string& name, Tensor t) {
  if (find(name)) throw ConfigError("duplicate parameter name: " + name);
  t.set_requires_grad(true);
  items_.emplace_back(name, t);
  return t;
}

Tensor* ParamStore::find(const std::string& name) {
  for (auto& [n, t] : items_)
    if (n == name) return &t;
  return nullptr;
}

const Tensor* ParamStore::find(const std::string& name) const {
  for (auto& [n, t] : items_)
    if (n == name) return &t;
  return nullptr;
}

std::size_t ParamStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

namespace {

Tensor init_weight(ParamStore& store, const std::string& name, int in, int out,
                   Rng& rng) {
  return store.add(name, Tensor::randn({in, out}, rng,
                                       1.0 / std::sqrt(static_cast<double>(in))));
}

Tensor init_bias(ParamStore& store, const std::string& name, int n) {
  return store.add(name, Tensor::zeros({n}));
}

AttentionParams init_attention(ParamStore& store, const std::string& prefix,
                               int d, Rng& rng) {
  AttentionParams p;
  p.wq = init_weight(store, prefix + ".q.weight", d, d, rng);
  p.bq = init_bias(store, prefix + ".q.bias", d);
  p.wk = init_weight(store, prefix + ".k.weight", d, d, rng);
  p.bk = init_bias(store, prefix + ".k.bias", d);
  p.wv = init_weight(store, prefix + ".v.weight", d, d, rng);
  p.bv = init_bias(store, prefix + ".v.bias", d);
  p.wo = init_weight(store, prefix + ".o.weight", d, d, rng);
  p.bo = init_bias(store, prefix + ".o.bias", d);
  return p;
}

void init_ln(ParamStore& store, const std::string& prefix, int d, Tensor& g,
             Tensor& b) {
  g = store.add(prefix + ".gain", Tensor::full({d}, 1.0));
  b = store.add(prefix + ".bias", Tensor::zeros({d}));
}

Tensor mlp_forward(const Tensor& x, const Tensor& w1, const Tensor& b1,
                   const Tensor& w2, const Tensor& b2) {
  return linear(gelu(linear(x, w1, &b1)), w2, &b2);
}

}  // namespace

Mask build_mask(AttnMode mode, int frames, int patches,
                int prompts_per_frame) {
  const int T = frames, Np = patches, M = prompts_per_frame;
  const int n = 1 + T * M + T * Np;
  Mask mask{n, n, std::vector<std::uint8_t>(static_cast<std::size_t>(n) * n, 0)};
  auto prompt_idx = [&](int f, int m) { return 1 + f * M + m; };
  auto patch_idx = [&](int f, int p) { return 1 + T * M + f * Np + p; };
  // CLS attends everything
  for (int j = 0; j < n; ++j) mask.set(0, j, true);
  for (int f = 0; f < T; ++f) {
    auto fill_row = [&](int q) {
      mask.set(q, 0, true);
      if (mode == AttnMode::kIntra) {
        for (int m = 0; m < M; ++m) mask.set(q, prompt_idx(f, m), true);
      } else {
        for (int g = 0; g < T; ++g)
          for (int m = 0; m < M; ++m) mask.set(q, prompt_idx(g, m), true);
      }
      for (int p = 0; p < Np; ++p) mask.set(q, patch_idx(f, p), true);
    };
    for (int m = 0; m < M; ++m) fill_row(prompt_idx(f, m));
    for (int p = 0; p < Np; ++p) fill_row(patch_idx(f, p));
  }
  return mask;
}

Mask build_temporal_mask(int frames, int patches) {
  const int T = frames, Np = patches;
  const int n = 1 + T * Np;
  Mask mask{n, n, std::vector<std::uint8_t>(static_cast<std::size_t>(n) * n, 0)};
  for (int j = 0; j < n; ++j) mask.set(0, j, true);
  for (int f = 0; f < T; ++f)
    for (int p = 0; p < Np; ++p) {
      const int q = 1 + f * Np + p;
      mask.set(q, 0, true);
      for (int g = 0; g < T; ++g) mask.set(q, 1 + g * Np + p, true);
    }
  return mask;
}

Tensor frame_context(const Tensor& tokens, int frames, int patches) {
  std::vector<Tensor> rows;
  rows.reserve(frames);
  for (int f = 0; f < frames; ++f)
    rows.push_back(
        mean_rows(slice_rows(tokens, 1 + f * patches, 1 + (f + 1) * patches)));
  return concat_rows(rows);
}

// ---------------------------------------------------------------------------
// text encoder

TextEncoder::TextEncoder(const EncoderConfig& cfg, Rng& rng, ParamStore& store)
    : cfg_(cfg) {
  const int d = cfg.d_txt;
  tok_emb_ = store.add("txt.tok_emb", Tensor::randn({cfg.vocab, d}, rng, 0.02));
  pos_emb_ =
      store.add("txt.pos_emb", Tensor::randn({cfg.max_words + 2, d}, rng, 0.02));
  blocks_.resize(cfg.layers);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "txt.block" + std::to_string(l);
    auto& b = blocks_[l];
    init_ln(store, p + ".ln1", d, b.ln1_g, b.ln1_b);
    b.attn = init_attention(store, p + ".attn", d, rng);
    init_ln(store, p + ".ln2", d, b.ln2_g, b.ln2_b);
    const int h = d * cfg.mlp_ratio;
    b.mlp_w1 = init_weight(store, p + ".mlp.fc1.weight", d, h, rng);
    b.mlp_b1 = init_bias(store, p + ".mlp.fc1.bias", h);
    b.mlp_w2 = init_weight(store, p + ".mlp.fc2.weight", h, d, rng);
    b.mlp_b2 = init_bias(store, p + ".mlp.fc2.bias", d);
  }
  init_ln(store, "txt.lnf", d, lnf_g_, lnf_b_);
  proj_ = init_weight(store, "txt.proj.weight", d, cfg.embed_dim, rng);
}

Tensor TextEncoder::encode_item(const std::vector<int>& toks,
                                const TextPromptFn& prompts) const {
  const int len = static_cast<int>(toks.size());
  if (len < 2) throw DataError("text item must contain SOS and EOS");
  if (len - 2 > cfg_.max_words)
    throw ConfigError("text sequence of " + std::to_string(len - 2) +
                      " words exceeds positional capacity N_w=" +
                      std::to_string(cfg_.max_words));
  for (int t : toks)
    if (t < 0 || t >= cfg_.vocab)
      throw DataError("token id " + std::to_string(t) + " outside vocab");
  std::vector<int> pos(len);
  for (int i = 0; i < len; ++i) pos[i] = i;
  Tensor x = add(gather_rows(tok_emb_, toks), gather_rows(pos_emb_, pos));

  int n_prompts = 0;
  for (int l = 0; l < cfg_.layers; ++l) {
    if (prompts) {
      Tensor eos = row(x, x.rows() - 1);
      Tensor p = prompts(l, eos);
      if (p.defined() && p.rows() > 0) {
        // insert after SOS at first use; deep prompts replace in place
        Tensor sos = slice_rows(x, 0, 1);
        Tensor rest = slice_rows(x, 1 + n_prompts, x.rows());
        std::vector<Tensor> parts{sos, p, rest};
        x = concat_rows(parts);
        n_prompts = p.rows();
      }
    }
    const auto& b = blocks_[l];
    const Mask full = Mask::all_true(x.rows(), x.rows());
    Tensor h = layer_norm(x, b.ln1_g, b.ln1_b);
    x = add(x, masked_attention(h, h, full, cfg_.heads, b.attn));
    x = add(x, mlp_forward(layer_norm(x, b.ln2_g, b.ln2_b), b.mlp_w1, b.mlp_b1,
                           b.mlp_w2, b.mlp_b2));
  }
  Tensor eos = slice_rows(x, x.rows() - 1, x.rows());
  Tensor f = matmul(layer_norm(eos, lnf_g_, lnf_b_), proj_);
  return l2_normalize_rows(f);
}

Tensor TextEncoder::encode(const TextBatch& batch,
                           const TextPromptFn& prompts) const {
  std::vector<Tensor> feats;
  feats.reserve(batch.tokens.size());
  for (const auto& toks : batch.tokens)
    feats.push_back(encode_item(toks, prompts));
  return concat_rows(feats);
}

// ---------------------------------------------------------------------------
// video encoder

VideoEncoder::VideoEncoder(const EncoderConfig& cfg, Rng& rng,
                           ParamStore& store)
    : cfg_(cfg) {
  const int d = cfg.d_vid;
  patch_w_ = init_weight(store, "vid.patch.weight", cfg.patch_dim, d, rng);
  patch_b_ = init_bias(store, "vid.patch.bias", d);
  cls_ = store.add("vid.cls", Tensor::randn({1, d}, rng, 0.02));
  spatial_pos_ =
      store.add("vid.pos_spatial", Tensor::randn({cfg.patches, d}, rng, 0.02));
  temporal_pos_ =
      store.add("vid.pos_temporal", Tensor::randn({cfg.frames, d}, rng, 0.02));
  blocks_.resize(cfg.layers);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "vid.block" + std::to_string(l);
    auto& b = blocks_[l];
    init_ln(store, p + ".lnt", d, b.lnt_g, b.lnt_b);
    b.attn_t = init_attention(store, p + ".attn_t", d, rng);
    init_ln(store, p + ".lns", d, b.lns_g, b.lns_b);
    b.attn_s = init_attention(store, p + ".attn_s", d, rng);
    init_ln(store, p + ".lnm", d, b.lnm_g, b.lnm_b);
    const int h = d * cfg.mlp_ratio;
    b.mlp_w1 = init_weight(store, p + ".mlp.fc1.weight", d, h, rng);
    b.mlp_b1 = init_bias(store, p + ".mlp.fc1.bias", h);
    b.mlp_w2 = init_weight(store, p + ".mlp.fc2.weight", h, d, rng);
    b.mlp_b2 = init_bias(store, p + ".mlp.fc2.bias", d);
  }
  init_ln(store, "vid.lnf", d, lnf_g_, lnf_b_);
  proj_ = init_weight(store, "vid.proj.weight", d, cfg.embed_dim, rng);
}

Tensor VideoEncoder::divided_block(const Tensor& tokens, int layer,
                                   const Tensor& prompts,
                                   AttnMode mode) const {
  const int T = cfg_.frames, Np = cfg_.patches;
  if (tokens.rows() != 1 + T * Np)
    throw ShapeError("divided_block: expected " + std::to_string(1 + T * Np) +
                     " tokens, got " + std::to_string(tokens.rows()));
  const auto& b = blocks_[layer];

  // temporal attention over (CLS, patches); prompts never participate
  Tensor x = tokens;
  {
    const Mask tm = build_temporal_mask(T, Np);
    Tensor h = layer_norm(x, b.lnt_g, b.lnt_b);
    x = add(x, masked_attention(h, h, tm, cfg_.heads, b.attn_t));
  }

  // spatial attention with this layer's prompts interleaved
  int M = 0;
  Tensor aug = x;
  if (prompts.defined() && prompts.rows() > 0) {
    if (prompts.rows() % T != 0)
      throw ConfigError("prompt rows not a multiple of frame count");
    M = prompts.rows() / T;
    std::vector<Tensor> parts{slice_rows(x, 0, 1), prompts,
                              slice_rows(x, 1, x.rows())};
    aug = concat_rows(parts);
  }
  {
    const Mask sm = build_mask(mode, T, Np, M);
    Tensor h = layer_norm(aug, b.lns_g, b.lns_b);
    Tensor a = masked_attention(h, h, sm, cfg_.heads, b.attn_s);
    if (M > 0) {
      // prompt output states are discarded; fresh prompts re-enter next layer
      std::vector<Tensor> keep{slice_rows(a, 0, 1),
                               slice_rows(a, 1 + T * M, a.rows())};
      a = concat_rows(keep);
    }
    x = add(x, a);
  }

  x = add(x, mlp_forward(layer_norm(x, b.lnm_g, b.lnm_b), b.mlp_w1, b.mlp_b1,
                         b.mlp_w2, b.mlp_b2));
  return x;
}

Tensor VideoEncoder::encode_item(const Tensor& patches, int prompts_per_frame,
                                 const VideoPromptFn& prompts,
                                 const AttnModeFn& mode) const {
  const int T = cfg_.frames, Np = cfg_.patches;
  if (patches.rows() != T * Np || patches.cols() != cfg_.patch_dim)
    throw ShapeError("video item shape " + shape_str(patches.shape()) +
                     " does not match T*N_p x patch_dim");
  Tensor pe = linear(patches, patch_w_, &patch_b_);
  std::vector<int> sp(T * Np), tp(T * Np);
  for (int f = 0; f < T; ++f)
    for (int p = 0; p < Np; ++p) {
      sp[f * Np + p] = p;
      tp[f * Np + p] = f;
    }
  pe = add(add(pe, gather_rows(spatial_pos_, sp)),
           gather_rows(temporal_pos_, tp));
  std::vector<Tensor> seq{cls_, pe};
  Tensor x = concat_rows(seq);

  for (int l = 0; l < cfg_.layers; ++l) {
    Tensor layer_prompts;
    if (prompts && prompts_per_frame > 0) {
      Tensor ctx = frame_context(x, T, Np);
      layer_prompts = prompts(l, ctx);
      if (layer_prompts.defined() &&
          layer_prompts.rows() != T * prompts_per_frame)
        throw ConfigError("prompt pack for layer " + std::to_string(l) +
                          " has " + std::to_string(layer_prompts.rows()) +
                          " rows, expected " +
                          std::to_string(T * prompts_per_frame));
    }
    const AttnMode m = mode ? mode(l) : AttnMode::kIntra;
    x = divided_block(x, l, layer_prompts, m);
  }
  Tensor cls_state = slice_rows(x, 0, 1);
  Tensor f = matmul(layer_norm(cls_state, lnf_g_, lnf_b_), proj_);
  return l2_normalize_rows(f);
}

Tensor VideoEncoder::encode(const std::vector<Tensor>& items,
                            int prompts_per_frame, const VideoPromptFn& prompts,
                            const AttnModeFn& mode) const {
  std::vector<Tensor> feats;
  feats.reserve(items.size());
  for (const auto& it : items)
    feats.push_back(encode_item(it, prompts_per_frame, prompts, mode));
  return concat_rows(feats);
}

// ---------------------------------------------------------------------------
// parameter accounting helpers

namespace {
std::size_t attn_numel(int d) { return 4ull * (static_cast<std::size_t>(d) * d + d); }
std::size_t mlp_numel(int d, int r) {
  const std::size_t h = static_cast<std::size_t>(d) * r;
  return static_cast<std::size_t>(d) * h + h + h * d + d;
}
}  // namespace

std::size_t text_encoder_numel(const EncoderConfig& c) {
  const std::size_t d = c.d_txt;
  std::size_t n = static_cast<std::size_t>(c.vocab) * d +
                  static_cast<std::size_t>(c.max_words + 2) * d;
  n += static_cast<std::size_t>(c.layers) *
       (4 * d + attn_numel(c.d_txt) + mlp_numel(c.d_txt, c.mlp_ratio));
  n += 2 * d + d * static_cast<std::size_t>(c.embed_dim);
  return n;
}

std::size_t video_encoder_numel(const EncoderConfig& c) {
  const std::size_t d = c.d_vid;
  std::size_t n = static_cast<std::size_t>(c.patch_dim) * d + d /*patch bias*/ +
                  d /*cls*/ + static_cast<std::size_t>(c.patches) * d +
                  static_cast<std::size_t>(c.frames) * d;
  n += static_cast<std::size_t>(c.layers) *
       (6 * d + 2 * attn_numel(c.d_vid) + mlp_numel(c.d_vid, c.mlp_ratio));
  n += 2 * d + d * static_cast<std::size_t>(c.embed_dim);
  return n;
}

std::size_t text_encoder_bias_numel(const EncoderConfig& c) {
  const std::size_t d = c.d_txt;
  // ln biases + attn biases + mlp biases per block, plus final ln bias
  return static_cast<std::size_t>(c.layers) *
             (2 * d + 4 * d + d * static_cast<std::size_t>(c.mlp_ratio) + d) +
         d;
}

std::size_t video_encoder_bias_numel(const EncoderConfig& c) {
  const std::size_t d = c.d_vid;
  return d /*patch bias*/ +
         static_cast<std::size_t>(c.layers) *
             (3 * d + 8 * d + d * static_cast<std::size_t>(c.mlp_ratio) + d) +
         d;
}

}  // namespace vpa
