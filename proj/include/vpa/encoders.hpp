#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vpa/config.hpp"
#include "vpa/ops.hpp"
#include "vpa/tensor.hpp"

namespace vpa {

// named, ordered parameter registry; insertion order is the checkpoint and
// optimizer traversal order
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t);
  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& items() const {
    return items_;
  }
  std::size_t total_numel() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

enum class AttnMode { kIntra, kInter };

// spatial-attention visibility over tokens laid out as
// (CLS, prompts frame-major T*M_v, patches frame-major T*N_p)
Mask build_mask(AttnMode mode, int frames, int patches, int prompts_per_frame);
// temporal visibility over (CLS, patches frame-major): each patch sees CLS
// and the same spatial location in every frame
Mask build_temporal_mask(int frames, int patches);

// per-frame mean of patch token states (CLS and prompts excluded);
// input rows are (CLS, patches frame-major)
Tensor frame_context(const Tensor& tokens, int frames, int patches);

struct TextBatch {
  std::vector<std::vector<int>> tokens;  // per item, SOS ... EOS, no padding
};

struct TransformerBlockParams {
  Tensor ln1_g, ln1_b;
  AttentionParams attn;
  Tensor ln2_g, ln2_b;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct DividedBlockParams {
  Tensor lnt_g, lnt_b;
  AttentionParams attn_t;  // temporal
  Tensor lns_g, lns_b;
  AttentionParams attn_s;  // spatial
  Tensor lnm_g, lnm_b;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// returns prompts for a layer or an undefined tensor for "none";
// video: [T*M_v x d_vid] frame-major given that layer's frame contexts;
// text: [M_t x d_txt] given the EOS-position state entering the layer
using VideoPromptFn =
    std::function<Tensor(int layer, const Tensor& frame_ctx)>;
using TextPromptFn = std::function<Tensor(int layer, const Tensor& eos_state)>;
using AttnModeFn = std::function<AttnMode(int layer)>;

class TextEncoder {
 public:
  TextEncoder(const EncoderConfig& cfg, Rng& rng, ParamStore& store);

  // feature of one item: L2-normalized projection of the final EOS state
  Tensor encode_item(const std::vector<int>& toks,
                     const TextPromptFn& prompts = nullptr) const;
  // [n x embed_dim]
  Tensor encode(const TextBatch& batch,
                const TextPromptFn& prompts = nullptr) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  Tensor tok_emb_, pos_emb_;
  std::vector<TransformerBlockParams> blocks_;
  Tensor lnf_g_, lnf_b_, proj_;
};

class VideoEncoder {
 public:
  VideoEncoder(const EncoderConfig& cfg, Rng& rng, ParamStore& store);

  // patches: [T*N_p x patch_dim] frame-major
  Tensor encode_item(const Tensor& patches, int prompts_per_frame = 0,
                     const VideoPromptFn& prompts = nullptr,
                     const AttnModeFn& mode = nullptr) const;
  Tensor encode(const std::vector<Tensor>& items, int prompts_per_frame = 0,
                const VideoPromptFn& prompts = nullptr,
                const AttnModeFn& mode = nullptr) const;

  // one divided space-time block: temporal attention, then spatial attention
  // with optional prompts, then MLP; exposed for tests
  Tensor divided_block(const Tensor& tokens, int layer,
                       const Tensor& prompts, AttnMode mode) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  Tensor patch_w_, patch_b_, cls_, spatial_pos_, temporal_pos_;
  std::vector<DividedBlockParams> blocks_;
  Tensor lnf_g_, lnf_b_, proj_;
};

// exact per-component parameter counts, used by count_params and mirrored
// by the constructors
std::size_t text_encoder_numel(const EncoderConfig& cfg);
std::size_t video_encoder_numel(const EncoderConfig& cfg);
std::size_t text_encoder_bias_numel(const EncoderConfig& cfg);
std::size_t video_encoder_bias_numel(const EncoderConfig& cfg);

}  // namespace vpa
