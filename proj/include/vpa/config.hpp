#pragma once

#include <map>
#include <string>
#include <vector>

#include "vpa/errors.hpp"

namespace vpa {

enum class Method {
  kZeroShot,
  kFull,
  kBias,
  kTpt,
  kVpt,
  kVop,
  kVopC,
  kVopFC,
  kEgoVpa,
};

Method method_from_string(const std::string& s);
std::string method_name(Method m);
// does the method inject video prompts / text prompts?
bool method_has_video_prompts(Method m);
bool method_has_text_prompts(Method m);
// does the method use the intra/inter boundary K (otherwise intra everywhere)?
bool method_has_inter_layers(Method m);

enum class OrthVariant { kSquared, kSigned };

struct EncoderConfig {
  int layers = 4;       // L
  int d_txt = 32;
  int d_vid = 48;
  int frames = 4;       // T
  int patches = 4;      // N_p
  int max_words = 8;    // N_w
  int heads = 4;
  int vocab = 64;
  int patch_dim = 16;
  int embed_dim = 32;   // joint contrastive space; both encoders project here
  int mlp_ratio = 4;

  void validate() const;
};

struct PromptConfig {
  int video_prompts = 4;   // M_v
  int text_prompts = 4;    // M_t
  int boundary = 2;        // K: intra-frame attention in layers [0, K)
  int basis_size = 10;     // B
  int topk = 4;            // k, defaults to M_v
  int d_f = 16;
  OrthVariant orth_variant = OrthVariant::kSquared;
  bool orth_penalty = true;       // ablation m2/m4/m6 switch it off
  bool cross_modal = true;        // share basis with the text side
  bool sampled_query = true;      // pi_m sampling during training
  bool per_layer_text_prompts = false;

  void validate(const EncoderConfig& enc) const;
};

struct LossConfig {
  double tau = 0.07;
  double lambda = 0.1;
};

struct TrainConfig {
  Method method = Method::kEgoVpa;
  int epochs = 10;
  int batch_size = 16;
  double lr = 0.01;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
  double ramp_fraction = 0.5;  // gamma reaches 1 at ramp_fraction * epochs
};

struct ModelConfig {
  EncoderConfig enc;
  PromptConfig prompt;
  LossConfig loss;
  TrainConfig train;

  void validate() const;
  // reference-scale sizes (L=12, d_txt=512, d_vid=768, T=16, ...), used for
  // parameter accounting only
  static ModelConfig reference_scale();
};

// flat "key = value" config files with '#' comments and an
// "include <path>" directive (paths relative to the including file)
class KvConfig {
 public:
  static KvConfig parse_file(const std::string& path);
  static KvConfig parse_string(const std::string& text);

  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& def) const;
  int get_int(const std::string& key, int def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const;
  // comma-separated list
  std::vector<std::string> get_list(const std::string& key) const;

  void set(const std::string& key, const std::string& value);
  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

ModelConfig model_config_from_kv(const KvConfig& kv);
// canonical dump of every key with its default (or current) value
std::string model_config_dump(const ModelConfig& cfg);

}  // namespace vpa
