#include "vpa/config.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace vpa {

Method method_from_string(const std::string& s) {
  if (s == "zero-shot") return Method::kZeroShot;
  if (s == "full") return Method::kFull;
  if (s == "bias") return Method::kBias;
  if (s == "tpt") return Method::kTpt;
  if (s == "vpt") return Method::kVpt;
  if (s == "vop") return Method::kVop;
  if (s == "vop-c") return Method::kVopC;
  if (s == "vop-fc") return Method::kVopFC;
  if (s == "ego-vpa") return Method::kEgoVpa;
  throw ConfigError("unknown method: " + s);
}

std::string method_name(Method m) {
  switch (m) {
    case Method::kZeroShot: return "zero-shot";
    case Method::kFull: return "full";
    case Method::kBias: return "bias";
    case Method::kTpt: return "tpt";
    case Method::kVpt: return "vpt";
    case Method::kVop: return "vop";
    case Method::kVopC: return "vop-c";
    case Method::kVopFC: return "vop-fc";
    case Method::kEgoVpa: return "ego-vpa";
  }
  return "?";
}

bool method_has_video_prompts(Method m) {
  switch (m) {
    case Method::kVpt:
    case Method::kVop:
    case Method::kVopC:
    case Method::kVopFC:
    case Method::kEgoVpa:
      return true;
    default:
      return false;
  }
}

bool method_has_text_prompts(Method m) {
  switch (m) {
    case Method::kTpt:
    case Method::kVop:
    case Method::kVopC:
    case Method::kVopFC:
    case Method::kEgoVpa:
      return true;
    default:
      return false;
  }
}

bool method_has_inter_layers(Method m) {
  return m == Method::kVopFC || m == Method::kEgoVpa;
}

void EncoderConfig::validate() const {
  if (layers < 1) throw ConfigError("enc.layers must be >= 1");
  if (d_txt % heads != 0)
    throw ConfigError("enc.d_txt must be divisible by enc.heads");
  if (d_vid % heads != 0)
    throw ConfigError("enc.d_vid must be divisible by enc.heads");
  if (frames < 1 || patches < 1)
    throw ConfigError("enc.frames and enc.patches must be >= 1");
  if (vocab < 4) throw ConfigError("enc.vocab too small");
  if (patch_dim < 1) throw ConfigError("enc.patch_dim must be >= 1");
  if (embed_dim < 1) throw ConfigError("enc.embed_dim must be >= 1");
}

void PromptConfig::validate(const EncoderConfig& enc) const {
  if (boundary < 0 || boundary > enc.layers)
    throw ConfigError("prompt.boundary must be in [0, enc.layers]");
  if (basis_size < 1) throw ConfigError("prompt.basis_size must be >= 1");
  if (topk < 1 || topk > basis_size)
    throw ConfigError("prompt.topk must be in [1, prompt.basis_size]");
  if (d_f < 1) throw ConfigError("prompt.d_f must be >= 1");
  if (video_prompts < 0 || text_prompts < 0)
    throw ConfigError("prompt counts must be >= 0");
}

void ModelConfig::validate() const {
  enc.validate();
  prompt.validate(enc);
  if (loss.tau <= 0.0) throw ConfigError("loss.tau must be > 0");
  if (loss.lambda < 0.0) throw ConfigError("loss.lambda must be >= 0");
  if (train.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (train.ramp_fraction <= 0.0 || train.ramp_fraction > 1.0)
    throw ConfigError("train.ramp_fraction must be in (0, 1]");
}

ModelConfig ModelConfig::reference_scale() {
  ModelConfig cfg;
  cfg.enc.layers = 12;
  cfg.enc.d_txt = 512;
  cfg.enc.d_vid = 768;
  cfg.enc.frames = 16;
  cfg.enc.patches = 196;
  cfg.enc.max_words = 77;
  cfg.enc.heads = 8;
  cfg.enc.vocab = 49408;
  cfg.enc.patch_dim = 768;
  cfg.enc.embed_dim = 512;
  cfg.prompt.video_prompts = 8;
  cfg.prompt.text_prompts = 8;
  cfg.prompt.boundary = 8;
  cfg.prompt.basis_size = 10;
  cfg.prompt.topk = 8;
  cfg.prompt.d_f = 512;
  return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  KvConfig cfg;
  std::string line;
  int lineno = 0;
  const auto dir = std::filesystem::path(path).parent_path();
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    if (line.rfind("include ", 0) == 0) {
      const std::string inc = trim(line.substr(8));
      const auto inc_path =
          std::filesystem::path(inc).is_absolute() ? inc : (dir / inc).string();
      for (const auto& [k, v] : parse_file(inc_path).kv_) cfg.kv_[k] = v;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key = value");
    cfg.kv_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return cfg;
}

KvConfig KvConfig::parse_string(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    cfg.kv_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return cfg;
}

bool KvConfig::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string KvConfig::get(const std::string& key, const std::string& def) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? def : it->second;
}

int KvConfig::get_int(const std::string& key, int def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  try {
    return std::stoi(it->second);
  } catch (...) {
    throw ConfigError("config key '" + key + "' is not an integer: " +
                      it->second);
  }
}

double KvConfig::get_double(const std::string& key, double def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  try {
    return std::stod(it->second);
  } catch (...) {
    throw ConfigError("config key '" + key + "' is not a number: " +
                      it->second);
  }
}

bool KvConfig::get_bool(const std::string& key, bool def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "' is not a boolean: " +
                    it->second);
}

std::uint64_t KvConfig::get_u64(const std::string& key,
                                std::uint64_t def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  try {
    return std::stoull(it->second);
  } catch (...) {
    throw ConfigError("config key '" + key + "' is not an integer: " +
                      it->second);
  }
}

std::vector<std::string> KvConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  auto it = kv_.find(key);
  if (it == kv_.end()) return out;
  std::istringstream ss(it->second);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const auto b = part.find_first_not_of(" \t");
    const auto e = part.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(part.substr(b, e - b + 1));
  }
  return out;
}

void KvConfig::set(const std::string& key, const std::string& value) {
  kv_[key] = value;
}

ModelConfig model_config_from_kv(const KvConfig& kv) {
  ModelConfig cfg;
  if (kv.get("model.preset", "toy") == "reference") cfg = ModelConfig::reference_scale();
  cfg.enc.layers = kv.get_int("enc.layers", cfg.enc.layers);
  cfg.enc.d_txt = kv.get_int("enc.d_txt", cfg.enc.d_txt);
  cfg.enc.d_vid = kv.get_int("enc.d_vid", cfg.enc.d_vid);
  cfg.enc.frames = kv.get_int("enc.frames", cfg.enc.frames);
  cfg.enc.patches = kv.get_int("enc.patches", cfg.enc.patches);
  cfg.enc.max_words = kv.get_int("enc.max_words", cfg.enc.max_words);
  cfg.enc.heads = kv.get_int("enc.heads", cfg.enc.heads);
  cfg.enc.vocab = kv.get_int("enc.vocab", cfg.enc.vocab);
  cfg.enc.patch_dim = kv.get_int("enc.patch_dim", cfg.enc.patch_dim);
  cfg.enc.embed_dim = kv.get_int("enc.embed_dim", cfg.enc.embed_dim);
  cfg.enc.mlp_ratio = kv.get_int("enc.mlp_ratio", cfg.enc.mlp_ratio);
  cfg.prompt.video_prompts =
      kv.get_int("prompt.video_prompts", cfg.prompt.video_prompts);
  cfg.prompt.text_prompts =
      kv.get_int("prompt.text_prompts", cfg.prompt.text_prompts);
  cfg.prompt.boundary = kv.get_int("prompt.boundary", cfg.prompt.boundary);
  cfg.prompt.basis_size = kv.get_int("prompt.basis_size", cfg.prompt.basis_size);
  cfg.prompt.topk = kv.get_int("prompt.topk", cfg.prompt.topk);
  cfg.prompt.d_f = kv.get_int("prompt.d_f", cfg.prompt.d_f);
  const std::string ov = kv.get("prompt.orth_variant", "squared");
  if (ov == "squared")
    cfg.prompt.orth_variant = OrthVariant::kSquared;
  else if (ov == "signed")
    cfg.prompt.orth_variant = OrthVariant::kSigned;
  else
    throw ConfigError("prompt.orth_variant must be 'squared' or 'signed'");
  cfg.prompt.orth_penalty =
      kv.get_bool("prompt.orth_penalty", cfg.prompt.orth_penalty);
  cfg.prompt.cross_modal =
      kv.get_bool("prompt.cross_modal", cfg.prompt.cross_modal);
  cfg.prompt.sampled_query =
      kv.get_bool("prompt.sampled_query", cfg.prompt.sampled_query);
  cfg.prompt.per_layer_text_prompts = kv.get_bool(
      "prompt.per_layer_text_prompts", cfg.prompt.per_layer_text_prompts);
  cfg.loss.tau = kv.get_double("loss.tau", cfg.loss.tau);
  cfg.loss.lambda = kv.get_double("loss.lambda", cfg.loss.lambda);
  cfg.train.method = method_from_string(
      kv.get("train.method", method_name(cfg.train.method)));
  cfg.train.epochs = kv.get_int("train.epochs", cfg.train.epochs);
  cfg.train.batch_size = kv.get_int("train.batch_size", cfg.train.batch_size);
  cfg.train.lr = kv.get_double("train.lr", cfg.train.lr);
  cfg.train.weight_decay =
      kv.get_double("train.weight_decay", cfg.train.weight_decay);
  cfg.train.seed = kv.get_u64("train.seed", cfg.train.seed);
  cfg.train.ramp_fraction =
      kv.get_double("train.ramp_fraction", cfg.train.ramp_fraction);
  cfg.validate();
  return cfg;
}

std::string model_config_dump(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "enc.layers = " << cfg.enc.layers << "\n";
  os << "enc.d_txt = " << cfg.enc.d_txt << "\n";
  os << "enc.d_vid = " << cfg.enc.d_vid << "\n";
  os << "enc.frames = " << cfg.enc.frames << "\n";
  os << "enc.patches = " << cfg.enc.patches << "\n";
  os << "enc.max_words = " << cfg.enc.max_words << "\n";
  os << "enc.heads = " << cfg.enc.heads << "\n";
  os << "enc.vocab = " << cfg.enc.vocab << "\n";
  os << "enc.patch_dim = " << cfg.enc.patch_dim << "\n";
  os << "enc.embed_dim = " << cfg.enc.embed_dim << "\n";
  os << "enc.mlp_ratio = " << cfg.enc.mlp_ratio << "\n";
  os << "prompt.video_prompts = " << cfg.prompt.video_prompts << "\n";
  os << "prompt.text_prompts = " << cfg.prompt.text_prompts << "\n";
  os << "prompt.boundary = " << cfg.prompt.boundary << "\n";
  os << "prompt.basis_size = " << cfg.prompt.basis_size << "\n";
  os << "prompt.topk = " << cfg.prompt.topk << "\n";
  os << "prompt.d_f = " << cfg.prompt.d_f << "\n";
  os << "prompt.orth_variant = "
     << (cfg.prompt.orth_variant == OrthVariant::kSquared ? "squared"
                                                          : "signed")
     << "\n";
  os << "prompt.orth_penalty = " << (cfg.prompt.orth_penalty ? "true" : "false")
     << "\n";
  os << "prompt.cross_modal = " << (cfg.prompt.cross_modal ? "true" : "false")
     << "\n";
  os << "prompt.sampled_query = "
     << (cfg.prompt.sampled_query ? "true" : "false") << "\n";
  os << "prompt.per_layer_text_prompts = "
     << (cfg.prompt.per_layer_text_prompts ? "true" : "false") << "\n";
  os << "loss.tau = " << cfg.loss.tau << "\n";
  os << "loss.lambda = " << cfg.loss.lambda << "\n";
  os << "train.method = " << method_name(cfg.train.method) << "\n";
  os << "train.epochs = " << cfg.train.epochs << "\n";
  os << "train.batch_size = " << cfg.train.batch_size << "\n";
  os << "train.lr = " << cfg.train.lr << "\n";
  os << "train.weight_decay = " << cfg.train.weight_decay << "\n";
  os << "train.seed = " << cfg.train.seed << "\n";
  os << "train.ramp_fraction = " << cfg.train.ramp_fraction << "\n";
  return os.str();
}

}  // namespace vpa
