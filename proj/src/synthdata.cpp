#include "vpa/synthdata.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace vpa {

using nlohmann::json;

namespace {

// fixed token ids; concept word for concept k is kConceptBase + k
constexpr int kSos = 0;
constexpr int kEos = 1;
constexpr int kWordA = 2;
constexpr int kWordVideo = 3;
constexpr int kWordOf = 4;
constexpr int kWordAnd = 5;
constexpr int kConceptBase = 6;

constexpr int kFormatVersion = 1;

}  // namespace

std::string split_name(Split s) {
  switch (s) {
    case Split::kPretrain: return "pretrain";
    case Split::kAdaptTrain: return "adapt-train";
    case Split::kAdaptVal: return "adapt-val";
    case Split::kAdaptTest: return "adapt-test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "pretrain") return Split::kPretrain;
  if (s == "adapt-train") return Split::kAdaptTrain;
  if (s == "adapt-val") return Split::kAdaptVal;
  if (s == "adapt-test") return Split::kAdaptTest;
  throw DataError("unknown split: " + s);
}

void GeneratorConfig::validate() const {
  if (n_concepts < 1) throw ConfigError("gen.n_concepts must be >= 1");
  if (vocab < kConceptBase + n_concepts)
    throw ConfigError("gen.vocab must be >= " +
                      std::to_string(kConceptBase + n_concepts) +
                      " (template words + concepts)");
  if (labels_per_item < 1 || labels_per_item > n_concepts)
    throw ConfigError("gen.labels_per_item must be in [1, n_concepts]");
  const int max_labels = multilabel ? labels_per_item : 1;
  if (3 + 2 * max_labels - 1 > max_words)
    throw ConfigError("gen.max_words too small for the label templates");
  if (max_labels > patches)
    throw ConfigError("gen.patches must cover one patch per label");
  if (domain_shift < 0.0 || domain_shift > 1.0)
    throw ConfigError("gen.domain_shift must be in [0,1]");
  if (noise_std < 0.0) throw ConfigError("gen.noise_std must be >= 0");
  if (frames < 1 || patches < 1 || patch_dim < 1)
    throw ConfigError("gen.frames/patches/patch_dim must be >= 1");
}

std::vector<int> Dataset::split_indices(Split s) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (items[i].split == s) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> Dataset::class_template(int concept_id) const {
  if (concept_id < 0 || concept_id >= cfg.n_concepts)
    throw DataError("class_template: concept id out of range");
  return {kSos, kWordA, kWordVideo, kWordOf, kConceptBase + concept_id, kEos};
}

namespace {

struct World {
  std::vector<std::vector<double>> concepts;     // unit-scale latents
  std::vector<double> phases;                    // per-concept envelope phase
  std::vector<std::vector<double>> distractors;  // shared pool
  std::vector<double> rotation;                  // patch_dim x patch_dim
  std::vector<double> shift_bias;
};

World build_world(const GeneratorConfig& cfg, Rng& rng) {
  World w;
  const int d = cfg.patch_dim;
  for (int k = 0; k < cfg.n_concepts; ++k) {
    std::vector<double> c(d);
    for (auto& v : c) v = rng.gauss();
    w.concepts.push_back(std::move(c));
    w.phases.push_back(rng.uniform(0.0, 6.283185307179586));
  }
  for (int k = 0; k < cfg.n_concepts; ++k) {
    std::vector<double> c(d);
    for (auto& v : c) v = rng.gauss();
    w.distractors.push_back(std::move(c));
  }
  // random rotation via Gram-Schmidt on a Gaussian matrix
  w.rotation.assign(static_cast<std::size_t>(d) * d, 0.0);
  for (auto& v : w.rotation) v = rng.gauss();
  for (int i = 0; i < d; ++i) {
    double* ri = w.rotation.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < i; ++j) {
      const double* rj = w.rotation.data() + static_cast<std::size_t>(j) * d;
      double dot = 0.0;
      for (int c = 0; c < d; ++c) dot += ri[c] * rj[c];
      for (int c = 0; c < d; ++c) ri[c] -= dot * rj[c];
    }
    double nrm = 0.0;
    for (int c = 0; c < d; ++c) nrm += ri[c] * ri[c];
    nrm = std::sqrt(nrm);
    for (int c = 0; c < d; ++c) ri[c] /= nrm;
  }
  w.shift_bias.assign(d, 0.0);
  for (auto& v : w.shift_bias) v = rng.gauss(0.0, 0.5);
  return w;
}

double envelope(const GeneratorConfig& cfg, const World& w, int concept_id,
                int frame) {
  return 0.75 +
         0.25 * std::cos(6.283185307179586 * frame / cfg.frames +
                         w.phases[concept_id]);
}

PairedItem make_item(const GeneratorConfig& cfg, const World& w, int id,
                     Split split) {
  Rng rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(id + 1)));
  PairedItem item;
  item.id = id;
  item.split = split;

  const int n_labels =
      cfg.multilabel ? 1 + rng.uniform_int(cfg.labels_per_item) : 1;
  std::vector<bool> used(cfg.n_concepts, false);
  for (int l = 0; l < n_labels; ++l) {
    int c = rng.uniform_int(cfg.n_concepts);
    while (used[c]) c = (c + 1) % cfg.n_concepts;
    used[c] = true;
    item.labels.push_back(c);
  }

  const int d = cfg.patch_dim;
  const double s =
      split == Split::kPretrain ? 0.0 : cfg.domain_shift;
  item.patches.resize(static_cast<std::size_t>(cfg.frames) * cfg.patches * d);
  std::vector<double> x(d);
  for (int f = 0; f < cfg.frames; ++f) {
    for (int p = 0; p < cfg.patches; ++p) {
      if (p < n_labels) {
        const int c = item.labels[p];
        const double e = envelope(cfg, w, c, f);
        for (int j = 0; j < d; ++j) x[j] = w.concepts[c][j] * e;
      } else {
        const auto& dv = w.distractors[rng.uniform_int(cfg.n_concepts)];
        for (int j = 0; j < d; ++j) x[j] = dv[j] * 0.5;
      }
      for (int j = 0; j < d; ++j) x[j] += rng.gauss(0.0, cfg.noise_std);
      // blend toward the rotated-plus-bias view for adapt splits
      float* dst =
          item.patches.data() +
          (static_cast<std::size_t>(f) * cfg.patches + p) * d;
      if (s > 0.0) {
        for (int j = 0; j < d; ++j) {
          double rx = 0.0;
          const double* rj = w.rotation.data() + static_cast<std::size_t>(j) * d;
          for (int c2 = 0; c2 < d; ++c2) rx += rj[c2] * x[c2];
          dst[j] = static_cast<float>((1.0 - s) * x[j] +
                                      s * (rx + w.shift_bias[j]));
        }
      } else {
        for (int j = 0; j < d; ++j) dst[j] = static_cast<float>(x[j]);
      }
    }
  }

  item.tokens = {kSos, kWordA, kWordVideo, kWordOf};
  for (int l = 0; l < n_labels; ++l) {
    if (l > 0) item.tokens.push_back(kWordAnd);
    item.tokens.push_back(kConceptBase + item.labels[l]);
  }
  item.tokens.push_back(kEos);
  return item;
}

}  // namespace

Dataset generate(const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const World w = build_world(cfg, rng);
  Dataset ds;
  ds.cfg = cfg;
  int id = 0;
  auto emit = [&](Split split, int count) {
    for (int i = 0; i < count; ++i) ds.items.push_back(make_item(cfg, w, id++, split));
  };
  emit(Split::kPretrain, cfg.n_pretrain);
  emit(Split::kAdaptTrain, cfg.n_train);
  emit(Split::kAdaptVal, cfg.n_val);
  emit(Split::kAdaptTest, cfg.n_test);
  return ds;
}

void save(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const fs::path feat_path = fs::path(dir) / "features.bin";
  const fs::path man_path = fs::path(dir) / "manifest.jsonl";

  std::vector<float> blob;
  std::vector<std::size_t> offsets;
  for (const auto& it : ds.items) {
    offsets.push_back(blob.size());
    blob.insert(blob.end(), it.patches.begin(), it.patches.end());
  }
  {
    std::ofstream f(feat_path, std::ios::binary);
    if (!f) throw DataError("cannot write " + feat_path.string());
    f.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(float)));
  }
  const auto crc =
      crc32(0L, reinterpret_cast<const Bytef*>(blob.data()),
            static_cast<uInt>(blob.size() * sizeof(float)));

  std::ofstream m(man_path);
  if (!m) throw DataError("cannot write " + man_path.string());
  json header = {
      {"format", "vpa-synthdata"},
      {"version", kFormatVersion},
      {"n_items", ds.items.size()},
      {"feature_file", "features.bin"},
      {"feature_bytes", blob.size() * sizeof(float)},
      {"feature_crc32", crc},
      {"config",
       {{"n_concepts", ds.cfg.n_concepts},
        {"n_pretrain", ds.cfg.n_pretrain},
        {"n_train", ds.cfg.n_train},
        {"n_val", ds.cfg.n_val},
        {"n_test", ds.cfg.n_test},
        {"frames", ds.cfg.frames},
        {"patches", ds.cfg.patches},
        {"patch_dim", ds.cfg.patch_dim},
        {"vocab", ds.cfg.vocab},
        {"max_words", ds.cfg.max_words},
        {"domain_shift", ds.cfg.domain_shift},
        {"noise_std", ds.cfg.noise_std},
        {"seed", ds.cfg.seed},
        {"multilabel", ds.cfg.multilabel},
        {"labels_per_item", ds.cfg.labels_per_item}}}};
  m << header.dump() << "\n";
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    const auto& it = ds.items[i];
    json rec = {{"id", it.id},
                {"split", split_name(it.split)},
                {"labels", it.labels},
                {"tokens", it.tokens},
                {"offset", offsets[i]},
                {"count", it.patches.size()}};
    m << rec.dump() << "\n";
  }
}

Dataset load(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path man_path = fs::path(dir) / "manifest.jsonl";
  std::ifstream m(man_path);
  if (!m) throw DataError("cannot open " + man_path.string());
  std::string line;
  if (!std::getline(m, line)) throw DataError("truncated: empty manifest");
  json header = json::parse(line, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "vpa-synthdata")
    throw DataError("version-mismatch: not a vpa-synthdata manifest");
  if (header.value("version", -1) != kFormatVersion)
    throw DataError("version-mismatch: manifest version " +
                    std::to_string(header.value("version", -1)) +
                    ", expected " + std::to_string(kFormatVersion));

  Dataset ds;
  const auto& c = header.at("config");
  ds.cfg.n_concepts = c.at("n_concepts");
  ds.cfg.n_pretrain = c.at("n_pretrain");
  ds.cfg.n_train = c.at("n_train");
  ds.cfg.n_val = c.at("n_val");
  ds.cfg.n_test = c.at("n_test");
  ds.cfg.frames = c.at("frames");
  ds.cfg.patches = c.at("patches");
  ds.cfg.patch_dim = c.at("patch_dim");
  ds.cfg.vocab = c.at("vocab");
  ds.cfg.max_words = c.at("max_words");
  ds.cfg.domain_shift = c.at("domain_shift");
  ds.cfg.noise_std = c.at("noise_std");
  ds.cfg.seed = c.at("seed");
  ds.cfg.multilabel = c.at("multilabel");
  ds.cfg.labels_per_item = c.at("labels_per_item");

  const fs::path feat_path =
      fs::path(dir) / header.value("feature_file", "features.bin");
  std::ifstream f(feat_path, std::ios::binary | std::ios::ate);
  if (!f) throw DataError("cannot open " + feat_path.string());
  const std::size_t bytes = static_cast<std::size_t>(f.tellg());
  if (bytes != header.at("feature_bytes").get<std::size_t>())
    throw DataError("truncated: feature file has " + std::to_string(bytes) +
                    " bytes, manifest declares " +
                    std::to_string(header.at("feature_bytes").get<std::size_t>()));
  std::vector<float> blob(bytes / sizeof(float));
  f.seekg(0);
  f.read(reinterpret_cast<char*>(blob.data()),
         static_cast<std::streamsize>(bytes));
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(blob.data()),
                         static_cast<uInt>(bytes));
  if (crc != header.at("feature_crc32").get<unsigned long>())
    throw DataError("checksum: feature blob crc32 mismatch");

  const std::size_t item_size = static_cast<std::size_t>(ds.cfg.frames) *
                                ds.cfg.patches * ds.cfg.patch_dim;
  const std::size_t n_items = header.at("n_items").get<std::size_t>();
  for (std::size_t i = 0; i < n_items; ++i) {
    if (!std::getline(m, line))
      throw DataError("truncated: manifest ends after " + std::to_string(i) +
                      " of " + std::to_string(n_items) + " items");
    json rec = json::parse(line);
    PairedItem it;
    it.id = rec.at("id");
    it.split = split_from_string(rec.at("split"));
    it.labels = rec.at("labels").get<std::vector<int>>();
    it.tokens = rec.at("tokens").get<std::vector<int>>();
    const std::size_t off = rec.at("offset");
    const std::size_t cnt = rec.at("count");
    if (cnt != item_size)
      throw DataError("manifest item " + std::to_string(it.id) +
                      " count does not match declared shapes");
    if (off + cnt > blob.size())
      throw DataError("truncated: item " + std::to_string(it.id) +
                      " extends past feature blob");
    it.patches.assign(blob.begin() + off, blob.begin() + off + cnt);
    ds.items.push_back(std::move(it));
  }
  return ds;
}

double centroid_accuracy(const Dataset& ds, Split split) {
  const auto idx = ds.split_indices(split);
  if (idx.empty()) throw DataError("centroid_accuracy: empty split");
  const int d = ds.cfg.patch_dim;
  auto mean_feature = [&](const PairedItem& it) {
    std::vector<double> m(d, 0.0);
    const int n = static_cast<int>(it.patches.size()) / d;
    for (int p = 0; p < n; ++p)
      for (int j = 0; j < d; ++j)
        m[j] += it.patches[static_cast<std::size_t>(p) * d + j];
    for (auto& v : m) v /= n;
    return m;
  };
  std::vector<std::vector<double>> centroid(ds.cfg.n_concepts,
                                            std::vector<double>(d, 0.0));
  std::vector<int> count(ds.cfg.n_concepts, 0);
  for (int i : idx) {
    const auto m = mean_feature(ds.items[i]);
    const int c = ds.items[i].labels[0];
    for (int j = 0; j < d; ++j) centroid[c][j] += m[j];
    ++count[c];
  }
  for (int c = 0; c < ds.cfg.n_concepts; ++c)
    if (count[c] > 0)
      for (auto& v : centroid[c]) v /= count[c];
  int hits = 0;
  for (int i : idx) {
    const auto m = mean_feature(ds.items[i]);
    int best = -1;
    double best_d = 0.0;
    for (int c = 0; c < ds.cfg.n_concepts; ++c) {
      if (count[c] == 0) continue;
      double dist = 0.0;
      for (int j = 0; j < d; ++j)
        dist += (m[j] - centroid[c][j]) * (m[j] - centroid[c][j]);
      if (best < 0 || dist < best_d) {
        best = c;
        best_d = dist;
      }
    }
    hits += best == ds.items[i].labels[0] ? 1 : 0;
  }
  return static_cast<double>(hits) / idx.size();
}

}  // namespace vpa
