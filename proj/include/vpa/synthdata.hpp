#pragma once

#include <string>
#include <vector>

#include "vpa/config.hpp"
#include "vpa/rng.hpp"

namespace vpa {

enum class Split { kPretrain, kAdaptTrain, kAdaptVal, kAdaptTest };
std::string split_name(Split s);
Split split_from_string(const std::string& s);

struct GeneratorConfig {
  int n_concepts = 8;
  int n_pretrain = 64;
  int n_train = 64;
  int n_val = 32;
  int n_test = 32;
  int frames = 4;       // T
  int patches = 4;      // N_p
  int patch_dim = 16;
  int vocab = 64;
  int max_words = 8;    // N_w
  double domain_shift = 0.5;  // adapt splits only; pretrain is always 0
  double noise_std = 0.1;
  std::uint64_t seed = 7;
  bool multilabel = false;
  int labels_per_item = 1;  // upper bound in multilabel mode

  void validate() const;
};

struct PairedItem {
  int id = 0;
  Split split = Split::kPretrain;
  std::vector<float> patches;  // T*N_p*patch_dim, frame-major
  std::vector<int> tokens;     // SOS ... EOS
  std::vector<int> labels;     // concept ids
};

struct Dataset {
  GeneratorConfig cfg;
  std::vector<PairedItem> items;

  std::vector<int> split_indices(Split s) const;
  // token sequence naming a single concept, used as the class text at
  // classification time
  std::vector<int> class_template(int concept_id) const;
};

// deterministic synthetic video-text pairs with planted shared latent
// structure; adapt splits see a fixed rotation-plus-bias distortion scaled
// by domain_shift
Dataset generate(const GeneratorConfig& cfg);

// manifest.jsonl (versioned header line + one record per item) plus a flat
// little-endian float32 feature blob with a crc32 recorded in the header
void save(const Dataset& ds, const std::string& dir);
Dataset load(const std::string& dir);

// nearest-centroid accuracy on mean patch features over one split, the
// separability floor checked at generation time
double centroid_accuracy(const Dataset& ds, Split split);

}  // namespace vpa
