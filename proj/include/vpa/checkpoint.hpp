#pragma once

#include <string>
#include <vector>

#include "vpa/encoders.hpp"

namespace vpa {

// single-file checkpoint: magic, length-prefixed JSON header (named shapes,
// offsets, crc32, basis counts, config dump), then the raw float64 payload
struct CheckpointExtras {
  std::vector<long> basis_counts;
  std::string config_dump;
};

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const CheckpointExtras& extras = {});

// fills the store's tensors in place; every stored name must exist with the
// same shape. By default the checkpoint must cover the whole store;
// allow_missing leaves uncovered parameters (e.g. freshly initialized prompt
// modules on top of a pretrained backbone) untouched.
CheckpointExtras load_checkpoint(const std::string& path, ParamStore& store,
                                 bool allow_missing = false);

}  // namespace vpa
