#pragma once

#include <cstdint>
#include <string>

#include "mcmdpo/model.hpp"

namespace mcmdpo {

struct Checkpoint {
  ModelParams params;
  uint64_t vocab_hash = 0;  // fingerprint of the vocabulary used at training time
};

// Checkpoints are a JSON manifest listing {name, group, shape, offset} plus
// a companion blob of little-endian 64-bit reals (manifest path with the
// extension swapped to .bin). Both files are written to a temp name and
// renamed, so readers never observe partial writes.
void save_checkpoint(const ModelParams& params, const std::string& manifest_path,
                     uint64_t vocab_hash = 0);
Checkpoint load_checkpoint(const std::string& manifest_path);

std::string checkpoint_blob_path(const std::string& manifest_path);

}  // namespace mcmdpo
