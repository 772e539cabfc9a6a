#pragma once

// Checkpoint file: one line of compact JSON manifest
//   {"format":"fedmode-checkpoint","version":1,"spec":{...},
//    "tensors":[{"name":..,"shape":[..],"offset":..},..],"blob_bytes":N}
// followed by '\n' and the tensors as a flat little-endian IEEE-754 binary64
// blob. Offsets are byte offsets into the blob.

#include <filesystem>
#include <iosfwd>

#include "fedmode/model.hpp"
#include "fedmode/tensor.hpp"

namespace fedmode::nn {

struct Checkpoint {
    ModelSpec spec;
    ParamSet params;
};

void write_checkpoint(std::ostream& out, const ModelSpec& spec, const ParamSet& params);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const ParamSet& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fedmode::nn
