#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mixsign/tensor/tensor.h"

namespace mixsign {

struct NamedTensor {
    std::string name;
    Tensor value;
};
using ParamList = std::vector<NamedTensor>;

// Parameter files come in pairs: a JSON manifest listing names and shapes in
// order, and a blob of little-endian float64 values concatenated in the same
// order. Both are written deterministically so identical parameters produce
// identical bytes.
void save_parameters(const ParamList& params, const std::filesystem::path& manifest,
                     const std::filesystem::path& blob);
ParamList load_parameters(const std::filesystem::path& manifest, const std::filesystem::path& blob);

std::string parameter_manifest_text(const ParamList& params);
std::vector<unsigned char> parameter_blob_bytes(const ParamList& params);

}  // namespace mixsign
