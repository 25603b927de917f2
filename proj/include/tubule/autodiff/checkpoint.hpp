#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tubule/autodiff/tensor.hpp"

namespace tubule::ad {

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

/// Flat binary file: for each array in the given order, a little-endian
/// uint32 name length, the name bytes, uint32 rank, rank uint32 extents and
/// the float32 values. No header; identical inputs give identical bytes.
void save_checkpoint(const std::vector<NamedArray>& arrays, const std::filesystem::path& path);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

}  // namespace tubule::ad
