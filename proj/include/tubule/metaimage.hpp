#pragma once

#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "tubule/volume.hpp"

namespace tubule {

/// MET_SHORT / MET_FLOAT files load as Volume, MET_UCHAR as LabelMap.
using Image = std::variant<Volume, LabelMap>;

/// Reads a single-channel MetaImage (.mha with LOCAL payload, or .mhd
/// referencing a raw file next to it). DimSize is x,y,z on disk and is
/// transposed to the in-memory z,y,x order here.
Image read_metaimage(const std::filesystem::path& path);

Volume read_volume(const std::filesystem::path& path);
LabelMap read_labelmap(const std::filesystem::path& path);

/// Writes a LOCAL MetaImage. Volumes are written with their element_type()
/// (Short requires integral values within int16 range). Output bytes are a
/// pure function of the grid.
void write_metaimage(const Volume& volume, const std::filesystem::path& path);
void write_metaimage(const LabelMap& labels, const std::filesystem::path& path);

/// Multi-channel MET_FLOAT (ElementNumberOfChannels, voxel-interleaved).
/// Used for per-class probability maps.
std::vector<Volume> read_metaimage_channels(const std::filesystem::path& path);
void write_metaimage_channels(std::span<const Volume> channels, const std::filesystem::path& path);

}  // namespace tubule
