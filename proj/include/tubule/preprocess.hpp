#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "tubule/volume.hpp"

namespace tubule {

/// Clamps to the HU window [lo, hi] and rescales to [0, 1].
Volume normalize_hu(const Volume& ct, double lo = -1000.0, double hi = 400.0);

/// Where a crop sits inside its source grid.
struct CropRecord {
    Dims source_dims;
    Vec3 source_origin;
    std::array<std::size_t, 3> offset{};  // z,y,x
    Dims crop_dims;
};

/// Tight bounding box of mask>0, grown by `margin` voxels per side and
/// clipped to the volume.
CropRecord mask_bbox(const LabelMap& mask, std::size_t margin);

template <class T>
Grid<T> crop(const Grid<T>& g, const CropRecord& rec) {
    Vec3 origin = g.origin();
    for (int a = 0; a < 3; ++a) origin[a] += static_cast<double>(rec.offset[a]) * g.spacing()[a];
    Grid<T> out(rec.crop_dims, g.spacing(), origin);
    out.set_element_type(g.element_type());
    for (std::size_t z = 0; z < rec.crop_dims.z; ++z)
        for (std::size_t y = 0; y < rec.crop_dims.y; ++y)
            for (std::size_t x = 0; x < rec.crop_dims.x; ++x)
                out(z, y, x) = g(z + rec.offset[0], y + rec.offset[1], x + rec.offset[2]);
    return out;
}

/// Places a cropped grid back into the source geometry; voxels outside the
/// crop take `fill`.
template <class T>
Grid<T> embed(const Grid<T>& cropped, const CropRecord& rec, T fill = T{}) {
    if (!(cropped.dims() == rec.crop_dims)) throw DataError("embed: grid does not match crop record");
    Grid<T> out(rec.source_dims, cropped.spacing(), rec.source_origin, fill);
    out.set_element_type(cropped.element_type());
    for (std::size_t z = 0; z < rec.crop_dims.z; ++z)
        for (std::size_t y = 0; y < rec.crop_dims.y; ++y)
            for (std::size_t x = 0; x < rec.crop_dims.x; ++x)
                out(z + rec.offset[0], y + rec.offset[1], x + rec.offset[2]) = cropped(z, y, x);
    return out;
}

std::pair<Volume, CropRecord> crop_to_mask_bbox(const Volume& vol, const LabelMap& mask, std::size_t margin);

struct AugmentConfig {
    double flip_prob = 0.5;
    std::array<std::size_t, 3> shift_max{2, 8, 8};  // z,y,x voxels
    double smooth_sigma = 1.0;
    double smooth_prob = 0.5;
    double jitter_amp = 0.05;
    double jitter_prob = 0.5;
    std::uint64_t seed = 0;

    void validate(const Dims& dims) const;
};

/// Same flip/shift on both grids; smoothing and jitter on the volume only.
/// Deterministic for a given cfg.seed.
std::pair<Volume, LabelMap> augment(const Volume& vol, const LabelMap& label, const AugmentConfig& cfg);

/// Multi-channel form: the spatial transform hits every channel and the
/// label; smoothing and jitter only channel 0 (the image). Other channels
/// (context, distance priors) are not intensity data.
std::pair<std::vector<Volume>, LabelMap> augment_channels(const std::vector<Volume>& channels, const LabelMap& label,
                                                          const AugmentConfig& cfg);

/// Separable Gaussian blur, kernel truncated at ceil(3*sigma) and renormalised
/// over the in-bounds taps.
Volume gaussian_smooth(const Volume& vol, double sigma);

}  // namespace tubule
