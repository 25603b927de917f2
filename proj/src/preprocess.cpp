#include "tubule/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace tubule {

Volume normalize_hu(const Volume& ct, double lo, double hi) {
    if (!(lo < hi)) throw DataError("normalize_hu: window requires lo < hi");
    require_finite(ct, "normalize_hu");
    Volume out = Volume::like(ct);
    const double width = hi - lo;
    for (std::size_t i = 0; i < ct.size(); ++i) {
        const double v = std::clamp(static_cast<double>(ct[i]), lo, hi);
        out[i] = static_cast<float>((v - lo) / width);
    }
    return out;
}

CropRecord mask_bbox(const LabelMap& mask, std::size_t margin) {
    const auto& d = mask.dims();
    std::array<std::size_t, 3> lo{d.z, d.y, d.x};
    std::array<std::size_t, 3> hi{0, 0, 0};
    bool any = false;
    for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = 0; x < d.x; ++x) {
                if (!mask(z, y, x)) continue;
                any = true;
                const std::array<std::size_t, 3> c{z, y, x};
                for (int a = 0; a < 3; ++a) {
                    lo[a] = std::min(lo[a], c[a]);
                    hi[a] = std::max(hi[a], c[a]);
                }
            }
    if (!any) throw DataError("crop_to_mask_bbox: mask is empty");
    CropRecord rec;
    rec.source_dims = d;
    rec.source_origin = mask.origin();
    std::array<std::size_t, 3> ext{};
    for (int a = 0; a < 3; ++a) {
        rec.offset[a] = lo[a] > margin ? lo[a] - margin : 0;
        const std::size_t end = std::min(hi[a] + margin + 1, d[a]);
        ext[a] = end - rec.offset[a];
    }
    rec.crop_dims = {ext[0], ext[1], ext[2]};
    return rec;
}

std::pair<Volume, CropRecord> crop_to_mask_bbox(const Volume& vol, const LabelMap& mask, std::size_t margin) {
    require_same_geometry(vol, mask, "crop_to_mask_bbox");
    const auto rec = mask_bbox(mask, margin);
    return {crop(vol, rec), rec};
}

void AugmentConfig::validate(const Dims& dims) const {
    for (double p : {flip_prob, smooth_prob, jitter_prob}) {
        if (!(p >= 0.0 && p <= 1.0)) throw DataError("augment: probabilities must lie in [0,1]");
    }
    if (!(smooth_sigma >= 0.0) || !(jitter_amp >= 0.0)) throw DataError("augment: sigma and jitter must be >= 0");
    for (int a = 0; a < 3; ++a) {
        if (shift_max[a] >= dims[a]) throw DataError("augment: shift_max must be smaller than the volume extent");
    }
}

namespace {

std::vector<double> gaussian_taps(double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> taps(2 * radius + 1);
    for (int i = -radius; i <= radius; ++i) taps[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    return taps;
}

template <class T>
Grid<T> flip_x(const Grid<T>& g) {
    Grid<T> out = g;
    const auto& d = g.dims();
    for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = 0; x < d.x; ++x) out(z, y, x) = g(z, y, d.x - 1 - x);
    return out;
}

template <class T>
Grid<T> shift(const Grid<T>& g, const std::array<std::ptrdiff_t, 3>& s) {
    Grid<T> out = Grid<T>::like(g);
    out.set_element_type(g.element_type());
    const auto& d = g.dims();
    for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = 0; x < d.x; ++x) {
                const auto sz = static_cast<std::ptrdiff_t>(z) - s[0];
                const auto sy = static_cast<std::ptrdiff_t>(y) - s[1];
                const auto sx = static_cast<std::ptrdiff_t>(x) - s[2];
                if (g.contains(sz, sy, sx)) out(z, y, x) = g(sz, sy, sx);
            }
    return out;
}

}  // namespace

Volume gaussian_smooth(const Volume& vol, double sigma) {
    if (!(sigma > 0.0)) return vol;
    const auto taps = gaussian_taps(sigma);
    const auto radius = static_cast<std::ptrdiff_t>(taps.size() / 2);
    const auto& d = vol.dims();
    std::vector<double> cur(vol.data().begin(), vol.data().end());
    std::vector<double> next(cur.size());
    const std::array<std::size_t, 3> stride{d.y * d.x, d.x, 1};
    for (int axis = 0; axis < 3; ++axis) {
        const auto n = static_cast<std::ptrdiff_t>(d[axis]);
        for (std::size_t i = 0; i < cur.size(); ++i) {
            const auto c = vol.coords(i)[axis];
            double acc = 0.0;
            double norm = 0.0;
            for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
                const auto p = c + k;
                if (p < 0 || p >= n) continue;
                const double w = taps[k + radius];
                acc += w * cur[i + static_cast<std::size_t>(k * static_cast<std::ptrdiff_t>(stride[axis]))];
                norm += w;
            }
            next[i] = acc / norm;
        }
        std::swap(cur, next);
    }
    Volume out = Volume::like(vol);
    for (std::size_t i = 0; i < cur.size(); ++i) out[i] = static_cast<float>(cur[i]);
    return out;
}

std::pair<std::vector<Volume>, LabelMap> augment_channels(const std::vector<Volume>& channels, const LabelMap& label,
                                                          const AugmentConfig& cfg) {
    if (channels.empty()) throw DataError("augment: no input channels");
    for (const auto& c : channels) require_same_geometry(c, label, "augment");
    cfg.validate(label.dims());
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<Volume> v = channels;
    LabelMap l = label;
    if (unit(rng) < cfg.flip_prob) {
        for (auto& c : v) c = flip_x(c);
        l = flip_x(l);
    }
    std::array<std::ptrdiff_t, 3> s{};
    bool shifted = false;
    for (int a = 0; a < 3; ++a) {
        const auto m = static_cast<std::ptrdiff_t>(cfg.shift_max[a]);
        s[a] = m == 0 ? 0 : std::uniform_int_distribution<std::ptrdiff_t>(-m, m)(rng);
        shifted |= s[a] != 0;
    }
    if (shifted) {
        for (auto& c : v) c = shift(c, s);
        l = shift(l, s);
    }
    // Intensity perturbations touch the image channel only.
    if (unit(rng) < cfg.smooth_prob && cfg.smooth_sigma > 0.0) v[0] = gaussian_smooth(v[0], cfg.smooth_sigma);
    if (unit(rng) < cfg.jitter_prob && cfg.jitter_amp > 0.0) {
        std::uniform_real_distribution<double> jitter(-cfg.jitter_amp, cfg.jitter_amp);
        for (auto& x : v[0].data()) x = static_cast<float>(std::clamp(x + jitter(rng), 0.0, 1.0));
    }
    return {std::move(v), std::move(l)};
}

std::pair<Volume, LabelMap> augment(const Volume& vol, const LabelMap& label, const AugmentConfig& cfg) {
    auto [v, l] = augment_channels({vol}, label, cfg);
    return {std::move(v[0]), std::move(l)};
}

}  // namespace tubule
