#include "tubule/anatomy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tubule/morphology.hpp"

namespace tubule {

std::size_t histogram_bin(double v, double lo, double hi, std::size_t bins) {
    const double t = (v - lo) / (hi - lo) * static_cast<double>(bins);
    if (t <= 0.0) return 0;
    return std::min(bins - 1, static_cast<std::size_t>(t));
}

double otsu_between_class(std::span<const std::uint64_t> histogram, std::size_t k) {
    // Counts and index sums are integers, so every intermediate below is exact
    // in double for realistic volume sizes; equal splits compare equal.
    double n0 = 0, s0 = 0, n1 = 0, s1 = 0;
    for (std::size_t b = 0; b < histogram.size(); ++b) {
        const auto c = static_cast<double>(histogram[b]);
        if (b <= k) {
            n0 += c;
            s0 += c * static_cast<double>(b);
        } else {
            n1 += c;
            s1 += c * static_cast<double>(b);
        }
    }
    if (n0 == 0 || n1 == 0) return 0.0;
    const double diff = n1 * s0 - n0 * s1;
    return diff * diff / (n0 * n1);
}

double otsu_threshold(const Volume& vol, std::size_t bins) {
    if (bins < 2) throw DataError("otsu_threshold: need at least 2 bins");
    const auto [mn, mx] = std::minmax_element(vol.data().begin(), vol.data().end());
    const double lo = *mn, hi = *mx;
    if (!(lo < hi)) throw DataError("otsu_threshold: constant volume has no separable classes");
    std::vector<std::uint64_t> hist(bins, 0);
    for (float v : vol.data()) ++hist[histogram_bin(v, lo, hi, bins)];

    // Running sums instead of otsu_between_class per k; same integer values.
    double n_total = 0, s_total = 0;
    for (std::size_t b = 0; b < bins; ++b) {
        n_total += static_cast<double>(hist[b]);
        s_total += static_cast<double>(hist[b]) * static_cast<double>(b);
    }
    double n0 = 0, s0 = 0, best = -1.0;
    std::size_t best_k = 0;
    for (std::size_t k = 0; k + 1 < bins; ++k) {
        n0 += static_cast<double>(hist[k]);
        s0 += static_cast<double>(hist[k]) * static_cast<double>(k);
        const double n1 = n_total - n0, s1 = s_total - s0;
        double score = 0.0;
        if (n0 > 0 && n1 > 0) {
            const double diff = n1 * s0 - n0 * s1;
            score = diff * diff / (n0 * n1);
        }
        if (score > best) {
            best = score;
            best_k = k;
        }
    }
    return lo + static_cast<double>(best_k + 1) * (hi - lo) / static_cast<double>(bins);
}

namespace {

using Pixel = std::pair<std::ptrdiff_t, std::ptrdiff_t>;

std::ptrdiff_t cross(const Pixel& o, const Pixel& a, const Pixel& b) {
    return (a.first - o.first) * (b.second - o.second) - (a.second - o.second) * (b.first - o.first);
}

// Andrew's monotone chain; counter-clockwise, collinear points dropped.
std::vector<Pixel> hull(std::vector<Pixel> pts) {
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 3) return pts;
    std::vector<Pixel> h(2 * pts.size());
    std::size_t k = 0;
    for (const auto& p : pts) {
        while (k >= 2 && cross(h[k - 2], h[k - 1], p) <= 0) --k;
        h[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
        h[k++] = pts[i];
    }
    h.resize(k - 1);
    return h;
}

bool on_segment(const Pixel& a, const Pixel& b, const Pixel& p) {
    if (cross(a, b, p) != 0) return false;
    return std::min(a.first, b.first) <= p.first && p.first <= std::max(a.first, b.first) &&
           std::min(a.second, b.second) <= p.second && p.second <= std::max(a.second, b.second);
}

bool inside(const std::vector<Pixel>& h, const Pixel& p) {
    if (h.size() == 1) return p == h[0];
    if (h.size() == 2) return on_segment(h[0], h[1], p);
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (cross(h[i], h[(i + 1) % h.size()], p) < 0) return false;
    }
    return true;
}

}  // namespace

std::vector<Pixel> convex_hull_fill(const std::vector<Pixel>& pixels) {
    if (pixels.empty()) return {};
    const auto h = hull(pixels);
    std::ptrdiff_t y0 = h[0].first, y1 = y0, x0 = h[0].second, x1 = x0;
    for (const auto& p : h) {
        y0 = std::min(y0, p.first);
        y1 = std::max(y1, p.first);
        x0 = std::min(x0, p.second);
        x1 = std::max(x1, p.second);
    }
    std::vector<Pixel> out;
    for (auto y = y0; y <= y1; ++y)
        for (auto x = x0; x <= x1; ++x)
            if (inside(h, {y, x})) out.emplace_back(y, x);
    return out;
}

LabelMap segment_lungs(const Volume& ct_normalized) {
    const double t = otsu_threshold(ct_normalized);
    const auto& d = ct_normalized.dims();
    LabelMap low = LabelMap::like(ct_normalized);
    for (std::size_t i = 0; i < low.size(); ++i) low[i] = ct_normalized[i] < t;

    const auto comps = connected_components(low, Connectivity::Full26);
    std::vector<bool> exterior(comps.sizes.size(), false);
    for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = 0; x < d.x; ++x) {
                if (y != 0 && x != 0 && y + 1 != d.y && x + 1 != d.x) continue;
                const auto id = comps.label[low.index(z, y, x)];
                if (id >= 0) exterior[id] = true;
            }
    std::vector<std::size_t> interior;
    for (std::size_t i = 0; i < comps.sizes.size(); ++i) {
        if (!exterior[i]) interior.push_back(i);
    }
    if (interior.empty()) throw DataError("segment_lungs: no interior low-intensity component found");
    std::stable_sort(interior.begin(), interior.end(),
                     [&](std::size_t a, std::size_t b) { return comps.sizes[a] > comps.sizes[b]; });
    interior.resize(std::min<std::size_t>(2, interior.size()));

    LabelMap out = LabelMap::like(ct_normalized);
    for (auto id : interior) {
        LabelMap lung = LabelMap::like(ct_normalized);
        for (std::size_t i = 0; i < lung.size(); ++i) lung[i] = comps.label[i] == static_cast<std::int32_t>(id);
        lung = fill_holes(lung);
        for (std::size_t z = 0; z < d.z; ++z) {
            std::vector<Pixel> pix;
            for (std::size_t y = 0; y < d.y; ++y)
                for (std::size_t x = 0; x < d.x; ++x)
                    if (lung(z, y, x)) pix.emplace_back(y, x);
            for (const auto& [y, x] : convex_hull_fill(pix)) out(z, y, x) = 1;
        }
    }
    return out;
}

const std::vector<Index3>& airway_wall_element() {
    static const std::vector<Index3> se = ball_offsets(1.5);
    return se;
}

LabelMap extract_airway_wall(const LabelMap& lumen) {
    LabelMap wall = dilate(lumen, airway_wall_element());
    for (std::size_t i = 0; i < wall.size(); ++i) {
        if (lumen[i]) wall[i] = 0;
    }
    return wall;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// One pass of the lower envelope of parabolas f(p) + ((q - p) * s)^2 along a
// line. f and out are strided views into the full volume buffer.
void envelope_pass(const double* f, double* out, std::size_t n, std::size_t stride, double s,
                   std::vector<std::ptrdiff_t>& v, std::vector<double>& zb) {
    v.clear();
    zb.clear();
    const auto value_at = [&](std::ptrdiff_t p, std::ptrdiff_t q) {
        const double dq = static_cast<double>(q - p) * s;
        return f[static_cast<std::size_t>(p) * stride] + dq * dq;
    };
    const auto key = [&](std::ptrdiff_t p) {
        const double ps = static_cast<double>(p) * s;
        return f[static_cast<std::size_t>(p) * stride] + ps * ps;
    };
    for (std::size_t q = 0; q < n; ++q) {
        if (!std::isfinite(f[q * stride])) continue;
        const auto qq = static_cast<std::ptrdiff_t>(q);
        while (!v.empty()) {
            const auto p = v.back();
            const double inter = (key(qq) - key(p)) / (2.0 * s * s * static_cast<double>(qq - p));
            if (inter <= zb.back()) {
                v.pop_back();
                zb.pop_back();
            } else {
                v.push_back(qq);
                zb.push_back(inter);
                break;
            }
        }
        if (v.empty()) {
            v.push_back(qq);
            zb.push_back(-kInf);
        }
    }
    if (v.empty()) {
        for (std::size_t q = 0; q < n; ++q) out[q * stride] = kInf;
        return;
    }
    std::size_t k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        const auto qq = static_cast<std::ptrdiff_t>(q);
        while (k + 1 < v.size() && zb[k + 1] < static_cast<double>(qq)) ++k;
        // Neighbouring parabolas guard against rounding in the breakpoints.
        double best = value_at(v[k], qq);
        if (k > 0) best = std::min(best, value_at(v[k - 1], qq));
        if (k + 1 < v.size()) best = std::min(best, value_at(v[k + 1], qq));
        out[q * stride] = best;
    }
}

}  // namespace

Volume euclidean_distance_map(const LabelMap& seed) {
    if (count_nonzero(seed) == 0) throw DataError("euclidean_distance_map: empty seed");
    const auto& d = seed.dims();
    std::vector<double> cur(seed.size());
    for (std::size_t i = 0; i < seed.size(); ++i) cur[i] = seed[i] ? 0.0 : kInf;
    std::vector<double> next(seed.size());
    std::vector<std::ptrdiff_t> v;
    std::vector<double> zb;

    // z pass: lines over z for every (y, x)
    for (std::size_t y = 0; y < d.y; ++y)
        for (std::size_t x = 0; x < d.x; ++x) {
            const auto base = seed.index(0, y, x);
            envelope_pass(cur.data() + base, next.data() + base, d.z, d.y * d.x, seed.spacing()[0], v, zb);
        }
    std::swap(cur, next);
    for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t x = 0; x < d.x; ++x) {
            const auto base = seed.index(z, 0, x);
            envelope_pass(cur.data() + base, next.data() + base, d.y, d.x, seed.spacing()[1], v, zb);
        }
    std::swap(cur, next);
    for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t y = 0; y < d.y; ++y) {
            const auto base = seed.index(z, y, 0);
            envelope_pass(cur.data() + base, next.data() + base, d.x, 1, seed.spacing()[2], v, zb);
        }
    Volume out = Volume::like(seed);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(std::sqrt(next[i]));
    return out;
}

AnatomyPrior build_anatomy_prior(const Volume& ct, const LabelMap& airway_lumen, const LabelMap& lung) {
    require_same_geometry(ct, airway_lumen, "build_anatomy_prior (ct, lumen)");
    require_same_geometry(ct, lung, "build_anatomy_prior (ct, lung)");
    require_alphabet(airway_lumen, {0, 1}, "airway lumen");
    require_alphabet(lung, {0, 1}, "lung mask");
    if (count_nonzero(airway_lumen) == 0) throw DataError("build_anatomy_prior: empty airway lumen");

    const auto wall = extract_airway_wall(airway_lumen);
    AnatomyPrior prior;
    prior.context = LabelMap::like(ct);
    for (std::size_t i = 0; i < ct.size(); ++i) {
        if (airway_lumen[i]) prior.context[i] = kContextLumen;
        else if (wall[i]) prior.context[i] = kContextWall;
        else if (lung[i]) prior.context[i] = kContextLung;
    }
    prior.distance = euclidean_distance_map(wall);
    for (std::size_t i = 0; i < ct.size(); ++i) {
        if (!lung[i]) prior.distance[i] = 0.0f;
    }
    return prior;
}

}  // namespace tubule
