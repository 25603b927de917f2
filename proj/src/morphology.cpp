#include "tubule/morphology.hpp"

#include <cmath>
#include <deque>

namespace tubule {

const std::vector<Index3>& neighbor_offsets(Connectivity c) {
    static const auto build = [](int max_manhattan) {
        std::vector<Index3> out;
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int m = std::abs(dz) + std::abs(dy) + std::abs(dx);
                    if (m == 0 || m > max_manhattan) continue;
                    out.push_back({dz, dy, dx});
                }
        return out;
    };
    static const std::vector<Index3> n6 = build(1);
    static const std::vector<Index3> n18 = build(2);
    static const std::vector<Index3> n26 = build(3);
    switch (c) {
        case Connectivity::Face6: return n6;
        case Connectivity::Edge18: return n18;
        case Connectivity::Full26: break;
    }
    return n26;
}

Components connected_components(const LabelMap& mask, Connectivity c) {
    const auto& offs = neighbor_offsets(c);
    Components out;
    out.label.assign(mask.size(), -1);
    std::deque<std::size_t> queue;
    for (std::size_t seed = 0; seed < mask.size(); ++seed) {
        if (!mask[seed] || out.label[seed] >= 0) continue;
        const auto id = static_cast<std::int32_t>(out.sizes.size());
        out.sizes.push_back(0);
        out.label[seed] = id;
        queue.push_back(seed);
        while (!queue.empty()) {
            const auto cur = queue.front();
            queue.pop_front();
            ++out.sizes[id];
            const auto p = mask.coords(cur);
            for (const auto& o : offs) {
                const auto z = p[0] + o[0], y = p[1] + o[1], x = p[2] + o[2];
                if (!mask.contains(z, y, x)) continue;
                const auto n = mask.index(z, y, x);
                if (mask[n] && out.label[n] < 0) {
                    out.label[n] = id;
                    queue.push_back(n);
                }
            }
        }
    }
    return out;
}

LabelMap largest_component(const LabelMap& mask, Connectivity c) {
    const auto comps = connected_components(mask, c);
    LabelMap out = LabelMap::like(mask);
    if (comps.sizes.empty()) return out;
    std::size_t best = 0;
    for (std::size_t i = 1; i < comps.sizes.size(); ++i) {
        if (comps.sizes[i] > comps.sizes[best]) best = i;
    }
    for (std::size_t i = 0; i < mask.size(); ++i) out[i] = comps.label[i] == static_cast<std::int32_t>(best);
    return out;
}

std::size_t count_components(const LabelMap& mask, Connectivity c) {
    return connected_components(mask, c).sizes.size();
}

std::vector<Index3> ball_offsets(double radius) {
    std::vector<Index3> out;
    const int r = static_cast<int>(std::floor(radius));
    for (int dz = -r; dz <= r; ++dz)
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
                if (dz * dz + dy * dy + dx * dx <= radius * radius) out.push_back({dz, dy, dx});
            }
    return out;
}

LabelMap dilate(const LabelMap& mask, const std::vector<Index3>& se) {
    LabelMap out = LabelMap::like(mask);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        out[i] = 1;
        const auto p = mask.coords(i);
        for (const auto& o : se) {
            const auto z = p[0] + o[0], y = p[1] + o[1], x = p[2] + o[2];
            if (mask.contains(z, y, x)) out[mask.index(z, y, x)] = 1;
        }
    }
    return out;
}

namespace {

// Marks background voxels connected (via `offs`) to the border of the region
// described by [z0, z1) x Y x X. Returns 1 where reachable.
std::vector<std::uint8_t> border_reachable(const LabelMap& mask, std::size_t z0, std::size_t z1,
                                           const std::vector<Index3>& offs) {
    const auto& d = mask.dims();
    std::vector<std::uint8_t> seen(mask.size(), 0);
    std::deque<std::size_t> queue;
    const bool three_d = z1 - z0 == d.z;
    for (std::size_t z = z0; z < z1; ++z)
        for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = 0; x < d.x; ++x) {
                const bool border = y == 0 || x == 0 || y + 1 == d.y || x + 1 == d.x ||
                                    (three_d && (z == 0 || z + 1 == d.z));
                const auto i = mask.index(z, y, x);
                if (border && !mask[i] && !seen[i]) {
                    seen[i] = 1;
                    queue.push_back(i);
                }
            }
    while (!queue.empty()) {
        const auto cur = queue.front();
        queue.pop_front();
        const auto p = mask.coords(cur);
        for (const auto& o : offs) {
            const auto z = p[0] + o[0], y = p[1] + o[1], x = p[2] + o[2];
            if (!mask.contains(z, y, x) || z < static_cast<std::ptrdiff_t>(z0) || z >= static_cast<std::ptrdiff_t>(z1))
                continue;
            const auto n = mask.index(z, y, x);
            if (!mask[n] && !seen[n]) {
                seen[n] = 1;
                queue.push_back(n);
            }
        }
    }
    return seen;
}

}  // namespace

LabelMap fill_holes(const LabelMap& mask) {
    static const std::vector<Index3> in_plane4{{0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
    LabelMap out = mask;
    for (std::size_t z = 0; z < mask.dims().z; ++z) {
        const auto reach = border_reachable(out, z, z + 1, in_plane4);
        for (std::size_t y = 0; y < mask.dims().y; ++y)
            for (std::size_t x = 0; x < mask.dims().x; ++x) {
                const auto i = out.index(z, y, x);
                if (!out[i] && !reach[i]) out[i] = 1;
            }
    }
    const auto reach = border_reachable(out, 0, out.dims().z, neighbor_offsets(Connectivity::Face6));
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!out[i] && !reach[i]) out[i] = 1;
    }
    for (auto& v : out.data()) v = v ? 1 : 0;
    return out;
}

}  // namespace tubule
