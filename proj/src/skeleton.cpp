#include "tubule/skeleton.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>

#include "tubule/morphology.hpp"

namespace tubule {

namespace {

using Cube = std::array<bool, 27>;

constexpr int cube_index(int dz, int dy, int dx) { return (dz + 1) * 9 + (dy + 1) * 3 + (dx + 1); }

Cube neighborhood(const LabelMap& m, std::size_t z, std::size_t y, std::size_t x) {
    Cube c{};
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const auto zz = static_cast<std::ptrdiff_t>(z) + dz;
                const auto yy = static_cast<std::ptrdiff_t>(y) + dy;
                const auto xx = static_cast<std::ptrdiff_t>(x) + dx;
                c[cube_index(dz, dy, dx)] = m.contains(zz, yy, xx) && m(zz, yy, xx) != 0;
            }
    return c;
}

int manhattan(int i) {
    const int dz = i / 9 - 1, dy = (i / 3) % 3 - 1, dx = i % 3 - 1;
    return std::abs(dz) + std::abs(dy) + std::abs(dx);
}

bool adjacent(int a, int b, int max_manhattan) {
    const int dz = std::abs(a / 9 - b / 9), dy = std::abs((a / 3) % 3 - (b / 3) % 3), dx = std::abs(a % 3 - b % 3);
    if (dz > 1 || dy > 1 || dx > 1) return false;
    const int m = dz + dy + dx;
    return m >= 1 && m <= max_manhattan;
}

// Counts components of the cells selected by `member` (centre excluded),
// using `adj` adjacency. If `must_touch` is set only components containing a
// 6-neighbour of the centre are counted.
int count_cube_components(const Cube& member, int adj, bool must_touch) {
    std::array<int, 27> comp{};
    comp.fill(-1);
    int count = 0;
    for (int s = 0; s < 27; ++s) {
        if (s == 13 || !member[s] || comp[s] >= 0) continue;
        std::array<int, 27> stack{};
        int top = 0;
        stack[top++] = s;
        comp[s] = count;
        bool touches = false;
        while (top > 0) {
            const int cur = stack[--top];
            touches |= manhattan(cur) == 1;
            for (int n = 0; n < 27; ++n) {
                if (n == 13 || !member[n] || comp[n] >= 0 || !adjacent(cur, n, adj)) continue;
                comp[n] = count;
                stack[top++] = n;
            }
        }
        ++count;
        if (must_touch && !touches) --count;
    }
    return count;
}

bool simple(const Cube& c) {
    // Foreground: 26-components in N26*; background: 6-components of N18*
    // that are 6-adjacent to the centre.
    if (count_cube_components(c, 3, false) != 1) return false;
    Cube bg{};
    for (int i = 0; i < 27; ++i) bg[i] = i != 13 && !c[i] && manhattan(i) <= 2;
    return count_cube_components(bg, 1, true) == 1;
}

int cube_neighbors(const Cube& c) {
    int n = 0;
    for (int i = 0; i < 27; ++i) n += i != 13 && c[i];
    return n;
}

}  // namespace

bool is_simple_point(const LabelMap& mask, std::size_t z, std::size_t y, std::size_t x) {
    return simple(neighborhood(mask, z, y, x));
}

int neighbor_count(const LabelMap& mask, std::size_t z, std::size_t y, std::size_t x) {
    return cube_neighbors(neighborhood(mask, z, y, x));
}

LabelMap skeletonize(const LabelMap& mask) {
    LabelMap img = LabelMap::like(mask);
    for (std::size_t i = 0; i < mask.size(); ++i) img[i] = mask[i] != 0;
    static constexpr std::array<Index3, 6> directions{
        Index3{0, -1, 0}, Index3{0, 1, 0}, Index3{0, 0, 1}, Index3{0, 0, -1}, Index3{1, 0, 0}, Index3{-1, 0, 0}};
    std::vector<std::size_t> candidates;
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& dir : directions) {
            candidates.clear();
            for (std::size_t i = 0; i < img.size(); ++i) {
                if (!img[i]) continue;
                const auto p = img.coords(i);
                const auto nz = p[0] + dir[0], ny = p[1] + dir[1], nx = p[2] + dir[2];
                if (img.contains(nz, ny, nx) && img(nz, ny, nx)) continue;  // not a border voxel in this direction
                const auto cube = neighborhood(img, p[0], p[1], p[2]);
                if (cube_neighbors(cube) == 1) continue;  // line end
                if (simple(cube)) candidates.push_back(i);
            }
            for (auto i : candidates) {
                const auto p = img.coords(i);
                const auto cube = neighborhood(img, p[0], p[1], p[2]);
                if (cube_neighbors(cube) == 1 || !simple(cube)) continue;
                img[i] = 0;
                changed = true;
            }
        }
    }
    return img;
}

std::vector<std::size_t> SkeletonBranch::detection_voxels() const {
    if (voxels.size() <= 2) return voxels;
    return {voxels.begin() + 1, voxels.end() - 1};
}

std::size_t SkeletonGraph::count(NodeKind kind) const {
    return static_cast<std::size_t>(
        std::count_if(nodes.begin(), nodes.end(), [&](const SkeletonNode& n) { return n.kind == kind; }));
}

double SkeletonGraph::total_length() const {
    double s = 0.0;
    for (const auto& b : branches) s += b.length;
    return s;
}

double path_length(const std::vector<std::size_t>& path, const Dims& dims, const Vec3& spacing) {
    double len = 0.0;
    for (std::size_t i = 1; i < path.size(); ++i) {
        const auto a = path[i - 1], b = path[i];
        const auto az = a / (dims.y * dims.x), ay = (a / dims.x) % dims.y, ax = a % dims.x;
        const auto bz = b / (dims.y * dims.x), by = (b / dims.x) % dims.y, bx = b % dims.x;
        const double dz = (static_cast<double>(az) - static_cast<double>(bz)) * spacing[0];
        const double dy = (static_cast<double>(ay) - static_cast<double>(by)) * spacing[1];
        const double dx = (static_cast<double>(ax) - static_cast<double>(bx)) * spacing[2];
        len += std::sqrt(dz * dz + dy * dy + dx * dx);
    }
    return len;
}

SkeletonGraph build_skeleton_graph(const LabelMap& centerline) {
    const auto& d = centerline.dims();
    for (std::size_t z = 0; z + 1 < d.z; ++z)
        for (std::size_t y = 0; y + 1 < d.y; ++y)
            for (std::size_t x = 0; x + 1 < d.x; ++x) {
                bool solid = true;
                for (int k = 0; k < 8 && solid; ++k) solid = centerline(z + (k >> 2), y + ((k >> 1) & 1), x + (k & 1)) != 0;
                if (solid) throw DataError("build_skeleton_graph: centerline is not thin (solid 2x2x2 block)");
            }

    const auto& offs = neighbor_offsets(Connectivity::Full26);
    const auto neighbors = [&](std::size_t i) {
        std::vector<std::size_t> out;
        const auto p = centerline.coords(i);
        for (const auto& o : offs) {
            const auto z = p[0] + o[0], y = p[1] + o[1], x = p[2] + o[2];
            if (centerline.contains(z, y, x) && centerline(z, y, x)) out.push_back(centerline.index(z, y, x));
        }
        return out;
    };

    SkeletonGraph g;
    g.dims = d;
    g.spacing = centerline.spacing();

    std::vector<int> degree(centerline.size(), 0);
    for (std::size_t i = 0; i < centerline.size(); ++i) {
        if (centerline[i]) degree[i] = static_cast<int>(neighbors(i).size());
    }

    // Node assignment: clusters of degree>=3 voxels, single terminals, isolated voxels.
    std::vector<std::ptrdiff_t> node_of(centerline.size(), -1);
    for (std::size_t i = 0; i < centerline.size(); ++i) {
        if (!centerline[i] || degree[i] == 2 || node_of[i] >= 0) continue;
        const auto id = static_cast<std::ptrdiff_t>(g.nodes.size());
        g.nodes.emplace_back();
        auto& node = g.nodes.back();
        if (degree[i] <= 1) {
            node.voxels.push_back(i);
            node.kind = degree[i] == 0 ? NodeKind::Isolated : NodeKind::Terminal;
            node_of[i] = id;
            continue;
        }
        std::vector<std::size_t> stack{i};
        node_of[i] = id;
        while (!stack.empty()) {
            const auto cur = stack.back();
            stack.pop_back();
            node.voxels.push_back(cur);
            for (auto n : neighbors(cur)) {
                if (degree[n] >= 3 && node_of[n] < 0) {
                    node_of[n] = id;
                    stack.push_back(n);
                }
            }
        }
        std::sort(node.voxels.begin(), node.voxels.end());
    }

    std::vector<bool> used(centerline.size(), false);
    std::set<std::pair<std::size_t, std::size_t>> direct;  // node-voxel to node-voxel steps already emitted
    const auto finish = [&](SkeletonBranch b) {
        b.length = path_length(b.voxels, d, g.spacing);
        ++g.nodes[b.from].degree;
        ++g.nodes[b.to].degree;
        g.branches.push_back(std::move(b));
    };

    for (std::size_t id = 0; id < g.nodes.size(); ++id) {
        for (auto start : g.nodes[id].voxels) {
            for (auto first : neighbors(start)) {
                if (node_of[first] == static_cast<std::ptrdiff_t>(id)) continue;
                SkeletonBranch b;
                b.from = id;
                b.voxels = {start};
                if (node_of[first] >= 0) {
                    const auto key = std::minmax(start, first);
                    if (!direct.insert(key).second) continue;
                    b.voxels.push_back(first);
                    b.to = static_cast<std::size_t>(node_of[first]);
                    finish(std::move(b));
                    continue;
                }
                if (used[first]) continue;
                std::size_t prev = start, cur = first;
                while (true) {
                    used[cur] = true;
                    b.voxels.push_back(cur);
                    std::size_t next = cur;
                    bool found = false;
                    for (auto n : neighbors(cur)) {
                        if (n == prev) continue;
                        if (node_of[n] >= 0 || !used[n]) {
                            // Prefer closing onto a node over continuing the run.
                            if (!found || node_of[n] >= 0) {
                                next = n;
                                found = true;
                            }
                            if (node_of[n] >= 0) break;
                        }
                    }
                    if (!found) throw DataError("build_skeleton_graph: inconsistent path decomposition");
                    if (node_of[next] >= 0) {
                        b.voxels.push_back(next);
                        b.to = static_cast<std::size_t>(node_of[next]);
                        break;
                    }
                    prev = cur;
                    cur = next;
                }
                finish(std::move(b));
            }
        }
    }

    // Loops made only of degree-2 voxels.
    for (std::size_t i = 0; i < centerline.size(); ++i) {
        if (!centerline[i] || degree[i] != 2 || used[i]) continue;
        const auto id = g.nodes.size();
        g.nodes.push_back({{i}, NodeKind::Cycle, 0});
        SkeletonBranch b;
        b.from = b.to = id;
        b.voxels = {i};
        used[i] = true;
        std::size_t prev = i, cur = neighbors(i).front();
        while (cur != i) {
            used[cur] = true;
            b.voxels.push_back(cur);
            const auto nb = neighbors(cur);
            const auto next = nb[0] == prev ? nb[1] : nb[0];
            prev = cur;
            cur = next;
        }
        b.voxels.push_back(i);
        finish(std::move(b));
    }

    for (auto& n : g.nodes) {
        if (n.kind == NodeKind::Isolated || n.kind == NodeKind::Cycle) continue;
        n.kind = n.degree == 1 ? NodeKind::Terminal : (n.degree >= 3 ? NodeKind::Bifurcation : NodeKind::Passage);
    }
    return g;
}

}  // namespace tubule
