#include "tubule/graphcut.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace tubule {

void FlowNetwork::validate() const {
    if (sink_cap.size() != source_cap.size()) throw DataError("flow network: terminal capacity arrays differ in size");
    const auto bad = [](double c) { return !(c >= 0.0) || !std::isfinite(c); };
    for (std::size_t i = 0; i < size(); ++i) {
        if (bad(source_cap[i]) || bad(sink_cap[i])) throw DataError("flow network: invalid terminal capacity");
    }
    for (const auto& p : pairs) {
        if (p.u == p.v) throw DataError("flow network: self edge");
        if (p.u >= size() || p.v >= size()) throw DataError("flow network: edge endpoint out of range");
        if (bad(p.cap)) throw DataError("flow network: invalid pair capacity");
    }
}

double cut_capacity(const FlowNetwork& net, const std::vector<std::uint8_t>& source_side) {
    if (source_side.size() != net.size()) throw DataError("cut_capacity: assignment size mismatch");
    double c = 0;
    for (std::size_t i = 0; i < net.size(); ++i) c += source_side[i] ? net.sink_cap[i] : net.source_cap[i];
    for (const auto& p : net.pairs) {
        if (source_side[p.u] != source_side[p.v]) c += p.cap;
    }
    return c;
}

FlowNetwork build_vessel_graph(const std::vector<Volume>& probs, const Volume& ct, const LabelMap& vessel_mask,
                               double kappa, double sigma) {
    if (probs.size() != 3) throw DataError("graph cut: expected 3 probability channels");
    for (const auto& p : probs) require_same_geometry(p, vessel_mask, "probabilities vs vessel mask");
    require_same_geometry(ct, vessel_mask, "CT vs vessel mask");
    if (!(kappa >= 0) || !std::isfinite(kappa)) throw DataError("graph cut: kappa must be finite and >= 0");
    if (!(sigma > 0) || !std::isfinite(sigma)) throw DataError("graph cut: sigma must be finite and > 0");

    FlowNetwork net;
    net.dims = vessel_mask.dims();
    std::vector<std::int64_t> node(vessel_mask.size(), -1);
    for (std::size_t i = 0; i < vessel_mask.size(); ++i) {
        const double p0 = probs[0][i], p1 = probs[1][i], p2 = probs[2][i];
        if (std::abs(p0 + p1 + p2 - 1.0) > 1e-4) {
            const auto c = vessel_mask.coords(i);
            throw DataError("graph cut: probabilities do not sum to 1 at voxel (" + std::to_string(c[0]) + "," +
                            std::to_string(c[1]) + "," + std::to_string(c[2]) + ")");
        }
        if (!vessel_mask[i]) continue;
        if (p1 + p2 < 1e-12) {
            const auto c = vessel_mask.coords(i);
            throw DataError("graph cut: artery + vein probability vanishes inside the mask at (" +
                            std::to_string(c[0]) + "," + std::to_string(c[1]) + "," + std::to_string(c[2]) + ")");
        }
        node[i] = static_cast<std::int64_t>(net.size());
        net.voxel.push_back(i);
        net.source_cap.push_back(p1 / (p1 + p2));
        net.sink_cap.push_back(p2 / (p1 + p2));
    }
    const Dims& d = net.dims;
    for (std::size_t n = 0; n < net.size(); ++n) {
        const auto c = vessel_mask.coords(net.voxel[n]);
        // Forward neighbours only, so each pair appears once.
        const Index3 steps[3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        for (const auto& s : steps) {
            const Index3 q{c[0] + s[0], c[1] + s[1], c[2] + s[2]};
            if (!vessel_mask.contains(q[0], q[1], q[2])) continue;
            const auto j = static_cast<std::size_t>((q[0] * std::ptrdiff_t(d.y) + q[1]) * std::ptrdiff_t(d.x) + q[2]);
            if (node[j] < 0) continue;
            const double di = double(ct[net.voxel[n]]) - double(ct[j]);
            net.pairs.push_back({std::uint32_t(n), std::uint32_t(node[j]), kappa * std::exp(-di * di / sigma)});
        }
    }
    return net;
}

namespace {

// Dinic's algorithm on a residual graph with paired arcs.
class Dinic {
public:
    explicit Dinic(std::size_t n) : head_(n, -1), level_(n), it_(n) {}

    void add(std::size_t u, std::size_t v, double cap_uv, double cap_vu) {
        arcs_.push_back({v, head_[u], cap_uv});
        head_[u] = std::int64_t(arcs_.size()) - 1;
        arcs_.push_back({u, head_[v], cap_vu});
        head_[v] = std::int64_t(arcs_.size()) - 1;
    }

    double run(std::size_t s, std::size_t t) {
        double flow = 0;
        while (bfs(s, t)) {
            for (std::size_t i = 0; i < head_.size(); ++i) it_[i] = head_[i];
            while (true) {
                const double f = augment(s, t);
                if (f <= 0) break;
                flow += f;
            }
        }
        return flow;
    }

    /// Nodes that can still reach t through positive residual arcs.
    std::vector<std::uint8_t> reaches_sink(std::size_t t) const {
        std::vector<std::uint8_t> seen(head_.size(), 0);
        std::vector<std::size_t> stack{t};
        seen[t] = 1;
        while (!stack.empty()) {
            const auto v = stack.back();
            stack.pop_back();
            for (auto a = head_[v]; a >= 0; a = arcs_[a].next) {
                // Arc a goes v -> u; its twin u -> v has residual arcs_[a ^ 1].cap.
                const auto u = arcs_[a].to;
                if (!seen[u] && arcs_[a ^ 1].cap > 0) {
                    seen[u] = 1;
                    stack.push_back(u);
                }
            }
        }
        return seen;
    }

private:
    struct Arc {
        std::size_t to;
        std::int64_t next;
        double cap;
    };

    bool bfs(std::size_t s, std::size_t t) {
        std::fill(level_.begin(), level_.end(), -1);
        std::queue<std::size_t> q;
        level_[s] = 0;
        q.push(s);
        while (!q.empty()) {
            const auto u = q.front();
            q.pop();
            for (auto a = head_[u]; a >= 0; a = arcs_[a].next) {
                if (arcs_[a].cap > 0 && level_[arcs_[a].to] < 0) {
                    level_[arcs_[a].to] = level_[u] + 1;
                    q.push(arcs_[a].to);
                }
            }
        }
        return level_[t] >= 0;
    }

    // One augmenting path in the level graph, found with an explicit stack.
    double augment(std::size_t s, std::size_t t) {
        std::vector<std::int64_t> path;  // arcs
        std::size_t u = s;
        while (true) {
            if (u == t) {
                double f = std::numeric_limits<double>::infinity();
                for (auto a : path) f = std::min(f, arcs_[a].cap);
                for (auto a : path) {
                    arcs_[a].cap -= f;
                    arcs_[a ^ 1].cap += f;
                }
                return f;
            }
            auto& a = it_[u];
            while (a >= 0 && !(arcs_[a].cap > 0 && level_[arcs_[a].to] == level_[u] + 1)) a = arcs_[a].next;
            if (a >= 0) {
                path.push_back(a);
                u = arcs_[a].to;
                continue;
            }
            // Dead end: prune u from the level graph and step back.
            level_[u] = -1;
            if (path.empty()) return 0;
            u = arcs_[path.back() ^ 1].to;
            path.pop_back();
            it_[u] = arcs_[it_[u]].next;
        }
    }

    std::vector<Arc> arcs_;
    std::vector<std::int64_t> head_;
    std::vector<int> level_;
    std::vector<std::int64_t> it_;
};

}  // namespace

CutAssignment max_flow_min_cut(const FlowNetwork& net) {
    net.validate();
    const std::size_t n = net.size();
    const std::size_t s = n, t = n + 1;
    CutAssignment out;
    // Route the direct s -> v -> t flow up front; Dinic handles the rest.
    Dinic g(n + 2);
    for (std::size_t i = 0; i < n; ++i) {
        const double direct = std::min(net.source_cap[i], net.sink_cap[i]);
        out.flow += direct;
        const double rs = net.source_cap[i] - direct, rt = net.sink_cap[i] - direct;
        if (rs > 0) g.add(s, i, rs, 0);
        if (rt > 0) g.add(i, t, rt, 0);
    }
    for (const auto& p : net.pairs) {
        if (p.cap > 0) g.add(p.u, p.v, p.cap, p.cap);
    }
    out.flow += g.run(s, t);
    const auto sink_side = g.reaches_sink(t);
    out.source_side.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.source_side[i] = sink_side[i] ? 0 : 1;

    const double cut = cut_capacity(net, out.source_side);
    double scale = 1.0;
    for (std::size_t i = 0; i < n; ++i) scale += net.source_cap[i] + net.sink_cap[i];
    for (const auto& p : net.pairs) scale += p.cap;
    if (std::abs(cut - out.flow) > 1e-9 * scale) {
        throw NumericError("max flow certificate failed: flow " + std::to_string(out.flow) + " vs cut " +
                           std::to_string(cut));
    }
    return out;
}

LabelMap refine_artery_vein(const std::vector<Volume>& probs, const Volume& ct, const LabelMap& vessel_mask,
                            double kappa, double sigma) {
    const auto net = build_vessel_graph(probs, ct, vessel_mask, kappa, sigma);
    const auto cut = max_flow_min_cut(net);
    LabelMap out = LabelMap::like(vessel_mask);
    for (std::size_t i = 0; i < net.size(); ++i) out[net.voxel[i]] = cut.source_side[i] ? kArtery : kVein;
    return out;
}

LabelMap fuse_union(const LabelMap& before, const LabelMap& after, UnionMode mode) {
    require_same_geometry(before, after, "union inputs");
    const std::uint8_t first = mode == UnionMode::ArteryPriority ? kArtery : kVein;
    const std::uint8_t second = first == kArtery ? kVein : kArtery;
    LabelMap out = LabelMap::like(before);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (before[i] == first || after[i] == first) {
            out[i] = first;
        } else if (before[i] == second || after[i] == second) {
            out[i] = second;
        }
    }
    return out;
}

}  // namespace tubule
