#include "tubule/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace tubule {

namespace {

constexpr double kParenchymaHU = -850.0;
constexpr double kAirHU = -1000.0;
constexpr double kWallHU = -100.0;
constexpr double kVesselHU = 40.0;
constexpr double kWallThickness = 1.5;

Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 scale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 normalized(const Vec3& a) { return scale(a, 1.0 / std::sqrt(dot(a, a))); }

// Any unit vector perpendicular to v.
Vec3 perpendicular(const Vec3& v) {
    const Vec3 helper = std::abs(v[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    return normalized(cross(v, helper));
}

struct Grower {
    const PhantomConfig& cfg;
    std::mt19937_64& rng;
    double margin;  // keep this far from every face

    bool inside(const Vec3& p) const {
        for (int a = 0; a < 3; ++a) {
            if (p[a] < margin || p[a] > double(cfg.dims[a]) - 1.0 - margin) return false;
        }
        return true;
    }

    // Walks from `from` along `dir` for up to `len`, stopping at the margin.
    Vec3 clip(const Vec3& from, const Vec3& dir, double len) const {
        double lo = 0.0, hi = len;
        if (inside(add(from, scale(dir, len)))) return add(from, scale(dir, len));
        for (int it = 0; it < 40; ++it) {
            const double mid = 0.5 * (lo + hi);
            (inside(add(from, scale(dir, mid))) ? lo : hi) = mid;
        }
        return add(from, scale(dir, lo));
    }

    std::vector<Capsule> grow(Vec3 root, Vec3 dir, double len) {
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        struct Pending {
            Vec3 start, dir;
            double len, r;
        };
        std::vector<Capsule> out;
        std::vector<Pending> queue{{root, dir, len, cfg.radius_max}};
        for (std::size_t head = 0; head < queue.size() && out.size() < cfg.branches; ++head) {
            const Pending p = queue[head];
            const Vec3 end = clip(p.start, p.dir, p.len);
            out.push_back({p.start, end, p.r});
            // Two children splayed around the parent direction in a random plane.
            const Vec3 u = perpendicular(p.dir);
            const Vec3 v = cross(p.dir, u);
            const double phi = 2.0 * std::numbers::pi * uni(rng);
            const Vec3 side = add(scale(u, std::cos(phi)), scale(v, std::sin(phi)));
            const double spread = 0.5 + 0.3 * uni(rng);
            const double child_r = std::max(cfg.radius_min, p.r * 0.8);
            for (double sgn : {1.0, -1.0}) {
                const Vec3 d = normalized(add(scale(p.dir, std::cos(spread)), scale(side, sgn * std::sin(spread))));
                queue.push_back({end, d, p.len * (0.65 + 0.2 * uni(rng)), child_r});
            }
        }
        return out;
    }
};

void paint(Volume& ct, const LabelMap& mask, double hu) {
    for (std::size_t i = 0; i < ct.size(); ++i)
        if (mask[i]) ct[i] = static_cast<float>(hu);
}

}  // namespace

double capsule_distance(const Capsule& c, const Vec3& p) {
    const Vec3 ab = sub(c.b, c.a);
    const double len2 = dot(ab, ab);
    double t = len2 > 0 ? dot(sub(p, c.a), ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const Vec3 d = sub(p, add(c.a, scale(ab, t)));
    return std::sqrt(dot(d, d));
}

LabelMap rasterize_capsules(const std::vector<Capsule>& caps, Dims dims) {
    LabelMap out(dims);
    for (const auto& c : caps) {
        std::array<std::ptrdiff_t, 3> lo{}, hi{};
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::max<std::ptrdiff_t>(0, std::ptrdiff_t(std::floor(std::min(c.a[a], c.b[a]) - c.r)));
            hi[a] = std::min<std::ptrdiff_t>(std::ptrdiff_t(dims[a]) - 1,
                                             std::ptrdiff_t(std::ceil(std::max(c.a[a], c.b[a]) + c.r)));
        }
        for (auto z = lo[0]; z <= hi[0]; ++z)
            for (auto y = lo[1]; y <= hi[1]; ++y)
                for (auto x = lo[2]; x <= hi[2]; ++x) {
                    if (capsule_distance(c, {double(z), double(y), double(x)}) <= c.r) out(z, y, x) = 1;
                }
    }
    return out;
}

void PhantomConfig::validate() const {
    if (branches == 0) throw DataError("phantom: branch count must be positive");
    if (!(radius_min > 0) || !(radius_max >= radius_min)) throw DataError("phantom: need 0 < radius_min <= radius_max");
    if (!(noise >= 0) || !std::isfinite(contrast)) throw DataError("phantom: invalid noise or contrast");
    // Room for the root tube plus its wall, with a few voxels to grow along.
    const double need = 2.0 * (radius_max + kWallThickness + 1.0) + 4.0;
    const double need_av = kind == PhantomKind::ArteryVein ? 2.0 * need : need;
    for (int a = 0; a < 3; ++a) {
        if (double(dims[a]) < (a == 0 ? need : need_av)) {
            throw DataError("phantom: tubes of radius " + std::to_string(radius_max) + " cannot fit a grid extent of " +
                            std::to_string(dims[a]));
        }
    }
}

Phantom make_phantom(const PhantomConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    const Dims& d = cfg.dims;
    const auto hu = [&](double level) { return kParenchymaHU + cfg.contrast * (level - kParenchymaHU); };

    Phantom ph;
    ph.ct = Volume(d, {1, 1, 1}, {0, 0, 0}, static_cast<float>(kParenchymaHU));
    ph.ct.set_element_type(ElementType::Short);
    const double margin = cfg.radius_max + kWallThickness + 0.5;
    Grower grower{cfg, rng, margin};
    const double trunk = 0.45 * double(d.z);
    const auto tilt = [&](Vec3 base) { return normalized(add(base, {0.0, 0.15 * uni(rng), 0.15 * uni(rng)})); };

    if (cfg.kind == PhantomKind::Airway) {
        const Vec3 root{margin, 0.5 * double(d.y - 1) + uni(rng), 0.5 * double(d.x - 1) + uni(rng)};
        ph.capsules = grower.grow(root, tilt({1, 0, 0}), trunk);
        std::vector<Capsule> walls = ph.capsules;
        for (auto& c : walls) c.r += kWallThickness;
        const auto lumen = rasterize_capsules(ph.capsules, d);
        paint(ph.ct, rasterize_capsules(walls, d), hu(kWallHU));
        paint(ph.ct, lumen, hu(kAirHU));
        ph.label = lumen;
    } else {
        const double qy = 0.5 * double(d.y - 1);
        const Vec3 art_root{margin, qy + uni(rng), 0.3 * double(d.x - 1) + uni(rng)};
        const Vec3 vein_root{double(d.z - 1) - margin, qy + uni(rng), 0.7 * double(d.x - 1) + uni(rng)};
        ph.capsules = grower.grow(art_root, tilt({1, 0, 0}), trunk);
        ph.vein_capsules = grower.grow(vein_root, tilt({-1, 0, 0}), trunk);

        // Companion airways run parallel to the artery tree, offset sideways.
        std::vector<Capsule> airway, airway_wall;
        for (const auto& c : ph.capsules) {
            const Vec3 dir = sub(c.b, c.a);
            if (dot(dir, dir) < 1e-12) continue;
            const Vec3 off = scale(perpendicular(normalized(dir)), 2.0 * c.r + kWallThickness + 1.0);
            const double r = std::max(1.0, 0.8 * c.r);
            airway.push_back({add(c.a, off), add(c.b, off), r});
            airway_wall.push_back({add(c.a, off), add(c.b, off), r + 1.0});
        }
        const auto art = rasterize_capsules(ph.capsules, d);
        const auto vein = rasterize_capsules(ph.vein_capsules, d);
        const auto lumen = rasterize_capsules(airway, d);
        paint(ph.ct, rasterize_capsules(airway_wall, d), hu(kWallHU));
        paint(ph.ct, lumen, hu(kAirHU));
        ph.label = LabelMap(d);
        ph.airway = LabelMap(d);
        for (std::size_t i = 0; i < ph.label.size(); ++i) {
            if (art[i]) {
                ph.label[i] = kArtery;
            } else if (vein[i]) {
                ph.label[i] = kVein;
            } else if (lumen[i]) {
                ph.airway[i] = 1;
            }
            if (ph.label[i]) ph.ct[i] = static_cast<float>(hu(kVesselHU));
        }
    }

    // Stored as whole HU so the volume survives a MET_SHORT roundtrip.
    std::normal_distribution<double> n(0.0, cfg.noise > 0 ? cfg.noise : 1.0);
    for (auto& v : ph.ct.data()) v = static_cast<float>(std::round(v + (cfg.noise > 0 ? n(rng) : 0.0)));
    return ph;
}

}  // namespace tubule
