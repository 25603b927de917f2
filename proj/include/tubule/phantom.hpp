#pragma once

#include <cstdint>
#include <vector>

#include "tubule/volume.hpp"

namespace tubule {

/// Tube segment with hemispherical caps: every point within `r` voxels of
/// the segment a-b. Coordinates are z,y,x in voxel index space.
struct Capsule {
    Vec3 a{};
    Vec3 b{};
    double r = 1.0;
};

double capsule_distance(const Capsule& c, const Vec3& p);

/// Voxels whose centre lies inside any capsule.
LabelMap rasterize_capsules(const std::vector<Capsule>& caps, Dims dims);

enum class PhantomKind { Airway, ArteryVein };

struct PhantomConfig {
    PhantomKind kind = PhantomKind::Airway;
    Dims dims{32, 32, 32};
    std::size_t branches = 7;  // capsules per tree
    double radius_min = 1.5;
    double radius_max = 3.0;
    double contrast = 1.0;  // scales every HU offset from the parenchyma level
    double noise = 20.0;    // Gaussian noise sigma in HU
    std::uint64_t seed = 0;

    void validate() const;
};

struct Phantom {
    Volume ct;        // HU
    LabelMap label;   // airway: 0/1; artery-vein: 0, kArtery, kVein
    LabelMap airway;  // artery-vein only: lumen of the companion airway tubes
    std::vector<Capsule> capsules;        // airway or artery tree
    std::vector<Capsule> vein_capsules;   // artery-vein only
};

/// Random binary tree(s) of capsules rasterised into a synthetic CT. Airway:
/// air lumen (-1000 HU) with a soft-tissue wall in -850 HU parenchyma.
/// Artery-vein: two interleaved +40 HU trees, the artery tree accompanied by
/// a parallel airway tube. Deterministic per seed.
Phantom make_phantom(const PhantomConfig& cfg);

}  // namespace tubule
