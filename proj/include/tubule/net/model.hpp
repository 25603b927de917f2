#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tubule/autodiff/checkpoint.hpp"
#include "tubule/net/modules.hpp"

namespace tubule::net {

enum class Task { Airway, ArteryVein };

inline constexpr std::array<std::size_t, 5> kFullLadder{16, 32, 64, 128, 256};
inline constexpr std::array<std::size_t, 5> kToyLadder{4, 8, 16, 32, 64};

struct ModelConfig {
    Task task = Task::Airway;
    std::size_t in_channels = 1;  // 1 for airway; CT + context + distance for artery-vein
    std::array<std::size_t, 5> ladder = kToyLadder;
    std::size_t r = 2;
    double p = 2.0;
    double alpha = 0.1;
    ad::Triple patch{32, 32, 32};
    bool use_coordinate_map = true;
    bool use_aux_vessel_head = true;  // artery-vein only
    bool max_pooling = true;          // false selects average pooling
    std::uint64_t seed = 0;

    void validate() const;
    /// Spatial extent at each of the five scales (ceil halving).
    std::array<ad::Triple, 5> scale_dims() const;
};

template <class T>
struct ModelOutputs {
    Tensor<T> seg;                   // airway [N,1,...] sigmoid or artery-vein [N,3,...] softmax
    Tensor<T> vessel;                // auxiliary vessel probability, artery-vein only
    std::vector<Tensor<T>> decoder;  // features of decoders 1..4, coarse to fine
};

/// 3-D U-Net with five scales, two conv-norm-ReLU layers per scale on both
/// paths, feature recalibration closing every scale, optional coordinate map
/// concatenated at decoder 4 and task-specific heads.
template <class T>
class Model {
public:
    explicit Model(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }

    /// x: [1, in_channels, patch]. coords: [1, 3, patch] normalised voxel
    /// coordinates, required when the coordinate map is enabled.
    ModelOutputs<T> forward(const Tensor<T>& x, const Tensor<T>& coords = {}) const;

    std::vector<std::pair<std::string, Tensor<T>>>& parameters() { return params_; }
    const std::vector<std::pair<std::string, Tensor<T>>>& parameters() const { return params_; }
    std::size_t parameter_count() const;

    std::vector<ad::NamedArray> to_arrays() const;
    /// Loads values by name; every parameter must be present with its shape.
    void load_arrays(const std::vector<ad::NamedArray>& arrays);

private:
    struct ConvNorm {
        Tensor<T> weight, bias, gamma, beta;
    };
    struct Block {
        ConvNorm c1, c2;
        RecalibrationParams<T> fr;
    };

    ConvNorm make_conv_norm(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);
    Block make_block(const std::string& name, std::size_t in, std::size_t out, ad::Triple dims, std::mt19937_64& rng);
    Tensor<T> run_block(const Block& b, const Tensor<T>& x) const;
    Tensor<T> add_param(const std::string& name, Tensor<T> t);

    ModelConfig cfg_;
    std::vector<std::pair<std::string, Tensor<T>>> params_;
    std::array<Block, 5> enc_;
    std::array<Block, 4> dec_;  // dec_[0] is decoder 1 (coarsest)
    Tensor<T> head_w_, head_b_, vessel_w_, vessel_b_;
};

/// Closed-form parameter count for a configuration.
std::size_t expected_parameter_count(const ModelConfig& cfg);

/// Rebuilds a configuration from checkpoint shapes (ladder, input channels,
/// patch, task, coordinate map and vessel head).
ModelConfig config_from_arrays(const std::vector<ad::NamedArray>& arrays);

/// Coordinate channels for a patch whose first voxel sits at `origin` inside
/// a region of extent `region`: index / (extent - 1) per axis, 0 for
/// single-voxel axes.
template <class T>
Tensor<T> coordinate_map(ad::Triple patch, std::array<std::ptrdiff_t, 3> origin, ad::Triple region);

}  // namespace tubule::net
