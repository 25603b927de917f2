#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "tubule/autodiff/ops.hpp"

namespace tubule::net {

using ad::Tensor;

/// Learned pieces of one feature recalibration block for C channels at
/// spatial size D x H x W.
template <class T>
struct RecalibrationParams {
    Tensor<T> d, h, w;  // combination weights, [D], [H], [W]
    Tensor<T> k1;       // [C/r, C, 1, 1, 1]
    Tensor<T> k2;       // [C, C/r, 1, 1, 1]
    std::size_t r = 2;

    /// d, h, w start uniform (1/D, 1/H, 1/W) so the integration begins as
    /// plain averaging; k1, k2 are fan-in scaled uniform.
    static RecalibrationParams init(std::size_t channels, ad::Triple dhw, std::size_t r, std::mt19937_64& rng);
};

/// Channel gate U = sigmoid(k2 * relu(k1 * Z)) where Z is the direction-wise
/// spatial integration of A.
template <class T>
Tensor<T> recalibration_gate(const Tensor<T>& a, const RecalibrationParams<T>& p);

/// U (.) A
template <class T>
Tensor<T> feature_recalibration(const Tensor<T>& a, const RecalibrationParams<T>& p);

/// G = sum over channels of |A|^p, shape [N,1,D,H,W].
template <class T>
Tensor<T> attention_map(const Tensor<T>& a, double p);

template <class T>
struct Distillation {
    std::vector<Tensor<T>> maps;  // spatial-softmaxed maps at the finest resolution
    Tensor<T> loss;
};

/// `features` ordered from the first decoder (coarsest) to the last (finest).
/// Each map is resized to the finest extent and spatially softmaxed; the loss
/// sums ||G_m - detach(G_{m+1})||_F^2 over consecutive pairs, so every map
/// learns from its finer successor and the finest one is only a teacher.
template <class T>
Distillation<T> attention_distillation(const std::vector<Tensor<T>>& features, double p);

inline constexpr double kLossEps = 1e-7;

/// -(Dice + mean focal term) with focal exponent 2. `y` is a constant 0/1
/// tensor shaped like `prob`. When `mask` is defined, voxels with mask 0 are
/// left out of both terms.
template <class T>
Tensor<T> dice_focal_loss(const Tensor<T>& prob, const Tensor<T>& y, const Tensor<T>& mask = {},
                          double eps = kLossEps);

template <class T>
struct LossParts {
    Tensor<T> total;
    Tensor<T> seg;      // segmentation terms only
    Tensor<T> distill;  // unweighted distillation loss
};

/// Airway objective: dice_focal(prob, y) + alpha * distill.
template <class T>
LossParts<T> airway_loss(const Tensor<T>& prob, const Tensor<T>& y, const Tensor<T>& distill, double alpha);

/// Artery-vein objective: mean over the three classes of dice_focal on the
/// softmax channels, plus dice_focal of the vessel head against
/// y_vessel = artery or vein, plus alpha * distill. `onehot` is [N,3,...];
/// `mask` zeroes non-determined voxels.
template <class T>
LossParts<T> artery_vein_loss(const Tensor<T>& probs, const Tensor<T>& vessel, const Tensor<T>& onehot,
                              const Tensor<T>& mask, const Tensor<T>& distill, double alpha);

/// Fan-in scaled uniform initialisation of a conv kernel [Co, Ci, kd, kh, kw].
template <class T>
Tensor<T> init_conv_weight(ad::Shape shape, std::mt19937_64& rng);

}  // namespace tubule::net
