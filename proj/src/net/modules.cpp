#include "tubule/net/modules.hpp"

#include <cmath>

namespace tubule::net {

using namespace tubule::ad;

template <class T>
Tensor<T> init_conv_weight(Shape shape, std::mt19937_64& rng) {
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(u(rng));
    return Tensor<T>::from(std::move(shape), std::move(v), true);
}

template <class T>
RecalibrationParams<T> RecalibrationParams<T>::init(std::size_t channels, Triple dhw, std::size_t r,
                                                    std::mt19937_64& rng) {
    if (r == 0 || channels % r != 0) {
        throw DataError("recalibration: compression factor " + std::to_string(r) + " does not divide " +
                        std::to_string(channels) + " channels");
    }
    RecalibrationParams p;
    p.r = r;
    p.d = Tensor<T>::full({dhw[0]}, T(1.0 / double(dhw[0])), true);
    p.h = Tensor<T>::full({dhw[1]}, T(1.0 / double(dhw[1])), true);
    p.w = Tensor<T>::full({dhw[2]}, T(1.0 / double(dhw[2])), true);
    p.k1 = init_conv_weight<T>({channels / r, channels, 1, 1, 1}, rng);
    p.k2 = init_conv_weight<T>({channels, channels / r, 1, 1, 1}, rng);
    return p;
}

template <class T>
Tensor<T> recalibration_gate(const Tensor<T>& a, const RecalibrationParams<T>& p) {
    const auto z = spatial_integration(a, p.d, p.h, p.w);
    return sigmoid(conv3d(relu(conv3d(z, p.k1, Tensor<T>())), p.k2, Tensor<T>()));
}

template <class T>
Tensor<T> feature_recalibration(const Tensor<T>& a, const RecalibrationParams<T>& p) {
    return mul(recalibration_gate(a, p), a);
}

template <class T>
Tensor<T> attention_map(const Tensor<T>& a, double p) {
    return channel_sum(abs_pow(a, p));
}

template <class T>
Distillation<T> attention_distillation(const std::vector<Tensor<T>>& features, double p) {
    if (features.size() < 2) throw DataError("attention distillation needs at least two feature maps");
    const auto& last = features.back().shape();
    if (last.size() != 5) throw DataError("attention distillation expects N,C,D,H,W features");
    const Triple finest{last[2], last[3], last[4]};
    Distillation<T> out;
    for (const auto& f : features) out.maps.push_back(spatial_softmax(trilinear_resize(attention_map(f, p), finest)));
    for (std::size_t m = 0; m + 1 < out.maps.size(); ++m) {
        auto term = frobenius_sq(sub(out.maps[m], out.maps[m + 1].detach()));
        out.loss = out.loss.defined() ? add(out.loss, term) : term;
    }
    return out;
}

template <class T>
Tensor<T> dice_focal_loss(const Tensor<T>& prob, const Tensor<T>& y, const Tensor<T>& mask, double eps) {
    if (prob.shape() != y.shape()) {
        throw DataError("dice_focal_loss: prediction " + shape_str(prob.shape()) + " vs label " + shape_str(y.shape()));
    }
    if (mask.defined() && mask.shape() != y.shape()) throw DataError("dice_focal_loss: mask shape mismatch");
    for (T v : prob.values()) {
        if (!(v >= T(0) && v <= T(1))) throw NumericError("dice_focal_loss: probability outside [0,1]");
    }
    const std::size_t n = y.numel();
    std::vector<T> ym(n), sign(n), offset(n), mv(n, T(1));
    double count = 0, ysum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (mask.defined()) mv[i] = mask.values()[i] != T(0) ? T(1) : T(0);
        const T yi = y.values()[i] != T(0) ? T(1) : T(0);
        ym[i] = yi * mv[i];
        sign[i] = T(2) * yi - T(1);  // p_t = p where y = 1, 1 - p where y = 0
        offset[i] = T(1) - yi;
        count += mv[i];
        ysum += ym[i];
    }
    const auto ym_t = Tensor<T>::from(y.shape(), ym);
    const auto m_t = Tensor<T>::from(y.shape(), mv);

    const auto pm = mask.defined() ? mul(prob, m_t) : prob;
    const auto inter = sum(mul(pm, ym_t));
    const auto denom = add(sum(pm), Tensor<T>::scalar(T(ysum + eps)));
    const auto dice = div(affine(inter, 2.0, 0.0), denom);

    const auto pt = clamp(add(mul(prob, Tensor<T>::from(y.shape(), sign)), Tensor<T>::from(y.shape(), offset)), 1e-7,
                          1.0 - 1e-7);
    auto focal = mul(abs_pow(affine(pt, -1.0, 1.0), 2.0), log(pt));
    if (mask.defined()) focal = mul(focal, m_t);
    const auto focal_mean = affine(sum(focal), count > 0 ? 1.0 / count : 0.0, 0.0);
    return affine(add(dice, focal_mean), -1.0, 0.0);
}

template <class T>
LossParts<T> airway_loss(const Tensor<T>& prob, const Tensor<T>& y, const Tensor<T>& distill, double alpha) {
    if (prob.rank() != 5 || prob.dim(1) != 1) throw DataError("airway loss expects a single-channel sigmoid head");
    LossParts<T> out;
    out.seg = dice_focal_loss(prob, y);
    out.distill = distill.defined() ? distill : Tensor<T>::scalar(T(0));
    out.total = add(out.seg, affine(out.distill, alpha, 0.0));
    return out;
}

template <class T>
LossParts<T> artery_vein_loss(const Tensor<T>& probs, const Tensor<T>& vessel, const Tensor<T>& onehot,
                              const Tensor<T>& mask, const Tensor<T>& distill, double alpha) {
    if (probs.rank() != 5 || probs.dim(1) != 3) throw DataError("artery-vein loss expects a 3-channel softmax head");
    if (!vessel.defined() || vessel.rank() != 5 || vessel.dim(1) != 1) {
        throw DataError("artery-vein loss expects the auxiliary vessel head");
    }
    if (onehot.shape() != probs.shape()) throw DataError("artery-vein loss: one-hot label shape mismatch");
    Tensor<T> cls;
    for (std::size_t c = 0; c < 3; ++c) {
        const auto term = dice_focal_loss(slice_channels(probs, c, c + 1), slice_channels(onehot, c, c + 1), mask);
        cls = cls.defined() ? add(cls, term) : term;
    }
    cls = affine(cls, 1.0 / 3.0, 0.0);
    const auto yv = add(slice_channels(onehot, 1, 2), slice_channels(onehot, 2, 3)).detach();
    LossParts<T> out;
    out.seg = add(cls, dice_focal_loss(vessel, yv, mask));
    out.distill = distill.defined() ? distill : Tensor<T>::scalar(T(0));
    out.total = add(out.seg, affine(out.distill, alpha, 0.0));
    return out;
}

#define TUBULE_NET_MODULES(T)                                                                                   \
    template struct RecalibrationParams<T>;                                                                     \
    template Tensor<T> init_conv_weight<T>(Shape, std::mt19937_64&);                                            \
    template Tensor<T> recalibration_gate(const Tensor<T>&, const RecalibrationParams<T>&);                     \
    template Tensor<T> feature_recalibration(const Tensor<T>&, const RecalibrationParams<T>&);                  \
    template Tensor<T> attention_map(const Tensor<T>&, double);                                                 \
    template Distillation<T> attention_distillation(const std::vector<Tensor<T>>&, double);                    \
    template Tensor<T> dice_focal_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);           \
    template LossParts<T> airway_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);            \
    template LossParts<T> artery_vein_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                           const Tensor<T>&, double);

TUBULE_NET_MODULES(float)
TUBULE_NET_MODULES(double)

}  // namespace tubule::net
