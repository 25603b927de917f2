#include "tubule/net/model.hpp"

#include <map>

namespace tubule::net {

using namespace tubule::ad;

void ModelConfig::validate() const {
    if (in_channels == 0) throw DataError("model: in_channels must be positive");
    for (auto c : ladder) {
        if (c == 0) throw DataError("model: channel ladder entries must be positive");
        if (r == 0 || c % r != 0) {
            throw DataError("model: compression factor r=" + std::to_string(r) + " does not divide ladder entry " +
                            std::to_string(c));
        }
    }
    if (!(p >= 1.0)) throw DataError("model: p must be >= 1");
    if (!(alpha >= 0.0)) throw DataError("model: alpha must be >= 0");
    for (auto e : patch)
        if (e == 0) throw DataError("model: patch extents must be positive");
}

std::array<Triple, 5> ModelConfig::scale_dims() const {
    std::array<Triple, 5> dims;
    dims[0] = patch;
    for (int s = 1; s < 5; ++s)
        for (int a = 0; a < 3; ++a) dims[s][a] = (dims[s - 1][a] + 1) / 2;
    return dims;
}

namespace {

std::size_t decoder_in(const ModelConfig& cfg, std::size_t k) {
    const std::size_t s = 3 - k;
    return cfg.ladder[s] + cfg.ladder[s + 1] + (k == 3 && cfg.use_coordinate_map ? 3 : 0);
}

}  // namespace

std::size_t expected_parameter_count(const ModelConfig& cfg) {
    cfg.validate();
    const auto dims = cfg.scale_dims();
    const auto block = [&](std::size_t in, std::size_t c, const Triple& d) {
        const std::size_t convs = (c * in * 27 + c) + (c * c * 27 + c);
        const std::size_t norms = 4 * c;
        const std::size_t fr = d[0] + d[1] + d[2] + 2 * (c / cfg.r) * c;
        return convs + norms + fr;
    };
    std::size_t n = 0;
    for (std::size_t s = 0; s < 5; ++s) n += block(s == 0 ? cfg.in_channels : cfg.ladder[s - 1], cfg.ladder[s], dims[s]);
    for (std::size_t k = 0; k < 4; ++k) n += block(decoder_in(cfg, k), cfg.ladder[3 - k], dims[3 - k]);
    if (cfg.task == Task::Airway) {
        n += cfg.ladder[0] + 1;
    } else {
        n += 3 * cfg.ladder[0] + 3;
        if (cfg.use_aux_vessel_head) n += 3 + 1;
    }
    return n;
}

template <class T>
Tensor<T> Model<T>::add_param(const std::string& name, Tensor<T> t) {
    t.set_requires_grad(true);
    params_.emplace_back(name, t);
    return t;
}

template <class T>
typename Model<T>::ConvNorm Model<T>::make_conv_norm(const std::string& name, std::size_t in, std::size_t out,
                                                     std::mt19937_64& rng) {
    ConvNorm c;
    c.weight = add_param(name + ".weight", init_conv_weight<T>({out, in, 3, 3, 3}, rng));
    const auto b = init_conv_weight<T>({out, in * 27}, rng);  // same bound as the kernel
    c.bias = add_param(name + ".bias", Tensor<T>::from({out}, std::vector<T>(b.values().begin(), b.values().begin() + out)));
    c.gamma = add_param(name + ".gamma", Tensor<T>::full({out}, T(1)));
    c.beta = add_param(name + ".beta", Tensor<T>::zeros({out}));
    return c;
}

template <class T>
typename Model<T>::Block Model<T>::make_block(const std::string& name, std::size_t in, std::size_t out, Triple dims,
                                              std::mt19937_64& rng) {
    Block b;
    b.c1 = make_conv_norm(name + ".conv1", in, out, rng);
    b.c2 = make_conv_norm(name + ".conv2", out, out, rng);
    b.fr = RecalibrationParams<T>::init(out, dims, cfg_.r, rng);
    add_param(name + ".fr.d", b.fr.d);
    add_param(name + ".fr.h", b.fr.h);
    add_param(name + ".fr.w", b.fr.w);
    add_param(name + ".fr.k1", b.fr.k1);
    add_param(name + ".fr.k2", b.fr.k2);
    return b;
}

template <class T>
Model<T>::Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    const auto dims = cfg_.scale_dims();
    for (std::size_t s = 0; s < 5; ++s) {
        enc_[s] = make_block("enc" + std::to_string(s), s == 0 ? cfg_.in_channels : cfg_.ladder[s - 1], cfg_.ladder[s],
                             dims[s], rng);
    }
    for (std::size_t k = 0; k < 4; ++k) {
        dec_[k] = make_block("dec" + std::to_string(k + 1), decoder_in(cfg_, k), cfg_.ladder[3 - k], dims[3 - k], rng);
    }
    const std::size_t heads = cfg_.task == Task::Airway ? 1 : 3;
    head_w_ = add_param("head.weight", init_conv_weight<T>({heads, cfg_.ladder[0], 1, 1, 1}, rng));
    head_b_ = add_param("head.bias", Tensor<T>::zeros({heads}));
    if (cfg_.task == Task::ArteryVein && cfg_.use_aux_vessel_head) {
        vessel_w_ = add_param("vessel.weight", init_conv_weight<T>({1, 3, 1, 1, 1}, rng));
        vessel_b_ = add_param("vessel.bias", Tensor<T>::zeros({1}));
    }
}

template <class T>
Tensor<T> Model<T>::run_block(const Block& b, const Tensor<T>& x) const {
    const Triple pad{1, 1, 1};
    auto h = relu(instance_norm(conv3d(x, b.c1.weight, b.c1.bias, pad), b.c1.gamma, b.c1.beta));
    h = relu(instance_norm(conv3d(h, b.c2.weight, b.c2.bias, pad), b.c2.gamma, b.c2.beta));
    return feature_recalibration(h, b.fr);
}

template <class T>
ModelOutputs<T> Model<T>::forward(const Tensor<T>& x, const Tensor<T>& coords) const {
    const Shape expect{1, cfg_.in_channels, cfg_.patch[0], cfg_.patch[1], cfg_.patch[2]};
    if (x.shape() != expect) throw DataError("model: input " + shape_str(x.shape()) + ", expected " + shape_str(expect));
    if (cfg_.use_coordinate_map) {
        const Shape cs{1, 3, cfg_.patch[0], cfg_.patch[1], cfg_.patch[2]};
        if (!coords.defined() || coords.shape() != cs) throw DataError("model: coordinate map required with shape " + shape_str(cs));
    }
    const auto dims = cfg_.scale_dims();
    std::array<Tensor<T>, 5> skips;
    Tensor<T> h = x;
    for (std::size_t s = 0; s < 5; ++s) {
        if (s > 0) h = cfg_.max_pooling ? max_pool2(h) : avg_pool2(h);
        h = run_block(enc_[s], h);
        skips[s] = h;
    }
    ModelOutputs<T> out;
    for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t s = 3 - k;
        std::vector<Tensor<T>> parts{skips[s], trilinear_resize(h, dims[s])};
        if (k == 3 && cfg_.use_coordinate_map) parts.push_back(coords);
        h = run_block(dec_[k], concat_channels(parts));
        out.decoder.push_back(h);
    }
    const auto logits = conv3d(h, head_w_, head_b_);
    if (cfg_.task == Task::Airway) {
        out.seg = sigmoid(logits);
    } else {
        out.seg = channel_softmax(logits);
        if (cfg_.use_aux_vessel_head) out.vessel = sigmoid(conv3d(out.seg, vessel_w_, vessel_b_));
    }
    return out;
}

template <class T>
std::size_t Model<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

template <class T>
std::vector<NamedArray> Model<T>::to_arrays() const {
    std::vector<NamedArray> out;
    for (const auto& [name, t] : params_) {
        out.push_back({name, t.shape(), std::vector<float>(t.values().begin(), t.values().end())});
    }
    return out;
}

template <class T>
void Model<T>::load_arrays(const std::vector<NamedArray>& arrays) {
    std::map<std::string, const NamedArray*> by_name;
    for (const auto& a : arrays) by_name[a.name] = &a;
    for (auto& [name, t] : params_) {
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("checkpoint lacks parameter '" + name + "'");
        if (it->second->shape != t.shape()) {
            throw DataError("checkpoint parameter '" + name + "' has shape " + shape_str(it->second->shape) +
                            ", model expects " + shape_str(t.shape()));
        }
        std::copy(it->second->values.begin(), it->second->values.end(), t.values().begin());
    }
}

ModelConfig config_from_arrays(const std::vector<NamedArray>& arrays) {
    std::map<std::string, const NamedArray*> by_name;
    for (const auto& a : arrays) by_name[a.name] = &a;
    const auto get = [&](const std::string& n) -> const Shape& {
        const auto it = by_name.find(n);
        if (it == by_name.end()) throw DataError("checkpoint lacks parameter '" + n + "'");
        return it->second->shape;
    };
    ModelConfig cfg;
    for (std::size_t s = 0; s < 5; ++s) cfg.ladder[s] = get("enc" + std::to_string(s) + ".conv1.weight").at(0);
    cfg.in_channels = get("enc0.conv1.weight").at(1);
    cfg.patch = {get("enc0.fr.d").at(0), get("enc0.fr.h").at(0), get("enc0.fr.w").at(0)};
    const auto k1 = get("enc0.fr.k1").at(0);
    cfg.r = k1 ? cfg.ladder[0] / k1 : 0;
    cfg.use_coordinate_map = get("dec4.conv1.weight").at(1) == cfg.ladder[0] + cfg.ladder[1] + 3;
    cfg.task = get("head.weight").at(0) == 3 ? Task::ArteryVein : Task::Airway;
    cfg.use_aux_vessel_head = by_name.count("vessel.weight") > 0;
    cfg.validate();
    return cfg;
}

template <class T>
Tensor<T> coordinate_map(Triple patch, std::array<std::ptrdiff_t, 3> origin, Triple region) {
    const std::size_t vol = patch[0] * patch[1] * patch[2];
    std::vector<T> v(3 * vol);
    for (std::size_t z = 0; z < patch[0]; ++z)
        for (std::size_t y = 0; y < patch[1]; ++y)
            for (std::size_t x = 0; x < patch[2]; ++x) {
                const std::size_t i = (z * patch[1] + y) * patch[2] + x;
                const std::array<std::size_t, 3> idx{z, y, x};
                for (int a = 0; a < 3; ++a) {
                    const double den = region[a] > 1 ? double(region[a] - 1) : 1.0;
                    v[a * vol + i] = region[a] > 1 ? T(double(origin[a] + std::ptrdiff_t(idx[a])) / den) : T(0);
                }
            }
    return Tensor<T>::from({1, 3, patch[0], patch[1], patch[2]}, std::move(v));
}

template class Model<float>;
template class Model<double>;
template Tensor<float> coordinate_map<float>(Triple, std::array<std::ptrdiff_t, 3>, Triple);
template Tensor<double> coordinate_map<double>(Triple, std::array<std::ptrdiff_t, 3>, Triple);

}  // namespace tubule::net
