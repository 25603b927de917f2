#include "tubule/net/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace tubule::net {

using namespace tubule::ad;

std::vector<Volume> model_inputs(const Volume& ct_hu, const AnatomyPrior* prior) {
    std::vector<Volume> out{normalize_hu(ct_hu)};
    if (!prior) return out;
    require_same_geometry(ct_hu, prior->context, "CT vs context map");
    require_same_geometry(ct_hu, prior->distance, "CT vs distance map");
    Volume context = Volume::like(ct_hu), distance = Volume::like(ct_hu);
    for (std::size_t i = 0; i < ct_hu.size(); ++i) {
        context[i] = static_cast<float>(prior->context[i]) / 3.0f;
        distance[i] = prior->distance[i] / 10.0f;
    }
    out.push_back(std::move(context));
    out.push_back(std::move(distance));
    return out;
}

void TrainConfig::validate() const {
    if (!(lr > 0)) throw DataError("train: lr must be positive");
    if (plateau_patience == 0) throw DataError("train: plateau patience must be positive");
    if (!(lr_factor > 0 && lr_factor < 1)) throw DataError("train: lr factor must lie in (0,1)");
    if (batch_size != 1) throw DataError("train: only batch size 1 is supported");
}

std::string history_csv(const TrainHistory& h) {
    std::ostringstream os;
    os << "epoch,lr,total,seg,distill\n" << std::setprecision(9);
    for (const auto& e : h) os << e.epoch << ',' << e.lr << ',' << e.total << ',' << e.seg << ',' << e.distill << '\n';
    return os.str();
}

void write_history_csv(const TrainHistory& h, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    f << history_csv(h);
}

template <class T>
Adam<T>::Adam(std::vector<Tensor<T>> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

template <class T>
void Adam<T>::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, double(t_));
    const double c2 = 1.0 - std::pow(beta2_, double(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = params_[k];
        if (!p.has_grad()) continue;
        const auto& g = p.grad_buffer();
        auto& val = p.values();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < val.size(); ++i) {
            const double gi = g[i];
            m[i] = beta1_ * m[i] + (1 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1 - beta2_) * gi * gi;
            val[i] = static_cast<T>(double(val[i]) - lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
        }
    }
}

template <class T>
void Adam<T>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

double PlateauSchedule::update(double loss, double lr) {
    if (!seen_ || loss < best_) {
        best_ = loss;
        seen_ = true;
        bad_ = 0;
        return lr;
    }
    if (++bad_ > patience_) {
        bad_ = 0;
        return lr * factor_;
    }
    return lr;
}

template <class T>
Tensor<T> extract_patch(const std::vector<Volume>& channels, Index3 origin, Triple patch) {
    if (channels.empty()) throw DataError("extract_patch: no channels");
    const Dims d = channels[0].dims();
    const std::size_t vol = patch[0] * patch[1] * patch[2];
    std::vector<T> v(channels.size() * vol, T(0));
    for (std::size_t c = 0; c < channels.size(); ++c) {
        if (!(channels[c].dims() == d)) throw DataError("extract_patch: channel extents differ");
        for (std::size_t z = 0; z < patch[0]; ++z) {
            const auto sz = origin[0] + std::ptrdiff_t(z);
            if (sz < 0 || sz >= std::ptrdiff_t(d.z)) continue;
            for (std::size_t y = 0; y < patch[1]; ++y) {
                const auto sy = origin[1] + std::ptrdiff_t(y);
                if (sy < 0 || sy >= std::ptrdiff_t(d.y)) continue;
                for (std::size_t x = 0; x < patch[2]; ++x) {
                    const auto sx = origin[2] + std::ptrdiff_t(x);
                    if (sx < 0 || sx >= std::ptrdiff_t(d.x)) continue;
                    v[c * vol + (z * patch[1] + y) * patch[2] + x] = static_cast<T>(channels[c](sz, sy, sx));
                }
            }
        }
    }
    return Tensor<T>::from({1, channels.size(), patch[0], patch[1], patch[2]}, std::move(v));
}

namespace {

// Targets and validity mask for one patch. Voxels past the volume and
// non-determined voxels are masked out.
template <class T>
struct Targets {
    Tensor<T> y;     // [1,1,...] airway or [1,3,...] one-hot
    Tensor<T> mask;  // [1,1,...]
};

template <class T>
Targets<T> make_targets(const LabelMap& label, Index3 origin, Triple patch, Task task) {
    const std::size_t k = task == Task::Airway ? 1 : 3;
    const std::size_t vol = patch[0] * patch[1] * patch[2];
    std::vector<T> y(k * vol, T(0)), m(vol, T(0));
    for (std::size_t z = 0; z < patch[0]; ++z)
        for (std::size_t yy = 0; yy < patch[1]; ++yy)
            for (std::size_t x = 0; x < patch[2]; ++x) {
                const Index3 s{origin[0] + std::ptrdiff_t(z), origin[1] + std::ptrdiff_t(yy), origin[2] + std::ptrdiff_t(x)};
                if (!label.contains(s[0], s[1], s[2])) continue;
                const auto l = label(s[0], s[1], s[2]);
                if (l == kNonDetermined) continue;
                const std::size_t i = (z * patch[1] + yy) * patch[2] + x;
                m[i] = T(1);
                if (task == Task::Airway) {
                    y[i] = l ? T(1) : T(0);
                } else {
                    if (l > 2) throw DataError("train: artery-vein label outside {0,1,2,255}");
                    y[l * vol + i] = T(1);
                }
            }
    return {Tensor<T>::from({1, k, patch[0], patch[1], patch[2]}, std::move(y)),
            Tensor<T>::from({1, 1, patch[0], patch[1], patch[2]}, std::move(m))};
}

}  // namespace

template <class T>
TrainHistory train(Model<T>& model, const std::vector<TrainSample>& data, const TrainConfig& tc,
                   const EpochCallback& on_epoch) {
    tc.validate();
    if (data.empty()) throw DataError("train: dataset is empty");
    const auto& cfg = model.config();
    for (const auto& s : data) {
        if (s.channels.size() != cfg.in_channels) {
            throw DataError("train: sample has " + std::to_string(s.channels.size()) + " channels, model expects " +
                            std::to_string(cfg.in_channels));
        }
        for (const auto& c : s.channels) require_same_geometry(c, s.label, "train sample channel vs label");
    }

    std::vector<Tensor<T>> params;
    for (auto& [name, t] : model.parameters()) params.push_back(t);
    Adam<T> opt(params, tc.lr);
    PlateauSchedule plateau(tc.plateau_patience, tc.lr_factor);
    std::mt19937_64 rng(tc.seed);
    std::vector<std::size_t> order(data.size());
    TrainHistory history;

    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.lr = opt.lr();
        for (std::size_t idx : order) {
            const TrainSample& s = data[idx];
            std::vector<Volume> channels = s.channels;
            LabelMap label = s.label;
            const std::uint64_t aug_seed = rng();
            if (tc.augment_enabled) {
                AugmentConfig ac = tc.augment;
                ac.seed = aug_seed;
                std::tie(channels, label) = augment_channels(channels, label, ac);
            }
            Index3 origin{0, 0, 0};
            const Dims d = label.dims();
            for (int a = 0; a < 3; ++a) {
                if (d[a] > cfg.patch[a]) {
                    std::uniform_int_distribution<std::size_t> u(0, d[a] - cfg.patch[a]);
                    origin[a] = std::ptrdiff_t(u(rng));
                }
            }
            const auto x = extract_patch<T>(channels, origin, cfg.patch);
            const auto coords = cfg.use_coordinate_map
                                    ? coordinate_map<T>(cfg.patch, origin, {d.z, d.y, d.x})
                                    : Tensor<T>();
            const auto tgt = make_targets<T>(label, origin, cfg.patch, cfg.task);
            const auto out = model.forward(x, coords);
            const auto dist = attention_distillation(out.decoder, cfg.p);
            LossParts<T> loss;
            if (cfg.task == Task::Airway) {
                loss = airway_loss(out.seg, tgt.y, dist.loss, cfg.alpha);
            } else {
                loss = artery_vein_loss(out.seg, out.vessel, tgt.y, tgt.mask, dist.loss, cfg.alpha);
            }
            const double total = loss.total.item();
            if (!std::isfinite(total)) {
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", sample " +
                                   std::to_string(idx) + " (seg " + std::to_string(double(loss.seg.item())) +
                                   ", distill " + std::to_string(double(loss.distill.item())) + ")");
            }
            opt.zero_grad();
            loss.total.backward();
            opt.step();
            rec.total += total;
            rec.seg += loss.seg.item();
            rec.distill += loss.distill.item();
        }
        const double n = double(data.size());
        rec.total /= n;
        rec.seg /= n;
        rec.distill /= n;
        history.push_back(rec);
        opt.set_lr(plateau.update(rec.total, opt.lr()));
        if (on_epoch) on_epoch(rec);
    }
    return history;
}

template class Adam<float>;
template class Adam<double>;
template Tensor<float> extract_patch<float>(const std::vector<Volume>&, Index3, Triple);
template Tensor<double> extract_patch<double>(const std::vector<Volume>&, Index3, Triple);
template TrainHistory train<float>(Model<float>&, const std::vector<TrainSample>&, const TrainConfig&,
                                   const EpochCallback&);
template TrainHistory train<double>(Model<double>&, const std::vector<TrainSample>&, const TrainConfig&,
                                    const EpochCallback&);

}  // namespace tubule::net
