#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tubule/anatomy.hpp"
#include "tubule/net/model.hpp"
#include "tubule/preprocess.hpp"
#include "tubule/volume.hpp"

namespace tubule::net {

/// One training volume: normalised input channels sharing a geometry, and
/// its label (airway 0/1; artery-vein 0/1/2 with kNonDetermined ignored).
struct TrainSample {
    std::vector<Volume> channels;
    LabelMap label;
};

/// Network input channels from a CT in HU: the windowed CT alone, or with
/// an anatomy prior the CT, context map / 3 and distance map / 10 mm.
std::vector<Volume> model_inputs(const Volume& ct_hu, const AnatomyPrior* prior = nullptr);

struct TrainConfig {
    double lr = 3e-3;
    std::size_t plateau_patience = 10;  // epochs without improvement before decaying
    double lr_factor = 0.1;
    std::size_t batch_size = 1;
    std::size_t epochs = 30;
    std::uint64_t seed = 0;
    bool augment_enabled = true;
    AugmentConfig augment;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0;
    double total = 0;    // mean objective over the epoch
    double seg = 0;      // mean segmentation part
    double distill = 0;  // mean unweighted distillation loss
};

using TrainHistory = std::vector<EpochRecord>;

std::string history_csv(const TrainHistory& h);
void write_history_csv(const TrainHistory& h, const std::filesystem::path& path);

/// Adam with bias correction.
template <class T>
class Adam {
public:
    explicit Adam(std::vector<Tensor<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);
    void step();
    void zero_grad();
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    std::vector<Tensor<T>> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

/// Multiplies the rate by `factor` once the monitored loss has failed to
/// improve for more than `patience` consecutive epochs.
class PlateauSchedule {
public:
    PlateauSchedule(std::size_t patience, double factor) : patience_(patience), factor_(factor) {}
    /// Returns the rate to use for the next epoch.
    double update(double loss, double lr);

private:
    std::size_t patience_;
    double factor_;
    double best_ = 0;
    bool seen_ = false;
    std::size_t bad_ = 0;
};

/// Patch tensor [1, C, patch] from channels at `origin`; voxels past the
/// volume are zero.
template <class T>
Tensor<T> extract_patch(const std::vector<Volume>& channels, Index3 origin, ad::Triple patch);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Batch-size-1 training on random patches (whole volumes when they match
/// the patch). Updates `model` in place. Throws NumericError on a non-finite
/// loss.
template <class T>
TrainHistory train(Model<T>& model, const std::vector<TrainSample>& data, const TrainConfig& tc,
                   const EpochCallback& on_epoch = {});

}  // namespace tubule::net
