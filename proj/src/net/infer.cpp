#include "tubule/net/infer.hpp"

#include "tubule/morphology.hpp"
#include "tubule/net/train.hpp"

namespace tubule::net {

using namespace tubule::ad;

std::vector<std::size_t> window_starts(std::size_t extent, std::size_t patch, std::size_t stride) {
    if (patch == 0 || stride == 0) throw DataError("sliding window: patch and stride must be positive");
    if (extent <= patch) return {0};
    if (stride > patch) {
        throw DataError("sliding window: stride " + std::to_string(stride) + " exceeds patch " + std::to_string(patch) +
                        " and would leave voxels uncovered");
    }
    std::vector<std::size_t> starts{0};
    while (starts.back() + patch < extent) starts.push_back(starts.back() + stride);
    return starts;
}

std::vector<Volume> sliding_window_infer(const std::vector<Volume>& channels, const SlidingWindow& sw,
                                         const PatchFn& fn) {
    if (channels.empty()) throw DataError("sliding window: no input channels");
    const Volume& ref = channels[0];
    for (const auto& c : channels) require_same_geometry(c, ref, "sliding window input channels");
    const Dims d = ref.dims();
    const std::size_t lat = sw.lateral_stride;
    const auto zs = window_starts(d.z, sw.patch[0], sw.stride);
    const auto ys = window_starts(d.y, sw.patch[1], lat ? lat : sw.patch[1]);
    const auto xs = window_starts(d.x, sw.patch[2], lat ? lat : sw.patch[2]);

    std::vector<std::vector<double>> acc;
    std::vector<std::uint32_t> count(d.count(), 0);
    const std::size_t pvol = sw.patch[0] * sw.patch[1] * sw.patch[2];
    for (auto z0 : zs)
        for (auto y0 : ys)
            for (auto x0 : xs) {
                const Index3 origin{std::ptrdiff_t(z0), std::ptrdiff_t(y0), std::ptrdiff_t(x0)};
                const auto out = fn(extract_patch<float>(channels, origin, sw.patch), origin);
                if (out.rank() != 5 || out.dim(0) != 1 || out.dim(2) != sw.patch[0] || out.dim(3) != sw.patch[1] ||
                    out.dim(4) != sw.patch[2]) {
                    throw DataError("sliding window: window output has shape " + shape_str(out.shape()));
                }
                const std::size_t k = out.dim(1);
                if (acc.empty()) acc.assign(k, std::vector<double>(d.count(), 0.0));
                if (acc.size() != k) throw DataError("sliding window: window outputs disagree on channel count");
                const auto& v = out.values();
                for (std::size_t z = 0; z < sw.patch[0] && z0 + z < d.z; ++z)
                    for (std::size_t y = 0; y < sw.patch[1] && y0 + y < d.y; ++y)
                        for (std::size_t x = 0; x < sw.patch[2] && x0 + x < d.x; ++x) {
                            const std::size_t src = (z * sw.patch[1] + y) * sw.patch[2] + x;
                            const std::size_t dst = ref.index(z0 + z, y0 + y, x0 + x);
                            for (std::size_t c = 0; c < k; ++c) acc[c][dst] += v[c * pvol + src];
                            ++count[dst];
                        }
            }
    std::vector<Volume> result;
    for (const auto& a : acc) {
        Volume out = Volume::like(ref);
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<float>(a[i] / double(count[i]));
        result.push_back(std::move(out));
    }
    return result;
}

PatchFn model_patch_fn(const Model<float>& model, Dims region) {
    return [&model, region](const Tensor<float>& x, Index3 origin) {
        const auto& cfg = model.config();
        const auto coords = cfg.use_coordinate_map ? coordinate_map<float>(cfg.patch, origin, {region.z, region.y, region.x})
                                                   : Tensor<float>();
        return model.forward(x, coords).seg.detach();
    };
}

LabelMap postprocess_airway(const Volume& prob, double th) {
    LabelMap bin = LabelMap::like(prob);
    for (std::size_t i = 0; i < prob.size(); ++i) bin[i] = prob[i] > th ? 1 : 0;
    return largest_component(bin, Connectivity::Full26);
}

LabelMap postprocess_artery_vein(const std::vector<Volume>& probs) {
    if (probs.size() != 3) throw DataError("artery-vein postprocess expects 3 probability channels");
    for (const auto& p : probs) require_same_geometry(p, probs[0], "artery-vein probability channels");
    LabelMap out = LabelMap::like(probs[0]);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint8_t best = 0;
        for (std::uint8_t c = 1; c < 3; ++c)
            if (probs[c][i] > probs[best][i]) best = c;
        out[i] = best;
    }
    return out;
}

}  // namespace tubule::net
