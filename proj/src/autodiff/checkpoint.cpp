#include "tubule/autodiff/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace tubule::ad {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw DataError("checkpoint: truncated file");
    std::uint32_t v;
    std::memcpy(&v, in.data() + pos, 4);
    pos += 4;
    return v;
}

}  // namespace

void save_checkpoint(const std::vector<NamedArray>& arrays, const std::filesystem::path& path) {
    std::string out;
    for (const auto& a : arrays) {
        if (a.values.size() != shape_numel(a.shape)) throw DataError("checkpoint: array '" + a.name + "' size mismatch");
        for (float v : a.values)
            if (!std::isfinite(v)) throw NumericError("checkpoint: array '" + a.name + "' holds non-finite values");
        put_u32(out, static_cast<std::uint32_t>(a.name.size()));
        out += a.name;
        put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
        for (auto d : a.shape) put_u32(out, static_cast<std::uint32_t>(d));
        out.append(reinterpret_cast<const char*>(a.values.data()), a.values.size() * sizeof(float));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("checkpoint: cannot open " + path.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("checkpoint: write failed for " + path.string());
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open " + path.string());
    const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::vector<NamedArray> out;
    std::size_t pos = 0;
    while (pos < in.size()) {
        NamedArray a;
        const auto len = get_u32(in, pos);
        if (pos + len > in.size()) throw DataError("checkpoint: truncated name");
        a.name = in.substr(pos, len);
        pos += len;
        const auto rank = get_u32(in, pos);
        if (rank > 8) throw DataError("checkpoint: implausible rank for '" + a.name + "'");
        for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(get_u32(in, pos));
        const auto n = shape_numel(a.shape);
        if (pos + n * sizeof(float) > in.size()) throw DataError("checkpoint: truncated values for '" + a.name + "'");
        a.values.resize(n);
        std::memcpy(a.values.data(), in.data() + pos, n * sizeof(float));
        pos += n * sizeof(float);
        out.push_back(std::move(a));
    }
    return out;
}

}  // namespace tubule::ad
