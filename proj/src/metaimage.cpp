#include "tubule/metaimage.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>

namespace tubule {

namespace {

struct Header {
    std::map<std::string, std::string> keys;
    std::size_t payload_offset = 0;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

Header parse_header(const std::vector<char>& bytes, const std::filesystem::path& path) {
    Header h;
    std::size_t pos = 0;
    while (pos < bytes.size()) {
        const auto nl = std::find(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end(), '\n');
        const std::string line(bytes.begin() + static_cast<std::ptrdiff_t>(pos), nl);
        pos = static_cast<std::size_t>(nl - bytes.begin()) + (nl == bytes.end() ? 0 : 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (trim(line).empty()) continue;
            throw DataError(path.string() + ": malformed header line '" + line + "'");
        }
        const auto key = trim(line.substr(0, eq));
        if (!h.keys.emplace(key, trim(line.substr(eq + 1))).second) {
            throw DataError(path.string() + ": duplicate header key " + key);
        }
        if (key == "ElementDataFile") {
            h.payload_offset = pos;
            return h;
        }
    }
    throw DataError(path.string() + ": missing required key ElementDataFile");
}

const std::string& required(const Header& h, const std::string& key, const std::filesystem::path& path) {
    auto it = h.keys.find(key);
    if (it == h.keys.end()) throw DataError(path.string() + ": missing required key " + key);
    return it->second;
}

template <class T, std::size_t N>
std::array<T, N> parse_tuple(const std::string& s, const std::string& key) {
    std::istringstream is(s);
    std::array<T, N> out{};
    for (auto& v : out) {
        if (!(is >> v)) throw DataError("header key " + key + " needs " + std::to_string(N) + " values");
    }
    std::string extra;
    if (is >> extra) throw DataError("header key " + key + " has too many values");
    return out;
}

std::size_t element_size(ElementType t) {
    switch (t) {
        case ElementType::UChar: return 1;
        case ElementType::Short: return 2;
        case ElementType::Float: return 4;
    }
    return 0;
}

const char* element_name(ElementType t) {
    switch (t) {
        case ElementType::UChar: return "MET_UCHAR";
        case ElementType::Short: return "MET_SHORT";
        case ElementType::Float: return "MET_FLOAT";
    }
    return "";
}

template <class T>
T load_le(const char* p, bool msb) {
    std::array<char, sizeof(T)> raw{};
    std::memcpy(raw.data(), p, sizeof(T));
    const bool swap = msb == (std::endian::native == std::endian::little);
    if (swap) std::reverse(raw.begin(), raw.end());
    T v;
    std::memcpy(&v, raw.data(), sizeof(T));
    return v;
}

template <class T>
void store_le(std::string& out, T v) {
    std::array<char, sizeof(T)> raw{};
    std::memcpy(raw.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    out.append(raw.data(), sizeof(T));
}

struct Decoded {
    Dims dims;
    Vec3 spacing;
    Vec3 origin;
    ElementType type;
    std::size_t channels;
    std::vector<char> payload;
    bool msb;
};

Decoded decode(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    const auto h = parse_header(bytes, path);

    if (const auto nd = required(h, "NDims", path); nd != "3") throw DataError(path.string() + ": NDims must be 3");
    const auto dim_xyz = parse_tuple<long long, 3>(required(h, "DimSize", path), "DimSize");
    for (auto d : dim_xyz) {
        if (d <= 0) throw DataError(path.string() + ": DimSize must be positive");
    }
    Decoded out;
    out.dims = {static_cast<std::size_t>(dim_xyz[2]), static_cast<std::size_t>(dim_xyz[1]),
                static_cast<std::size_t>(dim_xyz[0])};

    out.spacing = {1.0, 1.0, 1.0};
    if (auto it = h.keys.find("ElementSpacing"); it != h.keys.end()) {
        const auto s = parse_tuple<double, 3>(it->second, "ElementSpacing");
        out.spacing = {s[2], s[1], s[0]};
    }
    for (double s : out.spacing) {
        if (!(s > 0.0)) throw DataError(path.string() + ": non-positive spacing");
    }
    out.origin = {0.0, 0.0, 0.0};
    for (const char* key : {"Offset", "Origin", "Position"}) {
        if (auto it = h.keys.find(key); it != h.keys.end()) {
            const auto o = parse_tuple<double, 3>(it->second, key);
            out.origin = {o[2], o[1], o[0]};
            break;
        }
    }

    const auto& et = required(h, "ElementType", path);
    if (et == "MET_UCHAR") out.type = ElementType::UChar;
    else if (et == "MET_SHORT") out.type = ElementType::Short;
    else if (et == "MET_FLOAT") out.type = ElementType::Float;
    else throw DataError(path.string() + ": unsupported ElementType " + et);

    out.channels = 1;
    if (auto it = h.keys.find("ElementNumberOfChannels"); it != h.keys.end()) {
        out.channels = std::stoul(it->second);
        if (out.channels == 0) throw DataError(path.string() + ": ElementNumberOfChannels must be positive");
    }
    out.msb = false;
    if (auto it = h.keys.find("BinaryDataByteOrderMSB"); it != h.keys.end()) out.msb = it->second == "True";
    if (auto it = h.keys.find("ElementByteOrderMSB"); it != h.keys.end()) out.msb = it->second == "True";
    if (auto it = h.keys.find("CompressedData"); it != h.keys.end() && it->second == "True") {
        throw DataError(path.string() + ": compressed payloads are not supported");
    }

    const auto& data_file = required(h, "ElementDataFile", path);
    if (data_file == "LOCAL") {
        out.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.payload_offset), bytes.end());
    } else {
        out.payload = slurp(path.parent_path() / data_file);
    }
    const std::size_t expected = out.dims.count() * out.channels * element_size(out.type);
    if (out.payload.size() != expected) {
        throw DataError(path.string() + ": payload has " + std::to_string(out.payload.size()) + " bytes, DimSize implies " +
                        std::to_string(expected));
    }
    return out;
}

Volume decode_channel(const Decoded& d, std::size_t channel) {
    const std::size_t n = d.dims.count();
    const std::size_t es = element_size(d.type);
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) {
        const char* p = d.payload.data() + (i * d.channels + channel) * es;
        if (d.type == ElementType::Short) values[i] = static_cast<float>(load_le<std::int16_t>(p, d.msb));
        else values[i] = load_le<float>(p, d.msb);
    }
    Volume v(d.dims, d.spacing, d.origin, std::move(values));
    v.set_element_type(d.type);
    require_finite(v, "read_metaimage");
    return v;
}

std::string format_triple(const Vec3& zyx) {
    std::ostringstream os;
    os << std::setprecision(17) << zyx[2] << ' ' << zyx[1] << ' ' << zyx[0];
    return os.str();
}

std::string header(const Dims& dims, const Vec3& spacing, const Vec3& origin, ElementType type, std::size_t channels) {
    std::ostringstream os;
    os << "ObjectType = Image\n"
       << "NDims = 3\n"
       << "BinaryData = True\n"
       << "BinaryDataByteOrderMSB = False\n"
       << "DimSize = " << dims.x << ' ' << dims.y << ' ' << dims.z << '\n'
       << "ElementSpacing = " << format_triple(spacing) << '\n'
       << "Offset = " << format_triple(origin) << '\n';
    if (channels > 1) os << "ElementNumberOfChannels = " << channels << '\n';
    os << "ElementType = " << element_name(type) << '\n' << "ElementDataFile = LOCAL\n";
    return os.str();
}

void emit(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

}  // namespace

Image read_metaimage(const std::filesystem::path& path) {
    const auto d = decode(path);
    if (d.channels != 1) throw DataError(path.string() + ": multi-channel image; use read_metaimage_channels");
    if (d.type == ElementType::UChar) {
        std::vector<std::uint8_t> values(d.payload.begin(), d.payload.end());
        return LabelMap(d.dims, d.spacing, d.origin, std::move(values));
    }
    return decode_channel(d, 0);
}

Volume read_volume(const std::filesystem::path& path) {
    auto img = read_metaimage(path);
    if (auto* v = std::get_if<Volume>(&img)) return std::move(*v);
    // Label maps are accepted where an intensity volume is expected.
    const auto& m = std::get<LabelMap>(img);
    Volume v(m.dims(), m.spacing(), m.origin());
    for (std::size_t i = 0; i < m.size(); ++i) v[i] = m[i];
    return v;
}

LabelMap read_labelmap(const std::filesystem::path& path) {
    auto img = read_metaimage(path);
    if (auto* m = std::get_if<LabelMap>(&img)) return std::move(*m);
    throw DataError(path.string() + ": expected MET_UCHAR label map");
}

void write_metaimage(const Volume& volume, const std::filesystem::path& path) {
    require_finite(volume, "write_metaimage");
    const auto type = volume.element_type() == ElementType::UChar ? ElementType::Float : volume.element_type();
    std::string bytes = header(volume.dims(), volume.spacing(), volume.origin(), type, 1);
    bytes.reserve(bytes.size() + volume.size() * element_size(type));
    for (float v : volume.data()) {
        if (type == ElementType::Short) {
            if (v != std::nearbyint(v) || v < std::numeric_limits<std::int16_t>::min() ||
                v > std::numeric_limits<std::int16_t>::max()) {
                throw DataError("write_metaimage: value not representable as MET_SHORT");
            }
            store_le(bytes, static_cast<std::int16_t>(v));
        } else {
            store_le(bytes, v);
        }
    }
    emit(path, bytes);
}

void write_metaimage(const LabelMap& labels, const std::filesystem::path& path) {
    std::string bytes = header(labels.dims(), labels.spacing(), labels.origin(), ElementType::UChar, 1);
    bytes.append(reinterpret_cast<const char*>(labels.data().data()), labels.size());
    emit(path, bytes);
}

std::vector<Volume> read_metaimage_channels(const std::filesystem::path& path) {
    const auto d = decode(path);
    if (d.type == ElementType::UChar) throw DataError(path.string() + ": expected a float/short channel image");
    std::vector<Volume> out;
    for (std::size_t c = 0; c < d.channels; ++c) out.push_back(decode_channel(d, c));
    return out;
}

void write_metaimage_channels(std::span<const Volume> channels, const std::filesystem::path& path) {
    if (channels.empty()) throw DataError("write_metaimage_channels: no channels");
    for (const auto& c : channels) {
        require_same_geometry(c, channels.front(), "write_metaimage_channels");
        require_finite(c, "write_metaimage_channels");
    }
    if (channels.size() == 1) return write_metaimage(channels.front(), path);
    const auto& g = channels.front();
    std::string bytes = header(g.dims(), g.spacing(), g.origin(), ElementType::Float, channels.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (const auto& c : channels) store_le(bytes, c[i]);
    }
    emit(path, bytes);
}

}  // namespace tubule
