#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "tubule/metaimage.hpp"

using namespace tubule;

namespace {

std::filesystem::path tmp(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "tubule_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::string bytes_of(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_raw(const std::filesystem::path& p, const std::string& header, const std::string& payload) {
    std::ofstream out(p, std::ios::binary);
    out << header << payload;
}

}  // namespace

TEST_CASE("MET_UCHAR header maps DimSize x,y,z onto z-major layout") {
    const auto p = tmp("uchar.mha");
    std::string payload;
    for (char c = 0; c < 8; ++c) payload.push_back(c);
    write_raw(p,
              "ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\n"
              "DimSize = 2 2 2\nElementType = MET_UCHAR\nElementDataFile = LOCAL\n",
              payload);
    auto img = read_metaimage(p);
    REQUIRE(std::holds_alternative<LabelMap>(img));
    const auto& m = std::get<LabelMap>(img);
    CHECK(m.dims() == Dims{2, 2, 2});
    CHECK(m(1, 1, 1) == 7);
    CHECK(m(0, 0, 1) == 1);  // x fastest
    CHECK(m(1, 0, 0) == 4);
}

TEST_CASE("non-cubic DimSize is transposed") {
    LabelMap m(Dims{2, 3, 4});
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<std::uint8_t>(i);
    const auto p = tmp("dims.mha");
    write_metaimage(m, p);
    CHECK(bytes_of(p).find("DimSize = 4 3 2\n") != std::string::npos);
    CHECK(read_labelmap(p) == m);
}

TEST_CASE("payload shorter than DimSize implies is rejected") {
    const auto p = tmp("short.mha");
    write_raw(p, "NDims = 3\nDimSize = 4 4 4\nElementType = MET_SHORT\nElementDataFile = LOCAL\n", std::string(32, '\0'));
    CHECK_THROWS_WITH_AS(read_metaimage(p), doctest::Contains("payload has 32 bytes, DimSize implies 128"), DataError);
}

TEST_CASE("header errors") {
    const auto p = tmp("bad.mha");
    SUBCASE("missing key") {
        write_raw(p, "NDims = 3\nElementType = MET_UCHAR\nElementDataFile = LOCAL\n", "x");
        CHECK_THROWS_WITH_AS(read_metaimage(p), doctest::Contains("DimSize"), DataError);
    }
    SUBCASE("duplicate key") {
        write_raw(p, "NDims = 3\nNDims = 3\nDimSize = 1 1 1\nElementType = MET_UCHAR\nElementDataFile = LOCAL\n", "x");
        CHECK_THROWS_WITH_AS(read_metaimage(p), doctest::Contains("duplicate"), DataError);
    }
    SUBCASE("unsupported element type") {
        write_raw(p, "NDims = 3\nDimSize = 1 1 1\nElementType = MET_DOUBLE\nElementDataFile = LOCAL\n",
                  std::string(8, '\0'));
        CHECK_THROWS_WITH_AS(read_metaimage(p), doctest::Contains("unsupported"), DataError);
    }
    SUBCASE("non-positive spacing") {
        write_raw(p,
                  "NDims = 3\nDimSize = 1 1 1\nElementSpacing = 1 0 1\nElementType = MET_UCHAR\nElementDataFile = LOCAL\n",
                  "x");
        CHECK_THROWS_WITH_AS(read_metaimage(p), doctest::Contains("spacing"), DataError);
    }
}

TEST_CASE("writer emits the fixed header and is byte-deterministic") {
    Volume v(Dims{1, 1, 1}, {0.7, 0.6, 0.5}, {-1.25, 3.0, 100.125}, 0.5f);
    const auto a = tmp("det_a.mha"), b = tmp("det_b.mha");
    write_metaimage(v, a);
    write_metaimage(v, b);
    CHECK(bytes_of(a) == bytes_of(b));
    const auto text = bytes_of(a);
    CHECK(text.rfind("ObjectType = Image\nNDims = 3\nBinaryData = True\nBinaryDataByteOrderMSB = False\n"
                     "DimSize = 1 1 1\nElementSpacing = 0.5 0.59999999999999998 0.69999999999999996\n"
                     "Offset = 100.125 3 -1.25\nElementType = MET_FLOAT\nElementDataFile = LOCAL\n",
                     0) == 0);
}

TEST_CASE("roundtrip is bit-exact for every element type") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> u(-2000.f, 2000.f);
    Volume f(Dims{3, 4, 5}, {0.61, 0.7, 1.3}, {-12.5, 0.1, 7.0});
    for (auto& x : f.data()) x = u(rng);
    Volume s = f;
    for (auto& x : s.data()) x = std::round(x);
    s.set_element_type(ElementType::Short);
    LabelMap l(Dims{3, 4, 5}, {0.61, 0.7, 1.3}, {-12.5, 0.1, 7.0});
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = static_cast<std::uint8_t>(i % 3);

    write_metaimage(f, tmp("rt_f.mha"));
    write_metaimage(s, tmp("rt_s.mha"));
    write_metaimage(l, tmp("rt_l.mha"));
    const auto f2 = read_volume(tmp("rt_f.mha"));
    const auto s2 = read_volume(tmp("rt_s.mha"));
    CHECK(f2 == f);
    CHECK(s2 == s);
    CHECK(s2.element_type() == ElementType::Short);
    CHECK(read_labelmap(tmp("rt_l.mha")) == l);

    // second generation writes identical bytes
    write_metaimage(s2, tmp("rt_s2.mha"));
    CHECK(bytes_of(tmp("rt_s.mha")) == bytes_of(tmp("rt_s2.mha")));
}

TEST_CASE("NaN volumes are rejected before writing") {
    Volume v(Dims{1, 1, 2});
    v[1] = std::nanf("");
    const auto p = tmp("nan.mha");
    std::filesystem::remove(p);
    CHECK_THROWS_AS(write_metaimage(v, p), DataError);
    CHECK_FALSE(std::filesystem::exists(p));
}

TEST_CASE("MET_SHORT rejects values it cannot represent") {
    Volume v(Dims{1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 0.5f);
    v.set_element_type(ElementType::Short);
    CHECK_THROWS_AS(write_metaimage(v, tmp("frac.mha")), DataError);
}

TEST_CASE("multi-channel probability maps roundtrip") {
    std::vector<Volume> ch;
    for (int c = 0; c < 3; ++c) {
        Volume v(Dims{2, 2, 3}, {1, 1, 1}, {0, 0, 0}, 0.0f);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = float(c) + float(i) / 100.f;
        ch.push_back(v);
    }
    write_metaimage_channels(ch, tmp("probs.mha"));
    const auto back = read_metaimage_channels(tmp("probs.mha"));
    REQUIRE(back.size() == 3);
    for (int c = 0; c < 3; ++c) CHECK(back[c] == ch[c]);
    CHECK_THROWS_AS(read_metaimage(tmp("probs.mha")), DataError);
}

TEST_CASE("external raw payload referenced by ElementDataFile") {
    const auto raw = tmp("ext.raw");
    {
        std::ofstream out(raw, std::ios::binary);
        const char b[2] = {9, 4};
        out.write(b, 2);
    }
    const auto hdr = tmp("ext.mhd");
    write_raw(hdr, "NDims = 3\nDimSize = 2 1 1\nElementType = MET_UCHAR\nElementDataFile = ext.raw\n", "");
    const auto m = read_labelmap(hdr);
    CHECK(m(0, 0, 0) == 9);
    CHECK(m(0, 0, 1) == 4);
}
