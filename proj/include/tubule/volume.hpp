#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <initializer_list>
#include <string>
#include <type_traits>
#include <vector>

#include "tubule/errors.hpp"

namespace tubule {

/// Grid extent in voxels, stored z,y,x.
struct Dims {
    std::size_t z = 0;
    std::size_t y = 0;
    std::size_t x = 0;

    constexpr std::size_t count() const { return z * y * x; }
    constexpr std::size_t operator[](int axis) const { return axis == 0 ? z : (axis == 1 ? y : x); }
    friend constexpr bool operator==(const Dims&, const Dims&) = default;
};

using Vec3 = std::array<double, 3>;  // z,y,x
using Index3 = std::array<std::ptrdiff_t, 3>;

/// On-disk element type. Volumes keep the type they were read with so a
/// roundtrip writes the same bytes back.
enum class ElementType { UChar, Short, Float };

/// Dense 3-D grid with physical geometry. Data are z-major: the linear index
/// of (z,y,x) is (z*ny + y)*nx + x.
template <class T>
class Grid {
public:
    using value_type = T;

    Grid() = default;

    Grid(Dims dims, Vec3 spacing = {1.0, 1.0, 1.0}, Vec3 origin = {0.0, 0.0, 0.0}, T fill = T{})
        : dims_(dims), spacing_(spacing), origin_(origin), data_(dims.count(), fill) {
        check_geometry();
    }

    Grid(Dims dims, Vec3 spacing, Vec3 origin, std::vector<T> data)
        : dims_(dims), spacing_(spacing), origin_(origin), data_(std::move(data)) {
        check_geometry();
        if (data_.size() != dims_.count()) {
            throw DataError("grid data length " + std::to_string(data_.size()) + " does not match dims product " +
                            std::to_string(dims_.count()));
        }
    }

    /// Same geometry, fresh contents.
    template <class U>
    static Grid like(const Grid<U>& other, T fill = T{}) {
        Grid g(other.dims(), other.spacing(), other.origin(), fill);
        return g;
    }

    const Dims& dims() const { return dims_; }
    const Vec3& spacing() const { return spacing_; }
    const Vec3& origin() const { return origin_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::vector<T>& storage() { return data_; }

    ElementType element_type() const { return element_type_; }
    void set_element_type(ElementType t) { element_type_ = t; }

    std::size_t index(std::size_t z, std::size_t y, std::size_t x) const { return (z * dims_.y + y) * dims_.x + x; }
    Index3 coords(std::size_t linear) const {
        const auto x = linear % dims_.x;
        const auto y = (linear / dims_.x) % dims_.y;
        const auto z = linear / (dims_.x * dims_.y);
        return {static_cast<std::ptrdiff_t>(z), static_cast<std::ptrdiff_t>(y), static_cast<std::ptrdiff_t>(x)};
    }
    bool contains(std::ptrdiff_t z, std::ptrdiff_t y, std::ptrdiff_t x) const {
        return z >= 0 && y >= 0 && x >= 0 && z < static_cast<std::ptrdiff_t>(dims_.z) &&
               y < static_cast<std::ptrdiff_t>(dims_.y) && x < static_cast<std::ptrdiff_t>(dims_.x);
    }

    T& operator()(std::size_t z, std::size_t y, std::size_t x) { return data_[index(z, y, x)]; }
    const T& operator()(std::size_t z, std::size_t y, std::size_t x) const { return data_[index(z, y, x)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    template <class U>
    bool same_geometry(const Grid<U>& o) const {
        return dims_ == o.dims() && spacing_ == o.spacing() && origin_ == o.origin();
    }

    friend bool operator==(const Grid& a, const Grid& b) {
        return a.dims_ == b.dims_ && a.spacing_ == b.spacing_ && a.origin_ == b.origin_ && a.data_ == b.data_;
    }

private:
    void check_geometry() const {
        if (dims_.z == 0 || dims_.y == 0 || dims_.x == 0) throw DataError("grid dims must be positive");
        for (double s : spacing_) {
            if (!(s > 0.0) || !std::isfinite(s)) throw DataError("grid spacing must be strictly positive");
        }
        for (double o : origin_) {
            if (!std::isfinite(o)) throw DataError("grid origin must be finite");
        }
    }

    Dims dims_{};
    Vec3 spacing_{1.0, 1.0, 1.0};
    Vec3 origin_{0.0, 0.0, 0.0};
    std::vector<T> data_;
    ElementType element_type_ = std::is_same_v<T, std::uint8_t> ? ElementType::UChar : ElementType::Float;
};

using Volume = Grid<float>;
using LabelMap = Grid<std::uint8_t>;

inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kArtery = 1;
inline constexpr std::uint8_t kVein = 2;
inline constexpr std::uint8_t kNonDetermined = 255;

template <class A, class B>
void require_same_geometry(const Grid<A>& a, const Grid<B>& b, const char* what) {
    if (!a.same_geometry(b)) throw DataError(std::string("geometry mismatch: ") + what);
}

/// Throws DataError if any voxel is NaN or infinite.
void require_finite(const Volume& v, const char* what);

/// Throws DataError if any voxel lies outside the given alphabet.
void require_alphabet(const LabelMap& m, std::initializer_list<std::uint8_t> alphabet, const char* what);

inline std::size_t count_nonzero(const LabelMap& m) {
    std::size_t n = 0;
    for (auto v : m.data()) n += v != 0;
    return n;
}

}  // namespace tubule
