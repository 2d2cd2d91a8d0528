#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "rfulm/error.hpp"

namespace rfulm {

/// Dense row-major tensor of rank 1..4.
///
/// Rank-3 tensors are read as (channels, rows, cols); rank-2 as (rows, cols).
/// Every extent is at least one, so `size() == product(shape())` always holds.
template <typename T>
class Tensor {
    static_assert(std::is_floating_point_v<T>, "Tensor holds real scalars");

public:
    using value_type = T;
    static constexpr std::size_t kMaxRank = 4;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, T fill = T(0)) : shape_(std::move(shape)) {
        check_shape(shape_);
        data_.assign(product(shape_), fill);
    }

    Tensor(std::initializer_list<std::size_t> shape, T fill = T(0))
        : Tensor(std::vector<std::size_t>(shape), fill) {}

    Tensor(std::vector<std::size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape(shape_);
        if (data_.size() != product(shape_)) {
            throw DimensionError("tensor payload length does not match its shape");
        }
    }

    [[nodiscard]] const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }
    [[nodiscard]] std::size_t dim(std::size_t i) const { return shape_.at(i); }

    // Trailing-axis accessors: rows/cols are always the last two extents.
    [[nodiscard]] std::size_t cols() const { return shape_.back(); }
    [[nodiscard]] std::size_t rows() const { return rank() >= 2 ? shape_[rank() - 2] : 1; }
    [[nodiscard]] std::size_t channels() const { return rank() >= 3 ? shape_[rank() - 3] : 1; }

    [[nodiscard]] T* data() noexcept { return data_.data(); }
    [[nodiscard]] const T* data() const noexcept { return data_.data(); }
    [[nodiscard]] std::span<T> values() noexcept { return data_; }
    [[nodiscard]] std::span<const T> values() const noexcept { return data_; }
    [[nodiscard]] std::vector<T>& storage() noexcept { return data_; }
    [[nodiscard]] const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    T& operator()(std::size_t ch, std::size_t r, std::size_t c) {
        return data_[(ch * rows() + r) * cols() + c];
    }
    const T& operator()(std::size_t ch, std::size_t r, std::size_t c) const {
        return data_[(ch * rows() + r) * cols() + c];
    }

    /// View of one channel plane of a rank-3 tensor.
    [[nodiscard]] std::span<T> plane(std::size_t ch) {
        const std::size_t n = rows() * cols();
        return {data_.data() + ch * n, n};
    }
    [[nodiscard]] std::span<const T> plane(std::size_t ch) const {
        const std::size_t n = rows() * cols();
        return {data_.data() + ch * n, n};
    }

    /// Same payload, new extents. Element count must match.
    [[nodiscard]] Tensor reshaped(std::vector<std::size_t> shape) const {
        return Tensor(std::move(shape), data_);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    [[nodiscard]] Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    [[nodiscard]] T max_abs() const {
        T m = T(0);
        for (T v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    [[nodiscard]] T sum() const { return std::accumulate(data_.begin(), data_.end(), T(0)); }

    [[nodiscard]] bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    Tensor& operator+=(const Tensor& o) {
        require_same_shape(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        require_same_shape(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Tensor& operator*=(T s) {
        for (T& v : data_) v *= s;
        return *this;
    }

    friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
    friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
    friend Tensor operator*(Tensor a, T s) { return a *= s; }
    friend Tensor operator*(T s, Tensor a) { return a *= s; }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

    void require_same_shape(const Tensor& o) const {
        if (o.shape_ != shape_) throw DimensionError("tensor shapes differ");
    }

    static std::size_t product(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (auto e : shape) n *= e;
        return n;
    }

private:
    static void check_shape(const std::vector<std::size_t>& shape) {
        if (shape.empty() || shape.size() > kMaxRank) {
            throw DimensionError("tensor rank must be between 1 and 4");
        }
        for (auto e : shape) {
            if (e == 0) throw DimensionError("tensor extents must be >= 1");
        }
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

using TensorD = Tensor<double>;
using TensorF = Tensor<float>;

/// Squared Frobenius norm.
template <typename T>
double energy(const Tensor<T>& t) {
    double e = 0.0;
    for (T v : t.values()) e += double(v) * double(v);
    return e;
}

// ---------------------------------------------------------------------------
// RTNSR1 binary format
//
//   magic   "RTNSR1\0"                 7 bytes
//   dtype   u8  (1 = f32, 2 = f64)
//   rank    u8
//   extents rank x u32 little-endian
//   payload row-major little-endian scalars
// ---------------------------------------------------------------------------

namespace rtnsr {

inline constexpr std::array<char, 7> kMagic = {'R', 'T', 'N', 'S', 'R', '1', '\0'};
inline constexpr std::uint8_t kDtypeF32 = 1;
inline constexpr std::uint8_t kDtypeF64 = 2;

namespace detail {

inline bool host_is_little_endian() {
    const std::uint16_t probe = 1;
    unsigned char b;
    std::memcpy(&b, &probe, 1);
    return b == 1;
}

template <typename U>
void put_le(std::ostream& os, U v) {
    unsigned char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    if (!host_is_little_endian()) std::reverse(buf, buf + sizeof(U));
    os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
    unsigned char buf[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) {
        throw IoError("RTNSR1: truncated stream");
    }
    if (!host_is_little_endian()) std::reverse(buf, buf + sizeof(U));
    U v;
    std::memcpy(&v, buf, sizeof(U));
    return v;
}

}  // namespace detail

/// Serialize with the tensor's own scalar width.
template <typename T>
void write(std::ostream& os, const Tensor<T>& t) {
    os.write(kMagic.data(), kMagic.size());
    detail::put_le<std::uint8_t>(os, std::is_same_v<T, float> ? kDtypeF32 : kDtypeF64);
    detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
    if (detail::host_is_little_endian()) {
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(T)));
    } else {
        for (T v : t.values()) detail::put_le<T>(os, v);
    }
    if (!os) throw IoError("RTNSR1: write failed");
}

/// Read a tensor, converting the stored dtype to T.
template <typename T>
Tensor<T> read(std::istream& is) {
    std::array<char, 7> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
        throw IoError("RTNSR1: bad magic");
    }
    const auto dtype = detail::get_le<std::uint8_t>(is);
    const auto rank = detail::get_le<std::uint8_t>(is);
    if (rank < 1 || rank > Tensor<T>::kMaxRank) throw IoError("RTNSR1: unsupported rank");
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) e = detail::get_le<std::uint32_t>(is);
    const std::size_t n = Tensor<T>::product(shape);
    std::vector<T> data(n);
    if (dtype == kDtypeF32) {
        for (auto& v : data) v = static_cast<T>(detail::get_le<float>(is));
    } else if (dtype == kDtypeF64) {
        for (auto& v : data) v = static_cast<T>(detail::get_le<double>(is));
    } else {
        throw IoError("RTNSR1: unknown dtype code " + std::to_string(int(dtype)));
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
void save(const std::filesystem::path& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    write(os, t);
}

template <typename T>
Tensor<T> load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for reading: " + path.string());
    return read<T>(is);
}

}  // namespace rtnsr
}  // namespace rfulm
