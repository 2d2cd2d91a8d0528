#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "rfulm/numerics/tensor.hpp"

namespace rfulm {

enum class ResampleMode { Nearest, Bilinear, Bicubic };

inline ResampleMode parse_resample_mode(std::string_view s) {
    if (s == "nearest") return ResampleMode::Nearest;
    if (s == "bilinear") return ResampleMode::Bilinear;
    if (s == "bicubic") return ResampleMode::Bicubic;
    throw ArgumentError("unknown resample mode: " + std::string(s));
}

/// Positive rational scale factor num/den.
struct Scale {
    std::int64_t num = 1;
    std::int64_t den = 1;

    /// round(extent * num / den), at least 1.
    [[nodiscard]] std::size_t apply(std::size_t extent) const {
        const std::int64_t n = static_cast<std::int64_t>(extent) * num;
        const std::int64_t q = (2 * n + den) / (2 * den);
        return static_cast<std::size_t>(std::max<std::int64_t>(1, q));
    }
};

namespace detail {

struct Tap {
    std::size_t index;
    double weight;
};

/// 1-D interpolation taps for each output sample, half-pixel-centered.
inline std::vector<std::vector<Tap>> resample_taps(std::size_t in, std::size_t out, ResampleMode mode) {
    std::vector<std::vector<Tap>> taps(out);
    const double ratio = double(in) / double(out);
    const auto clampi = [in](std::ptrdiff_t i) {
        return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(in) - 1));
    };
    for (std::size_t o = 0; o < out; ++o) {
        switch (mode) {
            case ResampleMode::Nearest: {
                taps[o].push_back({std::min(in - 1, static_cast<std::size_t>(std::floor(double(o) * ratio))), 1.0});
                break;
            }
            case ResampleMode::Bilinear: {
                const double x = std::max(0.0, (double(o) + 0.5) * ratio - 0.5);
                const auto i0 = static_cast<std::ptrdiff_t>(std::floor(x));
                const double w1 = x - double(i0);
                taps[o].push_back({clampi(i0), 1.0 - w1});
                if (w1 > 0.0) taps[o].push_back({clampi(i0 + 1), w1});
                break;
            }
            case ResampleMode::Bicubic: {
                // Keys cubic convolution, a = -0.75
                constexpr double a = -0.75;
                const double x = (double(o) + 0.5) * ratio - 0.5;
                const auto i0 = static_cast<std::ptrdiff_t>(std::floor(x));
                const double t = x - double(i0);
                const auto near = [](double d) { return ((a + 2.0) * d - (a + 3.0)) * d * d + 1.0; };
                const auto far = [](double d) { return ((a * d - 5.0 * a) * d + 8.0 * a) * d - 4.0 * a; };
                const double w[4] = {far(t + 1.0), near(t), near(1.0 - t), far(2.0 - t)};
                for (int j = 0; j < 4; ++j) taps[o].push_back({clampi(i0 - 1 + j), w[j]});
                break;
            }
        }
    }
    return taps;
}

}  // namespace detail

/// Resample every channel plane to out_rows x out_cols.
///
/// Sampling is half-pixel-centered (corners not aligned); weights of every
/// mode sum to one, so constants are preserved. Bilinear weights are convex.
template <typename T>
Tensor<T> resample2d(const Tensor<T>& input, std::size_t out_rows, std::size_t out_cols,
                     ResampleMode mode = ResampleMode::Bilinear) {
    if (input.empty()) throw DimensionError("resample2d: empty input");
    if (out_rows == 0 || out_cols == 0) throw DimensionError("resample2d: output extents must be >= 1");
    const std::size_t C = input.channels(), H = input.rows(), W = input.cols();
    const auto ty = detail::resample_taps(H, out_rows, mode);
    const auto tx = detail::resample_taps(W, out_cols, mode);
    std::vector<std::size_t> shape = input.shape();
    shape[shape.size() - 1] = out_cols;
    if (shape.size() >= 2) shape[shape.size() - 2] = out_rows;
    else if (out_rows != 1) throw DimensionError("resample2d: rank-1 input cannot change rows");
    Tensor<T> out(shape);
    std::vector<T> tmp(H * out_cols);
    for (std::size_t c = 0; c < C; ++c) {
        const T* src = input.data() + c * H * W;
        for (std::size_t r = 0; r < H; ++r) {
            for (std::size_t o = 0; o < out_cols; ++o) {
                T acc = T(0);
                for (const auto& tap : tx[o]) acc += T(tap.weight) * src[r * W + tap.index];
                tmp[r * out_cols + o] = acc;
            }
        }
        T* dst = out.data() + c * out_rows * out_cols;
        for (std::size_t o = 0; o < out_rows; ++o) {
            for (std::size_t x = 0; x < out_cols; ++x) {
                T acc = T(0);
                for (const auto& tap : ty[o]) acc += T(tap.weight) * tmp[tap.index * out_cols + x];
                dst[o * out_cols + x] = acc;
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> resample2d(const Tensor<T>& input, Scale scale, ResampleMode mode = ResampleMode::Bilinear) {
    if (scale.num <= 0 || scale.den <= 0) throw ArgumentError("resample2d: scale must be > 0");
    if (input.empty()) throw DimensionError("resample2d: empty input");
    const std::size_t rows = input.rank() >= 2 ? scale.apply(input.rows()) : 1;
    return resample2d(input, rows, scale.apply(input.cols()), mode);
}

/// Transpose of resample2d's linear map (its exact backward pass).
/// `grad_out` has the output extents; the result has in_rows x in_cols planes.
template <typename T>
Tensor<T> resample2d_backward(const Tensor<T>& grad_out, std::size_t in_rows, std::size_t in_cols,
                              ResampleMode mode = ResampleMode::Bilinear) {
    const std::size_t C = grad_out.channels(), OH = grad_out.rows(), OW = grad_out.cols();
    const auto ty = detail::resample_taps(in_rows, OH, mode);
    const auto tx = detail::resample_taps(in_cols, OW, mode);
    std::vector<std::size_t> shape = grad_out.shape();
    shape[shape.size() - 1] = in_cols;
    if (shape.size() >= 2) shape[shape.size() - 2] = in_rows;
    Tensor<T> out(shape);
    std::vector<T> tmp(in_rows * OW);
    for (std::size_t c = 0; c < C; ++c) {
        std::fill(tmp.begin(), tmp.end(), T(0));
        const T* g = grad_out.data() + c * OH * OW;
        for (std::size_t o = 0; o < OH; ++o) {
            for (const auto& tap : ty[o]) {
                T* row = tmp.data() + tap.index * OW;
                const T w = T(tap.weight);
                for (std::size_t x = 0; x < OW; ++x) row[x] += w * g[o * OW + x];
            }
        }
        T* dst = out.data() + c * in_rows * in_cols;
        for (std::size_t r = 0; r < in_rows; ++r) {
            for (std::size_t o = 0; o < OW; ++o) {
                const T v = tmp[r * OW + o];
                for (const auto& tap : tx[o]) dst[r * in_cols + tap.index] += T(tap.weight) * v;
            }
        }
    }
    return out;
}

}  // namespace rfulm
