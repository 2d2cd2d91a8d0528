#pragma once

#include <cmath>

#include "rfulm/numerics/tensor.hpp"

namespace rfulm {

/// Unit-peak 2-D Gaussian used to blur label maps.
struct GaussianKernel {
    double sigma = 1.0;
    std::size_t side = 1;
    TensorD values;  // side x side
};

/// Side length (7 + R), bumped to the next odd value.
inline std::size_t gaussian_side_for_scale(std::size_t R) {
    std::size_t side = 7 + R;
    return side % 2 == 0 ? side + 1 : side;
}

/// values[r][c] = exp(-((r-m)^2 + (c-m)^2) / (2 sigma^2)), m = (side-1)/2.
///
/// Unit-peak, not unit-sum: the center is exactly 1.
inline GaussianKernel gaussian_kernel(double sigma, std::size_t side) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ArgumentError("gaussian_kernel: sigma must be > 0");
    if (side % 2 == 0) throw ArgumentError("gaussian_kernel: side must be odd");
    GaussianKernel k{sigma, side, TensorD({side, side})};
    const double m = double(side - 1) / 2.0;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
            const double dr = double(r) - m, dc = double(c) - m;
            k.values(r, c) = std::exp(-(dr * dr + dc * dc) * inv);
        }
    }
    return k;
}

/// Rearrange R^2 x H x W channels into a 1 x RH x RW map:
/// out[r*R + dr][c*R + dc] = in[dr*R + dc][r][c].
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& input, std::size_t R) {
    if (input.rank() != 3) throw DimensionError("pixel_shuffle: input must be C x H x W");
    if (R == 0 || input.dim(0) != R * R) {
        throw DimensionError("pixel_shuffle: channel count must equal R^2");
    }
    const std::size_t H = input.dim(1), W = input.dim(2);
    Tensor<T> out({1, H * R, W * R});
    const std::size_t OW = W * R;
    for (std::size_t dr = 0; dr < R; ++dr) {
        for (std::size_t dc = 0; dc < R; ++dc) {
            const T* src = input.data() + (dr * R + dc) * H * W;
            for (std::size_t r = 0; r < H; ++r) {
                T* dst = out.data() + (r * R + dr) * OW + dc;
                for (std::size_t c = 0; c < W; ++c) dst[c * R] = src[r * W + c];
            }
        }
    }
    return out;
}

/// Exact inverse of pixel_shuffle; also its adjoint, so it serves as the backward pass.
template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& input, std::size_t R) {
    if (R == 0) throw DimensionError("pixel_unshuffle: R must be >= 1");
    const std::size_t RH = input.rows(), RW = input.cols();
    if (input.size() != RH * RW || RH % R != 0 || RW % R != 0) {
        throw DimensionError("pixel_unshuffle: input must be a single plane divisible by R");
    }
    const std::size_t H = RH / R, W = RW / R;
    Tensor<T> out({R * R, H, W});
    for (std::size_t dr = 0; dr < R; ++dr) {
        for (std::size_t dc = 0; dc < R; ++dc) {
            T* dst = out.data() + (dr * R + dc) * H * W;
            for (std::size_t r = 0; r < H; ++r) {
                const T* src = input.data() + (r * R + dr) * RW + dc;
                for (std::size_t c = 0; c < W; ++c) dst[r * W + c] = src[c * R];
            }
        }
    }
    return out;
}

}  // namespace rfulm
