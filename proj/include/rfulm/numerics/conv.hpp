#pragma once

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif
#include <Eigen/Core>

#include <string>

#include "rfulm/numerics/tensor.hpp"

namespace rfulm {

/// Geometry of a square-kernel 2-D convolution.
struct ConvShape {
    std::size_t in_channels = 1;
    std::size_t height = 1;
    std::size_t width = 1;
    std::size_t filters = 1;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;

    [[nodiscard]] std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
    [[nodiscard]] std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
    [[nodiscard]] std::size_t patch() const { return in_channels * kernel * kernel; }
};

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
ConvShape conv_shape(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride,
                     std::size_t padding) {
    if (input.rank() != 3) throw DimensionError("conv2d: input must be C x H x W");
    if (kernels.rank() != 4) throw DimensionError("conv2d: kernels must be F x C x k x k");
    if (kernels.dim(2) != kernels.dim(3)) throw DimensionError("conv2d: kernels must be square");
    if (kernels.dim(1) != input.dim(0)) {
        throw DimensionError("conv2d: kernel channels (" + std::to_string(kernels.dim(1)) +
                             ") differ from input channels (" + std::to_string(input.dim(0)) + ")");
    }
    if (stride == 0) throw ArgumentError("conv2d: stride must be >= 1");
    ConvShape s{input.dim(0), input.dim(1), input.dim(2), kernels.dim(0), kernels.dim(2), stride, padding};
    if (s.height + 2 * padding < s.kernel || s.width + 2 * padding < s.kernel) {
        throw DimensionError("conv2d: kernel larger than padded input");
    }
    return s;
}

/// Unfold input patches into a (C*k*k) x (H'*W') row-major matrix.
template <typename T>
void im2col(const T* in, const ConvShape& s, T* col) {
    const std::size_t oh = s.out_height(), ow = s.out_width();
    const auto k = s.kernel;
    const auto pad = static_cast<std::ptrdiff_t>(s.padding);
    const auto H = static_cast<std::ptrdiff_t>(s.height);
    const auto W = static_cast<std::ptrdiff_t>(s.width);
    for (std::size_t c = 0; c < s.in_channels; ++c) {
        const T* plane = in + c * s.height * s.width;
        for (std::size_t ki = 0; ki < k; ++ki) {
            for (std::size_t kj = 0; kj < k; ++kj) {
                T* row = col + ((c * k + ki) * k + kj) * oh * ow;
                for (std::size_t y = 0; y < oh; ++y) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * s.stride + ki) - pad;
                    T* dst = row + y * ow;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst, dst + ow, T(0));
                        continue;
                    }
                    const T* src = plane + iy * W;
                    if (s.stride == 1) {
                        // contiguous run, clipped at both borders
                        const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kj) - pad;
                        const auto n = static_cast<std::ptrdiff_t>(ow);
                        const std::ptrdiff_t x0 = std::min(n, std::max<std::ptrdiff_t>(0, -off));
                        const std::ptrdiff_t x1 = std::max(x0, std::min(n, W - off));
                        std::fill(dst, dst + x0, T(0));
                        std::copy(src + x0 + off, src + x1 + off, dst + x0);
                        std::fill(dst + x1, dst + n, T(0));
                    } else {
                        for (std::size_t x = 0; x < ow; ++x) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * s.stride + kj) - pad;
                            dst[x] = (ix < 0 || ix >= W) ? T(0) : src[ix];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatter-add columns back into an input-shaped buffer.
template <typename T>
void col2im(const T* col, const ConvShape& s, T* in) {
    const std::size_t oh = s.out_height(), ow = s.out_width();
    const auto k = s.kernel;
    const auto pad = static_cast<std::ptrdiff_t>(s.padding);
    const auto H = static_cast<std::ptrdiff_t>(s.height);
    const auto W = static_cast<std::ptrdiff_t>(s.width);
    for (std::size_t c = 0; c < s.in_channels; ++c) {
        T* plane = in + c * s.height * s.width;
        for (std::size_t ki = 0; ki < k; ++ki) {
            for (std::size_t kj = 0; kj < k; ++kj) {
                const T* row = col + ((c * k + ki) * k + kj) * oh * ow;
                for (std::size_t y = 0; y < oh; ++y) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * s.stride + ki) - pad;
                    if (iy < 0 || iy >= H) continue;
                    T* dst = plane + iy * W;
                    const T* src = row + y * ow;
                    for (std::size_t x = 0; x < ow; ++x) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * s.stride + kj) - pad;
                        if (ix >= 0 && ix < W) dst[ix] += src[x];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 2-D cross-correlation (no kernel flip), the deep-learning convention.
///
/// input: C x H x W, kernels: F x C x k x k, optional bias of length F.
/// Output extents are (H + 2*padding - k)/stride + 1. Each output element is
/// one fixed-order dot product, so results do not depend on threading.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride = 1,
                 std::size_t padding = 0, const Tensor<T>* bias = nullptr) {
    const ConvShape s = detail::conv_shape(input, kernels, stride, padding);
    const std::size_t P = s.out_height() * s.out_width();
    Tensor<T> out({s.filters, s.out_height(), s.out_width()});
    using Mat = detail::RowMat<T>;
    Eigen::Map<const Mat> W(kernels.data(), Eigen::Index(s.filters), Eigen::Index(s.patch()));
    Eigen::Map<Mat> Y(out.data(), Eigen::Index(s.filters), Eigen::Index(P));
    if (s.kernel == 1 && s.stride == 1 && s.padding == 0) {
        Eigen::Map<const Mat> X(input.data(), Eigen::Index(s.in_channels), Eigen::Index(P));
        Y.noalias() = W * X;
    } else {
        std::vector<T> col(s.patch() * P);
        detail::im2col(input.data(), s, col.data());
        Eigen::Map<const Mat> X(col.data(), Eigen::Index(s.patch()), Eigen::Index(P));
        Y.noalias() = W * X;
    }
    if (bias != nullptr) {
        if (bias->size() != s.filters) throw DimensionError("conv2d: bias length must equal filter count");
        for (std::size_t f = 0; f < s.filters; ++f) {
            const T b = (*bias)[f];
            T* row = out.data() + f * P;
            for (std::size_t i = 0; i < P; ++i) row[i] += b;
        }
    }
    return out;
}

template <typename T>
struct Conv2dGrads {
    Tensor<T> input;
    Tensor<T> kernels;
    Tensor<T> bias;
};

/// Reverse-mode gradients of conv2d given the upstream gradient of its output.
/// Skips the input gradient when `need_input_grad` is false.
template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels,
                               const Tensor<T>& grad_out, std::size_t stride = 1,
                               std::size_t padding = 0, bool need_input_grad = true) {
    const ConvShape s = detail::conv_shape(input, kernels, stride, padding);
    const std::size_t P = s.out_height() * s.out_width();
    if (grad_out.size() != s.filters * P) throw DimensionError("conv2d_backward: upstream gradient shape");
    using Mat = detail::RowMat<T>;
    Conv2dGrads<T> g{Tensor<T>(input.shape()), Tensor<T>(kernels.shape()), Tensor<T>({s.filters})};
    Eigen::Map<const Mat> W(kernels.data(), Eigen::Index(s.filters), Eigen::Index(s.patch()));
    Eigen::Map<const Mat> dY(grad_out.data(), Eigen::Index(s.filters), Eigen::Index(P));
    Eigen::Map<Mat> dW(g.kernels.data(), Eigen::Index(s.filters), Eigen::Index(s.patch()));
    for (std::size_t f = 0; f < s.filters; ++f) {
        T acc = T(0);
        const T* row = grad_out.data() + f * P;
        for (std::size_t i = 0; i < P; ++i) acc += row[i];
        g.bias[f] = acc;
    }
    const bool pointwise = s.kernel == 1 && s.stride == 1 && s.padding == 0;
    if (pointwise) {
        Eigen::Map<const Mat> X(input.data(), Eigen::Index(s.in_channels), Eigen::Index(P));
        dW.noalias() = dY * X.transpose();
        if (need_input_grad) {
            Eigen::Map<Mat> dX(g.input.data(), Eigen::Index(s.in_channels), Eigen::Index(P));
            dX.noalias() = W.transpose() * dY;
        }
        return g;
    }
    std::vector<T> col(s.patch() * P);
    detail::im2col(input.data(), s, col.data());
    {
        Eigen::Map<const Mat> X(col.data(), Eigen::Index(s.patch()), Eigen::Index(P));
        dW.noalias() = dY * X.transpose();
    }
    if (need_input_grad) {
        Eigen::Map<Mat> dcol(col.data(), Eigen::Index(s.patch()), Eigen::Index(P));
        dcol.noalias() = W.transpose() * dY;
        detail::col2im(col.data(), s, g.input.data());
    }
    return g;
}

}  // namespace rfulm
