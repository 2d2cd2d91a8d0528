#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "rfulm/numerics/kernels.hpp"
#include "rfulm/numerics/tensor.hpp"

namespace rfulm {

/// Sparse binary label at network-output scale.
struct LabelPoints {
    std::size_t rows = 0, cols = 0;
    std::vector<std::array<std::size_t, 2>> ones;

    static LabelPoints from_dense(const TensorD& map) {
        LabelPoints out{map.rows(), map.cols(), {}};
        for (std::size_t r = 0; r < out.rows; ++r)
            for (std::size_t c = 0; c < out.cols; ++c)
                if (map(r, c) != 0.0) out.ones.push_back({r, c});
        return out;
    }

    [[nodiscard]] TensorD dense() const {
        TensorD m({rows, cols});
        for (const auto& p : ones) m(p[0], p[1]) = 1.0;
        return m;
    }
};

/// Blurred label G_sigma * Y, computed by stamping the kernel at every one.
inline TensorD blur_label(const LabelPoints& label, const GaussianKernel& k) {
    TensorD out({label.rows, label.cols});
    const long half = long(k.side / 2);
    for (const auto& p : label.ones) {
        for (long dr = -half; dr <= half; ++dr) {
            const long r = long(p[0]) + dr;
            if (r < 0 || r >= long(label.rows)) continue;
            for (long dc = -half; dc <= half; ++dc) {
                const long c = long(p[1]) + dc;
                if (c < 0 || c >= long(label.cols)) continue;
                out(std::size_t(r), std::size_t(c)) += k.values(std::size_t(dr + half), std::size_t(dc + half));
            }
        }
    }
    return out;
}

inline constexpr double kLabelPeak = 120.0;

/// lambda0 = 120 / max(blur); an all-zero label falls back to 120.
inline double label_scale(const TensorD& blur) {
    const double m = blur.max_abs();
    return m > 0.0 ? kLabelPeak / m : kLabelPeak;
}

template <typename T>
struct LossResult {
    double value = 0.0;
    double lambda0 = 0.0;
    Tensor<T> grad;  // same shape as pred
};

/// ||pred - lambda0 blur||^2 + lambda1 ||pred||_1 and its gradient.
template <typename T>
LossResult<T> sr_loss(const Tensor<T>& pred, const LabelPoints& label, double sigma, double lambda1,
                      std::size_t kernel_side) {
    if (pred.rows() != label.rows || pred.cols() != label.cols || pred.size() != label.rows * label.cols) {
        throw DimensionError("loss: prediction and label shapes differ");
    }
    const TensorD blur = blur_label(label, gaussian_kernel(sigma, kernel_side));
    LossResult<T> out{0.0, label_scale(blur), Tensor<T>(pred.shape())};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = double(pred[i]);
        const double e = p - out.lambda0 * blur[i];
        const double s = p > 0.0 ? 1.0 : (p < 0.0 ? -1.0 : 0.0);
        out.value += e * e + lambda1 * std::abs(p);
        out.grad[i] = T(2.0 * e + lambda1 * s);
    }
    return out;
}

template <typename T>
LossResult<T> sr_loss(const Tensor<T>& pred, const TensorD& label, double sigma, double lambda1, std::size_t kernel_side) {
    if (label.rank() != 2 && !(label.rank() == 3 && label.dim(0) == 1)) throw DimensionError("loss: label must be a single plane");
    return sr_loss(pred, LabelPoints::from_dense(label.reshaped({label.rows(), label.cols()})), sigma, lambda1, kernel_side);
}

/// sigma(e) = end + (start - end) (1 - e / (total - 1))^2 for R > 10, else end.
inline double sigma_schedule(int epoch, int total, int R, double start = 3.5, double end = 1.0) {
    if (R <= 10 || total < 2) return end;
    if (epoch < 0 || epoch >= total) throw ArgumentError("sigma_schedule: epoch out of range");
    const double u = 1.0 - double(epoch) / double(total - 1);
    return end + (start - end) * u * u;
}

}  // namespace rfulm
