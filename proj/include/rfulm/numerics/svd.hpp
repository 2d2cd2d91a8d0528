#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "rfulm/numerics/tensor.hpp"

namespace rfulm {

/// Thin SVD X = U diag(sigma) V^T with r = min(M, N) components,
/// sigma sorted in decreasing order.
///
/// Column-major storage: u[j*M + i] is U(i, j), v[j*N + i] is V(i, j).
/// Sign convention: the largest-magnitude entry of each left singular
/// vector is positive.
struct ThinSvd {
    std::size_t m = 0, n = 0;
    std::vector<double> u;
    std::vector<double> sigma;
    std::vector<double> v;

    [[nodiscard]] std::size_t rank_bound() const { return sigma.size(); }
    [[nodiscard]] double U(std::size_t i, std::size_t j) const { return u[j * m + i]; }
    [[nodiscard]] double V(std::size_t i, std::size_t j) const { return v[j * n + i]; }
};

namespace detail {

/// One-sided (Hestenes) Jacobi on the columns of a column-major M x N buffer
/// with N <= M. Rotations are accumulated into `vcols` (N x N, column-major).
inline void hestenes_jacobi(std::vector<double>& a, std::size_t M, std::size_t N, std::vector<double>& vcols) {
    vcols.assign(N * N, 0.0);
    for (std::size_t i = 0; i < N; ++i) vcols[i * N + i] = 1.0;
    constexpr double eps = std::numeric_limits<double>::epsilon();
    constexpr int kMaxSweeps = 60;
    std::vector<double> norms(N);
    for (std::size_t j = 0; j < N; ++j) {
        const double* c = a.data() + j * M;
        norms[j] = std::inner_product(c, c + M, c, 0.0);
    }
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < N; ++p) {
            for (std::size_t q = p + 1; q < N; ++q) {
                double* ap = a.data() + p * M;
                double* aq = a.data() + q * M;
                const double alpha = norms[p];
                const double beta = norms[q];
                const double gamma = std::inner_product(ap, ap + M, aq, 0.0);
                if (gamma == 0.0 || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < M; ++i) {
                    const double x = ap[i], y = aq[i];
                    ap[i] = c * x - s * y;
                    aq[i] = s * x + c * y;
                }
                double* vp = vcols.data() + p * N;
                double* vq = vcols.data() + q * N;
                for (std::size_t i = 0; i < N; ++i) {
                    const double x = vp[i], y = vq[i];
                    vp[i] = c * x - s * y;
                    vq[i] = s * x + c * y;
                }
                norms[p] = std::inner_product(ap, ap + M, ap, 0.0);
                norms[q] = std::inner_product(aq, aq + M, aq, 0.0);
            }
        }
        if (!rotated) break;
    }
}

}  // namespace detail

/// Thin SVD of a rank-2 tensor (rows x cols).
template <typename T>
ThinSvd svd_thin(const Tensor<T>& matrix) {
    if (matrix.rank() != 2) throw DimensionError("svd: input must be a matrix");
    if (!matrix.all_finite()) throw NumericError("svd: non-finite entries");
    const std::size_t M = matrix.dim(0), N = matrix.dim(1);
    const bool transposed = N > M;
    const std::size_t rows = transposed ? N : M;  // long side
    const std::size_t cols = transposed ? M : N;  // short side, Jacobi runs over these
    std::vector<double> a(rows * cols);
    for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t j = 0; j < N; ++j) {
            const double x = double(matrix(i, j));
            if (transposed) a[i * rows + j] = x;  // column i of X^T
            else a[j * rows + i] = x;
        }
    }
    std::vector<double> w;
    detail::hestenes_jacobi(a, rows, cols, w);

    std::vector<double> sig(cols);
    for (std::size_t j = 0; j < cols; ++j) {
        const double* c = a.data() + j * rows;
        sig[j] = std::sqrt(std::inner_product(c, c + rows, c, 0.0));
    }
    std::vector<std::size_t> order(cols);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto l, auto r) { return sig[l] > sig[r]; });

    // Long-side vectors come from the normalized rotated columns, short-side from w.
    std::vector<double> lng(rows * cols, 0.0), shrt(cols * cols);
    std::vector<double> sorted(cols);
    for (std::size_t k = 0; k < cols; ++k) {
        const std::size_t j = order[k];
        sorted[k] = sig[j];
        if (sig[j] > 0.0) {
            for (std::size_t i = 0; i < rows; ++i) lng[k * rows + i] = a[j * rows + i] / sig[j];
        }
        std::copy(w.begin() + static_cast<std::ptrdiff_t>(j * cols),
                  w.begin() + static_cast<std::ptrdiff_t>((j + 1) * cols), shrt.begin() + static_cast<std::ptrdiff_t>(k * cols));
    }

    ThinSvd out;
    out.m = M;
    out.n = N;
    out.sigma = std::move(sorted);
    if (transposed) {
        out.u = std::move(shrt);  // M x r
        out.v = std::move(lng);   // N x r
    } else {
        out.u = std::move(lng);
        out.v = std::move(shrt);
    }
    // Deterministic sign: largest-|.| entry of each u column positive.
    for (std::size_t k = 0; k < cols; ++k) {
        double* uc = out.u.data() + k * M;
        std::size_t arg = 0;
        for (std::size_t i = 1; i < M; ++i) {
            if (std::abs(uc[i]) > std::abs(uc[arg])) arg = i;
        }
        if (uc[arg] < 0.0) {
            for (std::size_t i = 0; i < M; ++i) uc[i] = -uc[i];
            double* vc = out.v.data() + k * N;
            for (std::size_t i = 0; i < N; ++i) vc[i] = -vc[i];
        }
    }
    return out;
}

/// Remove the `drop_low` largest and `drop_high` smallest singular components.
///
/// Computed as X minus the dropped rank-one terms, so the residual
/// X - result has Frobenius norm equal to the l2 norm of the dropped values.
template <typename T>
Tensor<T> svd_truncate(const Tensor<T>& matrix, std::size_t drop_low, std::size_t drop_high) {
    if (matrix.rank() != 2) throw DimensionError("svd_truncate: input must be a matrix");
    const std::size_t r = std::min(matrix.dim(0), matrix.dim(1));
    if (drop_low + drop_high > r) throw ArgumentError("svd_truncate: drop_low + drop_high exceeds min(M, N)");
    if (!matrix.all_finite()) throw NumericError("svd_truncate: non-finite entries");
    Tensor<T> out = matrix;
    if (drop_low + drop_high == 0) return out;
    const ThinSvd svd = svd_thin(matrix);
    const std::size_t M = svd.m, N = svd.n;
    std::vector<std::size_t> dropped;
    for (std::size_t k = 0; k < drop_low; ++k) dropped.push_back(k);
    for (std::size_t k = r - drop_high; k < r; ++k) dropped.push_back(k);
    for (std::size_t k : dropped) {
        const double s = svd.sigma[k];
        if (s == 0.0) continue;
        for (std::size_t i = 0; i < M; ++i) {
            const double us = s * svd.U(i, k);
            T* row = out.data() + i * N;
            for (std::size_t j = 0; j < N; ++j) row[j] -= T(us * svd.V(j, k));
        }
    }
    return out;
}

}  // namespace rfulm
