#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <set>

#include "rfulm/network/loss.hpp"
#include "rfulm/random.hpp"
#include "rfulm/simulator.hpp"

namespace rfulm {

struct AugmentOptions {
    std::size_t crop_rows = 128;  // 0 disables cropping
    std::size_t crop_cols = 128;
    double p_flip = 0.5;
    double p_rotate = 0.25;
    double max_rotation_deg = 5.0;
    double p_blur = 0.1;
    double blur_sigma_min = 0.5, blur_sigma_max = 1.0;
    std::optional<double> snr_db = 50.0;
    bool renormalize = true;

    /// Every transform off.
    static AugmentOptions none() {
        AugmentOptions o;
        o.crop_rows = o.crop_cols = 0;
        o.p_flip = o.p_rotate = o.p_blur = 0.0;
        o.snr_db.reset();
        o.renormalize = false;
        return o;
    }
};

struct TrainingSample {
    TensorD frame;  // C x U x V
    LabelPoints label;
};

namespace detail {

inline void check_sample(const TrainingSample& s, std::size_t R) {
    if (s.frame.rank() != 3) throw DimensionError("augment: frame must be C x U x V");
    if (s.label.rows != R * s.frame.dim(1) || s.label.cols != R * s.frame.dim(2)) {
        throw DimensionError("augment: label is not at scale R of the frame");
    }
}

inline void dedupe(LabelPoints& l) {
    std::set<std::array<std::size_t, 2>> seen;
    std::vector<std::array<std::size_t, 2>> out;
    for (const auto& p : l.ones)
        if (seen.insert(p).second) out.push_back(p);
    l.ones = std::move(out);
}

}  // namespace detail

/// Crop frame rows [r0, r0+rows) x cols [c0, c0+cols) and the matching label window.
inline TrainingSample crop_sample(const TrainingSample& s, std::size_t R, std::size_t r0, std::size_t c0,
                                  std::size_t rows, std::size_t cols) {
    detail::check_sample(s, R);
    const std::size_t C = s.frame.dim(0);
    if (r0 + rows > s.frame.dim(1) || c0 + cols > s.frame.dim(2)) throw DimensionError("augment: frame smaller than crop");
    TrainingSample out{TensorD({C, rows, cols}), {R * rows, R * cols, {}}};
    for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) out.frame(ch, r, c) = s.frame(ch, r0 + r, c0 + c);
    for (const auto& p : s.label.ones) {
        if (p[0] < R * r0 || p[1] < R * c0) continue;
        const std::size_t r = p[0] - R * r0, c = p[1] - R * c0;
        if (r < out.label.rows && c < out.label.cols) out.label.ones.push_back({r, c});
    }
    return out;
}

/// Mirror the element axis. Frame row u maps to U-1-u, label row j to
/// R(U-1)-j; label rows past the last element's position are dropped.
inline TrainingSample flip_lateral(const TrainingSample& s, std::size_t R) {
    detail::check_sample(s, R);
    TrainingSample out = s;
    const std::size_t C = s.frame.dim(0), U = s.frame.dim(1), V = s.frame.dim(2);
    for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t u = 0; u < U; ++u)
            for (std::size_t v = 0; v < V; ++v) out.frame(ch, u, v) = s.frame(ch, U - 1 - u, v);
    out.label.ones.clear();
    const std::size_t top = R * (U - 1);
    for (const auto& p : s.label.ones)
        if (p[0] <= top) out.label.ones.push_back({top - p[0], p[1]});
    return out;
}

/// Rotate by `deg` about the frame centre. Frame: bilinear, zero outside.
/// Label: each one is rotated as a point and re-rounded.
inline TrainingSample rotate_sample(const TrainingSample& s, std::size_t R, double deg) {
    detail::check_sample(s, R);
    const std::size_t C = s.frame.dim(0), U = s.frame.dim(1), V = s.frame.dim(2);
    const double a = deg * std::numbers::pi / 180.0, cs = std::cos(a), sn = std::sin(a);
    const double cu = double(U - 1) / 2.0, cv = double(V - 1) / 2.0;
    TrainingSample out{TensorD(s.frame.shape()), {s.label.rows, s.label.cols, {}}};
    for (std::size_t u = 0; u < U; ++u)
        for (std::size_t v = 0; v < V; ++v) {
            // inverse rotation of the output coordinate
            const double du = double(u) - cu, dv = double(v) - cv;
            const double su = cu + cs * du + sn * dv, sv = cv - sn * du + cs * dv;
            const double fu = std::floor(su), fv = std::floor(sv);
            const double wu = su - fu, wv = sv - fv;
            for (std::size_t ch = 0; ch < C; ++ch) {
                double acc = 0.0;
                for (int iu = 0; iu < 2; ++iu)
                    for (int iv = 0; iv < 2; ++iv) {
                        const long pu = long(fu) + iu, pv = long(fv) + iv;
                        if (pu < 0 || pv < 0 || pu >= long(U) || pv >= long(V)) continue;
                        acc += (iu ? wu : 1.0 - wu) * (iv ? wv : 1.0 - wv) * s.frame(ch, std::size_t(pu), std::size_t(pv));
                    }
                out.frame(ch, u, v) = acc;
            }
        }
    for (const auto& p : s.label.ones) {
        const double du = double(p[0]) / double(R) - cu, dv = double(p[1]) / double(R) - cv;
        const double r = std::round(double(R) * (cu + cs * du - sn * dv));
        const double c = std::round(double(R) * (cv + sn * du + cs * dv));
        if (r < 0 || c < 0 || r >= double(out.label.rows) || c >= double(out.label.cols)) continue;
        out.label.ones.push_back({std::size_t(r), std::size_t(c)});
    }
    detail::dedupe(out.label);
    return out;
}

/// Separable unit-sum Gaussian blur of every frame plane, edge-clamped.
inline void blur_frame(TensorD& frame, double sigma) {
    const long half = long(std::ceil(3.0 * sigma));
    std::vector<double> k(std::size_t(2 * half + 1));
    double sum = 0.0;
    for (long i = -half; i <= half; ++i) sum += k[std::size_t(i + half)] = std::exp(-double(i * i) / (2 * sigma * sigma));
    for (auto& w : k) w /= sum;
    const std::size_t C = frame.dim(0), U = frame.dim(1), V = frame.dim(2);
    TensorD tmp(frame.shape());
    for (std::size_t ch = 0; ch < C; ++ch) {
        for (std::size_t u = 0; u < U; ++u)
            for (std::size_t v = 0; v < V; ++v) {
                double acc = 0.0;
                for (long i = -half; i <= half; ++i)
                    acc += k[std::size_t(i + half)] * frame(ch, u, std::size_t(std::clamp(long(v) + i, 0L, long(V) - 1)));
                tmp(ch, u, v) = acc;
            }
        for (std::size_t u = 0; u < U; ++u)
            for (std::size_t v = 0; v < V; ++v) {
                double acc = 0.0;
                for (long i = -half; i <= half; ++i)
                    acc += k[std::size_t(i + half)] * tmp(ch, std::size_t(std::clamp(long(u) + i, 0L, long(U) - 1)), v);
                frame(ch, u, v) = acc;
            }
    }
}

/// One random augmentation draw: crop, flip, rotate, blur, noise, renormalize.
inline TrainingSample augment(const TrainingSample& s, std::size_t R, const AugmentOptions& o, std::uint64_t seed) {
    detail::check_sample(s, R);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    TrainingSample out = s;
    if (o.crop_rows > 0 && o.crop_cols > 0) {
        const std::size_t U = s.frame.dim(1), V = s.frame.dim(2);
        if (o.crop_rows > U || o.crop_cols > V) throw DimensionError("augment: frame smaller than crop");
        std::uniform_int_distribution<std::size_t> ur(0, U - o.crop_rows), uc(0, V - o.crop_cols);
        const std::size_t r0 = ur(rng), c0 = uc(rng);
        out = crop_sample(out, R, r0, c0, o.crop_rows, o.crop_cols);
    }
    if (u01(rng) < o.p_flip) out = flip_lateral(out, R);
    if (u01(rng) < o.p_rotate) {
        std::uniform_real_distribution<double> ua(-o.max_rotation_deg, o.max_rotation_deg);
        out = rotate_sample(out, R, ua(rng));
    }
    if (u01(rng) < o.p_blur) {
        std::uniform_real_distribution<double> us(o.blur_sigma_min, o.blur_sigma_max);
        blur_frame(out.frame, us(rng));
    }
    if (o.snr_db) add_clutter_noise(out.frame, *o.snr_db, rng(), 1.0);
    if (o.renormalize) peak_normalize(out.frame);
    return out;
}

}  // namespace rfulm
