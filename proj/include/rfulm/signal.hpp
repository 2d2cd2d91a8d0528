#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "rfulm/numerics/svd.hpp"
#include "rfulm/numerics/tensor.hpp"
#include "rfulm/parallel.hpp"

namespace rfulm {

/// Sequence of equally shaped frames sampled every `dt` seconds.
struct FrameStack {
    std::vector<TensorD> frames;
    double dt = 1e-3;

    [[nodiscard]] std::size_t size() const { return frames.size(); }
    [[nodiscard]] std::size_t pixels() const { return frames.empty() ? 0 : frames.front().size(); }

    void validate() const {
        if (frames.size() < 2) throw ArgumentError("FrameStack: need at least 2 frames");
        if (!(dt > 0.0)) throw ArgumentError("FrameStack: dt must be > 0");
        for (const auto& f : frames) {
            if (f.shape() != frames.front().shape()) throw DimensionError("FrameStack: frames differ in shape");
        }
    }
};

/// Temporal singular vectors removed by the SVD clutter filter (length T each).
struct ClutterSubspace {
    std::vector<std::vector<double>> temporal;
};

/// Right singular vectors of the (pixels x T) Casorati matrix for the
/// `drop_low` largest and `drop_high` smallest singular values.
inline ClutterSubspace svd_clutter_subspace(const FrameStack& stack, std::size_t drop_low, std::size_t drop_high) {
    stack.validate();
    const std::size_t T = stack.size(), P = stack.pixels();
    if (drop_low + drop_high >= T) throw ArgumentError("svd_clutter_filter: drop_low + drop_high must be < T");
    TensorD cas({P, T});
    for (std::size_t t = 0; t < T; ++t) {
        const double* f = stack.frames[t].data();
        for (std::size_t p = 0; p < P; ++p) cas(p, t) = f[p];
    }
    const ThinSvd svd = svd_thin(cas);
    const std::size_t r = svd.sigma.size();
    ClutterSubspace out;
    const auto take = [&](std::size_t k) {
        std::vector<double> v(T);
        for (std::size_t t = 0; t < T; ++t) v[t] = svd.V(t, k);
        out.temporal.push_back(std::move(v));
    };
    for (std::size_t k = 0; k < drop_low && k < r; ++k) take(k);
    for (std::size_t k = r - std::min(r, drop_high); k < r; ++k) take(k);
    return out;
}

/// X (I - V V^T): remove the temporal subspace from every pixel series.
inline FrameStack project_out(const FrameStack& stack, const ClutterSubspace& sub) {
    stack.validate();
    FrameStack out = stack;
    const std::size_t T = stack.size(), P = stack.pixels();
    std::vector<double> series(T);
    for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t t = 0; t < T; ++t) series[t] = stack.frames[t][p];
        for (const auto& v : sub.temporal) {
            double c = 0.0;
            for (std::size_t t = 0; t < T; ++t) c += series[t] * v[t];
            for (std::size_t t = 0; t < T; ++t) out.frames[t][p] -= c * v[t];
        }
    }
    return out;
}

/// Spatio-temporal SVD clutter filter: drop the `drop_low` largest (tissue)
/// and `drop_high` smallest (noise) singular components of the Casorati matrix.
inline FrameStack svd_clutter_filter(const FrameStack& stack, std::size_t drop_low, std::size_t drop_high) {
    if (drop_low + drop_high == 0) {
        stack.validate();
        return stack;
    }
    return project_out(stack, svd_clutter_subspace(stack, drop_low, drop_high));
}

// ------------------------------------------------------------ IIR filters

/// Second-order section b0 b1 b2 / 1 a1 a2.
struct Biquad {
    double b[3] = {1, 0, 0};
    double a[3] = {1, 0, 0};

    [[nodiscard]] std::complex<double> response(double omega) const {
        const std::complex<double> z1 = std::polar(1.0, -omega), z2 = z1 * z1;
        return (b[0] + b[1] * z1 + b[2] * z2) / (a[0] + a[1] * z1 + a[2] * z2);
    }
};

using Sos = std::vector<Biquad>;

enum class BandType { Lowpass, Highpass, Bandpass };

/// Digital Butterworth filter as second-order sections (bilinear transform
/// with pre-warping). Cutoffs in Hz, `fs` the sampling rate.
inline Sos butterworth(int order, BandType type, double f1, double f2, double fs) {
    if (order < 1) throw ArgumentError("butterworth: order must be >= 1");
    using C = std::complex<double>;
    const double nyq = fs / 2.0;
    const auto warp = [&](double f) { return 2.0 * fs * std::tan(std::numbers::pi * f / fs); };
    const auto check = [&](double f) {
        if (!(f > 0.0 && f < nyq)) throw ArgumentError("butterworth: cutoff must lie strictly inside (0, fs/2)");
    };
    std::vector<C> proto;
    for (int k = 0; k < order; ++k) {
        proto.push_back(std::polar(1.0, std::numbers::pi * double(2 * k + order + 1) / double(2 * order)));
    }
    std::vector<C> poles, zeros;
    double ref_omega = 0.0;
    if (type == BandType::Lowpass) {
        check(f1);
        const double wc = warp(f1);
        for (auto p : proto) poles.push_back(p * wc);
        zeros.assign(std::size_t(order), C(-1.0, 0.0));
        ref_omega = 0.0;
    } else if (type == BandType::Highpass) {
        check(f1);
        const double wc = warp(f1);
        for (auto p : proto) poles.push_back(wc / p);
        zeros.assign(std::size_t(order), C(1.0, 0.0));
        ref_omega = std::numbers::pi;
    } else {
        check(f1);
        check(f2);
        if (!(f1 < f2)) throw ArgumentError("butterworth: band edges must be increasing");
        const double w1 = warp(f1), w2 = warp(f2);
        const double bw = w2 - w1, w0 = std::sqrt(w1 * w2);
        for (auto p : proto) {
            const C pb = p * bw / 2.0;
            const C disc = std::sqrt(pb * pb - w0 * w0);
            poles.push_back(pb + disc);
            poles.push_back(pb - disc);
        }
        for (int k = 0; k < order; ++k) {
            zeros.emplace_back(1.0, 0.0);
            zeros.emplace_back(-1.0, 0.0);
        }
        ref_omega = 2.0 * std::atan(w0 / (2.0 * fs));
    }
    // bilinear map of the analog poles
    std::vector<C> zp;
    for (auto p : poles) zp.push_back((2.0 * fs + p) / (2.0 * fs - p));

    // pair conjugates: keep poles with positive imaginary part, real ones alone
    std::vector<C> upper, real;
    for (auto p : zp) {
        if (std::abs(p.imag()) < 1e-12 * std::max(1.0, std::abs(p))) real.emplace_back(p.real(), 0.0);
        else if (p.imag() > 0) upper.push_back(p);
    }
    std::sort(upper.begin(), upper.end(), [](C l, C r) { return std::abs(l) < std::abs(r); });
    Sos sos;
    std::size_t zi = 0;
    const auto next_zero = [&]() { return zi < zeros.size() ? zeros[zi++].real() : 0.0; };
    for (auto p : upper) {
        Biquad s;
        const double z0 = next_zero(), z1 = next_zero();
        s.b[0] = 1.0;
        s.b[1] = -(z0 + z1);
        s.b[2] = z0 * z1;
        s.a[1] = -2.0 * p.real();
        s.a[2] = std::norm(p);
        sos.push_back(s);
    }
    for (std::size_t i = 0; i < real.size(); i += 2) {
        Biquad s;
        if (i + 1 < real.size()) {
            const double z0 = next_zero(), z1 = next_zero();
            s.b[1] = -(z0 + z1);
            s.b[2] = z0 * z1;
            s.a[1] = -(real[i].real() + real[i + 1].real());
            s.a[2] = real[i].real() * real[i + 1].real();
        } else {
            s.b[1] = -next_zero();
            s.a[1] = -real[i].real();
        }
        sos.push_back(s);
    }
    // unit gain at the reference frequency
    C h(1.0, 0.0);
    for (const auto& s : sos) h *= s.response(ref_omega);
    const double g = 1.0 / std::abs(h);
    for (double& v : sos.front().b) v *= g;
    return sos;
}

inline std::complex<double> sos_response(const Sos& sos, double omega) {
    std::complex<double> h(1.0, 0.0);
    for (const auto& s : sos) h *= s.response(omega);
    return h;
}

/// Steady-state initial conditions for a unit step (transposed direct form II).
inline std::vector<std::array<double, 2>> sos_step_state(const Sos& sos) {
    std::vector<std::array<double, 2>> zi(sos.size());
    double scale = 1.0;
    for (std::size_t i = 0; i < sos.size(); ++i) {
        const auto& s = sos[i];
        const double g = (s.b[0] + s.b[1] + s.b[2]) / (1.0 + s.a[1] + s.a[2]);
        zi[i][1] = scale * (s.b[2] - s.a[2] * g);
        zi[i][0] = scale * (s.b[1] + s.b[2] - (s.a[1] + s.a[2]) * g);
        scale *= g;
    }
    return zi;
}

inline void sos_filter_inplace(const Sos& sos, std::vector<double>& x, std::vector<std::array<double, 2>> z) {
    for (std::size_t i = 0; i < sos.size(); ++i) {
        const auto& s = sos[i];
        double z0 = z[i][0], z1 = z[i][1];
        for (double& v : x) {
            const double y = s.b[0] * v + z0;
            z0 = s.b[1] * v - s.a[1] * y + z1;
            z1 = s.b[2] * v - s.a[2] * y;
            v = y;
        }
    }
}

/// Zero-phase forward-backward filtering with odd extension at both ends and
/// step-response initial conditions.
inline std::vector<double> sos_filtfilt(const Sos& sos, const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::size_t zeros_b = 0, zeros_a = 0;
    for (const auto& s : sos) {
        zeros_b += s.b[2] == 0.0;
        zeros_a += s.a[2] == 0.0;
    }
    std::size_t pad = 3 * (2 * sos.size() + 1 - std::min(zeros_b, zeros_a));
    pad = std::min(pad, n > 0 ? n - 1 : 0);
    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
    ext.insert(ext.end(), x.begin(), x.end());
    for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);
    const auto zi = sos_step_state(sos);
    const auto scaled = [&](double v) {
        auto z = zi;
        for (auto& s : z) {
            s[0] *= v;
            s[1] *= v;
        }
        return z;
    };
    sos_filter_inplace(sos, ext, scaled(ext.front()));
    std::reverse(ext.begin(), ext.end());
    sos_filter_inplace(sos, ext, scaled(ext.front()));
    std::reverse(ext.begin(), ext.end());
    return {ext.begin() + std::ptrdiff_t(pad), ext.begin() + std::ptrdiff_t(pad + n)};
}

/// Per-pixel zero-phase Butterworth filter across frames.
///
/// f_lo == 0 gives a lowpass, f_hi == Nyquist a highpass, both an identity.
/// Forward-backward filtering doubles the effective order and squares the
/// magnitude response.
inline FrameStack temporal_bandpass(const FrameStack& stack, double f_lo, double f_hi, int order = 4, int jobs = 1) {
    stack.validate();
    const double fs = 1.0 / stack.dt, nyq = fs / 2.0;
    if (!(f_lo >= 0.0 && f_lo < f_hi && f_hi <= nyq)) {
        throw ArgumentError("temporal_bandpass: need 0 <= f_lo < f_hi <= 1/(2 dt)");
    }
    const bool low_open = f_lo == 0.0, high_open = f_hi == nyq;
    if (low_open && high_open) return stack;
    const Sos sos = low_open    ? butterworth(order, BandType::Lowpass, f_hi, 0.0, fs)
                    : high_open ? butterworth(order, BandType::Highpass, f_lo, 0.0, fs)
                                : butterworth(order, BandType::Bandpass, f_lo, f_hi, fs);
    FrameStack out = stack;
    const std::size_t T = stack.size(), P = stack.pixels();
    parallel_for(P, jobs, [&](std::size_t p) {
        std::vector<double> series(T);
        for (std::size_t t = 0; t < T; ++t) series[t] = stack.frames[t][p];
        const auto y = sos_filtfilt(sos, series);
        for (std::size_t t = 0; t < T; ++t) out.frames[t][p] = y[t];
    });
    return out;
}

inline double stack_energy(const FrameStack& s) {
    double e = 0.0;
    for (const auto& f : s.frames) e += energy(f);
    return e;
}

}  // namespace rfulm
