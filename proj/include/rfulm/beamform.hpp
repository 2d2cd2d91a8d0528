#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "rfulm/geometry.hpp"
#include "rfulm/numerics/tensor.hpp"
#include "rfulm/parallel.hpp"

namespace rfulm {

/// Regular B-mode pixel grid; pixel (r, c) sits at (y0 + c dy, z0 + r dz).
struct BModeGrid {
    double y0 = 0.0, dy = 0.0;
    double z0 = 0.0, dz = 0.0;
    std::size_t rows = 0, cols = 0;

    [[nodiscard]] double y(double col) const { return y0 + col * dy; }
    [[nodiscard]] double z(double row) const { return z0 + row * dz; }
    [[nodiscard]] double col_of(double y_m) const { return (y_m - y0) / dy; }
    [[nodiscard]] double row_of(double z_m) const { return (z_m - z0) / dz; }

    void validate() const {
        if (!(dy > 0.0 && dz > 0.0)) throw ArgumentError("BModeGrid: spacings must be > 0");
        if (rows == 0 || cols == 0) throw ArgumentError("BModeGrid: empty grid");
        if (!(z0 > 0.0)) throw ArgumentError("BModeGrid: grid must lie below the array");
    }

    /// Grid covering `region` at `spacing` meters in both directions.
    static BModeGrid covering(const ImagingRegion& region, double spacing) {
        BModeGrid g;
        g.dy = g.dz = spacing;
        g.y0 = region.y_min;
        g.z0 = region.z_min;
        g.cols = std::size_t(std::floor((region.y_max - region.y_min) / spacing + 1e-9)) + 1;
        g.rows = std::size_t(std::floor((region.z_max - region.z_min) / spacing + 1e-9)) + 1;
        g.validate();
        return g;
    }

    /// Wavelength-spaced grid over the array span and [z_min, z_max].
    static BModeGrid wavelength_grid(const ArrayGeometry& geom, const AcquisitionParams& acq, double z_min = 1e-3,
                                     double z_max = 15e-3, double spacing_wavelengths = 1.0) {
        return covering(ImagingRegion::for_array(geom, z_min, z_max), spacing_wavelengths * acq.wavelength());
    }
};

/// Delay-and-sum on baseband I/Q data.
///
/// Per pixel, each element inside the f-number aperture |y - x_k| <= z / (2 F)
/// contributes its I/Q sample at tau_k = (||p - v_s|| - s + ||p - x_k||) / c,
/// linearly interpolated and rotated by exp(+j 2 pi f_c tau_k). Delays
/// outside the recorded window contribute nothing. Output is 2 x rows x cols.
inline TensorD das_beamform(const TensorD& frame, const ArrayGeometry& geom, const PlaneWave& wave,
                            const AcquisitionParams& acq, const BModeGrid& grid, double f_number = 1.0, int jobs = 1) {
    if (frame.rank() != 3 || frame.dim(0) != 2 || frame.dim(1) != geom.size()) {
        throw DimensionError("das_beamform: frame must be 2 x elements x samples");
    }
    if (!(f_number > 0.0)) throw ArgumentError("das_beamform: f-number must be > 0");
    grid.validate();
    const std::size_t K = geom.size(), V = frame.dim(2);
    const double fs = acq.sample_rate, c = acq.speed_of_sound;
    const double wc = 2.0 * std::numbers::pi * acq.center_frequency;
    TensorD out({2, grid.rows, grid.cols});
    parallel_for(grid.rows, jobs, [&](std::size_t r) {
        const double z = grid.z(double(r));
        const double half_aperture = z / (2.0 * f_number);
        for (std::size_t col = 0; col < grid.cols; ++col) {
            const Position p{grid.y(double(col)), z};
            const double tx = distance(p, wave.virtual_source) - wave.travel_offset;
            double re = 0.0, im = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                const double lateral = p.y - geom.elements[k].y;
                if (std::abs(lateral) > half_aperture) continue;
                const double tau = (tx + std::sqrt(lateral * lateral + z * z)) / c;
                const double n = tau * fs;
                if (n < 0.0 || n > double(V - 1)) continue;
                const auto i0 = std::min(std::size_t(n), V - 2);
                const double f = n - double(i0);
                const double I = (1.0 - f) * frame(0, k, i0) + f * frame(0, k, i0 + 1);
                const double Q = (1.0 - f) * frame(1, k, i0) + f * frame(1, k, i0 + 1);
                const double cs = std::cos(wc * tau), sn = std::sin(wc * tau);
                re += I * cs - Q * sn;
                im += I * sn + Q * cs;
            }
            out(0, r, col) = re;
            out(1, r, col) = im;
        }
    });
    return out;
}

/// |img| of a 2-plane complex image.
inline TensorD magnitude(const TensorD& img) {
    if (img.rank() != 3 || img.dim(0) != 2) throw DimensionError("magnitude: expects 2 x rows x cols");
    TensorD out({img.dim(1), img.dim(2)});
    for (std::size_t r = 0; r < img.dim(1); ++r)
        for (std::size_t c = 0; c < img.dim(2); ++c) out(r, c) = std::hypot(img(0, r, c), img(1, r, c));
    return out;
}

/// 20 log10(|img| / max) clipped to [-range, 0] and mapped to [0, 1].
/// An all-zero image maps to zeros.
inline TensorD envelope_log(const TensorD& img, double dynamic_range_db = 60.0) {
    if (!(dynamic_range_db > 0.0)) throw ArgumentError("envelope_log: dynamic range must be > 0");
    TensorD mag = img.rank() == 3 && img.dim(0) == 2 ? magnitude(img) : img;
    const double peak = mag.max_abs();
    if (peak == 0.0) return TensorD(mag.shape());
    for (auto& v : mag.values()) {
        const double db = std::abs(v) > 0.0 ? 20.0 * std::log10(std::abs(v) / peak) : -dynamic_range_db;
        v = (std::clamp(db, -dynamic_range_db, 0.0) + dynamic_range_db) / dynamic_range_db;
    }
    return mag;
}

/// Binary PGM (P5). Values are scaled by `maxval` and clamped; maxval > 255
/// writes 16-bit big-endian samples.
inline void write_pgm(const std::filesystem::path& path, const TensorD& img, int maxval = 255, double scale = -1.0) {
    if (img.rank() != 2) throw DimensionError("write_pgm: expects a rows x cols image");
    if (maxval < 1 || maxval > 65535) throw ArgumentError("write_pgm: maxval must be in [1, 65535]");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write image: " + path.string());
    if (scale < 0.0) scale = double(maxval);
    os << "P5\n" << img.cols() << ' ' << img.rows() << '\n' << maxval << '\n';
    for (double v : img.values()) {
        const auto q = static_cast<std::uint32_t>(std::clamp(std::lround(v * scale), 0L, long(maxval)));
        if (maxval > 255) os.put(char((q >> 8) & 0xff));
        os.put(char(q & 0xff));
    }
    if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace rfulm
