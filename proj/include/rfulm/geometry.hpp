#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rfulm/numerics/lm.hpp"

namespace rfulm {

/// Position in the imaging plane plus an out-of-plane (elevation) component, meters.
struct Position {
    double y = 0.0;          // lateral
    double z = 0.0;          // axial (depth)
    double elevation = 0.0;  // out of plane
};

inline double distance(const Position& a, const Position& b) {
    const double dy = a.y - b.y, dz = a.z - b.z, de = a.elevation - b.elevation;
    return std::sqrt(dy * dy + dz * dz + de * de);
}

/// Linear transducer array: element positions on the z = 0 line.
struct ArrayGeometry {
    std::vector<Position> elements;
    double pitch = 0.1e-3;

    [[nodiscard]] std::size_t size() const { return elements.size(); }
    [[nodiscard]] Position center() const {
        Position c;
        for (const auto& e : elements) {
            c.y += e.y;
            c.z += e.z;
            c.elevation += e.elevation;
        }
        const double n = double(elements.size());
        return {c.y / n, c.z / n, c.elevation / n};
    }
    [[nodiscard]] double aperture() const { return double(elements.size()) * pitch; }

    /// Lateral coordinate (meters) of a fractional element index.
    [[nodiscard]] double lateral_at(double element_index) const {
        return elements.front().y + element_index * pitch;
    }

    /// `count` elements at `pitch`, centered on y = 0.
    static ArrayGeometry linear(std::size_t count = 128, double pitch_m = 0.1e-3) {
        if (count < 2) throw ArgumentError("ArrayGeometry: need at least 2 elements");
        if (!(pitch_m > 0.0)) throw ArgumentError("ArrayGeometry: pitch must be > 0");
        ArrayGeometry g;
        g.pitch = pitch_m;
        g.elements.resize(count);
        const double mid = double(count - 1) / 2.0;
        for (std::size_t k = 0; k < count; ++k) g.elements[k] = {(double(k) - mid) * pitch_m, 0.0, 0.0};
        g.validate();
        return g;
    }

    void validate() const {
        if (elements.size() < 2) throw GeometryError("ArrayGeometry: need at least 2 elements");
        for (std::size_t k = 0; k < elements.size(); ++k) {
            const auto& e = elements[k];
            if (e.z != 0.0 || e.elevation != 0.0) throw GeometryError("ArrayGeometry: elements must lie on the lateral axis");
            if (k > 0) {
                const double step = e.y - elements[k - 1].y;
                if (step <= 0.0) throw GeometryError("ArrayGeometry: elements must be ordered by lateral position");
                if (std::abs(step - pitch) > 1e-12) throw GeometryError("ArrayGeometry: element spacing differs from pitch");
            }
        }
    }
};

/// Acquisition constants. `sample_rate` is the channel-space (I/Q) rate;
/// RF is synthesized at sample_rate * rf_decimation.
struct AcquisitionParams {
    double speed_of_sound = 1540.0;
    double sample_rate = 12.48e6;
    double center_frequency = 15.6e6;
    double relative_bandwidth = 0.67;
    std::size_t samples = 256;
    std::size_t rf_decimation = 4;

    [[nodiscard]] double wavelength() const { return speed_of_sound / center_frequency; }
    [[nodiscard]] double rf_sample_rate() const { return sample_rate * double(rf_decimation); }
    [[nodiscard]] double samples_per_meter() const { return sample_rate / speed_of_sound; }

    void validate() const {
        if (!(speed_of_sound > 0 && sample_rate > 0 && center_frequency > 0 && relative_bandwidth > 0 &&
              samples > 0 && rf_decimation > 0)) {
            throw ArgumentError("AcquisitionParams: all fields must be strictly positive");
        }
    }
};

/// Steered plane wave described by a distant virtual source.
///
/// The source sits `standoff` behind the array center along the steering
/// direction and the travel offset equals that standoff, so
/// ||p - v_s|| - s tends to z cos(a) + y sin(a) as the standoff grows.
struct PlaneWave {
    double angle = 0.0;  // radians
    Position virtual_source;
    double travel_offset = 0.0;
    int index = 0;

    static PlaneWave steered(double angle_rad, const ArrayGeometry& geom, int wave_index = 0,
                             double standoff_apertures = 100.0) {
        const double D = standoff_apertures * geom.aperture();
        const Position c = geom.center();
        PlaneWave w;
        w.angle = angle_rad;
        w.virtual_source = {c.y - D * std::sin(angle_rad), c.z - D * std::cos(angle_rad), c.elevation};
        w.travel_offset = distance(c, w.virtual_source);
        w.index = wave_index;
        if (!std::isfinite(w.virtual_source.y) || !std::isfinite(w.virtual_source.z)) {
            throw GeometryError("PlaneWave: non-finite virtual source");
        }
        return w;
    }
};

inline double degrees_to_radians(double deg) { return deg * std::numbers::pi / 180.0; }

/// Waves at the given steering angles (degrees), indexed in order.
inline std::vector<PlaneWave> plane_waves(const std::vector<double>& angles_deg, const ArrayGeometry& geom) {
    std::vector<PlaneWave> out;
    for (std::size_t i = 0; i < angles_deg.size(); ++i) {
        out.push_back(PlaneWave::steered(degrees_to_radians(angles_deg[i]), geom, int(i)));
    }
    return out;
}

enum class Space { BMode, Channel };

inline const char* space_name(Space s) { return s == Space::BMode ? "BMODE" : "CHANNEL"; }

inline Space parse_space(const std::string& s) {
    if (s == "BMODE") return Space::BMode;
    if (s == "CHANNEL") return Space::Channel;
    throw ArgumentError("unknown coordinate space: " + s);
}

/// One localization. BMODE: (y, z) in meters. CHANNEL: y in element
/// index units and z in samples.
struct LocPoint {
    double y = 0.0;
    double z = 0.0;
    double confidence = 1.0;
    int wave_index = -1;
    int frame_id = 0;
};

struct PointSet {
    Space space = Space::BMode;
    std::vector<LocPoint> points;

    [[nodiscard]] std::size_t size() const { return points.size(); }
    [[nodiscard]] bool empty() const { return points.empty(); }

    void validate() const {
        for (const auto& p : points) {
            if (!std::isfinite(p.y) || !std::isfinite(p.z)) throw NumericError("PointSet: non-finite coordinate");
        }
    }
};

/// Axis-aligned sampling region for calibration draws (meters).
struct ImagingRegion {
    double y_min = 0.0, y_max = 0.0;
    double z_min = 1e-3, z_max = 15e-3;

    /// Lateral span of the array x depth [1 mm, 15 mm].
    static ImagingRegion for_array(const ArrayGeometry& geom, double z_min = 1e-3, double z_max = 15e-3) {
        return {geom.elements.front().y, geom.elements.back().y, z_min, z_max};
    }
};

/// Per-element channel-space sample depth of a B-mode point:
/// (f_s / c) (||p - v_s|| + ||p - x_k|| - s).
inline std::vector<double> project_to_channels(const Position& p, const ArrayGeometry& geom, const PlaneWave& wave,
                                               const AcquisitionParams& acq) {
    if (!(p.z > 0.0)) throw ArgumentError("project_to_channels: point must lie below the array (z > 0)");
    const double scale = acq.sample_rate / acq.speed_of_sound;
    const double tx = distance(p, wave.virtual_source) - wave.travel_offset;
    std::vector<double> out(geom.size());
    for (std::size_t k = 0; k < geom.size(); ++k) {
        const double d = scale * (tx + distance(p, geom.elements[k]));
        if (d < 0.0) throw GeometryError("project_to_channels: negative depth, travel offset too large");
        out[k] = d;
    }
    return out;
}

enum class TipMode {
    Discrete,   ///< argmin element index and its sampled depth
    Parabolic,  ///< vertex of the parabola through the minimum and its two neighbours
};

/// Wavefront apex in channel space: y in element index units, z in samples.
struct Tip {
    double y = 0.0;
    double z = 0.0;
    std::size_t element = 0;  ///< discrete argmin (lower index on ties)
};

/// Apex of a per-element depth curve.
///
/// The discrete argmin breaks ties toward the lower element index. In
/// parabolic mode an interior minimum is refined to the vertex of the
/// three-point parabola, offset clamped to +-0.5 element; minima at the
/// array boundary are returned unrefined.
inline Tip wavefront_tip(const std::vector<double>& depths, TipMode mode = TipMode::Parabolic) {
    if (depths.empty()) throw ArgumentError("wavefront_tip: no projections");
    std::size_t k = 0;
    for (std::size_t i = 1; i < depths.size(); ++i) {
        if (depths[i] < depths[k]) k = i;
    }
    Tip tip{double(k), depths[k], k};
    if (mode == TipMode::Discrete || k == 0 || k + 1 == depths.size()) return tip;
    const double l = depths[k - 1], c = depths[k], r = depths[k + 1];
    const double curvature = l - 2.0 * c + r;
    if (!(curvature > 0.0)) return tip;
    const double delta = std::clamp(0.5 * (l - r) / curvature, -0.5, 0.5);
    tip.y = double(k) + delta;
    tip.z = c - 0.25 * (l - r) * delta;
    return tip;
}

/// Projection followed by tip extraction.
inline Tip channel_tip(const Position& p, const ArrayGeometry& geom, const PlaneWave& wave, const AcquisitionParams& acq,
                       TipMode mode = TipMode::Parabolic) {
    return wavefront_tip(project_to_channels(p, geom, wave, acq), mode);
}

/// Channel-to-B-mode affine map [y z]^T = A [y* z* 1]^T.
struct AffineMap {
    // a11 a12 a13 / a21 a22 a23
    std::array<double, 6> a{1, 0, 0, 0, 1, 0};
    int wave_index = 0;
    double mean_residual = 0.0;  // meters, over the calibration draw

    [[nodiscard]] double det() const { return a[0] * a[4] - a[1] * a[3]; }

    [[nodiscard]] std::pair<double, double> map(double ys, double zs) const {
        return {a[0] * ys + a[1] * zs + a[2], a[3] * ys + a[4] * zs + a[5]};
    }

    void validate() const {
        if (!(std::abs(det()) > 1e-12)) throw GeometryError("AffineMap: singular scaling block");
    }
};

inline PointSet apply_affine(const AffineMap& A, const PointSet& pts) {
    if (pts.space != Space::Channel) throw UsageError("apply_affine: expects CHANNEL points");
    PointSet out{Space::BMode, {}};
    out.points.reserve(pts.size());
    for (const auto& p : pts.points) {
        auto [y, z] = A.map(p.y, p.z);
        LocPoint q = p;
        q.y = y;
        q.z = z;
        out.points.push_back(q);
    }
    return out;
}

struct CalibrationSample {
    Position bmode;
    Tip tip;
};

/// Draw `n` uniform B-mode points in `region` and project each to its tip.
inline std::vector<CalibrationSample> draw_calibration_points(const ArrayGeometry& geom, const PlaneWave& wave,
                                                              const AcquisitionParams& acq, const ImagingRegion& region,
                                                              std::size_t n, std::uint64_t seed,
                                                              TipMode mode = TipMode::Parabolic) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uy(region.y_min, region.y_max), uz(region.z_min, region.z_max);
    std::vector<CalibrationSample> out(n);
    for (auto& s : out) {
        s.bmode.y = uy(rng);
        s.bmode.z = uz(rng);
        s.tip = channel_tip(s.bmode, geom, wave, acq, mode);
    }
    return out;
}

/// Least-squares affine fit of tip -> B-mode pairs via Levenberg-Marquardt.
inline AffineMap fit_affine_to(const std::vector<std::pair<Tip, Position>>& pairs, int wave_index) {
    if (pairs.size() < 3) throw CalibrationError("fit_affine: need at least 3 point pairs");
    const auto n = static_cast<Eigen::Index>(pairs.size());
    Mat J = Mat::Zero(2 * n, 6);
    Vec target(2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& [tip, p] = pairs[std::size_t(i)];
        J(2 * i, 0) = tip.y;
        J(2 * i, 1) = tip.z;
        J(2 * i, 2) = 1.0;
        J(2 * i + 1, 3) = tip.y;
        J(2 * i + 1, 4) = tip.z;
        J(2 * i + 1, 5) = 1.0;
        target[2 * i] = p.y;
        target[2 * i + 1] = p.z;
    }
    const auto residual = [&](const Vec& a) -> Vec { return J * a - target; };
    const auto jacobian = [&](const Vec&) -> Mat { return J; };
    LmOptions opt;
    opt.max_iter = 50;
    opt.tol = 1e-14;
    LmReport rep;
    try {
        rep = lm_solve(residual, jacobian, Vec::Zero(6), opt);
    } catch (const ConvergenceError& e) {
        throw CalibrationError(std::string("fit_affine: ") + e.what());
    }
    AffineMap A;
    for (int i = 0; i < 6; ++i) A.a[std::size_t(i)] = rep.params[i];
    A.wave_index = wave_index;
    double sum = 0.0;
    for (const auto& [tip, p] : pairs) {
        auto [y, z] = A.map(tip.y, tip.z);
        sum += std::hypot(y - p.y, z - p.z);
    }
    A.mean_residual = sum / double(pairs.size());
    if (!(std::abs(A.det()) > 1e-12)) throw CalibrationError("fit_affine: singular fit");
    return A;
}

/// Calibrate the channel-to-B-mode map of one plane wave from `n` random points.
inline AffineMap fit_affine(const ArrayGeometry& geom, const PlaneWave& wave, const AcquisitionParams& acq,
                            std::size_t n = 1000, std::uint64_t seed = 0, std::optional<ImagingRegion> region = {},
                            TipMode mode = TipMode::Parabolic) {
    const ImagingRegion reg = region.value_or(ImagingRegion::for_array(geom));
    std::vector<std::pair<Tip, Position>> pairs;
    for (const auto& s : draw_calibration_points(geom, wave, acq, reg, n, seed, mode)) pairs.emplace_back(s.tip, s.bmode);
    return fit_affine_to(pairs, wave.index);
}

/// Mean ||A p* - p|| over a fresh draw.
inline double mean_reprojection_error(const AffineMap& A, const ArrayGeometry& geom, const PlaneWave& wave,
                                      const AcquisitionParams& acq, std::size_t n, std::uint64_t seed,
                                      std::optional<ImagingRegion> region = {}, TipMode mode = TipMode::Parabolic) {
    const ImagingRegion reg = region.value_or(ImagingRegion::for_array(geom));
    double sum = 0.0;
    for (const auto& s : draw_calibration_points(geom, wave, acq, reg, n, seed, mode)) {
        auto [y, z] = A.map(s.tip.y, s.tip.z);
        sum += std::hypot(y - s.bmode.y, z - s.bmode.z);
    }
    return sum / double(n);
}

/// 8-line text form: six coefficients, wave index, mean residual.
inline void save_affine(const std::filesystem::path& path, const AffineMap& A) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write affine map: " + path.string());
    os << std::setprecision(17);
    for (double v : A.a) os << v << '\n';
    os << A.wave_index << '\n' << A.mean_residual << '\n';
}

inline AffineMap parse_affine(std::istream& is) {
    AffineMap A;
    for (auto& v : A.a) {
        if (!(is >> v)) throw IoError("affine map: expected 6 coefficients");
    }
    double wave = 0.0;
    if (!(is >> wave >> A.mean_residual)) throw IoError("affine map: expected wave index and residual");
    A.wave_index = static_cast<int>(wave);
    return A;
}

inline AffineMap load_affine(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read affine map: " + path.string());
    return parse_affine(is);
}

/// G = round((r_f - 1) / (k1 - 1)).
inline int estimate_semiglobal_scale(int width_samples, int k1) {
    if (k1 <= 1 || width_samples < k1) throw ArgumentError("estimate_semiglobal_scale: need width >= k1 > 1");
    return static_cast<int>(std::lround(double(width_samples - 1) / double(k1 - 1)));
}

/// Contiguous run of samples around the unique global peak whose magnitude
/// is at least threshold * peak.
inline int measure_wavefront_width(const std::vector<double>& profile, double threshold = 0.5) {
    if (profile.empty()) throw MeasurementError("measure_wavefront_width: empty profile");
    std::size_t k = 0;
    for (std::size_t i = 1; i < profile.size(); ++i) {
        if (std::abs(profile[i]) > std::abs(profile[k])) k = i;
    }
    const double peak = std::abs(profile[k]);
    std::size_t ties = 0;
    for (double v : profile) ties += std::abs(v) == peak ? 1 : 0;
    if (peak == 0.0 || ties > 1) throw MeasurementError("measure_wavefront_width: profile has no unique maximum");
    const double level = threshold * peak;
    std::size_t lo = k, hi = k;
    while (lo > 0 && std::abs(profile[lo - 1]) >= level) --lo;
    while (hi + 1 < profile.size() && std::abs(profile[hi + 1]) >= level) ++hi;
    return static_cast<int>(hi - lo + 1);
}

}  // namespace rfulm
