#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rfulm/geometry.hpp"
#include "rfulm/numerics/tensor.hpp"
#include "rfulm/parallel.hpp"
#include "rfulm/random.hpp"

namespace rfulm {

struct Scatterer {
    Position position;
    double amplitude = 1.0;
};

struct Scene {
    std::vector<Scatterer> scatterers;
    int frame_index = 0;

    static constexpr std::size_t kMaxScatterers = 32;

    void validate() const {
        if (scatterers.size() > kMaxScatterers) throw ArgumentError("Scene: more than 32 scatterers");
        for (const auto& s : scatterers) {
            if (!std::isfinite(s.position.y) || !(s.position.z > 0.0)) {
                throw ArgumentError("Scene: scatterer outside the imaging half-space");
            }
            if (!(s.amplitude >= 0.2 && s.amplitude <= 1.0)) throw ArgumentError("Scene: amplitude outside [0.2, 1]");
        }
    }
};

/// One transmit event: planes 0/1 are I/Q, rows are channels, cols are samples.
struct IQFrame {
    TensorD data;
    int wave_index = 0;
    double peak = 0.0;  // max |value| before normalization, 0 if nothing was scaled
};

/// Gaussian pulse envelope width from the relative bandwidth.
inline double pulse_sigma_t(const AcquisitionParams& acq) {
    return std::sqrt(2.0 * std::log(2.0)) / (std::numbers::pi * acq.relative_bandwidth * acq.center_frequency);
}

/// Raw RF channel data (K x samples*decimation) at the RF sample rate.
///
/// Each scatterer contributes amp / sqrt(path) * exp(-dt^2 / 2 sigma_t^2) cos(2 pi f_c dt)
/// around the time of flight given by project_to_channels.
inline TensorD simulate_channels_rf(const Scene& scene, const ArrayGeometry& geom, const PlaneWave& wave,
                                    const AcquisitionParams& acq) {
    scene.validate();
    acq.validate();
    const std::size_t K = geom.size();
    const std::size_t n_rf = acq.samples * acq.rf_decimation;
    TensorD rf({K, n_rf});
    const double fs_rf = acq.rf_sample_rate();
    const double sig = pulse_sigma_t(acq);
    const double half = 6.0 * sig * fs_rf;
    const double w_c = 2.0 * std::numbers::pi * acq.center_frequency;
    for (const auto& s : scene.scatterers) {
        const auto depth = project_to_channels(s.position, geom, wave, acq);
        for (std::size_t k = 0; k < K; ++k) {
            const double tau = depth[k] / acq.sample_rate;
            const double path = depth[k] / acq.samples_per_meter();
            const double amp = s.amplitude / std::sqrt(std::max(path, 1e-6));
            const double centre = tau * fs_rf;
            const auto lo = static_cast<std::ptrdiff_t>(std::ceil(centre - half));
            const auto hi = static_cast<std::ptrdiff_t>(std::floor(centre + half));
            double* row = rf.data() + k * n_rf;
            for (std::ptrdiff_t n = std::max<std::ptrdiff_t>(lo, 0); n <= hi && n < std::ptrdiff_t(n_rf); ++n) {
                const double dt = double(n) / fs_rf - tau;
                row[n] += amp * std::exp(-dt * dt / (2.0 * sig * sig)) * std::cos(w_c * dt);
            }
        }
    }
    return rf;
}

/// Length of each moving-average stage used after mixing: the largest odd
/// length not exceeding fs_rf / (f_c * BW), at least 3.
inline std::size_t demod_filter_length(const AcquisitionParams& acq) {
    const double span = acq.rf_sample_rate() / (acq.center_frequency * acq.relative_bandwidth);
    auto L = static_cast<std::size_t>(std::floor(span));
    if (L % 2 == 0) --L;
    return std::max<std::size_t>(3, L);
}

/// I/Q demodulation: mix with exp(-j 2 pi f_c t), low-pass with a cascade of
/// three centered moving averages, keep every `decimation`-th sample.
///
/// Works under bandpass sampling (f_s_rf < 2 f_c) as long as the mixing
/// image does not fold onto baseband.
inline TensorD demodulate_iq(const TensorD& rf, const AcquisitionParams& acq, std::size_t decimation) {
    if (rf.rank() != 2) throw DimensionError("demodulate_iq: expects channels x samples");
    const std::size_t U = rf.dim(0), n_rf = rf.dim(1);
    if (n_rf < 4) throw ArgumentError("demodulate_iq: need at least 4 RF samples");
    if (decimation == 0 || n_rf % decimation != 0) throw ArgumentError("demodulate_iq: decimation must divide the RF length");
    const std::size_t V = n_rf / decimation;
    const double fs_rf = acq.sample_rate * double(decimation);
    const double w = 2.0 * std::numbers::pi * acq.center_frequency / fs_rf;
    const std::size_t L = demod_filter_length(acq);
    const std::size_t h = L / 2;
    std::vector<double> cosv(n_rf), sinv(n_rf);
    for (std::size_t n = 0; n < n_rf; ++n) {
        cosv[n] = std::cos(w * double(n));
        sinv[n] = std::sin(w * double(n));
    }
    TensorD out({2, U, V});
    std::vector<double> a(n_rf), b(n_rf), prefix(n_rf + 1);
    const auto box = [&](std::vector<double>& x) {
        prefix[0] = 0.0;
        for (std::size_t n = 0; n < n_rf; ++n) prefix[n + 1] = prefix[n] + x[n];
        for (std::size_t n = 0; n < n_rf; ++n) {
            const std::size_t lo = n >= h ? n - h : 0;
            const std::size_t hi = std::min(n_rf, n + h + 1);
            x[n] = (prefix[hi] - prefix[lo]) / double(L);
        }
    };
    for (std::size_t u = 0; u < U; ++u) {
        const double* row = rf.data() + u * n_rf;
        for (std::size_t n = 0; n < n_rf; ++n) {
            a[n] = row[n] * cosv[n];
            b[n] = -row[n] * sinv[n];
        }
        for (int stage = 0; stage < 3; ++stage) {
            box(a);
            box(b);
        }
        for (std::size_t v = 0; v < V; ++v) {
            out(0, u, v) = a[v * decimation];
            out(1, u, v) = b[v * decimation];
        }
    }
    return out;
}

/// Demodulated frame before noise and normalization; linear in the scene.
inline TensorD simulate_iq_raw(const Scene& scene, const ArrayGeometry& geom, const PlaneWave& wave,
                               const AcquisitionParams& acq) {
    return demodulate_iq(simulate_channels_rf(scene, geom, wave, acq), acq, acq.rf_decimation);
}

/// Mean of squared values over the whole tensor.
inline double mean_power(const TensorD& t) { return energy(t) / double(t.size()); }

/// Add white Gaussian noise of power mean_power * 10^(-snr/10).
/// An infinite SNR leaves the frame unchanged. When the frame carries no
/// signal, `reference_power` stands in for its power.
inline void add_clutter_noise(TensorD& frame, double snr_db, std::uint64_t seed, double reference_power = 0.0) {
    if (frame.empty()) throw DimensionError("add_clutter_noise: empty frame");
    if (std::isinf(snr_db) && snr_db > 0) return;
    double p = mean_power(frame);
    if (p == 0.0) p = reference_power;
    const double sd = std::sqrt(p * std::pow(10.0, -snr_db / 10.0));
    if (sd == 0.0) return;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sd);
    for (auto& v : frame.values()) v += n(rng);
}

/// Divide by max |value| so the frame spans [-1, 1]; returns the divisor.
inline double peak_normalize(TensorD& frame) {
    const double m = frame.max_abs();
    if (m > 0.0) {
        for (auto& v : frame.values()) v /= m;
    }
    return m;
}

/// Full frame: simulate, optionally add noise at `snr_db`, peak-normalize.
inline IQFrame simulate_rf(const Scene& scene, const ArrayGeometry& geom, const PlaneWave& wave,
                           const AcquisitionParams& acq, std::optional<double> snr_db = {}, std::uint64_t seed = 0) {
    IQFrame f;
    f.data = simulate_iq_raw(scene, geom, wave, acq);
    f.wave_index = wave.index;
    if (snr_db) add_clutter_noise(f.data, *snr_db, seed, 1.0);
    f.peak = peak_normalize(f.data);
    return f;
}

/// Per-sample maximum of the I/Q envelope over all channels. Its run above
/// half maximum is the axial extent of a wavefront.
inline std::vector<double> axial_envelope_profile(const TensorD& iq) {
    if (iq.rank() != 3 || iq.dim(0) != 2) throw DimensionError("axial_envelope_profile: expects 2 x U x V");
    const std::size_t U = iq.dim(1), V = iq.dim(2);
    std::vector<double> out(V, 0.0);
    for (std::size_t u = 0; u < U; ++u)
        for (std::size_t v = 0; v < V; ++v) out[v] = std::max(out[v], std::hypot(iq(0, u, v), iq(1, u, v)));
    return out;
}

// ---------------------------------------------------------------- labels

struct LabelMap {
    TensorD map;                 // (R*U) x (R*V), ones at tips
    std::vector<std::array<std::size_t, 2>> ones;  // (row, col) of each one, first occurrence order
    std::size_t skipped = 0;     // tips falling outside the frame
};

/// Binary map at scale R with a one at round(R * tip) per scatterer.
inline LabelMap make_label_map(const Scene& scene, const ArrayGeometry& geom, const PlaneWave& wave,
                               const AcquisitionParams& acq, int R) {
    if (R < 1) throw ArgumentError("make_label_map: R must be >= 1");
    const std::size_t rows = std::size_t(R) * geom.size(), cols = std::size_t(R) * acq.samples;
    LabelMap out{TensorD({rows, cols}), {}, 0};
    for (const auto& s : scene.scatterers) {
        const Tip t = channel_tip(s.position, geom, wave, acq);
        const double r = std::round(double(R) * t.y), c = std::round(double(R) * t.z);
        if (r < 0 || c < 0 || r >= double(rows) || c >= double(cols)) {
            ++out.skipped;
            continue;
        }
        double& cell = out.map(std::size_t(r), std::size_t(c));
        if (cell == 0.0) out.ones.push_back({std::size_t(r), std::size_t(c)});
        cell = 1.0;
    }
    return out;
}

/// Labels are stored sparsely as an (n+1) x 2 tensor: row 0 holds the map
/// extents, the remaining rows the (row, col) of every one.
inline void save_label(const std::filesystem::path& path, const LabelMap& label) {
    TensorF t({label.ones.size() + 1, 2});
    t(0, 0) = float(label.map.dim(0));
    t(0, 1) = float(label.map.dim(1));
    for (std::size_t i = 0; i < label.ones.size(); ++i) {
        t(i + 1, 0) = float(label.ones[i][0]);
        t(i + 1, 1) = float(label.ones[i][1]);
    }
    rtnsr::save(path, t);
}

inline TensorD load_label_map(const std::filesystem::path& path) {
    const TensorD t = rtnsr::load<double>(path);
    if (t.rank() != 2 || t.dim(1) != 2) throw IoError("label file: expected an (n+1) x 2 tensor: " + path.string());
    TensorD map({std::size_t(t(0, 0)), std::size_t(t(0, 1))});
    for (std::size_t i = 1; i < t.dim(0); ++i) map(std::size_t(t(i, 0)), std::size_t(t(i, 1))) = 1.0;
    return map;
}

// --------------------------------------------------------------- dataset

enum class Flow { Uniform, Poiseuille };

inline Flow parse_flow(const std::string& s) {
    if (s == "uniform") return Flow::Uniform;
    if (s == "poiseuille") return Flow::Poiseuille;
    throw ArgumentError("unknown flow model: " + s);
}

struct DatasetConfig {
    std::size_t n_frames = 1;
    int min_scatterers = 1;
    int max_scatterers = 10;
    std::vector<double> angles_deg{-5.0, 0.0, 5.0};
    int R = 8;
    std::uint64_t seed = 0;
    std::optional<double> snr_db;
    ArrayGeometry geom = ArrayGeometry::linear();
    AcquisitionParams acq;
    std::optional<ImagingRegion> region;
    bool store_f64 = false;
    Flow flow = Flow::Uniform;
    // Poiseuille tubes: straight, parabolic velocity profile across the radius.
    int tubes = 3;
    double tube_radius = 0.25e-3;
    double peak_velocity = 20e-3;  // m/s on the tube axis
    double frame_interval = 1e-3;  // s
    int jobs = 0;

    [[nodiscard]] ImagingRegion imaging_region() const { return region.value_or(ImagingRegion::for_array(geom)); }

    void validate() const {
        if (n_frames < 1) throw ArgumentError("dataset: n_frames must be >= 1");
        if (min_scatterers < 0 || max_scatterers < min_scatterers || max_scatterers > int(Scene::kMaxScatterers)) {
            throw ArgumentError("dataset: scatterer range must satisfy 0 <= min <= max <= 32");
        }
        if (angles_deg.empty()) throw ArgumentError("dataset: at least one wave angle");
        if (R < 1) throw ArgumentError("dataset: R must be >= 1");
        geom.validate();
        acq.validate();
        const auto reg = imaging_region();
        if (!(reg.y_max > reg.y_min) || !(reg.z_max > reg.z_min) || !(reg.z_min > 0)) {
            throw ArgumentError("dataset: empty imaging region");
        }
    }
};

struct ManifestEntry {
    int frame_id = 0;
    int wave_index = 0;
    std::string rf_path;     // relative to the dataset directory
    std::string label_path;  // relative to the dataset directory
    int n_scatterers = 0;
    std::uint64_t seed = 0;
};

struct Manifest {
    std::filesystem::path dir;
    std::map<std::string, std::string> meta;
    std::vector<ManifestEntry> entries;

    [[nodiscard]] double meta_double(const std::string& key) const {
        auto it = meta.find(key);
        if (it == meta.end()) throw IoError("manifest: missing header key " + key);
        return std::stod(it->second);
    }
    [[nodiscard]] ArrayGeometry geometry() const {
        return ArrayGeometry::linear(std::size_t(meta_double("elements")), meta_double("pitch_m"));
    }
    [[nodiscard]] AcquisitionParams acquisition() const {
        AcquisitionParams a;
        a.speed_of_sound = meta_double("speed_of_sound");
        a.sample_rate = meta_double("sample_rate");
        a.center_frequency = meta_double("center_frequency");
        a.relative_bandwidth = meta_double("relative_bandwidth");
        a.samples = std::size_t(meta_double("samples"));
        a.rf_decimation = std::size_t(meta_double("rf_decimation"));
        return a;
    }
    [[nodiscard]] std::vector<double> angles_deg() const {
        std::vector<double> out;
        std::istringstream is(meta.at("angles_deg"));
        for (std::string tok; std::getline(is, tok, ',');) out.push_back(std::stod(tok));
        return out;
    }
    [[nodiscard]] int scale() const { return int(meta_double("R")); }
};

inline std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& m) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write manifest: " + path.string());
    for (const auto& [k, v] : m.meta) os << "# " << k << '\t' << v << '\n';
    os << "frame_id\twave_index\trf_path\tlabel_path\tn_scatterers\tseed\n";
    for (const auto& e : m.entries) {
        os << e.frame_id << '\t' << e.wave_index << '\t' << e.rf_path << '\t' << e.label_path << '\t'
           << e.n_scatterers << '\t' << e.seed << '\n';
    }
}

inline Manifest read_manifest(const std::filesystem::path& dir_or_file) {
    const auto path = std::filesystem::is_directory(dir_or_file) ? dir_or_file / "manifest.tsv" : dir_or_file;
    std::ifstream is(path);
    if (!is) throw IoError("cannot read manifest: " + path.string());
    Manifest m;
    m.dir = path.parent_path();
    bool header_seen = false;
    int lineno = 0;
    for (std::string line; std::getline(is, line);) {
        ++lineno;
        if (line.empty()) continue;
        if (line.rfind("# ", 0) == 0) {
            const auto tab = line.find('\t');
            if (tab != std::string::npos) m.meta[line.substr(2, tab - 2)] = line.substr(tab + 1);
            continue;
        }
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        std::istringstream ls(line);
        ManifestEntry e;
        if (!(ls >> e.frame_id >> e.wave_index >> e.rf_path >> e.label_path >> e.n_scatterers >> e.seed)) {
            throw IoError("manifest line " + std::to_string(lineno) + ": expected 6 columns");
        }
        m.entries.push_back(e);
    }
    return m;
}

struct GtPoint {
    int frame_id = 0;
    int wave_index = 0;
    double y_m = 0.0, z_m = 0.0;
    double y_star = 0.0, z_star = 0.0;
};

inline std::vector<GtPoint> read_gt_points(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read ground truth: " + path.string());
    std::vector<GtPoint> out;
    std::string line;
    std::getline(is, line);
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        for (auto& ch : line)
            if (ch == ',') ch = ' ';
        std::istringstream ls(line);
        GtPoint g;
        if (!(ls >> g.frame_id >> g.wave_index >> g.y_m >> g.z_m >> g.y_star >> g.z_star)) {
            throw IoError("gt_points.csv line " + std::to_string(lineno) + ": expected 6 columns");
        }
        out.push_back(g);
    }
    return out;
}

/// Tube seeds for the Poiseuille flow model; fixed for the whole dataset.
struct Tube {
    Position start;
    double angle = 0.0;  // direction in the (y, z) plane
    double length = 0.0;
    std::vector<std::pair<double, double>> particles;  // (axial position at t=0, radial offset)
};

inline std::vector<Tube> make_tubes(const DatasetConfig& cfg) {
    const auto reg = cfg.imaging_region();
    std::mt19937_64 rng(derive_seed(cfg.seed, {0x7475626573ULL}));
    std::uniform_real_distribution<double> uy(reg.y_min, reg.y_max), uz(reg.z_min, reg.z_max);
    std::uniform_real_distribution<double> ua(0.0, std::numbers::pi), u01(0.0, 1.0);
    std::vector<Tube> tubes(std::size_t(std::max(0, cfg.tubes)));
    const int per_tube = std::max(1, cfg.max_scatterers / std::max(1, cfg.tubes));
    for (auto& t : tubes) {
        const Position c{uy(rng), uz(rng)};
        t.angle = ua(rng);
        // clip the infinite line through c to the region
        const double dy = std::cos(t.angle), dz = std::sin(t.angle);
        double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
        const auto clip = [&](double p, double d, double a, double b) {
            if (std::abs(d) < 1e-12) return;
            double t0 = (a - p) / d, t1 = (b - p) / d;
            if (t0 > t1) std::swap(t0, t1);
            lo = std::max(lo, t0);
            hi = std::min(hi, t1);
        };
        clip(c.y, dy, reg.y_min, reg.y_max);
        clip(c.z, dz, reg.z_min, reg.z_max);
        t.start = {c.y + lo * dy, c.z + lo * dz};
        t.length = hi - lo;
        for (int i = 0; i < per_tube; ++i) {
            t.particles.emplace_back(u01(rng) * t.length, (2.0 * u01(rng) - 1.0) * cfg.tube_radius);
        }
    }
    return tubes;
}

/// Scene for one frame: uniform random draw, or particles advected along tubes.
inline Scene draw_scene(const DatasetConfig& cfg, int frame_id, const std::vector<Tube>& tubes) {
    const auto reg = cfg.imaging_region();
    std::mt19937_64 rng(derive_seed(cfg.seed, {0x7363656e65ULL, std::uint64_t(frame_id)}));
    std::uniform_real_distribution<double> ua(0.2, 1.0);
    Scene scene;
    scene.frame_index = frame_id;
    if (cfg.flow == Flow::Uniform) {
        std::uniform_int_distribution<int> un(cfg.min_scatterers, cfg.max_scatterers);
        std::uniform_real_distribution<double> uy(reg.y_min, reg.y_max), uz(reg.z_min, reg.z_max);
        const int n = un(rng);
        for (int i = 0; i < n; ++i) {
            const double y = uy(rng), z = uz(rng);
            scene.scatterers.push_back({{y, z}, ua(rng)});
        }
        return scene;
    }
    const double t = double(frame_id) * cfg.frame_interval;
    for (const auto& tube : tubes) {
        const double dy = std::cos(tube.angle), dz = std::sin(tube.angle);
        for (const auto& [s0, r] : tube.particles) {
            const double v = cfg.peak_velocity * (1.0 - (r / cfg.tube_radius) * (r / cfg.tube_radius));
            const double s = std::fmod(s0 + v * t, tube.length);
            const Position p{tube.start.y + s * dy - r * dz, tube.start.z + s * dz + r * dy};
            if (p.y < reg.y_min || p.y > reg.y_max || p.z < reg.z_min || p.z > reg.z_max) continue;
            if (scene.scatterers.size() < Scene::kMaxScatterers) scene.scatterers.push_back({p, ua(rng)});
        }
    }
    return scene;
}

/// Simulate `n_frames` scenes under every configured wave and write frames,
/// sparse labels, manifest.tsv and gt_points.csv into `out_dir`.
inline Manifest generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir) {
    cfg.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "frames", ec);
    std::filesystem::create_directories(out_dir / "labels", ec);
    if (ec || !std::filesystem::is_directory(out_dir / "frames")) {
        throw IoError("cannot create dataset directory: " + out_dir.string());
    }
    const auto waves = plane_waves(cfg.angles_deg, cfg.geom);
    const auto tubes = cfg.flow == Flow::Poiseuille ? make_tubes(cfg) : std::vector<Tube>{};
    const std::size_t W = waves.size();

    std::vector<ManifestEntry> entries(cfg.n_frames * W);
    std::vector<std::string> gt_rows(cfg.n_frames * W);
    parallel_for(cfg.n_frames, cfg.jobs, [&](std::size_t f) {
        const Scene scene = draw_scene(cfg, int(f), tubes);
        for (std::size_t w = 0; w < W; ++w) {
            const std::uint64_t seed = derive_seed(cfg.seed, {0x6e6f697365ULL, f, w});
            const IQFrame frame = simulate_rf(scene, cfg.geom, waves[w], cfg.acq, cfg.snr_db, seed);
            const LabelMap label = make_label_map(scene, cfg.geom, waves[w], cfg.acq, cfg.R);
            char stem[64];
            std::snprintf(stem, sizeof stem, "f%06zu_w%zu.rtnsr", f, w);
            ManifestEntry& e = entries[f * W + w];
            e.frame_id = int(f);
            e.wave_index = int(w);
            e.rf_path = std::string("frames/") + stem;
            e.label_path = std::string("labels/") + stem;
            e.n_scatterers = int(scene.scatterers.size());
            e.seed = seed;
            if (cfg.store_f64) rtnsr::save(out_dir / e.rf_path, frame.data);
            else rtnsr::save(out_dir / e.rf_path, frame.data.cast<float>());
            save_label(out_dir / e.label_path, label);
            std::ostringstream rows;
            rows << std::setprecision(17);
            for (const auto& s : scene.scatterers) {
                const Tip t = channel_tip(s.position, cfg.geom, waves[w], cfg.acq);
                rows << f << ',' << w << ',' << s.position.y << ',' << s.position.z << ',' << t.y << ',' << t.z << '\n';
            }
            gt_rows[f * W + w] = rows.str();
        }
    });

    Manifest m;
    m.dir = out_dir;
    m.entries = std::move(entries);
    std::ostringstream angles;
    for (std::size_t i = 0; i < cfg.angles_deg.size(); ++i) angles << (i ? "," : "") << format_double(cfg.angles_deg[i]);
    m.meta = {
        {"elements", std::to_string(cfg.geom.size())},
        {"pitch_m", format_double(cfg.geom.pitch)},
        {"speed_of_sound", format_double(cfg.acq.speed_of_sound)},
        {"sample_rate", format_double(cfg.acq.sample_rate)},
        {"center_frequency", format_double(cfg.acq.center_frequency)},
        {"relative_bandwidth", format_double(cfg.acq.relative_bandwidth)},
        {"samples", std::to_string(cfg.acq.samples)},
        {"rf_decimation", std::to_string(cfg.acq.rf_decimation)},
        {"angles_deg", angles.str()},
        {"R", std::to_string(cfg.R)},
        {"snr_db", cfg.snr_db ? format_double(*cfg.snr_db) : "inf"},
        {"flow", cfg.flow == Flow::Uniform ? "uniform" : "poiseuille"},
        {"spreading", "inverse_sqrt_path"},
        {"pulse", "gaussian_cosine"},
        {"label_format", "sparse_rows_cols"},
        {"seed", std::to_string(cfg.seed)},
    };
    write_manifest(out_dir / "manifest.tsv", m);
    std::ofstream gt(out_dir / "gt_points.csv");
    if (!gt) throw IoError("cannot write gt_points.csv");
    gt << "frame_id,wave_index,y_m,z_m,y_star,z_star\n";
    for (const auto& r : gt_rows) gt << r;
    return m;
}

/// Load one manifest frame as a 2 x U x V tensor.
template <typename T = double>
Tensor<T> load_frame(const Manifest& m, const ManifestEntry& e) {
    return rtnsr::load<T>(m.dir / e.rf_path);
}

}  // namespace rfulm
