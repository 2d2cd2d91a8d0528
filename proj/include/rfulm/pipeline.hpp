#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rfulm/beamform.hpp"
#include "rfulm/evaluate.hpp"
#include "rfulm/geometry.hpp"
#include "rfulm/localize.hpp"
#include "rfulm/network.hpp"
#include "rfulm/signal.hpp"
#include "rfulm/simulator.hpp"

namespace rfulm {

// --------------------------------------------------------------- calibration

inline std::filesystem::path affine_path(const std::filesystem::path& dir, std::size_t wave) {
    return dir / ("affine_w" + std::to_string(wave) + ".txt");
}

/// One affine map per dataset wave, fitted on `n` random points.
inline std::vector<AffineMap> calibrate_dataset(const Manifest& m, std::size_t n = 1000, std::uint64_t seed = 0) {
    const auto geom = m.geometry();
    const auto acq = m.acquisition();
    const auto waves = plane_waves(m.angles_deg(), geom);
    std::vector<AffineMap> out;
    for (std::size_t w = 0; w < waves.size(); ++w) {
        AffineMap A = fit_affine(geom, waves[w], acq, n, derive_seed(seed, {0x63616cULL, w}));
        A.mean_residual = mean_reprojection_error(A, geom, waves[w], acq, n, derive_seed(seed, {0x686f6c64ULL, w}));
        out.push_back(A);
    }
    return out;
}

inline void save_calibration(const std::filesystem::path& dir, const std::vector<AffineMap>& maps) {
    std::filesystem::create_directories(dir);
    for (std::size_t w = 0; w < maps.size(); ++w) save_affine(affine_path(dir, w), maps[w]);
}

inline std::vector<AffineMap> load_calibration(const std::filesystem::path& dir, std::size_t waves) {
    std::vector<AffineMap> out;
    for (std::size_t w = 0; w < waves; ++w) {
        const auto p = affine_path(dir, w);
        if (!std::filesystem::exists(p)) {
            throw UsageError("missing affine calibration " + p.string() + "; run `rfulm calibrate` on the dataset first");
        }
        out.push_back(load_affine(p));
    }
    return out;
}

// ------------------------------------------------------------- frame access

/// Manifest frames, optionally SVD-filtered per wave across frames
/// (drop_low largest components) and peak-normalized again.
inline std::vector<TensorD> load_frames(const Manifest& m, std::size_t clutter_drop_low = 0) {
    std::vector<TensorD> frames;
    for (const auto& e : m.entries) frames.push_back(load_frame<double>(m, e));
    if (clutter_drop_low == 0) return frames;
    std::map<int, std::vector<std::size_t>> by_wave;
    for (std::size_t i = 0; i < m.entries.size(); ++i) by_wave[m.entries[i].wave_index].push_back(i);
    for (const auto& [w, idx] : by_wave) {
        FrameStack stack;
        for (auto i : idx) stack.frames.push_back(frames[i]);
        stack = svd_clutter_filter(stack, clutter_drop_low, 0);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            frames[idx[k]] = std::move(stack.frames[k]);
            peak_normalize(frames[idx[k]]);
        }
    }
    return frames;
}

// --------------------------------------------------------------- SG-SPCN path

/// Heatmap peaks of one frame in channel units (element, sample).
template <typename T>
PointSet sgspcn_channel_points(const SgSpcn<T>& net, const TensorD& frame, double threshold, int window) {
    const Tensor<T> map = infer(net, frame.cast<T>());
    return rescale_points(nms_extract(map, window, threshold, Space::Channel), net.config().R);
}

/// ROC threshold over labelled samples; tolerance in heatmap pixels.
template <typename T>
double sgspcn_roc_threshold(const SgSpcn<T>& net, const std::vector<TrainingSample>& samples, double tolerance_px,
                            int window, int jobs = 1) {
    std::vector<Tensor<T>> maps(samples.size());
    std::vector<std::vector<LocPoint>> labels(samples.size());
    parallel_for(samples.size(), jobs, [&](std::size_t i) {
        maps[i] = infer(net, samples[i].frame.cast<T>());
        for (const auto& [r, c] : samples[i].label.ones) labels[i].push_back({double(r), double(c), 1.0, -1, int(i)});
    });
    return roc_threshold(maps, labels, tolerance_px, window).threshold;
}

/// Network localization of every manifest entry, mapped to B-mode by the
/// per-wave affine maps and fused across waves.
template <typename T>
PointSet localize_sgspcn(const SgSpcn<T>& net, const Manifest& m, const std::vector<TensorD>& frames,
                         const std::vector<AffineMap>& affines, double threshold, int window, double eps_wavelengths = 0.6,
                         int jobs = 1) {
    if (std::size_t(m.scale()) != net.config().R) throw UsageError("localize: checkpoint R does not match the dataset R");
    std::vector<PointSet> per(m.entries.size());
    parallel_for(m.entries.size(), jobs, [&](std::size_t i) {
        const auto& e = m.entries[i];
        if (std::size_t(e.wave_index) >= affines.size()) throw UsageError("localize: no affine map for wave " + std::to_string(e.wave_index));
        PointSet ch = sgspcn_channel_points(net, frames[i], threshold, window);
        for (auto& p : ch.points) {
            p.frame_id = e.frame_id;
            p.wave_index = e.wave_index;
        }
        per[i] = apply_affine(affines[std::size_t(e.wave_index)], ch);
    });
    PointSet all{Space::BMode, {}};
    for (auto& p : per) all.points.insert(all.points.end(), p.points.begin(), p.points.end());
    return dbscan_fuse(all, m.acquisition().wavelength(), eps_wavelengths);
}

// ------------------------------------------------------------- B-mode path

/// Angle-compounded DAS magnitude of one frame (all its waves).
inline TensorD compounded_bmode(const Manifest& m, const std::vector<TensorD>& frames, const std::vector<std::size_t>& entries,
                                const BModeGrid& grid, double f_number = 1.0) {
    const auto geom = m.geometry();
    const auto acq = m.acquisition();
    const auto waves = plane_waves(m.angles_deg(), geom);
    TensorD sum({2, grid.rows, grid.cols});
    for (auto i : entries) sum += das_beamform(frames[i], geom, waves[std::size_t(m.entries[i].wave_index)], acq, grid, f_number);
    return magnitude(sum);
}

/// Classical localization per frame; `rel_threshold` is a fraction of the
/// frame's peak magnitude. Empty images yield no points.
inline PointSet localize_classical(const Manifest& m, const std::vector<TensorD>& frames, const BModeGrid& grid,
                                   Refiner method, double rel_threshold, int jobs = 1, std::optional<int> only_wave = {}) {
    std::map<int, std::vector<std::size_t>> by_frame;
    for (std::size_t i = 0; i < m.entries.size(); ++i)
        if (!only_wave || m.entries[i].wave_index == *only_wave) by_frame[m.entries[i].frame_id].push_back(i);
    std::vector<std::pair<int, std::vector<std::size_t>>> work(by_frame.begin(), by_frame.end());
    std::vector<PointSet> per(work.size());
    parallel_for(work.size(), jobs, [&](std::size_t k) {
        const TensorD mag = compounded_bmode(m, frames, work[k].second, grid);
        const double peak = mag.max_abs();
        if (peak == 0.0) return;
        per[k] = localize_bmode(mag, grid, method, rel_threshold * peak);
        for (auto& p : per[k].points) p.frame_id = work[k].first;
    });
    PointSet out{Space::BMode, {}};
    for (auto& p : per) out.points.insert(out.points.end(), p.points.begin(), p.points.end());
    return out;
}

/// Grid used for B-mode localization and renders of a dataset.
inline BModeGrid dataset_grid(const Manifest& m, double spacing_wavelengths = 1.0) {
    const auto acq = m.acquisition();
    const double depth = double(acq.samples) * acq.speed_of_sound / (2.0 * acq.sample_rate);
    return BModeGrid::wavelength_grid(m.geometry(), acq, std::min(1e-3, 0.25 * depth), depth, spacing_wavelengths);
}

}  // namespace rfulm
