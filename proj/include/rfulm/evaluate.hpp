#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <random>
#include <vector>

#include "rfulm/beamform.hpp"
#include "rfulm/geometry.hpp"
#include "rfulm/numerics/tensor.hpp"
#include "rfulm/simulator.hpp"

namespace rfulm {

// ------------------------------------------------------------------- fusion

/// DBSCAN per frame with Euclidean radius `eps_wavelengths * wavelength`.
/// Each cluster becomes its confidence-weighted centroid (plain mean when
/// the weights sum to zero), carrying the largest member confidence; a
/// multi-wave cluster gets wave_index -1. Noise points (only possible with
/// min_pts > 1) are dropped.
inline PointSet dbscan_fuse(const PointSet& pts, double wavelength, double eps_wavelengths = 0.6, std::size_t min_pts = 1) {
    if (pts.space != Space::BMode) throw UsageError("dbscan_fuse: expects BMODE points");
    if (!(wavelength > 0.0) || !(eps_wavelengths > 0.0) || min_pts < 1) throw ArgumentError("dbscan_fuse: bad parameters");
    const double eps = eps_wavelengths * wavelength;
    std::map<int, std::vector<std::size_t>> frames;
    for (std::size_t i = 0; i < pts.size(); ++i) frames[pts.points[i].frame_id].push_back(i);
    PointSet out{Space::BMode, {}};
    for (const auto& [fid, idx] : frames) {
        const std::size_t n = idx.size();
        std::vector<std::vector<std::size_t>> nbr(n);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                const auto& p = pts.points[idx[a]];
                const auto& q = pts.points[idx[b]];
                if (std::hypot(p.y - q.y, p.z - q.z) <= eps) nbr[a].push_back(b);
            }
        std::vector<int> label(n, -2);  // -2 unvisited, -1 noise
        int next = 0;
        for (std::size_t a = 0; a < n; ++a) {
            if (label[a] != -2) continue;
            if (nbr[a].size() < min_pts) {
                label[a] = -1;
                continue;
            }
            const int cid = next++;
            label[a] = cid;
            std::vector<std::size_t> queue(nbr[a].begin(), nbr[a].end());
            for (std::size_t qi = 0; qi < queue.size(); ++qi) {
                const std::size_t b = queue[qi];
                if (label[b] == -1) label[b] = cid;  // border point
                if (label[b] != -2) continue;
                label[b] = cid;
                if (nbr[b].size() >= min_pts) queue.insert(queue.end(), nbr[b].begin(), nbr[b].end());
            }
        }
        for (int c = 0; c < next; ++c) {
            double wy = 0, wz = 0, ws = 0, my = 0, mz = 0, conf = -std::numeric_limits<double>::infinity();
            std::size_t count = 0;
            int wave = -2;
            for (std::size_t a = 0; a < n; ++a) {
                if (label[a] != c) continue;
                const auto& p = pts.points[idx[a]];
                wy += p.confidence * p.y;
                wz += p.confidence * p.z;
                ws += p.confidence;
                my += p.y;
                mz += p.z;
                conf = std::max(conf, p.confidence);
                wave = (wave == -2 || wave == p.wave_index) ? p.wave_index : -1;
                ++count;
            }
            LocPoint f{};
            f.frame_id = fid;
            f.wave_index = wave;
            f.confidence = conf;
            if (ws > 0.0) {
                f.y = wy / ws;
                f.z = wz / ws;
            } else {
                f.y = my / double(count);
                f.z = mz / double(count);
            }
            out.points.push_back(f);
        }
    }
    return out;
}

// ------------------------------------------------------------------ matching

struct MatchPair {
    std::size_t est, gt;
    double dist;
};

/// Greedy one-to-one matching in increasing-distance order, pairs with
/// distance strictly below `gate`.
inline std::vector<MatchPair> greedy_match(const std::vector<LocPoint>& est, const std::vector<LocPoint>& gt, double gate) {
    std::vector<MatchPair> cand;
    for (std::size_t i = 0; i < est.size(); ++i)
        for (std::size_t j = 0; j < gt.size(); ++j) {
            const double d = std::hypot(est[i].y - gt[j].y, est[i].z - gt[j].z);
            if (d < gate) cand.push_back({i, j, d});
        }
    std::sort(cand.begin(), cand.end(), [](const MatchPair& a, const MatchPair& b) {
        return std::tie(a.dist, a.est, a.gt) < std::tie(b.dist, b.est, b.gt);
    });
    std::vector<bool> ue(est.size()), ug(gt.size());
    std::vector<MatchPair> out;
    for (const auto& c : cand) {
        if (ue[c.est] || ug[c.gt]) continue;
        ue[c.est] = ug[c.gt] = true;
        out.push_back(c);
    }
    return out;
}

/// Minimum-cost assignment of a rectangular cost matrix (rows <= cols),
/// O(n^2 m) shortest augmenting paths. Returns the column of each row.
inline std::vector<std::size_t> hungarian(const std::vector<std::vector<double>>& cost) {
    const std::size_t n = cost.size();
    if (n == 0) return {};
    const std::size_t m = cost[0].size();
    if (m < n) throw ArgumentError("hungarian: needs rows <= cols");
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1), v(m + 1);
    std::vector<std::size_t> p(m + 1), way(m + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<std::size_t> row_to_col(n);
    for (std::size_t j = 1; j <= m; ++j)
        if (p[j]) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

/// Maximum number of gated pairs, ties broken by total distance: an
/// assignment where out-of-gate pairs cost more than any full in-gate set.
inline std::vector<MatchPair> optimal_match(const std::vector<LocPoint>& est, const std::vector<LocPoint>& gt, double gate) {
    if (est.empty() || gt.empty()) return {};
    const bool swap = est.size() > gt.size();
    const auto& rows = swap ? gt : est;
    const auto& cols = swap ? est : gt;
    const double big = gate * double(rows.size() + 1);
    std::vector<std::vector<double>> cost(rows.size(), std::vector<double>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) {
            const double d = std::hypot(rows[i].y - cols[j].y, rows[i].z - cols[j].z);
            cost[i][j] = d < gate ? d : big;
        }
    const auto a = hungarian(cost);
    std::vector<MatchPair> out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (cost[i][a[i]] >= big) continue;
        out.push_back(swap ? MatchPair{a[i], i, cost[i][a[i]]} : MatchPair{i, a[i], cost[i][a[i]]});
    }
    return out;
}

enum class Matcher { Greedy, Optimal };

struct FrameScore {
    int frame_id = 0;
    std::size_t tp = 0, fp = 0, fn = 0;
    std::optional<double> rmse;  // lambda/10 units; absent without TP
    [[nodiscard]] double jaccard() const {
        const std::size_t d = tp + fp + fn;
        return d == 0 ? 1.0 : double(tp) / double(d);
    }
};

struct ScoreReport {
    std::vector<FrameScore> frames;
    std::size_t tp = 0, fp = 0, fn = 0;
    std::optional<double> rmse_mean, rmse_std;  // over frames with TP, lambda/10 units
    std::optional<double> rmse_pooled;          // over every TP, lambda/10 units
    [[nodiscard]] double jaccard() const {
        const std::size_t d = tp + fp + fn;
        return d == 0 ? 1.0 : double(tp) / double(d);
    }
};

/// Per-frame pairing with a strict lambda/4 gate. TP add their squared
/// error to the RMSE, reported in lambda/10 units.
inline ScoreReport pair_and_score(const PointSet& est, const PointSet& gt, double wavelength,
                                  Matcher matcher = Matcher::Greedy) {
    if (est.space != Space::BMode || gt.space != Space::BMode) throw UsageError("pair_and_score: expects BMODE points");
    if (!(wavelength > 0.0)) throw ArgumentError("pair_and_score: wavelength must be > 0");
    std::map<int, std::pair<std::vector<LocPoint>, std::vector<LocPoint>>> by_frame;
    for (const auto& p : est.points) by_frame[p.frame_id].first.push_back(p);
    for (const auto& p : gt.points) by_frame[p.frame_id].second.push_back(p);
    const double gate = wavelength / 4.0, unit = wavelength / 10.0;
    ScoreReport rep;
    double pooled = 0.0;
    for (const auto& [fid, sets] : by_frame) {
        const auto& [e, g] = sets;
        const auto pairs = matcher == Matcher::Greedy ? greedy_match(e, g, gate) : optimal_match(e, g, gate);
        FrameScore fs;
        fs.frame_id = fid;
        fs.tp = pairs.size();
        fs.fp = e.size() - fs.tp;
        fs.fn = g.size() - fs.tp;
        if (!pairs.empty()) {
            double se = 0.0;
            for (const auto& p : pairs) se += (p.dist / unit) * (p.dist / unit);
            pooled += se;
            fs.rmse = std::sqrt(se / double(pairs.size()));
        }
        rep.tp += fs.tp;
        rep.fp += fs.fp;
        rep.fn += fs.fn;
        rep.frames.push_back(fs);
    }
    std::vector<double> r;
    for (const auto& f : rep.frames)
        if (f.rmse) r.push_back(*f.rmse);
    if (!r.empty()) {
        double m = 0.0;
        for (double v : r) m += v;
        m /= double(r.size());
        double s = 0.0;
        for (double v : r) s += (v - m) * (v - m);
        rep.rmse_mean = m;
        rep.rmse_std = std::sqrt(s / double(r.size()));
        rep.rmse_pooled = std::sqrt(pooled / double(rep.tp));
    }
    return rep;
}

inline void write_score_tsv(const std::filesystem::path& path, const ScoreReport& rep, std::optional<double> ssim_value = {}) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write metrics: " + path.string());
    const auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("NA"); };
    os << "frame_id\ttp\tfp\tfn\trmse_lambda10\tjaccard_pct\n";
    for (const auto& f : rep.frames) {
        os << f.frame_id << '\t' << f.tp << '\t' << f.fp << '\t' << f.fn << '\t' << opt(f.rmse) << '\t'
           << format_double(100.0 * f.jaccard()) << '\n';
    }
    os << "# summary\trmse_mean\trmse_std\trmse_pooled\tjaccard_pct\tssim_pct\n";
    os << "summary\t" << opt(rep.rmse_mean) << '\t' << opt(rep.rmse_std) << '\t' << opt(rep.rmse_pooled) << '\t'
       << format_double(100.0 * rep.jaccard()) << '\t' << (ssim_value ? format_double(100.0 * *ssim_value) : "NA") << '\n';
}

/// Ground-truth B-mode points of a dataset.
inline PointSet gt_pointset(const std::vector<GtPoint>& gt, std::optional<int> wave = std::nullopt) {
    PointSet out{Space::BMode, {}};
    std::set<std::tuple<int, double, double>> seen;
    for (const auto& g : gt) {
        if (wave && g.wave_index != *wave) continue;
        // the same scatterer is listed once per wave
        if (!wave && !seen.emplace(g.frame_id, g.y_m, g.z_m).second) continue;
        out.points.push_back({g.y_m, g.z_m, 1.0, wave ? *wave : -1, g.frame_id});
    }
    return out;
}

// --------------------------------------------------------------------- SSIM

/// Mean SSIM over every fully-covered 11 x 11 window position with a
/// Gaussian window (sigma 1.5), C1 = (0.01 L)^2, C2 = (0.03 L)^2.
inline double ssim(const TensorD& a, const TensorD& b, double data_range, int window = 11, double sigma = 1.5) {
    if (a.shape() != b.shape() || a.rank() != 2) throw DimensionError("ssim: images must be equal-shaped 2-D");
    if (window < 1 || window % 2 == 0) throw ArgumentError("ssim: window must be odd");
    if (!(data_range > 0.0)) throw ArgumentError("ssim: data range must be > 0");
    const std::size_t H = a.rows(), W = a.cols(), k = std::size_t(window);
    if (H < k || W < k) throw DimensionError("ssim: image smaller than the window");
    std::vector<double> g(k);
    double gs = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double x = double(i) - double(k / 2);
        gs += g[i] = std::exp(-x * x / (2 * sigma * sigma));
    }
    for (auto& v : g) v /= gs;
    const std::size_t OH = H - k + 1, OW = W - k + 1;
    // valid separable filtering
    const auto filt = [&](const std::function<double(std::size_t, std::size_t)>& f) {
        std::vector<double> tmp(H * OW), out(OH * OW);
        for (std::size_t r = 0; r < H; ++r)
            for (std::size_t c = 0; c < OW; ++c) {
                double s = 0.0;
                for (std::size_t i = 0; i < k; ++i) s += g[i] * f(r, c + i);
                tmp[r * OW + c] = s;
            }
        for (std::size_t r = 0; r < OH; ++r)
            for (std::size_t c = 0; c < OW; ++c) {
                double s = 0.0;
                for (std::size_t i = 0; i < k; ++i) s += g[i] * tmp[(r + i) * OW + c];
                out[r * OW + c] = s;
            }
        return out;
    };
    const auto ma = filt([&](std::size_t r, std::size_t c) { return a(r, c); });
    const auto mb = filt([&](std::size_t r, std::size_t c) { return b(r, c); });
    const auto aa = filt([&](std::size_t r, std::size_t c) { return a(r, c) * a(r, c); });
    const auto bb = filt([&](std::size_t r, std::size_t c) { return b(r, c) * b(r, c); });
    const auto ab = filt([&](std::size_t r, std::size_t c) { return a(r, c) * b(r, c); });
    const double C1 = std::pow(0.01 * data_range, 2), C2 = std::pow(0.03 * data_range, 2);
    double total = 0.0;
    for (std::size_t i = 0; i < OH * OW; ++i) {
        const double va = aa[i] - ma[i] * ma[i], vb = bb[i] - mb[i] * mb[i], cov = ab[i] - ma[i] * mb[i];
        total += ((2 * ma[i] * mb[i] + C1) * (2 * cov + C2)) / ((ma[i] * ma[i] + mb[i] * mb[i] + C1) * (va + vb + C2));
    }
    return total / double(OH * OW);
}

// -------------------------------------------------------------------- render

struct RenderSpec {
    BModeGrid base;            // grid at input resolution
    std::size_t scale = 1;     // render bins per base pixel
    std::size_t source_R = 1;  // localization scale of the points
    bool dither = false;
    std::uint64_t seed = 0;
};

/// Accumulate point counts on the base grid refined `scale` times. With
/// dither and source_R < scale, each coordinate gets uniform noise of
/// +-0.5 / source_R base pixels before binning. Points outside are dropped.
inline TensorD render_ulm(const PointSet& pts, const RenderSpec& spec) {
    if (pts.space != Space::BMode) throw UsageError("render_ulm: expects BMODE points");
    if (spec.scale < 1 || spec.source_R < 1) throw ArgumentError("render_ulm: scales must be >= 1");
    pts.validate();
    const double s = double(spec.scale);
    const std::size_t rows = spec.base.rows * spec.scale, cols = spec.base.cols * spec.scale;
    TensorD img({rows, cols});
    std::mt19937_64 rng(spec.seed);
    const double amp = 0.5 / double(spec.source_R);
    std::uniform_real_distribution<double> u(-amp, amp);
    const bool dither = spec.dither && spec.source_R < spec.scale;
    for (const auto& p : pts.points) {
        // base pixel c spans [c - 0.5, c + 0.5) in base pixel units
        double c = spec.base.col_of(p.y), r = spec.base.row_of(p.z);
        if (dither) {
            c += u(rng);
            r += u(rng);
        }
        // points on a bin edge go up, regardless of coordinate round-off
        const double fc = std::floor((c + 0.5) * s + 1e-9), fr = std::floor((r + 0.5) * s + 1e-9);
        if (fr < 0 || fc < 0 || fr >= double(rows) || fc >= double(cols)) continue;
        img(std::size_t(fr), std::size_t(fc)) += 1.0;
    }
    return img;
}

/// (img / max)^gamma for display; an all-zero image stays zero.
inline TensorD gamma_compress(TensorD img, double gamma = 0.9) {
    const double m = img.max_abs();
    if (m == 0.0) return img;
    for (auto& v : img.values()) v = std::pow(std::max(0.0, v) / m, gamma);
    return img;
}

/// Binary 16-bit PGM, values scaled so the maximum maps to 65535.
inline void write_pgm16(const std::filesystem::path& path, const TensorD& img) {
    if (img.rank() != 2) throw DimensionError("write_pgm16: expects a 2-D image");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write image: " + path.string());
    os << "P5\n" << img.cols() << ' ' << img.rows() << "\n65535\n";
    const double m = img.max_abs();
    for (std::size_t r = 0; r < img.rows(); ++r)
        for (std::size_t c = 0; c < img.cols(); ++c) {
            const double v = m > 0.0 ? std::clamp(img(r, c) / m, 0.0, 1.0) : 0.0;
            const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
            const char b[2] = {char(q >> 8), char(q & 0xff)};
            os.write(b, 2);
        }
    if (!os) throw IoError("short write: " + path.string());
}

}  // namespace rfulm
