#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rfulm/beamform.hpp"
#include "rfulm/geometry.hpp"
#include "rfulm/numerics/lm.hpp"
#include "rfulm/numerics/tensor.hpp"
#include "rfulm/simulator.hpp"

namespace rfulm {

// --------------------------------------------------------------------- NMS

/// Largest odd value <= R - 1, at least 3.
inline int default_nms_window(std::size_t R) {
    int w = int(R) - 1;
    if (w % 2 == 0) --w;
    return std::max(3, w);
}

/// Local maxima of a single-plane map. A pixel is kept when it is >=
/// `threshold` and equals the maximum over its (clipped) window; among
/// equal values in a window only the lexicographically first (row, col)
/// survives. Point y = row, z = col, confidence = value.
template <typename T>
PointSet nms_extract(const Tensor<T>& map, int window, double threshold, Space space = Space::Channel) {
    if (window < 3 || window % 2 == 0) throw ArgumentError("nms_extract: window must be odd and >= 3");
    const std::size_t H = map.rows(), W = map.cols();
    if (map.size() != H * W) throw DimensionError("nms_extract: expects a single plane");
    const long h = window / 2;
    // separable running max: rows then columns
    std::vector<double> rowmax(H * W), full(H * W);
    for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
            double m = -std::numeric_limits<double>::infinity();
            const long c0 = std::max(0L, long(c) - h), c1 = std::min(long(W) - 1, long(c) + h);
            for (long k = c0; k <= c1; ++k) m = std::max(m, double(map(r, std::size_t(k))));
            rowmax[r * W + c] = m;
        }
    for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
            double m = -std::numeric_limits<double>::infinity();
            const long r0 = std::max(0L, long(r) - h), r1 = std::min(long(H) - 1, long(r) + h);
            for (long k = r0; k <= r1; ++k) m = std::max(m, rowmax[std::size_t(k) * W + c]);
            full[r * W + c] = m;
        }
    PointSet out{space, {}};
    for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
            const double v = double(map(r, c));
            if (!(v >= threshold) || v != full[r * W + c]) continue;
            // plateau: an earlier equal pixel in the window wins
            bool first = true;
            const long r0 = std::max(0L, long(r) - h), c0 = std::max(0L, long(c) - h);
            const long c1 = std::min(long(W) - 1, long(c) + h);
            for (long rr = r0; rr <= long(r) && first; ++rr)
                for (long cc = c0; cc <= c1; ++cc) {
                    if (rr == long(r) && cc >= long(c)) break;
                    if (double(map(std::size_t(rr), std::size_t(cc))) == v) {
                        first = false;
                        break;
                    }
                }
            if (first) out.points.push_back({double(r), double(c), v, -1, 0});
        }
    return out;
}

/// Coordinates divided by R; confidence and tags kept.
inline PointSet rescale_points(PointSet pts, std::size_t R) {
    if (R == 0) throw ArgumentError("rescale_points: R must be >= 1");
    for (auto& p : pts.points) {
        p.y /= double(R);
        p.z /= double(R);
    }
    return pts;
}

// --------------------------------------------------------------- ROC threshold

struct RocPoint {
    double threshold = 0.0;
    double tpr = 0.0, fpr = 0.0;
    [[nodiscard]] double score() const { return std::sqrt(tpr * (1.0 - fpr)); }
};

struct RocResult {
    double threshold = 0.0;
    std::vector<RocPoint> curve;
};

namespace detail {

/// Candidate peaks of one frame tagged as matched (true) or not, greedy by distance.
inline std::vector<std::pair<double, bool>> tag_candidates(const PointSet& cand, const std::vector<LocPoint>& labels,
                                                           double tolerance) {
    struct Pair {
        double d;
        std::size_t c, l;
    };
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < cand.size(); ++i)
        for (std::size_t j = 0; j < labels.size(); ++j) {
            const double d = std::max(std::abs(cand.points[i].y - labels[j].y), std::abs(cand.points[i].z - labels[j].z));
            if (d <= tolerance) pairs.push_back({d, i, j});
        }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        return std::tie(a.d, a.c, a.l) < std::tie(b.d, b.c, b.l);
    });
    std::vector<bool> cu(cand.size()), lu(labels.size());
    for (const auto& p : pairs) {
        if (cu[p.c] || lu[p.l]) continue;
        cu[p.c] = lu[p.l] = true;
    }
    std::vector<std::pair<double, bool>> out;
    for (std::size_t i = 0; i < cand.size(); ++i) out.emplace_back(cand.points[i].confidence, cu[i]);
    return out;
}

}  // namespace detail

/// Threshold maximizing sqrt(TPR (1 - FPR)) over the NMS peak values.
/// Every local maximum of every map is a candidate; a candidate is positive
/// when greedily matched to a label within `tolerance_px` (Chebyshev).
/// At threshold t the detections are the candidates >= t; TPR = positive
/// detections / labels, FPR = negative detections / detections (there are
/// no true negatives). steps = 0 sweeps every distinct peak value, otherwise
/// `steps` quantiles. Ties go to the higher threshold.
template <typename T>
RocResult roc_threshold(const std::vector<Tensor<T>>& maps, const std::vector<std::vector<LocPoint>>& labels,
                        double tolerance_px, int window, std::size_t steps = 0) {
    if (maps.size() != labels.size() || maps.empty()) throw ArgumentError("roc_threshold: need one label list per map");
    std::vector<std::pair<double, bool>> tagged;
    std::size_t n_labels = 0;
    for (std::size_t f = 0; f < maps.size(); ++f) {
        const PointSet cand = nms_extract(maps[f], window, -std::numeric_limits<double>::infinity());
        const auto t = detail::tag_candidates(cand, labels[f], tolerance_px);
        tagged.insert(tagged.end(), t.begin(), t.end());
        n_labels += labels[f].size();
    }
    if (n_labels == 0) throw ArgumentError("roc_threshold: labels contain no positives");
    // descending scores; counts above t accumulate as t decreases
    std::sort(tagged.begin(), tagged.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<double> cands;
    if (steps == 0) {
        for (const auto& t : tagged) cands.push_back(t.first);
    } else {
        const std::size_t n = tagged.size();
        for (std::size_t q = 0; q <= steps; ++q) cands.push_back(tagged[n - 1 - std::min(n - 1, (q * (n - 1) + steps / 2) / steps)].first);
    }
    std::sort(cands.begin(), cands.end());
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
    RocResult res;
    double best = -1.0;
    std::size_t tp = 0, fp = 0, k = 0;
    for (auto it = cands.rbegin(); it != cands.rend(); ++it) {
        const double t = *it;
        for (; k < tagged.size() && tagged[k].first >= t; ++k) (tagged[k].second ? tp : fp)++;
        RocPoint p{t, double(tp) / double(n_labels), double(fp) / double(tp + fp)};
        res.curve.push_back(p);
        if (p.score() > best) {
            best = p.score();
            res.threshold = t;
        }
    }
    std::reverse(res.curve.begin(), res.curve.end());
    return res;
}

// ------------------------------------------------------------ sub-pixel refiners

/// Sub-pixel position in (row, col) image coordinates.
struct Subpixel {
    double row = 0.0, col = 0.0;
    bool ok = true;  // false: refiner fell back to the seed
};

namespace detail {

inline void check_seed(const TensorD& img, std::size_t r, std::size_t c, int patch) {
    if (img.rank() != 2) throw DimensionError("refiner: expects a rows x cols image");
    if (patch < 3 || patch % 2 == 0) throw ArgumentError("refiner: patch must be odd and >= 3");
    const std::size_t h = std::size_t(patch / 2);
    if (r < h || c < h || r + h >= img.rows() || c + h >= img.cols()) {
        throw ArgumentError("refiner: seed closer than patch/2 to the border");
    }
}

inline Subpixel clamp_to_patch(Subpixel s, std::size_t r, std::size_t c, int patch) {
    const double h = double(patch / 2);
    s.row = std::clamp(s.row, double(r) - h, double(r) + h);
    s.col = std::clamp(s.col, double(c) - h, double(c) + h);
    return s;
}

}  // namespace detail

/// Radial-symmetry centre: the point closest (in weighted least squares)
/// to every intensity-gradient line of the patch.
///
/// Gradients are taken on the half-pixel grid from 2x2 differences and
/// smoothed with a 3x3 box; lines are weighted by |g|^2 over the distance
/// to the intensity centroid.
inline Subpixel radial_symmetry(const TensorD& img, std::size_t r, std::size_t c, int patch = 7) {
    detail::check_seed(img, r, c, patch);
    const long h = patch / 2;
    const std::size_t N = std::size_t(patch), M = N - 1;
    const auto I = [&](std::size_t i, std::size_t j) { return img(r - std::size_t(h) + i, c - std::size_t(h) + j); };
    std::vector<double> gr(M * M), gc(M * M);
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < M; ++j) {
            gr[i * M + j] = 0.5 * ((I(i + 1, j) + I(i + 1, j + 1)) - (I(i, j) + I(i, j + 1)));
            gc[i * M + j] = 0.5 * ((I(i, j + 1) + I(i + 1, j + 1)) - (I(i, j) + I(i + 1, j)));
        }
    const auto smooth = [&](const std::vector<double>& g) {
        std::vector<double> s(M * M);
        for (long i = 0; i < long(M); ++i)
            for (long j = 0; j < long(M); ++j) {
                double acc = 0.0;
                int n = 0;
                for (long di = -1; di <= 1; ++di)
                    for (long dj = -1; dj <= 1; ++dj) {
                        const long a = i + di, b = j + dj;
                        if (a < 0 || b < 0 || a >= long(M) || b >= long(M)) continue;
                        acc += g[std::size_t(a) * M + std::size_t(b)];
                        ++n;
                    }
                s[std::size_t(i) * M + std::size_t(j)] = acc / n;
            }
        return s;
    };
    gr = smooth(gr);
    gc = smooth(gc);
    // gradient-magnitude weighted centroid of the half-pixel grid
    double sw = 0.0, cr = 0.0, cc = 0.0;
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < M; ++j) {
            const double g2 = gr[i * M + j] * gr[i * M + j] + gc[i * M + j] * gc[i * M + j];
            sw += g2;
            cr += g2 * (double(i) + 0.5);
            cc += g2 * (double(j) + 0.5);
        }
    if (!(sw > 0.0)) return {double(r), double(c), false};
    cr /= sw;
    cc /= sw;
    double a11 = 0, a12 = 0, a22 = 0, b1 = 0, b2 = 0;
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < M; ++j) {
            const double g_r = gr[i * M + j], g_c = gc[i * M + j];
            const double g2 = g_r * g_r + g_c * g_c;
            if (g2 == 0.0) continue;
            const double pr = double(i) + 0.5, pc = double(j) + 0.5;
            const double dist = std::sqrt((pr - cr) * (pr - cr) + (pc - cc) * (pc - cc));
            const double w = g2 / std::max(dist, 1e-3);
            const double nr = g_r / std::sqrt(g2), nc = g_c / std::sqrt(g2);
            // projector onto the line normal: I - n n^T
            const double p11 = 1.0 - nr * nr, p12 = -nr * nc, p22 = 1.0 - nc * nc;
            a11 += w * p11;
            a12 += w * p12;
            a22 += w * p22;
            b1 += w * (p11 * pr + p12 * pc);
            b2 += w * (p12 * pr + p22 * pc);
        }
    const double det = a11 * a22 - a12 * a12;
    if (!(std::abs(det) > 1e-12 * std::max(1.0, a11 * a22))) return {double(r), double(c), false};
    const double xr = (a22 * b1 - a12 * b2) / det, xc = (a11 * b2 - a12 * b1) / det;
    return detail::clamp_to_patch({double(r) - double(h) + xr, double(c) - double(h) + xc, true}, r, c, patch);
}

/// Least-squares fit of A exp(-((x-x0)^2 + (y-y0)^2) / (2 s^2)) + b over the patch.
inline Subpixel gaussian_fit_2d(const TensorD& img, std::size_t r, std::size_t c, int patch = 7) {
    detail::check_seed(img, r, c, patch);
    const long h = patch / 2;
    std::vector<double> vals;
    std::vector<std::pair<double, double>> xy;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (long i = -h; i <= h; ++i)
        for (long j = -h; j <= h; ++j) {
            const double v = img(std::size_t(long(r) + i), std::size_t(long(c) + j));
            vals.push_back(v);
            xy.emplace_back(double(i), double(j));
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (!(hi > lo)) return {double(r), double(c), false};
    const auto model = [&](const Vec& p, std::size_t k) {
        const double dr = xy[k].first - p[1], dc = xy[k].second - p[2];
        return p[0] * std::exp(-(dr * dr + dc * dc) / (2.0 * p[3] * p[3])) + p[4];
    };
    const ResidualFn res = [&](const Vec& p) {
        Vec out(Eigen::Index(vals.size()));
        for (std::size_t k = 0; k < vals.size(); ++k) out[Eigen::Index(k)] = model(p, k) - vals[k];
        return out;
    };
    const JacobianFn jac = [&](const Vec& p) {
        Mat J(Eigen::Index(vals.size()), 5);
        for (std::size_t k = 0; k < vals.size(); ++k) {
            const double dr = xy[k].first - p[1], dc = xy[k].second - p[2];
            const double s2 = p[3] * p[3];
            const double e = std::exp(-(dr * dr + dc * dc) / (2.0 * s2));
            const auto i = Eigen::Index(k);
            J(i, 0) = e;
            J(i, 1) = p[0] * e * dr / s2;
            J(i, 2) = p[0] * e * dc / s2;
            J(i, 3) = p[0] * e * (dr * dr + dc * dc) / (s2 * p[3]);
            J(i, 4) = 1.0;
        }
        return J;
    };
    Vec init(5);
    init << hi - lo, 0.0, 0.0, std::max(1.0, double(h) / 2.0), lo;
    LmOptions opt;
    opt.max_iter = 200;
    try {
        const LmReport rep = lm_solve(res, jac, init, opt);
        const Vec& p = rep.params;
        if (!p.allFinite() || std::abs(p[1]) > double(h) + 0.5 || std::abs(p[2]) > double(h) + 0.5) {
            return {double(r), double(c), false};
        }
        return detail::clamp_to_patch({double(r) + p[1], double(c) + p[2], true}, r, c, patch);
    } catch (const Error&) {
        return {double(r), double(c), false};
    }
}

inline double lanczos(double x, int a) {
    if (x == 0.0) return 1.0;
    if (std::abs(x) >= double(a)) return 0.0;
    const double px = std::numbers::pi * x;
    return double(a) * std::sin(px) * std::sin(px / double(a)) / (px * px);
}

/// Lanczos-`taps` upsampling of the patch by `factor` and argmax of the
/// upsampled values. Image samples outside the image are edge-clamped.
inline Subpixel interp_peak(const TensorD& img, std::size_t r, std::size_t c, int factor = 10, int taps = 3, int patch = 7) {
    detail::check_seed(img, r, c, patch);
    if (factor < 1 || taps < 1) throw ArgumentError("interp_peak: factor and taps must be >= 1");
    const long h = patch / 2;
    const long H = long(img.rows()), W = long(img.cols());
    const long n = 2 * h * factor + 1;
    // separable: weights per sub-sample offset
    double best = -std::numeric_limits<double>::infinity();
    Subpixel out{double(r), double(c), true};
    std::vector<double> col_pass(std::size_t(2 * (h + taps) + 1));
    for (long sj = 0; sj < n; ++sj) {
        const double x = double(c) - double(h) + double(sj) / factor;
        const long x0 = long(std::floor(x));
        // interpolate each needed row at column x
        for (long i = -(h + taps); i <= h + taps; ++i) {
            const long rr = std::clamp(long(r) + i, 0L, H - 1);
            double acc = 0.0;
            for (long k = x0 - taps + 1; k <= x0 + taps; ++k) {
                const double w = lanczos(x - double(k), taps);
                if (w != 0.0) acc += w * img(std::size_t(rr), std::size_t(std::clamp(k, 0L, W - 1)));
            }
            col_pass[std::size_t(i + h + taps)] = acc;
        }
        for (long si = 0; si < n; ++si) {
            const double y = double(r) - double(h) + double(si) / factor;
            const long y0 = long(std::floor(y));
            double acc = 0.0;
            for (long k = y0 - taps + 1; k <= y0 + taps; ++k) {
                const double w = lanczos(y - double(k), taps);
                if (w != 0.0) acc += w * col_pass[std::size_t(k - long(r) + h + taps)];
            }
            // strict > keeps the lexicographically first maximum in (col, row) scan
            if (acc > best) {
                best = acc;
                out.row = y;
                out.col = x;
            }
        }
    }
    return out;
}

// --------------------------------------------------------- B-mode localization

enum class Refiner { RadialSymmetry, GaussFit, Lanczos };

inline Refiner parse_refiner(const std::string& s) {
    if (s == "rs") return Refiner::RadialSymmetry;
    if (s == "gauss2d") return Refiner::GaussFit;
    if (s == "lanczos") return Refiner::Lanczos;
    throw ArgumentError("unknown localization method: " + s);
}

inline Subpixel refine(Refiner m, const TensorD& img, std::size_t r, std::size_t c, int patch = 7) {
    switch (m) {
        case Refiner::RadialSymmetry: return radial_symmetry(img, r, c, patch);
        case Refiner::GaussFit: return gaussian_fit_2d(img, r, c, patch);
        case Refiner::Lanczos: return interp_peak(img, r, c, 10, 3, patch);
    }
    return {double(r), double(c), false};
}

/// Peaks of a B-mode magnitude image above `threshold`, refined and mapped
/// to meters. Seeds too close to the border for the patch are skipped.
inline PointSet localize_bmode(const TensorD& magnitude_img, const BModeGrid& grid, Refiner method, double threshold,
                               int patch = 7, int window = 3) {
    PointSet seeds = nms_extract(magnitude_img, window, threshold, Space::BMode);
    PointSet out{Space::BMode, {}};
    const std::size_t h = std::size_t(patch / 2);
    for (const auto& s : seeds.points) {
        const auto r = std::size_t(s.y), c = std::size_t(s.z);
        if (r < h || c < h || r + h >= magnitude_img.rows() || c + h >= magnitude_img.cols()) continue;
        const Subpixel p = refine(method, magnitude_img, r, c, patch);
        out.points.push_back({grid.y(p.col), grid.z(p.row), s.confidence, -1, 0});
    }
    return out;
}

// ----------------------------------------------------------------- CSV I/O

inline void write_points_csv(std::ostream& os, const PointSet& pts, bool header = true) {
    if (header) os << "frame_id,wave_index,space,y,z,confidence\n";
    for (const auto& p : pts.points) {
        os << p.frame_id << ',' << p.wave_index << ',' << space_name(pts.space) << ',' << format_double(p.y) << ','
           << format_double(p.z) << ',' << format_double(p.confidence) << '\n';
    }
}

inline void write_points_csv(const std::filesystem::path& path, const PointSet& pts) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write points: " + path.string());
    write_points_csv(os, pts);
}

inline PointSet read_points_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read points: " + path.string());
    std::string line;
    if (!std::getline(is, line) || line.rfind("frame_id,", 0) != 0) throw IoError("points csv: missing header: " + path.string());
    PointSet out{Space::BMode, {}};
    bool space_seen = false;
    for (int lineno = 2; std::getline(is, line); ++lineno) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::istringstream ls(line);
        for (std::string tok; std::getline(ls, tok, ',');) f.push_back(tok);
        if (f.size() != 6) throw IoError("points csv line " + std::to_string(lineno) + ": expected 6 fields");
        const Space s = parse_space(f[2]);
        if (space_seen && s != out.space) throw IoError("points csv line " + std::to_string(lineno) + ": mixed spaces");
        out.space = s;
        space_seen = true;
        out.points.push_back({std::stod(f[3]), std::stod(f[4]), std::stod(f[5]), std::stoi(f[1]), std::stoi(f[0])});
    }
    return out;
}

}  // namespace rfulm
