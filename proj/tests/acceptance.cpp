// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Pass criterion numbers to run a subset.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "rfulm/cli.hpp"
#include "rfulm/pipeline.hpp"

namespace fs = std::filesystem;
using namespace rfulm;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

TensorD random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    TensorD t(std::move(shape));
    for (auto& v : t.values()) v = u(rng);
    return t;
}

double dot(const TensorD& a, const TensorD& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

fs::path scratch(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("rfulm_acceptance_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

// ------------------------------------------------------------------ 1

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    // every layer kind: strided input conv, pooled and resampled bottleneck,
    // residual pairs, fuse, head and pixel shuffle
    SgSpcnConfig c;
    c.features = 4;
    c.G = 2;
    c.R = 2;
    SgSpcn<double> net(c);
    net.init_he_uniform(7);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (auto& l : net.layers())
        for (auto& v : l.bias.values()) v = u(rng);
    const TensorD x = random_tensor({2, 8, 8}, 9);
    const TensorD r = random_tensor({1, 16, 16}, 10);
    ForwardCache<double> cache;
    net.forward(x, &cache);
    const Gradients<double> g = net.backward(cache, r);
    const double h = 1e-4;
    double worst_net = 0.0;
    std::size_t checked = 0;
    for (std::size_t li = 0; li < net.layers().size(); ++li)
        for (int which = 0; which < 2; ++which) {
            TensorD& p = which ? net.layers()[li].bias : net.layers()[li].weight;
            const TensorD& analytic = which ? g.bias[li] : g.weight[li];
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double keep = p[i];
                p[i] = keep + h;
                const double fp = dot(net.forward(x), r);
                p[i] = keep - h;
                const double fm = dot(net.forward(x), r);
                p[i] = keep;
                const double numeric = (fp - fm) / (2 * h);
                worst_net = std::max(worst_net, std::abs(analytic[i] - numeric) /
                                                    std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6}));
                ++checked;
            }
        }

    LabelPoints lab{16, 16, {{3, 3}, {8, 12}, {13, 6}}};
    TensorD pred = random_tensor({16, 16}, 3, -50, 50);
    for (auto& v : pred.values())
        if (std::abs(v) < 0.1) v = 1.0;  // keep away from the l1 kink
    const auto L = sr_loss(pred, lab, 1.7, 1e-2, 13);
    double worst_loss = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double keep = pred[i], hl = 1e-2;
        pred[i] = keep + hl;
        const double fp = sr_loss(pred, lab, 1.7, 1e-2, 13).value;
        pred[i] = keep - hl;
        const double fm = sr_loss(pred, lab, 1.7, 1e-2, 13).value;
        pred[i] = keep;
        const double n = (fp - fm) / (2 * hl);
        worst_loss = std::max(worst_loss, std::abs(n - L.grad[i]) / std::max(std::abs(n), 1e-3));
    }
    const double secs = seconds_since(t0);
    return {worst_net < 1e-4 && worst_loss < 1e-6 && checked == net.parameter_count() && secs < 120.0,
            fmt("%zu parameters, max rel err net %.2e, loss %.2e, %.1f s", checked, worst_net, worst_loss, secs)};
}

// ------------------------------------------------------------------ 2

Outcome architecture() {
    const SgSpcn<float> net(SgSpcnConfig::in_silico());
    const std::size_t n = net.parameter_count();
    return {n == 658496, fmt("in-silico config has %zu parameters", n)};
}

// ------------------------------------------------------------------ 3

Outcome geometry_suite() {
    const auto t0 = Clock::now();
    AcquisitionParams acq;
    // (a) element directly above the scatterer, zero steering
    const auto g127 = ArrayGeometry::linear(127);
    const auto w0 = PlaneWave::steered(0.0, g127);
    double worst_a = 0.0;
    for (double z : {1e-3, 4e-3, 9e-3, 14e-3}) {
        const auto d = project_to_channels({0.0, z}, g127, w0, acq);
        worst_a = std::max(worst_a, std::abs(d[63] - 2.0 * z * acq.sample_rate / acq.speed_of_sound));
    }
    // (b) discrete tip against an exhaustive scan
    const auto g = ArrayGeometry::linear();
    const auto waves = plane_waves({-5.0, 0.0, 5.0}, g);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> uy(-6.35e-3, 6.35e-3), uz(1e-3, 15e-3);
    int tip_mismatch = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto d = project_to_channels({uy(rng), uz(rng)}, g, waves[std::size_t(i) % 3], acq);
        std::size_t best = 0;
        for (std::size_t k = 1; k < d.size(); ++k)
            if (d[k] < d[best]) best = k;
        const Tip t = wavefront_tip(d, TipMode::Discrete);
        if (t.element != best || t.z != d[best]) ++tip_mismatch;
    }
    // (c) held-out reprojection per wave
    double worst_c = 0.0;
    for (const auto& w : waves) {
        const AffineMap A = fit_affine(g, w, acq, 1000, 0);
        worst_c = std::max(worst_c, mean_reprojection_error(A, g, w, acq, 1000, 99));
    }
    const double lambda = acq.wavelength(), secs = seconds_since(t0);
    return {worst_a < 1e-9 && tip_mismatch == 0 && worst_c < lambda / 4 && secs < 60.0,
            fmt("on-axis err %.1e samples, tip mismatches %d/1000, worst held-out residual %.4f lambda, %.1f s", worst_a,
                tip_mismatch, worst_c / lambda, secs)};
}

// ------------------------------------------------------------------ 4

Outcome nms_equivalence() {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<int> level(0, 6);
    int mismatched = 0;
    for (int m = 0; m < 100; ++m) {
        TensorD map({64, 64});
        // coarse levels produce plenty of plateaus
        for (auto& v : map.values()) v = m % 2 ? double(level(rng)) : std::uniform_real_distribution<double>(0, 1)(rng);
        const double thr = m % 3 ? 0.5 : -1.0;
        std::set<std::pair<long, long>> brute;
        for (long r = 0; r < 64; ++r)
            for (long c = 0; c < 64; ++c) {
                const double v = map(std::size_t(r), std::size_t(c));
                if (v < thr) continue;
                bool keep = true;
                for (long dr = -1; dr <= 1 && keep; ++dr)
                    for (long dc = -1; dc <= 1 && keep; ++dc) {
                        const long rr = r + dr, cc = c + dc;
                        if ((dr == 0 && dc == 0) || rr < 0 || cc < 0 || rr >= 64 || cc >= 64) continue;
                        const double n = map(std::size_t(rr), std::size_t(cc));
                        if (n > v || (n == v && std::make_pair(rr, cc) < std::make_pair(r, c))) keep = false;
                    }
                if (keep) brute.insert({r, c});
            }
        std::set<std::pair<long, long>> got;
        for (const auto& p : nms_extract(map, 3, thr).points) got.insert({long(p.y), long(p.z)});
        if (got != brute) ++mismatched;
    }
    return {mismatched == 0, fmt("%d/100 maps differ from the exhaustive scan", mismatched)};
}

// ------------------------------------------------------------------ 5

TensorD blob(double r0, double c0, double s = 1.2) {
    TensorD img({15, 15});
    for (std::size_t r = 0; r < 15; ++r)
        for (std::size_t c = 0; c < 15; ++c) {
            const double dr = double(r) - r0, dc = double(c) - c0;
            img(r, c) = std::exp(-(dr * dr + dc * dc) / (2 * s * s));
        }
    return img;
}

Outcome classical_precision() {
    double worst_rs = 0.0, worst_gf = 0.0;
    for (auto [dr, dc] : {std::pair{0.3, -0.2}, {-0.4, 0.1}, {0.15, 0.45}, {0.0, 0.0}}) {
        const TensorD img = blob(7 + dr, 7 + dc);
        const Subpixel a = radial_symmetry(img, 7, 7), b = gaussian_fit_2d(img, 7, 7);
        worst_rs = std::max(worst_rs, std::hypot(a.row - 7 - dr, a.col - 7 - dc));
        worst_gf = std::max(worst_gf, std::hypot(b.row - 7 - dr, b.col - 7 - dc));
    }
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> off(-0.5, 0.5);
    double se = 0.0;
    for (int t = 0; t < 100; ++t) {
        const double dr = off(rng), dc = off(rng);
        TensorD img = blob(7 + dr, 7 + dc);
        add_clutter_noise(img, 20.0, 1000 + std::uint64_t(t));
        const Subpixel a = radial_symmetry(img, 7, 7);
        se += std::pow(a.row - 7 - dr, 2) + std::pow(a.col - 7 - dc, 2);
    }
    const double rmse = std::sqrt(se / 100.0);
    return {worst_rs < 0.02 && worst_gf < 0.02 && rmse < 0.15,
            fmt("noiseless worst offset RS %.4f px, Gauss %.2e px; RS RMSE at 20 dB %.3f px", worst_rs, worst_gf, rmse)};
}

// ------------------------------------------------------------------ 6

Outcome clutter_filtering() {
    const auto g = ArrayGeometry::linear(32);
    AcquisitionParams acq;
    acq.samples = 96;
    const auto w = PlaneWave::steered(0.0, g);
    FrameStack mix, stat, mov;
    for (int t = 0; t < 64; ++t) {
        const Scene s_static{{{{0.2e-3, 3e-3}, 1.0}}};
        const Scene s_moving{{{{-1.2e-3 + 0.04e-3 * t, 4.5e-3}, 0.5}}};
        stat.frames.push_back(simulate_iq_raw(s_static, g, w, acq));
        mov.frames.push_back(simulate_iq_raw(s_moving, g, w, acq));
        mix.frames.push_back(stat.frames.back() + mov.frames.back());
    }
    const auto sub = svd_clutter_subspace(mix, 1, 0);
    const double static_left = stack_energy(project_out(stat, sub)) / stack_energy(stat);
    const double moving_kept = stack_energy(project_out(mov, sub)) / stack_energy(mov);
    FrameStack dc;
    dc.dt = 1e-3;
    dc.frames.assign(64, TensorD({2, 4, 4}, 0.8));
    const double dc_db = -10.0 * std::log10(stack_energy(temporal_bandpass(dc, 50, 400)) / stack_energy(dc));
    return {static_left <= 0.05 && moving_kept >= 0.5 && dc_db >= 60.0,
            fmt("static energy left %.2f%%, moving kept %.1f%%, DC rejection %.0f dB", 100 * static_left, 100 * moving_kept,
                dc_db)};
}

// ------------------------------------------------------------------ 7

DatasetConfig desk_dataset(std::size_t frames, std::uint64_t seed) {
    DatasetConfig d;
    d.n_frames = frames;
    d.min_scatterers = 1;
    d.max_scatterers = 5;
    d.angles_deg = {0.0};
    d.R = 4;
    d.seed = seed;
    d.snr_db = 50.0;
    d.geom = ArrayGeometry::linear(64);
    d.acq.samples = 128;
    d.region = ImagingRegion{d.geom.elements.front().y, d.geom.elements.back().y, 1.5e-3, 7e-3};
    d.jobs = 0;
    return d;
}

Manifest subset(const Manifest& m, const std::set<int>& frames) {
    Manifest out = m;
    out.entries.clear();
    for (const auto& e : m.entries)
        if (frames.count(e.frame_id)) out.entries.push_back(e);
    return out;
}

Outcome end_to_end() {
    const auto t0 = Clock::now();
    const auto dir = scratch("e2e");
    const Manifest train_m = generate_dataset(desk_dataset(400, 101), dir / "train");
    const Manifest test_m = generate_dataset(desk_dataset(100, 202), dir / "test");

    SgSpcnConfig nc;
    nc.features = 32;
    nc.G = 8;
    nc.R = 4;
    SgSpcn<float> net(nc);
    TrainConfig tc;
    tc.seed = 7;
    tc.epochs = 80;
    tc.batch = 4;
    tc.lr0 = 1e-3;
    tc.val_fraction = 0.1;
    tc.jobs = 0;
    // small unaugmented crops buy enough steps for the time budget
    tc.augment = AugmentOptions::none();
    tc.augment.crop_rows = 32;
    tc.augment.crop_cols = 32;
    net.init_he_uniform(tc.seed);
    const TrainingSet data = load_training_set(train_m);
    const TrainResult res = train(net, data, tc, dir / "run", false, [&](const EpochLog& e) {
        std::printf("    epoch %2d  train %.2f  val %.2f  (%.0f s)\n", e.epoch, e.train_loss, e.val_loss, seconds_since(t0));
        std::fflush(stdout);
    });
    if (res.diverged) return {false, "training diverged"};
    const SgSpcn<float> best = load_checkpoint<float>(dir / "run" / "best.ckpt").net;

    // detection threshold and the baseline's threshold both come from the validation frames
    const auto [train_idx, val_idx] = split_train_val(data.frame_ids, tc.val_fraction, tc.seed);
    std::vector<TrainingSample> val;
    std::set<int> val_frames;
    for (auto i : val_idx) {
        val.push_back(data.samples[i]);
        val_frames.insert(data.frame_ids[i]);
    }
    const double thr = sgspcn_roc_threshold(best, val, 0.5 * double(nc.R), default_nms_window(nc.R), tc.jobs);

    const auto geom = test_m.geometry();
    const auto acq = test_m.acquisition();
    const double lambda = acq.wavelength();
    const std::vector<AffineMap> affines{fit_affine(geom, plane_waves({0.0}, geom)[0], acq, 1000, 5)};
    const auto test_frames = load_frames(test_m);
    const PointSet gt = gt_pointset(read_gt_points(dir / "test" / "gt_points.csv"));
    const PointSet est = localize_sgspcn(best, test_m, test_frames, affines, thr, default_nms_window(nc.R), 0.6, tc.jobs);
    const ScoreReport net_score = pair_and_score(est, gt, lambda);

    // interp_peak on DAS of the same frames, relative threshold tuned for Jaccard on validation
    const BModeGrid grid = dataset_grid(test_m);
    const Manifest val_m = subset(train_m, val_frames);
    const auto val_frames_data = load_frames(val_m);
    PointSet val_gt{Space::BMode, {}};
    for (const auto& p : gt_pointset(read_gt_points(dir / "train" / "gt_points.csv")).points)
        if (val_frames.count(p.frame_id)) val_gt.points.push_back(p);
    double best_rel = 0.3, best_j = -1.0;
    for (double rel = 0.1; rel < 0.95; rel += 0.05) {
        const double j = pair_and_score(localize_classical(val_m, val_frames_data, grid, Refiner::Lanczos, rel, tc.jobs), val_gt, lambda)
                             .jaccard();
        if (j > best_j) best_j = j, best_rel = rel;
    }
    const ScoreReport base =
        pair_and_score(localize_classical(test_m, test_frames, grid, Refiner::Lanczos, best_rel, tc.jobs), gt, lambda);

    const double secs = seconds_since(t0);
    const double rmse = net_score.rmse_mean.value_or(1e9), base_rmse = base.rmse_mean.value_or(1e9);
    fs::remove_all(dir);
    return {net_score.jaccard() >= 0.70 && rmse <= 2.5 && rmse < base_rmse && secs <= 1800.0,
            fmt("SG-SPCN Jaccard %.1f%%, RMSE %.3f lambda/10 (threshold %.3g); interp_peak Jaccard %.1f%%, RMSE %.3f "
                "lambda/10; %.0f s",
                100 * net_score.jaccard(), rmse, thr, 100 * base.jaccard(), base_rmse, secs)};
}

// ------------------------------------------------------------------ 8

Outcome annealing() {
    const auto dir = scratch("anneal");
    DatasetConfig d;
    d.n_frames = 200;
    d.min_scatterers = 1;
    d.max_scatterers = 3;
    d.angles_deg = {0.0};
    d.R = 12;
    d.seed = 31;
    d.snr_db = 50.0;
    d.geom = ArrayGeometry::linear(32);
    d.acq.samples = 64;
    d.region = ImagingRegion{d.geom.elements.front().y, d.geom.elements.back().y, 1.2e-3, 3.5e-3};
    const Manifest m = generate_dataset(d, dir / "data");
    const TrainingSet data = load_training_set(m);
    SgSpcnConfig nc;
    nc.features = 8;
    nc.G = 4;
    nc.R = 12;
    TrainConfig tc;
    tc.seed = 3;
    tc.epochs = 200;
    tc.batch = 4;
    tc.val_fraction = 0.2;
    tc.jobs = 0;
    tc.augment = AugmentOptions::none();
    tc.augment.crop_rows = 16;
    tc.augment.crop_cols = 16;
    const auto run = [&](bool anneal) {
        TrainConfig c = tc;
        c.anneal_sigma = anneal;
        SgSpcn<float> net(nc);
        net.init_he_uniform(c.seed);
        return train(net, data, c, dir / (anneal ? "annealed" : "constant")).log.back().val_loss;
    };
    const double annealed = run(true), constant = run(false);
    fs::remove_all(dir);
    return {annealed <= constant, fmt("final validation loss annealed %.3f vs constant %.3f", annealed, constant)};
}

// ------------------------------------------------------------------ 9

Outcome fusion_and_metrics() {
    const double lambda = 98.7e-6;
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> pos(0.0, 6e-3), ang(0.0, 2 * std::numbers::pi), rad(0.0, 0.1 * lambda);
    int fuse_fail = 0;
    for (int trial = 0; trial < 200; ++trial) {
        PointSet p{Space::BMode, {}};
        const double y = pos(rng), z = 2e-3 + pos(rng);
        for (int w = 0; w < 3; ++w) {
            const double a = ang(rng), r = rad(rng) / 2;  // pairwise spread stays within 0.1 lambda
            p.points.push_back({y + r * std::cos(a), z + r * std::sin(a), 1.0, w, 0});
        }
        p.points.push_back({y + 10 * lambda, z, 1.0, 1, 0});
        const auto f = dbscan_fuse(p, lambda);
        if (f.size() != 2 || std::hypot(f.points[0].y - y, f.points[0].z - z) > 0.1 * lambda || f.points[1].y != y + 10 * lambda)
            ++fuse_fail;
    }
    std::uniform_int_distribution<int> cnt(0, 20);
    std::uniform_real_distribution<double> jit(-0.3 * lambda, 0.3 * lambda), field(0.0, 5 * lambda);
    int count_fail = 0;
    for (int scene = 0; scene < 1000; ++scene) {
        PointSet e{Space::BMode, {}}, g{Space::BMode, {}};
        for (int i = cnt(rng); i > 0; --i) {
            g.points.push_back({field(rng), field(rng), 1.0, -1, scene % 5});
            if (rng() % 3) e.points.push_back({g.points.back().y + jit(rng), g.points.back().z + jit(rng), 1.0, -1, scene % 5});
        }
        for (int i = int(rng() % 5); i > 0; --i) e.points.push_back({field(rng), field(rng), 1.0, -1, scene % 5});
        const auto s = pair_and_score(e, g, lambda);
        if (s.tp + s.fn != g.size() || s.tp + s.fp != e.size()) ++count_fail;
    }
    const TensorD img = random_tensor({32, 32}, 4, 0.0, 1.0);
    const double self = ssim(img, img, 1.0);
    return {fuse_fail == 0 && count_fail == 0 && std::abs(self - 1.0) < 1e-12,
            fmt("fusion failures %d/200, count violations %d/1000, ssim(a,a) = %.15f", fuse_fail, count_fail, self)};
}

// ----------------------------------------------------------------- 10

Outcome determinism() {
    const auto dir = scratch("determinism");
    const auto cfg = dir / "run.cfg";
    std::ofstream(cfg) << "schema_version = 1\nseed = 12\n"
                          "dataset.n_frames = 6\ndataset.max_scatterers = 3\ndataset.R = 2\ndataset.snr_db = 50\n"
                          "array.elements = 24\nacq.samples = 80\nregion.z_min = 1.5e-3\nregion.z_max = 4e-3\n"
                          "network.features = 4\nnetwork.R = 2\nnetwork.G = 2\n"
                          "train.epochs = 3\ntrain.batch = 2\ntrain.val_fraction = 0.34\ntrain.precision = f64\n"
                          "augment.crop_rows = 0\naugment.crop_cols = 16\n";
    std::ostringstream sink;
    const auto run = [&](std::vector<std::string> args) {
        args.insert(args.begin(), "rfulm");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        return cli::run(int(argv.size()), argv.data(), {sink, sink});
    };
    int rc = 0;
    rc |= run({"simulate", "--config", cfg.string(), "--out", (dir / "a").string(), "--jobs", "1"});
    rc |= run({"simulate", "--config", cfg.string(), "--out", (dir / "b").string(), "--jobs", "4"});
    std::size_t files = 0, differ = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
        if (!e.is_regular_file()) continue;
        ++files;
        if (slurp(e.path()) != slurp(dir / "b" / fs::relative(e.path(), dir / "a"))) ++differ;
    }
    rc |= run({"train", "--config", cfg.string(), "--dataset", (dir / "a").string(), "--out", (dir / "t1").string(), "--jobs", "1"});
    rc |= run({"train", "--config", cfg.string(), "--dataset", (dir / "b").string(), "--out", (dir / "t2").string(), "--jobs", "3"});
    const std::string log1 = slurp(dir / "t1" / "metrics.tsv"), log2 = slurp(dir / "t2" / "metrics.tsv");
    fs::remove_all(dir);
    return {rc == 0 && files > 0 && differ == 0 && !log1.empty() && log1 == log2,
            fmt("%zu dataset files, %zu differ; epoch logs %s", files, differ, log1 == log2 ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"gradient suite", gradient_suite},
        {"architecture fidelity", architecture},
        {"geometry suite", geometry_suite},
        {"NMS equivalence", nms_equivalence},
        {"classical localizer precision", classical_precision},
        {"clutter filtering", clutter_filtering},
        {"desk-scale end-to-end", end_to_end},
        {"sigma annealing ordering", annealing},
        {"fusion and metrics", fusion_and_metrics},
        {"determinism", determinism},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = int(k) + 1;
        if (!only.empty() && !only.count(id)) continue;
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first, o.detail.c_str());
        std::fflush(stdout);
        failed += !o.pass;
    }
    return failed ? 1 : 0;
}
