#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "rfulm/config.hpp"
#include "rfulm/pipeline.hpp"

namespace rfulm::cli {

namespace fs = std::filesystem;

struct Streams {
    std::ostream& out = std::cout;
    std::ostream& err = std::cerr;
};

inline void require_dataset(const fs::path& dir) {
    if (!fs::exists(dir / "manifest.tsv")) throw UsageError("not a dataset directory (no manifest.tsv): " + dir.string());
}

inline std::string checkpoint_dtype(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw UsageError("cannot read checkpoint: " + path.string());
    std::string line, key, value;
    std::getline(is, line);
    std::getline(is, line);
    std::istringstream(line) >> key >> value;
    if (key != "dtype") throw IoError("not a checkpoint: " + path.string());
    return value;
}

inline double read_threshold_file(const fs::path& path) {
    std::ifstream is(path);
    double t = 0.0;
    if (!(is >> t)) throw UsageError("no threshold given and none found at " + path.string() + "; pass --threshold");
    return t;
}

// ------------------------------------------------------------------ commands

inline void cmd_simulate(const fs::path& config, const fs::path& out, int jobs, Streams s) {
    const auto cf = ConfigFile::load(config);
    DatasetConfig dc = dataset_config(cf);
    for (auto p : {"network.", "train.", "augment."}) cf.ignore_prefix(p);
    cf.check_all_used();
    dc.jobs = jobs;
    const Manifest m = generate_dataset(dc, out);
    s.out << "wrote " << m.entries.size() << " frames (" << dc.n_frames << " scenes x " << dc.angles_deg.size()
          << " waves) to " << out.string() << '\n';
}

inline void cmd_calibrate(const fs::path& dataset, fs::path out, std::size_t points, std::uint64_t seed, Streams s) {
    require_dataset(dataset);
    const Manifest m = read_manifest(dataset);
    if (out.empty()) out = dataset / "calibration";
    const auto maps = calibrate_dataset(m, points, seed);
    save_calibration(out, maps);
    const double lambda = m.acquisition().wavelength();
    for (std::size_t w = 0; w < maps.size(); ++w) {
        s.out << "wave " << w << ": mean residual " << maps[w].mean_residual / lambda << " lambda\n";
    }
}

struct StopTraining {};

template <typename T>
void train_with(const TrainSettings& ts, const Manifest& m, const fs::path& out, bool resume, int jobs, int stop_after,
                Streams s) {
    TrainConfig tc = ts.train;
    tc.jobs = jobs;
    SgSpcn<T> net(ts.net);
    net.init_he_uniform(tc.seed);
    const TrainingSet data = load_training_set(m, tc.max_frames);
    if (std::size_t(m.scale()) != ts.net.R) throw ConfigError("train: dataset R does not match network.R");
    int ran = 0;
    TrainResult res;
    try {
        res = train(net, data, tc, out, resume, [&](const EpochLog& e) {
            s.out << "epoch " << e.epoch << " lr " << e.lr << " sigma " << e.sigma << " train " << e.train_loss << " val "
                  << e.val_loss << std::endl;
            if (stop_after > 0 && ++ran >= stop_after) throw StopTraining{};
        });
    } catch (const StopTraining&) {
        s.out << "stopped after " << ran << " epochs; continue with --resume\n";
        return;
    }
    if (res.diverged) throw NumericError("training diverged; last good checkpoint kept in " + out.string());
    // detection threshold from the validation frames of the best model
    const Checkpoint<T> best = load_checkpoint<T>(out / "best.ckpt");
    const auto [train_idx, val_idx] = split_train_val(data.frame_ids, tc.val_fraction, tc.seed);
    std::vector<TrainingSample> val;
    for (auto i : val_idx.empty() ? train_idx : val_idx) val.push_back(data.samples[i]);
    const double thr = sgspcn_roc_threshold(best.net, val, 0.5 * double(ts.net.R), default_nms_window(ts.net.R), jobs);
    std::ofstream(out / "threshold.txt") << format_double(thr) << '\n';
    s.out << "best epoch " << res.best_epoch << " val " << res.best_val << " threshold " << thr << '\n';
}

inline void cmd_train(const fs::path& config, const fs::path& dataset, const fs::path& out, bool resume, int jobs,
                      int stop_after, Streams s) {
    const auto cf = ConfigFile::load(config);
    const TrainSettings ts = train_settings(cf);
    for (auto p : {"dataset.", "array.", "acq.", "region."}) cf.ignore_prefix(p);
    cf.check_all_used();
    require_dataset(dataset);
    const Manifest m = read_manifest(dataset);
    if (ts.precision == Precision::F64) train_with<double>(ts, m, out, resume, jobs, stop_after, s);
    else train_with<float>(ts, m, out, resume, jobs, stop_after, s);
}

struct LocalizeOptions {
    fs::path dataset, checkpoint, out, calibration;
    std::string method;
    std::optional<double> threshold;
    double threshold_scale = 1.0;
    std::size_t clutter_drop_low = 0;
    int window = 0;
    double eps_wavelengths = 0.6;
    int jobs = 0;
};

template <typename T>
PointSet localize_network(const LocalizeOptions& o, const Manifest& m, const std::vector<TensorD>& frames) {
    const Checkpoint<T> ck = load_checkpoint<T>(o.checkpoint);
    const double thr = o.threshold ? *o.threshold : read_threshold_file(o.checkpoint.parent_path() / "threshold.txt");
    const auto affines = load_calibration(o.calibration, m.angles_deg().size());
    const int window = o.window ? o.window : default_nms_window(ck.net.config().R);
    return localize_sgspcn(ck.net, m, frames, affines, thr * o.threshold_scale, window, o.eps_wavelengths, o.jobs);
}

inline void cmd_localize(LocalizeOptions o, Streams s) {
    require_dataset(o.dataset);
    const Manifest m = read_manifest(o.dataset);
    if (o.calibration.empty()) o.calibration = o.dataset / "calibration";
    const auto frames = load_frames(m, o.clutter_drop_low);
    PointSet pts;
    if (o.method == "sgspcn") {
        if (o.checkpoint.empty()) throw UsageError("--method sgspcn needs --checkpoint");
        pts = checkpoint_dtype(o.checkpoint) == "f64" ? localize_network<double>(o, m, frames)
                                                      : localize_network<float>(o, m, frames);
    } else {
        const Refiner r = parse_refiner(o.method);
        pts = localize_classical(m, frames, dataset_grid(m), r, o.threshold.value_or(0.3) * o.threshold_scale, o.jobs);
    }
    write_points_csv(o.out, pts);
    s.out << "wrote " << pts.size() << " points to " << o.out.string() << '\n';
}

inline void cmd_evaluate(const fs::path& points, const fs::path& dataset, fs::path gt_csv, const fs::path& out,
                         const std::string& matcher, std::size_t scale, Streams s) {
    require_dataset(dataset);
    const Manifest m = read_manifest(dataset);
    if (gt_csv.empty()) gt_csv = dataset / "gt_points.csv";
    const PointSet est = read_points_csv(points);
    const PointSet gt = gt_pointset(read_gt_points(gt_csv));
    Matcher mt;
    if (matcher == "greedy") mt = Matcher::Greedy;
    else if (matcher == "optimal") mt = Matcher::Optimal;
    else throw UsageError("unknown matcher: " + matcher);
    const double lambda = m.acquisition().wavelength();
    const ScoreReport rep = pair_and_score(est, gt, lambda, mt);
    const RenderSpec spec{dataset_grid(m), scale, 1, false, 0};
    const TensorD ref = render_ulm(gt, spec), img = render_ulm(est, spec);
    std::optional<double> ss;
    if (ref.max_abs() > 0.0 && ref.rows() >= 11 && ref.cols() >= 11) ss = ssim(img, ref, ref.max_abs());
    write_score_tsv(out, rep, ss);
    s.out << "TP " << rep.tp << " FP " << rep.fp << " FN " << rep.fn << " Jaccard " << 100.0 * rep.jaccard() << "%";
    if (rep.rmse_mean) s.out << " RMSE " << *rep.rmse_mean << " +- " << *rep.rmse_std << " lambda/10";
    if (ss) s.out << " SSIM " << 100.0 * *ss << "%";
    s.out << '\n';
}

inline void cmd_render(const fs::path& points, const fs::path& dataset, const fs::path& out, std::size_t scale,
                       std::size_t source_scale, bool dither, double gamma, std::uint64_t seed, Streams s) {
    require_dataset(dataset);
    const Manifest m = read_manifest(dataset);
    const PointSet pts = read_points_csv(points);
    const TensorD img = render_ulm(pts, {dataset_grid(m), scale, source_scale, dither, seed});
    write_pgm16(out, gamma_compress(img, gamma));
    auto raw = out;
    raw.replace_extension(".rtnsr");
    rtnsr::save(raw, img);
    double total = 0.0;
    for (double v : img.values()) total += v;
    s.out << "rendered " << total << " of " << pts.size() << " points into " << img.rows() << "x" << img.cols() << '\n';
}

// ---------------------------------------------------------------------- main

/// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
inline int run(int argc, const char* const* argv, Streams s = {}) {
    CLI::App app{"RF-domain ULM: simulate, train, localize, evaluate"};
    app.require_subcommand(1);
    app.fallthrough();
    int jobs = 0;
    app.add_option("--jobs", jobs, "worker threads (0 = logical cores)")->check(CLI::NonNegativeNumber);

    fs::path config, out, dataset, calib_out, checkpoint, points, gt;
    bool resume = false, dither = false;
    int stop_after = 0;
    std::size_t cal_points = 1000, scale = 1, source_scale = 1;
    std::uint64_t seed = 0;
    double gamma = 0.9;
    std::string matcher = "greedy";
    LocalizeOptions lo;

    auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
    sim->add_option("--config", config)->required();
    sim->add_option("--out", out)->required();

    auto* cal = app.add_subcommand("calibrate", "fit per-wave channel to B-mode affine maps");
    cal->add_option("--dataset", dataset)->required();
    cal->add_option("--out", calib_out, "default: <dataset>/calibration");
    cal->add_option("--points", cal_points)->check(CLI::Range(3, 10000000));
    cal->add_option("--seed", seed);

    auto* trn = app.add_subcommand("train", "train SG-SPCN on a dataset");
    trn->add_option("--config", config)->required();
    trn->add_option("--dataset", dataset)->required();
    trn->add_option("--out", out)->required();
    trn->add_flag("--resume", resume);
    trn->add_option("--stop-after", stop_after, "end this run after N epochs")->check(CLI::NonNegativeNumber);

    auto* loc = app.add_subcommand("localize", "localize scatterers in every dataset frame");
    loc->add_option("--dataset", lo.dataset)->required();
    loc->add_option("--method", lo.method)->required()->check(CLI::IsMember({"sgspcn", "rs", "gauss2d", "lanczos"}));
    loc->add_option("--checkpoint", lo.checkpoint);
    loc->add_option("--out", lo.out)->required();
    loc->add_option("--calibration", lo.calibration, "default: <dataset>/calibration");
    loc->add_option("--threshold", lo.threshold, "sgspcn: heatmap level; others: fraction of the image peak");
    loc->add_option("--threshold-scale", lo.threshold_scale)->check(CLI::PositiveNumber);
    loc->add_option("--clutter-filter", lo.clutter_drop_low, "SVD-drop this many leading components (flag alone: 1)")
        ->expected(0, 1)
        ->default_str("1");
    loc->add_option("--window", lo.window, "NMS window");
    loc->add_option("--eps", lo.eps_wavelengths, "fusion radius in wavelengths")->check(CLI::PositiveNumber);

    auto* ev = app.add_subcommand("evaluate", "score localizations against ground truth");
    ev->add_option("--points", points)->required();
    ev->add_option("--dataset", dataset)->required();
    ev->add_option("--gt", gt, "default: <dataset>/gt_points.csv");
    ev->add_option("--out", out)->required();
    ev->add_option("--matcher", matcher)->check(CLI::IsMember({"greedy", "optimal"}));
    ev->add_option("--scale", scale)->check(CLI::PositiveNumber);

    auto* ren = app.add_subcommand("render", "accumulate localizations into a ULM image");
    ren->add_option("--points", points)->required();
    ren->add_option("--dataset", dataset)->required();
    ren->add_option("--out", out)->required();
    ren->add_option("--scale", scale)->check(CLI::PositiveNumber);
    ren->add_option("--source-scale", source_scale)->check(CLI::PositiveNumber);
    ren->add_flag("--dither", dither);
    ren->add_option("--gamma", gamma)->check(CLI::PositiveNumber);
    ren->add_option("--seed", seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        s.out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        s.out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        s.err << "error: " << e.what() << '\n';
        return 2;
    }
    if (loc->count("--clutter-filter") && lo.clutter_drop_low == 0 && loc->get_option("--clutter-filter")->results().empty()) {
        lo.clutter_drop_low = 1;
    }
    lo.jobs = jobs;

    try {
        if (*sim) cmd_simulate(config, out, jobs, s);
        else if (*cal) cmd_calibrate(dataset, calib_out, cal_points, seed, s);
        else if (*trn) cmd_train(config, dataset, out, resume, jobs, stop_after, s);
        else if (*loc) cmd_localize(lo, s);
        else if (*ev) cmd_evaluate(points, dataset, gt, out, matcher, scale, s);
        else if (*ren) cmd_render(points, dataset, out, scale, source_scale, dither, gamma, seed, s);
    } catch (const ConfigError& e) {
        s.err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const UsageError& e) {
        s.err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        s.err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace rfulm::cli
