#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "rfulm/network/augment.hpp"
#include "rfulm/network/loss.hpp"
#include "rfulm/network/model.hpp"
#include "rfulm/network/optim.hpp"
#include "rfulm/parallel.hpp"
#include "rfulm/random.hpp"
#include "rfulm/simulator.hpp"

namespace rfulm {

// ------------------------------------------------------------- checkpoint

template <typename T>
struct Checkpoint {
    SgSpcn<T> net;
    AdamState<T> adam;
    bool has_adam = false;
    int epochs_done = 0;
    int best_epoch = -1;
    double best_val = std::numeric_limits<double>::infinity();
};

/// Text header (config, layer shapes, counters) terminated by "end", then
/// RTNSR1 records: per layer weight and bias, followed by Adam m and v when present.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const SgSpcn<T>& net, const AdamState<T>* adam,
                     int epochs_done, int best_epoch, double best_val) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw IoError("cannot write checkpoint: " + path.string());
        os << "rfulm-checkpoint 1\n";
        os << "dtype " << (std::is_same_v<T, float> ? "f32" : "f64") << '\n';
        for (const auto& [k, v] : config_fields(net.config())) os << "config." << k << ' ' << v << '\n';
        os << "epochs_done " << epochs_done << '\n';
        os << "best_epoch " << best_epoch << '\n';
        os << "best_val " << format_double(best_val) << '\n';
        os << "adam " << (adam ? 1 : 0) << '\n';
        if (adam) os << "adam_step " << adam->step << "\nadam_skipped " << adam->skipped << '\n';
        for (const auto& l : net.layers()) {
            os << "layer " << l.name;
            for (auto e : l.weight.shape()) os << ' ' << e;
            os << '\n';
        }
        os << "end\n";
        for (const auto& l : net.layers()) {
            rtnsr::write(os, l.weight);
            rtnsr::write(os, l.bias);
        }
        if (adam) {
            for (const Gradients<T>* g : {&adam->m, &adam->v})
                for (std::size_t i = 0; i < g->weight.size(); ++i) {
                    rtnsr::write(os, g->weight[i]);
                    rtnsr::write(os, g->bias[i]);
                }
        }
        if (!os) throw IoError("checkpoint write failed: " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read checkpoint: " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != "rfulm-checkpoint 1") throw IoError("not a checkpoint: " + path.string());
    std::map<std::string, std::string> cfg, kv;
    std::vector<std::pair<std::string, std::vector<std::size_t>>> shapes;
    while (std::getline(is, line) && line != "end") {
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "layer") {
            std::string name;
            ls >> name;
            std::vector<std::size_t> shape;
            for (std::size_t e; ls >> e;) shape.push_back(e);
            shapes.emplace_back(name, shape);
        } else if (key.rfind("config.", 0) == 0) {
            ls >> cfg[key.substr(7)];
        } else {
            ls >> kv[key];
        }
    }
    if (line != "end") throw IoError("checkpoint header not terminated: " + path.string());
    Checkpoint<T> ck{SgSpcn<T>(config_from_fields(cfg)), {}, false, 0, -1, 0.0};
    auto& layers = ck.net.layers();
    if (shapes.size() != layers.size()) throw IoError("checkpoint: layer count does not match its config");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (shapes[i].second != layers[i].weight.shape()) throw IoError("checkpoint: layer shape mismatch at " + shapes[i].first);
        const auto bias_shape = layers[i].bias.shape();
        layers[i].weight = rtnsr::read<T>(is);
        layers[i].bias = rtnsr::read<T>(is);
        if (layers[i].weight.shape() != shapes[i].second || layers[i].bias.shape() != bias_shape) {
            throw IoError("checkpoint: tensor shape mismatch at " + shapes[i].first);
        }
    }
    ck.epochs_done = std::stoi(kv.at("epochs_done"));
    ck.best_epoch = std::stoi(kv.at("best_epoch"));
    ck.best_val = std::stod(kv.at("best_val"));
    ck.has_adam = kv.at("adam") == "1";
    if (ck.has_adam) {
        ck.adam = adam_init(ck.net);
        ck.adam.step = std::stol(kv.at("adam_step"));
        ck.adam.skipped = std::stol(kv.at("adam_skipped"));
        for (Gradients<T>* g : {&ck.adam.m, &ck.adam.v})
            for (std::size_t i = 0; i < g->weight.size(); ++i) {
                g->weight[i] = rtnsr::read<T>(is);
                g->bias[i] = rtnsr::read<T>(is);
            }
    }
    return ck;
}

// ---------------------------------------------------------------- inference

/// Heatmap (RU x RV) of one C x U x V frame.
template <typename T>
Tensor<T> infer(const SgSpcn<T>& net, const Tensor<T>& frame) {
    if (frame.rank() != 3 || frame.dim(0) != net.config().in_channels) {
        throw DimensionError("infer: frame does not match the network's input channels");
    }
    const Tensor<T> y = net.forward(frame);
    return y.reshaped({y.rows(), y.cols()});
}

// ----------------------------------------------------------------- training

struct TrainConfig {
    int epochs = 40;
    std::size_t batch = 16;
    double lr0 = 1e-3;
    double weight_decay = 1e-8;
    double lambda1 = 1e-2;
    bool anneal_sigma = true;
    double sigma_start = 3.5, sigma_end = 1.0;
    AugmentOptions augment;
    std::uint64_t seed = 0;
    double val_fraction = 0.1;
    std::size_t max_frames = 0;  // 0 = every manifest frame
    int jobs = 1;

    void validate() const {
        if (epochs < 1 || epochs > 10000) throw ConfigError("train: epochs must be >= 1");
        if (batch < 1) throw ConfigError("train: batch must be >= 1");
        if (!(lr0 > 0.0) || weight_decay < 0.0 || lambda1 < 0.0) throw ConfigError("train: lr0 > 0, weight_decay and lambda1 >= 0");
        if (!(sigma_end > 0.0) || sigma_end > sigma_start) throw ConfigError("train: need 0 < sigma_end <= sigma_start");
        if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("train: val_fraction must be in [0, 1)");
    }

    [[nodiscard]] double sigma(int epoch, std::size_t R) const {
        return anneal_sigma ? sigma_schedule(epoch, epochs, int(R), sigma_start, sigma_end) : sigma_end;
    }
};

struct EpochLog {
    int epoch = 0;
    double lr = 0.0, sigma = 0.0, train_loss = 0.0, val_loss = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    int best_epoch = -1;
    double best_val = std::numeric_limits<double>::infinity();
    bool diverged = false;
    std::size_t train_samples = 0, val_samples = 0;
};

struct TrainingSet {
    std::vector<TrainingSample> samples;
    std::vector<int> frame_ids;
};

/// Frames and sparse labels of a manifest, in manifest order.
inline TrainingSet load_training_set(const Manifest& m, std::size_t max_frames = 0) {
    TrainingSet set;
    std::set<int> frames;
    for (const auto& e : m.entries) {
        if (max_frames && !frames.count(e.frame_id) && frames.size() >= max_frames) continue;
        frames.insert(e.frame_id);
        const TensorD lab = rtnsr::load<double>(m.dir / e.label_path);
        if (lab.rank() != 2 || lab.dim(1) != 2) throw IoError("label file: expected an (n+1) x 2 tensor: " + e.label_path);
        TrainingSample s{load_frame<double>(m, e), {std::size_t(lab(0, 0)), std::size_t(lab(0, 1)), {}}};
        for (std::size_t i = 1; i < lab.dim(0); ++i) s.label.ones.push_back({std::size_t(lab(i, 0)), std::size_t(lab(i, 1))});
        set.samples.push_back(std::move(s));
        set.frame_ids.push_back(e.frame_id);
    }
    if (set.samples.empty()) throw IoError("dataset has no frames: " + m.dir.string());
    return set;
}

/// Frame-level split: every wave of a frame lands on the same side.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_train_val(const std::vector<int>& frame_ids,
                                                                                   double val_fraction, std::uint64_t seed) {
    std::vector<int> ids(frame_ids);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    std::mt19937_64 rng(derive_seed(seed, {0x73706c6974ULL}));
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t n_val = std::size_t(std::floor(val_fraction * double(ids.size())));
    const std::set<int> val(ids.begin(), ids.begin() + long(n_val));
    std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < frame_ids.size(); ++i) (val.count(frame_ids[i]) ? out.second : out.first).push_back(i);
    return out;
}

template <typename T>
struct SampleResult {
    double loss = 0.0;
    Gradients<T> grads;
};

template <typename T>
SampleResult<T> sample_gradient(const SgSpcn<T>& net, const TrainingSample& s, double sigma, double lambda1) {
    ForwardCache<T> cache;
    const Tensor<T> y = net.forward(s.frame.cast<T>(), &cache);
    const auto L = sr_loss(y, s.label, sigma, lambda1, gaussian_side_for_scale(net.config().R));
    return {L.value, net.backward(cache, L.grad)};
}

template <typename T>
double sample_loss(const SgSpcn<T>& net, const TrainingSample& s, double sigma, double lambda1) {
    const Tensor<T> y = net.forward(s.frame.cast<T>());
    return sr_loss(y, s.label, sigma, lambda1, gaussian_side_for_scale(net.config().R)).value;
}

inline void write_metrics(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write metrics: " + path.string());
    os << "epoch\tlr\tsigma\ttrain_loss\tval_loss\n";
    for (const auto& r : log) {
        os << r.epoch << '\t' << format_double(r.lr) << '\t' << format_double(r.sigma) << '\t' << format_double(r.train_loss)
           << '\t' << format_double(r.val_loss) << '\n';
    }
}

inline std::vector<EpochLog> read_metrics(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read metrics: " + path.string());
    std::vector<EpochLog> out;
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        EpochLog r;
        if (ls >> r.epoch >> r.lr >> r.sigma >> r.train_loss >> r.val_loss) out.push_back(r);
    }
    return out;
}

/// Mini-batch training. Writes best.ckpt, last.ckpt and metrics.tsv into
/// `out_dir`. With `resume`, continues from out_dir/last.ckpt. Per-epoch
/// shuffles and per-sample augmentation draws come from (seed, epoch), so a
/// resumed run repeats the uninterrupted run exactly. Without validation
/// frames the validation loss is the un-augmented training loss.
template <typename T>
TrainResult train(SgSpcn<T>& net, const TrainingSet& data, const TrainConfig& cfg, const std::filesystem::path& out_dir,
                  bool resume = false, const std::function<void(const EpochLog&)>& on_epoch = {}) {
    cfg.validate();
    const std::size_t R = net.config().R;
    for (const auto& s : data.samples) detail::check_sample(s, R);
    std::filesystem::create_directories(out_dir);
    const auto best_path = out_dir / "best.ckpt", last_path = out_dir / "last.ckpt", metrics_path = out_dir / "metrics.tsv";

    TrainResult res;
    AdamState<T> adam = adam_init(net);
    int start = 0;
    if (resume && std::filesystem::exists(last_path)) {
        Checkpoint<T> ck = load_checkpoint<T>(last_path);
        if (!(ck.net.config() == net.config())) throw ConfigError("train: checkpoint config does not match the network config");
        net = std::move(ck.net);
        if (ck.has_adam) adam = std::move(ck.adam);
        start = ck.epochs_done;
        res.best_epoch = ck.best_epoch;
        res.best_val = ck.best_val;
        if (std::filesystem::exists(metrics_path)) res.log = read_metrics(metrics_path);
        res.log.resize(std::min<std::size_t>(res.log.size(), std::size_t(start)));
    }

    const auto [train_idx, val_idx] = split_train_val(data.frame_ids, cfg.val_fraction, cfg.seed);
    if (train_idx.empty()) throw ArgumentError("train: no training frames after the split");
    res.train_samples = train_idx.size();
    res.val_samples = val_idx.size();

    for (int e = start; e < cfg.epochs; ++e) {
        EpochLog row{e, cosine_lr(cfg.lr0, e, cfg.epochs), cfg.sigma(e, R), 0.0, 0.0};
        std::vector<std::size_t> order = train_idx;
        std::mt19937_64 rng(derive_seed(cfg.seed, {0x65706f6368ULL, std::uint64_t(e)}));
        std::shuffle(order.begin(), order.end(), rng);

        double train_sum = 0.0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
            const std::size_t n = std::min(cfg.batch, order.size() - b0);
            std::vector<SampleResult<T>> parts(n);
            parallel_for(n, cfg.jobs, [&](std::size_t i) {
                const std::size_t k = order[b0 + i];
                const auto seed = derive_seed(cfg.seed, {0x61756775ULL, std::uint64_t(e), std::uint64_t(k)});
                parts[i] = sample_gradient(net, augment(data.samples[k], R, cfg.augment, seed), row.sigma, cfg.lambda1);
            });
            Gradients<T> g = std::move(parts[0].grads);
            train_sum += parts[0].loss;
            for (std::size_t i = 1; i < n; ++i) {
                g += parts[i].grads;
                train_sum += parts[i].loss;
            }
            g.scale(T(1.0 / double(n)));
            adam_step(net, g, adam, row.lr, cfg.weight_decay);
        }
        row.train_loss = train_sum / double(order.size());

        const auto& vset = val_idx.empty() ? train_idx : val_idx;
        std::vector<double> vl(vset.size());
        parallel_for(vset.size(), cfg.jobs, [&](std::size_t i) {
            vl[i] = sample_loss(net, data.samples[vset[i]], row.sigma, cfg.lambda1);
        });
        row.val_loss = std::accumulate(vl.begin(), vl.end(), 0.0) / double(vl.size());

        if (!std::isfinite(row.val_loss) || !std::isfinite(row.train_loss)) {
            res.diverged = true;
            if (std::filesystem::exists(last_path)) net = load_checkpoint<T>(last_path).net;
            break;
        }
        res.log.push_back(row);
        if (row.val_loss < res.best_val) {
            res.best_val = row.val_loss;
            res.best_epoch = e;
            save_checkpoint(best_path, net, static_cast<const AdamState<T>*>(nullptr), e + 1, res.best_epoch, res.best_val);
        }
        save_checkpoint(last_path, net, &adam, e + 1, res.best_epoch, res.best_val);
        write_metrics(metrics_path, res.log);
        if (on_epoch) on_epoch(row);
    }
    return res;
}

template <typename T>
TrainResult train(SgSpcn<T>& net, const Manifest& m, const TrainConfig& cfg, const std::filesystem::path& out_dir,
                  bool resume = false, const std::function<void(const EpochLog&)>& on_epoch = {}) {
    if (std::size_t(m.scale()) != net.config().R) throw ConfigError("train: dataset R does not match the network R");
    return train(net, load_training_set(m, cfg.max_frames), cfg, out_dir, resume, on_epoch);
}

}  // namespace rfulm
