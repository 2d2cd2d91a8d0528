#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "rfulm/network.hpp"

namespace rfulm {
namespace {

SgSpcnConfig tiny_config() {
    SgSpcnConfig c;
    c.features = 4;
    c.G = 2;
    c.R = 2;
    return c;
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

// ------------------------------------------------------------------ model

TEST(SgSpcn, DefaultParameterCount) {
    const SgSpcn<float> net;
    EXPECT_EQ(net.parameter_count(), 658496u);
    EXPECT_EQ(net.layers().size(), 15u);
}

TEST(SgSpcn, ConfigValidation) {
    SgSpcnConfig c = tiny_config();
    c.k_mid = 4;
    EXPECT_THROW(SgSpcn<double>{c}, ConfigError);
    c = tiny_config();
    c.R = 0;
    EXPECT_THROW(SgSpcn<double>{c}, ConfigError);
}

TEST(SgSpcn, ZeroWeightsGiveZeroOutput) {
    SgSpcnConfig c = tiny_config();
    c.R = 3;
    const SgSpcn<double> net(c);
    const TensorD y = net.forward(random_tensor({2, 8, 10}, 1));
    EXPECT_EQ(y.shape(), (std::vector<std::size_t>{1, 24, 30}));
    EXPECT_EQ(y.max_abs(), 0.0);
}

TEST(SgSpcn, OutputShapeAndInputChecks) {
    SgSpcnConfig c;
    c.features = 8;
    c.R = 4;
    SgSpcn<float> net(c);
    net.init_he_uniform(3);
    const TensorF y = net.forward(random_tensor({2, 32, 32}, 2).cast<float>());
    EXPECT_EQ(y.shape(), (std::vector<std::size_t>{1, 128, 128}));
    EXPECT_TRUE(y.all_finite());
    EXPECT_THROW(net.forward(TensorF({2, 8, 32})), DimensionError);
    EXPECT_THROW(net.forward(TensorF({3, 32, 32})), DimensionError);
}

TEST(SgSpcn, ForwardIsDeterministic) {
    SgSpcn<double> a(tiny_config()), b(tiny_config());
    a.init_he_uniform(11);
    b.init_he_uniform(11);
    const TensorD x = random_tensor({2, 12, 9}, 5);
    EXPECT_EQ(a.forward(x), b.forward(x));
    EXPECT_EQ(a.forward(x), a.forward(x));
}

// ------------------------------------------------------------- gradients

TEST(SgSpcnBackward, MatchesFiniteDifferencesForEveryParameter) {
    SgSpcn<double> net(tiny_config());
    net.init_he_uniform(7);
    // non-zero biases so every path is exercised
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-0.2, 0.2);
    for (auto& l : net.layers())
        for (auto& v : l.bias.values()) v = u(rng);
    const TensorD x = random_tensor({2, 8, 8}, 9);
    const TensorD r = random_tensor({1, 16, 16}, 10);
    ForwardCache<double> cache;
    net.forward(x, &cache);
    const Gradients<double> g = net.backward(cache, r);

    // piecewise linear in any single parameter, so a wide step costs no accuracy
    const double h = 1e-4;
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::size_t li = 0; li < net.layers().size(); ++li) {
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
                const double a = analytic[i];
                const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
                worst = std::max(worst, rel);
                ++checked;
            }
        }
    }
    EXPECT_EQ(checked, net.parameter_count());
    EXPECT_LT(worst, 1e-4);
}

TEST(SgSpcnBackward, ZeroUpstreamGivesZeroGradients) {
    SgSpcn<double> net(tiny_config());
    net.init_he_uniform(1);
    ForwardCache<double> cache;
    net.forward(random_tensor({2, 8, 8}, 2), &cache);
    const auto g = net.backward(cache, TensorD({1, 16, 16}));
    for (std::size_t i = 0; i < g.weight.size(); ++i) {
        EXPECT_EQ(g.weight[i].max_abs(), 0.0);
        EXPECT_EQ(g.bias[i].max_abs(), 0.0);
    }
}

TEST(SgSpcnBackward, HeadGradientLinearInUpstream) {
    SgSpcn<double> net(tiny_config());
    net.init_he_uniform(4);
    ForwardCache<double> cache;
    net.forward(random_tensor({2, 8, 8}, 5), &cache);
    const TensorD g1 = random_tensor({1, 16, 16}, 6), g2 = random_tensor({1, 16, 16}, 7);
    const auto a = net.backward(cache, g1), b = net.backward(cache, g2), ab = net.backward(cache, g1 + g2);
    const std::size_t head = net.layers().size() - 1;
    for (std::size_t i = 0; i < ab.weight[head].size(); ++i)
        EXPECT_NEAR(ab.weight[head][i], a.weight[head][i] + b.weight[head][i], 1e-12);
    for (std::size_t i = 0; i < ab.bias[head].size(); ++i)
        EXPECT_NEAR(ab.bias[head][i], a.bias[head][i] + b.bias[head][i], 1e-12);
}

TEST(SgSpcnBackward, MissingCacheIsUsageError) {
    SgSpcn<double> net(tiny_config());
    EXPECT_THROW(net.backward(ForwardCache<double>{}, TensorD({1, 16, 16})), UsageError);
}

// -------------------------------------------------------------------- loss

TEST(Loss, ExactFitIsZero) {
    LabelPoints lab{16, 16, {{5, 7}, {11, 3}}};
    const auto k = gaussian_kernel(1.0, gaussian_side_for_scale(4));
    const TensorD blur = blur_label(lab, k);
    const double l0 = label_scale(blur);
    EXPECT_NEAR(l0, 120.0, 1e-12);  // isolated points, unit-peak kernel
    const TensorD pred = blur * l0;
    const auto L = sr_loss(pred, lab, 1.0, 0.0, k.side);
    EXPECT_NEAR(L.value, 0.0, 1e-18);
    EXPECT_LT(L.grad.max_abs(), 1e-12);
}

TEST(Loss, AllOnesOnEmptyLabel) {
    const TensorD pred({12, 10}, 1.0);
    const auto L = sr_loss(pred, TensorD({12, 10}), 1.0, 1e-2, 11);
    EXPECT_NEAR(L.value, 120 * (1 + 1e-2), 1e-9);
    EXPECT_EQ(L.lambda0, 120.0);
    EXPECT_NEAR(L.grad[0], 2.0 + 1e-2, 1e-15);
}

TEST(Loss, OverlappingPointsScaleToPeak) {
    LabelPoints lab{10, 10, {{4, 4}, {4, 5}}};
    const auto k = gaussian_kernel(1.0, 11);
    const TensorD blur = blur_label(lab, k);
    EXPECT_NEAR(blur.max_abs(), 1.0 + std::exp(-0.5), 1e-12);
    EXPECT_NEAR(label_scale(blur) * blur.max_abs(), 120.0, 1e-9);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
    LabelPoints lab{16, 16, {{3, 3}, {8, 12}, {13, 6}}};
    TensorD pred = random_tensor({16, 16}, 3, -50, 50);
    for (auto& v : pred.values())
        if (std::abs(v) < 0.1) v = 1.0;
    const auto L = sr_loss(pred, lab, 1.7, 1e-2, 13);
    double worst = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double keep = pred[i], h = 1e-2;  // loss is quadratic between kinks
        pred[i] = keep + h;
        const double fp = sr_loss(pred, lab, 1.7, 1e-2, 13).value;
        pred[i] = keep - h;
        const double fm = sr_loss(pred, lab, 1.7, 1e-2, 13).value;
        pred[i] = keep;
        const double n = (fp - fm) / (2 * h);
        worst = std::max(worst, std::abs(n - L.grad[i]) / std::max(std::abs(n), 1e-3));
    }
    EXPECT_LT(worst, 1e-6);
    EXPECT_THROW(sr_loss(TensorD({4, 4}), lab, 1.0, 0.0, 11), DimensionError);
}

TEST(SigmaSchedule, EndpointsAndMonotone) {
    EXPECT_DOUBLE_EQ(sigma_schedule(0, 40, 12), 3.5);
    EXPECT_DOUBLE_EQ(sigma_schedule(39, 40, 12), 1.0);
    for (int e = 0; e < 40; ++e) EXPECT_EQ(sigma_schedule(e, 40, 8), 1.0);
    for (int e = 1; e < 40; ++e) EXPECT_LE(sigma_schedule(e, 40, 12), sigma_schedule(e - 1, 40, 12));
    EXPECT_EQ(sigma_schedule(0, 1, 12), 1.0);
}

// ----------------------------------------------------------------- optimizer

TEST(Adam, ZeroGradientsLeaveParameters) {
    SgSpcn<double> net(tiny_config());
    net.init_he_uniform(2);
    const auto before = net.layers()[0].weight;
    auto st = adam_init(net);
    adam_step(net, net.zero_gradients(), st, 1e-3, 0.0);
    EXPECT_EQ(net.layers()[0].weight, before);
}

TEST(Adam, FirstStepHasLearningRateMagnitude) {
    TensorD p({1}, 0.5), g({1}, 3.7), m({1}), v({1});
    long step = 0;
    adam_step<double>({&p}, {&g}, {&m}, {&v}, step, 1e-3, 0.0);
    EXPECT_NEAR(0.5 - p[0], 1e-3, 1e-5);
    EXPECT_EQ(step, 1);
}

TEST(Adam, NonFiniteGradientSkipped) {
    SgSpcn<double> net(tiny_config());
    net.init_he_uniform(2);
    const auto before = net.layers()[3].weight;
    auto st = adam_init(net);
    auto g = net.zero_gradients();
    g.weight[3][0] = std::nan("");
    EXPECT_FALSE(adam_step(net, g, st, 1e-3, 1e-8));
    EXPECT_EQ(st.skipped, 1);
    EXPECT_EQ(st.step, 0);
    EXPECT_EQ(net.layers()[3].weight, before);
}

TEST(Adam, CosineEndpoints) {
    EXPECT_DOUBLE_EQ(cosine_lr(1e-3, 0, 40), 1e-3);
    EXPECT_NEAR(cosine_lr(1e-3, 40, 40), 0.0, 1e-18);
    EXPECT_NEAR(cosine_lr(1e-3, 20, 40), 5e-4, 1e-15);
}

// ---------------------------------------------------------------- augment

TrainingSample random_sample(std::size_t U, std::size_t V, std::size_t R, std::uint64_t seed) {
    TrainingSample s{random_tensor({2, U, V}, seed), {R * U, R * V, {}}};
    std::mt19937_64 rng(seed + 1);
    std::uniform_int_distribution<std::size_t> ur(0, R * (U - 1)), uc(0, R * V - 1);
    for (int i = 0; i < 6; ++i) s.label.ones.push_back({ur(rng), uc(rng)});
    return s;
}

TEST(Augment, NoneIsIdentity) {
    const auto s = random_sample(16, 24, 2, 1);
    const auto a = augment(s, 2, AugmentOptions::none(), 99);
    EXPECT_EQ(a.frame, s.frame);
    EXPECT_EQ(a.label.ones, s.label.ones);
}

TEST(Augment, FlipIsInvolution) {
    const auto s = random_sample(16, 24, 3, 2);
    const auto back = flip_lateral(flip_lateral(s, 3), 3);
    EXPECT_EQ(back.frame, s.frame);
    EXPECT_EQ(back.label.ones, s.label.ones);
}

TEST(Augment, FlipTracksPoints) {
    TrainingSample s{TensorD({1, 10, 4}), {40, 16, {{4 * 2 + 1, 5}}}};
    s.frame(0, 2, 1) = 1.0;
    const auto f = flip_lateral(s, 4);
    EXPECT_EQ(f.frame(0, 7, 1), 1.0);
    // point at element 2.25 maps to 9 - 2.25 = 6.75
    ASSERT_EQ(f.label.ones.size(), 1u);
    EXPECT_EQ(f.label.ones[0][0], 27u);
}

TEST(Augment, CropKeepsInsidePoints) {
    const std::size_t R = 4;
    TrainingSample s{random_tensor({2, 32, 48}, 3), {R * 32, R * 48, {{40, 80}, {60, 100}, {5, 5}}}};
    const auto c = crop_sample(s, R, 8, 16, 16, 16);
    EXPECT_EQ(c.frame(1, 0, 0), s.frame(1, 8, 16));
    ASSERT_EQ(c.label.ones.size(), 2u);
    EXPECT_EQ(c.label.ones[0], (std::array<std::size_t, 2>{8, 16}));
    EXPECT_EQ(c.label.ones[1], (std::array<std::size_t, 2>{28, 36}));
    EXPECT_THROW(crop_sample(s, R, 20, 0, 16, 16), DimensionError);
    AugmentOptions o = AugmentOptions::none();
    o.crop_rows = o.crop_cols = 64;
    EXPECT_THROW(augment(s, R, o, 1), DimensionError);
}

TEST(Augment, LabelCountPreservedForInteriorPoints) {
    // points well inside every crop window survive crop + flip + small rotation
    const std::size_t R = 2;
    AugmentOptions o;
    o.crop_rows = o.crop_cols = 24;
    o.p_flip = 0.5;
    o.p_rotate = 1.0;
    o.p_blur = 0.5;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        TrainingSample s{random_tensor({2, 28, 28}, seed), {56, 56, {{26, 26}, {30, 24}, {24, 32}}}};
        const auto a = augment(s, R, o, seed);
        EXPECT_EQ(a.label.ones.size(), 3u) << seed;
        EXPECT_NEAR(a.frame.max_abs(), 1.0, 1e-12);
    }
}

TEST(Augment, RotationMovesPointWithContent) {
    // a bright pixel and its label follow the same rotation
    const std::size_t R = 1;
    TrainingSample s{TensorD({1, 41, 41}), {41, 41, {{20, 35}}}};
    s.frame(0, 20, 35) = 1.0;
    const auto r = rotate_sample(s, R, 5.0);
    std::size_t br = 0, bc = 0;
    for (std::size_t i = 0; i < 41; ++i)
        for (std::size_t j = 0; j < 41; ++j)
            if (r.frame(0, i, j) > r.frame(0, br, bc)) {
                br = i;
                bc = j;
            }
    ASSERT_EQ(r.label.ones.size(), 1u);
    EXPECT_EQ(r.label.ones[0][0], br);
    EXPECT_EQ(r.label.ones[0][1], bc);
    EXPECT_NE(br, 20u);
}

// ---------------------------------------------------------------- training

TrainingSet synthetic_set(std::size_t n, std::size_t R, std::uint64_t seed) {
    TrainingSet set;
    for (std::size_t i = 0; i < n; ++i) {
        TrainingSample s{TensorD({2, 8, 12}), {R * 8, R * 12, {}}};
        std::mt19937_64 rng(seed + i);
        std::uniform_int_distribution<std::size_t> ur(1, 6), uc(1, 10);
        for (int k = 0; k < 2; ++k) {
            const std::size_t r = ur(rng), c = uc(rng);
            s.label.ones.push_back({R * r, R * c});
            for (long dr = -1; dr <= 1; ++dr)
                for (long dc = -1; dc <= 1; ++dc) {
                    const double w = std::exp(-double(dr * dr + dc * dc));
                    s.frame(0, std::size_t(long(r) + dr), std::size_t(long(c) + dc)) += w;
                    s.frame(1, std::size_t(long(r) + dr), std::size_t(long(c) + dc)) -= 0.5 * w;
                }
        }
        peak_normalize(s.frame);
        set.samples.push_back(std::move(s));
        set.frame_ids.push_back(int(i));
    }
    return set;
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("rfulm_net_" + name);
    std::filesystem::remove_all(p);
    return p;
}

TEST(Train, OneEpochWritesCheckpointAndLog) {
    SgSpcn<float> net(tiny_config());
    net.init_he_uniform(1);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.augment = AugmentOptions::none();
    const auto dir = scratch("one");
    const auto res = train(net, synthetic_set(16, 2, 0), cfg, dir);
    EXPECT_EQ(res.log.size(), 1u);
    EXPECT_EQ(res.val_samples, 1u);
    EXPECT_TRUE(std::filesystem::exists(dir / "best.ckpt"));
    EXPECT_EQ(read_metrics(dir / "metrics.tsv").size(), 1u);
    std::filesystem::remove_all(dir);
}

TEST(Train, OverfitsFourFrames) {
    SgSpcnConfig c = tiny_config();
    c.features = 8;
    SgSpcn<float> net(c);
    net.init_he_uniform(2);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch = 4;
    cfg.lr0 = 1e-2;
    cfg.val_fraction = 0.0;
    cfg.augment = AugmentOptions::none();
    const auto dir = scratch("overfit");
    const auto res = train(net, synthetic_set(4, 2, 10), cfg, dir);
    ASSERT_EQ(res.log.size(), 200u);
    EXPECT_LT(res.log.back().train_loss, 0.01 * res.log.front().train_loss);
    std::filesystem::remove_all(dir);
}

TEST(Train, CheckpointRoundTrip) {
    SgSpcn<double> net(tiny_config());
    net.init_he_uniform(5);
    auto st = adam_init(net);
    st.step = 3;
    st.m.weight[2][1] = 0.25;
    const auto dir = scratch("ckpt");
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "a.ckpt", net, &st, 4, 2, 1.5);
    const auto ck = load_checkpoint<double>(dir / "a.ckpt");
    EXPECT_EQ(ck.net.config(), net.config());
    for (std::size_t i = 0; i < net.layers().size(); ++i) EXPECT_EQ(ck.net.layers()[i].weight, net.layers()[i].weight);
    EXPECT_TRUE(ck.has_adam);
    EXPECT_EQ(ck.adam.step, 3);
    EXPECT_EQ(ck.adam.m.weight[2][1], 0.25);
    EXPECT_EQ(ck.epochs_done, 4);
    EXPECT_EQ(ck.best_val, 1.5);
    const TensorD x = random_tensor({2, 8, 8}, 6);
    EXPECT_EQ(infer(ck.net, x), infer(net, x));
    std::filesystem::remove_all(dir);
}

TEST(Train, ResumeRepeatsUninterruptedRun) {
    const TrainingSet data = synthetic_set(10, 2, 20);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 4;
    cfg.seed = 9;
    cfg.augment.crop_rows = cfg.augment.crop_cols = 6;
    cfg.augment.p_rotate = 0.5;
    cfg.augment.p_blur = 0.5;

    SgSpcn<double> full(tiny_config());
    full.init_he_uniform(3);
    const auto d1 = scratch("full");
    const auto a = train(full, data, cfg, d1);

    const auto d2 = scratch("part");
    SgSpcn<double> p1(tiny_config());
    p1.init_he_uniform(3);
    std::vector<EpochLog> seen;
    struct Stop {};
    try {
        train(p1, data, cfg, d2, false, [&](const EpochLog& r) {
            seen.push_back(r);
            if (r.epoch == 0) throw Stop{};
        });
    } catch (const Stop&) {
    }
    ASSERT_EQ(seen.size(), 1u);
    SgSpcn<double> p2(tiny_config());
    const auto b = train(p2, data, cfg, d2, true);
    ASSERT_EQ(a.log.size(), 3u);
    ASSERT_EQ(b.log.size(), 3u);
    for (std::size_t e = 0; e < 3; ++e) {
        EXPECT_EQ(a.log[e].train_loss, b.log[e].train_loss) << e;
        EXPECT_EQ(a.log[e].val_loss, b.log[e].val_loss) << e;
    }
    for (std::size_t i = 0; i < full.layers().size(); ++i) EXPECT_EQ(full.layers()[i].weight, p2.layers()[i].weight);
    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);
}

TEST(Train, WorkerCountDoesNotChangeLosses) {
    const TrainingSet data = synthetic_set(12, 2, 40);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 4;
    cfg.augment = AugmentOptions::none();
    std::vector<std::vector<EpochLog>> logs;
    for (int jobs : {1, 3}) {
        cfg.jobs = jobs;
        SgSpcn<double> net(tiny_config());
        net.init_he_uniform(8);
        const auto dir = scratch("jobs" + std::to_string(jobs));
        logs.push_back(train(net, data, cfg, dir).log);
        std::filesystem::remove_all(dir);
    }
    for (std::size_t e = 0; e < 2; ++e) {
        EXPECT_EQ(logs[0][e].train_loss, logs[1][e].train_loss);
        EXPECT_EQ(logs[0][e].val_loss, logs[1][e].val_loss);
    }
}

TEST(Infer, ShapeAndZeroFrame) {
    SgSpcnConfig c = tiny_config();
    c.R = 3;
    SgSpcn<double> net(c);
    net.init_he_uniform(1);
    const TensorD y = infer(net, TensorD({2, 8, 10}));
    EXPECT_EQ(y.shape(), (std::vector<std::size_t>{24, 30}));
    for (double v : y.values()) EXPECT_GE(v, 0.0);
    EXPECT_THROW(infer(net, TensorD({1, 8, 10})), DimensionError);
}

}  // namespace
}  // namespace rfulm
