#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rfulm/numerics/conv.hpp"
#include "rfulm/numerics/kernels.hpp"
#include "rfulm/numerics/resample.hpp"
#include "rfulm/numerics/tensor.hpp"

namespace rfulm {

/// Architecture hyper-parameters.
///
/// Layer graph (all convolutions same-padded):
///   a1 = relu(conv_in(x))                            k_in, C -> F
///   d  = resample(a1, 1/G)
///   b  = lrelu(conv_sg2(lrelu(conv_sg1(d))))        k_sg, F -> F*S -> F
///   h0 = a1 + resample(b, x G)
///   h  = h0; repeat res_pairs times:
///        t = relu(conv_a(h)); h = conv_b(t) + t      k_mid, F -> F
///   g  = conv_fuse(h) + h0                           k_mid, F -> F
///   y  = pixel_shuffle(conv_head(g), R)              k_out, F -> R^2
/// with S = max(1, floor(G / 10)).
struct SgSpcnConfig {
    std::size_t in_channels = 2;
    std::size_t features = 64;
    std::size_t R = 8;
    std::size_t G = 16;
    std::size_t k_in = 9;
    std::size_t k_sg = 5;
    std::size_t k_mid = 3;
    std::size_t k_out = 3;
    std::size_t res_pairs = 5;
    ResampleMode resample = ResampleMode::Bilinear;
    double leaky_slope = 0.01;

    /// Parameter count of the default in-silico configuration.
    static constexpr std::size_t kInSilicoParameters = 658496;

    static SgSpcnConfig in_silico() { return {}; }

    [[nodiscard]] std::size_t bottleneck() const { return features * std::max<std::size_t>(1, G / 10); }

    void validate() const {
        for (auto k : {k_in, k_sg, k_mid, k_out}) {
            if (k % 2 == 0) throw ConfigError("network: kernel sizes must be odd");
        }
        if (in_channels < 1 || features < 1 || R < 1 || G < 1) {
            throw ConfigError("network: channels, features, R and G must be >= 1");
        }
    }

    [[nodiscard]] bool operator==(const SgSpcnConfig&) const = default;
};

template <typename T>
struct ConvLayer {
    std::string name;
    Tensor<T> weight;  // F x C x k x k
    Tensor<T> bias;    // F

    [[nodiscard]] std::size_t kernel() const { return weight.dim(2); }
    [[nodiscard]] std::size_t padding() const { return (kernel() - 1) / 2; }
    [[nodiscard]] std::size_t parameters() const { return weight.size() + bias.size(); }
};

/// Per-layer parameter gradients, same layout as the network's layers.
template <typename T>
struct Gradients {
    std::vector<Tensor<T>> weight;
    std::vector<Tensor<T>> bias;

    Gradients& operator+=(const Gradients& o) {
        for (std::size_t i = 0; i < weight.size(); ++i) {
            weight[i] += o.weight[i];
            bias[i] += o.bias[i];
        }
        return *this;
    }
    void scale(T s) {
        for (auto& w : weight) w *= s;
        for (auto& b : bias) b *= s;
    }
    [[nodiscard]] bool all_finite() const {
        for (const auto& w : weight)
            if (!w.all_finite()) return false;
        for (const auto& b : bias)
            if (!b.all_finite()) return false;
        return true;
    }
};

/// Intermediate activations kept by forward for backward.
template <typename T>
struct ForwardCache {
    bool valid = false;
    Tensor<T> x, a1, d, b2, b3, h0;
    std::vector<Tensor<T>> pair_in, pair_t;
    Tensor<T> h_last, g;
};

template <typename T>
class SgSpcn {
public:
    explicit SgSpcn(SgSpcnConfig cfg = {}) : cfg_(cfg) {
        cfg_.validate();
        const std::size_t F = cfg_.features;
        add("conv_in", F, cfg_.in_channels, cfg_.k_in);
        add("conv_sg1", cfg_.bottleneck(), F, cfg_.k_sg);
        add("conv_sg2", F, cfg_.bottleneck(), cfg_.k_sg);
        for (std::size_t p = 0; p < cfg_.res_pairs; ++p) {
            add("conv_mid" + std::to_string(2 * p), F, F, cfg_.k_mid);
            add("conv_mid" + std::to_string(2 * p + 1), F, F, cfg_.k_mid);
        }
        add("conv_fuse", F, F, cfg_.k_mid);
        add("conv_head", cfg_.R * cfg_.R, F, cfg_.k_out);
        if (cfg_ == SgSpcnConfig::in_silico() && parameter_count() != SgSpcnConfig::kInSilicoParameters) {
            throw ConfigError("network: default configuration does not have 658496 parameters");
        }
    }

    [[nodiscard]] const SgSpcnConfig& config() const { return cfg_; }
    [[nodiscard]] std::vector<ConvLayer<T>>& layers() { return layers_; }
    [[nodiscard]] const std::vector<ConvLayer<T>>& layers() const { return layers_; }

    [[nodiscard]] std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += l.parameters();
        return n;
    }

    /// He-uniform weights (bound sqrt(6 / fan_in)), zero biases.
    void init_he_uniform(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        for (auto& l : layers_) {
            const double fan_in = double(l.weight.dim(1) * l.weight.dim(2) * l.weight.dim(3));
            std::uniform_real_distribution<double> u(-std::sqrt(6.0 / fan_in), std::sqrt(6.0 / fan_in));
            for (auto& v : l.weight.values()) v = T(u(rng));
            l.bias.fill(T(0));
        }
    }

    [[nodiscard]] Gradients<T> zero_gradients() const {
        Gradients<T> g;
        for (const auto& l : layers_) {
            g.weight.emplace_back(l.weight.shape());
            g.bias.emplace_back(l.bias.shape());
        }
        return g;
    }

    /// x: C x H x W  ->  1 x RH x RW.
    Tensor<T> forward(const Tensor<T>& x, ForwardCache<T>* cache = nullptr) const {
        if (x.rank() != 3 || x.dim(0) != cfg_.in_channels) {
            throw DimensionError("network: input must be " + std::to_string(cfg_.in_channels) + " x H x W");
        }
        const std::size_t H = x.dim(1), W = x.dim(2);
        if (H < cfg_.G || W < cfg_.G) throw DimensionError("network: input smaller than the semi-global scale");
        const Scale down{1, std::int64_t(cfg_.G)};
        std::size_t li = 0;
        Tensor<T> a1 = conv(li++, x);
        relu(a1);
        Tensor<T> d = resample2d(a1, down.apply(H), down.apply(W), cfg_.resample);
        Tensor<T> b2 = conv(li++, d);
        lrelu(b2);
        Tensor<T> b3 = conv(li++, b2);
        lrelu(b3);
        Tensor<T> h0 = a1 + resample2d(b3, H, W, cfg_.resample);
        Tensor<T> h = h0;
        if (cache) {
            cache->pair_in.clear();
            cache->pair_t.clear();
        }
        for (std::size_t p = 0; p < cfg_.res_pairs; ++p) {
            Tensor<T> t = conv(li++, h);
            relu(t);
            Tensor<T> next = conv(li++, t);
            next += t;
            if (cache) {
                cache->pair_in.push_back(std::move(h));
                cache->pair_t.push_back(std::move(t));
            }
            h = std::move(next);
        }
        Tensor<T> g = conv(li++, h);
        g += h0;
        Tensor<T> y = pixel_shuffle(conv(li++, g), cfg_.R);
        if (cache) {
            cache->x = x;
            cache->a1 = std::move(a1);
            cache->d = std::move(d);
            cache->b2 = std::move(b2);
            cache->b3 = std::move(b3);
            cache->h0 = std::move(h0);
            cache->h_last = std::move(h);
            cache->g = std::move(g);
            cache->valid = true;
        }
        return y;
    }

    /// Reverse-mode gradients of <y, grad_out> for the cached forward pass.
    Gradients<T> backward(const ForwardCache<T>& c, const Tensor<T>& grad_out) const {
        if (!c.valid) throw UsageError("network: backward needs a forward cache");
        const std::size_t H = c.x.dim(1), W = c.x.dim(2);
        if (grad_out.size() != cfg_.R * cfg_.R * H * W) throw DimensionError("network: upstream gradient shape");
        Gradients<T> grads = zero_gradients();
        std::size_t li = layers_.size() - 1;
        const auto back = [&](std::size_t layer, const Tensor<T>& input, const Tensor<T>& gy, bool need_input) {
            auto r = conv2d_backward(input, layers_[layer].weight, gy, 1, layers_[layer].padding(), need_input);
            grads.weight[layer] = std::move(r.kernels);
            grads.bias[layer] = std::move(r.bias);
            return std::move(r.input);
        };
        const Tensor<T> gy = pixel_unshuffle(grad_out.reshaped({1, cfg_.R * H, cfg_.R * W}), cfg_.R);
        Tensor<T> dg = back(li--, c.g, gy, true);
        Tensor<T> dh0 = dg;
        Tensor<T> dh = back(li--, c.h_last, dg, true);
        for (std::size_t p = cfg_.res_pairs; p-- > 0;) {
            // h_out = conv_b(t) + t,  t = relu(conv_a(h_in))
            Tensor<T> dt = back(li--, c.pair_t[p], dh, true);
            dt += dh;
            relu_backward(dt, c.pair_t[p]);
            dh = back(li--, c.pair_in[p], dt, true);
        }
        dh0 += dh;
        Tensor<T> da1 = dh0;
        Tensor<T> db3 = resample2d_backward(dh0, c.b3.rows(), c.b3.cols(), cfg_.resample);
        lrelu_backward(db3, c.b3);
        Tensor<T> db2 = back(li--, c.b2, db3, true);
        lrelu_backward(db2, c.b2);
        Tensor<T> dd = back(li--, c.d, db2, true);
        da1 += resample2d_backward(dd, H, W, cfg_.resample);
        relu_backward(da1, c.a1);
        back(li, c.x, da1, false);
        return grads;
    }

private:
    void add(std::string name, std::size_t out, std::size_t in, std::size_t k) {
        layers_.push_back({std::move(name), Tensor<T>({out, in, k, k}), Tensor<T>({out})});
    }

    Tensor<T> conv(std::size_t i, const Tensor<T>& in) const {
        const auto& l = layers_[i];
        return conv2d(in, l.weight, 1, l.padding(), &l.bias);
    }

    static void relu(Tensor<T>& t) {
        for (auto& v : t.values()) v = v > T(0) ? v : T(0);
    }
    void lrelu(Tensor<T>& t) const {
        const T s = T(cfg_.leaky_slope);
        for (auto& v : t.values()) v = v > T(0) ? v : s * v;
    }
    // Activations are monotone with f(0) = 0, so the output sign selects the branch.
    static void relu_backward(Tensor<T>& g, const Tensor<T>& out) {
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!(out[i] > T(0))) g[i] = T(0);
    }
    void lrelu_backward(Tensor<T>& g, const Tensor<T>& out) const {
        const T s = T(cfg_.leaky_slope);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!(out[i] > T(0))) g[i] *= s;
    }

    SgSpcnConfig cfg_;
    std::vector<ConvLayer<T>> layers_;
};

// ------------------------------------------------------------- checkpoint

inline std::string to_string(ResampleMode m) {
    switch (m) {
        case ResampleMode::Nearest: return "nearest";
        case ResampleMode::Bilinear: return "bilinear";
        case ResampleMode::Bicubic: return "bicubic";
    }
    return "bilinear";
}

inline std::map<std::string, std::string> config_fields(const SgSpcnConfig& c) {
    std::ostringstream slope;
    slope << std::setprecision(17) << c.leaky_slope;
    return {{"in_channels", std::to_string(c.in_channels)}, {"features", std::to_string(c.features)},
            {"R", std::to_string(c.R)},                     {"G", std::to_string(c.G)},
            {"k_in", std::to_string(c.k_in)},               {"k_sg", std::to_string(c.k_sg)},
            {"k_mid", std::to_string(c.k_mid)},             {"k_out", std::to_string(c.k_out)},
            {"res_pairs", std::to_string(c.res_pairs)},     {"resample", to_string(c.resample)},
            {"leaky_slope", slope.str()}};
}

inline SgSpcnConfig config_from_fields(const std::map<std::string, std::string>& f) {
    const auto get = [&](const std::string& k) -> const std::string& {
        auto it = f.find(k);
        if (it == f.end()) throw IoError("checkpoint header: missing " + k);
        return it->second;
    };
    SgSpcnConfig c;
    c.in_channels = std::stoul(get("in_channels"));
    c.features = std::stoul(get("features"));
    c.R = std::stoul(get("R"));
    c.G = std::stoul(get("G"));
    c.k_in = std::stoul(get("k_in"));
    c.k_sg = std::stoul(get("k_sg"));
    c.k_mid = std::stoul(get("k_mid"));
    c.k_out = std::stoul(get("k_out"));
    c.res_pairs = std::stoul(get("res_pairs"));
    c.resample = parse_resample_mode(get("resample"));
    c.leaky_slope = std::stod(get("leaky_slope"));
    return c;
}

}  // namespace rfulm
