#pragma once

#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rfulm/error.hpp"
#include "rfulm/network.hpp"
#include "rfulm/simulator.hpp"

namespace rfulm {

/// Flat `dotted.key = value` file. `#` starts a comment. Every key must be
/// consumed by some reader; leftovers are reported with their line.
class ConfigFile {
public:
    static constexpr int kSchemaVersion = 1;

    static ConfigFile parse(std::istream& is, std::string source = "config") {
        ConfigFile cf;
        cf.source_ = std::move(source);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
            const auto text = trim(line);
            if (text.empty()) continue;
            const auto eq = text.find('=');
            if (eq == std::string::npos) throw cf.error(lineno, "expected 'key = value'");
            const auto key = trim(text.substr(0, eq));
            const auto value = trim(text.substr(eq + 1));
            if (key.empty() || !valid_key(key)) throw cf.error(lineno, "bad key '" + key + "'");
            if (value.empty()) throw cf.error(lineno, "empty value for '" + key + "'");
            if (auto it = cf.entries_.find(key); it != cf.entries_.end()) {
                throw cf.error(lineno, "duplicate key '" + key + "' (first set on line " + std::to_string(it->second.line) + ")");
            }
            cf.entries_[key] = {value, lineno, false};
        }
        const auto v = cf.get<int>("schema_version");
        if (!v) throw ConfigError(cf.source_ + ": missing required field 'schema_version'");
        if (*v != kSchemaVersion) {
            throw cf.error(cf.entries_.at("schema_version").line,
                           "unsupported schema_version " + std::to_string(*v) + ", expected " + std::to_string(kSchemaVersion));
        }
        return cf;
    }

    static ConfigFile load(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot read config: " + path.string());
        return parse(is, path.string());
    }

    [[nodiscard]] bool has(const std::string& key) const { return entries_.count(key) != 0; }

    template <typename T>
    std::optional<T> get(const std::string& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        it->second.used = true;
        try {
            return convert<T>(it->second.value);
        } catch (const std::exception&) {
            throw error(it->second.line, "bad value '" + it->second.value + "' for '" + key + "'");
        }
    }

    template <typename T>
    T get_or(const std::string& key, T fallback) const {
        auto v = get<T>(key);
        return v ? *v : fallback;
    }

    template <typename T>
    T require(const std::string& key) const {
        auto v = get<T>(key);
        if (!v) throw ConfigError(source_ + ": missing required field '" + key + "'");
        return *v;
    }

    /// Line-anchored error for a value that parsed but is out of range.
    [[nodiscard]] ConfigError invalid(const std::string& key, const std::string& why) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? ConfigError(source_ + ": " + key + ": " + why) : error(it->second.line, key + ": " + why);
    }

    /// Throws on the first key no reader asked for.
    void check_all_used() const {
        const Entry* first = nullptr;
        std::string name;
        for (const auto& [k, e] : entries_)
            if (!e.used && (!first || e.line < first->line)) first = &e, name = k;
        if (first) throw error(first->line, "unknown key '" + name + "'");
    }

    /// Marks a whole prefix as consumed (sections read by another command).
    void ignore_prefix(const std::string& prefix) const {
        for (auto& [k, e] : entries_)
            if (k.rfind(prefix, 0) == 0) e.used = true;
    }

    [[nodiscard]] const std::string& source() const { return source_; }

private:
    struct Entry {
        std::string value;
        int line = 0;
        mutable bool used = false;
    };
    std::map<std::string, Entry> entries_;
    std::string source_;

    [[nodiscard]] ConfigError error(int line, const std::string& what) const {
        return ConfigError(source_ + ":" + std::to_string(line) + ": " + what, line);
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    }

    static bool valid_key(const std::string& k) {
        for (char c : k)
            if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.')) return false;
        return k.front() != '.' && k.back() != '.';
    }

    template <typename T>
    static T convert(const std::string& s) {
        if constexpr (std::is_same_v<T, std::string>) {
            return s;
        } else if constexpr (std::is_same_v<T, bool>) {
            if (s == "true" || s == "1") return true;
            if (s == "false" || s == "0") return false;
            throw std::invalid_argument("bool");
        } else if constexpr (std::is_same_v<T, double>) {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument("trailing");
            return v;
        } else if constexpr (std::is_same_v<T, std::vector<double>>) {
            std::vector<double> out;
            std::istringstream is(s);
            for (std::string tok; std::getline(is, tok, ',');) out.push_back(convert<double>(trim(tok)));
            return out;
        } else {
            static_assert(std::is_integral_v<T>);
            T v{};
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || p != s.data() + s.size()) throw std::invalid_argument("int");
            return v;
        }
    }
};

/// Dataset generation: `seed` plus dataset.*, array.*, acq.*, region.*.
inline DatasetConfig dataset_config(const ConfigFile& cf) {
    DatasetConfig c;
    c.seed = cf.require<std::uint64_t>("seed");
    c.n_frames = cf.require<std::size_t>("dataset.n_frames");
    c.min_scatterers = cf.get_or("dataset.min_scatterers", c.min_scatterers);
    c.max_scatterers = cf.get_or("dataset.max_scatterers", c.max_scatterers);
    c.angles_deg = cf.get_or("dataset.angles_deg", c.angles_deg);
    c.R = cf.get_or("dataset.R", c.R);
    if (auto snr = cf.get<std::string>("dataset.snr_db"); snr && *snr != "inf") c.snr_db = cf.get<double>("dataset.snr_db");
    c.store_f64 = cf.get_or("dataset.store_f64", c.store_f64);
    if (auto flow = cf.get<std::string>("dataset.flow")) {
        try {
            c.flow = parse_flow(*flow);
        } catch (const ArgumentError& e) {
            throw cf.invalid("dataset.flow", e.what());
        }
    }
    c.tubes = cf.get_or("dataset.tubes", c.tubes);
    c.tube_radius = cf.get_or("dataset.tube_radius_m", c.tube_radius);
    c.peak_velocity = cf.get_or("dataset.peak_velocity", c.peak_velocity);
    c.frame_interval = cf.get_or("dataset.frame_interval", c.frame_interval);
    const auto elements = cf.get_or<std::size_t>("array.elements", c.geom.size());
    const double pitch = cf.get_or("array.pitch_m", c.geom.pitch);
    c.geom = ArrayGeometry::linear(elements, pitch);
    c.acq.speed_of_sound = cf.get_or("acq.speed_of_sound", c.acq.speed_of_sound);
    c.acq.sample_rate = cf.get_or("acq.sample_rate", c.acq.sample_rate);
    c.acq.center_frequency = cf.get_or("acq.center_frequency", c.acq.center_frequency);
    c.acq.relative_bandwidth = cf.get_or("acq.relative_bandwidth", c.acq.relative_bandwidth);
    c.acq.samples = cf.get_or("acq.samples", c.acq.samples);
    c.acq.rf_decimation = cf.get_or("acq.rf_decimation", c.acq.rf_decimation);
    const auto ymin = cf.get<double>("region.y_min"), ymax = cf.get<double>("region.y_max");
    const auto zmin = cf.get<double>("region.z_min"), zmax = cf.get<double>("region.z_max");
    if (ymin || ymax || zmin || zmax) {
        ImagingRegion r = ImagingRegion::for_array(c.geom);
        r.y_min = ymin.value_or(r.y_min);
        r.y_max = ymax.value_or(r.y_max);
        r.z_min = zmin.value_or(r.z_min);
        r.z_max = zmax.value_or(r.z_max);
        c.region = r;
    }
    try {
        c.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(cf.source() + ": " + e.what());
    }
    return c;
}

/// Network shape from network.*; unset keys keep the in-silico defaults.
inline SgSpcnConfig network_config(const ConfigFile& cf) {
    SgSpcnConfig c = SgSpcnConfig::in_silico();
    c.features = cf.get_or("network.features", c.features);
    c.R = cf.get_or("network.R", c.R);
    c.G = cf.get_or("network.G", c.G);
    c.k_in = cf.get_or("network.k_in", c.k_in);
    c.k_sg = cf.get_or("network.k_sg", c.k_sg);
    c.k_mid = cf.get_or("network.k_mid", c.k_mid);
    c.k_out = cf.get_or("network.k_out", c.k_out);
    c.res_pairs = cf.get_or("network.res_pairs", c.res_pairs);
    c.leaky_slope = cf.get_or("network.leaky_slope", c.leaky_slope);
    if (auto m = cf.get<std::string>("network.resample")) {
        try {
            c.resample = parse_resample_mode(*m);
        } catch (const Error& e) {
            throw cf.invalid("network.resample", e.what());
        }
    }
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(cf.source() + ": " + e.what());
    }
    return c;
}

enum class Precision { F32, F64 };

struct TrainSettings {
    SgSpcnConfig net;
    TrainConfig train;
    Precision precision = Precision::F32;
};

/// `seed` plus network.*, train.* and augment.*.
inline TrainSettings train_settings(const ConfigFile& cf) {
    TrainSettings s;
    s.net = network_config(cf);
    auto& t = s.train;
    t.seed = cf.require<std::uint64_t>("seed");
    t.epochs = cf.get_or("train.epochs", t.epochs);
    t.batch = cf.get_or("train.batch", t.batch);
    t.lr0 = cf.get_or("train.lr0", t.lr0);
    t.weight_decay = cf.get_or("train.weight_decay", t.weight_decay);
    t.lambda1 = cf.get_or("train.lambda1", t.lambda1);
    t.anneal_sigma = cf.get_or("train.anneal_sigma", t.anneal_sigma);
    t.sigma_start = cf.get_or("train.sigma_start", t.sigma_start);
    t.sigma_end = cf.get_or("train.sigma_end", t.sigma_end);
    t.val_fraction = cf.get_or("train.val_fraction", t.val_fraction);
    t.max_frames = cf.get_or("train.max_frames", t.max_frames);
    if (auto p = cf.get<std::string>("train.precision")) {
        if (*p == "f32") s.precision = Precision::F32;
        else if (*p == "f64") s.precision = Precision::F64;
        else throw cf.invalid("train.precision", "expected f32 or f64");
    }
    auto& a = t.augment;
    if (!cf.get_or("augment.enabled", true)) a = AugmentOptions::none();
    a.crop_rows = cf.get_or("augment.crop_rows", a.crop_rows);
    a.crop_cols = cf.get_or("augment.crop_cols", a.crop_cols);
    a.p_flip = cf.get_or("augment.p_flip", a.p_flip);
    a.p_rotate = cf.get_or("augment.p_rotate", a.p_rotate);
    a.max_rotation_deg = cf.get_or("augment.max_rotation_deg", a.max_rotation_deg);
    a.p_blur = cf.get_or("augment.p_blur", a.p_blur);
    a.blur_sigma_min = cf.get_or("augment.blur_sigma_min", a.blur_sigma_min);
    a.blur_sigma_max = cf.get_or("augment.blur_sigma_max", a.blur_sigma_max);
    if (auto snr = cf.get<std::string>("augment.snr_db")) {
        if (*snr == "off") a.snr_db.reset();
        else a.snr_db = cf.get<double>("augment.snr_db");
    }
    a.renormalize = cf.get_or("augment.renormalize", a.renormalize);
    try {
        t.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(cf.source() + ": " + e.what());
    }
    return s;
}

}  // namespace rfulm
