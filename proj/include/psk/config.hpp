#pragma once

// TrainConfig and its flat "key = value" text form (# starts a comment).

#include "psk/estimator.hpp"
#include "psk/losses.hpp"
#include "psk/scene.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace psk {

struct TrainConfig {
    std::uint64_t seed = 1;
    RepresentationKind kind = RepresentationKind::Sparse;
    int batch_size = 16;

    // stage 0: synthetic pretraining, first layer frozen
    double lr_stage0 = 1e-3;
    double lr_stage0_decay = 0.1;   // applied once after lr_stage0_step epochs
    int lr_stage0_step = 20;
    bool freeze_first_layer = true;
    int epochs_stage0 = 25;

    // stage 1: 1e-5 for 15 epochs, then 1e-6 for 10
    double lr_stage1a = 1e-5;
    int epochs_stage1a = 15;
    double lr_stage1b = 1e-6;
    int epochs_stage1b = 10;

    // stage 2: 1e-4, x0.1 every 25 epochs
    double lr_stage2 = 1e-4;
    double lr_stage2_decay = 0.1;
    int lr_stage2_step = 25;
    int epochs_stage2 = 25;

    CropSettings crop;
    OcclusionSettings occlusion;
    LossWeights weights;
    double lambda_warp = 1.0;
    bool warp_source_grad = true;      // false: pose gradient of the warp loss only reaches the target view
    double synthetic_ratio = 1.0;      // synthetic images per pseudo-real image in stage 1
    bool grad_through_silhouette = true;
    double silhouette_sigma = 1.0;
    double huber_delta = 0.0;          // 0 = default for the representation kind

    double pair_angle_max_deg = 60.0;
    int pairs_per_batch = 25;
    int pair_pool = 25;

    double max_skip_fraction = 0.5;
    int threads = 1;

    int total_epochs_stage1() const { return epochs_stage1a + epochs_stage1b; }
    double delta() const { return huber_delta > 0 ? huber_delta : default_huber_delta(kind); }

    double lr_stage0_at(int epoch) const { return epoch < lr_stage0_step ? lr_stage0 : lr_stage0 * lr_stage0_decay; }
    double lr_stage1(int epoch) const { return epoch < epochs_stage1a ? lr_stage1a : lr_stage1b; }
    double lr_stage2_at(int epoch) const
    {
        return lr_stage2 * std::pow(lr_stage2_decay, static_cast<double>(epoch / std::max(1, lr_stage2_step)));
    }

    void validate() const
    {
        auto need = [](bool ok, const std::string& what) {
            if (!ok) fail(ErrorCode::ConfigError, what);
        };
        need(batch_size >= 1, "batch_size must be >= 1");
        for (double lr : {lr_stage0, lr_stage1a, lr_stage1b, lr_stage2}) need(lr > 0, "learning rates must be > 0");
        need(lr_stage2_decay > 0 && lr_stage2_decay <= 1 && lr_stage0_decay > 0 && lr_stage0_decay <= 1,
             "lr decays must be in (0, 1]");
        need(lr_stage2_step >= 1, "lr_stage2_step must be >= 1");
        need(epochs_stage0 >= 1 && epochs_stage1a >= 0 && epochs_stage1b >= 0 && total_epochs_stage1() >= 1 &&
                 epochs_stage2 >= 1,
             "every stage needs at least one epoch");
        need(crop.crop_factor > 0 && crop.center_sigma >= 0, "crop_factor must be > 0, bbox_center_sigma >= 0");
        need(crop.scale_lo > 0 && crop.scale_lo <= crop.scale_hi, "crop scale range is empty");
        need(pair_angle_max_deg > 0 && pair_angle_max_deg <= 180, "pair_angle_max must be in (0, 180]");
        need(pairs_per_batch >= 1 && pair_pool >= 2, "pairs_per_batch >= 1 and pair_pool >= 2");
        need(lambda_warp >= 0 && synthetic_ratio >= 0, "lambda_warp and synthetic_ratio must be >= 0");
        need(max_skip_fraction >= 0 && max_skip_fraction <= 1, "max_skip_fraction must be in [0, 1]");
        need(threads >= 1, "threads must be >= 1");
        weights.validate();
    }
};

namespace detail {

struct ConfigField {
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

template <class T>
T parse_value(const std::string& key, const std::string& v)
{
    std::istringstream in(v);
    T out{};
    if constexpr (std::is_same_v<T, bool>) {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        fail(ErrorCode::ConfigError, "key '" + key + "': expected true/false, got '" + v + "'");
    } else {
        in >> out;
        if (!in || !(in >> std::ws).eof()) fail(ErrorCode::ConfigError, "key '" + key + "': cannot parse '" + v + "'");
    }
    return out;
}

template <class T>
std::string format_value(const T& v)
{
    std::ostringstream os;
    if constexpr (std::is_same_v<T, bool>)
        os << (v ? "true" : "false");
    else {
        os.precision(17);
        os << v;
    }
    return os.str();
}

template <class T>
ConfigField field(T TrainConfig::*member)
{
    return {[member](TrainConfig& c, const std::string& v) { c.*member = parse_value<T>("", v); },
            [member](const TrainConfig& c) { return format_value(c.*member); }};
}

template <class S, class T>
ConfigField nested(S TrainConfig::*outer, T S::*inner)
{
    return {[=](TrainConfig& c, const std::string& v) { (c.*outer).*inner = parse_value<T>("", v); },
            [=](const TrainConfig& c) { return format_value((c.*outer).*inner); }};
}

inline const std::map<std::string, ConfigField>& config_fields()
{
    static const std::map<std::string, ConfigField> f = [] {
        std::map<std::string, ConfigField> m;
        m["seed"] = field(&TrainConfig::seed);
        m["kind"] = {[](TrainConfig& c, const std::string& v) { c.kind = parse_representation_kind(v); },
                     [](const TrainConfig& c) { return std::string(to_string(c.kind)); }};
        m["batch_size"] = field(&TrainConfig::batch_size);
        m["lr_stage0"] = field(&TrainConfig::lr_stage0);
        m["epochs_stage0"] = field(&TrainConfig::epochs_stage0);
        m["lr_stage0_decay"] = field(&TrainConfig::lr_stage0_decay);
        m["lr_stage0_step"] = field(&TrainConfig::lr_stage0_step);
        m["freeze_first_layer"] = field(&TrainConfig::freeze_first_layer);
        m["lr_stage1a"] = field(&TrainConfig::lr_stage1a);
        m["epochs_stage1a"] = field(&TrainConfig::epochs_stage1a);
        m["lr_stage1b"] = field(&TrainConfig::lr_stage1b);
        m["epochs_stage1b"] = field(&TrainConfig::epochs_stage1b);
        m["lr_stage2"] = field(&TrainConfig::lr_stage2);
        m["lr_stage2_decay"] = field(&TrainConfig::lr_stage2_decay);
        m["lr_stage2_step"] = field(&TrainConfig::lr_stage2_step);
        m["epochs_stage2"] = field(&TrainConfig::epochs_stage2);
        m["crop_factor"] = nested(&TrainConfig::crop, &CropSettings::crop_factor);
        m["bbox_center_sigma"] = nested(&TrainConfig::crop, &CropSettings::center_sigma);
        m["scale_lo"] = nested(&TrainConfig::crop, &CropSettings::scale_lo);
        m["scale_hi"] = nested(&TrainConfig::crop, &CropSettings::scale_hi);
        m["jitter"] = nested(&TrainConfig::crop, &CropSettings::jitter);
        m["augment"] = nested(&TrainConfig::crop, &CropSettings::augment);
        m["black_background_prob"] = nested(&TrainConfig::crop, &CropSettings::black_background_prob);
        m["occlusion_min_patches"] = nested(&TrainConfig::occlusion, &OcclusionSettings::min_patches);
        m["occlusion_max_patches"] = nested(&TrainConfig::occlusion, &OcclusionSettings::max_patches);
        m["occlusion_min_side"] = nested(&TrainConfig::occlusion, &OcclusionSettings::min_side);
        m["occlusion_max_side"] = nested(&TrainConfig::occlusion, &OcclusionSettings::max_side);
        m["lambda_pose"] = nested(&TrainConfig::weights, &LossWeights::lambda_pose);
        m["lambda_sup"] = nested(&TrainConfig::weights, &LossWeights::lambda_sup);
        m["lambda_percep"] = nested(&TrainConfig::weights, &LossWeights::lambda_percep);
        m["lambda_warp"] = field(&TrainConfig::lambda_warp);
        m["warp_source_grad"] = field(&TrainConfig::warp_source_grad);
        m["synthetic_ratio"] = field(&TrainConfig::synthetic_ratio);
        m["grad_through_silhouette"] = field(&TrainConfig::grad_through_silhouette);
        m["silhouette_sigma"] = field(&TrainConfig::silhouette_sigma);
        m["huber_delta"] = field(&TrainConfig::huber_delta);
        m["pair_angle_max"] = field(&TrainConfig::pair_angle_max_deg);
        m["pairs_per_batch"] = field(&TrainConfig::pairs_per_batch);
        m["pair_pool"] = field(&TrainConfig::pair_pool);
        m["max_skip_fraction"] = field(&TrainConfig::max_skip_fraction);
        m["threads"] = field(&TrainConfig::threads);
        return m;
    }();
    return f;
}

inline std::string trim(const std::string& s)
{
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace detail

inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value)
{
    const auto& f = detail::config_fields();
    const auto it = f.find(key);
    if (it == f.end()) fail(ErrorCode::ConfigError, "unknown config key '" + key + "'");
    try {
        it->second.set(cfg, value);
    } catch (const Error& e) {
        fail(ErrorCode::ConfigError, "key '" + key + "': invalid value '" + value + "'");
    }
}

inline TrainConfig parse_config(std::istream& in, TrainConfig cfg = {})
{
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            fail(ErrorCode::ConfigError, "line " + std::to_string(lineno) + ": expected key = value");
        set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

inline TrainConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) fail(ErrorCode::IoError, path + ": cannot open config");
    return parse_config(in);
}

/// Every key with its current value, sorted; parse_config(format_config(c)) == c.
inline std::string format_config(const TrainConfig& cfg)
{
    std::ostringstream os;
    for (const auto& [key, f] : detail::config_fields()) os << key << " = " << f.get(cfg) << "\n";
    return os.str();
}

} // namespace psk
