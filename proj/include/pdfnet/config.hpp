#pragma once

#include <array>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "pdfnet/backbone.hpp"
#include "pdfnet/dataset.hpp"
#include "pdfnet/errors.hpp"
#include "pdfnet/losses.hpp"
#include "pdfnet/network.hpp"

namespace pdfnet {

// Flat run configuration. Every field is representable as a key=value line;
// the same keys are accepted from config files, PDFNET_<UPPERCASE_KEY>
// environment variables, and command-line flags, with later sources taking
// precedence in that order.
struct RunConfig {
    // Paths.
    std::string dataset_root;
    std::string val_root;
    std::string out_dir = "runs/default";
    std::string checkpoint;

    // Geometry and architecture.
    int64_t resolution_h = 1024;
    int64_t resolution_w = 1024;
    int64_t patch_grid = 8;
    double tau = 0.1;
    int64_t token_res = 32;
    int64_t head_count = 4;
    int64_t ffn_ratio = 2;
    int64_t decoder_channels = 64;
    int64_t stem_channels = 32;
    std::string stage_channels = "128,256,512,1024";
    std::string block_depths = "2,2,6,2";
    std::string patch_depths = "1,1,2,1";
    double width_scale = 1.0;
    bool share_patch_encoder = false;
    bool shallow_fusion = true;

    // Ablation gates.
    double gate_context = 1.0;
    double gate_fusion = 1.0;
    double gate_merge = 1.0;

    // Optimization.
    double learning_rate = 1e-5;
    int64_t epochs = 100;
    int64_t batch_size = 1;
    int64_t grad_accum = 1;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;

    // Loss composition.
    double lambda1 = 0.5;
    double lambda2 = 0.1;
    double lambda_silog = 0.85;
    bool use_wbce = true;
    bool use_wiou = true;
    bool use_ssim = true;
    bool use_inte = true;

    // Reproducibility.
    int64_t seed = 42;
    bool deterministic = true;
    int64_t threads = 1;

    // Augmentation.
    bool augment = true;
    double flip_prob = 0.5;
    double max_rotate_deg = 15.0;
    double jitter = 0.2;
    double crop_min_scale = 0.75;

    // Evaluation / logging cadence.
    bool binarize_eval = false;
    int64_t log_every = 1;
    int64_t checkpoint_every = 1;        // epochs
    int64_t checkpoint_every_steps = 0;  // 0 disables step checkpoints
};

namespace detail {

struct ConfigField {
    std::string name;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

inline int64_t parse_int(const std::string& key, const std::string& value) {
    int64_t out = 0;
    auto* first = value.data();
    auto* last = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last) {
        throw ConfigError("invalid integer for " + key + ": '" + value + "'");
    }
    return out;
}

inline double parse_double(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        double out = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("invalid number for " + key + ": '" + value + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("invalid boolean for " + key + ": '" + value + "' (use true/false)");
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline const std::vector<ConfigField>& config_fields() {
    static const std::vector<ConfigField> fields = [] {
        std::vector<ConfigField> f;
        auto add_str = [&f](const char* name, std::string RunConfig::* member) {
            f.push_back({name, [member](const RunConfig& c) { return c.*member; },
                         [member](RunConfig& c, const std::string& v) { c.*member = v; }});
        };
        auto add_int = [&f](const char* name, int64_t RunConfig::* member) {
            f.push_back({name,
                         [member](const RunConfig& c) { return std::to_string(c.*member); },
                         [member, name](RunConfig& c, const std::string& v) {
                             c.*member = parse_int(name, v);
                         }});
        };
        auto add_dbl = [&f](const char* name, double RunConfig::* member) {
            f.push_back({name,
                         [member](const RunConfig& c) { return format_double(c.*member); },
                         [member, name](RunConfig& c, const std::string& v) {
                             c.*member = parse_double(name, v);
                         }});
        };
        auto add_bool = [&f](const char* name, bool RunConfig::* member) {
            f.push_back({name,
                         [member](const RunConfig& c) { return c.*member ? "true" : "false"; },
                         [member, name](RunConfig& c, const std::string& v) {
                             c.*member = parse_bool(name, v);
                         }});
        };

        add_str("dataset_root", &RunConfig::dataset_root);
        add_str("val_root", &RunConfig::val_root);
        add_str("out_dir", &RunConfig::out_dir);
        add_str("checkpoint", &RunConfig::checkpoint);
        add_int("resolution_h", &RunConfig::resolution_h);
        add_int("resolution_w", &RunConfig::resolution_w);
        add_int("patch_grid", &RunConfig::patch_grid);
        add_dbl("tau", &RunConfig::tau);
        add_int("token_res", &RunConfig::token_res);
        add_int("head_count", &RunConfig::head_count);
        add_int("ffn_ratio", &RunConfig::ffn_ratio);
        add_int("decoder_channels", &RunConfig::decoder_channels);
        add_int("stem_channels", &RunConfig::stem_channels);
        add_str("stage_channels", &RunConfig::stage_channels);
        add_str("block_depths", &RunConfig::block_depths);
        add_str("patch_depths", &RunConfig::patch_depths);
        add_dbl("width_scale", &RunConfig::width_scale);
        add_bool("share_patch_encoder", &RunConfig::share_patch_encoder);
        add_bool("shallow_fusion", &RunConfig::shallow_fusion);
        add_dbl("gate_context", &RunConfig::gate_context);
        add_dbl("gate_fusion", &RunConfig::gate_fusion);
        add_dbl("gate_merge", &RunConfig::gate_merge);
        add_dbl("learning_rate", &RunConfig::learning_rate);
        add_int("epochs", &RunConfig::epochs);
        add_int("batch_size", &RunConfig::batch_size);
        add_int("grad_accum", &RunConfig::grad_accum);
        add_dbl("weight_decay", &RunConfig::weight_decay);
        add_dbl("beta1", &RunConfig::beta1);
        add_dbl("beta2", &RunConfig::beta2);
        add_dbl("lambda1", &RunConfig::lambda1);
        add_dbl("lambda2", &RunConfig::lambda2);
        add_dbl("lambda_silog", &RunConfig::lambda_silog);
        add_bool("use_wbce", &RunConfig::use_wbce);
        add_bool("use_wiou", &RunConfig::use_wiou);
        add_bool("use_ssim", &RunConfig::use_ssim);
        add_bool("use_inte", &RunConfig::use_inte);
        add_int("seed", &RunConfig::seed);
        add_bool("deterministic", &RunConfig::deterministic);
        add_int("threads", &RunConfig::threads);
        add_bool("augment", &RunConfig::augment);
        add_dbl("flip_prob", &RunConfig::flip_prob);
        add_dbl("max_rotate_deg", &RunConfig::max_rotate_deg);
        add_dbl("jitter", &RunConfig::jitter);
        add_dbl("crop_min_scale", &RunConfig::crop_min_scale);
        add_bool("binarize_eval", &RunConfig::binarize_eval);
        add_int("log_every", &RunConfig::log_every);
        add_int("checkpoint_every", &RunConfig::checkpoint_every);
        add_int("checkpoint_every_steps", &RunConfig::checkpoint_every_steps);
        return f;
    }();
    return fields;
}

inline const ConfigField* find_field(const std::string& name) {
    for (const auto& f : config_fields()) {
        if (f.name == name) return &f;
    }
    return nullptr;
}

inline std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

}  // namespace detail

// Assigns a single key=value pair; unknown keys are an error.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto* field = detail::find_field(key);
    if (!field) throw ConfigError("unknown config key: '" + key + "'");
    field->set(cfg, value);
}

// Parses key=value lines; '#' starts a comment, blank lines are skipped.
inline void parse_config_text(RunConfig& cfg, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int64_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto stripped = detail::trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" +
                              stripped + "'");
        }
        set_config_value(cfg, detail::trim(stripped.substr(0, eq)),
                         detail::trim(stripped.substr(eq + 1)));
    }
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("config file not found: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    parse_config_text(cfg, buf.str());
}

// Applies PDFNET_<UPPERCASE_KEY> environment variables for every known key.
inline void apply_env_overrides(RunConfig& cfg) {
    for (const auto& field : detail::config_fields()) {
        std::string env_name = "PDFNET_";
        for (char c : field.name) {
            env_name += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        }
        if (const char* value = std::getenv(env_name.c_str())) {
            field.set(cfg, value);
        }
    }
}

// One key=value line per field, in registration order; parsing the output
// reproduces the config exactly.
inline std::string serialize_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& field : detail::config_fields()) {
        out += field.name;
        out += '=';
        out += field.get(cfg);
        out += '\n';
    }
    return out;
}

inline RunConfig parse_config_string(const std::string& text) {
    RunConfig cfg;
    parse_config_text(cfg, text);
    return cfg;
}

namespace detail {

inline std::array<int64_t, 4> parse_four_ints(const std::string& key, const std::string& csv) {
    std::array<int64_t, 4> out{};
    std::istringstream in(csv);
    std::string item;
    size_t n = 0;
    while (std::getline(in, item, ',')) {
        if (n >= 4) throw ConfigError(key + " needs exactly 4 comma-separated values");
        out[n++] = parse_int(key, trim(item));
    }
    if (n != 4) throw ConfigError(key + " needs exactly 4 comma-separated values");
    return out;
}

}  // namespace detail

inline BackboneConfig backbone_config_from(const RunConfig& cfg) {
    BackboneConfig b;
    b.stage_channels = detail::parse_four_ints("stage_channels", cfg.stage_channels);
    b.block_depths = detail::parse_four_ints("block_depths", cfg.block_depths);
    b.stem_channels = cfg.stem_channels;
    b.width_scale = cfg.width_scale;
    b.validate();
    return b;
}

inline NetworkConfig network_config_from(const RunConfig& cfg) {
    NetworkConfig n;
    n.grid = cfg.patch_grid;
    n.tau = cfg.tau;
    n.token_res = cfg.token_res;
    n.head_count = cfg.head_count;
    n.ffn_ratio = cfg.ffn_ratio;
    n.decoder_channels = cfg.decoder_channels;
    n.backbone = backbone_config_from(cfg);
    n.patch_depths = detail::parse_four_ints("patch_depths", cfg.patch_depths);
    n.share_patch_encoder = cfg.share_patch_encoder;
    n.shallow_fusion = cfg.shallow_fusion;
    n.gate_context = cfg.gate_context;
    n.gate_fusion = cfg.gate_fusion;
    n.gate_merge = cfg.gate_merge;
    n.validate();
    if (cfg.resolution_h % n.required_divisor() != 0 ||
        cfg.resolution_w % n.required_divisor() != 0) {
        throw ConfigError("resolution " + std::to_string(cfg.resolution_h) + "x" +
                          std::to_string(cfg.resolution_w) + " must be divisible by " +
                          std::to_string(n.required_divisor()));
    }
    return n;
}

inline AugmentOptions augment_options_from(const RunConfig& cfg) {
    AugmentOptions a;
    a.enabled = cfg.augment;
    a.flip_prob = cfg.flip_prob;
    a.max_rotate_deg = cfg.max_rotate_deg;
    a.jitter = cfg.jitter;
    a.crop_min_scale = cfg.crop_min_scale;
    return a;
}

inline LossToggles loss_toggles_from(const RunConfig& cfg) {
    LossToggles t;
    t.use_wbce = cfg.use_wbce;
    t.use_wiou = cfg.use_wiou;
    t.use_ssim = cfg.use_ssim;
    t.use_inte = cfg.use_inte;
    return t;
}

inline LossWeights loss_weights_from(const RunConfig& cfg) {
    LossWeights w;
    w.lambda1 = cfg.lambda1;
    w.lambda2 = cfg.lambda2;
    w.lambda_silog = cfg.lambda_silog;
    return w;
}

}  // namespace pdfnet
