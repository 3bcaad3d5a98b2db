#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lss/encoder.hpp"
#include "lss/eval.hpp"
#include "lss/io.hpp"
#include "lss/objectives.hpp"
#include "lss/synth_world.hpp"
#include "lss/trainer.hpp"

namespace lss {

// Fully resolved run configuration: flat `section.key = value` format,
// precedence flags > file > defaults, provenance recorded per key.
struct RunConfig {
    WorldConfig world;
    EncoderConfig encoder;
    ObjectiveConfig objective;
    TrainConfig train;
    ProbeConfig probe;

    double space_dedup_threshold = 0.0;  // 0 disables deduplication
    std::string space_description_averaging = "normalize";  // or "raw"

    std::string out_dir = "runs/default";
    std::string data_path;
    std::string train_data_path;
    std::string test_data_path;
    std::string category_space_path;
    std::string description_space_path;
    std::string checkpoint_path;
    std::string category_embeddings_path;
    std::string description_embeddings_path;

    std::map<std::string, std::string> provenance;  // key -> default | file | flag
};

namespace detail {

inline std::uint64_t cfg_parse_u64(const std::string& v, const std::string& key,
                                   const std::string& where) {
    std::uint64_t out = 0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw config_error(key + ": expected non-negative integer, got '" + v + "' (" + where + ")");
    }
    return out;
}

inline double cfg_parse_double(const std::string& v, const std::string& key,
                               const std::string& where) {
    double out = 0.0;
    auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw config_error(key + ": expected number, got '" + v + "' (" + where + ")");
    }
    return out;
}

inline bool cfg_parse_bool(const std::string& v, const std::string& key, const std::string& where) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw config_error(key + ": expected true or false, got '" + v + "' (" + where + ")");
}

inline std::string cfg_parse_string(const std::string& v) {
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
    return v;
}

struct KeyBinding {
    std::string key;
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

inline std::vector<KeyBinding> make_key_bindings() {
    std::vector<KeyBinding> b;
    auto add_u64 = [&](const std::string& key, std::function<std::uint64_t&(RunConfig&)> ref) {
        b.push_back({key,
                     [key, ref](RunConfig& c, const std::string& v, const std::string& w) {
                         ref(c) = cfg_parse_u64(v, key, w);
                     },
                     [ref](const RunConfig& c) {
                         return std::to_string(ref(const_cast<RunConfig&>(c)));
                     }});
    };
    auto add_size = [&](const std::string& key, std::function<std::size_t&(RunConfig&)> ref) {
        b.push_back({key,
                     [key, ref](RunConfig& c, const std::string& v, const std::string& w) {
                         ref(c) = static_cast<std::size_t>(cfg_parse_u64(v, key, w));
                     },
                     [ref](const RunConfig& c) {
                         return std::to_string(ref(const_cast<RunConfig&>(c)));
                     }});
    };
    auto add_double = [&](const std::string& key, std::function<double&(RunConfig&)> ref) {
        b.push_back({key,
                     [key, ref](RunConfig& c, const std::string& v, const std::string& w) {
                         ref(c) = cfg_parse_double(v, key, w);
                     },
                     [ref](const RunConfig& c) {
                         return format_double(ref(const_cast<RunConfig&>(c)));
                     }});
    };
    auto add_bool = [&](const std::string& key, std::function<bool&(RunConfig&)> ref) {
        b.push_back({key,
                     [key, ref](RunConfig& c, const std::string& v, const std::string& w) {
                         ref(c) = cfg_parse_bool(v, key, w);
                     },
                     [ref](const RunConfig& c) {
                         return ref(const_cast<RunConfig&>(c)) ? "true" : "false";
                     }});
    };
    auto add_string = [&](const std::string& key, std::function<std::string&(RunConfig&)> ref) {
        b.push_back({key,
                     [ref](RunConfig& c, const std::string& v, const std::string&) {
                         ref(c) = cfg_parse_string(v);
                     },
                     [ref](const RunConfig& c) { return ref(const_cast<RunConfig&>(c)); }});
    };

    add_size("world.num_classes", [](RunConfig& c) -> std::size_t& { return c.world.num_classes; });
    add_size("world.d", [](RunConfig& c) -> std::size_t& { return c.world.d; });
    add_size("world.d_in", [](RunConfig& c) -> std::size_t& { return c.world.d_in; });
    add_size("world.descriptions_per_class",
             [](RunConfig& c) -> std::size_t& { return c.world.descriptions_per_class; });
    add_size("world.frames_per_video",
             [](RunConfig& c) -> std::size_t& { return c.world.frames_per_video; });
    add_size("world.S", [](RunConfig& c) -> std::size_t& { return c.world.S; });
    add_double("world.intra_class_noise",
               [](RunConfig& c) -> double& { return c.world.intra_class_noise; });
    add_double("world.description_noise",
               [](RunConfig& c) -> double& { return c.world.description_noise; });
    add_double("world.temporal_drift",
               [](RunConfig& c) -> double& { return c.world.temporal_drift; });
    add_u64("world.seed", [](RunConfig& c) -> std::uint64_t& { return c.world.seed; });
    add_size("world.train_per_class",
             [](RunConfig& c) -> std::size_t& { return c.world.train_per_class; });
    add_size("world.test_per_class",
             [](RunConfig& c) -> std::size_t& { return c.world.test_per_class; });
    add_size("world.video_length", [](RunConfig& c) -> std::size_t& { return c.world.video_length; });
    add_double("world.mixed_fraction",
               [](RunConfig& c) -> double& { return c.world.mixed_fraction; });

    add_size("encoder.T", [](RunConfig& c) -> std::size_t& { return c.encoder.T; });
    add_size("encoder.S", [](RunConfig& c) -> std::size_t& { return c.encoder.S; });
    add_size("encoder.d_in", [](RunConfig& c) -> std::size_t& { return c.encoder.d_in; });
    add_size("encoder.d_e", [](RunConfig& c) -> std::size_t& { return c.encoder.d_e; });
    add_size("encoder.d_out", [](RunConfig& c) -> std::size_t& { return c.encoder.d_out; });
    add_size("encoder.L", [](RunConfig& c) -> std::size_t& { return c.encoder.L; });
    add_size("encoder.H_att", [](RunConfig& c) -> std::size_t& { return c.encoder.H_att; });

    add_double("objective.lambda_teacher",
               [](RunConfig& c) -> double& { return c.objective.lambda_teacher; });
    add_double("objective.lambda_student",
               [](RunConfig& c) -> double& { return c.objective.lambda_student; });
    add_double("objective.tau", [](RunConfig& c) -> double& { return c.objective.tau; });
    add_bool("objective.use_significance_weight",
             [](RunConfig& c) -> bool& { return c.objective.use_significance_weight; });
    add_bool("objective.use_udp", [](RunConfig& c) -> bool& { return c.objective.use_udp; });
    add_bool("objective.use_description_space",
             [](RunConfig& c) -> bool& { return c.objective.use_description_space; });
    add_bool("objective.use_alignment",
             [](RunConfig& c) -> bool& { return c.objective.use_alignment; });
    add_double("objective.udp_weight", [](RunConfig& c) -> double& { return c.objective.udp_weight; });
    add_bool("objective.udp_from_teacher",
             [](RunConfig& c) -> bool& { return c.objective.udp_from_teacher; });

    add_size("train.epochs", [](RunConfig& c) -> std::size_t& { return c.train.epochs; });
    add_size("train.batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    add_double("train.lr_init", [](RunConfig& c) -> double& { return c.train.lr_init; });
    add_double("train.ema_rho", [](RunConfig& c) -> double& { return c.train.ema_rho; });
    add_double("train.adam_beta1", [](RunConfig& c) -> double& { return c.train.adam_beta1; });
    add_double("train.adam_beta2", [](RunConfig& c) -> double& { return c.train.adam_beta2; });
    add_double("train.adam_eps", [](RunConfig& c) -> double& { return c.train.adam_eps; });
    add_double("train.weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; });
    add_double("train.sigma_aug", [](RunConfig& c) -> double& { return c.train.sigma_aug; });
    add_bool("train.scale_aug", [](RunConfig& c) -> bool& { return c.train.scale_aug; });
    add_bool("train.symmetrize_views",
             [](RunConfig& c) -> bool& { return c.train.symmetrize_views; });
    add_u64("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    add_size("train.checkpoint_interval",
             [](RunConfig& c) -> std::size_t& { return c.train.checkpoint_interval; });
    add_size("train.max_steps", [](RunConfig& c) -> std::size_t& { return c.train.max_steps; });

    add_size("probe.epochs", [](RunConfig& c) -> std::size_t& { return c.probe.epochs; });
    add_double("probe.lr", [](RunConfig& c) -> double& { return c.probe.lr; });
    add_size("probe.batch", [](RunConfig& c) -> std::size_t& { return c.probe.batch; });
    add_double("probe.weight_decay", [](RunConfig& c) -> double& { return c.probe.weight_decay; });
    add_u64("probe.seed", [](RunConfig& c) -> std::uint64_t& { return c.probe.seed; });

    add_double("space.dedup_threshold",
               [](RunConfig& c) -> double& { return c.space_dedup_threshold; });
    add_string("space.description_averaging",
               [](RunConfig& c) -> std::string& { return c.space_description_averaging; });

    add_string("paths.out_dir", [](RunConfig& c) -> std::string& { return c.out_dir; });
    add_string("paths.data", [](RunConfig& c) -> std::string& { return c.data_path; });
    add_string("paths.train_data", [](RunConfig& c) -> std::string& { return c.train_data_path; });
    add_string("paths.test_data", [](RunConfig& c) -> std::string& { return c.test_data_path; });
    add_string("paths.category_space",
               [](RunConfig& c) -> std::string& { return c.category_space_path; });
    add_string("paths.description_space",
               [](RunConfig& c) -> std::string& { return c.description_space_path; });
    add_string("paths.checkpoint", [](RunConfig& c) -> std::string& { return c.checkpoint_path; });
    add_string("paths.category_embeddings",
               [](RunConfig& c) -> std::string& { return c.category_embeddings_path; });
    add_string("paths.description_embeddings",
               [](RunConfig& c) -> std::string& { return c.description_embeddings_path; });
    return b;
}

inline const std::vector<KeyBinding>& key_bindings() {
    static const std::vector<KeyBinding> bindings = make_key_bindings();
    return bindings;
}

inline const KeyBinding* find_binding(const std::string& key) {
    for (const KeyBinding& b : key_bindings()) {
        if (b.key == key) return &b;
    }
    return nullptr;
}

inline void cross_validate(const RunConfig& cfg) {
    try {
        cfg.world.validate();
        cfg.encoder.validate();
        cfg.objective.validate();
        cfg.train.validate();
        cfg.probe.validate();
    } catch (const std::exception& e) {
        throw config_error(e.what());
    }
    if (cfg.space_dedup_threshold != 0.0 &&
        !(cfg.space_dedup_threshold > 0.0 && cfg.space_dedup_threshold < 1.0)) {
        throw config_error("space.dedup_threshold: must be 0 (off) or in (0,1)");
    }
    if (cfg.space_description_averaging != "normalize" &&
        cfg.space_description_averaging != "raw") {
        throw config_error("space.description_averaging: must be 'normalize' or 'raw'");
    }
}

}  // namespace detail

// Parses the config file (optional) and applies flag overrides. Unknown keys
// are hard errors; precedence is flags > file > defaults.
inline RunConfig parse_config(const std::string& file_path,
                              const std::vector<std::pair<std::string, std::string>>& flag_overrides) {
    RunConfig cfg;
    for (const auto& b : detail::key_bindings()) cfg.provenance[b.key] = "default";

    if (!file_path.empty()) {
        std::ifstream is(file_path);
        if (!is) throw config_error("cannot open config file '" + file_path + "'");
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            std::string t = detail::trim(line);
            if (t.empty() || t[0] == '#') continue;
            const std::string where = file_path + ":" + std::to_string(lineno);
            std::size_t eq = t.find('=');
            if (eq == std::string::npos) {
                throw config_error("missing '=' (" + where + "): '" + t + "'");
            }
            std::string key = detail::trim(t.substr(0, eq));
            std::string value = detail::trim(t.substr(eq + 1));
            const detail::KeyBinding* b = detail::find_binding(key);
            if (!b) throw config_error("unknown key '" + key + "' (" + where + ")");
            b->set(cfg, value, where);
            cfg.provenance[key] = "file";
        }
    }

    for (const auto& [key, value] : flag_overrides) {
        const detail::KeyBinding* b = detail::find_binding(key);
        if (!b) throw config_error("unknown key '" + key + "' (command line)");
        b->set(cfg, value, "command line");
        cfg.provenance[key] = "flag";
    }

    detail::cross_validate(cfg);
    return cfg;
}

// Resolved config in the same format parse_config reads; re-running with the
// echoed file reproduces the run bit-exactly.
inline std::string echo_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << "# resolved configuration; provenance noted per key\n";
    std::string section;
    for (const auto& b : detail::key_bindings()) {
        std::string sec = b.key.substr(0, b.key.find('.'));
        if (sec != section) {
            os << "\n";
            section = sec;
        }
        auto it = cfg.provenance.find(b.key);
        os << "# " << (it == cfg.provenance.end() ? "default" : it->second) << "\n";
        os << b.key << " = " << b.get(cfg) << "\n";
    }
    return os.str();
}

inline std::uint64_t config_hash(const RunConfig& cfg) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (const auto& b : detail::key_bindings()) {
        std::string line = b.key + "=" + b.get(cfg);
        h = fnv1a64(line.data(), line.size(), h);
    }
    return h;
}

inline void write_config_echo(const RunConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw format_error("cannot open '" + path + "' for writing");
    os << echo_config(cfg);
    if (!os) throw format_error("write failure on '" + path + "'");
}

}  // namespace lss
