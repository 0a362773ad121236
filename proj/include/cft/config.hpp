#pragma once

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include <cft/model.hpp>
#include <cft/synth.hpp>
#include <cft/trainer.hpp>

namespace cft {

// Anything wrong with a config file: unreadable, bad JSON, unknown keys, type
// or range violations. The CLI maps this to its config-error exit code.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One run, fully described. Image geometry and class count live in `data`
// only; the stream configs inherit them after parsing so the two can never
// disagree.
struct RunConfig {
    SynthConfig data;
    ModelConfig model;
    TrainConfig train;
    std::string dataset_path;     // paths.dataset, empty = generate in memory
    std::string checkpoint_path;  // paths.checkpoint, empty = none
};

namespace detail {

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline void reject_unknown_keys(const nlohmann::json& obj, const std::string& where,
                                std::initializer_list<const char*> allowed) {
    for (const auto& [key, _] : obj.items()) {
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&](const char* k) { return key == k; }) != allowed.end())
            continue;
        std::string best;
        std::size_t best_d = std::string::npos;
        for (const char* k : allowed) {
            const std::size_t d = edit_distance(key, k);
            if (d < best_d) best_d = d, best = k;
        }
        std::string msg = "config: unknown key \"" + key + "\" in " + where;
        if (best_d <= 3) msg += " (did you mean \"" + best + "\"?)";
        throw ConfigError(msg);
    }
}

inline std::string field_path(const std::string& where, const char* key) {
    return where.empty() ? std::string(key) : where + "." + key;
}

inline void get_size(const nlohmann::json& obj, const std::string& where, const char* key,
                     std::size_t& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_number_integer() && !v.is_number_unsigned())
        throw ConfigError("config: " + field_path(where, key) + ": expected integer, got " +
                          v.type_name());
    if (v.is_number_integer() && v.get<std::int64_t>() < 0)
        throw ConfigError("config: " + field_path(where, key) + ": must be nonnegative");
    out = v.get<std::size_t>();
}

inline void get_u64(const nlohmann::json& obj, const std::string& where, const char* key,
                    std::uint64_t& out) {
    std::size_t tmp = 0;
    if (!obj.contains(key)) return;
    get_size(obj, where, key, tmp);
    out = tmp;
}

inline void get_double(const nlohmann::json& obj, const std::string& where, const char* key,
                       double& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_number())
        throw ConfigError("config: " + field_path(where, key) + ": expected number, got " +
                          v.type_name());
    out = v.get<double>();
}

inline void get_bool(const nlohmann::json& obj, const std::string& where, const char* key,
                     bool& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_boolean())
        throw ConfigError("config: " + field_path(where, key) + ": expected boolean, got " +
                          v.type_name());
    out = v.get<bool>();
}

inline void get_string(const nlohmann::json& obj, const std::string& where, const char* key,
                       std::string& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_string())
        throw ConfigError("config: " + field_path(where, key) + ": expected string, got " +
                          v.type_name());
    out = v.get<std::string>();
}

inline const nlohmann::json& get_object(const nlohmann::json& obj, const std::string& where,
                                        const char* key) {
    static const nlohmann::json empty = nlohmann::json::object();
    if (!obj.contains(key)) return empty;
    const auto& v = obj.at(key);
    if (!v.is_object())
        throw ConfigError("config: " + field_path(where, key) + ": expected object, got " +
                          v.type_name());
    return v;
}

inline void parse_stream(const nlohmann::json& j, const std::string& where, StreamConfig& out) {
    reject_unknown_keys(j, where, {"p", "C_e", "depth", "n_heads_enc", "mlp_ratio"});
    get_size(j, where, "p", out.p);
    get_size(j, where, "C_e", out.C_e);
    get_size(j, where, "depth", out.depth);
    get_size(j, where, "n_heads_enc", out.n_heads_enc);
    get_size(j, where, "mlp_ratio", out.mlp_ratio);
}

template <typename Enum>
Enum parse_enum(const nlohmann::json& obj, const std::string& where, const char* key,
                Enum dflt, Enum (*from_string)(const std::string&)) {
    if (!obj.contains(key)) return dflt;
    std::string s;
    get_string(obj, where, key, s);
    try {
        return from_string(s);
    } catch (const std::exception& e) {
        throw ConfigError("config: " + field_path(where, key) + ": " + e.what());
    }
}

}  // namespace detail

// Defaults-filled parse with unknown-key rejection. Every error names the
// offending field; range rules are checked here so messages stay specific,
// then the structural validators run.
inline RunConfig parse_run_config(const nlohmann::json& root) {
    if (!root.is_object()) throw ConfigError("config: top level must be a JSON object");
    detail::reject_unknown_keys(root, "top level", {"data", "model", "train", "paths"});

    RunConfig cfg;

    const auto& jd = detail::get_object(root, "", "data");
    detail::reject_unknown_keys(jd, "data",
                                {"n_samples", "H", "W", "C_in", "k", "gamma", "sigma", "seed"});
    detail::get_size(jd, "data", "n_samples", cfg.data.n_samples);
    detail::get_size(jd, "data", "H", cfg.data.H);
    detail::get_size(jd, "data", "W", cfg.data.W);
    detail::get_size(jd, "data", "C_in", cfg.data.C_in);
    detail::get_size(jd, "data", "k", cfg.data.k);
    detail::get_double(jd, "data", "gamma", cfg.data.gamma);
    detail::get_double(jd, "data", "sigma", cfg.data.sigma);
    detail::get_u64(jd, "data", "seed", cfg.data.seed);

    const auto& jm = detail::get_object(root, "", "model");
    detail::reject_unknown_keys(jm, "model", {"cfp", "ifp", "cfa", "streams"});
    detail::parse_stream(detail::get_object(jm, "model", "cfp"), "model.cfp", cfg.model.cfp);
    detail::parse_stream(detail::get_object(jm, "model", "ifp"), "model.ifp", cfg.model.ifp);
    const auto& jc = detail::get_object(jm, "model", "cfa");
    detail::reject_unknown_keys(jc, "model.cfa",
                                {"L", "d", "n_heads", "mode", "fusion", "projection"});
    detail::get_size(jc, "model.cfa", "L", cfg.model.cfa.L);
    detail::get_size(jc, "model.cfa", "d", cfg.model.cfa.d);
    detail::get_size(jc, "model.cfa", "n_heads", cfg.model.cfa.n_heads);
    cfg.model.cfa.mode = detail::parse_enum(jc, "model.cfa", "mode", cfg.model.cfa.mode,
                                            cfa_mode_from_string);
    cfg.model.cfa.fusion = detail::parse_enum(jc, "model.cfa", "fusion", cfg.model.cfa.fusion,
                                              fusion_from_string);
    detail::get_bool(jc, "model.cfa", "projection", cfg.model.cfa.projection);
    cfg.model.streams = detail::parse_enum(jm, "model", "streams", cfg.model.streams,
                                           stream_set_from_string);

    const auto& jt = detail::get_object(root, "", "train");
    detail::reject_unknown_keys(jt, "train",
                                {"epochs", "base_lr", "weight_decay", "batch_size", "lambda",
                                 "seed", "precision_bits", "enable_loss_cf", "enable_loss_if",
                                 "augment"});
    detail::get_size(jt, "train", "epochs", cfg.train.epochs);
    detail::get_double(jt, "train", "base_lr", cfg.train.base_lr);
    detail::get_double(jt, "train", "weight_decay", cfg.train.weight_decay);
    detail::get_size(jt, "train", "batch_size", cfg.train.batch_size);
    detail::get_double(jt, "train", "lambda", cfg.train.lambda);
    detail::get_u64(jt, "train", "seed", cfg.train.seed);
    detail::get_size(jt, "train", "precision_bits", cfg.train.precision_bits);
    detail::get_bool(jt, "train", "enable_loss_cf", cfg.train.enable_loss_cf);
    detail::get_bool(jt, "train", "enable_loss_if", cfg.train.enable_loss_if);
    detail::get_bool(jt, "train", "augment", cfg.train.augment);

    const auto& jp = detail::get_object(root, "", "paths");
    detail::reject_unknown_keys(jp, "paths", {"dataset", "checkpoint"});
    detail::get_string(jp, "paths", "dataset", cfg.dataset_path);
    detail::get_string(jp, "paths", "checkpoint", cfg.checkpoint_path);

    // stream geometry and class count are single-sourced in data
    for (StreamConfig* s : {&cfg.model.cfp, &cfg.model.ifp}) {
        s->H = cfg.data.H;
        s->W = cfg.data.W;
        s->C_in = cfg.data.C_in;
    }
    cfg.model.k = cfg.data.k;

    if (cfg.train.lambda < 0.0 || cfg.train.lambda > 1.0)
        throw ConfigError("config: train.lambda must be in [0.0, 1.0], got " +
                          std::to_string(cfg.train.lambda));
    if (cfg.data.gamma < 0.0 || cfg.data.gamma > 1.0)
        throw ConfigError("config: data.gamma must be in [0.0, 1.0], got " +
                          std::to_string(cfg.data.gamma));
    if (cfg.data.sigma < 0.0)
        throw ConfigError("config: data.sigma must be nonnegative, got " +
                          std::to_string(cfg.data.sigma));
    if (cfg.train.precision_bits != 32 && cfg.train.precision_bits != 64)
        throw ConfigError("config: train.precision_bits must be 32 or 64, got " +
                          std::to_string(cfg.train.precision_bits));
    try {
        cfg.data.validate();
        cfg.model.validate();
        cfg.train.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

inline RunConfig parse_run_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f.good()) throw ConfigError("config: cannot read " + path);
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
    return parse_run_config(root);
}

// Fully-resolved echo. Reparsing the echo yields the same config, and the
// echo is what gets written next to every run's outputs.
inline nlohmann::json run_config_to_json(const RunConfig& cfg) {
    auto stream = [](const StreamConfig& s) {
        return nlohmann::json{{"p", s.p},
                              {"C_e", s.C_e},
                              {"depth", s.depth},
                              {"n_heads_enc", s.n_heads_enc},
                              {"mlp_ratio", s.mlp_ratio}};
    };
    return nlohmann::json{
        {"data",
         {{"n_samples", cfg.data.n_samples},
          {"H", cfg.data.H},
          {"W", cfg.data.W},
          {"C_in", cfg.data.C_in},
          {"k", cfg.data.k},
          {"gamma", cfg.data.gamma},
          {"sigma", cfg.data.sigma},
          {"seed", cfg.data.seed}}},
        {"model",
         {{"cfp", stream(cfg.model.cfp)},
          {"ifp", stream(cfg.model.ifp)},
          {"cfa",
           {{"L", cfg.model.cfa.L},
            {"d", cfg.model.cfa.d},
            {"n_heads", cfg.model.cfa.n_heads},
            {"mode", to_string(cfg.model.cfa.mode)},
            {"fusion", to_string(cfg.model.cfa.fusion)},
            {"projection", cfg.model.cfa.projection}}},
          {"streams", to_string(cfg.model.streams)}}},
        {"train",
         {{"epochs", cfg.train.epochs},
          {"base_lr", cfg.train.base_lr},
          {"weight_decay", cfg.train.weight_decay},
          {"batch_size", cfg.train.batch_size},
          {"lambda", cfg.train.lambda},
          {"seed", cfg.train.seed},
          {"precision_bits", cfg.train.precision_bits},
          {"enable_loss_cf", cfg.train.enable_loss_cf},
          {"enable_loss_if", cfg.train.enable_loss_if},
          {"augment", cfg.train.augment}}},
        {"paths", {{"dataset", cfg.dataset_path}, {"checkpoint", cfg.checkpoint_path}}}};
}

}  // namespace cft
