#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seic/errors.hpp"
#include "seic/losses.hpp"
#include "seic/pairgen.hpp"
#include "seic/synth.hpp"
#include "seic/trainer.hpp"

namespace seic {

using json = nlohmann::json;

// Flat single-file run configuration. Defaults are the reference training
// settings; every key can be overridden from the command line as
// `--section.key value`.
inline json default_config() {
    return json{
        {"seed", 0},
        {"paths",
         {{"embeddings", ""},
          {"text_embeddings", ""},
          {"nouns", ""},
          {"noun_embeddings", ""},
          {"labels", ""},
          {"checkpoint", ""},
          {"out_dir", "."}}},
        {"pairgen", {{"K", 10}, {"k1", 200}, {"k2", 50}, {"text_temp", 0.01}, {"kmeans_restarts", 10}, {"kmeans_max_iter", 100}}},
        {"stage2",
         {{"lr", 0.005}, {"epochs", 200}, {"batch", 1024}, {"weight_decay", 0.0}, {"grad_clip", 5.0}, {"checkpoint_every", 0}}},
        {"stage3",
         {{"lr", 5e-5},
          {"epochs", 40},
          {"batch", 128},
          {"weight_decay", 0.0},
          {"grad_clip", 5.0},
          {"self_mode", "softmatch"},
          {"allow_collapse", false},
          {"checkpoint_every", 0}}},
        {"weights", {{"alpha", 0.5}, {"beta", 1.0}, {"gamma", 1.0}, {"delta", 2.0}}},
        {"heads", {{"use_bias", true}, {"tau0", 0.07}, {"tau_hat", 1.0}}},
        {"lora", {{"rank", 128}, {"placement", "parallel_qv"}, {"use_relu", false}, {"blocks", 2}}},
        {"balance", {{"mode", "dynamic"}, {"momentum", 0.9}}},
        {"confidence", {{"momentum", 0.999}}},
        {"center_strategy", "weighted"},
        {"augment", {{"strong_noise_std", 0.1}, {"strong_scale_jitter", 0.1}}},
        {"synth",
         {{"N", 2000}, {"D", 64}, {"K", 5}, {"separation_deg", 60.0}, {"noise_std", 0.2}, {"imbalance", 1.0}}},
        {"encoder", {{"use_stub", false}, {"stub_seed", 0}, {"blocks", 2}, {"mix", 0.05}}},
    };
}

namespace detail {

inline void merge_checked(json& base, const json& patch, const std::string& prefix) {
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key: " + path);
        if (base[it.key()].is_object() && it.value().is_object())
            merge_checked(base[it.key()], it.value(), path);
        else if (base[it.key()].is_object() != it.value().is_object())
            throw ConfigError("config key " + path + " has wrong structure");
        else
            base[it.key()] = it.value();
    }
}

}  // namespace detail

inline json load_config(const std::string& path) {
    json cfg = default_config();
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot open config: " + path);
        json user = json::parse(is, nullptr, false);
        if (user.is_discarded()) throw ConfigError("config is not valid JSON: " + path);
        detail::merge_checked(cfg, user, "");
    }
    return cfg;
}

// `--stage2.lr 0.001` style overrides; value parsed as JSON when possible,
// kept as a string otherwise.
inline void apply_override(json& cfg, const std::string& dotted, const std::string& value) {
    json* cur = &cfg;
    std::string rest = dotted, seg;
    size_t pos;
    std::vector<std::string> parts;
    while ((pos = rest.find('.')) != std::string::npos) {
        parts.push_back(rest.substr(0, pos));
        rest = rest.substr(pos + 1);
    }
    parts.push_back(rest);
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!cur->contains(parts[i]) || !(*cur)[parts[i]].is_object())
            throw ConfigError("unknown config key: " + dotted);
        cur = &(*cur)[parts[i]];
    }
    const std::string& leaf = parts.back();
    if (!cur->contains(leaf) || (*cur)[leaf].is_object()) throw ConfigError("unknown config key: " + dotted);
    json v = json::parse(value, nullptr, false);
    if (v.is_discarded() || v.is_object()) v = value;
    // keep string-typed keys string-typed even if the value parses as a number
    if ((*cur)[leaf].is_string() && !v.is_string()) v = value;
    (*cur)[leaf] = v;
}

inline TrainConfig train_config_from_json(const json& cfg) {
    TrainConfig t;
    t.seed = cfg.at("seed").get<uint64_t>();
    const auto& s2 = cfg.at("stage2");
    t.stage2.lr = s2.at("lr");
    t.stage2.epochs = s2.at("epochs");
    t.stage2.batch = s2.at("batch");
    t.stage2.weight_decay = s2.at("weight_decay");
    t.stage2.grad_clip = s2.at("grad_clip");
    t.stage2.checkpoint_every = s2.at("checkpoint_every");
    const auto& s3 = cfg.at("stage3");
    t.stage3.lr = s3.at("lr");
    t.stage3.epochs = s3.at("epochs");
    t.stage3.batch = s3.at("batch");
    t.stage3.weight_decay = s3.at("weight_decay");
    t.stage3.grad_clip = s3.at("grad_clip");
    t.stage3.self_mode = self_mode_from_string(s3.at("self_mode"));
    t.stage3.allow_collapse = s3.at("allow_collapse");
    t.stage3.checkpoint_every = s3.at("checkpoint_every");
    const auto& w = cfg.at("weights");
    t.weights.alpha = w.at("alpha");
    t.weights.beta = w.at("beta");
    t.weights.gamma = w.at("gamma");
    t.weights.delta = w.at("delta");
    const auto& a = cfg.at("augment");
    t.augment.strong_noise_std = a.at("strong_noise_std");
    t.augment.strong_scale_jitter = a.at("strong_scale_jitter");
    t.center_strategy = center_strategy_from_string(cfg.at("center_strategy"));
    t.balance_mode = balance_mode_from_string(cfg.at("balance").at("mode"));
    t.balance_momentum = cfg.at("balance").at("momentum");
    t.conf_momentum = cfg.at("confidence").at("momentum");
    const auto& l = cfg.at("lora");
    t.placement = lora_placement_from_string(l.at("placement"));
    t.lora_relu = l.at("use_relu");
    t.lora_rank = l.at("rank");
    const auto& h = cfg.at("heads");
    t.use_bias = h.at("use_bias");
    t.tau0 = h.at("tau0");
    t.tau_hat = h.at("tau_hat");
    if (t.stage2.lr <= 0 || t.stage3.lr <= 0) throw ConfigError("lr must be > 0");
    if (t.stage2.epochs < 0 || t.stage3.epochs < 0) throw ConfigError("epochs must be >= 0");
    if (t.stage2.batch < 2 || t.stage3.batch < 2) throw ConfigError("batch must be >= 2");
    if (t.weights.alpha < 0 || t.weights.beta < 0 || t.weights.gamma < 0 || t.weights.delta < 0)
        throw ConfigError("loss weights must be >= 0");
    return t;
}

inline PairGenConfig pairgen_config_from_json(const json& cfg) {
    const auto& p = cfg.at("pairgen");
    PairGenConfig pc;
    pc.K = p.at("K");
    pc.k1 = p.at("k1");
    pc.k2 = p.at("k2");
    pc.text_temp = p.at("text_temp");
    pc.kmeans_restarts = p.at("kmeans_restarts");
    pc.kmeans_max_iter = p.at("kmeans_max_iter");
    pc.seed = cfg.at("seed").get<uint64_t>();
    if (pc.k1 < 1 || pc.k2 < 1 || pc.text_temp <= 0) throw ConfigError("pairgen: bad k1/k2/text_temp");
    return pc;
}

inline SynthConfig synth_config_from_json(const json& cfg) {
    const auto& s = cfg.at("synth");
    SynthConfig sc;
    sc.N = s.at("N");
    sc.D = s.at("D");
    sc.K = s.at("K");
    sc.separation_deg = s.at("separation_deg");
    sc.noise_std = s.at("noise_std");
    sc.imbalance = s.at("imbalance");
    sc.seed = cfg.at("seed").get<uint64_t>();
    return sc;
}

}  // namespace seic
