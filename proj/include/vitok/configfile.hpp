#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vitok/sweep.hpp"

namespace vitok {

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

// Flat `key = value` text with # comments and [a, b] lists. Every key read
// is tracked so unknown keys can be rejected after parsing.
struct ConfigFile {
    std::map<std::string, std::string> kv;
    mutable std::set<std::string> used;

    static ConfigFile parse(const std::string& text) {
        ConfigFile cf;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config line " + std::to_string(lineno) +
                                            ": expected key = value");
            std::string key = detail::trim(line.substr(0, eq));
            std::string val = detail::trim(line.substr(eq + 1));
            if (key.empty())
                throw std::invalid_argument("config line " + std::to_string(lineno) +
                                            ": empty key");
            if (!cf.kv.emplace(key, val).second)
                throw std::invalid_argument("duplicate config key '" + key + "'");
        }
        return cf;
    }

    static ConfigFile parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::invalid_argument("cannot open config file " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    // Flag overrides: later values win.
    void set(const std::string& key, const std::string& val) { kv[key] = val; }

    bool has(const std::string& key) const {
        used.insert(key);
        return kv.count(key) != 0;
    }

    std::string str(const std::string& key, const std::string& def) const {
        used.insert(key);
        auto it = kv.find(key);
        return it == kv.end() ? def : it->second;
    }

    long long integer(const std::string& key, long long def) const {
        used.insert(key);
        auto it = kv.find(key);
        if (it == kv.end()) return def;
        char* end = nullptr;
        long long v = std::strtoll(it->second.c_str(), &end, 10);
        if (it->second.empty() || *end)
            throw std::invalid_argument("config key '" + key + "' wants an integer, got '" +
                                        it->second + "'");
        return v;
    }

    double number(const std::string& key, double def) const {
        used.insert(key);
        auto it = kv.find(key);
        if (it == kv.end()) return def;
        char* end = nullptr;
        double v = std::strtod(it->second.c_str(), &end);
        if (it->second.empty() || *end)
            throw std::invalid_argument("config key '" + key + "' wants a number, got '" +
                                        it->second + "'");
        return v;
    }

    bool boolean(const std::string& key, bool def) const {
        used.insert(key);
        auto it = kv.find(key);
        if (it == kv.end()) return def;
        if (it->second == "true") return true;
        if (it->second == "false") return false;
        throw std::invalid_argument("config key '" + key + "' wants true or false, got '" +
                                    it->second + "'");
    }

    // "[a, b, c]" or a bare single value.
    std::vector<std::string> list(const std::string& key,
                                  const std::vector<std::string>& def) const {
        used.insert(key);
        auto it = kv.find(key);
        if (it == kv.end()) return def;
        std::string v = it->second;
        if (v.empty()) throw std::invalid_argument("config key '" + key + "' is empty");
        if (v.front() != '[') return {v};
        if (v.back() != ']')
            throw std::invalid_argument("config key '" + key + "': unterminated list");
        std::vector<std::string> out;
        std::string body = v.substr(1, v.size() - 2);
        if (detail::trim(body).empty()) return out;
        std::stringstream ss(body);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = detail::trim(item);
            if (item.empty())
                throw std::invalid_argument("config key '" + key + "': empty list element");
            out.push_back(item);
        }
        return out;
    }

    std::vector<int> int_list(const std::string& key, const std::vector<int>& def) const {
        used.insert(key);
        if (!kv.count(key)) return def;
        std::vector<int> out;
        for (const std::string& s : list(key, {})) {
            char* end = nullptr;
            long long v = std::strtoll(s.c_str(), &end, 10);
            if (s.empty() || *end)
                throw std::invalid_argument("config key '" + key + "' wants integers, got '" + s +
                                            "'");
            out.push_back(static_cast<int>(v));
        }
        return out;
    }

    // Keys present in the file but never consumed by any reader.
    std::vector<std::string> unknown_keys() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : kv)
            if (!used.count(k)) out.push_back(k);
        return out;
    }

    void reject_unknown() const {
        auto stray = unknown_keys();
        if (stray.empty()) return;
        std::string msg = "unknown config keys:";
        for (const std::string& k : stray) msg += " '" + k + "'";
        throw std::invalid_argument(msg);
    }
};

struct RunConfig {
    ModelConfig model;
    TrainPlan plan;
    CorpusSpec corpus;
    std::string out_dir = "out";
};

inline ModelConfig parse_model(const ConfigFile& cf) {
    ModelConfig m;
    m.q = static_cast<int>(cf.integer("model.q", m.q));
    m.p = static_cast<int>(cf.integer("model.p", m.p));
    m.c = static_cast<int>(cf.integer("model.c", m.c));
    m.T = static_cast<int>(cf.integer("model.T", m.T));
    m.H = static_cast<int>(cf.integer("model.H", m.H));
    m.W = static_cast<int>(cf.integer("model.W", m.W));
    m.encoder_size = cf.str("model.encoder_size", m.encoder_size);
    m.decoder_size = cf.str("model.decoder_size", m.decoder_size);
    m.variant = cf.str("model.variant", m.variant);
    m.l_latent = static_cast<int>(cf.integer("model.l_latent", m.l_latent));
    m.min_tokens = static_cast<int>(cf.integer("model.min_tokens", m.min_tokens));
    return m;
}

inline LossWeights parse_weights(const ConfigFile& cf, const LossWeights& base) {
    LossWeights w = base;
    w.beta = cf.number("loss.beta", w.beta);
    w.eta = cf.number("loss.eta", w.eta);
    w.lambda = cf.number("loss.lambda", w.lambda);
    w.rec_kind = cf.str("loss.rec_kind", w.rec_kind);
    return w;
}

inline TrainPlan parse_plan(const ConfigFile& cf) {
    TrainPlan p;
    p.total_steps = static_cast<int>(cf.integer("train.total_steps", p.total_steps));
    p.batch_size = static_cast<int>(cf.integer("train.batch_size", p.batch_size));
    p.peak_lr = cf.number("train.peak_lr", p.peak_lr);
    p.warmup_steps = static_cast<int>(cf.integer("train.warmup_steps", p.warmup_steps));
    p.weight_decay = cf.number("train.weight_decay", p.weight_decay);
    p.clip_norm = cf.number("train.clip_norm", p.clip_norm);
    p.ema_decay = cf.number("train.ema_decay", p.ema_decay);
    p.disc_lr = cf.number("train.disc_lr", p.disc_lr);
    p.disc_warmup_steps =
        static_cast<int>(cf.integer("train.disc_warmup_steps", p.disc_warmup_steps));
    p.full_finetune = cf.boolean("train.full_finetune", p.full_finetune);
    p.deterministic = cf.boolean("deterministic", p.deterministic);
    p.seed = static_cast<uint64_t>(cf.integer("seed", 0));
    p.weights = parse_weights(cf, LossWeights::stage1());
    return p;
}

// data.T/H/W default to the model's input dims so the two stay in step.
inline CorpusSpec parse_corpus(const ConfigFile& cf, const ModelConfig& model) {
    CorpusSpec c;
    c.kind = cf.str("data.kind", c.kind);
    c.n = static_cast<int>(cf.integer("data.n", c.n));
    c.T = static_cast<int>(cf.integer("data.T", model.T));
    c.H = static_cast<int>(cf.integer("data.H", model.H));
    c.W = static_cast<int>(cf.integer("data.W", model.W));
    c.seed = static_cast<uint64_t>(cf.integer("data.seed", 0));
    c.motion = cf.str("data.motion", c.motion);
    c.dir = cf.str("data.dir", c.dir);
    return c;
}

inline RunConfig parse_run_config(const ConfigFile& cf) {
    RunConfig rc;
    rc.model = parse_model(cf);
    rc.plan = parse_plan(cf);
    rc.corpus = parse_corpus(cf, rc.model);
    rc.out_dir = cf.str("out.dir", rc.out_dir);
    return rc;
}

// Sweep axes plus the shared fixed parts; absent axes fall back to the
// single value from the model section.
inline SweepSpec parse_sweep_spec(const ConfigFile& cf) {
    RunConfig rc = parse_run_config(cf);
    SweepSpec s;
    s.p = cf.int_list("sweep.p", {rc.model.p});
    s.q = cf.int_list("sweep.q", {rc.model.q});
    s.c = cf.int_list("sweep.c", {rc.model.c});
    s.T = cf.int_list("sweep.T", {rc.model.T});
    s.encoder_size = cf.list("sweep.encoder_size", {rc.model.encoder_size});
    s.decoder_size = cf.list("sweep.decoder_size", {rc.model.decoder_size});
    s.H = rc.model.H;
    s.W = rc.model.W;
    s.corpus = rc.corpus;
    s.plan = rc.plan;
    s.seed = rc.plan.seed;
    return s;
}

}  // namespace vitok
