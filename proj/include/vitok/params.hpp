#pragma once

#include <map>
#include <set>

#include "vitok/config.hpp"
#include "vitok/tape.hpp"

namespace vitok {

// std::map so iteration order is deterministic everywhere gradients or
// parameters are walked.
using ParamMap = std::map<std::string, Tensor>;

// Named parameter tensors; std::map keeps every traversal (init, update,
// serialization) in one deterministic order.
struct ParamStore {
    std::map<std::string, Tensor> tensors;

    Tensor& at(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::out_of_range("no parameter '" + name + "'");
        return it->second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::out_of_range("no parameter '" + name + "'");
        return it->second;
    }
    bool has(const std::string& name) const { return tensors.count(name) != 0; }
    size_t size() const { return tensors.size(); }

    ParamStore clone() const {
        ParamStore out;
        for (const auto& [k, v] : tensors) out.tensors.emplace(k, v.clone());
        return out;
    }
};

// Every parameter's (path, shape), in a fixed order. count_params and
// init_params both derive from this list, so they can never disagree.
inline std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<std::pair<std::string, Shape>> out;
    auto block = [&out](const std::string& prefix, int hidden) {
        int mlp = swiglu_hidden(hidden);
        out.emplace_back(prefix + ".attn_norm.g", Shape{hidden});
        out.emplace_back(prefix + ".wq", Shape{hidden, hidden});
        out.emplace_back(prefix + ".wk", Shape{hidden, hidden});
        out.emplace_back(prefix + ".wv", Shape{hidden, hidden});
        out.emplace_back(prefix + ".wo", Shape{hidden, hidden});
        out.emplace_back(prefix + ".mlp_norm.g", Shape{hidden});
        out.emplace_back(prefix + ".w_gate", Shape{hidden, mlp});
        out.emplace_back(prefix + ".w_up", Shape{hidden, mlp});
        out.emplace_back(prefix + ".w_down", Shape{mlp, hidden});
    };
    SizePreset enc = cfg.encoder(), dec = cfg.decoder();
    out.emplace_back("embed.w", Shape{cfg.patch_dim(), enc.hidden});
    out.emplace_back("embed.b", Shape{enc.hidden});
    if (cfg.variant == "latent")
        out.emplace_back("latent.tokens", Shape{cfg.l_latent, enc.hidden});
    for (int i = 0; i < enc.blocks; ++i) block("enc." + std::to_string(i), enc.hidden);
    out.emplace_back("bottleneck.w", Shape{enc.hidden, 2 * cfg.c});
    out.emplace_back("bottleneck.b", Shape{2 * cfg.c});
    if (cfg.variant == "masked") out.emplace_back("masked.token", Shape{cfg.c});
    out.emplace_back("decode_in.w", Shape{cfg.c, dec.hidden});
    out.emplace_back("decode_in.b", Shape{dec.hidden});
    if (cfg.variant == "latent") out.emplace_back("latent.mask", Shape{dec.hidden});
    for (int i = 0; i < dec.blocks; ++i) block("dec." + std::to_string(i), dec.hidden);
    out.emplace_back("unembed.w", Shape{dec.hidden, cfg.patch_dim()});
    out.emplace_back("unembed.b", Shape{cfg.patch_dim()});
    return out;
}

inline bool is_encoder_param(const std::string& name) {
    return name.rfind("embed.", 0) == 0 || name.rfind("enc.", 0) == 0 ||
           name.rfind("bottleneck.", 0) == 0 || name == "latent.tokens";
}

inline long long count_params(const ModelConfig& cfg) {
    long long n = 0;
    for (const auto& [name, shape] : param_shapes(cfg)) {
        long long count = 1;
        for (int d : shape) count *= d;
        n += count;
    }
    return n;
}

// Single-tower counts; named Table-style sizes describe one tower, so these
// are what compare against the published numbers.
inline long long count_params_encoder(const ModelConfig& cfg) {
    long long n = 0;
    for (const auto& [name, shape] : param_shapes(cfg)) {
        if (!is_encoder_param(name)) continue;
        long long count = 1;
        for (int d : shape) count *= d;
        n += count;
    }
    return n;
}

inline long long count_params_decoder(const ModelConfig& cfg) {
    return count_params(cfg) - count_params_encoder(cfg);
}

// 1D sinusoidal table: token j gets (sin, cos) pairs at frequencies
// 10000^(-2i/width).
inline Tensor sincos_table(int count, int width) {
    Tensor t({count, width});
    for (int j = 0; j < count; ++j)
        for (int i = 0; i < width / 2; ++i) {
            double freq = std::pow(10000.0, -2.0 * i / width);
            t[static_cast<size_t>(j * width + 2 * i)] = std::sin(j * freq);
            t[static_cast<size_t>(j * width + 2 * i + 1)] = std::cos(j * freq);
        }
    if (width % 2) {
        for (int j = 0; j < count; ++j)
            t[static_cast<size_t>(j * width + width - 1)] = 0.0;
    }
    round_to_precision(t);
    return t;
}

// Truncated normal (sigma 0.02) for projections; zeros for each residual
// branch's output projection so fresh blocks start as the identity; ones for
// norm gains; zeros for biases.
inline ParamStore init_params(const ModelConfig& cfg, uint64_t seed) {
    ParamStore ps;
    Rng rng(mix_seed(seed, fnv1a("init")));
    for (const auto& [name, shape] : param_shapes(cfg)) {
        Tensor t(shape);
        auto ends_with = [&name](const char* suffix) {
            std::string s(suffix);
            return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
        };
        if (ends_with("norm.g")) {
            t.fill(1.0);
        } else if (ends_with(".b")) {
            // zeros
        } else if (ends_with(".wo") || ends_with(".w_down")) {
            // zeros: block output projections
        } else if (name == "latent.tokens") {
            t = sincos_table(shape[0], shape[1]);
        } else {
            rng.fill_truncated_normal(t, 0.02);
        }
        t.set_requires_grad(true);
        ps.tensors.emplace(name, std::move(t));
    }
    return ps;
}

// Leaf ids for every parameter in one graph. Frozen names (and everything
// when trainable=false) become constants.
struct BoundParams {
    std::map<std::string, NodeId> ids;

    NodeId at(const std::string& name) const {
        auto it = ids.find(name);
        if (it == ids.end()) throw std::out_of_range("no bound parameter '" + name + "'");
        return it->second;
    }
};

inline BoundParams bind_params(Graph& g, const ParamStore& ps, bool trainable = true,
                               const std::set<std::string>& frozen = {}) {
    BoundParams bp;
    for (const auto& [name, t] : ps.tensors) {
        bool ng = trainable && !frozen.count(name);
        bp.ids.emplace(name, g.leaf(t, ng));
    }
    return bp;
}

inline ParamMap collect_grads(const Graph& g, const BoundParams& bp) {
    ParamMap grads;
    for (const auto& [name, id] : bp.ids) grads.emplace(name, g.grad(id));
    return grads;
}

}  // namespace vitok
