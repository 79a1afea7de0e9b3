#pragma once

#include <set>

#include "vitok/params.hpp"

namespace vitok {

struct AdamConfig {
    double beta1 = 0.9, beta2 = 0.95, eps = 1e-8;
};

struct AdamState {
    ParamMap m, v;
    long long step = 0;  // completed updates; bias correction uses step after increment
};

// Returns the pre-clip global norm and rescales grads in place when it
// exceeds max_norm. max_norm <= 0 disables clipping.
inline double clip_global_norm(ParamMap& grads, double max_norm) {
    double sq = 0;
    for (const auto& [name, g] : grads)
        for (long long i = 0; i < g.numel(); ++i) sq += g.data()[i] * g.data()[i];
    double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        double scale = max_norm / norm;
        for (auto& [name, g] : grads) {
            for (long long i = 0; i < g.numel(); ++i) g.data()[i] *= scale;
            round_to_precision(g);
        }
    }
    return norm;
}

// Decoupled weight decay: with a zero gradient and fresh moments the weight
// still shrinks by (1 - lr*wd). Frozen paths are left bitwise untouched and
// accumulate no moments.
inline void adamw_step(ParamStore& params, const ParamMap& grads, AdamState& st, double lr,
                       double weight_decay, const std::set<std::string>& frozen = {},
                       const AdamConfig& ac = {}) {
    st.step += 1;
    double bc1 = 1.0 - std::pow(ac.beta1, static_cast<double>(st.step));
    double bc2 = 1.0 - std::pow(ac.beta2, static_cast<double>(st.step));
    for (auto& [name, w] : params.tensors) {
        if (frozen.count(name)) continue;
        auto git = grads.find(name);
        if (git == grads.end())
            throw std::runtime_error("no gradient for trainable parameter '" + name + "'");
        const Tensor& g = git->second;
        if (g.shape() != w.shape())
            throw std::runtime_error("gradient shape mismatch for '" + name + "'");
        auto mit = st.m.find(name);
        if (mit == st.m.end()) {
            mit = st.m.emplace(name, Tensor::zeros(w.shape())).first;
            st.v.emplace(name, Tensor::zeros(w.shape()));
        }
        Tensor& m = mit->second;
        Tensor& v = st.v.at(name);
        for (long long i = 0; i < w.numel(); ++i) {
            double gi = g.data()[i];
            m.data()[i] = ac.beta1 * m.data()[i] + (1.0 - ac.beta1) * gi;
            v.data()[i] = ac.beta2 * v.data()[i] + (1.0 - ac.beta2) * gi * gi;
            double mhat = m.data()[i] / bc1;
            double vhat = v.data()[i] / bc2;
            w.data()[i] -= lr * (mhat / (std::sqrt(vhat) + ac.eps) + weight_decay * w.data()[i]);
        }
        round_to_precision(m);
        round_to_precision(v);
        round_to_precision(w);
    }
}

// Linear warmup from 0 over `warmup` steps, then cosine decay to 0 at
// `total` (or flat peak for kind "constant").
struct LrSchedule {
    double peak = 1e-4;
    int warmup = 0;
    int total = 1;
    std::string kind = "cosine";  // cosine | constant
};

inline double lr_at(long long step, const LrSchedule& s) {
    if (s.peak < 0 || s.warmup < 0) throw std::invalid_argument("bad lr schedule");
    if (s.kind != "cosine" && s.kind != "constant")
        throw std::invalid_argument("lr schedule kind '" + s.kind + "'");
    if (step < s.warmup) return s.peak * static_cast<double>(step) / s.warmup;
    if (s.kind == "constant") return s.peak;
    double span = static_cast<double>(s.total - s.warmup);
    double t = span <= 0 ? 1.0 : static_cast<double>(step - s.warmup) / span;
    if (t > 1.0) t = 1.0;
    return s.peak * 0.5 * (1.0 + std::cos(t * 3.14159265358979323846));
}

// Base 1e-4 at a reference batch of 256 images, scaled linearly with batch
// size and frames per clip (frames = 1 for images).
inline double peak_lr_for(int batch_size, int frames) {
    if (batch_size <= 0 || frames <= 0) throw std::invalid_argument("bad peak lr inputs");
    return 1e-4 / 256.0 * batch_size * frames;
}

}  // namespace vitok
