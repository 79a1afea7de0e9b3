#pragma once

#include <cstdio>
#include <optional>
#include <string>

#include "vitok/tensor.hpp"

namespace vitok {

struct SizePreset {
    int hidden = 0;
    int blocks = 0;
    int heads = 0;
};

// Named presets, or custom towers as "hidden:blocks:heads".
inline SizePreset size_preset(const std::string& name) {
    if (name == "S") return {768, 6, 12};
    if (name == "B") return {768, 12, 12};
    if (name == "L") return {1152, 24, 16};
    if (name.find(':') != std::string::npos) {
        SizePreset s;
        char extra;
        if (std::sscanf(name.c_str(), "%d:%d:%d%c", &s.hidden, &s.blocks, &s.heads, &extra) == 3)
            return s;
    }
    throw std::invalid_argument("unknown model size '" + name +
                                "' (want S, B, L, or hidden:blocks:heads)");
}

inline int swiglu_hidden(int hidden) {
    int h = (8 * hidden + 2) / 3;  // ceil(8/3 * hidden)
    return (h + 63) / 64 * 64;
}

struct ModelConfig {
    int q = 1;      // temporal stride
    int p = 16;     // spatial stride
    int c = 16;     // latent channels
    std::string encoder_size = "S";
    std::string decoder_size = "S";
    std::string variant = "simple";  // simple | latent | masked
    int l_latent = 0;                // latent variant: learned token count
    int min_tokens = 0;              // masked variant: smallest l_eval
    int T = 1, H = 256, W = 256;
    std::optional<SizePreset> scale_override;

    int tq() const { return T / q; }
    int hp() const { return H / p; }
    int wp() const { return W / p; }
    // Grid token count L.
    int tokens() const { return tq() * hp() * wp(); }
    // Token count entering the bottleneck.
    int latent_tokens() const { return variant == "latent" ? l_latent : tokens(); }
    // Total floats crossing the bottleneck: E = L * c.
    long long bottleneck_size() const {
        return static_cast<long long>(latent_tokens()) * c;
    }
    int patch_dim() const { return q * p * p * 3; }

    SizePreset encoder() const {
        return scale_override ? *scale_override : size_preset(encoder_size);
    }
    SizePreset decoder() const {
        return scale_override ? *scale_override : size_preset(decoder_size);
    }

    void validate() const {
        if (q <= 0 || p <= 0 || c <= 0) throw std::invalid_argument("strides and channels must be positive");
        if (T <= 0 || H <= 0 || W <= 0) throw std::invalid_argument("input dims must be positive");
        if (T % q) throw std::invalid_argument("temporal stride q=" + std::to_string(q) + " does not divide T=" + std::to_string(T));
        if (H % p || W % p)
            throw std::invalid_argument("spatial stride p=" + std::to_string(p) + " does not divide " +
                                        std::to_string(H) + "x" + std::to_string(W));
        if (!scale_override) {
            size_preset(encoder_size);
            size_preset(decoder_size);
        }
        for (const SizePreset& s : {encoder(), decoder()}) {
            if (s.hidden <= 0 || s.blocks <= 0 || s.heads <= 0)
                throw std::invalid_argument("model size fields must be positive");
            if (s.hidden % s.heads)
                throw std::invalid_argument("heads must divide hidden dim");
            if ((s.hidden / s.heads) % 2)
                throw std::invalid_argument("per-head dim must be even for rotary pairs");
        }
        if (variant == "simple") {
            // nothing extra
        } else if (variant == "latent") {
            if (l_latent <= 0) throw std::invalid_argument("latent variant needs l_latent > 0");
        } else if (variant == "masked") {
            if (min_tokens <= 0 || (min_tokens & (min_tokens - 1)))
                throw std::invalid_argument("masked variant needs power-of-two min_tokens");
            if (min_tokens > tokens())
                throw std::invalid_argument("min_tokens exceeds token count");
        } else {
            throw std::invalid_argument("unknown variant '" + variant + "'");
        }
    }
};

inline long long count_params(const ModelConfig& cfg);  // params.hpp

// Matmul FLOPs per input item, 2 per multiply-add. Table-style GFLOP numbers
// depend on unstated conventions, so only the ordering across sizes is
// promised.
inline double estimate_flops(const ModelConfig& cfg, int L) {
    auto tower = [L](const SizePreset& s) {
        double C = s.hidden, hid = swiglu_hidden(s.hidden), l = L;
        double attn = 8.0 * l * C * C + 4.0 * l * l * C;
        double mlp = 6.0 * l * C * hid;
        return s.blocks * (attn + mlp);
    };
    SizePreset e = cfg.encoder(), d = cfg.decoder();
    // embed/unembed/bottleneck projections
    double boundary = 2.0 * L *
                      (static_cast<double>(cfg.patch_dim()) * (e.hidden + d.hidden) +
                       static_cast<double>(e.hidden) * 2 * cfg.c +
                       static_cast<double>(cfg.c) * d.hidden);
    return tower(e) + tower(d) + boundary;
}

}  // namespace vitok
