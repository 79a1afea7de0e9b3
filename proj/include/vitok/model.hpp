#pragma once

#include "vitok/params.hpp"
#include "vitok/rope.hpp"

namespace vitok {

struct LatentNodes {
    NodeId z_m = -1;
    NodeId logvar = -1;
    NodeId z = -1;
};

struct LatentCode {
    Tensor z_m, logvar, z;
};

// Rotary positions per tower. Learned latent tokens sit past the grid on the
// time axis so they never collide with a grid position.
inline std::vector<std::array<int, 3>> encoder_positions(const ModelConfig& cfg) {
    auto grid = grid_positions(cfg.tq(), cfg.hp(), cfg.wp());
    if (cfg.variant != "latent") return grid;
    std::vector<std::array<int, 3>> pos;
    for (int i = 0; i < cfg.l_latent; ++i) pos.push_back({cfg.tq() + i, 0, 0});
    pos.insert(pos.end(), grid.begin(), grid.end());
    return pos;
}

inline std::vector<std::array<int, 3>> decoder_positions(const ModelConfig& cfg) {
    auto grid = grid_positions(cfg.tq(), cfg.hp(), cfg.wp());
    if (cfg.variant != "latent") return grid;
    for (int i = 0; i < cfg.l_latent; ++i) grid.push_back({cfg.tq() + i, 0, 0});
    return grid;
}

inline NodeId linear(Graph& g, NodeId x, const BoundParams& bp, const std::string& w,
                     const std::string& b) {
    return g.add(g.matmul(x, bp.at(w)), bp.at(b));
}

// (B,T,H,W,3) -> (B, L, C_f): non-overlapping q*p*p blocks, temporal-major
// then row-major traversal, flattened and linearly projected.
inline NodeId tubelet_embed(Graph& g, NodeId x, const ModelConfig& cfg, const BoundParams& bp) {
    const Shape& s = g.value(x).shape();
    if (s.size() != 5 || s[1] != cfg.T || s[2] != cfg.H || s[3] != cfg.W || s[4] != 3)
        throw std::invalid_argument("tubelet_embed input " + shape_str(s) + " does not match config " +
                                    std::to_string(cfg.T) + "x" + std::to_string(cfg.H) + "x" +
                                    std::to_string(cfg.W) + "x3");
    int B = s[0];
    NodeId r = g.reshape(x, {B, cfg.tq(), cfg.q, cfg.hp(), cfg.p, cfg.wp(), cfg.p, 3});
    r = g.transpose(r, {0, 1, 3, 5, 2, 4, 6, 7});
    r = g.reshape(r, {B, cfg.tokens(), cfg.patch_dim()});
    return linear(g, r, bp, "embed.w", "embed.b");
}

// (B, L, patch_dim) -> (B,T,H,W,3), exact inverse ordering of tubelet_embed.
inline NodeId unshuffle_pixels(Graph& g, NodeId tok, const ModelConfig& cfg) {
    int B = g.value(tok).dim(0);
    NodeId r = g.reshape(tok, {B, cfg.tq(), cfg.hp(), cfg.wp(), cfg.q, cfg.p, cfg.p, 3});
    r = g.transpose(r, {0, 1, 4, 2, 5, 3, 6, 7});
    return g.reshape(r, {B, cfg.T, cfg.H, cfg.W, 3});
}

// Pre-norm residual block: x + Attn(RMSNorm(x)*g), then + SwiGLU(RMSNorm(*)*g).
// Full bidirectional attention; rotary applied to q and k.
inline NodeId transformer_block(Graph& g, NodeId x, const BoundParams& bp, const std::string& pfx,
                                int heads, const RopeTables& rt) {
    const Shape& s = g.value(x).shape();
    if (s.size() != 3) throw std::invalid_argument("transformer_block wants (B, L, C)");
    int B = s[0], L = s[1], C = s[2];
    if (C % heads) throw std::invalid_argument("token width not divisible by heads");
    int dh = C / heads;

    NodeId h = g.mul(g.rmsnorm(x, 1e-6), bp.at(pfx + ".attn_norm.g"));
    auto split = [&](NodeId t) {
        return g.transpose(g.reshape(t, {B, L, heads, dh}), {0, 2, 1, 3});
    };
    NodeId q = rope_rotate(g, split(g.matmul(h, bp.at(pfx + ".wq"))), rt);
    NodeId k = rope_rotate(g, split(g.matmul(h, bp.at(pfx + ".wk"))), rt);
    NodeId v = split(g.matmul(h, bp.at(pfx + ".wv")));
    NodeId scores = g.affine(g.matmul(q, g.transpose(k, {0, 1, 3, 2})), 1.0 / std::sqrt(dh), 0.0);
    NodeId stab = g.leaf(max_last_axis_keepdim(g.value(scores)), false);
    NodeId attn = g.softmax(g.sub(scores, stab));
    NodeId ctx = g.reshape(g.transpose(g.matmul(attn, v), {0, 2, 1, 3}), {B, L, C});
    x = g.add(x, g.matmul(ctx, bp.at(pfx + ".wo")));

    NodeId m = g.mul(g.rmsnorm(x, 1e-6), bp.at(pfx + ".mlp_norm.g"));
    NodeId gated = g.mul(g.silu(g.matmul(m, bp.at(pfx + ".w_gate"))), g.matmul(m, bp.at(pfx + ".w_up")));
    return g.add(x, g.matmul(gated, bp.at(pfx + ".w_down")));
}

inline NodeId run_tower(Graph& g, NodeId tok, const BoundParams& bp, const std::string& side,
                        const SizePreset& size, const RopeTables& rt) {
    for (int i = 0; i < size.blocks; ++i)
        tok = transformer_block(g, tok, bp, side + "." + std::to_string(i), size.heads, rt);
    return tok;
}

// Broadcast a (span, C) or single (C,) parameter to (B, span, C).
inline NodeId tile_tokens(Graph& g, NodeId param, int B, int span, int C) {
    int rows = static_cast<int>(g.value(param).numel()) / C;
    NodeId row = g.reshape(param, {1, rows, C});
    return g.add(g.leaf(Tensor::zeros({B, span, C}), false), row);
}

// Embed + (latent-variant prepend) + encoder tower.
inline NodeId encoder_tokens(Graph& g, NodeId x, const ModelConfig& cfg, const BoundParams& bp) {
    NodeId tok = tubelet_embed(g, x, cfg, bp);
    SizePreset enc = cfg.encoder();
    if (cfg.variant == "latent") {
        int B = g.value(tok).dim(0);
        NodeId lat = tile_tokens(g, bp.at("latent.tokens"), B, cfg.l_latent, enc.hidden);
        tok = g.concat({lat, tok}, 1);
    }
    RopeTables rt = rope_tables(encoder_positions(cfg), enc.hidden / enc.heads);
    return run_tower(g, tok, bp, "enc", enc, rt);
}

// Linear to 2c, split (z_m, logvar), clamp, reparameterize. `noise` is a
// (B, l, c) leaf or -1 for the zero-noise path (then z == z_m).
inline LatentNodes to_latent(Graph& g, NodeId tok, const ModelConfig& cfg, const BoundParams& bp,
                             NodeId noise = -1) {
    if (cfg.variant == "latent") tok = g.slice(tok, 1, 0, cfg.l_latent);
    NodeId both = linear(g, tok, bp, "bottleneck.w", "bottleneck.b");
    LatentNodes ln;
    ln.z_m = g.slice(both, 2, 0, cfg.c);
    ln.logvar = g.clamp(g.slice(both, 2, cfg.c, cfg.c), -30.0, 20.0);
    if (noise >= 0) {
        if (g.value(noise).shape() != g.value(ln.z_m).shape())
            throw std::invalid_argument("noise shape " + shape_str(g.value(noise).shape()) +
                                        " vs latent " + shape_str(g.value(ln.z_m).shape()));
        NodeId sdev = g.exp(g.affine(ln.logvar, 0.5, 0.0));
        ln.z = g.add(ln.z_m, g.mul(sdev, noise));
    } else {
        ln.z = ln.z_m;
    }
    return ln;
}

inline LatentNodes encode(Graph& g, NodeId x, const ModelConfig& cfg, const BoundParams& bp,
                          NodeId noise = -1) {
    return to_latent(g, encoder_tokens(g, x, cfg, bp), cfg, bp, noise);
}

// Replace tokens at indices >= l_eval with the learned mask token (masked
// variant). l_eval must be a power of two in [min_tokens, L].
inline NodeId mask_tail(Graph& g, NodeId z, int l_eval, const ModelConfig& cfg,
                        const BoundParams& bp) {
    if (cfg.variant != "masked") throw std::logic_error("mask_tail needs variant=masked");
    int L = g.value(z).dim(1);
    if (l_eval <= 0 || (l_eval & (l_eval - 1)) || l_eval < cfg.min_tokens || l_eval > L)
        throw std::invalid_argument("l_eval=" + std::to_string(l_eval) +
                                    " must be a power of two in [" + std::to_string(cfg.min_tokens) +
                                    ", " + std::to_string(L) + "]");
    if (l_eval == L) return z;
    int B = g.value(z).dim(0);
    NodeId head = g.slice(z, 1, 0, l_eval);
    NodeId span = tile_tokens(g, bp.at("masked.token"), B, L - l_eval, cfg.c);
    return g.concat({head, span}, 1);
}

// (B, l, c) -> (B,T,H,W,3).
inline NodeId decode(Graph& g, NodeId z, const ModelConfig& cfg, const BoundParams& bp) {
    const Shape& s = g.value(z).shape();
    if (s.size() != 3 || s[2] != cfg.c)
        throw std::invalid_argument("decode wants (B, l, c=" + std::to_string(cfg.c) + "), got " +
                                    shape_str(s));
    SizePreset dec = cfg.decoder();
    NodeId tok = linear(g, z, bp, "decode_in.w", "decode_in.b");
    if (cfg.variant == "latent") {
        NodeId grid = tile_tokens(g, bp.at("latent.mask"), s[0], cfg.tokens(), dec.hidden);
        tok = g.concat({grid, tok}, 1);
    }
    RopeTables rt = rope_tables(decoder_positions(cfg), dec.hidden / dec.heads);
    tok = run_tower(g, tok, bp, "dec", dec, rt);
    if (cfg.variant == "latent") tok = g.slice(tok, 1, 0, cfg.tokens());
    NodeId px = linear(g, tok, bp, "unembed.w", "unembed.b");
    return unshuffle_pixels(g, px, cfg);
}

enum class QuantMode { full, truncated_half };

inline QuantMode quant_mode_from(const std::string& s) {
    if (s == "full") return QuantMode::full;
    if (s == "truncated-half") return QuantMode::truncated_half;
    throw std::invalid_argument("unknown quantization mode '" + s + "'");
}

// full = identity; truncated-half keeps 8 mantissa bits (round to nearest
// even) and re-expands.
inline Tensor quantize_latent(const Tensor& z, QuantMode mode) {
    if (mode == QuantMode::full) return z;
    Tensor out = z.clone();
    for (double& v : out.raw())
        v = static_cast<double>(truncate_mantissa_rne(static_cast<float>(v), 8));
    return out;
}

// ---- graph-free convenience wrappers (zero-noise, no gradients) ----

inline LatentCode encode_eval(const Tensor& X, const ModelConfig& cfg, const ParamStore& ps,
                              const Tensor& noise = Tensor()) {
    Graph g;
    BoundParams bp = bind_params(g, ps, false);
    NodeId x = g.leaf(X, false);
    NodeId nz = noise.empty() ? -1 : g.leaf(noise, false);
    LatentNodes ln = encode(g, x, cfg, bp, nz);
    return {g.value(ln.z_m), g.value(ln.logvar), g.value(ln.z)};
}

inline Tensor decode_eval(const Tensor& z, const ModelConfig& cfg, const ParamStore& ps) {
    Graph g;
    BoundParams bp = bind_params(g, ps, false);
    return g.value(decode(g, g.leaf(z, false), cfg, bp));
}

// Zero-noise roundtrip; l_eval > 0 applies tail masking (masked variant).
inline Tensor reconstruct_eval(const Tensor& X, const ModelConfig& cfg, const ParamStore& ps,
                               int l_eval = 0, QuantMode qm = QuantMode::full) {
    Graph g;
    BoundParams bp = bind_params(g, ps, false);
    LatentNodes ln = encode(g, g.leaf(X, false), cfg, bp);
    NodeId z = ln.z;
    if (qm != QuantMode::full) z = g.leaf(quantize_latent(g.value(z), qm), false);
    if (l_eval > 0) z = mask_tail(g, z, l_eval, cfg, bp);
    return g.value(decode(g, z, cfg, bp));
}

}  // namespace vitok
