#pragma once

#include "vitok/model.hpp"

namespace vitok {

struct LossWeights {
    double beta = 1e-3;    // KL
    double eta = 1.0;      // perceptual proxy
    double lambda = 0.0;   // adversarial
    std::string rec_kind = "L2";  // L1 | L2

    static LossWeights stage1() { return {1e-3, 1.0, 0.0, "L2"}; }
    static LossWeights stage2() { return {1e-3, 1.0, 1.0, "L2"}; }

    void validate() const {
        if (beta < 0 || eta < 0 || lambda < 0)
            throw std::invalid_argument("loss weights must be non-negative");
        if (rec_kind != "L1" && rec_kind != "L2")
            throw std::invalid_argument("rec_kind must be L1 or L2, got '" + rec_kind + "'");
    }
};

struct LossBreakdown {
    double rec = 0, kl = 0, perceptual = 0, gan_g = 0, total = 0;
};

struct LossNodes {
    NodeId rec = -1, kl = -1, perceptual = -1, gan_g = -1, total = -1;
};

// (B,T,H,W,C) -> (B*T,H,W,C); already-4D input passes through. Perceptual
// and adversarial terms act frame-by-frame.
inline NodeId flatten_frames(Graph& g, NodeId x) {
    const Shape& s = g.value(x).shape();
    if (s.size() == 4) return x;
    if (s.size() != 5) throw std::invalid_argument("expected (B,T,H,W,C) or (N,H,W,C), got " + shape_str(s));
    return g.reshape(x, {s[0] * s[1], s[2], s[3], s[4]});
}

inline NodeId reconstruction_loss(Graph& g, NodeId x_hat, NodeId x, const std::string& kind) {
    if (g.value(x_hat).shape() != g.value(x).shape())
        throw std::invalid_argument("reconstruction shapes " + shape_str(g.value(x_hat).shape()) +
                                    " vs " + shape_str(g.value(x).shape()));
    if (kind == "L2") return g.mean(g.sqerr(x_hat, x), {});
    if (kind == "L1") return g.mean(g.abserr(x_hat, x), {});
    throw std::invalid_argument("rec kind '" + kind + "'");
}

// Mean over the batch of the per-item sum over all latent dims of
// (z_m^2 + e^logvar - 1 - logvar) / 2.
inline NodeId kl_divergence(Graph& g, NodeId z_m, NodeId logvar) {
    const Shape& s = g.value(z_m).shape();
    if (s != g.value(logvar).shape())
        throw std::invalid_argument("kl shapes " + shape_str(s) + " vs " +
                                    shape_str(g.value(logvar).shape()));
    NodeId term = g.sub(g.add(g.mul(z_m, z_m), g.exp(logvar)), g.affine(logvar, 1.0, 1.0));
    NodeId half = g.affine(term, 0.5, 0.0);
    std::vector<int> item_axes(static_cast<size_t>(g.value(half).rank()) - 1);
    std::iota(item_axes.begin(), item_axes.end(), 1);
    return g.mean(g.sum(half, item_axes), {0});
}

// Fixed random strided feature pyramid standing in for a pretrained
// perceptual net: per stage, non-overlapping patchify -> linear -> leaky
// relu. Weights are seeded constants and never receive gradients.
struct FeatureNet {
    std::vector<Tensor> w, b;
    std::vector<int> strides{4, 2, 2};
    std::vector<int> widths{64, 64, 64};
    uint64_t seed = 0;
};

inline FeatureNet make_feature_net(uint64_t seed) {
    FeatureNet net;
    net.seed = seed;
    Rng rng(mix_seed(seed, fnv1a("feature-net")));
    int ch = 3;
    for (size_t i = 0; i < net.strides.size(); ++i) {
        int s = net.strides[i], out = net.widths[i];
        int fan_in = s * s * ch;
        Tensor w({fan_in, out});
        rng.fill_normal(w, 0.0, std::sqrt(2.0 / fan_in));
        net.w.push_back(std::move(w));
        net.b.push_back(Tensor::zeros({out}));
        ch = out;
    }
    return net;
}

// The shared default net: the perceptual term and the feature-distribution
// metric read the same activations so their numbers are comparable.
inline const FeatureNet& canonical_feature_net() {
    static FeatureNet net = make_feature_net(0x7a11e7u);
    return net;
}

// One strided linear stage over (N,H,W,C); caller guarantees divisibility.
inline NodeId patch_stage(Graph& g, NodeId x, int stride, NodeId w, NodeId b, double slope) {
    const Shape& s = g.value(x).shape();
    int N = s[0], H = s[1], W = s[2], C = s[3];
    NodeId r = g.reshape(x, {N, H / stride, stride, W / stride, stride, C});
    r = g.transpose(r, {0, 1, 3, 2, 4, 5});
    r = g.reshape(r, {N, (H / stride) * (W / stride), stride * stride * C});
    r = g.add(g.matmul(r, w), b);
    r = g.leaky_relu(r, slope);
    int out = g.value(w).dim(1);
    return g.reshape(r, {N, H / stride, W / stride, out});
}

// Stage activations for (N,H,W,3) frames. Stages stop once the spatial grid
// no longer divides by the stride, so small inputs still produce a pyramid.
inline std::vector<NodeId> feature_pyramid(Graph& g, const FeatureNet& net, NodeId frames) {
    std::vector<NodeId> acts;
    NodeId cur = frames;
    for (size_t i = 0; i < net.strides.size(); ++i) {
        const Shape& s = g.value(cur).shape();
        int stride = net.strides[i];
        if (s[1] < stride || s[2] < stride || s[1] % stride || s[2] % stride) break;
        cur = patch_stage(g, cur, stride, g.leaf(net.w[i], false), g.leaf(net.b[i], false), 0.2);
        acts.push_back(cur);
    }
    if (acts.empty()) throw std::invalid_argument("input too small for any feature stage");
    return acts;
}

// Mean over stages of the mean squared activation distance.
inline NodeId perceptual_proxy_loss(Graph& g, NodeId x_hat, NodeId x, const FeatureNet& net) {
    if (g.value(x_hat).shape() != g.value(x).shape())
        throw std::invalid_argument("perceptual shapes differ");
    auto ha = feature_pyramid(g, net, flatten_frames(g, x_hat));
    auto hb = feature_pyramid(g, net, flatten_frames(g, x));
    NodeId acc = -1;
    for (size_t i = 0; i < ha.size(); ++i) {
        NodeId d = g.mean(g.sqerr(ha[i], hb[i]), {});
        acc = acc < 0 ? d : g.add(acc, d);
    }
    return g.affine(acc, 1.0 / static_cast<double>(ha.size()), 0.0);
}

// ---- discriminator stand-in ----

// 3-stage strided patch discriminator: 4x4 patchify to 64 ch, 2x2 to 128,
// 2x2 to a logit per patch, leaky 0.2 between, patch logits averaged.
inline std::vector<std::pair<std::string, Shape>> disc_param_shapes() {
    return {
        {"disc.0.w", {48, 64}},  {"disc.0.b", {64}},  {"disc.1.w", {256, 128}},
        {"disc.1.b", {128}},     {"disc.2.w", {512, 1}}, {"disc.2.b", {1}},
    };
}

inline ParamStore init_disc_params(uint64_t seed) {
    ParamStore ps;
    Rng rng(mix_seed(seed, fnv1a("disc")));
    for (const auto& [name, shape] : disc_param_shapes()) {
        Tensor t(shape);
        if (shape.size() == 2) rng.fill_normal(t, 0.0, std::sqrt(2.0 / shape[0]));
        t.set_requires_grad(true);
        ps.tensors.emplace(name, std::move(t));
    }
    return ps;
}

// Per-frame logits (N,) for (B,T,H,W,3) or (N,H,W,3) input.
inline NodeId disc_logits(Graph& g, NodeId images, const BoundParams& disc) {
    NodeId cur = flatten_frames(g, images);
    const int strides[3] = {4, 2, 2};
    for (int i = 0; i < 3; ++i) {
        const Shape& s = g.value(cur).shape();
        if (s[1] < strides[i] || s[2] < strides[i] || s[1] % strides[i] || s[2] % strides[i]) break;
        std::string pfx = "disc." + std::to_string(i);
        NodeId w = disc.at(pfx + ".w");
        NodeId b = disc.at(pfx + ".b");
        double slope = i == 2 ? 1.0 : 0.2;  // no nonlinearity on the logit stage
        cur = patch_stage(g, cur, strides[i], w, b, slope);
    }
    const Shape& s = g.value(cur).shape();
    return g.reshape(g.mean(cur, {1, 2, 3}), {s[0]});
}

// Non-saturating logistic GAN.
inline NodeId gan_g_loss(Graph& g, NodeId fake_logits) {
    return g.mean(g.softplus(g.affine(fake_logits, -1.0, 0.0)), {});
}

inline NodeId gan_d_loss(Graph& g, NodeId real_logits, NodeId fake_logits) {
    return g.add(g.mean(g.softplus(g.affine(real_logits, -1.0, 0.0)), {}),
                 g.mean(g.softplus(fake_logits), {}));
}

// Both adversarial losses in one graph; the discriminator sees the
// reconstruction detached.
inline std::pair<NodeId, NodeId> gan_losses(Graph& g, const BoundParams& disc, NodeId x_hat,
                                            NodeId x) {
    NodeId g_loss = gan_g_loss(g, disc_logits(g, x_hat, disc));
    NodeId detached = g.leaf(g.value(x_hat), false);
    NodeId d_loss = gan_d_loss(g, disc_logits(g, x, disc), disc_logits(g, detached, disc));
    return {g_loss, d_loss};
}

// total = rec + beta*kl + eta*perceptual + lambda*gan_g. Stage 1 runs with
// lambda forced to zero; passing a nonzero lambda there is a config error.
inline LossNodes total_loss(Graph& g, NodeId x_hat, NodeId x, const LatentNodes& latent,
                            const LossWeights& w, int stage, const FeatureNet* fnet = nullptr,
                            const BoundParams* disc = nullptr) {
    w.validate();
    if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
    if (stage == 1 && w.lambda != 0.0)
        throw std::invalid_argument("stage 1 trains without the adversarial term (lambda must be 0)");
    LossNodes ln;
    ln.rec = reconstruction_loss(g, x_hat, x, w.rec_kind);
    ln.kl = kl_divergence(g, latent.z_m, latent.logvar);
    if (w.eta != 0.0 && fnet)
        ln.perceptual = perceptual_proxy_loss(g, x_hat, x, *fnet);
    else
        ln.perceptual = g.constant(0.0);
    if (w.lambda != 0.0) {
        if (!disc) throw std::invalid_argument("lambda > 0 needs a discriminator");
        ln.gan_g = gan_g_loss(g, disc_logits(g, x_hat, *disc));
    } else {
        ln.gan_g = g.constant(0.0);
    }
    NodeId total = g.add(ln.rec, g.affine(ln.kl, w.beta, 0.0));
    total = g.add(total, g.affine(ln.perceptual, w.eta, 0.0));
    ln.total = g.add(total, g.affine(ln.gan_g, w.lambda, 0.0));
    return ln;
}

inline LossBreakdown breakdown(const Graph& g, const LossNodes& ln) {
    LossBreakdown b;
    b.rec = g.value(ln.rec).item();
    b.kl = g.value(ln.kl).item();
    b.perceptual = g.value(ln.perceptual).item();
    b.gan_g = g.value(ln.gan_g).item();
    b.total = g.value(ln.total).item();
    return b;
}

}  // namespace vitok
