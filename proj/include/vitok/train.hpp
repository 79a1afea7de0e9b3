#pragma once

#include <chrono>
#include <cstdio>
#include <cstring>
#include <ostream>

#include "vitok/checkpoint.hpp"
#include "vitok/losses.hpp"
#include "vitok/optim.hpp"

namespace vitok {

struct TrainPlan {
    int total_steps = 0;
    int batch_size = 1;
    double peak_lr = 0;  // 0 derives the peak from batch size and frames
    int warmup_steps = 0;
    double weight_decay = 1e-4;
    double clip_norm = 1.0;
    double ema_decay = 0.9999;  // stage-2 decoder EMA; 0 disables
    double disc_lr = 2e-5;
    int disc_warmup_steps = 25000;
    bool full_finetune = false;
    bool deterministic = false;  // zero wall_ms in logs
    uint64_t seed = 0;
    LossWeights weights = LossWeights::stage1();
};

struct TrainState {
    ParamStore params;
    AdamState opt;
    long long step = 0;
    int stage = 1;
    ParamStore ema;  // decoder shadow weights; empty when disabled
    ParamStore disc;
    AdamState disc_opt;
    std::vector<LossBreakdown> history;
};

inline Tensor gather_batch(const Tensor& data, const std::vector<int>& idx) {
    Shape s = data.shape();
    s[0] = static_cast<int>(idx.size());
    Tensor out(s);
    long long row = data.numel() / data.dim(0);
    for (size_t i = 0; i < idx.size(); ++i)
        std::memcpy(out.data() + static_cast<long long>(i) * row, data.data() + idx[i] * row,
                    static_cast<size_t>(row) * sizeof(double));
    return out;
}

// Epoch order is a function of (seed, epoch index) so a resumed run walks
// the same item sequence as an uninterrupted one. Trailing items that don't
// fill a batch are skipped for that epoch.
inline std::vector<int> batch_indices(int n, int batch, uint64_t seed, long long step) {
    if (batch <= 0 || batch > n)
        throw std::invalid_argument("batch size " + std::to_string(batch) + " for " +
                                    std::to_string(n) + " items");
    long long spe = n / batch;
    long long epoch = step / spe, pos = step % spe;
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(mix_seed(mix_seed(seed, fnv1a("epoch")), static_cast<uint64_t>(epoch)));
    rng.permutation(perm);
    return {perm.begin() + pos * batch, perm.begin() + pos * batch + batch};
}

inline Tensor step_noise(const ModelConfig& cfg, int batch, uint64_t seed, long long step) {
    Tensor n({batch, static_cast<int>(cfg.latent_tokens()), cfg.c});
    Rng rng(mix_seed(mix_seed(seed, fnv1a("noise")), static_cast<uint64_t>(step)));
    rng.fill_normal(n, 0.0, 1.0);
    return n;
}

// Masked variant: per-step token budget, a power of two drawn uniformly
// from [min_tokens, tokens].
inline int draw_l_eval(const ModelConfig& cfg, uint64_t seed, long long step) {
    std::vector<int> opts;
    for (long long l = cfg.min_tokens; l <= cfg.tokens(); l *= 2)
        opts.push_back(static_cast<int>(l));
    Rng rng(mix_seed(mix_seed(seed, fnv1a("mask")), static_cast<uint64_t>(step)));
    return opts[rng.uniform_int(static_cast<int>(opts.size()))];
}

inline const char* kTrainCsvHeader = "step,stage,lr,rec,kl,perceptual,gan_g,total,wall_ms";

inline void log_row(std::ostream& os, long long step, int stage, double lr,
                    const LossBreakdown& b, double wall_ms) {
    char buf[320];
    std::snprintf(buf, sizeof buf, "%lld,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n", step,
                  stage, lr, b.rec, b.kl, b.perceptual, b.gan_g, b.total, wall_ms);
    os << buf;
}

namespace detail {

struct StepOut {
    LossBreakdown loss;
    Tensor x_hat;
};

inline StepOut ae_step(const ModelConfig& cfg, TrainState& st, const Tensor& batch,
                       const TrainPlan& plan, const LrSchedule& sched, const FeatureNet& fnet,
                       double lambda_eff, const std::set<std::string>& frozen, bool want_xhat) {
    Graph g;
    BoundParams bp = bind_params(g, st.params, true, frozen);
    NodeId x = g.leaf(batch, false);
    Tensor noise = step_noise(cfg, batch.dim(0), plan.seed, st.step);
    LatentNodes lat = encode(g, x, cfg, bp, g.leaf(noise, false));
    NodeId z = lat.z;
    if (cfg.variant == "masked")
        z = mask_tail(g, z, draw_l_eval(cfg, plan.seed, st.step), cfg, bp);
    NodeId xh = decode(g, z, cfg, bp);
    LossWeights w = plan.weights;
    w.lambda = lambda_eff;
    BoundParams db;
    const BoundParams* dbp = nullptr;
    if (lambda_eff != 0.0) {
        db = bind_params(g, st.disc, false);
        dbp = &db;
    }
    LossNodes ln = total_loss(g, xh, x, lat, w, st.stage, &fnet, dbp);
    LossBreakdown b = breakdown(g, ln);
    if (!std::isfinite(b.total))
        throw std::runtime_error("non-finite loss at step " + std::to_string(st.step) +
                                 " (rec " + std::to_string(b.rec) + ", kl " +
                                 std::to_string(b.kl) + ", perceptual " +
                                 std::to_string(b.perceptual) + ", gan_g " +
                                 std::to_string(b.gan_g) + ")");
    g.backward(ln.total);
    ParamMap grads = collect_grads(g, bp);
    clip_global_norm(grads, plan.clip_norm);
    adamw_step(st.params, grads, st.opt, lr_at(st.step, sched), plan.weight_decay, frozen);
    return {b, want_xhat ? g.value(xh).clone() : Tensor()};
}

inline void disc_step(TrainState& st, const Tensor& batch, const Tensor& x_hat,
                      const TrainPlan& plan) {
    Graph g;
    BoundParams dbp = bind_params(g, st.disc, true);
    NodeId d = gan_d_loss(g, disc_logits(g, g.leaf(batch, false), dbp),
                          disc_logits(g, g.leaf(x_hat, false), dbp));
    if (!std::isfinite(g.value(d).item()))
        throw std::runtime_error("non-finite discriminator loss at step " +
                                 std::to_string(st.step));
    g.backward(d);
    ParamMap grads = collect_grads(g, dbp);
    clip_global_norm(grads, plan.clip_norm);
    LrSchedule ds{plan.disc_lr, plan.disc_warmup_steps, 0, "constant"};
    adamw_step(st.disc, grads, st.disc_opt, lr_at(st.step, ds), plan.weight_decay);
}

inline void ema_update(TrainState& st, double decay) {
    for (auto& [name, e] : st.ema.tensors) {
        const Tensor& w = st.params.at(name);
        for (long long i = 0; i < e.numel(); ++i)
            e.data()[i] = decay * e.data()[i] + (1.0 - decay) * w.data()[i];
        round_to_precision(e);
    }
}

}  // namespace detail

inline LrSchedule plan_schedule(const ModelConfig& cfg, const TrainPlan& plan) {
    double peak = plan.peak_lr > 0 ? plan.peak_lr : peak_lr_for(plan.batch_size, cfg.T);
    return {peak, plan.warmup_steps, plan.total_steps, "cosine"};
}

// Runs st forward until plan.total_steps (or the earlier `until` stop; the
// schedule horizon stays plan.total_steps either way). Every random draw is
// keyed on (plan.seed, step or epoch), so continuing a loaded state is
// bitwise identical to never having stopped.
inline TrainState train_resume(const ModelConfig& cfg, TrainState st, const Tensor& data,
                               const TrainPlan& plan, std::ostream* log = nullptr,
                               long long until = -1) {
    cfg.validate();
    plan.weights.validate();
    if (st.stage == 1 && plan.weights.lambda != 0.0)
        throw std::invalid_argument("stage 1 trains without the adversarial term");
    if (data.rank() != 5 || data.dim(1) != cfg.T || data.dim(2) != cfg.H ||
        data.dim(3) != cfg.W || data.dim(4) != 3)
        throw std::invalid_argument("training data " + shape_str(data.shape()) +
                                    " does not match the model's (N,T,H,W,3)");
    LrSchedule sched = plan_schedule(cfg, plan);
    const FeatureNet& fnet = canonical_feature_net();
    std::set<std::string> frozen;
    if (st.stage == 2 && !plan.full_finetune)
        for (const auto& [name, t] : st.params.tensors)
            if (is_encoder_param(name)) frozen.insert(name);
    long long stop = until < 0 ? plan.total_steps : until;
    if (stop > plan.total_steps)
        throw std::invalid_argument("stop step past the schedule horizon");
    if (log && st.step == 0) *log << kTrainCsvHeader << "\n";
    while (st.step < stop) {
        auto t0 = std::chrono::steady_clock::now();
        Tensor batch =
            gather_batch(data, batch_indices(data.dim(0), plan.batch_size, plan.seed, st.step));
        LossBreakdown b;
        if (st.stage == 1) {
            b = detail::ae_step(cfg, st, batch, plan, sched, fnet, 0.0, frozen, false).loss;
        } else {
            double lam = st.step < plan.disc_warmup_steps ? 0.0 : plan.weights.lambda;
            detail::StepOut so =
                detail::ae_step(cfg, st, batch, plan, sched, fnet, lam, frozen, true);
            b = so.loss;
            detail::disc_step(st, batch, so.x_hat, plan);
            if (plan.ema_decay > 0) detail::ema_update(st, plan.ema_decay);
        }
        double wall =
            plan.deterministic
                ? 0.0
                : std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
        st.history.push_back(b);
        if (log) log_row(*log, st.step, st.stage, lr_at(st.step, sched), b, wall);
        ++st.step;
    }
    return st;
}

inline TrainState train_stage1(const ModelConfig& cfg, ParamStore init, const Tensor& data,
                               const TrainPlan& plan, std::ostream* log = nullptr,
                               long long until = -1) {
    TrainState st;
    st.params = std::move(init);
    st.stage = 1;
    return train_resume(cfg, std::move(st), data, plan, log, until);
}

// Stage 2 starts with fresh optimizer state, a fresh discriminator, and the
// EMA shadow initialized to the current decoder weights.
inline TrainState make_stage2_state(ParamStore params, const TrainPlan& plan) {
    TrainState st;
    st.params = std::move(params);
    st.stage = 2;
    if (plan.ema_decay > 0)
        for (const auto& [name, t] : st.params.tensors)
            if (!is_encoder_param(name)) st.ema.tensors.emplace(name, t.clone());
    st.disc = init_disc_params(mix_seed(plan.seed, fnv1a("disc-init")));
    return st;
}

inline TrainState train_stage2(const ModelConfig& cfg, ParamStore from_stage1, const Tensor& data,
                               const TrainPlan& plan, std::ostream* log = nullptr,
                               long long until = -1) {
    return train_resume(cfg, make_stage2_state(std::move(from_stage1), plan), data, plan, log,
                        until);
}

// ---- persistence: checkpoint plus optimizer sidecar (<path>.opt) ----

inline void save_train_state(const std::string& path, const ModelConfig& cfg,
                             const TrainState& st) {
    auto meta = config_to_kv(cfg);
    meta["train.step"] = std::to_string(st.step);
    meta["train.stage"] = std::to_string(st.stage);
    save_checkpoint(path, st.params, meta);

    ParamStore side;
    for (const auto& [name, t] : st.opt.m) side.tensors.emplace("m." + name, t);
    for (const auto& [name, t] : st.opt.v) side.tensors.emplace("v." + name, t);
    for (const auto& [name, t] : st.ema.tensors) side.tensors.emplace("ema." + name, t);
    for (const auto& [name, t] : st.disc.tensors) side.tensors.emplace("w." + name, t);
    for (const auto& [name, t] : st.disc_opt.m) side.tensors.emplace("dm." + name, t);
    for (const auto& [name, t] : st.disc_opt.v) side.tensors.emplace("dv." + name, t);
    std::map<std::string, std::string> smeta;
    smeta["opt.step"] = std::to_string(st.opt.step);
    smeta["disc_opt.step"] = std::to_string(st.disc_opt.step);
    save_checkpoint(path + ".opt", side, smeta);
}

inline std::pair<TrainState, ModelConfig> load_train_state(const std::string& path) {
    auto [ps, meta] = load_checkpoint(path);
    ModelConfig cfg = config_from_kv(meta);
    TrainState st;
    st.params = std::move(ps);
    st.step = std::stoll(meta.at("train.step"));
    st.stage = std::stoi(meta.at("train.stage"));
    auto [side, smeta] = load_checkpoint(path + ".opt");
    st.opt.step = std::stoll(smeta.at("opt.step"));
    st.disc_opt.step = std::stoll(smeta.at("disc_opt.step"));
    for (auto& [name, t] : side.tensors) {
        auto strip = [&](const char* pfx) { return name.substr(std::strlen(pfx)); };
        if (name.rfind("m.", 0) == 0)
            st.opt.m.emplace(strip("m."), std::move(t));
        else if (name.rfind("v.", 0) == 0)
            st.opt.v.emplace(strip("v."), std::move(t));
        else if (name.rfind("ema.", 0) == 0)
            st.ema.tensors.emplace(strip("ema."), std::move(t));
        else if (name.rfind("w.", 0) == 0)
            st.disc.tensors.emplace(strip("w."), std::move(t));
        else if (name.rfind("dm.", 0) == 0)
            st.disc_opt.m.emplace(strip("dm."), std::move(t));
        else if (name.rfind("dv.", 0) == 0)
            st.disc_opt.v.emplace(strip("dv."), std::move(t));
        else
            throw std::runtime_error("unknown sidecar tensor '" + name + "'");
    }
    return {std::move(st), cfg};
}

}  // namespace vitok
