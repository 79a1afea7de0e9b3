// Acceptance harness: every gate the library promises, one verdict line each.
// Run with no arguments for the full suite, or with a name substring to run a
// subset (e.g. `acceptance tradeoff`). Exit code = number of gating failures.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "vitok/configfile.hpp"
#include "vitok/gradcheck.hpp"
#include "vitok/metrics.hpp"

using namespace vitok;
namespace fs = std::filesystem;

namespace {

double now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

Shape random_shape(Rng& rng, int max_rank = 3, int max_dim = 4) {
    int r = 1 + rng.uniform_int(max_rank);
    Shape s;
    for (int i = 0; i < r; ++i) s.push_back(1 + rng.uniform_int(max_dim));
    return s;
}

Tensor random_tensor(Rng& rng, const Shape& s, double lo = -1.5, double hi = 1.5) {
    Tensor t(s);
    for (double& x : t.raw()) x = rng.uniform(lo, hi);
    return t;
}

NodeId weigh(Graph& g, NodeId v, const Tensor& w) {
    return g.sum(g.mul(v, g.leaf(w, false)), {});
}

// Monte-Carlo E_z~q[log q(z) - log p(z)] under the batch-mean / dim-sum
// convention; the normalization constants cancel.
double mc_kl(const Tensor& zm, const Tensor& lv, int n_samples, uint64_t seed, double* se_out) {
    Rng rng(seed);
    int B = zm.dim(0);
    double sum = 0, sumsq = 0;
    for (int s = 0; s < n_samples; ++s) {
        double item = 0;
        for (size_t i = 0; i < zm.numel(); ++i) {
            double m = zm.data()[i], l = lv.data()[i];
            double z = m + std::exp(0.5 * l) * rng.normal();
            double logq = -0.5 * (l + (z - m) * (z - m) / std::exp(l));
            double logp = -0.5 * z * z;
            item += logq - logp;
        }
        item /= B;
        sum += item;
        sumsq += item * item;
    }
    double mean = sum / n_samples;
    double var = (sumsq - sum * sum / n_samples) / (n_samples - 1.0);
    if (se_out) *se_out = std::sqrt(var / n_samples);
    return mean;
}

struct EvalOut {
    double psnr_v = 0, frechet_v = 0;
};

EvalOut eval_model(const ModelConfig& cfg, const ParamStore& ps, const Tensor& corpus,
                   QuantMode qm = QuantMode::full) {
    int n = corpus.dim(0);
    Tensor recon({n, cfg.T, cfg.H, cfg.W, 3});
    for (int s = 0; s < n; s += 16) {
        std::vector<int> idx;
        for (int i = s; i < std::min(n, s + 16); ++i) idx.push_back(i);
        Tensor r = reconstruct_eval(gather_batch(corpus, idx), cfg, ps, 0, qm);
        std::copy(r.data(), r.data() + r.numel(),
                  recon.data() + static_cast<size_t>(s) * (r.numel() / idx.size()));
    }
    Shape flat{n * cfg.T, cfg.H, cfg.W, 3};
    return {psnr(recon, corpus), frechet_distance(feature_stats(corpus.reshaped(flat)),
                                                  feature_stats(recon.reshaped(flat)))};
}

ModelConfig desk_model() {
    ModelConfig cfg;
    cfg.q = 1;
    cfg.p = 4;
    cfg.c = 8;
    cfg.T = 1;
    cfg.H = cfg.W = 16;
    cfg.encoder_size = "64:2:2";
    cfg.decoder_size = "64:2:2";
    return cfg;
}

TrainPlan desk_plan(long long steps, int batch, double peak, long long warmup, uint64_t seed) {
    TrainPlan plan;
    plan.total_steps = steps;
    plan.batch_size = batch;
    plan.peak_lr = peak;
    plan.warmup_steps = warmup;
    plan.seed = seed;
    plan.deterministic = true;
    plan.weights = LossWeights::stage1();
    return plan;
}

int g_failures = 0;

void run(const std::string& filter, const std::string& name, bool gating,
         const std::function<bool(std::string&)>& fn) {
    if (!filter.empty() && name.find(filter) == std::string::npos) return;
    double t0 = now_s();
    std::string detail;
    bool ok;
    try {
        ok = fn(detail);
    } catch (const std::exception& e) {
        ok = false;
        detail = std::string("exception: ") + e.what();
    }
    const char* verdict = gating ? (ok ? "PASS" : "FAIL") : (ok ? "REPORT" : "REPORT*");
    std::printf("%-7s %-22s %s  [%.1fs]\n", verdict, name.c_str(), detail.c_str(), now_s() - t0);
    std::fflush(stdout);
    if (gating && !ok) ++g_failures;
}

std::string mdb(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

int main(int argc, char** argv) {
    std::string filter = argc > 1 ? argv[1] : "";

    run(filter, "parameter-counts", true, [](std::string& d) {
        double t0 = now_s();
        ModelConfig cfg;  // p=16, c=16, 256x256
        double worst = 0;
        std::ostringstream ss;
        for (auto [name, want_m] :
             {std::pair{"S", 43.3}, std::pair{"B", 85.8}, std::pair{"L", 383.7}}) {
            cfg.encoder_size = name;
            long long got = count_params_encoder(cfg);
            worst = std::max(worst, std::fabs(got - want_m * 1e6) / (want_m * 1e6));
            ss << name << "=" << got / 1e6 << "M ";
        }
        double secs = now_s() - t0;
        d = ss.str() + "max rel " + mdb(worst * 100) + "%";
        return worst < 0.02 && secs < 1.0;
    });

    run(filter, "bottleneck-accounting", true, [](std::string& d) {
        ModelConfig img;  // defaults: p=16, c=16, 1x256x256
        ModelConfig vid;
        vid.q = 4;
        vid.p = 8;
        vid.T = 16;
        vid.H = vid.W = 256;
        d = "image L=" + std::to_string(img.tokens()) + " E=" +
            std::to_string(img.bottleneck_size()) + ", video L=" + std::to_string(vid.tokens());
        return img.bottleneck_size() == 4096 && img.tokens() == 256 && vid.tokens() == 4096;
    });

    run(filter, "gradient-suite", true, [](std::string& d) {
        double t0 = now_s();
        PrecisionGuard guard(Precision::f64);
        Rng rng(2024);
        double worst_op = 0;
        std::string worst_name;
        auto note = [&](const char* name, double err) {
            if (err > worst_op) {
                worst_op = err;
                worst_name = name;
            }
        };
        for (int trial = 0; trial < 8; ++trial) {
            Shape s = random_shape(rng);
            Tensor w = random_tensor(rng, s);
            Tensor x = random_tensor(rng, s);
            Tensor other = random_tensor(rng, s);
            Tensor far = x.clone();
            for (double& v : far.raw())
                if (std::fabs(v) < 0.05) v += v >= 0 ? 0.1 : -0.1;
            Tensor pos = x.clone();
            for (double& v : pos.raw()) v = 0.2 + std::fabs(v);
            Tensor denom = other.clone();
            for (double& v : denom.raw()) v = v >= 0 ? 0.3 + v : -0.3 + v;

            auto check = [&](const char* name, const Tensor& point,
                             std::function<NodeId(Graph&, NodeId)> fn) {
                note(name, grad_check_op(fn, point, 1e-4));
            };
            check("add", x, [&](Graph& g, NodeId in) { return weigh(g, g.add(in, g.leaf(other, false)), w); });
            check("sub", x, [&](Graph& g, NodeId in) { return weigh(g, g.sub(g.leaf(other, false), in), w); });
            check("mul", x, [&](Graph& g, NodeId in) { return weigh(g, g.mul(in, g.leaf(other, false)), w); });
            check("div_num", x, [&](Graph& g, NodeId in) { return weigh(g, g.div(in, g.leaf(denom, false)), w); });
            check("div_den", denom, [&](Graph& g, NodeId in) { return weigh(g, g.div(g.leaf(other, false), in), w); });
            check("sigmoid", x, [&](Graph& g, NodeId in) { return weigh(g, g.sigmoid(in), w); });
            check("silu", x, [&](Graph& g, NodeId in) { return weigh(g, g.silu(in), w); });
            check("exp", x, [&](Graph& g, NodeId in) { return weigh(g, g.exp(in), w); });
            check("log", pos, [&](Graph& g, NodeId in) { return weigh(g, g.log(in), w); });
            check("softplus", x, [&](Graph& g, NodeId in) { return weigh(g, g.softplus(in), w); });
            check("leaky_relu", far, [&](Graph& g, NodeId in) { return weigh(g, g.leaky_relu(in, 0.2), w); });
            check("affine", x, [&](Graph& g, NodeId in) { return weigh(g, g.affine(in, 1.7, -0.3), w); });
            check("clamp", far, [&](Graph& g, NodeId in) { return weigh(g, g.clamp(in, -0.9, 0.9), w); });
            check("sqerr", x, [&](Graph& g, NodeId in) { return weigh(g, g.sqerr(in, g.leaf(other, false)), w); });
            check("abserr", far, [&](Graph& g, NodeId in) { return weigh(g, g.abserr(in, g.leaf(other, false)), w); });
            check("softmax", x, [&](Graph& g, NodeId in) { return weigh(g, g.softmax(in), w); });
            check("rmsnorm", x, [&](Graph& g, NodeId in) { return weigh(g, g.rmsnorm(in, 1e-6), w); });
            check("sum", x, [&](Graph& g, NodeId in) { return g.sum(in, {}); });
            check("mean", x, [&](Graph& g, NodeId in) { return g.mean(in, {}); });

            int axis = rng.uniform_int(static_cast<int>(s.size()));
            Shape rs = s;
            rs.erase(rs.begin() + axis);
            Tensor wr = random_tensor(rng, rs);
            check("sum_axis", x, [&](Graph& g, NodeId in) { return weigh(g, g.sum(in, {axis}), wr); });
            check("mean_axis", x, [&](Graph& g, NodeId in) { return weigh(g, g.mean(in, {axis}), wr); });

            std::vector<int> perm(s.size());
            std::iota(perm.begin(), perm.end(), 0);
            rng.permutation(perm);
            Shape ps(s.size());
            for (size_t i = 0; i < s.size(); ++i) ps[i] = s[static_cast<size_t>(perm[i])];
            Tensor wp = random_tensor(rng, ps);
            check("transpose", x, [&](Graph& g, NodeId in) { return weigh(g, g.transpose(in, perm), wp); });

            Shape flat{static_cast<int>(x.numel())};
            Tensor wf = random_tensor(rng, flat);
            check("reshape", x, [&](Graph& g, NodeId in) { return weigh(g, g.reshape(in, flat), wf); });

            int start = rng.uniform_int(s[0]);
            int len = 1 + rng.uniform_int(s[0] - start);
            Shape ss = s;
            ss[0] = len;
            Tensor ws = random_tensor(rng, ss);
            check("slice", x, [&](Graph& g, NodeId in) { return weigh(g, g.slice(in, 0, start, len), ws); });

            Shape cs = s;
            cs[0] = 2 * s[0];
            Tensor wc = random_tensor(rng, cs);
            check("concat", x, [&](Graph& g, NodeId in) {
                return weigh(g, g.concat({in, g.leaf(other, false)}, 0), wc);
            });

            int M = 1 + rng.uniform_int(3), K = 1 + rng.uniform_int(3), N = 1 + rng.uniform_int(3);
            int B = 1 + rng.uniform_int(2);
            Tensor A3 = random_tensor(rng, {B, M, K});
            Tensor W2 = random_tensor(rng, {K, N});
            Tensor B3 = random_tensor(rng, {B, K, N});
            Tensor wm = random_tensor(rng, {B, M, N});
            check("matmul_lhs", A3, [&](Graph& g, NodeId in) {
                return weigh(g, g.matmul(in, g.leaf(W2, false)), wm);
            });
            check("matmul_rhs", W2, [&](Graph& g, NodeId in) {
                return weigh(g, g.matmul(g.leaf(A3, false), in), wm);
            });
            check("matmul_batched", B3, [&](Graph& g, NodeId in) {
                return weigh(g, g.matmul(g.leaf(A3, false), in), wm);
            });

            int pairs = 1 + rng.uniform_int(3);
            int L = 2 + rng.uniform_int(3), D = 2 * pairs + rng.uniform_int(2);
            Tensor cost({L, pairs}), sint({L, pairs});
            for (int l = 0; l < L; ++l)
                for (int k = 0; k < pairs; ++k) {
                    double ang = rng.uniform(-3.0, 3.0);
                    cost[static_cast<size_t>(l * pairs + k)] = std::cos(ang);
                    sint[static_cast<size_t>(l * pairs + k)] = std::sin(ang);
                }
            Tensor xr = random_tensor(rng, {1, L, D});
            Tensor wrope = random_tensor(rng, {1, L, D});
            check("rope3d", xr, [&](Graph& g, NodeId in) {
                return weigh(g, g.rope3d(in, cost, sint), wrope);
            });
        }

        // full stage-1 loss through a tiny model, every term live
        ModelConfig cfg;
        cfg.p = 4;
        cfg.c = 2;
        cfg.H = cfg.W = 8;
        cfg.scale_override = SizePreset{24, 1, 2};
        cfg.validate();
        ParamStore ps = init_params(cfg, 13);
        Rng wake(14);
        wake.fill_normal(ps.at("enc.0.wo"), 0.0, 0.02);
        wake.fill_normal(ps.at("enc.0.w_down"), 0.0, 0.02);
        wake.fill_normal(ps.at("dec.0.wo"), 0.0, 0.02);
        wake.fill_normal(ps.at("dec.0.w_down"), 0.0, 0.02);
        FeatureNet fnet = make_feature_net(13);
        Tensor X({1, 1, 8, 8, 3});
        Rng xr(80);
        xr.fill_normal(X, 0.0, 0.4);
        Tensor noise({1, 4, 2});
        Rng nr(81);
        nr.fill_normal(noise, 0.0, 1.0);

        ParamMap point;
        for (auto& [name, t] : ps.tensors) point[name] = t;
        Graph g;
        std::map<std::string, NodeId> ids;
        for (const auto& [name, t] : point) ids[name] = g.leaf(t, true);
        BoundParams bp{ids};
        NodeId x = g.leaf(X, false);
        LatentNodes lat = encode(g, x, cfg, bp, g.leaf(noise, false));
        NodeId xh = decode(g, lat.z, cfg, bp);
        LossNodes ln = total_loss(g, xh, x, lat, LossWeights::stage1(), 1, &fnet);
        g.backward(ln.total);
        ParamMap analytic;
        for (const auto& [name, id] : ids) analytic[name] = g.grad(id);
        auto f = [&](const ParamMap& pm) {
            Graph gg;
            std::map<std::string, NodeId> lids;
            for (const auto& [name, t] : pm) lids[name] = gg.leaf(t, false);
            BoundParams lbp{lids};
            NodeId lx = gg.leaf(X, false);
            LatentNodes llat = encode(gg, lx, cfg, lbp, gg.leaf(noise, false));
            NodeId lxh = decode(gg, llat.z, cfg, lbp);
            return gg.value(total_loss(gg, lxh, lx, llat, LossWeights::stage1(), 1, &fnet).total)
                .item();
        };
        GradCheckReport rep = grad_check_report(f, point, analytic, 1e-5, 4);
        double secs = now_s() - t0;
        std::ostringstream ss;
        ss << "ops worst " << worst_op << " (" << worst_name << "), stage-1 worst "
           << rep.max_rel_err << " (" << rep.worst_param << ")";
        d = ss.str();
        return worst_op < 1e-4 && rep.max_rel_err < 1e-4 && secs < 300.0;
    });

    run(filter, "kl-oracle", true, [](std::string& d) {
        double t0 = now_s();
        Rng meta(9);
        double worst_z = 0;
        bool all_ok = true;
        for (int i = 0; i < 20; ++i) {
            int B = 1 + meta.uniform_int(3), D = 2 + meta.uniform_int(7);
            Tensor zm({B, D}), lv({B, D});
            meta.fill_normal(zm, 0.0, 1.0);
            meta.fill_normal(lv, 0.0, 0.8);
            Graph g;
            double analytic = g.value(kl_divergence(g, g.leaf(zm, false), g.leaf(lv, false))).item();
            double se = 0;
            double mc = mc_kl(zm, lv, 1000000, 1000 + i, &se);
            double z = std::fabs(analytic - mc) / se;
            worst_z = std::max(worst_z, z);
            all_ok = all_ok && z <= 3.0;
        }
        double secs = now_s() - t0;
        d = "20 cases, worst |z| " + mdb(worst_z);
        return all_ok && secs < 60.0;
    });

    run(filter, "frechet-analytic", true, [](std::string& d) {
        FeatureStats a, b;
        a.mean = Eigen::VectorXd::Zero(1);
        a.cov = Eigen::MatrixXd::Identity(1, 1);
        a.n = 1000;
        b = a;
        b.mean(0) = 1.0;
        double unit = frechet_distance(a, b);
        bool ok = std::fabs(unit - 1.0) < 1e-6;

        Rng rng(55);
        double worst = 0;
        for (int i = 0; i < 20; ++i) {
            FeatureStats p, q;
            p.mean = Eigen::VectorXd(4);
            q.mean = Eigen::VectorXd(4);
            Eigen::VectorXd va(4), vb(4);
            double expect = 0;
            for (int k = 0; k < 4; ++k) {
                p.mean(k) = rng.uniform(-2.0, 2.0);
                q.mean(k) = rng.uniform(-2.0, 2.0);
                va(k) = rng.uniform(0.1, 4.0);
                vb(k) = rng.uniform(0.1, 4.0);
                double dm = p.mean(k) - q.mean(k);
                double ds = std::sqrt(va(k)) - std::sqrt(vb(k));
                expect += dm * dm + ds * ds;
            }
            p.cov = va.asDiagonal();
            q.cov = vb.asDiagonal();
            p.n = q.n = 1000;
            worst = std::max(worst, std::fabs(frechet_distance(p, q) - expect));
        }
        std::ostringstream ss;
        ss << "unit case " << unit << ", diagonal worst abs err " << worst;
        d = ss.str();
        return ok && worst < 1e-6;
    });

    run(filter, "psnr-vs-bottleneck", true, [](std::string& d) {
        double t0 = now_s();
        CorpusSpec cs;
        cs.kind = "synthetic-textures";
        cs.n = 256;
        cs.seed = 4321;
        cs.T = 1;
        cs.H = cs.W = 16;
        Tensor corpus = make_corpus(cs);
        std::vector<double> log_e, psnrs;
        std::ostringstream ss;
        bool monotone = true;
        for (int c : {2, 4, 8, 16}) {
            ModelConfig cfg = desk_model();
            cfg.c = c;
            TrainPlan plan = desk_plan(800, 8, 5e-3, 20, 7);
            TrainState st = train_stage1(cfg, init_params(cfg, plan.seed), corpus, plan);
            double p = eval_model(cfg, st.params, corpus).psnr_v;
            if (!psnrs.empty() && p < psnrs.back()) monotone = false;
            log_e.push_back(std::log10(static_cast<double>(cfg.bottleneck_size())));
            psnrs.push_back(p);
            ss << "E" << cfg.bottleneck_size() << "=" << mdb(p) << " ";
        }
        double rho = detail::pearson_of(detail::ranks(log_e), detail::ranks(psnrs));
        double secs = now_s() - t0;
        d = ss.str() + "dB, spearman " + mdb(rho);
        return monotone && rho >= 0.9 && secs < 1200.0;
    });

    run(filter, "psnr-vs-frames", true, [](std::string& d) {
        double t0 = now_s();
        std::vector<double> psnrs;
        std::ostringstream ss;
        bool monotone = true;
        for (int T : {4, 8, 16}) {
            ModelConfig cfg;
            cfg.q = 2;
            cfg.p = 8;
            cfg.c = 16;
            cfg.T = T;
            cfg.H = cfg.W = 16;
            cfg.encoder_size = "64:2:2";
            cfg.decoder_size = "64:2:2";
            CorpusSpec cs;
            cs.kind = "synthetic-video";
            cs.motion = "static";
            cs.n = 48;
            cs.T = T;
            cs.H = cs.W = 16;
            cs.seed = 777;
            Tensor corpus = make_corpus(cs);
            TrainPlan plan = desk_plan(1000, 4, 5e-3, 10, 7);
            plan.weights.beta = 0.0;
            TrainState st = train_stage1(cfg, init_params(cfg, plan.seed), corpus, plan);
            double p = eval_model(cfg, st.params, corpus).psnr_v;
            if (!psnrs.empty() && p < psnrs.back()) monotone = false;
            psnrs.push_back(p);
            ss << "T" << T << "=" << mdb(p) << " ";
        }
        double secs = now_s() - t0;
        d = ss.str() + "dB, fixed pixels-per-channel";
        return monotone && secs < 1200.0;
    });

    run(filter, "stage2-contracts", true, [](std::string& d) {
        ModelConfig cfg;
        cfg.p = 4;
        cfg.c = 4;
        cfg.H = cfg.W = 16;
        cfg.scale_override = SizePreset{32, 1, 2};
        cfg.validate();
        CorpusSpec cs;
        cs.kind = "synthetic-textures";
        cs.n = 8;
        cs.seed = 31;
        cs.T = 1;
        cs.H = cs.W = 16;
        Tensor data = make_corpus(cs);

        TrainPlan plan;
        plan.total_steps = 100;
        plan.batch_size = 2;
        plan.peak_lr = 1e-3;
        plan.seed = 31;
        plan.deterministic = true;
        plan.weights = LossWeights::stage2();
        plan.disc_warmup_steps = 0;

        ParamStore w0 = init_params(cfg, 31);
        ParamStore before = w0.clone();
        TrainState st = train_stage2(cfg, std::move(w0), data, plan);
        bool frozen = true, decoder_moved = true;
        for (const auto& [name, t] : before.tensors) {
            if (is_encoder_param(name))
                frozen = frozen && bitwise_equal(t, st.params.at(name));
            else
                decoder_moved = decoder_moved && !bitwise_equal(t, st.params.at(name));
        }

        TrainPlan one = plan;
        one.total_steps = 1;
        ParamStore w1 = init_params(cfg, 31);
        ParamStore init = w1.clone();
        TrainState st1 = train_stage2(cfg, std::move(w1), data, one);
        bool ema_exact = !st1.ema.tensors.empty();
        for (const auto& [name, e] : st1.ema.tensors) {
            const Tensor& ow = init.at(name);
            const Tensor& nw = st1.params.at(name);
            for (size_t i = 0; i < e.numel(); ++i)
                ema_exact = ema_exact &&
                            e.data()[i] == round_scalar(one.ema_decay * ow.data()[i] +
                                                        (1.0 - one.ema_decay) * nw.data()[i]);
        }

        TrainPlan defaults;
        LrSchedule ds{defaults.disc_lr, defaults.disc_warmup_steps, 0, "constant"};
        bool lr_ok = lr_at(12500, ds) == 1e-5 && lr_at(25000, ds) == 2e-5;

        d = std::string("encoder ") + (frozen ? "frozen" : "MOVED") + " over 100 steps, ema " +
            (ema_exact ? "exact" : "OFF") + ", disc lr(12.5k)=" +
            (lr_ok ? "1e-5" : "WRONG");
        return frozen && decoder_moved && ema_exact && lr_ok;
    });

    run(filter, "latent-precision", true, [](std::string& d) {
        ModelConfig cfg = desk_model();
        CorpusSpec cs;
        cs.kind = "synthetic-textures";
        cs.n = 64;
        cs.seed = 1234;
        cs.T = 1;
        cs.H = cs.W = 16;
        Tensor corpus = make_corpus(cs);
        TrainPlan plan = desk_plan(400, 8, 5e-3, 10, 7);
        TrainState st = train_stage1(cfg, init_params(cfg, plan.seed), corpus, plan);
        double full = eval_model(cfg, st.params, corpus, QuantMode::full).psnr_v;
        double half = eval_model(cfg, st.params, corpus, QuantMode::truncated_half).psnr_v;
        double delta = std::fabs(full - half);
        std::ostringstream ss;
        ss << "full " << mdb(full) << " dB vs truncated-half " << mdb(half) << " dB, delta "
           << delta;
        d = ss.str();
        return delta < 0.1;
    });

    run(filter, "loss-tradeoff", true, [](std::string& d) {
        ModelConfig cfg = desk_model();
        CorpusSpec cs;
        cs.kind = "synthetic-textures";
        cs.n = 64;
        cs.seed = 1234;
        cs.T = 1;
        cs.H = cs.W = 16;
        Tensor corpus = make_corpus(cs);
        int hits = 0;
        std::ostringstream ss;
        for (uint64_t seed : {7, 8, 9}) {
            EvalOut at[2];
            for (int k = 0; k < 2; ++k) {
                TrainPlan plan = desk_plan(800, 8, 5e-3, 10, seed);
                plan.weights.beta = 0.0;
                plan.weights.eta = k == 0 ? 0.0 : 1.0;
                TrainState st = train_stage1(cfg, init_params(cfg, plan.seed), corpus, plan);
                at[k] = eval_model(cfg, st.params, corpus);
            }
            bool hit = at[0].psnr_v >= at[1].psnr_v && at[1].frechet_v <= at[0].frechet_v;
            hits += hit;
            ss << "s" << seed << (hit ? "+" : "-") << " psnr " << mdb(at[0].psnr_v) << "/"
               << mdb(at[1].psnr_v) << " fre " << mdb(at[0].frechet_v) << "/"
               << mdb(at[1].frechet_v) << "  ";
        }
        d = ss.str() + "(pixel-only vs +perceptual, majority of 3)";
        return hits >= 2;
    });

    run(filter, "determinism", true, [](std::string& d) {
        fs::path dir = fs::temp_directory_path() / "vitok_accept_det";
        fs::remove_all(dir);
        fs::create_directories(dir);
        auto sh = [&](const std::string& args) {
            std::string cmd = std::string(VITOKLAB_BIN) + " " + args + " >/dev/null 2>&1";
            int status = std::system(cmd.c_str());
            return WIFEXITED(status) && WEXITSTATUS(status) == 0;
        };
        auto slurp = [](const fs::path& p) {
            std::ifstream f(p, std::ios::binary);
            std::stringstream ss;
            ss << f.rdbuf();
            return ss.str();
        };
        std::string cfg =
            "model.q = 1\nmodel.p = 4\nmodel.c = 8\nmodel.T = 1\nmodel.H = 16\nmodel.W = 16\n"
            "model.encoder_size = 32:1:2\nmodel.decoder_size = 32:1:2\n"
            "data.kind = synthetic-textures\ndata.n = 8\ndata.seed = 99\n"
            "train.total_steps = 6\ntrain.batch_size = 4\ntrain.peak_lr = 2e-3\n"
            "train.warmup_steps = 2\nseed = 5\ndeterministic = true\n";
        std::ofstream(dir / "cfg.txt") << cfg;
        std::string sweep_cfg =
            "model.T = 1\nmodel.H = 8\nmodel.W = 8\n"
            "model.encoder_size = 32:1:2\nmodel.decoder_size = 32:1:2\n"
            "sweep.p = [4, 8]\n"
            "data.kind = synthetic-textures\ndata.n = 8\ndata.seed = 99\n"
            "train.total_steps = 4\ntrain.batch_size = 4\ntrain.peak_lr = 2e-3\n"
            "train.warmup_steps = 2\nseed = 3\ndeterministic = true\n";
        std::ofstream(dir / "sweep.txt") << sweep_cfg;

        bool ok = true;
        std::string c = " --config " + (dir / "cfg.txt").string();
        for (const char* side : {"a", "b"}) {
            std::string out = (dir / side).string();
            ok = ok && sh("train" + c + " --out " + out);
            ok = ok && sh("eval" + c + " --checkpoint " + out + "/checkpoint.vtok --out " + out);
            ok = ok && sh("sweep --config " + (dir / "sweep.txt").string() + " --out " + out +
                          "/sw");
        }
        Tensor img = synth_images("synthetic-gradients", 1, 16, 16, 3).reshaped({16, 16, 3});
        save_ppm((dir / "in.ppm").string(), img);
        for (const char* side : {"a", "b"})
            ok = ok && sh("reconstruct --checkpoint " + (dir / side).string() +
                          "/checkpoint.vtok " + (dir / "in.ppm").string() + " --out " +
                          (dir / side / "rc").string());
        int same = 0, total = 0;
        for (const char* rel :
             {"checkpoint.vtok", "checkpoint.vtok.opt", "train_log.csv", "eval.csv",
              "sw/records.csv", "sw/fits.csv", "sw/scatter_psnr_vs_logE.svg",
              "rc/in_recon.ppm"}) {
            ++total;
            same += slurp(dir / "a" / rel) == slurp(dir / "b" / rel) &&
                    !slurp(dir / "a" / rel).empty();
        }
        fs::remove_all(dir);
        d = "train/eval/sweep/reconstruct repeated: " + std::to_string(same) + "/" +
            std::to_string(total) + " artifacts byte-identical";
        return ok && same == total;
    });

    run(filter, "encoder-scaling", true, [](std::string& d) {
        double t0 = now_s();
        SweepSpec spec;
        spec.p = {4};
        spec.q = {1};
        spec.c = {8, 16};
        spec.encoder_size = {"64:2:2", "64:4:2"};
        spec.decoder_size = {"64:2:2"};
        spec.T = {1};
        spec.H = spec.W = 16;
        spec.corpus.kind = "synthetic-textures";
        spec.corpus.n = 64;
        spec.corpus.seed = 1234;
        spec.plan = desk_plan(800, 8, 5e-3, 10, 7);
        spec.seed = 7;
        Tensor corpus = make_corpus([&] {
            CorpusSpec cs = spec.corpus;
            cs.T = 1;
            cs.H = spec.H;
            cs.W = spec.W;
            return cs;
        }());
        std::map<std::pair<int, std::string>, double> at;
        for (const auto& cell : enumerate_cells(spec)) {
            SweepRecord r = run_cell(spec, cell, corpus);
            if (r.status != "ok") throw std::runtime_error("cell " + r.id + " failed");
            at[{cell.cfg.c, cell.cfg.encoder_size}] = r.psnr;
        }
        double spread = std::max(std::fabs(at[{8, "64:2:2"}] - at[{8, "64:4:2"}]),
                                 std::fabs(at[{16, "64:2:2"}] - at[{16, "64:4:2"}]));
        double gain = 0.5 * ((at[{16, "64:2:2"}] - at[{8, "64:2:2"}]) +
                             (at[{16, "64:4:2"}] - at[{8, "64:4:2"}]));
        double secs = now_s() - t0;
        std::ostringstream ss;
        ss << "depth spread " << mdb(spread) << " dB vs doubling-E gain " << mdb(gain)
           << " dB, ratio " << mdb(gain > 0 ? spread / gain : -1.0);
        d = ss.str();
        return gain > 0 && spread / gain < 1.0 && secs < 1200.0;
    });

    run(filter, "resolution-doubling", false, [](std::string& d) {
        std::vector<double> psnrs;
        std::ostringstream ss;
        for (int res : {16, 32}) {
            ModelConfig cfg = desk_model();
            cfg.c = 16;
            cfg.H = cfg.W = res;
            CorpusSpec cs;
            cs.kind = "synthetic-textures";
            cs.n = 64;
            cs.seed = 1234;
            cs.T = 1;
            cs.H = cs.W = res;
            Tensor corpus = make_corpus(cs);
            TrainPlan plan = desk_plan(800, 8, 5e-3, 10, 7);
            TrainState st = train_stage1(cfg, init_params(cfg, plan.seed), corpus, plan);
            psnrs.push_back(eval_model(cfg, st.params, corpus).psnr_v);
            ss << res << "px E=" << cfg.bottleneck_size() << " " << mdb(psnrs.back()) << " dB  ";
        }
        double delta = psnrs[1] - psnrs[0];
        bool in_band = std::fabs(delta) <= 1.0;
        d = ss.str() + "delta " + mdb(delta) + " dB, " +
            (in_band ? "inside" : "outside") + " the 1 dB band at 4x E";
        return in_band;
    });

    std::printf("----\n%s: %d gating failure%s\n", g_failures == 0 ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL",
                g_failures, g_failures == 1 ? "" : "s");
    return g_failures;
}
