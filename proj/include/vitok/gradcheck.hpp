#pragma once

#include <functional>
#include <map>
#include <string>

#include "vitok/params.hpp"
#include "vitok/tape.hpp"

namespace vitok {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    size_t worst_index = 0;
    size_t probes = 0;
};

// Central-difference check of `analytic` against f at `point`. Requires the
// 64-bit precision mode; rel err per coordinate is
// |analytic - fd| / max(1, |analytic|). `max_coords_per_tensor` caps probes
// per tensor with a seeded subsample (0 probes everything).
inline GradCheckReport grad_check_report(const std::function<double(const ParamMap&)>& f,
                                         const ParamMap& point, const ParamMap& analytic,
                                         double h, int max_coords_per_tensor = 0,
                                         uint64_t seed = 17) {
    if (precision() != Precision::f64)
        throw std::logic_error("grad_check requires the 64-bit precision mode");
    if (h <= 0) throw std::invalid_argument("grad_check step must be positive");
    GradCheckReport rep;
    ParamMap work;
    for (const auto& [name, t] : point) work.emplace(name, t.clone());
    Rng rng(seed);
    for (const auto& [name, t] : point) {
        auto git = analytic.find(name);
        if (git == analytic.end())
            throw std::invalid_argument("grad_check: no analytic gradient for " + name);
        if (git->second.shape() != t.shape())
            throw std::invalid_argument("grad_check: gradient shape mismatch for " + name);
        size_t n = t.numel();
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        size_t probes = n;
        if (max_coords_per_tensor > 0 && static_cast<size_t>(max_coords_per_tensor) < n) {
            rng.permutation(order);
            probes = static_cast<size_t>(max_coords_per_tensor);
        }
        Tensor& w = work.at(name);
        for (size_t k = 0; k < probes; ++k) {
            size_t i = static_cast<size_t>(order[k]);
            double orig = w[i];
            w[i] = orig + h;
            double fp = f(work);
            w[i] = orig - h;
            double fm = f(work);
            w[i] = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw std::runtime_error("grad_check: non-finite f near " + name);
            double fd = (fp - fm) / (2.0 * h);
            double an = git->second[i];
            double err = std::fabs(an - fd) / std::max(1.0, std::fabs(an));
            ++rep.probes;
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.worst_param = name;
                rep.worst_index = i;
            }
        }
    }
    return rep;
}

inline double grad_check(const std::function<double(const ParamMap&)>& f, const ParamMap& point,
                         const ParamMap& analytic, double h, int max_coords_per_tensor = 0,
                         uint64_t seed = 17) {
    return grad_check_report(f, point, analytic, h, max_coords_per_tensor, seed).max_rel_err;
}

// One-tensor convenience: build the graph inside `run`, which returns the
// output node id; gradients come from the tape itself.
inline double grad_check_op(const std::function<NodeId(Graph&, NodeId)>& run, const Tensor& x,
                            double h = 1e-4, int max_coords = 0, uint64_t seed = 17) {
    Graph g0;
    Tensor x0 = x.clone();
    x0.set_requires_grad(true);
    NodeId in = g0.leaf(x0);
    NodeId out = run(g0, in);
    if (g0.value(out).numel() != 1)
        throw std::invalid_argument("grad_check_op needs a scalar-valued graph");
    g0.backward(out);
    ParamMap point{{"x", x}};
    ParamMap grads{{"x", g0.grad(in)}};
    auto f = [&run](const ParamMap& p) {
        Graph g;
        NodeId in2 = g.leaf(p.at("x").clone(), false);
        return g.value(run(g, in2)).item();
    };
    return grad_check(f, point, grads, h, max_coords, seed);
}

}  // namespace vitok
