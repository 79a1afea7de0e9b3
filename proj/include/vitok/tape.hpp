#pragma once

#include <algorithm>
#include <functional>
#include <numeric>

#include "vitok/tensor.hpp"

namespace vitok {

using NodeId = int;

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
    int r = std::max(ra, rb);
    Shape out(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) {
        int da = i < r - ra ? 1 : a[static_cast<size_t>(i - (r - ra))];
        int db = i < r - rb ? 1 : b[static_cast<size_t>(i - (r - rb))];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[static_cast<size_t>(i)] = std::max(da, db);
    }
    return out;
}

// Strides for reading `s`-shaped data while iterating an `out`-shaped index
// space; broadcast dims get stride 0.
inline std::vector<size_t> broadcast_strides(const Shape& s, const Shape& out) {
    int r = static_cast<int>(out.size()), rs = static_cast<int>(s.size());
    auto nat = shape_strides(s);
    std::vector<size_t> st(static_cast<size_t>(r), 0);
    for (int i = 0; i < rs; ++i) {
        size_t oi = static_cast<size_t>(r - rs + i);
        st[oi] = (s[static_cast<size_t>(i)] == 1 && out[oi] != 1) ? 0 : nat[static_cast<size_t>(i)];
    }
    return st;
}

template <class F>
Tensor binary_broadcast(const Tensor& a, const Tensor& b, F f) {
    if (a.shape() == b.shape()) {
        Tensor out(a.shape());
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = out.data();
        size_t n = out.numel();
        for (size_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
        round_to_precision(out);
        return out;
    }
    Shape os = broadcast_shape(a.shape(), b.shape());
    Tensor out(os);
    auto sa = broadcast_strides(a.shape(), os);
    auto sb = broadcast_strides(b.shape(), os);
    std::vector<int> idx(os.size(), 0);
    size_t oa = 0, ob = 0, n = out.numel();
    for (size_t i = 0; i < n; ++i) {
        out[i] = f(a[oa], b[ob]);
        for (int d = static_cast<int>(os.size()) - 1; d >= 0; --d) {
            size_t ud = static_cast<size_t>(d);
            ++idx[ud];
            oa += sa[ud];
            ob += sb[ud];
            if (idx[ud] < os[ud]) break;
            idx[ud] = 0;
            oa -= sa[ud] * static_cast<size_t>(os[ud]);
            ob -= sb[ud] * static_cast<size_t>(os[ud]);
        }
    }
    round_to_precision(out);
    return out;
}

// Sum `g` down to `target` shape (inverse of broadcasting).
inline Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
    if (g.shape() == target) return g;
    Shape padded(g.shape().size(), 1);
    for (size_t i = 0; i < target.size(); ++i)
        padded[g.shape().size() - target.size() + i] = target[i];
    Tensor out(padded);
    auto so = broadcast_strides(padded, g.shape());
    std::vector<int> idx(g.shape().size(), 0);
    size_t oo = 0, n = g.numel();
    const Shape& gs = g.shape();
    for (size_t i = 0; i < n; ++i) {
        out[oo] += g[i];
        for (int d = static_cast<int>(gs.size()) - 1; d >= 0; --d) {
            size_t ud = static_cast<size_t>(d);
            ++idx[ud];
            oo += so[ud];
            if (idx[ud] < gs[ud]) break;
            idx[ud] = 0;
            oo -= so[ud] * static_cast<size_t>(gs[ud]);
        }
    }
    return out.reshaped(target);
}

// Row-wise max over the last axis, kept as a size-1 axis. Used at softmax
// call sites as a constant stabilizer.
inline Tensor max_last_axis_keepdim(const Tensor& t) {
    if (t.rank() < 1) throw std::invalid_argument("max_last_axis_keepdim needs rank >= 1");
    int w = t.dim(t.rank() - 1);
    size_t rows = t.numel() / static_cast<size_t>(w);
    Shape os = t.shape();
    os.back() = 1;
    Tensor out(os);
    for (size_t r = 0; r < rows; ++r) {
        const double* p = t.data() + r * static_cast<size_t>(w);
        double m = p[0];
        for (int j = 1; j < w; ++j) m = std::max(m, p[j]);
        out[r] = m;
    }
    return out;
}

namespace detail {

// C[M,N] += A[M,K] * B[K,N]
inline void mm_acc(const double* A, const double* B, double* C, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<size_t>(i) * K;
        double* c = C + static_cast<size_t>(i) * N;
        for (int k = 0; k < K; ++k) {
            double av = a[k];
            const double* b = B + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
inline void mm_nt_acc(const double* A, const double* B, double* C, int M, int K, int N) {
    for (int i = 0; i < M; ++i) {
        const double* a = A + static_cast<size_t>(i) * K;
        double* c = C + static_cast<size_t>(i) * N;
        for (int j = 0; j < N; ++j) {
            const double* b = B + static_cast<size_t>(j) * K;
            double s = 0.0;
            for (int k = 0; k < K; ++k) s += a[k] * b[k];
            c[j] += s;
        }
    }
}

// C[K,N] += A[M,K]^T * B[M,N]
inline void mm_tn_acc(const double* A, const double* B, double* C, int M, int K, int N) {
    for (int m = 0; m < M; ++m) {
        const double* a = A + static_cast<size_t>(m) * K;
        const double* b = B + static_cast<size_t>(m) * N;
        for (int k = 0; k < K; ++k) {
            double av = a[k];
            double* c = C + static_cast<size_t>(k) * N;
            for (int j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

inline std::vector<int> normalize_axes(const std::vector<int>& axes, int rank) {
    std::vector<int> ax = axes;
    if (ax.empty()) {
        ax.resize(static_cast<size_t>(rank));
        std::iota(ax.begin(), ax.end(), 0);
        return ax;
    }
    for (int& a : ax) {
        if (a < 0) a += rank;
        if (a < 0 || a >= rank) throw std::invalid_argument("reduce axis out of range");
    }
    std::sort(ax.begin(), ax.end());
    if (std::adjacent_find(ax.begin(), ax.end()) != ax.end())
        throw std::invalid_argument("duplicate reduce axis");
    return ax;
}

}  // namespace detail

// Define-by-run tape. Ops execute eagerly, record the backward closure, and
// the tape's creation order doubles as the topological order for backward.
class Graph {
public:
    NodeId leaf(Tensor t) {
        bool ng = t.requires_grad();
        return record(std::move(t), ng, nullptr, "leaf");
    }

    NodeId leaf(Tensor t, bool needs_grad) {
        t.set_requires_grad(needs_grad);
        return record(std::move(t), needs_grad, nullptr, "leaf");
    }

    NodeId constant(double v) { return leaf(Tensor::scalar(round_scalar(v)), false); }

    const Tensor& value(NodeId id) const { return nodes_.at(static_cast<size_t>(id)).value; }

    Tensor grad(NodeId id) const {
        const Node& n = nodes_.at(static_cast<size_t>(id));
        if (n.grad.empty()) return Tensor::zeros(n.value.shape());
        return n.grad;
    }

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    void set_strict(bool b) { strict_ = b; }

    // ---- elementwise binary ----

    NodeId add(NodeId a, NodeId b) {
        Tensor out = binary_broadcast(value(a), value(b), [](double x, double y) { return x + y; });
        return record(std::move(out), needs(a) || needs(b),
                      [a, b](Graph& g, NodeId self) {
                          const Tensor& go = g.node(self).grad;
                          g.acc_grad(a, reduce_to_shape(go, g.value(a).shape()));
                          g.acc_grad(b, reduce_to_shape(go, g.value(b).shape()));
                      },
                      "add");
    }

    NodeId sub(NodeId a, NodeId b) {
        Tensor out = binary_broadcast(value(a), value(b), [](double x, double y) { return x - y; });
        return record(std::move(out), needs(a) || needs(b),
                      [a, b](Graph& g, NodeId self) {
                          const Tensor& go = g.node(self).grad;
                          g.acc_grad(a, reduce_to_shape(go, g.value(a).shape()));
                          if (g.needs(b)) {
                              Tensor neg = go.clone();
                              for (double& x : neg.raw()) x = -x;
                              g.acc_grad(b, reduce_to_shape(neg, g.value(b).shape()));
                          }
                      },
                      "sub");
    }

    NodeId mul(NodeId a, NodeId b) {
        Tensor out = binary_broadcast(value(a), value(b), [](double x, double y) { return x * y; });
        return record(std::move(out), needs(a) || needs(b),
                      [a, b](Graph& g, NodeId self) {
                          const Tensor& go = g.node(self).grad;
                          if (g.needs(a))
                              g.acc_grad(a, reduce_to_shape(
                                                binary_broadcast(go, g.value(b), [](double x, double y) { return x * y; }),
                                                g.value(a).shape()));
                          if (g.needs(b))
                              g.acc_grad(b, reduce_to_shape(
                                                binary_broadcast(go, g.value(a), [](double x, double y) { return x * y; }),
                                                g.value(b).shape()));
                      },
                      "mul");
    }

    NodeId div(NodeId a, NodeId b) {
        Tensor out = binary_broadcast(value(a), value(b), [](double x, double y) { return x / y; });
        return record(std::move(out), needs(a) || needs(b),
                      [a, b](Graph& g, NodeId self) {
                          const Tensor& go = g.node(self).grad;
                          if (g.needs(a))
                              g.acc_grad(a, reduce_to_shape(
                                                binary_broadcast(go, g.value(b), [](double x, double y) { return x / y; }),
                                                g.value(a).shape()));
                          if (g.needs(b)) {
                              Tensor t = binary_broadcast(go, g.value(a), [](double x, double y) { return x * y; });
                              Tensor d = binary_broadcast(t, g.value(b),
                                                          [](double x, double y) { return -x / (y * y); });
                              g.acc_grad(b, reduce_to_shape(d, g.value(b).shape()));
                          }
                      },
                      "div");
    }

    // ---- elementwise unary ----

    NodeId sigmoid(NodeId a) {
        return unary(a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                     [](double, double y, double go) { return go * y * (1.0 - y); });
    }

    NodeId silu(NodeId a) {
        return unary(a, "silu",
                     [](double x) { return x / (1.0 + std::exp(-x)); },
                     [](double x, double, double go) {
                         double s = 1.0 / (1.0 + std::exp(-x));
                         return go * (s + x * s * (1.0 - s));
                     });
    }

    NodeId exp(NodeId a) {
        return unary(a, "exp", [](double x) { return std::exp(x); },
                     [](double, double y, double go) { return go * y; });
    }

    NodeId log(NodeId a) {
        return unary(a, "log", [](double x) { return std::log(x); },
                     [](double x, double, double go) { return go / x; });
    }

    NodeId softplus(NodeId a) {
        return unary(a, "softplus",
                     [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); },
                     [](double x, double, double go) { return go / (1.0 + std::exp(-x)); });
    }

    NodeId leaky_relu(NodeId a, double alpha) {
        return unary(a, "leaky_relu",
                     [alpha](double x) { return x >= 0.0 ? x : alpha * x; },
                     [alpha](double x, double, double go) { return x >= 0.0 ? go : alpha * go; });
    }

    NodeId affine(NodeId a, double scale, double shift) {
        return unary(a, "affine",
                     [scale, shift](double x) { return scale * x + shift; },
                     [scale](double, double, double go) { return scale * go; });
    }

    NodeId clamp(NodeId a, double lo, double hi) {
        return unary(a, "clamp",
                     [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                     [lo, hi](double x, double, double go) { return (x > lo && x < hi) ? go : 0.0; });
    }

    NodeId sqerr(NodeId a, NodeId b) {
        check_same_shape(value(a).shape(), value(b).shape(), "sqerr");
        Tensor out = binary_broadcast(value(a), value(b),
                                      [](double x, double y) { return (x - y) * (x - y); });
        return record(std::move(out), needs(a) || needs(b),
                      [a, b](Graph& g, NodeId self) {
                          const Tensor& go = g.node(self).grad;
                          const Tensor& va = g.value(a);
                          const Tensor& vb = g.value(b);
                          size_t n = go.numel();
                          if (g.needs(a)) {
                              Tensor ga(va.shape());
                              for (size_t i = 0; i < n; ++i) ga[i] = 2.0 * (va[i] - vb[i]) * go[i];
                              g.acc_grad(a, ga);
                          }
                          if (g.needs(b)) {
                              Tensor gb(vb.shape());
                              for (size_t i = 0; i < n; ++i) gb[i] = -2.0 * (va[i] - vb[i]) * go[i];
                              g.acc_grad(b, gb);
                          }
                      },
                      "sqerr");
    }

    NodeId abserr(NodeId a, NodeId b) {
        check_same_shape(value(a).shape(), value(b).shape(), "abserr");
        Tensor out = binary_broadcast(value(a), value(b),
                                      [](double x, double y) { return std::fabs(x - y); });
        return record(std::move(out), needs(a) || needs(b),
                      [a, b](Graph& g, NodeId self) {
                          const Tensor& go = g.node(self).grad;
                          const Tensor& va = g.value(a);
                          const Tensor& vb = g.value(b);
                          size_t n = go.numel();
                          auto sgn = [](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); };
                          if (g.needs(a)) {
                              Tensor ga(va.shape());
                              for (size_t i = 0; i < n; ++i) ga[i] = sgn(va[i] - vb[i]) * go[i];
                              g.acc_grad(a, ga);
                          }
                          if (g.needs(b)) {
                              Tensor gb(vb.shape());
                              for (size_t i = 0; i < n; ++i) gb[i] = -sgn(va[i] - vb[i]) * go[i];
                              g.acc_grad(b, gb);
                          }
                      },
                      "abserr");
    }

    // ---- shape ----

    NodeId reshape(NodeId a, Shape shape) {
        Tensor out = value(a).reshaped(shape);
        Shape prev = value(a).shape();
        return record(std::move(out), needs(a),
                      [a, prev](Graph& g, NodeId self) {
                          g.acc_grad(a, g.node(self).grad.reshaped(prev));
                      },
                      "reshape");
    }

    NodeId transpose(NodeId a, std::vector<int> perm) {
        const Tensor& v = value(a);
        int r = v.rank();
        if (static_cast<int>(perm.size()) != r)
            throw std::invalid_argument("transpose perm rank mismatch");
        std::vector<char> seen(static_cast<size_t>(r), 0);
        Shape os(static_cast<size_t>(r));
        for (int i = 0; i < r; ++i) {
            int p = perm[static_cast<size_t>(i)];
            if (p < 0 || p >= r || seen[static_cast<size_t>(p)])
                throw std::invalid_argument("transpose perm invalid");
            seen[static_cast<size_t>(p)] = 1;
            os[static_cast<size_t>(i)] = v.dim(p);
        }
        Tensor out(os);
        permute_iter(v.shape(), perm, [&](size_t io, size_t i) { out[i] = v[io]; });
        return record(std::move(out), needs(a),
                      [a, perm](Graph& g, NodeId self) {
                          const Tensor& go = g.node(self).grad;
                          Tensor ga(g.value(a).shape());
                          permute_iter(ga.shape(), perm, [&](size_t io, size_t i) { ga[io] = go[i]; });
                          g.acc_grad(a, ga);
                      },
                      "transpose");
    }

    NodeId slice(NodeId a, int axis, int start, int len) {
        const Tensor& v = value(a);
        if (axis < 0) axis += v.rank();
        if (axis < 0 || axis >= v.rank()) throw std::invalid_argument("slice axis out of range");
        if (start < 0 || len <= 0 || start + len > v.dim(axis))
            throw std::invalid_argument("slice range out of bounds");
        Shape os = v.shape();
        os[static_cast<size_t>(axis)] = len;
        Tensor out(os);
        slice_runs(v.shape(), axis, start, len, [&](size_t fo, size_t po, size_t n) {
            std::memcpy(out.data() + po, v.data() + fo, n * sizeof(double));
        });
        return record(std::move(out), needs(a),
                      [a, axis, start, len](Graph& g, NodeId self) {
                          const Tensor& go = g.node(self).grad;
                          Tensor ga(g.value(a).shape());
                          slice_runs(ga.shape(), axis, start, len, [&](size_t fo, size_t po, size_t n) {
                              std::memcpy(ga.data() + fo, go.data() + po, n * sizeof(double));
                          });
                          g.acc_grad(a, ga);
                      },
                      "slice");
    }

    NodeId concat(const std::vector<NodeId>& parts, int axis) {
        if (parts.empty()) throw std::invalid_argument("concat of nothing");
        const Tensor& first = value(parts[0]);
        int r = first.rank();
        if (axis < 0) axis += r;
        if (axis < 0 || axis >= r) throw std::invalid_argument("concat axis out of range");
        int total = 0;
        bool ng = false;
        for (NodeId p : parts) {
            const Tensor& v = value(p);
            if (v.rank() != r) throw std::invalid_argument("concat rank mismatch");
            for (int d = 0; d < r; ++d)
                if (d != axis && v.dim(d) != first.dim(d))
                    throw std::invalid_argument("concat shape mismatch off-axis");
            total += v.dim(axis);
            ng = ng || needs(p);
        }
        Shape os = first.shape();
        os[static_cast<size_t>(axis)] = total;
        Tensor out(os);
        size_t inner = 1;
        for (int d = axis + 1; d < r; ++d) inner *= static_cast<size_t>(first.dim(d));
        size_t outer = out.numel() / (static_cast<size_t>(total) * inner);
        size_t off = 0;
        for (NodeId p : parts) {
            const Tensor& v = value(p);
            size_t rows = static_cast<size_t>(v.dim(axis)) * inner;
            for (size_t o = 0; o < outer; ++o)
                std::memcpy(out.data() + o * static_cast<size_t>(total) * inner + off,
                            v.data() + o * rows, rows * sizeof(double));
            off += rows;
        }
        std::vector<NodeId> held = parts;
        return record(std::move(out), ng,
                      [held, axis, total, inner, outer](Graph& g, NodeId self) {
                          const Tensor& go = g.node(self).grad;
                          size_t off = 0;
                          for (NodeId p : held) {
                              const Tensor& v = g.value(p);
                              size_t rows = static_cast<size_t>(v.dim(axis)) * inner;
                              if (g.needs(p)) {
                                  Tensor gp(v.shape());
                                  for (size_t o = 0; o < outer; ++o)
                                      std::memcpy(gp.data() + o * rows,
                                                  go.data() + o * static_cast<size_t>(total) * inner + off,
                                                  rows * sizeof(double));
                                  g.acc_grad(p, gp);
                              }
                              off += rows;
                          }
                      },
                      "concat");
    }

    // ---- matmul ----

    // a: (..., M, K); b: (K, N) shared across the batch, or (..., K, N) with
    // identical leading dims.
    NodeId matmul(NodeId a, NodeId b) {
        const Tensor& A = value(a);
        const Tensor& B = value(b);
        if (A.rank() < 2 || B.rank() < 2) throw std::invalid_argument("matmul needs rank >= 2");
        int M = A.dim(A.rank() - 2), K = A.dim(A.rank() - 1);
        int Kb = B.dim(B.rank() - 2), N = B.dim(B.rank() - 1);
        if (K != Kb)
            throw std::invalid_argument("matmul inner dims " + shape_str(A.shape()) + " x " +
                                        shape_str(B.shape()));
        bool shared = B.rank() == 2;
        Shape batch(A.shape().begin(), A.shape().end() - 2);
        if (!shared) {
            Shape bbatch(B.shape().begin(), B.shape().end() - 2);
            if (bbatch != batch)
                throw std::invalid_argument("matmul batch dims " + shape_str(A.shape()) + " x " +
                                            shape_str(B.shape()));
        }
        size_t nb = 1;
        for (int d : batch) nb *= static_cast<size_t>(d);
        Shape os = batch;
        os.push_back(M);
        os.push_back(N);
        Tensor out(os);
        const size_t sa = static_cast<size_t>(M) * K, sb = static_cast<size_t>(K) * N,
                     sc = static_cast<size_t>(M) * N;
        for (size_t i = 0; i < nb; ++i)
            detail::mm_acc(A.data() + i * sa, B.data() + (shared ? 0 : i * sb), out.data() + i * sc,
                           M, K, N);
        round_to_precision(out);
        return record(std::move(out), needs(a) || needs(b),
                      [a, b, M, K, N, nb, shared](Graph& g, NodeId self) {
                          const Tensor& go = g.node(self).grad;
                          const Tensor& A = g.value(a);
                          const Tensor& B = g.value(b);
                          const size_t sa = static_cast<size_t>(M) * K,
                                       sb = static_cast<size_t>(K) * N,
                                       sc = static_cast<size_t>(M) * N;
                          if (g.needs(a)) {
                              Tensor ga(A.shape());
                              for (size_t i = 0; i < nb; ++i)
                                  detail::mm_nt_acc(go.data() + i * sc,
                                                    B.data() + (shared ? 0 : i * sb),
                                                    ga.data() + i * sa, M, N, K);
                              g.acc_grad(a, ga);
                          }
                          if (g.needs(b)) {
                              Tensor gb(B.shape());
                              if (shared) {
                                  detail::mm_tn_acc(A.data(), go.data(), gb.data(),
                                                    static_cast<int>(nb) * M, K, N);
                              } else {
                                  for (size_t i = 0; i < nb; ++i)
                                      detail::mm_tn_acc(A.data() + i * sa, go.data() + i * sc,
                                                        gb.data() + i * sb, M, K, N);
                              }
                              g.acc_grad(b, gb);
                          }
                      },
                      "matmul");
    }

    // ---- rows (last axis) ----

    // Plain softmax over the last axis; stabilize at the call site by
    // subtracting a constant row max first.
    NodeId softmax(NodeId a) {
        const Tensor& v = value(a);
        if (v.rank() < 1) throw std::invalid_argument("softmax needs rank >= 1");
        int w = v.dim(v.rank() - 1);
        size_t rows = v.numel() / static_cast<size_t>(w);
        Tensor out(v.shape());
        for (size_t r = 0; r < rows; ++r) {
            const double* p = v.data() + r * static_cast<size_t>(w);
            double* o = out.data() + r * static_cast<size_t>(w);
            double s = 0.0;
            for (int j = 0; j < w; ++j) {
                o[j] = std::exp(p[j]);
                s += o[j];
            }
            for (int j = 0; j < w; ++j) o[j] /= s;
        }
        round_to_precision(out);
        return record(std::move(out), needs(a),
                      [a, w, rows](Graph& g, NodeId self) {
                          const Tensor& y = g.value(self);
                          const Tensor& go = g.node(self).grad;
                          Tensor ga(y.shape());
                          for (size_t r = 0; r < rows; ++r) {
                              const double* yp = y.data() + r * static_cast<size_t>(w);
                              const double* gp = go.data() + r * static_cast<size_t>(w);
                              double* o = ga.data() + r * static_cast<size_t>(w);
                              double dot = 0.0;
                              for (int j = 0; j < w; ++j) dot += gp[j] * yp[j];
                              for (int j = 0; j < w; ++j) o[j] = yp[j] * (gp[j] - dot);
                          }
                          g.acc_grad(a, ga);
                      },
                      "softmax");
    }

    // x / sqrt(mean(x^2) + eps) over the last axis; no gain — apply one with
    // mul if wanted.
    NodeId rmsnorm(NodeId a, double eps) {
        const Tensor& v = value(a);
        if (v.rank() < 1) throw std::invalid_argument("rmsnorm needs rank >= 1");
        int w = v.dim(v.rank() - 1);
        size_t rows = v.numel() / static_cast<size_t>(w);
        Tensor out(v.shape());
        for (size_t r = 0; r < rows; ++r) {
            const double* p = v.data() + r * static_cast<size_t>(w);
            double* o = out.data() + r * static_cast<size_t>(w);
            double ms = 0.0;
            for (int j = 0; j < w; ++j) ms += p[j] * p[j];
            double inv = 1.0 / std::sqrt(ms / w + eps);
            for (int j = 0; j < w; ++j) o[j] = p[j] * inv;
        }
        round_to_precision(out);
        return record(std::move(out), needs(a),
                      [a, w, rows, eps](Graph& g, NodeId self) {
                          const Tensor& x = g.value(a);
                          const Tensor& go = g.node(self).grad;
                          Tensor ga(x.shape());
                          for (size_t r = 0; r < rows; ++r) {
                              const double* p = x.data() + r * static_cast<size_t>(w);
                              const double* gp = go.data() + r * static_cast<size_t>(w);
                              double* o = ga.data() + r * static_cast<size_t>(w);
                              double ms = 0.0, dot = 0.0;
                              for (int j = 0; j < w; ++j) ms += p[j] * p[j];
                              double inv = 1.0 / std::sqrt(ms / w + eps);
                              for (int j = 0; j < w; ++j) dot += gp[j] * p[j];
                              double k = inv * inv * inv * dot / w;
                              for (int j = 0; j < w; ++j) o[j] = inv * gp[j] - k * p[j];
                          }
                          g.acc_grad(a, ga);
                      },
                      "rmsnorm");
    }

    // Axial rotary embedding on the last axis. cos/sin have shape (L, P)
    // where P counts rotated pairs; pair k rotates dims (2k, 2k+1) of each
    // token, dims >= 2P pass through. Tables are constants.
    NodeId rope3d(NodeId a, Tensor cos_tab, Tensor sin_tab) {
        const Tensor& v = value(a);
        if (v.rank() < 2) throw std::invalid_argument("rope3d needs rank >= 2");
        int D = v.dim(v.rank() - 1);
        int L = v.dim(v.rank() - 2);
        if (cos_tab.rank() != 2 || cos_tab.dim(0) != L || sin_tab.shape() != cos_tab.shape())
            throw std::invalid_argument("rope3d table shape mismatch");
        int P = cos_tab.dim(1);
        if (2 * P > D) throw std::invalid_argument("rope3d rotates more dims than d_head");
        size_t nb = v.numel() / (static_cast<size_t>(L) * D);
        Tensor out(v.shape());
        rope_apply(v, out, cos_tab, sin_tab, nb, L, D, P, false);
        round_to_precision(out);
        return record(std::move(out), needs(a),
                      [a, cos_tab, sin_tab, nb, L, D, P](Graph& g, NodeId self) {
                          const Tensor& go = g.node(self).grad;
                          Tensor ga(g.value(a).shape());
                          g.rope_apply(go, ga, cos_tab, sin_tab, nb, L, D, P, true);
                          g.acc_grad(a, ga);
                      },
                      "rope3d");
    }

    // ---- reductions ----

    // Reduce over `axes` (empty = all axes, giving a scalar). Reduced axes
    // are removed from the shape.
    NodeId sum(NodeId a, const std::vector<int>& axes) { return reduce(a, axes, false); }
    NodeId mean(NodeId a, const std::vector<int>& axes) { return reduce(a, axes, true); }

    // ---- backward ----

    void backward(NodeId out, Tensor seed = Tensor()) {
        Node& o = nodes_.at(static_cast<size_t>(out));
        if (seed.empty()) seed = Tensor::full(o.value.shape(), 1.0);
        if (seed.shape() != o.value.shape())
            throw std::invalid_argument("backward seed shape " + shape_str(seed.shape()) +
                                        " vs output " + shape_str(o.value.shape()));
        if (!o.needs_grad) return;
        o.grad = seed.clone();
        for (NodeId i = out; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.needs_grad || n.grad.empty()) continue;
            round_to_precision(n.grad);
            if (n.back) n.back(*this, i);
        }
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        std::function<void(Graph&, NodeId)> back;
        const char* kind = "";
    };

    std::vector<Node> nodes_;
    bool strict_ = false;

    Node& node(NodeId id) { return nodes_.at(static_cast<size_t>(id)); }
    bool needs(NodeId id) const { return nodes_.at(static_cast<size_t>(id)).needs_grad; }

    NodeId record(Tensor out, bool needs_grad, std::function<void(Graph&, NodeId)> back,
                  const char* kind) {
        if (strict_ && !out.all_finite())
            throw std::runtime_error(std::string("non-finite output of op ") + kind);
        Node n;
        n.value = std::move(out);
        n.needs_grad = needs_grad;
        n.back = std::move(back);
        n.kind = kind;
        nodes_.push_back(std::move(n));
        return static_cast<NodeId>(nodes_.size()) - 1;
    }

    void acc_grad(NodeId id, const Tensor& g) {
        Node& n = node(id);
        if (!n.needs_grad) return;
        if (g.shape() != n.value.shape())
            throw std::logic_error("gradient shape " + shape_str(g.shape()) + " vs value " +
                                   shape_str(n.value.shape()));
        if (n.grad.empty()) {
            n.grad = g.clone();
            return;
        }
        double* p = n.grad.data();
        const double* q = g.data();
        size_t cnt = g.numel();
        for (size_t i = 0; i < cnt; ++i) p[i] += q[i];
    }

    static void check_same_shape(const Shape& a, const Shape& b, const char* op) {
        if (a != b)
            throw std::invalid_argument(std::string(op) + " shape mismatch " + shape_str(a) +
                                        " vs " + shape_str(b));
    }

    template <class Fwd, class Bwd>
    NodeId unary(NodeId a, const char* kind, Fwd f, Bwd df) {
        const Tensor& v = value(a);
        Tensor out(v.shape());
        size_t n = v.numel();
        for (size_t i = 0; i < n; ++i) out[i] = f(v[i]);
        round_to_precision(out);
        return record(std::move(out), needs(a),
                      [a, df](Graph& g, NodeId self) {
                          const Tensor& x = g.value(a);
                          const Tensor& y = g.value(self);
                          const Tensor& go = g.node(self).grad;
                          Tensor ga(x.shape());
                          size_t n = x.numel();
                          for (size_t i = 0; i < n; ++i) ga[i] = df(x[i], y[i], go[i]);
                          g.acc_grad(a, ga);
                      },
                      kind);
    }

    NodeId reduce(NodeId a, const std::vector<int>& axes_in, bool take_mean) {
        const Tensor& v = value(a);
        auto axes = detail::normalize_axes(axes_in, v.rank());
        std::vector<char> reduced(static_cast<size_t>(v.rank()), 0);
        for (int ax : axes) reduced[static_cast<size_t>(ax)] = 1;
        Shape os;
        size_t count = 1;
        for (int d = 0; d < v.rank(); ++d) {
            if (reduced[static_cast<size_t>(d)])
                count *= static_cast<size_t>(v.dim(d));
            else
                os.push_back(v.dim(d));
        }
        Tensor out(os);
        // Strides into `out` for each input dim; reduced dims contribute 0.
        auto ostrides = shape_strides(os);
        std::vector<size_t> omap(static_cast<size_t>(v.rank()), 0);
        {
            size_t oi = 0;
            for (int d = 0; d < v.rank(); ++d)
                if (!reduced[static_cast<size_t>(d)]) omap[static_cast<size_t>(d)] = ostrides[oi++];
        }
        const Shape& is = v.shape();
        std::vector<int> idx(is.size(), 0);
        size_t oo = 0, n = v.numel();
        for (size_t i = 0; i < n; ++i) {
            out[oo] += v[i];
            for (int d = static_cast<int>(is.size()) - 1; d >= 0; --d) {
                size_t ud = static_cast<size_t>(d);
                ++idx[ud];
                oo += omap[ud];
                if (idx[ud] < is[ud]) break;
                idx[ud] = 0;
                oo -= omap[ud] * static_cast<size_t>(is[ud]);
            }
        }
        if (take_mean)
            for (double& x : out.raw()) x /= static_cast<double>(count);
        round_to_precision(out);
        double scale = take_mean ? 1.0 / static_cast<double>(count) : 1.0;
        return record(std::move(out), needs(a),
                      [a, omap, scale](Graph& g, NodeId self) {
                          const Tensor& go = g.node(self).grad;
                          const Tensor& v = g.value(a);
                          const Shape& is = v.shape();
                          Tensor ga(is);
                          std::vector<int> idx(is.size(), 0);
                          size_t oo = 0, n = v.numel();
                          for (size_t i = 0; i < n; ++i) {
                              ga[i] = go[oo] * scale;
                              for (int d = static_cast<int>(is.size()) - 1; d >= 0; --d) {
                                  size_t ud = static_cast<size_t>(d);
                                  ++idx[ud];
                                  oo += omap[ud];
                                  if (idx[ud] < is[ud]) break;
                                  idx[ud] = 0;
                                  oo -= omap[ud] * static_cast<size_t>(is[ud]);
                              }
                          }
                          g.acc_grad(a, ga);
                      },
                      take_mean ? "mean" : "sum");
    }

    // Walk the permuted index space linearly; f gets (offset in original
    // layout, offset in permuted layout) for every element.
    template <class F>
    static void permute_iter(const Shape& orig_shape, const std::vector<int>& perm, F f) {
        auto istr = shape_strides(orig_shape);
        size_t r = perm.size();
        Shape oshape(r);
        std::vector<size_t> step(r);
        for (size_t i = 0; i < r; ++i) {
            oshape[i] = orig_shape[static_cast<size_t>(perm[i])];
            step[i] = istr[static_cast<size_t>(perm[i])];
        }
        std::vector<int> idx(r, 0);
        size_t io = 0, n = shape_numel(orig_shape);
        for (size_t i = 0; i < n; ++i) {
            f(io, i);
            for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
                size_t ud = static_cast<size_t>(d);
                ++idx[ud];
                io += step[ud];
                if (idx[ud] < oshape[ud]) break;
                idx[ud] = 0;
                io -= step[ud] * static_cast<size_t>(oshape[ud]);
            }
        }
    }

    // Visit the contiguous runs a slice covers; f gets (offset in full,
    // offset in part, run length).
    template <class F>
    static void slice_runs(const Shape& full_shape, int axis, int start, int len, F f) {
        size_t inner = 1;
        for (size_t d = static_cast<size_t>(axis) + 1; d < full_shape.size(); ++d)
            inner *= static_cast<size_t>(full_shape[d]);
        size_t fdim = static_cast<size_t>(full_shape[static_cast<size_t>(axis)]);
        size_t outer = shape_numel(full_shape) / (fdim * inner);
        size_t row = static_cast<size_t>(len) * inner;
        for (size_t o = 0; o < outer; ++o)
            f((o * fdim + static_cast<size_t>(start)) * inner, o * row, row);
    }

    void rope_apply(const Tensor& in, Tensor& out, const Tensor& cos_tab, const Tensor& sin_tab,
                    size_t nb, int L, int D, int P, bool invert) const {
        for (size_t b = 0; b < nb; ++b) {
            for (int l = 0; l < L; ++l) {
                const double* x = in.data() + (b * static_cast<size_t>(L) + l) * D;
                double* y = out.data() + (b * static_cast<size_t>(L) + l) * D;
                const double* c = cos_tab.data() + static_cast<size_t>(l) * P;
                const double* s = sin_tab.data() + static_cast<size_t>(l) * P;
                for (int k = 0; k < P; ++k) {
                    double x0 = x[2 * k], x1 = x[2 * k + 1];
                    double sk = invert ? -s[k] : s[k];
                    y[2 * k] = x0 * c[k] - x1 * sk;
                    y[2 * k + 1] = x0 * sk + x1 * c[k];
                }
                for (int j = 2 * P; j < D; ++j) y[j] = x[j];
            }
        }
    }
};

}  // namespace vitok
