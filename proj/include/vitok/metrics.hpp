#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "vitok/losses.hpp"
#include "vitok/tensor.hpp"

namespace vitok {

// Peak signal-to-noise ratio in dB over all elements, capped at 100.
// max_val defaults to the [-1,1] pixel range.
inline double psnr(const Tensor& a, const Tensor& b, double max_val = 2.0) {
    if (a.shape() != b.shape()) throw std::invalid_argument("psnr shapes differ");
    if (max_val <= 0.0) throw std::invalid_argument("psnr needs a positive max_val");
    const double* pa = a.data();
    const double* pb = b.data();
    double acc = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) {
        double d = pa[i] - pb[i];
        acc += d * d;
    }
    double mse = acc / static_cast<double>(a.numel());
    if (mse <= 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(max_val * max_val / mse));
}

namespace detail {

// Inclusive 2-D prefix sums with a zero border, so any window sum is four
// lookups.
struct PlaneSums {
    int H = 0, W = 0;
    std::vector<double> s;
    double window(int i, int j, int k) const {
        const double* p = s.data();
        int w1 = W + 1;
        return p[(i + k) * w1 + (j + k)] - p[i * w1 + (j + k)] -
               p[(i + k) * w1 + j] + p[i * w1 + j];
    }
};

inline PlaneSums prefix_sums(const double* x, const double* y, int H, int W,
                             int stride_elems) {
    PlaneSums ps;
    ps.H = H;
    ps.W = W;
    ps.s.assign(static_cast<size_t>(H + 1) * (W + 1), 0.0);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            double v = x[(i * W + j) * stride_elems];
            if (y) v *= y[(i * W + j) * stride_elems];
            ps.s[(i + 1) * (W + 1) + (j + 1)] = v + ps.s[i * (W + 1) + (j + 1)] +
                                                ps.s[(i + 1) * (W + 1) + j] -
                                                ps.s[i * (W + 1) + j];
        }
    return ps;
}

}  // namespace detail

// Mean structural similarity over 8x8 uniform windows at stride 1, averaged
// across windows, channels, and batch. Inputs are (N,H,W,C).
inline double ssim(const Tensor& a, const Tensor& b, double max_val = 2.0) {
    if (a.shape() != b.shape()) throw std::invalid_argument("ssim shapes differ");
    if (a.rank() != 4) throw std::invalid_argument("ssim expects (N,H,W,C)");
    if (max_val <= 0.0) throw std::invalid_argument("ssim needs a positive max_val");
    const int k = 8;
    int N = a.dim(0), H = a.dim(1), W = a.dim(2), C = a.dim(3);
    if (H < k || W < k) throw std::invalid_argument("ssim needs images at least 8x8");
    const double c1 = 0.01 * max_val * 0.01 * max_val;
    const double c2 = 0.03 * max_val * 0.03 * max_val;
    const double inv = 1.0 / (k * k);
    double acc = 0.0;
    long long windows = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* pa = a.data() + (static_cast<size_t>(n) * H * W * C + c);
            const double* pb = b.data() + (static_cast<size_t>(n) * H * W * C + c);
            auto sa = detail::prefix_sums(pa, nullptr, H, W, C);
            auto sb = detail::prefix_sums(pb, nullptr, H, W, C);
            auto saa = detail::prefix_sums(pa, pa, H, W, C);
            auto sbb = detail::prefix_sums(pb, pb, H, W, C);
            auto sab = detail::prefix_sums(pa, pb, H, W, C);
            for (int i = 0; i + k <= H; ++i)
                for (int j = 0; j + k <= W; ++j) {
                    double ma = sa.window(i, j, k) * inv;
                    double mb = sb.window(i, j, k) * inv;
                    double va = saa.window(i, j, k) * inv - ma * ma;
                    double vb = sbb.window(i, j, k) * inv - mb * mb;
                    double cov = sab.window(i, j, k) * inv - ma * mb;
                    double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
                    double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
                    acc += num / den;
                    ++windows;
                }
        }
    return acc / static_cast<double>(windows);
}

// Per-image features for distribution metrics: the final stage of the shared
// feature pyramid, spatially mean-pooled to one row per image.
inline Eigen::MatrixXd pooled_features(const Tensor& frames) {
    if (frames.rank() != 4 || frames.dim(3) != 3)
        throw std::invalid_argument("pooled_features expects (N,H,W,3) frames");
    Graph g;
    NodeId x = g.leaf(frames, false);
    auto acts = feature_pyramid(g, canonical_feature_net(), x);
    const Tensor& top = g.value(acts.back());
    int N = top.dim(0), D = top.dim(3);
    long long spatial = static_cast<long long>(top.dim(1)) * top.dim(2);
    Eigen::MatrixXd out(N, D);
    const double* p = top.data();
    for (int n = 0; n < N; ++n) {
        for (int d = 0; d < D; ++d) {
            double s = 0.0;
            for (long long ij = 0; ij < spatial; ++ij) s += p[(n * spatial + ij) * D + d];
            out(n, d) = s / static_cast<double>(spatial);
        }
    }
    return out;
}

struct FeatureStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    long long n = 0;
};

// Mean and unbiased covariance of pooled features over a set of frames.
inline FeatureStats feature_stats(const Tensor& frames) {
    Eigen::MatrixXd x = pooled_features(frames);
    if (x.rows() < 2) throw std::invalid_argument("feature stats need at least two frames");
    FeatureStats st;
    st.n = x.rows();
    st.mean = x.colwise().mean().transpose();
    Eigen::MatrixXd c = x.rowwise() - st.mean.transpose();
    st.cov = (c.adjoint() * c) / static_cast<double>(st.n - 1);
    return st;
}

// Squared Frechet distance between two Gaussians:
// |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2).
inline double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
    if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows())
        throw std::invalid_argument("feature stats dimensionality differs");
    Eigen::MatrixXd sa = 0.5 * (a.cov + a.cov.transpose());
    Eigen::MatrixXd sb = 0.5 * (b.cov + b.cov.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(sa);
    Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd root = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
    Eigen::MatrixXd t = root * sb * root;
    t = 0.5 * (t + t.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> et(t);
    double tr_root = et.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    double d = (a.mean - b.mean).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_root;
    return std::max(0.0, d);
}

}  // namespace vitok
