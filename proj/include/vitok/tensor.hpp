#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace vitok {

// Global scalar precision. Storage is always double-width; in f32 mode every
// op output is rounded through float so values are exactly float32
// representable while accumulations stay in double. f64 mode skips the
// rounding and is what gradient checks run under.
enum class Precision { f32, f64 };

inline Precision& precision_mode() {
    static Precision mode = Precision::f32;
    return mode;
}
inline Precision precision() { return precision_mode(); }
inline void set_precision(Precision p) { precision_mode() = p; }

struct PrecisionGuard {
    Precision saved;
    explicit PrecisionGuard(Precision p) : saved(precision()) { set_precision(p); }
    ~PrecisionGuard() { set_precision(saved); }
};

inline double round_scalar(double x) {
    return precision() == Precision::f32 ? static_cast<double>(static_cast<float>(x)) : x;
}

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) {
        if (d <= 0) throw std::invalid_argument("tensor shape has non-positive dim " + shape_str(s));
        n *= static_cast<size_t>(d);
    }
    return n;
}

inline std::vector<size_t> shape_strides(const Shape& s) {
    std::vector<size_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
        st[static_cast<size_t>(i)] = st[static_cast<size_t>(i) + 1] * static_cast<size_t>(s[static_cast<size_t>(i) + 1]);
    return st;
}

// Dense n-dimensional array. Rank 0 (empty shape) is a scalar with one
// element. Data is shared on copy; clone() makes it private.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<double>>(shape_numel(shape_), 0.0)) {}

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.raw()) x = v;
        return t;
    }

    static Tensor scalar(double v) { return full({}, v); }

    static Tensor from(Shape shape, std::vector<double> values) {
        if (shape_numel(shape) != values.size())
            throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                        " does not match shape " + shape_str(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<std::vector<double>>(std::move(values));
        return t;
    }

    bool empty() const { return data_ == nullptr; }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    size_t numel() const { return data_ ? data_->size() : 0; }

    double* data() { return data_->data(); }
    const double* data() const { return data_->data(); }
    std::vector<double>& raw() { return *data_; }
    const std::vector<double>& raw() const { return *data_; }

    double item() const {
        if (numel() != 1) throw std::logic_error("item() on tensor of numel " + std::to_string(numel()));
        return (*data_)[0];
    }

    double& operator[](size_t i) { return (*data_)[i]; }
    double operator[](size_t i) const { return (*data_)[i]; }

    bool requires_grad() const { return requires_grad_; }
    Tensor& set_requires_grad(bool b) {
        requires_grad_ = b;
        return *this;
    }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<double>>(*data_);
        t.requires_grad_ = requires_grad_;
        return t;
    }

    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel())
            throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                                        " changes element count");
        Tensor t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

    void fill(double v) {
        for (double& x : raw()) x = v;
    }

    bool all_finite() const {
        for (double x : raw())
            if (!std::isfinite(x)) return false;
        return true;
    }

private:
    Shape shape_{};
    std::shared_ptr<std::vector<double>> data_{};
    bool requires_grad_ = false;
};

inline void round_to_precision(Tensor& t) {
    if (precision() == Precision::f64) return;
    for (double& x : t.raw()) x = static_cast<double>(static_cast<float>(x));
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || a.numel() != b.numel()) return false;
    return std::memcmp(a.data(), b.data(), a.numel() * sizeof(double)) == 0;
}

// Keep the top `keep_bits` mantissa bits of a float, rounding the dropped
// bits to nearest-even. Carry into the exponent is the correct rounding
// behavior; NaN/inf pass through.
inline float truncate_mantissa_rne(float x, int keep_bits) {
    if (keep_bits >= 23) return x;
    uint32_t u = std::bit_cast<uint32_t>(x);
    if ((u & 0x7f800000u) == 0x7f800000u) return x;
    const int drop = 23 - keep_bits;
    const uint32_t mask = (1u << drop) - 1u;
    const uint32_t rem = u & mask;
    const uint32_t half = 1u << (drop - 1);
    u &= ~mask;
    if (rem > half || (rem == half && (u & (1u << drop)))) u += 1u << drop;
    return std::bit_cast<float>(u);
}

// Deterministic random stream. mt19937_64 output is fully specified by the
// standard and the distributions below are hand-rolled, so the stream is
// reproducible across compilers.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, one value per pair of uniforms.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    int uniform_int(int n) {
        if (n <= 0) throw std::invalid_argument("uniform_int needs n > 0");
        return static_cast<int>(gen_() % static_cast<uint64_t>(n));
    }

    void fill_normal(Tensor& t, double mean, double sigma) {
        for (double& x : t.raw()) x = mean + sigma * normal();
        round_to_precision(t);
    }

    // Resample outside two sigma.
    void fill_truncated_normal(Tensor& t, double sigma) {
        for (double& x : t.raw()) {
            double v = normal();
            while (std::fabs(v) > 2.0) v = normal();
            x = sigma * v;
        }
        round_to_precision(t);
    }

    // Fisher-Yates.
    void permutation(std::vector<int>& idx) {
        for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        }
    }

    uint64_t next_u64() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ull));
}

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace vitok
