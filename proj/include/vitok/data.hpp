#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vitok/tensor.hpp"
#include "vitok/train.hpp"

namespace vitok {

namespace detail {

constexpr double kPi = 3.14159265358979323846;

// Band-limited noise: K oriented sinusoids with a pink-ish spectrum
// (amplitude ~ 1/f), normalized so the field peaks at exactly +-1.
inline void texture_field(Rng& rng, int H, int W, std::vector<double>& base) {
    const int K = 6;
    std::vector<double> fy(K), fx(K), ph(K), amp(K);
    for (int k = 0; k < K; ++k) {
        double f = 2.0 + rng.uniform() * (H / 4.0 - 2.0);
        double th = rng.uniform() * 2.0 * kPi;
        fy[k] = f * std::sin(th);
        fx[k] = f * std::cos(th);
        ph[k] = rng.uniform() * 2.0 * kPi;
        amp[k] = (0.5 + rng.uniform()) / f;
    }
    base.assign(static_cast<size_t>(H) * W, 0.0);
    double maxabs = 1e-9;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double v = 0;
            for (int k = 0; k < K; ++k)
                v += amp[k] * std::sin(2.0 * kPi * (fy[k] * y + fx[k] * x) / H + ph[k]);
            base[static_cast<size_t>(y) * W + x] = v;
            maxabs = std::max(maxabs, std::abs(v));
        }
    for (double& v : base) v /= maxabs;
}

// Coverage of a disc over the unit pixel centered at (x+.5, y+.5),
// approximated by signed distance; fractional at the rim.
inline double disc_alpha(double px, double py, double cx, double cy, double r) {
    double d = std::hypot(px - cx, py - cy);
    return std::clamp(r - d + 0.5, 0.0, 1.0);
}

}  // namespace detail

// Procedural image sets, (n,H,W,3) in [-1,1], pure functions of the seed.
inline Tensor synth_images(const std::string& kind, int n, int H, int W, uint64_t seed) {
    if (n <= 0 || H <= 0 || W <= 0)
        throw std::invalid_argument("synth_images needs positive n, H, W");
    Tensor out({n, H, W, 3});
    Rng rng(seed);
    std::vector<double> base;
    if (kind == "synthetic-textures") {
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c) {
                detail::texture_field(rng, H, W, base);
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x)
                        out.data()[((static_cast<size_t>(i) * H + y) * W + x) * 3 + c] =
                            base[static_cast<size_t>(y) * W + x];
            }
    } else if (kind == "synthetic-gradients") {
        double dx = W > 1 ? 1.0 / (W - 1) : 0.0, dy = H > 1 ? 1.0 / (H - 1) : 0.0;
        for (int i = 0; i < n; ++i) {
            double th = rng.uniform() * 2.0 * detail::kPi;
            double ux = std::cos(th), uy = std::sin(th);
            for (int c = 0; c < 3; ++c) {
                double s = rng.uniform(0.5, 1.5);
                double a = rng.uniform(-0.25, 0.25);
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) {
                        double v = a + s * (ux * (x * dx - 0.5) + uy * (y * dy - 0.5));
                        out.data()[((static_cast<size_t>(i) * H + y) * W + x) * 3 + c] =
                            std::clamp(v, -1.0, 1.0);
                    }
            }
        }
    } else if (kind == "synthetic-shapes") {
        for (int i = 0; i < n; ++i) {
            double* img = out.data() + static_cast<size_t>(i) * H * W * 3;
            double bg[3];
            for (double& b : bg) b = rng.uniform(-1.0, 0.0);
            for (int p = 0; p < H * W; ++p)
                for (int c = 0; c < 3; ++c) img[p * 3 + c] = bg[c];
            for (int sprite = 0; sprite < 3; ++sprite) {
                bool circle = rng.uniform() < 0.5;
                double col[3];
                double cx = 0, cy = 0, r = 0, x0 = 0, x1 = 0, y0 = 0, y1 = 0;
                if (circle) {
                    cx = rng.uniform(0.0, W);
                    cy = rng.uniform(0.0, H);
                    r = rng.uniform(H / 8.0, H / 3.0);
                } else {
                    x0 = rng.uniform(0.0, W * 0.75);
                    x1 = x0 + rng.uniform(2.0, W / 2.0);
                    y0 = rng.uniform(0.0, H * 0.75);
                    y1 = y0 + rng.uniform(2.0, H / 2.0);
                }
                for (double& c : col) c = rng.uniform(-1.0, 1.0);
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x) {
                        double px = x + 0.5, py = y + 0.5;
                        double alpha;
                        if (circle) {
                            alpha = detail::disc_alpha(px, py, cx, cy, r);
                        } else {
                            double ax = std::clamp(std::min(px - x0, x1 - px) + 0.5, 0.0, 1.0);
                            double ay = std::clamp(std::min(py - y0, y1 - py) + 0.5, 0.0, 1.0);
                            alpha = ax * ay;
                        }
                        double* v = img + (static_cast<size_t>(y) * W + x) * 3;
                        for (int c = 0; c < 3; ++c) v[c] += alpha * (col[c] - v[c]);
                    }
            }
        }
    } else {
        throw std::invalid_argument("unknown image kind: " + kind);
    }
    round_to_precision(out);
    return out;
}

// Clips of a textured background with one disc sprite, (n,T,H,W,3).
// static repeats the first frame; drift translates the sprite by a drawn
// velocity scaled by `speed`, so speed 0 reduces drift to static exactly.
inline Tensor synth_video(int n, int T, int H, int W, uint64_t seed,
                          const std::string& motion, double speed = 1.0) {
    if (n <= 0 || T < 1 || H <= 0 || W <= 0)
        throw std::invalid_argument("synth_video needs positive dims");
    bool drift = motion == "drift";
    if (!drift && motion != "static")
        throw std::invalid_argument("unknown motion: " + motion);
    Tensor out({n, T, H, W, 3});
    Rng rng(seed);
    std::vector<std::vector<double>> bg(3);
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) detail::texture_field(rng, H, W, bg[c]);
        double cx = rng.uniform(W * 0.25, W * 0.75);
        double cy = rng.uniform(H * 0.25, H * 0.75);
        double r = rng.uniform(H / 6.0, H / 3.0);
        double col[3];
        for (double& c : col) c = rng.uniform(-1.0, 1.0);
        // Velocity is drawn for both motions so the streams stay aligned.
        double mag = rng.uniform(0.5, 2.0), ang = rng.uniform(0.0, 2.0 * detail::kPi);
        double vx = drift ? speed * mag * std::cos(ang) : 0.0;
        double vy = drift ? speed * mag * std::sin(ang) : 0.0;
        double* clip = out.data() + static_cast<size_t>(i) * T * H * W * 3;
        long long frame_elems = static_cast<long long>(H) * W * 3;
        for (int t = 0; t < T; ++t) {
            double* fr = clip + t * frame_elems;
            if (t > 0 && vx == 0.0 && vy == 0.0) {
                std::copy(clip, clip + frame_elems, fr);
                continue;
            }
            double sx = cx + t * vx, sy = cy + t * vy;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double alpha = detail::disc_alpha(x + 0.5, y + 0.5, sx, sy, r);
                    double* v = fr + (static_cast<size_t>(y) * W + x) * 3;
                    for (int c = 0; c < 3; ++c) {
                        double b = bg[c][static_cast<size_t>(y) * W + x];
                        v[c] = b + alpha * (col[c] - b);
                    }
                }
        }
    }
    round_to_precision(out);
    return out;
}

// ---- PPM (P6, 8-bit) ----

namespace detail {

inline int ppm_token(const std::string& buf, size_t& pos) {
    while (pos < buf.size()) {
        char c = buf[pos];
        if (c == '#') {
            while (pos < buf.size() && buf[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= buf.size() || !std::isdigit(static_cast<unsigned char>(buf[pos])))
        throw std::runtime_error("malformed ppm header");
    int v = 0;
    while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos])))
        v = v * 10 + (buf[pos++] - '0');
    return v;
}

}  // namespace detail

// Decode one binary P6 file to (H,W,3) in [-1,1]; 255 maps to exactly 1.
inline Tensor load_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '6')
        throw std::runtime_error("malformed ppm header: " + path);
    size_t pos = 2;
    int W = detail::ppm_token(buf, pos);
    int H = detail::ppm_token(buf, pos);
    int maxval = detail::ppm_token(buf, pos);
    if (W <= 0 || H <= 0) throw std::runtime_error("malformed ppm header: " + path);
    if (maxval != 255) throw std::runtime_error("unsupported ppm maxval in " + path);
    ++pos;  // single whitespace after maxval
    size_t need = static_cast<size_t>(W) * H * 3;
    if (buf.size() - pos < need) throw std::runtime_error("truncated ppm data: " + path);
    Tensor out({H, W, 3});
    for (size_t i = 0; i < need; ++i)
        out.data()[i] = static_cast<unsigned char>(buf[pos + i]) * (2.0 / 255.0) - 1.0;
    round_to_precision(out);
    return out;
}

// Encode (H,W,3) to binary P6, clipping to [-1,1] before quantizing.
inline void save_ppm(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.dim(2) != 3)
        throw std::invalid_argument("save_ppm expects (H,W,3)");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "P6\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
    std::string bytes(img.numel(), '\0');
    for (size_t i = 0; i < img.numel(); ++i) {
        double v = std::clamp(img.data()[i], -1.0, 1.0);
        bytes[i] = static_cast<char>(static_cast<int>(std::lround((v + 1.0) * 0.5 * 255.0)));
    }
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("cannot write " + path);
}

// All *.ppm files of a directory in name order, (N,H,W,3).
inline Tensor load_images(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".ppm")
            files.push_back(e.path().string());
    if (files.empty()) throw std::runtime_error("no ppm files in " + dir);
    std::sort(files.begin(), files.end());
    Tensor first = load_ppm(files[0]);
    Tensor out({static_cast<int>(files.size()), first.dim(0), first.dim(1), 3});
    long long row = first.numel();
    std::copy(first.data(), first.data() + row, out.data());
    for (size_t i = 1; i < files.size(); ++i) {
        Tensor img = load_ppm(files[i]);
        if (img.shape() != first.shape())
            throw std::runtime_error("image size mismatch: " + files[i]);
        std::copy(img.data(), img.data() + row, out.data() + static_cast<long long>(i) * row);
    }
    return out;
}

// clip_<k>/frame_<t>.ppm directories to (N,T,H,W,3); every clip must hold
// the same number of equally sized frames.
inline Tensor load_video(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir);
    std::vector<std::string> clips;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory() && e.path().filename().string().rfind("clip_", 0) == 0)
            clips.push_back(e.path().string());
    if (clips.empty()) throw std::runtime_error("no clip_<k> directories in " + dir);
    std::sort(clips.begin(), clips.end());
    Tensor first = load_images(clips[0]);
    Tensor out({static_cast<int>(clips.size()), first.dim(0), first.dim(1), first.dim(2), 3});
    long long clip_elems = first.numel();
    std::copy(first.data(), first.data() + clip_elems, out.data());
    for (size_t i = 1; i < clips.size(); ++i) {
        Tensor t = load_images(clips[i]);
        if (t.shape() != first.shape())
            throw std::runtime_error("clip shape mismatch: " + clips[i]);
        std::copy(t.data(), t.data() + clip_elems, out.data() + static_cast<long long>(i) * clip_elems);
    }
    return out;
}

inline void save_video(const std::string& dir, const Tensor& clips) {
    if (clips.rank() != 5 || clips.dim(4) != 3)
        throw std::invalid_argument("save_video expects (N,T,H,W,3)");
    namespace fs = std::filesystem;
    int N = clips.dim(0), T = clips.dim(1), H = clips.dim(2), W = clips.dim(3);
    long long frame = static_cast<long long>(H) * W * 3;
    for (int k = 0; k < N; ++k) {
        fs::path cd = fs::path(dir) / ("clip_" + std::to_string(k));
        fs::create_directories(cd);
        for (int t = 0; t < T; ++t) {
            Tensor img({H, W, 3});
            std::copy(clips.data() + (static_cast<long long>(k) * T + t) * frame,
                      clips.data() + (static_cast<long long>(k) * T + t + 1) * frame, img.data());
            save_ppm((cd / ("frame_" + std::to_string(t) + ".ppm")).string(), img);
        }
    }
}

// ---- corpus assembly ----

struct CorpusSpec {
    std::string kind = "synthetic-textures";
    int T = 1, H = 16, W = 16;
    int n = 64;
    uint64_t seed = 0;
    std::string motion = "static";  // synthetic-video only
    std::string dir;                // file-dir only
};

// Materialize a corpus as (N,T,H,W,3). Image kinds require T = 1; file-dir
// takes its dimensions from the files.
inline Tensor make_corpus(const CorpusSpec& spec) {
    if (spec.kind == "synthetic-video")
        return synth_video(spec.n, spec.T, spec.H, spec.W, spec.seed, spec.motion);
    if (spec.kind == "file-dir") {
        namespace fs = std::filesystem;
        bool has_clips = false;
        if (fs::is_directory(spec.dir))
            for (const auto& e : fs::directory_iterator(spec.dir))
                if (e.is_directory() && e.path().filename().string().rfind("clip_", 0) == 0)
                    has_clips = true;
        if (has_clips) return load_video(spec.dir);
        Tensor imgs = load_images(spec.dir);
        return imgs.reshaped({imgs.dim(0), 1, imgs.dim(1), imgs.dim(2), 3});
    }
    if (spec.T != 1)
        throw std::invalid_argument("image corpus " + spec.kind + " needs T = 1");
    Tensor imgs = synth_images(spec.kind, spec.n, spec.H, spec.W, spec.seed);
    return imgs.reshaped({spec.n, 1, spec.H, spec.W, 3});
}

// One epoch of shuffled batches, dropping the last partial batch.
inline std::vector<Tensor> batches(const Tensor& corpus, int batch_size, uint64_t seed) {
    long long per_epoch = corpus.dim(0) / batch_size;
    std::vector<Tensor> out;
    for (long long s = 0; s < per_epoch; ++s)
        out.push_back(gather_batch(corpus, batch_indices(corpus.dim(0), batch_size, seed, s)));
    return out;
}

}  // namespace vitok
