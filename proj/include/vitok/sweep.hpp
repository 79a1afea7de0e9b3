#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vitok/data.hpp"
#include "vitok/metrics.hpp"
#include "vitok/train.hpp"

namespace vitok {

struct SweepSpec {
    std::vector<int> p{8}, q{1}, c{16}, T{1};
    std::vector<std::string> encoder_size{"S"}, decoder_size{"S"};
    int H = 64, W = 64;
    CorpusSpec corpus;  // per-cell T overrides the spec's T
    TrainPlan plan;
    uint64_t seed = 0;
};

struct SweepCell {
    std::string id;
    ModelConfig cfg;
};

struct SweepRecord {
    std::string id;
    int p = 0, q = 0, c = 0, T = 0;
    std::string enc, dec;
    long long E = 0, L = 0;
    long long params = 0, params_enc = 0, params_dec = 0;
    long long steps = 0;
    double psnr = 0, ssim = 0, frechet = 0;
    LossBreakdown final_loss;
    double wall_ms = 0;
    std::string status = "ok";
};

namespace detail {

inline std::string size_tag(const std::string& s) {
    std::string t = s;
    for (char& c : t)
        if (c == ':') c = '-';
    return t;
}

}  // namespace detail

// The cross product of all axes, in axis-major order (p outermost, T
// innermost). Every cell is validated up front.
inline std::vector<SweepCell> enumerate_cells(const SweepSpec& spec) {
    for (bool empty : {spec.p.empty(), spec.q.empty(), spec.c.empty(), spec.T.empty(),
                       spec.encoder_size.empty(), spec.decoder_size.empty()})
        if (empty) throw std::invalid_argument("empty sweep axis");
    std::vector<SweepCell> cells;
    for (int p : spec.p)
        for (int q : spec.q)
            for (int c : spec.c)
                for (const std::string& enc : spec.encoder_size)
                    for (const std::string& dec : spec.decoder_size)
                        for (int T : spec.T) {
                            SweepCell cell;
                            cell.cfg.p = p;
                            cell.cfg.q = q;
                            cell.cfg.c = c;
                            cell.cfg.T = T;
                            cell.cfg.H = spec.H;
                            cell.cfg.W = spec.W;
                            cell.cfg.encoder_size = enc;
                            cell.cfg.decoder_size = dec;
                            cell.id = "p" + std::to_string(p) + "_q" + std::to_string(q) +
                                      "_c" + std::to_string(c) + "_e" + detail::size_tag(enc) +
                                      "_d" + detail::size_tag(dec) + "_T" + std::to_string(T);
                            try {
                                cell.cfg.validate();
                            } catch (const std::invalid_argument& e) {
                                throw std::invalid_argument("cell " + cell.id + ": " + e.what());
                            }
                            cells.push_back(std::move(cell));
                        }
    return cells;
}

// ---- records.csv ----

inline std::string record_csv_header() {
    return "id,p,q,c,enc,dec,T,E,L,params,params_enc,params_dec,steps,"
           "psnr,ssim,frechet,rec,kl,perceptual,gan_g,total,wall_ms,status\n";
}

inline std::string record_csv_row(const SweepRecord& r) {
    char buf[640];
    std::snprintf(buf, sizeof buf,
                  "%s,%d,%d,%d,%s,%s,%d,%lld,%lld,%lld,%lld,%lld,%lld,"
                  "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f,%s\n",
                  r.id.c_str(), r.p, r.q, r.c, r.enc.c_str(), r.dec.c_str(), r.T, r.E, r.L,
                  r.params, r.params_enc, r.params_dec, r.steps, r.psnr, r.ssim, r.frechet,
                  r.final_loss.rec, r.final_loss.kl, r.final_loss.perceptual, r.final_loss.gan_g,
                  r.final_loss.total, r.wall_ms, r.status.c_str());
    return buf;
}

inline std::vector<SweepRecord> parse_records_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line + "\n" != record_csv_header())
        throw std::runtime_error("bad records header in " + path);
    std::vector<SweepRecord> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) fields.push_back(tok);
        if (fields.size() != 23) throw std::runtime_error("bad records row in " + path);
        SweepRecord r;
        int i = 0;
        r.id = fields[i++];
        r.p = std::stoi(fields[i++]);
        r.q = std::stoi(fields[i++]);
        r.c = std::stoi(fields[i++]);
        r.enc = fields[i++];
        r.dec = fields[i++];
        r.T = std::stoi(fields[i++]);
        r.E = std::stoll(fields[i++]);
        r.L = std::stoll(fields[i++]);
        r.params = std::stoll(fields[i++]);
        r.params_enc = std::stoll(fields[i++]);
        r.params_dec = std::stoll(fields[i++]);
        r.steps = std::stoll(fields[i++]);
        r.psnr = std::stod(fields[i++]);
        r.ssim = std::stod(fields[i++]);
        r.frechet = std::stod(fields[i++]);
        r.final_loss.rec = std::stod(fields[i++]);
        r.final_loss.kl = std::stod(fields[i++]);
        r.final_loss.perceptual = std::stod(fields[i++]);
        r.final_loss.gan_g = std::stod(fields[i++]);
        r.final_loss.total = std::stod(fields[i++]);
        r.wall_ms = std::stod(fields[i++]);
        r.status = fields[i++];
        out.push_back(std::move(r));
    }
    return out;
}

// ---- one cell ----

namespace detail {

inline Tensor eval_reconstructions(const ModelConfig& cfg, const ParamStore& ps,
                                   const Tensor& data) {
    Tensor out(data.shape());
    int n = data.dim(0);
    long long row = data.numel() / n;
    for (int i = 0; i < n; i += 16) {
        int b = std::min(16, n - i);
        std::vector<int> idx(b);
        std::iota(idx.begin(), idx.end(), i);
        Tensor xh = reconstruct_eval(gather_batch(data, idx), cfg, ps);
        std::copy(xh.data(), xh.data() + xh.numel(), out.data() + i * row);
    }
    return out;
}

}  // namespace detail

// Train one cell from scratch and measure it. Divergence comes back as a
// failed record instead of throwing.
inline SweepRecord run_cell(const SweepSpec& spec, const SweepCell& cell, const Tensor& corpus) {
    SweepRecord r;
    r.id = cell.id;
    r.p = cell.cfg.p;
    r.q = cell.cfg.q;
    r.c = cell.cfg.c;
    r.T = cell.cfg.T;
    r.enc = cell.cfg.encoder_size;
    r.dec = cell.cfg.decoder_size;
    r.L = cell.cfg.tokens();
    r.E = cell.cfg.bottleneck_size();
    r.params = count_params(cell.cfg);
    r.params_enc = count_params_encoder(cell.cfg);
    r.params_dec = count_params_decoder(cell.cfg);
    r.steps = spec.plan.total_steps;
    TrainPlan plan = spec.plan;
    plan.seed = mix_seed(spec.seed, fnv1a(cell.id));
    auto t0 = std::chrono::steady_clock::now();
    try {
        TrainState st = train_stage1(cell.cfg, init_params(cell.cfg, plan.seed), corpus, plan);
        Tensor recon = detail::eval_reconstructions(cell.cfg, st.params, corpus);
        r.psnr = psnr(recon, corpus);
        Shape fs{cell.cfg.T * corpus.dim(0), cell.cfg.H, cell.cfg.W, 3};
        Tensor flat_x = corpus.reshaped(fs);
        Tensor flat_r = recon.reshaped(fs);
        r.ssim = ssim(flat_r, flat_x);
        r.frechet = frechet_distance(feature_stats(flat_x), feature_stats(flat_r));
        if (!st.history.empty()) r.final_loss = st.history.back();
        for (double v : {r.psnr, r.ssim, r.frechet})
            if (!std::isfinite(v)) throw std::runtime_error("non-finite metric");
    } catch (const std::runtime_error&) {
        r = SweepRecord{r.id, r.p, r.q, r.c, r.T, r.enc, r.dec, r.E, r.L,
                        r.params, r.params_enc, r.params_dec, r.steps};
        r.status = "failed";
    }
    if (!spec.plan.deterministic)
        r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count();
    return r;
}

// Run every cell, appending each finished record to out_dir/records.csv as
// it lands. Cells already present in the file are skipped, so an
// interrupted sweep resumes where it stopped.
inline std::vector<SweepRecord> run_sweep(const SweepSpec& spec, const std::string& out_dir,
                                          std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    auto cells = enumerate_cells(spec);
    fs::create_directories(out_dir);
    std::string rec_path = (fs::path(out_dir) / "records.csv").string();
    std::vector<SweepRecord> records;
    std::set<std::string> have;
    bool fresh = !fs::exists(rec_path);
    if (!fresh) {
        records = parse_records_csv(rec_path);
        for (const SweepRecord& r : records) have.insert(r.id);
    }

    // Cells sharing a T reuse one corpus; build them all before training.
    std::map<int, Tensor> corpora;
    for (const SweepCell& cell : cells)
        if (!have.count(cell.id) && !corpora.count(cell.cfg.T)) {
            CorpusSpec cs = spec.corpus;
            cs.T = cell.cfg.T;
            cs.H = spec.H;
            cs.W = spec.W;
            corpora.emplace(cell.cfg.T, make_corpus(cs));
        }

    std::ofstream out(rec_path, std::ios::app);
    if (!out) throw std::runtime_error("cannot write " + rec_path);
    if (fresh) out << record_csv_header() << std::flush;
    for (const SweepCell& cell : cells) {
        if (have.count(cell.id)) continue;
        if (log) *log << "cell " << cell.id << "\n" << std::flush;
        SweepRecord r = run_cell(spec, cell, corpora.at(cell.cfg.T));
        out << record_csv_row(r) << std::flush;
        records.push_back(std::move(r));
    }
    return records;
}

// ---- fits ----

struct FitResult {
    double slope = 0, intercept = 0, pearson = 0, spearman = 0;
    bool degenerate = false;
};

namespace detail {

inline std::vector<double> ranks(const std::vector<double>& v) {
    size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        double avg = 0.5 * (i + j) + 1.0;  // average rank for ties
        for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
        i = j + 1;
    }
    return r;
}

inline double pearson_of(const std::vector<double>& xs, const std::vector<double>& ys) {
    size_t n = xs.size();
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) mx += xs[i], my += ys[i];
    mx /= n;
    my /= n;
    double sxx = 0, syy = 0, sxy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (sxx <= 0 || syy <= 0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace detail

// Least squares y = slope*x + intercept with Pearson and Spearman
// correlations. Zero variance on either axis flags the fit degenerate and
// zeroes the correlation instead of dividing by it.
inline FitResult fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("fit sizes differ");
    size_t n = xs.size();
    if (n < 3) throw std::invalid_argument("fit needs at least 3 points");
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) mx += xs[i], my += ys[i];
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    FitResult f;
    if (sxx <= 0 || syy <= 0) {
        f.degenerate = true;
        f.intercept = my;
        return f;
    }
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.pearson = sxy / std::sqrt(sxx * syy);
    f.spearman = detail::pearson_of(detail::ranks(xs), detail::ranks(ys));
    return f;
}

inline double record_field(const SweepRecord& r, const std::string& f) {
    if (f == "E") return static_cast<double>(r.E);
    if (f == "L") return static_cast<double>(r.L);
    if (f == "c") return static_cast<double>(r.c);
    if (f == "T") return static_cast<double>(r.T);
    if (f == "params") return static_cast<double>(r.params);
    if (f == "psnr") return r.psnr;
    if (f == "ssim") return r.ssim;
    if (f == "frechet") return r.frechet;
    if (f == "rec") return r.final_loss.rec;
    if (f == "total") return r.final_loss.total;
    throw std::invalid_argument("unknown record field '" + f + "'");
}

// Fit y against log10(x) over the successful records; log_y additionally
// logs the y field (its values must then be positive).
inline FitResult fit_loglog(const std::vector<SweepRecord>& records, const std::string& xf,
                            const std::string& yf, bool log_y = false) {
    std::vector<double> xs, ys;
    for (const SweepRecord& r : records) {
        if (r.status != "ok") continue;
        double x = record_field(r, xf), y = record_field(r, yf);
        if (x <= 0) throw std::invalid_argument("log axis " + xf + " needs positive values");
        if (log_y && y <= 0) throw std::invalid_argument("log axis " + yf + " needs positive values");
        xs.push_back(std::log10(x));
        ys.push_back(log_y ? std::log10(y) : y);
    }
    return fit_line(xs, ys);
}

struct NamedFit {
    std::string x, y, variant;  // variant: raw | log
    FitResult fit;
};

// The report's default fit table: each metric against log E, raw always,
// log-y when the metric is positive throughout.
inline std::vector<NamedFit> standard_fits(const std::vector<SweepRecord>& records) {
    std::vector<NamedFit> fits;
    for (std::string y : {"psnr", "ssim", "frechet", "rec"}) {
        fits.push_back({"E", y, "raw", fit_loglog(records, "E", y, false)});
        bool positive = true;
        for (const SweepRecord& r : records)
            if (r.status == "ok" && record_field(r, y) <= 0) positive = false;
        if (positive) fits.push_back({"E", y, "log", fit_loglog(records, "E", y, true)});
    }
    return fits;
}

// ---- report files ----

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fmt6(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline std::string scatter_svg(const std::vector<SweepRecord>& records, const std::string& yf,
                               const NamedFit* fit) {
    std::vector<double> xs, ys;
    for (const SweepRecord& r : records) {
        if (r.status != "ok") continue;
        xs.push_back(std::log10(record_field(r, "E")));
        ys.push_back(record_field(r, yf));
    }
    double x0 = xs[0], x1 = xs[0], y0 = ys[0], y1 = ys[0];
    for (size_t i = 0; i < xs.size(); ++i) {
        x0 = std::min(x0, xs[i]);
        x1 = std::max(x1, xs[i]);
        y0 = std::min(y0, ys[i]);
        y1 = std::max(y1, ys[i]);
    }
    double xpad = (x1 - x0) > 0 ? 0.05 * (x1 - x0) : 0.5;
    double ypad = (y1 - y0) > 0 ? 0.05 * (y1 - y0) : 0.5;
    x0 -= xpad, x1 += xpad, y0 -= ypad, y1 += ypad;
    const double PW = 640, PH = 480, ML = 70, MR = 20, MT = 20, MB = 50;
    auto px = [&](double x) { return ML + (x - x0) / (x1 - x0) * (PW - ML - MR); };
    auto py = [&](double y) { return PH - MB - (y - y0) / (y1 - y0) * (PH - MT - MB); };
    std::ostringstream s;
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
         "viewBox=\"0 0 640 480\">\n"
      << "<rect x=\"" << fmt6(ML) << "\" y=\"" << fmt6(MT) << "\" width=\"" << fmt6(PW - ML - MR)
      << "\" height=\"" << fmt6(PH - MT - MB)
      << "\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        double xv = x0 + t * (x1 - x0) / 4, yv = y0 + t * (y1 - y0) / 4;
        s << "<text x=\"" << fmt6(px(xv)) << "\" y=\"" << fmt6(PH - MB + 18)
          << "\" font-size=\"11\" text-anchor=\"middle\">" << fmt6(xv) << "</text>\n";
        s << "<text x=\"" << fmt6(ML - 8) << "\" y=\"" << fmt6(py(yv) + 4)
          << "\" font-size=\"11\" text-anchor=\"end\">" << fmt6(yv) << "</text>\n";
    }
    s << "<text x=\"" << fmt6((ML + PW - MR) / 2) << "\" y=\"" << fmt6(PH - 12)
      << "\" font-size=\"13\" text-anchor=\"middle\">log10 E</text>\n";
    s << "<text x=\"16\" y=\"" << fmt6((MT + PH - MB) / 2)
      << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << fmt6((MT + PH - MB) / 2) << ")\">" << yf << "</text>\n";
    if (fit && !fit->fit.degenerate) {
        double fy0 = fit->fit.slope * x0 + fit->fit.intercept;
        double fy1 = fit->fit.slope * x1 + fit->fit.intercept;
        s << "<line x1=\"" << fmt6(px(x0)) << "\" y1=\"" << fmt6(py(fy0)) << "\" x2=\""
          << fmt6(px(x1)) << "\" y2=\"" << fmt6(py(fy1))
          << "\" stroke=\"#c22\" stroke-width=\"1.5\"/>\n";
    }
    for (size_t i = 0; i < xs.size(); ++i)
        s << "<circle cx=\"" << fmt6(px(xs[i])) << "\" cy=\"" << fmt6(py(ys[i]))
          << "\" r=\"4\" fill=\"#27c\" fill-opacity=\"0.8\"/>\n";
    s << "</svg>\n";
    return s.str();
}

}  // namespace detail

// records.csv + fits.csv + one scatter per metric, all byte-stable for the
// same inputs.
inline void emit_report(const std::vector<SweepRecord>& records, const std::vector<NamedFit>& fits,
                        const std::string& dir) {
    if (records.empty()) throw std::invalid_argument("no records to report");
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream f((fs::path(dir) / "records.csv").string(), std::ios::binary);
        if (!f) throw std::runtime_error("cannot write records.csv in " + dir);
        f << record_csv_header();
        for (const SweepRecord& r : records) f << record_csv_row(r);
    }
    {
        std::ofstream f((fs::path(dir) / "fits.csv").string(), std::ios::binary);
        if (!f) throw std::runtime_error("cannot write fits.csv in " + dir);
        f << "x,y,variant,slope,intercept,pearson,spearman,degenerate\n";
        for (const NamedFit& nf : fits)
            f << nf.x << "," << nf.y << "," << nf.variant << "," << detail::fmt(nf.fit.slope)
              << "," << detail::fmt(nf.fit.intercept) << "," << detail::fmt(nf.fit.pearson) << ","
              << detail::fmt(nf.fit.spearman) << "," << (nf.fit.degenerate ? 1 : 0) << "\n";
    }
    bool any_ok = false;
    for (const SweepRecord& r : records) any_ok |= r.status == "ok";
    if (!any_ok) return;
    for (std::string y : {"psnr", "ssim", "frechet"}) {
        const NamedFit* match = nullptr;
        for (const NamedFit& nf : fits)
            if (nf.x == "E" && nf.y == y && nf.variant == "raw") match = &nf;
        std::ofstream f((fs::path(dir) / ("scatter_" + y + "_vs_logE.svg")).string(),
                        std::ios::binary);
        if (!f) throw std::runtime_error("cannot write scatter svg in " + dir);
        f << detail::scatter_svg(records, y, match);
    }
}

}  // namespace vitok
