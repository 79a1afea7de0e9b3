#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "vitok/configfile.hpp"
#include "vitok/metrics.hpp"

using namespace vitok;
namespace fs = std::filesystem;

namespace {

// The pipeline runs one worker; the env var can only lower that. Parsing
// still validates the value so typos fail loudly.
int effective_threads() {
    const char* env = std::getenv("VITOKLAB_THREADS");
    if (!env) return 1;
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (*env == '\0' || *end != '\0' || v < 1)
        throw std::invalid_argument(std::string("VITOKLAB_THREADS must be a positive integer, got '") +
                                    env + "'");
    return static_cast<int>(std::min<long>(v, 1));
}

struct CommonFlags {
    std::string config;
    std::vector<std::string> sets;
    std::string seed;
    bool deterministic = false;
    std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required) {
    auto* c = cmd->add_option("--config", f.config, "config file (key = value lines)");
    if (config_required) c->required();
    cmd->add_option("--set", f.sets, "override a config key, e.g. --set train.peak_lr=1e-3");
    cmd->add_option("--seed", f.seed, "override the seed");
    cmd->add_flag("--deterministic", f.deterministic, "bitwise-reproducible mode (zeroes wall clocks)");
    cmd->add_option("--out", f.out, "override the output directory");
}

ConfigFile load_config(const CommonFlags& f) {
    ConfigFile cf = f.config.empty() ? ConfigFile{} : ConfigFile::parse_file(f.config);
    for (const std::string& kv : f.sets) {
        size_t eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw std::invalid_argument("--set wants key=value, got '" + kv + "'");
        cf.set(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    }
    if (!f.seed.empty()) cf.set("seed", f.seed);
    if (f.deterministic) cf.set("deterministic", "true");
    if (!f.out.empty()) cf.set("out.dir", f.out);
    return cf;
}

void check_config_match(const ModelConfig& a, const ModelConfig& b) {
    if (config_to_kv(a) != config_to_kv(b))
        throw std::invalid_argument("checkpoint/config mismatch: the checkpoint was trained with a "
                                    "different model configuration");
}

void apply_ema(TrainState& st) {
    for (const auto& [name, t] : st.ema.tensors) st.params.tensors.at(name) = t.clone();
}

int cmd_train(const CommonFlags& flags, int stage, bool resume, const std::string& init_from,
              long long steps) {
    ConfigFile cf = load_config(flags);
    RunConfig rc = parse_run_config(cf);
    cf.reject_unknown();
    rc.model.validate();
    rc.plan.weights.validate();
    if (stage != 1 && stage != 2) throw std::invalid_argument("--stage must be 1 or 2");

    fs::create_directories(rc.out_dir);
    std::string ckpt = (fs::path(rc.out_dir) / "checkpoint.vtok").string();

    TrainState st;
    if (resume) {
        if (!fs::exists(ckpt))
            throw std::invalid_argument("--resume: no checkpoint at " + ckpt);
        auto [loaded, stored_cfg] = load_train_state(ckpt);
        check_config_match(stored_cfg, rc.model);
        if (loaded.stage != stage)
            throw std::invalid_argument("--resume: checkpoint is stage " +
                                        std::to_string(loaded.stage) + ", asked for stage " +
                                        std::to_string(stage));
        st = std::move(loaded);
    } else if (stage == 1) {
        st.params = init_params(rc.model, rc.plan.seed);
        st.stage = 1;
    } else {
        if (init_from.empty())
            throw std::invalid_argument("stage 2 needs --init-from <stage-1 checkpoint>");
        auto [s1, s1_cfg] = load_train_state(init_from);
        check_config_match(s1_cfg, rc.model);
        st = make_stage2_state(std::move(s1.params), rc.plan);
    }

    Tensor corpus = make_corpus(rc.corpus);
    std::ofstream log((fs::path(rc.out_dir) / "train_log.csv").string(),
                      resume ? std::ios::app : std::ios::trunc);
    if (!log) throw std::invalid_argument("cannot write train log in " + rc.out_dir);

    long long start = st.step;
    try {
        st = train_resume(rc.model, std::move(st), corpus, rc.plan, &log, steps);
    } catch (const std::runtime_error& e) {
        std::cerr << "training diverged: " << e.what() << "\n";
        return 3;
    }
    save_train_state(ckpt, rc.model, st);
    std::cout << "stage " << stage << ": steps " << start << " -> " << st.step << ", checkpoint "
              << ckpt << "\n";
    return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& ckpt_path, const std::string& metrics_arg,
             const std::string& out_file, bool use_ema) {
    ConfigFile cf = load_config(flags);
    RunConfig rc = parse_run_config(cf);
    cf.reject_unknown();

    auto [st, cfg] = load_train_state(ckpt_path);
    if (rc.corpus.kind != "file-dir" &&
        (rc.corpus.T != cfg.T || rc.corpus.H != cfg.H || rc.corpus.W != cfg.W))
        throw std::invalid_argument("checkpoint/config mismatch: corpus dims " +
                                    std::to_string(rc.corpus.T) + "x" + std::to_string(rc.corpus.H) +
                                    "x" + std::to_string(rc.corpus.W) + " vs model " +
                                    std::to_string(cfg.T) + "x" + std::to_string(cfg.H) + "x" +
                                    std::to_string(cfg.W));
    if (use_ema) apply_ema(st);

    std::vector<std::string> wanted;
    std::stringstream ms(metrics_arg);
    std::string m;
    while (std::getline(ms, m, ',')) {
        m = detail::trim(m);
        if (m != "psnr" && m != "ssim" && m != "frechet")
            throw std::invalid_argument("unknown metric '" + m + "' (want psnr, ssim, frechet)");
        wanted.push_back(m);
    }
    if (wanted.empty()) throw std::invalid_argument("--metrics selects nothing");
    auto has = [&](const char* name) {
        return std::find(wanted.begin(), wanted.end(), name) != wanted.end();
    };

    Tensor corpus = make_corpus(rc.corpus);
    if (corpus.dim(1) != cfg.T || corpus.dim(2) != cfg.H || corpus.dim(3) != cfg.W)
        throw std::invalid_argument("checkpoint/config mismatch: loaded corpus is " +
                                    shape_str(corpus.shape()));
    Tensor recon = detail::eval_reconstructions(cfg, st.params, corpus);

    int n = corpus.dim(0);
    Shape frame_shape{cfg.T, cfg.H, cfg.W, 3};
    std::ostringstream csv;
    csv << "image";
    for (const std::string& w : wanted) csv << "," << w;
    csv << "\n";
    for (int i = 0; i < n; ++i) {
        std::vector<int> idx{i};
        Tensor x = gather_batch(corpus, idx).reshaped({cfg.T, cfg.H, cfg.W, 3});
        Tensor r = gather_batch(recon, idx).reshaped({cfg.T, cfg.H, cfg.W, 3});
        csv << i;
        for (const std::string& w : wanted) {
            csv << ",";
            if (w == "psnr")
                csv << detail::fmt(psnr(r, x));
            else if (w == "ssim")
                csv << detail::fmt(ssim(r, x));
            // per-image frechet is undefined; the cell stays empty
        }
        csv << "\n";
    }
    Shape flat{n * cfg.T, cfg.H, cfg.W, 3};
    Tensor flat_x = corpus.reshaped(flat), flat_r = recon.reshaped(flat);
    csv << "aggregate";
    std::ostringstream pretty;
    for (const std::string& w : wanted) {
        double v = w == "psnr"   ? psnr(flat_r, flat_x)
                   : w == "ssim" ? ssim(flat_r, flat_x)
                                 : frechet_distance(feature_stats(flat_x), feature_stats(flat_r));
        csv << "," << detail::fmt(v);
        pretty << (pretty.tellp() > 0 ? " " : "") << w << "=" << detail::fmt6(v);
    }
    csv << "\n";

    std::string out = out_file.empty() ? (fs::path(rc.out_dir) / "eval.csv").string() : out_file;
    fs::path parent = fs::path(out).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    std::ofstream f(out, std::ios::binary);
    if (!f) throw std::invalid_argument("cannot write " + out);
    f << csv.str();
    std::cout << pretty.str() << " -> " << out << "\n";
    return 0;
}

int cmd_reconstruct(const std::string& ckpt_path, const std::vector<std::string>& inputs,
                    const std::string& out_dir, bool use_ema) {
    auto [st, cfg] = load_train_state(ckpt_path);
    if (cfg.T != 1)
        throw std::invalid_argument("reconstruct takes single images; checkpoint has T=" +
                                    std::to_string(cfg.T));
    if (use_ema) apply_ema(st);
    fs::create_directories(out_dir);
    for (const std::string& in : inputs) {
        Tensor img = load_ppm(in);
        if (img.dim(0) != cfg.H || img.dim(1) != cfg.W)
            throw std::invalid_argument("input " + in + " is " + std::to_string(img.dim(0)) + "x" +
                                        std::to_string(img.dim(1)) + ", model wants " +
                                        std::to_string(cfg.H) + "x" + std::to_string(cfg.W));
        Tensor x = img.reshaped({1, 1, cfg.H, cfg.W, 3});
        Tensor r = reconstruct_eval(x, cfg, st.params).reshaped({cfg.H, cfg.W, 3});
        std::string name = fs::path(in).stem().string() + "_recon.ppm";
        std::string out = (fs::path(out_dir) / name).string();
        save_ppm(out, r);
        std::cout << out << "\n";
    }
    return 0;
}

int cmd_sweep(const CommonFlags& flags, bool dry_run) {
    ConfigFile cf = load_config(flags);
    SweepSpec spec = parse_sweep_spec(cf);
    std::string out_dir = cf.str("out.dir", "out");
    cf.reject_unknown();
    auto cells = enumerate_cells(spec);
    if (dry_run) {
        for (const SweepCell& cell : cells)
            std::cout << cell.id << " E=" << cell.cfg.bottleneck_size()
                      << " L=" << cell.cfg.tokens() << " params=" << count_params(cell.cfg) << "\n";
        std::cout << cells.size() << " cells\n";
        return 0;
    }
    auto records = run_sweep(spec, out_dir, &std::cout);
    long long ok = 0;
    for (const SweepRecord& r : records) ok += r.status == "ok";
    std::vector<NamedFit> fits;
    if (ok >= 3) fits = standard_fits(records);
    emit_report(records, fits, out_dir);
    std::cout << records.size() << " cells (" << ok << " ok) -> " << out_dir << "\n";
    return 0;
}

int cmd_report(const std::string& records_dir, const std::string& out_arg) {
    auto records = parse_records_csv((fs::path(records_dir) / "records.csv").string());
    long long ok = 0;
    for (const SweepRecord& r : records) ok += r.status == "ok";
    std::vector<NamedFit> fits;
    if (ok >= 3) fits = standard_fits(records);
    std::string out = out_arg.empty() ? records_dir : out_arg;
    emit_report(records, fits, out);
    std::cout << records.size() << " records -> " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale visual tokenizer laboratory"};
    app.require_subcommand(1);

    CommonFlags train_flags;
    int stage = 1;
    bool resume = false;
    std::string init_from;
    long long steps = -1;
    auto* train = app.add_subcommand("train", "train a tokenizer");
    add_common(train, train_flags, true);
    train->add_option("--stage", stage, "training stage: 1 or 2");
    train->add_flag("--resume", resume, "continue from the output directory's checkpoint");
    train->add_option("--init-from", init_from, "stage-1 checkpoint to start stage 2 from");
    train->add_option("--steps", steps, "stop after this step (schedule still spans train.total_steps)");

    CommonFlags eval_flags;
    std::string eval_ckpt, metrics = "psnr,ssim,frechet", eval_out;
    bool eval_ema = false;
    auto* eval = app.add_subcommand("eval", "measure reconstruction quality");
    add_common(eval, eval_flags, true);
    eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
    eval->add_option("--metrics", metrics, "comma list of psnr,ssim,frechet");
    eval->add_option("--csv", eval_out, "metrics CSV path (default <out.dir>/eval.csv)");
    eval->add_flag("--use-ema", eval_ema, "evaluate with the EMA decoder weights");

    std::string rec_ckpt, rec_out = "recon";
    std::vector<std::string> rec_inputs;
    bool rec_ema = false;
    auto* rec = app.add_subcommand("reconstruct", "round-trip PPM images through a checkpoint");
    rec->add_option("--checkpoint", rec_ckpt, "trained checkpoint")->required();
    rec->add_option("inputs", rec_inputs, "input .ppm files")->required();
    rec->add_option("--out", rec_out, "output directory");
    rec->add_flag("--use-ema", rec_ema, "reconstruct with the EMA decoder weights");

    CommonFlags sweep_flags;
    bool dry_run = false;
    auto* sweep = app.add_subcommand("sweep", "train a config grid and report");
    add_common(sweep, sweep_flags, true);
    sweep->add_flag("--dry-run", dry_run, "list the cells without training");

    std::string report_dir, report_out;
    auto* report = app.add_subcommand("report", "rebuild fits and plots from records.csv");
    report->add_option("--records", report_dir, "directory holding records.csv")->required();
    report->add_option("--out", report_out, "output directory (default: same as --records)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        effective_threads();
        if (train->parsed()) return cmd_train(train_flags, stage, resume, init_from, steps);
        if (eval->parsed()) return cmd_eval(eval_flags, eval_ckpt, metrics, eval_out, eval_ema);
        if (rec->parsed()) return cmd_reconstruct(rec_ckpt, rec_inputs, rec_out, rec_ema);
        if (sweep->parsed()) return cmd_sweep(sweep_flags, dry_run);
        if (report->parsed()) return cmd_report(report_dir, report_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
