// Workbench binary: data generation, training, evaluation, the two ablation
// tables, the loss-weight sweep, a gradient audit, and attention-rollout
// rendering. Exit codes: 0 success, 1 config error, 2 runtime failure, each
// failure printing a single `error: ...` line on stderr.

#include <CLI11.hpp>

#include <cft/config.hpp>
#include <cft/experiments.hpp>
#include <cft/rollout.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct CliArgs {
    std::string config_path;
    std::string out_dir;
    bool strict = false;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> precision;
    // visualize
    std::string stream;
    std::size_t sample = 0;
    std::size_t upscale = 8;
    // sweep-lambda
    std::vector<double> grid;
};

std::size_t env_threads() {
    const char* raw = std::getenv("CFT_THREADS");
    if (raw == nullptr) return 1;
    char* end = nullptr;
    const unsigned long v = std::strtoul(raw, &end, 10);
    if (end == raw || *end != '\0' || v == 0)
        throw cft::ConfigError("config: CFT_THREADS must be a positive integer, got \"" +
                               std::string(raw) + "\"");
    return static_cast<std::size_t>(v);
}

cft::RunConfig resolve_config(const CliArgs& a) {
    cft::RunConfig cfg = a.config_path.empty()
                             ? cft::parse_run_config(nlohmann::json::object())
                             : cft::parse_run_config_file(a.config_path);
    if (a.seed) {
        cfg.data.seed = *a.seed;
        cfg.train.seed = *a.seed;
    }
    if (a.precision) {
        if (*a.precision != 32 && *a.precision != 64)
            throw cft::ConfigError("config: --precision must be 32 or 64, got " +
                                   std::to_string(*a.precision));
        cfg.train.precision_bits = *a.precision;
    }
    return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f.good()) throw std::runtime_error("cannot write " + path.string());
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    write_text(path, j.dump(2) + "\n");
}

std::filesystem::path prepare_out(const CliArgs& a, const cft::RunConfig& cfg,
                                  const std::string& command) {
    const std::filesystem::path out =
        a.out_dir.empty() ? std::filesystem::path("runs") / command : std::filesystem::path(a.out_dir);
    std::filesystem::create_directories(out);
    write_json(out / "config_echo.json", cft::run_config_to_json(cfg));
    return out;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string format_table(const std::vector<std::string>& head,
                         const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> w(head.size());
    for (std::size_t c = 0; c < head.size(); ++c) w[c] = head[c].size();
    for (const auto& r : rows)
        for (std::size_t c = 0; c < r.size(); ++c) w[c] = std::max(w[c], r[c].size());
    auto line = [&](const std::vector<std::string>& r) {
        std::string s;
        for (std::size_t c = 0; c < r.size(); ++c) {
            s += r[c];
            if (c + 1 < r.size()) s += std::string(w[c] - r[c].size() + 2, ' ');
        }
        s += "\n";
        return s;
    };
    std::string out = line(head);
    std::size_t total = 0;
    for (std::size_t c = 0; c < w.size(); ++c) total += w[c] + (c + 1 < w.size() ? 2 : 0);
    out += std::string(total, '-') + "\n";
    for (const auto& r : rows) out += line(r);
    return out;
}

cft::Dataset load_or_generate(const cft::RunConfig& cfg) {
    if (!cfg.dataset_path.empty()) return cft::load_dataset(cfg.dataset_path);
    return cft::generate_dataset(cfg.data);
}

nlohmann::json report_row(const cft::EvalReport& r) {
    return {{"kappa", r.kappa}, {"accuracy", r.accuracy}, {"macro_f1", r.macro_f1}};
}

int cmd_gen_data(const CliArgs& a, const cft::RunConfig& cfg) {
    const auto out = prepare_out(a, cfg, "gen-data");
    const std::string path =
        cfg.dataset_path.empty() ? (out / "data.cftd").string() : cfg.dataset_path;
    auto ds = cft::generate_dataset(cfg.data);
    cft::save_dataset(path, ds);
    const auto hist = ds.label_histogram();
    const std::string reported = cfg.dataset_path.empty() ? "data.cftd" : path;
    write_json(out / "gen_data.json", {{"command", "gen-data"},
                                       {"path", reported},
                                       {"n_samples", ds.samples.size()},
                                       {"bytes", std::filesystem::file_size(path)},
                                       {"label_histogram", hist}});
    std::cout << "wrote " << ds.samples.size() << " samples to " << path << "\n";
    return 0;
}

template <typename S>
int run_train(const CliArgs& a, const cft::RunConfig& cfg) {
    const auto out = prepare_out(a, cfg, "train");
    auto ds = load_or_generate(cfg);
    auto [tr, val] = cft::stratified_split(ds, 0.8, cfg.data.seed);

    nlohmann::json epochs = nlohmann::json::array();
    std::vector<std::vector<std::string>> rows;
    auto log_epoch = [&](const cft::TrainState<S>& st, const cft::EvalReport& rep) {
        std::cout << "epoch " << st.epoch << "  kappa " << fmt(rep.kappa) << "  acc "
                  << fmt(rep.accuracy) << "  f1 " << fmt(rep.macro_f1) << "\n";
        return true;
    };
    auto res = cft::train<S>(tr, val, cfg.model, cfg.train, nullptr, log_epoch);

    for (std::size_t e = 0; e < res.reports.size(); ++e) {
        const auto& rep = res.reports[e];
        epochs.push_back({{"epoch", e + 1},
                          {"loss", res.epoch_losses[e]},
                          {"kappa", rep.kappa},
                          {"accuracy", rep.accuracy},
                          {"macro_f1", rep.macro_f1}});
        rows.push_back({std::to_string(e + 1), fmt(res.epoch_losses[e]), fmt(rep.kappa),
                        fmt(rep.accuracy), fmt(rep.macro_f1)});
    }
    const auto& best = res.reports.at(res.best_epoch - 1);
    const std::string ckpt = (out / "model.cftc").string();
    cft::save_checkpoint(ckpt, res.best);
    // artifacts reference each other by bare name so identical runs into
    // different directories stay byte-identical
    write_json(out / "metrics.json",
               {{"command", "train"},
                {"n_train", tr.samples.size()},
                {"n_val", val.samples.size()},
                {"epochs", epochs},
                {"best", {{"epoch", res.best_epoch}, {"report", cft::report_to_json(best)}}},
                {"checkpoint", "model.cftc"}});
    write_text(out / "table.txt",
               format_table({"epoch", "loss", "kappa", "acc", "f1"}, rows));
    std::cout << "best epoch " << res.best_epoch << "  kappa " << fmt(best.kappa)
              << "  checkpoint " << ckpt << "\n";
    return 0;
}

template <typename S>
int run_eval(const CliArgs& a, const cft::RunConfig& cfg) {
    if (cfg.checkpoint_path.empty())
        throw cft::ConfigError("config: paths.checkpoint is required for eval");
    const auto out = prepare_out(a, cfg, "eval");
    auto ds = load_or_generate(cfg);
    auto [tr, val] = cft::stratified_split(ds, 0.8, cfg.data.seed);
    auto st = cft::load_checkpoint<S>(cfg.checkpoint_path, cfg.model);
    auto rep = cft::evaluate(st.model, val);
    write_json(out / "metrics.json", {{"command", "eval"},
                                      {"checkpoint", cfg.checkpoint_path},
                                      {"n_val", val.samples.size()},
                                      {"report", cft::report_to_json(rep)}});
    write_text(out / "table.txt",
               format_table({"kappa", "acc", "f1", "n"},
                            {{fmt(rep.kappa), fmt(rep.accuracy), fmt(rep.macro_f1),
                              std::to_string(rep.n_samples)}}));
    std::cout << "kappa " << fmt(rep.kappa) << "  acc " << fmt(rep.accuracy) << "  f1 "
              << fmt(rep.macro_f1) << "\n";
    return 0;
}

template <typename S>
int run_ablate(const CliArgs& a, const cft::RunConfig& cfg) {
    const auto out = prepare_out(a, cfg, "ablate");
    auto tables = cft::run_ablation<S>(cfg);

    nlohmann::json t1 = nlohmann::json::array();
    std::vector<std::vector<std::string>> rows1;
    for (const auto& r : tables.comparison) {
        t1.push_back({{"name", r.name},
                      {"kappa", r.kappa},
                      {"accuracy", r.accuracy},
                      {"macro_f1", r.macro_f1}});
        rows1.push_back({r.name, fmt(r.kappa), fmt(r.accuracy), fmt(r.macro_f1)});
    }
    nlohmann::json t2 = nlohmann::json::array();
    std::vector<std::vector<std::string>> rows2;
    for (const auto& r : tables.loss_ablation) {
        t2.push_back({{"row", r.row},
                      {"loss_cf", r.loss_cf},
                      {"loss_if", r.loss_if},
                      {"projection", r.projection},
                      {"fusion", cft::to_string(r.fusion)},
                      {"kappa", r.kappa},
                      {"accuracy", r.accuracy},
                      {"macro_f1", r.macro_f1}});
        rows2.push_back({std::to_string(r.row), r.loss_cf ? "yes" : "-", r.loss_if ? "yes" : "-",
                         r.projection ? "yes" : "-", cft::to_string(r.fusion), fmt(r.kappa),
                         fmt(r.accuracy), fmt(r.macro_f1)});
    }
    write_json(out / "ablation.json", {{"command", "ablate"}, {"comparison", t1}, {"loss_ablation", t2}});
    const std::string text =
        "model comparison\n" +
        format_table({"model", "kappa", "acc", "f1"}, rows1) + "\nloss and fusion ablation\n" +
        format_table({"row", "loss_cf", "loss_if", "proj", "fusion", "kappa", "acc", "f1"}, rows2);
    write_text(out / "table.txt", text);
    std::cout << text;
    return 0;
}

template <typename S>
int run_sweep(const CliArgs& a, const cft::RunConfig& cfg, std::size_t threads) {
    const auto out = prepare_out(a, cfg, "sweep-lambda");
    const auto& grid = a.grid.empty() ? cft::default_lambda_grid() : a.grid;
    auto sweep = cft::sweep_lambda<S>(cfg, grid, threads);

    nlohmann::json pts = nlohmann::json::array();
    std::vector<std::vector<std::string>> rows;
    for (const auto& p : sweep.points) {
        pts.push_back({{"lambda", p.lambda},
                       {"kappa", p.kappa},
                       {"accuracy", p.accuracy},
                       {"macro_f1", p.macro_f1}});
        rows.push_back({fmt(p.lambda), fmt(p.kappa), fmt(p.accuracy), fmt(p.macro_f1)});
    }
    write_json(out / "sweep.json", {{"command", "sweep-lambda"},
                                    {"points", pts},
                                    {"best_lambda", sweep.best_lambda},
                                    {"best_kappa", sweep.best_kappa}});
    const std::string text = format_table({"lambda", "kappa", "acc", "f1"}, rows) +
                             "best lambda " + fmt(sweep.best_lambda) + "  kappa " +
                             fmt(sweep.best_kappa) + "\n";
    write_text(out / "table.txt", text);
    std::cout << text;
    return 0;
}

int run_gradcheck(const CliArgs& a, const cft::RunConfig& cfg) {
    const auto out = prepare_out(a, cfg, "gradcheck");
    cft::SynthConfig one = cfg.data;
    one.n_samples = 1;
    auto ds = cft::generate_dataset(one);

    // always 64-bit: float-precision finite differences would drown in noise
    auto rep = cft::grad_check<double>(cfg.model, ds.samples[0], cfg.train.lambda,
                                       cfg.train.enable_loss_cf, cfg.train.enable_loss_if);
    nlohmann::json fails = nlohmann::json::array();
    for (const auto& c : rep.failures)
        fails.push_back({{"param", c.param},
                         {"index", c.index},
                         {"analytic", c.analytic},
                         {"numeric", c.numeric},
                         {"rel", c.rel}});
    write_json(out / "gradcheck.json", {{"command", "gradcheck"},
                                        {"n_coords", rep.n_coords},
                                        {"max_rel", rep.max_rel},
                                        {"median_rel", rep.median_rel},
                                        {"frac_below_1e4", rep.frac_below_1e4},
                                        {"failures", fails}});
    std::cout << "coords " << rep.n_coords << "  max_rel " << rep.max_rel << "  frac<1e-4 "
              << rep.frac_below_1e4 << "\n";
    if (rep.max_rel >= 1e-3 || rep.frac_below_1e4 < 0.99)
        throw std::runtime_error("gradient audit failed: max_rel " + std::to_string(rep.max_rel) +
                                 ", frac_below_1e4 " + std::to_string(rep.frac_below_1e4));
    return 0;
}

template <typename S>
int run_visualize(const CliArgs& a, const cft::RunConfig& cfg) {
    if (cfg.checkpoint_path.empty())
        throw cft::ConfigError("config: paths.checkpoint is required for visualize");
    if (!a.stream.empty() && a.stream != "cf" && a.stream != "if")
        throw cft::ConfigError("config: --stream must be cf or if, got \"" + a.stream + "\"");
    const auto out = prepare_out(a, cfg, "visualize");
    auto ds = load_or_generate(cfg);
    if (a.sample >= ds.samples.size())
        throw cft::ConfigError("config: --sample " + std::to_string(a.sample) + " out of range (" +
                               std::to_string(ds.samples.size()) + " samples)");
    auto st = cft::load_checkpoint<S>(cfg.checkpoint_path, cfg.model);

    const auto& s = ds.samples[a.sample];
    auto cf = cft::to_model_input<S>(s.cfp);
    auto iff = cft::to_model_input<S>(s.ifp);
    cft::Graph<S> g;
    auto mo = cft::forward(g, st.model, cfg.model.has_cfp() ? &cf : nullptr,
                           cfg.model.has_ifp() ? &iff : nullptr);

    nlohmann::json streams = nlohmann::json::array();
    auto emit = [&](const char* name, const cft::EncodeOut<S>& enc, const cft::StreamConfig& sc) {
        if (!a.stream.empty() && a.stream != name) return;
        auto maps64 = cft::head_averaged_attention(g, enc.block_attn);
        auto r = cft::attention_rollout(maps64, name);
        const auto pgm = cft::render_pgm(r, sc.H / sc.p, sc.W / sc.p, a.upscale);
        const std::string fname = std::string("rollout_") + name + ".pgm";
        const std::string path = (out / fname).string();
        write_text(path, pgm);
        streams.push_back(
            {{"stream", name}, {"pgm", fname}, {"importance", r.importance.data}});
        std::cout << "wrote " << path << "\n";
    };
    if (cfg.model.has_cfp()) emit("cf", mo.enc_cf, cfg.model.cfp);
    if (cfg.model.has_ifp()) emit("if", mo.enc_if, cfg.model.ifp);
    if (streams.empty())
        throw cft::ConfigError("config: --stream " + a.stream + " is not present in this model");

    // cross-attention maps are exported raw: rollout across two token spaces
    // is undefined
    nlohmann::json cross = nlohmann::json::object();
    auto emit_cross = [&](const char* name, const std::vector<typename cft::Graph<S>::NodeId>& heads) {
        if (heads.empty()) return;
        auto avg = cft::head_averaged_attention(g, {heads})[0];
        cross[name] = {{"shape", avg.shape}, {"data", avg.data}};
    };
    emit_cross("cf", mo.cross_attn_cf);
    emit_cross("if", mo.cross_attn_if);

    write_json(out / "viz.json", {{"command", "visualize"},
                                  {"sample", a.sample},
                                  {"label", s.label},
                                  {"upscale", a.upscale},
                                  {"streams", streams},
                                  {"cross_attention", cross}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-fundus transformer workbench"};
    app.require_subcommand(1);
    CliArgs args;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", args.config_path, "JSON run config (defaults when omitted)");
        sub->add_option("--out", args.out_dir, "output directory (default runs/<command>)");
        sub->add_option("--seed", args.seed, "override data and train seeds");
        sub->add_option("--precision", args.precision, "train precision: 32 or 64 bits");
        sub->add_flag("--strict", args.strict, "single-thread determinism");
        return sub;
    };

    auto* gen = add_common(app.add_subcommand("gen-data", "generate a paired synthetic dataset"));
    auto* train = add_common(app.add_subcommand("train", "train one model per the config"));
    auto* eval = add_common(app.add_subcommand("eval", "score a checkpoint on the val split"));
    auto* ablate =
        add_common(app.add_subcommand("ablate", "model comparison and loss ablation tables"));
    auto* sweep = add_common(app.add_subcommand("sweep-lambda", "loss-weight sweep with argmax"));
    sweep->add_option("--grid", args.grid, "lambda values (default 0,0.2,0.4,0.5,0.6,0.8,1)");
    auto* gradcheck =
        add_common(app.add_subcommand("gradcheck", "finite-difference gradient audit"));
    auto* viz = add_common(app.add_subcommand("visualize", "attention rollout heatmaps"));
    viz->add_option("--stream", args.stream, "cf or if (default: every present stream)");
    viz->add_option("--sample", args.sample, "dataset sample index");
    viz->add_option("--upscale", args.upscale, "pixels per patch cell")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        std::cerr << "error: config: " << e.what() << "\n";
        return 1;
    }

    try {
        const cft::RunConfig cfg = resolve_config(args);
        const std::size_t threads = args.strict ? 1 : env_threads();
        const bool f64 = cfg.train.precision_bits == 64;
        try {
            if (gen->parsed()) return cmd_gen_data(args, cfg);
            if (train->parsed()) return f64 ? run_train<double>(args, cfg) : run_train<float>(args, cfg);
            if (eval->parsed()) return f64 ? run_eval<double>(args, cfg) : run_eval<float>(args, cfg);
            if (ablate->parsed())
                return f64 ? run_ablate<double>(args, cfg) : run_ablate<float>(args, cfg);
            if (sweep->parsed())
                return f64 ? run_sweep<double>(args, cfg, threads) : run_sweep<float>(args, cfg, threads);
            if (gradcheck->parsed()) return run_gradcheck(args, cfg);
            if (viz->parsed())
                return f64 ? run_visualize<double>(args, cfg) : run_visualize<float>(args, cfg);
            std::cerr << "error: config: no subcommand\n";
            return 1;
        } catch (const cft::ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            std::cerr << "error: runtime: " << e.what() << "\n";
            return 2;
        }
    } catch (const cft::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
