#include "sdvae/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sdvae/checkpoint.hpp"
#include "sdvae/config.hpp"
#include "sdvae/errors.hpp"
#include "sdvae/exports.hpp"
#include "sdvae/gradcheck_suite.hpp"

#ifndef SDVAE_CONFIG_DIR
#define SDVAE_CONFIG_DIR "configs"
#endif

namespace sdvae {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split(std::string_view text, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = text.find(sep, start);
        out.emplace_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

Dataset maybe_binarize(const Dataset& d, double threshold) { return threshold > 0.0 ? binarize(d, threshold) : d; }

// Options every data-consuming command accepts.
struct RunOptions {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> labeled;
    std::optional<std::string> variant;
    std::optional<int> iaf;
    std::optional<std::size_t> epochs;
    std::optional<double> lr;
    std::optional<std::string> dataset;
    std::vector<std::string> sets;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
    cmd->add_option("--config", o.config, "config name (configs/<name>.cfg) or path");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--seed", o.seed, "seed override");
    cmd->add_option("--labeled", o.labeled, "number of labeled training examples");
    cmd->add_option("--variant", o.variant, "sdvae1 | sdvae2");
    cmd->add_option("--iaf", o.iaf, "0 | 1");
    cmd->add_option("--epochs", o.epochs, "training epochs");
    cmd->add_option("--lr", o.lr, "Adam learning rate");
    cmd->add_option("--dataset", o.dataset, "synthetic | idx:<img>,<lbl>[,<img>,<lbl>] | mnist[:<dir>]");
    cmd->add_option("--set", o.sets, "key=value override, repeatable");
}

TrainingConfig resolve_config(const RunOptions& o) {
    TrainingConfig cfg;
    if (!o.config.empty()) cfg = load_config(resolve_config_path(o.config));
    if (o.seed) cfg.seed = *o.seed;
    if (o.labeled) cfg.labeled_count = *o.labeled;
    if (o.variant) set_config_value(cfg, "variant", *o.variant);
    if (o.iaf) set_config_value(cfg, "iaf", std::to_string(*o.iaf));
    if (o.epochs) cfg.epochs = *o.epochs;
    if (o.lr) cfg.learning_rate = *o.lr;
    if (o.dataset) cfg.dataset = *o.dataset;
    for (const std::string& kv : o.sets) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("set", "expected key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

fs::path default_out(const RunOptions& o, const TrainingConfig& cfg, const std::string& command) {
    if (!o.out.empty()) return o.out;
    const char* root = std::getenv(kOutRootEnv);
    const std::string stem = o.config.empty() ? "default" : fs::path(o.config).stem().string();
    return fs::path(root != nullptr && *root ? root : "runs") / (command + "_" + stem + "_s" + std::to_string(cfg.seed));
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

struct RunOutcome {
    TrainResult result;
    std::optional<double> test_err;
};

// Writes config.resolved.cfg, metrics.jsonl and checkpoint.bin into `dir`.
// On divergence the last good checkpoint is written before rethrowing.
RunOutcome train_into(const TrainingConfig& cfg, const fs::path& dir) {
    ensure_dir(dir);
    write_text(dir / "config.resolved.cfg", config_to_text(cfg));
    const LoadedData data = load_datasets(cfg);

    const fs::path metrics_path = dir / "metrics.jsonl";
    std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
    if (!metrics) throw IoError("cannot write " + metrics_path.string());
    auto sink = [&](const MetricsRecord& m) {
        metrics << metrics_json_line(m) << '\n';
        metrics.flush();
        if (!metrics) throw IoError("write failed for " + metrics_path.string());
    };
    try {
        RunOutcome outcome{train(cfg, data.train, data.test ? &*data.test : nullptr, sink), std::nullopt};
        save_checkpoint(outcome.result.params, dir / "checkpoint.bin");
        if (!outcome.result.metrics.empty() && data.test) outcome.test_err = outcome.result.metrics.back().test_err;
        return outcome;
    } catch (const TrainingDiverged& e) {
        save_checkpoint(e.last_good().params, dir / "checkpoint.bin");
        throw;
    }
}

const Dataset& pick_split(const LoadedData& data, const std::string& which) {
    if (which == "train") return data.train;
    if (which == "test") {
        if (!data.test) throw ConfigError("split", "dataset has no test split");
        return *data.test;
    }
    throw ConfigError("split", "expected train or test, got '" + which + "'");
}

nlohmann::ordered_json nullable(double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr); }

int cmd_train(const RunOptions& o, std::ostream& out) {
    const TrainingConfig cfg = resolve_config(o);
    const fs::path dir = default_out(o, cfg, "train");
    const RunOutcome run = train_into(cfg, dir);
    nlohmann::ordered_json j;
    j["out"] = dir.string();
    j["epochs"] = run.result.metrics.size();
    if (!run.result.metrics.empty()) {
        j["train_err"] = nullable(run.result.metrics.back().train_err);
        j["test_err"] = nullable(run.result.metrics.back().test_err);
        j["elbo"] = run.result.metrics.back().elbo;
    }
    out << j.dump() << '\n';
    return kExitOk;
}

int cmd_eval(const RunOptions& o, const std::string& checkpoint, const std::string& which, std::ostream& out) {
    const TrainingConfig cfg = resolve_config(o);
    const ModelParams params = load_checkpoint(checkpoint);
    const LoadedData data = load_datasets(cfg);
    const Dataset& d = pick_split(data, which);
    const MetricsRecord m = evaluate(params, d, cfg.resolved_v_decode());
    nlohmann::ordered_json j;
    j["split"] = which;
    j["examples"] = d.size();
    j["error"] = nullable(m.test_err);
    j["re"] = m.re;
    out << j.dump() << '\n';
    return kExitOk;
}

int cmd_export(const RunOptions& o, const std::string& checkpoint, const std::string& which, const std::string& file,
               const std::optional<std::string>& mask, std::ostream& out) {
    const TrainingConfig cfg = resolve_config(o);
    const ModelParams params = load_checkpoint(checkpoint);
    const LoadedData data = load_datasets(cfg);
    const Dataset& d = pick_split(data, which);
    if (file.empty()) throw ConfigError("file", "an output file is required");
    const fs::path path(file);
    if (path.has_parent_path()) ensure_dir(path.parent_path());
    nlohmann::ordered_json j;
    if (!mask) {
        export_latents(params, d, path);
        j["latents"] = path.string();
    } else {
        const ReconstructionExport r =
            export_reconstructions(params, d, parse_latent_mask(*mask), cfg.resolved_v_decode(), path);
        j["pixels"] = r.pixels.string();
        j["re_file"] = r.sidecar.string();
        j["mask"] = *mask;
        j["mean_re"] = r.mean_re;
    }
    out << j.dump() << '\n';
    return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t trials, std::ostream& out) {
    const GradCheckSuiteResult r = run_gradcheck_suite(seed, trials);
    for (const auto& e : r.entries)
        out << e.name << " max_rel_err=" << e.report.max_rel_error << " coords=" << e.report.coordinates
            << " kinks=" << e.report.skipped_kinks << '\n';
    out << "max_rel_err " << r.max_rel_error << " seconds " << r.seconds << '\n';
    return r.max_rel_error < 1e-5 ? kExitOk : kExitNumeric;
}

const std::vector<std::string>& grid_axes() {
    static const std::vector<std::string> axes{"lambda", "beta1", "beta2", "flow_length", "labeled"};
    return axes;
}

int cmd_grid(const RunOptions& o, const std::vector<std::string>& specs, std::ostream& out) {
    const TrainingConfig base = resolve_config(o);
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;
    for (const std::string& spec : specs) {
        const std::size_t eq = spec.find('=');
        if (eq == std::string::npos) throw ConfigError("grid", "expected axis=v1,v2,..., got '" + spec + "'");
        std::string axis = spec.substr(0, eq);
        if (axis == "labeled_count") axis = "labeled";
        if (std::find(grid_axes().begin(), grid_axes().end(), axis) == grid_axes().end())
            throw ConfigError("grid", "axis '" + axis + "' is not one of lambda, beta1, beta2, flow_length, labeled");
        std::vector<std::string> values = split(spec.substr(eq + 1), ',');
        for (const auto& v : values) {
            TrainingConfig probe = base;
            set_config_value(probe, axis, v);  // reject bad values before any cell runs
        }
        axes.emplace_back(axis, std::move(values));
    }

    std::size_t cells = 1;
    for (const auto& [axis, values] : axes) cells *= values.size();
    const fs::path dir = default_out(o, base, "grid");
    ensure_dir(dir);

    std::ostringstream csv;
    csv << "cell,seed";
    for (const auto& [axis, values] : axes) csv << ',' << axis;
    csv << ",status,train_err,test_err,elbo,message\n";
    std::size_t failures = 0;
    for (std::size_t cell = 0; cell < cells; ++cell) {
        TrainingConfig cfg = base;
        cfg.seed = base.seed + cell;
        std::vector<std::string> chosen;
        std::size_t rest = cell;
        for (auto it = axes.rbegin(); it != axes.rend(); ++it) {
            chosen.push_back(it->second[rest % it->second.size()]);
            rest /= it->second.size();
        }
        std::reverse(chosen.begin(), chosen.end());
        for (std::size_t a = 0; a < axes.size(); ++a) set_config_value(cfg, axes[a].first, chosen[a]);

        csv << cell << ',' << cfg.seed;
        for (const auto& v : chosen) csv << ',' << v;
        try {
            cfg.validate();
            const RunOutcome run = train_into(cfg, dir / ("cell_" + std::to_string(cell)));
            const MetricsRecord last = run.result.metrics.empty() ? MetricsRecord{} : run.result.metrics.back();
            csv << ",ok," << last.train_err << ',' << last.test_err << ',' << last.elbo << ",\n";
        } catch (const Error& e) {
            ++failures;
            std::string msg = e.what();
            std::replace(msg.begin(), msg.end(), ',', ';');
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            csv << ',' << e.kind() << ",,,," << msg << '\n';
        }
        out << "cell " << cell << " done\n";
    }
    write_text(dir / "grid.csv", csv.str());
    nlohmann::ordered_json j;
    j["out"] = (dir / "grid.csv").string();
    j["cells"] = cells;
    j["failures"] = failures;
    out << j.dump() << '\n';
    return kExitOk;
}

int exit_code_for(const Error& e) {
    if (dynamic_cast<const IoError*>(&e)) return kExitIo;
    if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const DomainError*>(&e) ||
        dynamic_cast<const OracleError*>(&e))
        return kExitNumeric;
    return kExitUsage;
}

void print_error(std::ostream& err, const std::string& kind, const std::string& field, const std::string& message) {
    nlohmann::ordered_json j;
    j["error"] = kind;
    j["field"] = field.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(field);
    j["message"] = message;
    err << j.dump() << '\n';
}

}  // namespace

LoadedData load_datasets(const TrainingConfig& config) {
    const std::string& spec = config.dataset;
    if (spec == "synthetic") {
        SyntheticData syn = make_synthetic(config.synthetic);
        return {std::move(syn.train), std::move(syn.test)};
    }
    if (spec.rfind("idx:", 0) == 0) {
        const std::vector<std::string> paths = split(spec.substr(4), ',');
        if (paths.size() != 2 && paths.size() != 4)
            throw ConfigError("dataset", "idx: expects <img>,<lbl> or <img>,<lbl>,<test-img>,<test-lbl>");
        LoadedData d{maybe_binarize(load_idx(paths[0], paths[1]), config.binarize_threshold), std::nullopt};
        if (paths.size() == 4) d.test = maybe_binarize(load_idx(paths[2], paths[3]), config.binarize_threshold);
        return d;
    }
    if (spec == "mnist" || spec.rfind("mnist:", 0) == 0) {
        std::string dir = spec.size() > 6 ? spec.substr(6) : "";
        if (dir.empty()) {
            const char* env = std::getenv(kMnistDirEnv);
            if (env == nullptr || *env == '\0')
                throw ConfigError("dataset", std::string("mnist needs a directory: mnist:<dir> or $") + kMnistDirEnv);
            dir = env;
        }
        const fs::path root(dir);
        LoadedData d{maybe_binarize(load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte"),
                                    config.binarize_threshold),
                     maybe_binarize(load_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte"),
                                    config.binarize_threshold)};
        d.train.name = "mnist-train";
        d.test->name = "mnist-test";
        return d;
    }
    throw ConfigError("dataset", "unknown dataset '" + spec + "'");
}

fs::path resolve_config_path(const std::string& name_or_path) {
    const fs::path direct(name_or_path);
    if (fs::is_regular_file(direct)) return direct;
    std::vector<fs::path> roots;
    if (const char* env = std::getenv(kConfigDirEnv); env != nullptr && *env) roots.emplace_back(env);
    roots.emplace_back(SDVAE_CONFIG_DIR);
    for (const auto& root : roots) {
        const fs::path candidate = root / (name_or_path + ".cfg");
        if (fs::is_regular_file(candidate)) return candidate;
    }
    throw IoError("config '" + name_or_path + "' not found (tried the path and <name>.cfg in the config directories)");
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Semi-supervised disentangled VAE: training, evaluation and export", "sdvae"};
    app.require_subcommand(1);

    RunOptions train_opts, eval_opts, latents_opts, recon_opts, grid_opts;
    std::string eval_ckpt, latents_ckpt, recon_ckpt;
    std::string eval_split = "test", latents_split = "test", recon_split = "test";
    std::string latents_file, recon_file, recon_mask = "none";
    std::uint64_t gc_seed = 7;
    std::size_t gc_trials = 100;
    std::vector<std::string> grid_specs;

    CLI::App* train_cmd = app.add_subcommand("train", "train a model; writes config, metrics and checkpoint");
    add_run_options(train_cmd, train_opts);

    CLI::App* eval_cmd = app.add_subcommand("eval", "classification error and RE of a checkpoint");
    add_run_options(eval_cmd, eval_opts);
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--split", eval_split, "train | test");

    CLI::App* latents_cmd = app.add_subcommand("export-latents", "write v probabilities and u means as CSV");
    add_run_options(latents_cmd, latents_opts);
    latents_cmd->add_option("--checkpoint", latents_ckpt, "checkpoint file")->required();
    latents_cmd->add_option("--split", latents_split, "train | test");
    latents_cmd->add_option("--file", latents_file, "output CSV")->required();

    CLI::App* recon_cmd = app.add_subcommand("export-recon", "write reconstructions and per-example RE");
    add_run_options(recon_cmd, recon_opts);
    recon_cmd->add_option("--checkpoint", recon_ckpt, "checkpoint file")->required();
    recon_cmd->add_option("--split", recon_split, "train | test");
    recon_cmd->add_option("--file", recon_file, "output CSV")->required();
    recon_cmd->add_option("--mask", recon_mask, "none | mask-u | mask-v");

    CLI::App* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every primitive and objective");
    gc_cmd->add_option("--seed", gc_seed, "sampler seed");
    gc_cmd->add_option("--trials", gc_trials, "random inputs per primitive");

    CLI::App* grid_cmd = app.add_subcommand("grid", "sequential grid over lambda, beta1, beta2, flow_length, labeled");
    add_run_options(grid_cmd, grid_opts);
    grid_cmd->add_option("--grid", grid_specs, "axis=v1,v2,... (repeatable)")->required();

    if (args.empty()) {
        err << app.help();
        print_error(err, "usage", "", "no command given");
        return kExitUsage;
    }
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        print_error(err, "usage", "", e.what());
        return kExitUsage;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(train_opts, out);
        if (eval_cmd->parsed()) return cmd_eval(eval_opts, eval_ckpt, eval_split, out);
        if (latents_cmd->parsed())
            return cmd_export(latents_opts, latents_ckpt, latents_split, latents_file, std::nullopt, out);
        if (recon_cmd->parsed()) return cmd_export(recon_opts, recon_ckpt, recon_split, recon_file, recon_mask, out);
        if (gc_cmd->parsed()) return cmd_gradcheck(gc_seed, gc_trials, out);
        if (grid_cmd->parsed()) return cmd_grid(grid_opts, grid_specs, out);
    } catch (const ConfigError& e) {
        print_error(err, e.kind(), e.field(), e.what());
        return kExitUsage;
    } catch (const Error& e) {
        print_error(err, e.kind(), "", e.what());
        return exit_code_for(e);
    } catch (const std::exception& e) {
        print_error(err, "internal", "", e.what());
        return 1;
    }
    return kExitUsage;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace sdvae
