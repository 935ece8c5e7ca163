// Command-line front end: run, sweep, aggregate, gradcheck, oracle.
//
// Exit codes: 0 success, 1 configuration or input error, 2 numerical abort.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <sbs/experiment.hpp>
#include <sbs/gradcheck.hpp>

namespace fs = std::filesystem;

namespace {

struct Common
{
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true)
{
    auto* opt = cmd->add_option("--config", c.config, "experiment config file");
    if (config_required) opt->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "base seed (overrides [experiment] seed)");
    cmd->add_option("--out", c.out, "output path");
}

sbs::ExperimentConfig load(const Common& c)
{
    auto cfg = sbs::load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.output = c.out;
    return cfg;
}

int cmd_run(const Common& c, bool quiet)
{
    const auto cfg = load(c);
    sbs::RunOptions opts;
    opts.progress = quiet ? nullptr : &std::cerr;
    const auto res = sbs::run_experiment(cfg, opts);
    if (res.summary) {
        std::printf("config %s: %zu trial(s), last-%zu mean %.4f%% (std %.4f), max %.4f%%\n",
                    res.config_hash.c_str(), res.summary->trials, res.summary->window, res.summary->last_mean,
                    res.summary->last_std, res.summary->max_accuracy);
    }
    std::printf("metrics: %s\n", res.metrics_path.string().c_str());
    return res.aborted() ? 2 : 0;
}

int cmd_sweep(const Common& c, bool quiet)
{
    const auto cfg = load(c);
    if (!cfg.sweep_rows && !cfg.sweep_columns) throw sbs::ConfigError(c.config + ": no [sweep] axes given");
    const auto data = sbs::prepare_data(cfg);
    const auto table = sbs::sweep(cfg, data, quiet ? nullptr : &std::cerr);
    sbs::print_sweep_table(std::cout, table);
    fs::path out = c.out.empty() ? sbs::sibling_path(cfg.output, ".sweep.csv") : fs::path(c.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream f(out, std::ios::binary);
    sbs::write_sweep_csv(f, table, sbs::config_hash(cfg));
    std::printf("sweep: %s\n", out.string().c_str());
    return 0;
}

int cmd_aggregate(const Common& c, const std::string& metrics_arg)
{
    fs::path metrics = metrics_arg;
    if (metrics.empty()) {
        if (c.config.empty()) throw sbs::ConfigError("aggregate needs a metrics file or --config");
        metrics = load(Common{c.config, c.seed, {}}).output;
    }
    const auto log = sbs::read_metrics(metrics);
    const auto s = sbs::aggregate(log);
    fs::path out = c.out.empty() ? sbs::sibling_path(metrics, ".summary.csv") : fs::path(c.out);
    std::ofstream f(out, std::ios::binary);
    sbs::write_summary_csv(f, s, log.config_hash);
    std::printf("%zu trial(s) (%zu aborted), %zu epochs, window %zu: last mean %.4f%% std %.4f, max %.4f%% std %.4f\n",
                s.trials, s.aborted_trials, s.epochs, s.window, s.last_mean, s.last_std, s.max_accuracy, s.max_std);
    std::printf("summary: %s\n", out.string().c_str());
    return 0;
}

int cmd_gradcheck(const Common& c, std::size_t samples, double step, double tol)
{
    const auto cfg = load(c);
    const auto data = sbs::prepare_data(cfg);
    const auto graph = sbs::build_model(cfg, data.train);
    auto params = graph.make_store();
    graph.initialize(params, sbs::SeedStream::derive(cfg.seed, 0, sbs::StreamPurpose::parameter_init));
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < std::min(samples, data.train.size()); ++i) idx.push_back(i);
    const auto batch = data.train.gather(idx);
    const auto rep = sbs::finite_difference_check(graph, params, batch.inputs, batch.labels, step, tol);
    std::printf("checked %zu parameters: max relative error %.3e (parameter %zu), mean %.3e -> %s\n", rep.checked,
                rep.max_relative_error, rep.worst_index, rep.mean_relative_error, rep.passed ? "ok" : "FAILED");
    return rep.passed ? 0 : 2;
}

int cmd_oracle(const Common& c, double lr, std::size_t epochs)
{
    const auto cfg = load(c);
    const auto data = sbs::prepare_data(cfg);
    const auto full = sbs::oracle_gap(cfg, data, lr, epochs);
    const auto half = sbs::oracle_gap(cfg, data, lr / 2, epochs);
    std::printf("lr %.6g: gap %.6e over %zu iterations\n", full.learning_rate, full.gap, full.iterations);
    std::printf("lr %.6g: gap %.6e over %zu iterations\n", half.learning_rate, half.gap, half.iterations);
    std::printf("ratio %.4f\n", half.gap > 0 ? full.gap / half.gap : 0.0);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Stochastic-batch-size training harness"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "suppress progress output");

    Common run_c, sweep_c, agg_c, grad_c, oracle_c;
    auto* run = app.add_subcommand("run", "train every trial of an experiment and write metrics");
    add_common(run, run_c);

    auto* sw = app.add_subcommand("sweep", "grid of candidate vs baseline summaries over the [sweep] axes");
    add_common(sw, sweep_c);

    std::string metrics;
    auto* agg = app.add_subcommand("aggregate", "summarize a metrics file");
    add_common(agg, agg_c, false);
    agg->add_option("metrics", metrics, "metrics JSONL file (default: the config's output)");

    std::size_t samples = 8;
    double step = 1e-5, tol = 1e-4;
    auto* gc = app.add_subcommand("gradcheck", "compare autodiff against central differences");
    add_common(gc, grad_c);
    gc->add_option("--samples", samples, "examples in the checked batch")->capture_default_str();
    gc->add_option("--step", step, "finite-difference step")->capture_default_str();
    gc->add_option("--tolerance", tol, "max relative error")->capture_default_str();

    double lr = 1e-2;
    std::size_t epochs = 1;
    auto* orc = app.add_subcommand("oracle", "gap between the recomputing and the CMA optimizer at lr and lr/2");
    add_common(orc, oracle_c);
    orc->add_option("--lr", lr, "learning rate")->capture_default_str();
    orc->add_option("--epochs", epochs, "epochs to run")->capture_default_str();

    CLI11_PARSE(app, argc, argv);
    try {
        if (*run) return cmd_run(run_c, quiet);
        if (*sw) return cmd_sweep(sweep_c, quiet);
        if (*agg) return cmd_aggregate(agg_c, metrics);
        if (*gc) return cmd_gradcheck(grad_c, samples, step, tol);
        if (*orc) return cmd_oracle(oracle_c, lr, epochs);
    } catch (const sbs::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
