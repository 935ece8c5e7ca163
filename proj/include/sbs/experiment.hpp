#pragma once
#include <chrono>
#include <cstdio>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>
#include <sbs/config.hpp>
#include <sbs/data.hpp>
#include <sbs/lr_schedule.hpp>
#include <sbs/metrics.hpp>
#include <sbs/model.hpp>
#include <sbs/optimizers.hpp>
#include <sbs/random.hpp>
#include <sbs/update_probability.hpp>

namespace sbs {

struct PreparedData
{
    Dataset train;
    Dataset validation;
};

/// Loads or synthesizes the train/validation split. Trial-independent; the
/// training fraction is drawn per trial in run_trial().
inline PreparedData prepare_data(const ExperimentConfig& cfg)
{
    const auto& d = cfg.dataset;
    auto stream = SeedStream::derive(cfg.seed, 0, StreamPurpose::dataset);
    PreparedData out;
    switch (d.kind) {
        case DatasetKind::blobs:
            out.train = make_blobs(d.n, d.classes, d.dim, d.separation, stream.split(0)());
            out.validation = make_blobs(d.validation_n, d.classes, d.dim, d.separation, stream.split(1)());
            break;
        case DatasetKind::idx:
            out.train = load_idx(d.train_images, d.train_labels);
            if (!d.validation_images.empty()) {
                out.validation = load_idx(d.validation_images, d.validation_labels);
            } else {
                std::tie(out.train, out.validation) = stratified_split(out.train, d.holdout, stream.split(2));
            }
            break;
        case DatasetKind::csv:
            out.train = load_csv(d.train_csv);
            if (!d.validation_csv.empty()) {
                out.validation = load_csv(d.validation_csv);
            } else {
                std::tie(out.train, out.validation) = stratified_split(out.train, d.holdout, stream.split(2));
            }
            break;
    }
    const std::size_t classes = std::max(out.train.class_count, out.validation.class_count);
    out.train.class_count = out.validation.class_count = classes;
    if (out.train.sample_shape() != out.validation.sample_shape()) {
        throw ConfigError("training and validation samples differ in shape: " + shape_string(out.train.sample_shape())
                          + " vs " + shape_string(out.validation.sample_shape()));
    }
    if (d.normalized()) {
        const auto z = Normalizer::fit(out.train);
        z.apply(out.train);
        z.apply(out.validation);
    }
    return out;
}

inline ModelGraph build_model(const ExperimentConfig& cfg, const Dataset& train)
{
    const auto sample = train.sample_shape();
    const auto classes = static_cast<long long>(train.class_count);
    if (cfg.model.kind == ModelKind::mlp) {
        return build_mlp(static_cast<long long>(shape_size(sample)), cfg.model.hidden, classes, cfg.model.batchnorm);
    }
    if (sample.size() != 3) {
        throw ConfigError("model.kind = cnn needs (channels, height, width) samples, got " + shape_string(sample));
    }
    std::vector<long long> in(sample.begin(), sample.end());
    return build_small_cnn(in, cfg.model.channels, classes);
}

struct Evaluation
{
    double loss = 0.0;
    double accuracy = 0.0;  ///< percent
};

/// Mean cross-entropy and accuracy in evaluation mode, in fixed-size chunks.
inline Evaluation evaluate(const ModelGraph& graph, const ParameterStore& params, const Dataset& ds,
                           ModelBuffers& buffers, std::size_t chunk = 256)
{
    Evaluation ev;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += chunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(ds.size(), start + chunk); ++i) idx.push_back(i);
        const auto batch = ds.gather(idx);
        auto r = forward(graph, params, batch.inputs, batch.labels, Mode::eval, &buffers);
        for (double l : r.loss_value.per_sample) ev.loss += l;
        const Tensor& logits = r.tape.value(r.logits);
        const std::size_t c = logits.dim(1);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < c; ++k)
                if (logits[i * c + k] > logits[i * c + best]) best = k;
            if (static_cast<int>(best) == batch.labels[i]) ++correct;
        }
    }
    ev.loss /= static_cast<double>(ds.size());
    ev.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
    return ev;
}

/// Read-only view handed to instrumentation after every universal batch.
struct IterationView
{
    std::size_t trial = 0;
    std::size_t epoch = 0;          ///< 0-based
    std::size_t batch = 0;
    std::size_t batch_count = 0;
    const GateState* gate = nullptr;  ///< null for SGD
    std::span<const std::uint8_t> indicators;
    std::span<const double> params;
};

struct TrainingHooks
{
    std::function<void(const IterationView&)> after_iteration;
    /// Called once per epoch after the epoch reset, before validation.
    std::function<void(const IterationView&)> after_epoch;
};

struct TrialResult
{
    std::size_t trial = 0;
    std::vector<MetricsRecord> records;
    std::optional<AbortRecord> abort;
    std::vector<double> final_params;
};

/*
 * One training run. Streams: data shuffling, parameter init and gating are
 * derived from (seed, trial, purpose); the training fraction uses its own
 * subsample stream.
 */
inline TrialResult run_trial(const ExperimentConfig& cfg, const PreparedData& data, std::size_t trial,
                             const TrainingHooks* hooks = nullptr)
{
    cfg.validate();
    const Dataset train = cfg.fraction < 1.0
        ? subsample(data.train, cfg.fraction, SeedStream::derive(cfg.seed, trial, StreamPurpose::subsample))
        : data.train;
    const auto graph = build_model(cfg, train);
    auto params = graph.make_store();
    graph.initialize(params, SeedStream::derive(cfg.seed, trial, StreamPurpose::parameter_init));
    auto buffers = graph.make_buffers();
    const auto shuffle = SeedStream::derive(cfg.seed, trial, StreamPurpose::data_shuffle);
    auto gating = SeedStream::derive(cfg.seed, trial, StreamPurpose::gating);

    const auto& opt = cfg.optimizer;
    const std::size_t m = params.size();
    const std::size_t n = train.size();
    if (opt.batch_size > n) {
        throw ConfigError("batch size " + std::to_string(opt.batch_size) + " exceeds the " + std::to_string(n)
                          + " training examples");
    }
    const std::size_t batches = (n + opt.batch_size - 1) / opt.batch_size;
    const double mom = opt.effective_momentum();
    MomentumState momentum(m, mom);
    MomentumState* momentum_ptr = mom > 0.0 ? &momentum : nullptr;
    const bool gated = opt.kind == OptimizerKind::sbs;
    GateState gate(gated ? m : 0, opt.epoch_reset ? batches : 0);
    std::vector<std::uint8_t> indicators(m, 1);

    TrialResult result;
    result.trial = trial;
    const auto started = std::chrono::steady_clock::now();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        MetricsRecord rec;
        rec.trial = trial;
        rec.epoch = epoch + 1;
        try {
            const double lr = lr_at(cfg.schedule, static_cast<double>(epoch), static_cast<double>(cfg.epochs));
            rec.learning_rate = lr;
            const auto plan = plan_epoch(n, opt.batch_size, shuffle, epoch);
            double loss_sum = 0.0;
            std::uint64_t applied = 0;
            for (std::size_t b = 0; b < plan.batch_count(); ++b) {
                const auto batch = train.gather(plan.batches[b]);
                LossValue loss;
                const auto g = loss_gradient(graph, params, batch.inputs, batch.labels, &loss, &buffers);
                loss_sum += loss.scalar * static_cast<double>(batch.labels.size());
                if (!gated) {
                    sgd_step(params.mutable_values(), g, lr, momentum_ptr);
                    applied += m;
                } else {
                    gate.fold(g, batch.labels.size());
                    const std::span<const double> source = opt.probability.source == GradientSource::accumulated
                        ? gate.accumulated() : std::span<const double>(g);
                    const auto stats = compute_group_stats(source, graph.groups());
                    const auto field = compute_probabilities(stats, source, graph.groups(), opt.probability);
                    sample_indicators(field.p, gating, indicators);
                    applied += gate.apply(params.mutable_values(), indicators, lr, momentum_ptr);
                }
                if (hooks && hooks->after_iteration) {
                    hooks->after_iteration({trial, epoch, b, plan.batch_count(), gated ? &gate : nullptr,
                                            indicators, params.values()});
                }
            }
            if (gated && opt.epoch_reset) epoch_reset(gate);
            if (hooks && hooks->after_epoch) {
                hooks->after_epoch({trial, epoch, plan.batch_count(), plan.batch_count(), gated ? &gate : nullptr,
                                    indicators, params.values()});
            }
            rec.train_loss = loss_sum / static_cast<double>(n);
            rec.applied_fraction = static_cast<double>(applied)
                / (static_cast<double>(m) * static_cast<double>(plan.batch_count()));
            const auto ev = evaluate(graph, params, data.validation, buffers);
            if (!std::isfinite(ev.loss)) throw NumericalError("non-finite validation loss");
            rec.validation_loss = ev.loss;
            rec.validation_accuracy = ev.accuracy;
        } catch (const NumericalError& e) {
            result.abort = AbortRecord{trial, epoch + 1, e.what()};
            break;
        }
        if (cfg.record_wall_clock) {
            rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        }
        result.records.push_back(rec);
    }
    result.final_params.assign(params.values().begin(), params.values().end());
    return result;
}

struct ExperimentOutcome
{
    std::vector<TrialResult> trials;
    std::optional<Summary> summary;
    std::string config_hash;
    std::filesystem::path metrics_path, summary_path, curves_path;

    bool aborted() const
    {
        for (const auto& t : trials)
            if (t.abort) return true;
        return false;
    }
};

struct RunOptions
{
    /// Write JSONL/CSV files; off for in-memory sweeps.
    bool write_files = true;
    std::ostream* progress = nullptr;
    const TrainingHooks* hooks = nullptr;
};

/// Runs every trial, then writes metrics.jsonl plus summary and curve CSVs.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const PreparedData& data,
                                        const RunOptions& options = {})
{
    ExperimentOutcome out;
    out.config_hash = config_hash(cfg);
    std::vector<MetricsRecord> all;
    for (std::size_t t = 0; t < cfg.trials; ++t) {
        out.trials.push_back(run_trial(cfg, data, t, options.hooks));
        const auto& tr = out.trials.back();
        all.insert(all.end(), tr.records.begin(), tr.records.end());
        if (options.progress) {
            auto& os = *options.progress;
            os << "trial " << t << ": ";
            if (tr.abort) os << "aborted at epoch " << tr.abort->epoch << ": " << tr.abort->reason << "\n";
            else os << "val accuracy " << tr.records.back().validation_accuracy << "%\n";
        }
    }
    std::size_t aborted = 0;
    std::vector<MetricsRecord> complete;
    for (const auto& tr : out.trials) {
        if (tr.abort) ++aborted;
        else complete.insert(complete.end(), tr.records.begin(), tr.records.end());
    }
    if (!complete.empty()) out.summary = aggregate(complete, aborted);

    if (options.write_files) {
        out.metrics_path = cfg.output;
        out.summary_path = sibling_path(cfg.output, ".summary.csv");
        out.curves_path = sibling_path(cfg.output, ".curves.csv");
        if (cfg.output.has_parent_path()) std::filesystem::create_directories(cfg.output.parent_path());
        std::ofstream jsonl(out.metrics_path, std::ios::binary);
        if (!jsonl) throw ConfigError("cannot write metrics file '" + out.metrics_path.string() + "'");
        write_metrics_header(jsonl, out.config_hash);
        for (const auto& tr : out.trials) {
            for (const auto& r : tr.records) write_record(jsonl, r);
            if (tr.abort) write_abort(jsonl, *tr.abort);
        }
        if (out.summary) {
            std::ofstream s(out.summary_path, std::ios::binary);
            write_summary_csv(s, *out.summary, out.config_hash);
            std::ofstream c(out.curves_path, std::ios::binary);
            write_curves_csv(c, *out.summary, out.config_hash);
        }
    }
    return out;
}

inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {})
{
    return run_experiment(cfg, prepare_data(cfg), options);
}

/// Throws ConfigError unless the two configs agree on everything except the
/// optimizer and the output location.
inline void check_comparable(const ExperimentConfig& a, const ExperimentConfig& b)
{
    auto strip = [](ExperimentConfig c) {
        c.optimizer = OptimizerSpec{};
        c.baseline.reset();
        c.sweep_rows.reset();
        c.sweep_columns.reset();
        return canonical_text(c);
    };
    const auto ta = strip(a), tb = strip(b);
    if (ta == tb) return;
    std::istringstream sa(ta), sb(tb);
    std::string la, lb, section;
    while (std::getline(sa, la) && std::getline(sb, lb)) {
        if (!la.empty() && la.front() == '[') section = la;
        if (la != lb) throw ConfigError("compared configs differ outside the optimizer: " + section + " '" + la
                                        + "' vs '" + lb + "'");
    }
    throw ConfigError("compared configs differ outside the optimizer");
}

/// Applies one sweep value to a config; `candidate` selects whether scheme
/// values apply (the baseline keeps its own optimizer).
inline void apply_axis(ExperimentConfig& c, SweepAxisKind kind, const std::string& value, bool candidate)
{
    try {
        switch (kind) {
            case SweepAxisKind::batch_size:
                c.optimizer.batch_size = std::stoul(value);
                break;
            case SweepAxisKind::fraction: {
                const auto slash = value.find('/');
                c.fraction = slash == std::string::npos
                    ? std::stod(value) : std::stod(value.substr(0, slash)) / std::stod(value.substr(slash + 1));
                break;
            }
            case SweepAxisKind::scheme:
                if (!candidate) break;
                if (value == "local") c.optimizer.probability.scheme = ProbabilityScheme::local;
                else if (value == "global") c.optimizer.probability.scheme = ProbabilityScheme::global;
                else if (value == "combined") c.optimizer.probability.scheme = ProbabilityScheme::combined;
                else if (value == "constant") c.optimizer.probability.scheme = ProbabilityScheme::constant;
                else throw ConfigError("unknown scheme '" + value + "' in sweep");
                break;
        }
    } catch (const std::logic_error&) {
        throw ConfigError("bad sweep value '" + value + "' for axis " + std::string(to_string(kind)));
    }
}

struct SweepCell
{
    std::string row, column;
    Summary candidate, baseline;
    double gain() const { return candidate.last_mean - baseline.last_mean; }
};

struct SweepTable
{
    std::optional<SweepAxisKind> row_axis, column_axis;
    std::vector<std::string> rows, columns;
    std::vector<SweepCell> cells;  ///< row-major
};

/// The baseline side of a sweep: [baseline] when present, else SGD.
inline ExperimentConfig baseline_config(const ExperimentConfig& cfg)
{
    ExperimentConfig b = cfg;
    if (cfg.baseline) {
        b.optimizer = *cfg.baseline;
    } else {
        b.optimizer.kind = OptimizerKind::sgd;
    }
    return b;
}

/*
 * Grid of (rows x columns) cells, each running candidate and baseline with
 * identical seeds. Missing axes collapse to a single row or column.
 */
inline SweepTable sweep(const ExperimentConfig& cfg, const PreparedData& data, std::ostream* progress = nullptr)
{
    SweepTable table;
    if (cfg.sweep_rows) {
        table.row_axis = cfg.sweep_rows->kind;
        table.rows = cfg.sweep_rows->values;
    } else {
        table.rows = {"-"};
    }
    if (cfg.sweep_columns) {
        table.column_axis = cfg.sweep_columns->kind;
        table.columns = cfg.sweep_columns->values;
    } else {
        table.columns = {"-"};
    }
    RunOptions quiet;
    quiet.write_files = false;
    for (const auto& rv : table.rows) {
        for (const auto& cv : table.columns) {
            ExperimentConfig cand = cfg, base = baseline_config(cfg);
            for (auto* c : {&cand, &base}) {
                const bool is_candidate = c == &cand;
                if (table.row_axis) apply_axis(*c, *table.row_axis, rv, is_candidate);
                if (table.column_axis) apply_axis(*c, *table.column_axis, cv, is_candidate);
                c->validate();
            }
            check_comparable(cand, base);
            auto rc = run_experiment(cand, data, quiet);
            auto rb = run_experiment(base, data, quiet);
            if (!rc.summary || !rb.summary) throw NumericalError("sweep cell " + rv + "/" + cv + " lost every trial");
            table.cells.push_back({rv, cv, *rc.summary, *rb.summary});
            if (progress) {
                *progress << "cell " << rv << " / " << cv << ": " << rc.summary->last_mean << " vs "
                          << rb.summary->last_mean << " (gain " << table.cells.back().gain() << ")\n";
            }
        }
    }
    return table;
}

inline void write_sweep_csv(std::ostream& out, const SweepTable& t, const std::string& config_hash)
{
    out << "# config-hash: " << config_hash << "\n"
        << "row,column,candidate_mean,candidate_std,baseline_mean,baseline_std,gain\n";
    for (const auto& c : t.cells) {
        nlohmann::json row = nlohmann::json::array({c.row, c.column, c.candidate.last_mean, c.candidate.last_std,
                                                    c.baseline.last_mean, c.baseline.last_std, c.gain()});
        std::string line;
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) line += ",";
            line += row[i].is_string() ? row[i].get<std::string>() : row[i].dump();
        }
        out << line << "\n";
    }
}

/// Text grid: one cell per (row, column) as "candidate (gain)".
inline void print_sweep_table(std::ostream& out, const SweepTable& t)
{
    const auto axis = [](const std::optional<SweepAxisKind>& k) {
        return k ? std::string(to_string(*k)) : std::string("-");
    };
    out << axis(t.row_axis) << " \\ " << axis(t.column_axis);
    for (const auto& c : t.columns) out << "\t" << c;
    out << "\n";
    std::size_t i = 0;
    for (const auto& r : t.rows) {
        out << r;
        for (std::size_t k = 0; k < t.columns.size(); ++k, ++i) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "\t%.2f (%+.2f)", t.cells[i].candidate.last_mean, t.cells[i].gain());
            out << buf;
        }
        out << "\n";
    }
}

struct OracleReport
{
    double learning_rate = 0.0;
    double gap = 0.0;             ///< max over iterations and applied parameters of k_j |g_ref - g~|
    std::size_t iterations = 0;
    std::uint64_t applied = 0;
};

/*
 * Runs the CMA optimizer at a constant learning rate and, in lock-step, asks
 * the recomputing reference optimizer what it would apply from the same
 * iterate and the same indicators. The gap is the largest difference of the
 * two applied steps divided by the learning rate. Indicators come from a
 * constant-p stream so both learning rates see the same gating sequence.
 */
inline OracleReport oracle_gap(const ExperimentConfig& cfg, const PreparedData& data, double lr,
                               std::size_t epochs, double p = 0.5)
{
    const auto graph = build_model(cfg, data.train);
    auto params = graph.make_store();
    graph.initialize(params, SeedStream::derive(cfg.seed, 0, StreamPurpose::parameter_init));
    const std::size_t m = params.size();
    if (m > reference_parameter_budget) {
        throw ConfigError("oracle needs at most " + std::to_string(reference_parameter_budget) + " parameters, model has "
                          + std::to_string(m));
    }
    if (!graph.make_buffers().empty()) throw ConfigError("oracle needs a model without batch normalization");
    const auto shuffle = SeedStream::derive(cfg.seed, 0, StreamPurpose::data_shuffle);
    auto gating = SeedStream::derive(cfg.seed, 0, StreamPurpose::gating);
    const std::size_t n = data.train.size();
    const std::size_t bsz = cfg.optimizer.batch_size;

    IndexedGradientFn over = [&](std::span<const std::size_t> idx, std::span<const double> w) {
        ParameterStore at(std::vector<ParameterGroup>(graph.groups().begin(), graph.groups().end()));
        at.assign(w);
        const auto b = data.train.gather(idx);
        return loss_gradient(graph, at, b.inputs, b.labels);
    };

    GateState gate(m);
    RefBatchState ref(m);
    std::vector<double> probs(m, p), g_ref;
    std::vector<std::uint8_t> chi(m);
    OracleReport rep;
    rep.learning_rate = lr;
    for (std::size_t e = 0; e < epochs; ++e) {
        const auto plan = plan_epoch(n, bsz, shuffle, e);
        for (std::size_t b = 0; b < plan.batch_count(); ++b) {
            const auto batch = data.train.gather(plan.batches[b]);
            const auto g = loss_gradient(graph, params, batch.inputs, batch.labels);
            sample_indicators(probs, gating, chi);
            gate.fold(g, batch.labels.size());
            std::vector<double> probe(params.values().begin(), params.values().end());
            ref.step(probe, over, plan, b, chi, lr, &g_ref);
            const auto acc = gate.accumulated();
            const auto k = gate.counts();
            for (std::size_t j = 0; j < m; ++j) {
                if (!chi[j]) continue;
                rep.gap = std::max(rep.gap, static_cast<double>(k[j]) * std::abs(g_ref[j] - acc[j]));
            }
            rep.applied += gate.apply(params.mutable_values(), chi, lr);
            ++rep.iterations;
        }
        epoch_reset(gate);
        epoch_reset(ref);
    }
    return rep;
}

} // namespace sbs
