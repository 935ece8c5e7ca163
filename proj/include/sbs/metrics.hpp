#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>
#include <json.hpp>
#include <sbs/error.hpp>

namespace sbs {

/// One row per (trial, epoch). Epochs are 1-based.
struct MetricsRecord
{
    std::size_t trial = 0;
    std::size_t epoch = 0;
    double learning_rate = 0.0;
    double train_loss = 0.0;
    double validation_loss = 0.0;
    double validation_accuracy = 0.0;  ///< percent
    double applied_fraction = 0.0;
    std::optional<double> wall_seconds;
};

struct AbortRecord
{
    std::size_t trial = 0;
    std::size_t epoch = 0;
    std::string reason;
};

struct MetricsLog
{
    std::string config_hash;
    std::vector<MetricsRecord> records;
    std::vector<AbortRecord> aborts;
};

inline nlohmann::ordered_json to_json(const MetricsRecord& r)
{
    nlohmann::ordered_json j;
    j["type"] = "epoch";
    j["trial"] = r.trial;
    j["epoch"] = r.epoch;
    j["lr"] = r.learning_rate;
    j["train_loss"] = r.train_loss;
    j["val_loss"] = r.validation_loss;
    j["val_accuracy"] = r.validation_accuracy;
    j["applied_fraction"] = r.applied_fraction;
    if (r.wall_seconds) j["wall_seconds"] = *r.wall_seconds;
    return j;
}

inline void write_metrics_header(std::ostream& out, const std::string& config_hash)
{
    nlohmann::ordered_json j;
    j["type"] = "header";
    j["config_hash"] = config_hash;
    j["format"] = 1;
    out << j.dump() << '\n';
}

inline void write_record(std::ostream& out, const MetricsRecord& r) { out << to_json(r).dump() << '\n'; }

inline void write_abort(std::ostream& out, const AbortRecord& a)
{
    nlohmann::ordered_json j;
    j["type"] = "abort";
    j["trial"] = a.trial;
    j["epoch"] = a.epoch;
    j["reason"] = a.reason;
    out << j.dump() << '\n';
}

inline MetricsLog read_metrics(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open metrics file '" + path.string() + "'");
    MetricsLog log;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto where = path.string() + ":" + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            const auto type = j.at("type").get<std::string>();
            if (type == "header") {
                log.config_hash = j.at("config_hash").get<std::string>();
            } else if (type == "epoch") {
                MetricsRecord r;
                r.trial = j.at("trial").get<std::size_t>();
                r.epoch = j.at("epoch").get<std::size_t>();
                r.learning_rate = j.at("lr").get<double>();
                r.train_loss = j.at("train_loss").get<double>();
                r.validation_loss = j.at("val_loss").get<double>();
                r.validation_accuracy = j.at("val_accuracy").get<double>();
                r.applied_fraction = j.at("applied_fraction").get<double>();
                if (j.contains("wall_seconds")) r.wall_seconds = j.at("wall_seconds").get<double>();
                log.records.push_back(r);
            } else if (type == "abort") {
                log.aborts.push_back({j.at("trial").get<std::size_t>(), j.at("epoch").get<std::size_t>(),
                                      j.at("reason").get<std::string>()});
            } else {
                throw FormatError(where + ": unknown record type '" + type + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(where + ": " + e.what());
        }
    }
    return log;
}

/// Length of the "last 10%" window: ceil(epochs / 10).
inline std::size_t last_window(std::size_t epochs) noexcept { return (epochs + 9) / 10; }

struct CurvePoint
{
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double validation_loss = 0.0;
    double validation_accuracy = 0.0;
    double applied_fraction = 0.0;
};

struct Summary
{
    std::size_t trials = 0;          ///< complete trials aggregated
    std::size_t aborted_trials = 0;
    std::size_t epochs = 0;
    std::size_t window = 0;
    std::vector<double> trial_window_mean;
    std::vector<double> trial_max;
    double last_mean = 0.0;          ///< mean over trials of the per-trial window mean
    double last_std = 0.0;           ///< population std of the same
    double max_accuracy = 0.0;       ///< over all epochs and trials
    double max_std = 0.0;            ///< population std of per-trial maxima
    std::vector<CurvePoint> curve;   ///< per-epoch mean over trials
};

inline double population_mean(const std::vector<double>& xs)
{
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

inline double population_std(const std::vector<double>& xs)
{
    const double m = population_mean(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(xs.size()));
}

/*
 * Trials with a record for every epoch 1..E are complete, E being the largest
 * epoch seen. Aborted or partial trials are counted and left out.
 */
inline Summary aggregate(const std::vector<MetricsRecord>& records, std::size_t aborted = 0)
{
    if (records.empty()) throw PreconditionError("no metrics records to aggregate");
    std::size_t epochs = 0;
    std::map<std::size_t, std::map<std::size_t, const MetricsRecord*>> by_trial;
    for (const auto& r : records) {
        if (r.epoch == 0) throw FormatError("epoch numbers are 1-based");
        if (!by_trial[r.trial].emplace(r.epoch, &r).second) {
            throw FormatError("duplicate record for trial " + std::to_string(r.trial) + " epoch "
                              + std::to_string(r.epoch));
        }
        epochs = std::max(epochs, r.epoch);
    }
    Summary s;
    s.epochs = epochs;
    s.window = last_window(epochs);
    s.aborted_trials = aborted;
    std::vector<const std::map<std::size_t, const MetricsRecord*>*> complete;
    for (const auto& [trial, rows] : by_trial) {
        if (rows.size() == epochs) complete.push_back(&rows);
    }
    if (complete.empty()) throw PreconditionError("no complete trial to aggregate");
    s.trials = complete.size();
    s.aborted_trials += by_trial.size() - complete.size();
    for (const auto* rows : complete) {
        double window_sum = 0.0, best = -1.0;
        for (const auto& [epoch, r] : *rows) {
            if (epoch > epochs - s.window) window_sum += r->validation_accuracy;
            best = std::max(best, r->validation_accuracy);
        }
        s.trial_window_mean.push_back(window_sum / static_cast<double>(s.window));
        s.trial_max.push_back(best);
    }
    s.last_mean = population_mean(s.trial_window_mean);
    s.last_std = population_std(s.trial_window_mean);
    s.max_accuracy = *std::max_element(s.trial_max.begin(), s.trial_max.end());
    s.max_std = population_std(s.trial_max);
    const double t = static_cast<double>(s.trials);
    for (std::size_t e = 1; e <= epochs; ++e) {
        CurvePoint p{e, 0, 0, 0, 0};
        for (const auto* rows : complete) {
            const auto* r = rows->at(e);
            p.train_loss += r->train_loss;
            p.validation_loss += r->validation_loss;
            p.validation_accuracy += r->validation_accuracy;
            p.applied_fraction += r->applied_fraction;
        }
        p.train_loss /= t;
        p.validation_loss /= t;
        p.validation_accuracy /= t;
        p.applied_fraction /= t;
        s.curve.push_back(p);
    }
    return s;
}

inline Summary aggregate(const MetricsLog& log)
{
    std::map<std::size_t, bool> aborted;
    for (const auto& a : log.aborts) aborted[a.trial] = true;
    std::vector<MetricsRecord> kept;
    for (const auto& r : log.records)
        if (!aborted.count(r.trial)) kept.push_back(r);
    if (kept.empty()) throw PreconditionError("no complete trial to aggregate");
    return aggregate(kept, aborted.size());
}

inline void write_summary_csv(std::ostream& out, const Summary& s, const std::string& config_hash)
{
    out << "# config-hash: " << config_hash << "\n"
        << "trials,aborted,epochs,window,last10_mean,last10_std,max_accuracy,max_std\n";
    nlohmann::json row = nlohmann::json::array(
        {s.trials, s.aborted_trials, s.epochs, s.window, s.last_mean, s.last_std, s.max_accuracy, s.max_std});
    std::string line = row.dump();
    out << line.substr(1, line.size() - 2) << "\n";
}

inline void write_curves_csv(std::ostream& out, const Summary& s, const std::string& config_hash)
{
    out << "# config-hash: " << config_hash << "\n"
        << "epoch,train_loss,val_loss,val_accuracy,applied_fraction\n";
    for (const auto& p : s.curve) {
        nlohmann::json row = nlohmann::json::array(
            {p.epoch, p.train_loss, p.validation_loss, p.validation_accuracy, p.applied_fraction});
        std::string line = row.dump();
        out << line.substr(1, line.size() - 2) << "\n";
    }
}

/// metrics.jsonl -> metrics.summary.csv / metrics.curves.csv
inline std::filesystem::path sibling_path(const std::filesystem::path& metrics, const std::string& suffix)
{
    auto p = metrics;
    p.replace_extension();
    p += suffix;
    return p;
}

} // namespace sbs
