#pragma once
#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>
#include <sbs/error.hpp>
#include <sbs/lr_schedule.hpp>
#include <sbs/update_probability.hpp>

namespace sbs {

/*
 * Flat INI-style text: `[section]` headers, `key = value` lines, `#` or `;`
 * comments. Every entry remembers its line for diagnostics.
 */
class IniDocument
{
public:
    struct Entry
    {
        std::string value;
        std::size_t line = 0;
    };

    static IniDocument parse(std::string_view text, std::string source = "<config>")
    {
        IniDocument doc;
        doc.source_ = std::move(source);
        std::string section;
        std::size_t lineno = 0;
        std::size_t pos = 0;
        while (pos <= text.size()) {
            const auto nl = text.find('\n', pos);
            std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
            pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
            ++lineno;
            const auto hash = line.find_first_of("#;");
            if (hash != std::string_view::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw doc.error(lineno, "unterminated section header");
                section = std::string(trim(line.substr(1, line.size() - 2)));
                if (section.empty()) throw doc.error(lineno, "empty section name");
                if (doc.sections_.count(section)) throw doc.error(lineno, "duplicate section [" + section + "]");
                doc.sections_[section];
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string_view::npos) throw doc.error(lineno, "expected 'key = value'");
            if (section.empty()) throw doc.error(lineno, "key outside of any section");
            const std::string key(trim(line.substr(0, eq)));
            if (key.empty()) throw doc.error(lineno, "missing key name");
            auto& sec = doc.sections_[section];
            if (sec.count(key)) throw doc.error(lineno, "duplicate key '" + key + "' in [" + section + "]");
            sec[key] = Entry{std::string(trim(line.substr(eq + 1))), lineno};
        }
        return doc;
    }

    static IniDocument load(const std::filesystem::path& path)
    {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path.string());
    }

    const std::string& source() const noexcept { return source_; }
    bool has_section(const std::string& s) const { return sections_.count(s) > 0; }

    const std::map<std::string, Entry>* section(const std::string& s) const
    {
        auto it = sections_.find(s);
        return it == sections_.end() ? nullptr : &it->second;
    }

    std::vector<std::string> section_names() const
    {
        std::vector<std::string> out;
        for (const auto& [name, _] : sections_) out.push_back(name);
        return out;
    }

    ConfigError error(std::size_t line, const std::string& msg) const
    {
        return ConfigError(source_ + ":" + std::to_string(line) + ": " + msg);
    }

    static std::string_view trim(std::string_view s)
    {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string_view::npos) return {};
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

private:
    std::string source_;
    std::map<std::string, std::map<std::string, Entry>> sections_;
};

enum class DatasetKind { blobs, idx, csv };
enum class ModelKind { mlp, cnn };
enum class OptimizerKind { sgd, sbs };
enum class SweepAxisKind { batch_size, fraction, scheme };

inline std::string_view to_string(DatasetKind k) noexcept
{
    switch (k) {
        case DatasetKind::blobs: return "blobs";
        case DatasetKind::idx: return "idx";
        case DatasetKind::csv: return "csv";
    }
    return "unknown";
}
inline std::string_view to_string(ModelKind k) noexcept { return k == ModelKind::mlp ? "mlp" : "cnn"; }
inline std::string_view to_string(OptimizerKind k) noexcept { return k == OptimizerKind::sgd ? "sgd" : "sbs"; }
inline std::string_view to_string(SweepAxisKind k) noexcept
{
    switch (k) {
        case SweepAxisKind::batch_size: return "batch_size";
        case SweepAxisKind::fraction: return "fraction";
        case SweepAxisKind::scheme: return "scheme";
    }
    return "unknown";
}

struct DatasetSpec
{
    DatasetKind kind = DatasetKind::blobs;
    // blobs
    std::size_t n = 2000;
    std::size_t classes = 2;
    std::size_t dim = 2;
    double separation = 4.0;
    std::size_t validation_n = 1000;
    // idx / csv; relative paths resolve against the config file's directory
    std::filesystem::path train_images, train_labels, validation_images, validation_labels;
    std::filesystem::path train_csv, validation_csv;
    /// Held-out share of the training file when no validation file is given.
    double holdout = 0.2;
    /// Per-channel standardization fitted on the training split.
    std::optional<bool> normalize;

    bool normalized() const { return normalize.value_or(kind != DatasetKind::blobs); }
};

struct ModelSpec
{
    ModelKind kind = ModelKind::mlp;
    std::vector<long long> hidden{8};
    bool batchnorm = false;
    std::vector<long long> channels{4};
};

struct OptimizerSpec
{
    OptimizerKind kind = OptimizerKind::sgd;
    ProbabilityConfig probability;
    std::size_t batch_size = 16;
    std::optional<double> momentum;
    bool epoch_reset = true;

    /// Explicit momentum, else the batch-size pairing 16/32/64/128 ->
    /// 0/0.3/0.6/0.9 (0 for other sizes).
    double effective_momentum() const
    {
        if (momentum) return *momentum;
        switch (batch_size) {
            case 32: return 0.3;
            case 64: return 0.6;
            case 128: return 0.9;
            default: return 0.0;
        }
    }
};

struct SweepAxis
{
    SweepAxisKind kind = SweepAxisKind::fraction;
    std::vector<std::string> values;
};

struct ExperimentConfig
{
    DatasetSpec dataset;
    ModelSpec model;
    OptimizerSpec optimizer;
    LrSchedule schedule;
    std::size_t epochs = 30;
    std::size_t trials = 1;
    std::uint64_t seed = 1;
    double fraction = 1.0;
    std::filesystem::path output = "metrics.jsonl";
    bool record_wall_clock = false;

    std::optional<SweepAxis> sweep_rows;
    std::optional<SweepAxis> sweep_columns;
    /// Optimizer of the comparison baseline for sweeps (defaults to SGD with
    /// the candidate's batch size and momentum).
    std::optional<OptimizerSpec> baseline;

    void validate() const
    {
        if (epochs == 0) throw ConfigError("experiment.epochs must be positive");
        if (trials == 0) throw ConfigError("experiment.trials must be positive");
        if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("experiment.fraction must lie in (0, 1]");
        if (optimizer.batch_size == 0) throw ConfigError("optimizer.batch_size must be positive");
        try {
            schedule.validate();
            optimizer.probability.validate();
            if (baseline) baseline->probability.validate();
        } catch (const PreconditionError& e) {
            throw ConfigError(e.what());
        }
        const double mom = optimizer.effective_momentum();
        if (!(mom >= 0.0 && mom < 1.0)) throw ConfigError("optimizer.momentum must lie in [0, 1)");
    }
};

namespace detail {

inline std::string format_double(double v)
{
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

template <class T>
std::string join(const std::vector<T>& xs)
{
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) s += ", ";
        if constexpr (std::is_same_v<T, double>) s += format_double(xs[i]);
        else if constexpr (std::is_same_v<T, std::string>) s += xs[i];
        else s += std::to_string(xs[i]);
    }
    return s;
}

class ConfigReader
{
public:
    explicit ConfigReader(const IniDocument& doc) : doc_(doc) {}

    void check_known(const std::string& section, std::initializer_list<std::string_view> keys) const
    {
        const auto* sec = doc_.section(section);
        if (!sec) return;
        for (const auto& [key, entry] : *sec) {
            bool known = false;
            for (auto k : keys) known = known || k == key;
            if (!known) throw doc_.error(entry.line, "unknown key '" + key + "' in [" + section + "]");
        }
    }

    const IniDocument::Entry* find(const std::string& section, const std::string& key) const
    {
        const auto* sec = doc_.section(section);
        if (!sec) return nullptr;
        auto it = sec->find(key);
        return it == sec->end() ? nullptr : &it->second;
    }

    template <class T>
    void read(const std::string& section, const std::string& key, T& out) const
    {
        if (const auto* e = find(section, key)) out = convert<T>(*e, section + "." + key);
    }

    template <class T>
    void read(const std::string& section, const std::string& key, std::optional<T>& out) const
    {
        if (const auto* e = find(section, key)) out = convert<T>(*e, section + "." + key);
    }

    template <class T>
    T convert(const IniDocument::Entry& e, const std::string& field) const
    {
        const std::string& v = e.value;
        const auto bad = [&](const char* what) {
            return doc_.error(e.line, "field '" + field + "': expected " + what + ", found '" + v + "'");
        };
        if constexpr (std::is_same_v<T, bool>) {
            if (v == "true" || v == "yes" || v == "1") return true;
            if (v == "false" || v == "no" || v == "0") return false;
            throw bad("a boolean");
        } else if constexpr (std::is_same_v<T, double>) {
            double x = 0;
            auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
            if (ec != std::errc() || p != v.data() + v.size()) throw bad("a number");
            return x;
        } else if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
            T x = 0;
            auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
            if (ec != std::errc() || p != v.data() + v.size()) throw bad("a non-negative integer");
            return x;
        } else if constexpr (std::is_same_v<T, std::string>) {
            return v;
        } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
            return std::filesystem::path(v);
        } else if constexpr (std::is_same_v<T, std::vector<long long>> || std::is_same_v<T, std::vector<double>>) {
            T out;
            for (const auto& item : split_list(v)) {
                typename T::value_type x{};
                auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
                if (ec != std::errc() || p != item.data() + item.size()) throw bad("a comma-separated number list");
                out.push_back(x);
            }
            return out;
        } else {
            static_assert(sizeof(T) == 0, "unsupported config field type");
        }
    }

    template <class E>
    E choose(const std::string& section, const std::string& key, E fallback,
             std::initializer_list<std::pair<std::string_view, E>> options) const
    {
        const auto* e = find(section, key);
        if (!e) return fallback;
        std::string allowed;
        for (const auto& [name, value] : options) {
            if (e->value == name) return value;
            allowed += (allowed.empty() ? "" : ", ") + std::string(name);
        }
        throw doc_.error(e->line, "field '" + section + "." + key + "': '" + e->value + "' is not one of {" + allowed + "}");
    }

    static std::vector<std::string> split_list(std::string_view v)
    {
        std::vector<std::string> out;
        if (IniDocument::trim(v).empty()) return out;
        std::size_t start = 0;
        while (true) {
            const auto comma = v.find(',', start);
            out.emplace_back(IniDocument::trim(v.substr(start, comma - start)));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        return out;
    }

    const IniDocument& doc() const { return doc_; }

private:
    const IniDocument& doc_;
};

inline void read_optimizer(const ConfigReader& r, const std::string& section, OptimizerSpec& o)
{
    r.check_known(section, {"kind", "scheme", "alpha", "lambda", "constant_p", "gradient_source", "batch_size",
                            "momentum", "epoch_reset"});
    o.kind = r.choose(section, "kind", o.kind, {{"sgd", OptimizerKind::sgd}, {"sbs", OptimizerKind::sbs}});
    o.probability.scheme = r.choose(section, "scheme", o.probability.scheme,
                                    {{"local", ProbabilityScheme::local},
                                     {"global", ProbabilityScheme::global},
                                     {"combined", ProbabilityScheme::combined},
                                     {"constant", ProbabilityScheme::constant}});
    o.probability.source = r.choose(section, "gradient_source", o.probability.source,
                                    {{"accumulated", GradientSource::accumulated}, {"batch", GradientSource::batch}});
    r.read(section, "alpha", o.probability.alpha);
    r.read(section, "lambda", o.probability.lambda);
    r.read(section, "constant_p", o.probability.constant_p);
    r.read(section, "batch_size", o.batch_size);
    r.read(section, "momentum", o.momentum);
    r.read(section, "epoch_reset", o.epoch_reset);
}

inline void write_optimizer(std::ostream& out, const OptimizerSpec& o)
{
    out << "kind = " << to_string(o.kind) << "\n"
        << "scheme = " << to_string(o.probability.scheme) << "\n"
        << "alpha = " << format_double(o.probability.alpha) << "\n"
        << "lambda = " << format_double(o.probability.lambda) << "\n"
        << "constant_p = " << format_double(o.probability.constant_p) << "\n"
        << "gradient_source = " << to_string(o.probability.source) << "\n"
        << "batch_size = " << o.batch_size << "\n"
        << "momentum = " << format_double(o.effective_momentum()) << "\n"
        << "epoch_reset = " << (o.epoch_reset ? "true" : "false") << "\n";
}

inline SweepAxis read_axis(const ConfigReader& r, const std::string& key)
{
    const auto* e = r.find("sweep", key);
    const auto colon = e->value.find(':');
    if (colon == std::string::npos) throw r.doc().error(e->line, "sweep." + key + ": expected 'axis: v1, v2, ...'");
    SweepAxis axis;
    const auto name = IniDocument::trim(std::string_view(e->value).substr(0, colon));
    if (name == "batch_size") axis.kind = SweepAxisKind::batch_size;
    else if (name == "fraction") axis.kind = SweepAxisKind::fraction;
    else if (name == "scheme") axis.kind = SweepAxisKind::scheme;
    else throw r.doc().error(e->line, "sweep." + key + ": unknown axis '" + std::string(name) + "'");
    axis.values = ConfigReader::split_list(std::string_view(e->value).substr(colon + 1));
    if (axis.values.empty()) throw r.doc().error(e->line, "sweep." + key + ": no values");
    return axis;
}

} // namespace detail

/// Parses an experiment description; `base_dir` anchors relative dataset
/// paths. The output path stays relative to the working directory.
inline ExperimentConfig parse_config(const IniDocument& doc, const std::filesystem::path& base_dir = {})
{
    detail::ConfigReader r(doc);
    for (const auto& name : doc.section_names()) {
        static const std::vector<std::string> known{"experiment", "dataset", "model", "optimizer",
                                                    "schedule", "sweep", "baseline"};
        if (std::find(known.begin(), known.end(), name) == known.end()) {
            throw ConfigError(doc.source() + ": unknown section [" + name + "]");
        }
    }
    ExperimentConfig c;
    r.check_known("experiment", {"epochs", "trials", "seed", "fraction", "output", "record_wall_clock"});
    r.read("experiment", "epochs", c.epochs);
    r.read("experiment", "trials", c.trials);
    r.read("experiment", "seed", c.seed);
    r.read("experiment", "fraction", c.fraction);
    r.read("experiment", "output", c.output);
    r.read("experiment", "record_wall_clock", c.record_wall_clock);

    auto& d = c.dataset;
    r.check_known("dataset", {"kind", "n", "classes", "dim", "separation", "validation_n", "train_images",
                              "train_labels", "validation_images", "validation_labels", "train_csv",
                              "validation_csv", "holdout", "normalize"});
    d.kind = r.choose("dataset", "kind", d.kind,
                      {{"blobs", DatasetKind::blobs}, {"idx", DatasetKind::idx}, {"csv", DatasetKind::csv}});
    r.read("dataset", "n", d.n);
    r.read("dataset", "classes", d.classes);
    r.read("dataset", "dim", d.dim);
    r.read("dataset", "separation", d.separation);
    r.read("dataset", "validation_n", d.validation_n);
    r.read("dataset", "holdout", d.holdout);
    r.read("dataset", "normalize", d.normalize);
    for (auto [key, field] : {std::pair{"train_images", &d.train_images}, {"train_labels", &d.train_labels},
                              {"validation_images", &d.validation_images},
                              {"validation_labels", &d.validation_labels}, {"train_csv", &d.train_csv},
                              {"validation_csv", &d.validation_csv}}) {
        r.read("dataset", key, *field);
        if (!field->empty() && field->is_relative() && !base_dir.empty()) *field = base_dir / *field;
    }
    if (d.kind == DatasetKind::idx && (d.train_images.empty() || d.train_labels.empty())) {
        throw ConfigError(doc.source() + ": dataset.kind = idx needs train_images and train_labels");
    }
    if (d.kind == DatasetKind::csv && d.train_csv.empty()) {
        throw ConfigError(doc.source() + ": dataset.kind = csv needs train_csv");
    }

    auto& m = c.model;
    r.check_known("model", {"kind", "hidden", "batchnorm", "channels"});
    m.kind = r.choose("model", "kind", m.kind, {{"mlp", ModelKind::mlp}, {"cnn", ModelKind::cnn}});
    r.read("model", "hidden", m.hidden);
    r.read("model", "batchnorm", m.batchnorm);
    r.read("model", "channels", m.channels);

    detail::read_optimizer(r, "optimizer", c.optimizer);
    if (doc.has_section("baseline")) {
        OptimizerSpec b = c.optimizer;
        b.kind = OptimizerKind::sgd;
        detail::read_optimizer(r, "baseline", b);
        c.baseline = b;
    }

    auto& s = c.schedule;
    r.check_known("schedule", {"kind", "initial", "final", "steepness", "decay_power", "milestones"});
    s.scheme = r.choose("schedule", "kind", s.scheme,
                        {{"constant", LrScheme::constant},
                         {"exponential", LrScheme::exponential},
                         {"staircase", LrScheme::staircase},
                         {"sigmoid", LrScheme::sigmoid_anneal}});
    r.read("schedule", "initial", s.initial);
    r.read("schedule", "final", s.final);
    r.read("schedule", "steepness", s.steepness);
    r.read("schedule", "decay_power", s.decay_power);
    r.read("schedule", "milestones", s.milestones);

    r.check_known("sweep", {"rows", "columns"});
    if (r.find("sweep", "rows")) c.sweep_rows = detail::read_axis(r, "rows");
    if (r.find("sweep", "columns")) c.sweep_columns = detail::read_axis(r, "columns");

    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path)
{
    return parse_config(IniDocument::load(path), path.parent_path());
}

/// Canonical text of every field that affects results; hashed for provenance.
inline std::string canonical_text(const ExperimentConfig& c)
{
    using detail::format_double;
    std::ostringstream out;
    out << "[experiment]\n"
        << "epochs = " << c.epochs << "\n"
        << "trials = " << c.trials << "\n"
        << "seed = " << c.seed << "\n"
        << "fraction = " << format_double(c.fraction) << "\n"
        << "\n[dataset]\n"
        << "kind = " << to_string(c.dataset.kind) << "\n";
    if (c.dataset.kind == DatasetKind::blobs) {
        out << "n = " << c.dataset.n << "\n"
            << "classes = " << c.dataset.classes << "\n"
            << "dim = " << c.dataset.dim << "\n"
            << "separation = " << format_double(c.dataset.separation) << "\n"
            << "validation_n = " << c.dataset.validation_n << "\n";
    } else {
        // Paths are recorded by file name only so relocated data hashes alike.
        const auto name = [](const std::filesystem::path& p) { return p.filename().string(); };
        if (c.dataset.kind == DatasetKind::idx) {
            out << "train_images = " << name(c.dataset.train_images) << "\n"
                << "train_labels = " << name(c.dataset.train_labels) << "\n"
                << "validation_images = " << name(c.dataset.validation_images) << "\n"
                << "validation_labels = " << name(c.dataset.validation_labels) << "\n";
        } else {
            out << "train_csv = " << name(c.dataset.train_csv) << "\n"
                << "validation_csv = " << name(c.dataset.validation_csv) << "\n";
        }
        out << "holdout = " << format_double(c.dataset.holdout) << "\n";
    }
    out << "normalize = " << (c.dataset.normalized() ? "true" : "false") << "\n"
        << "\n[model]\n"
        << "kind = " << to_string(c.model.kind) << "\n";
    if (c.model.kind == ModelKind::mlp) {
        out << "hidden = " << detail::join(c.model.hidden) << "\n"
            << "batchnorm = " << (c.model.batchnorm ? "true" : "false") << "\n";
    } else {
        out << "channels = " << detail::join(c.model.channels) << "\n";
    }
    out << "\n[optimizer]\n";
    detail::write_optimizer(out, c.optimizer);
    out << "\n[schedule]\n"
        << "kind = " << to_string(c.schedule.scheme) << "\n"
        << "initial = " << format_double(c.schedule.initial) << "\n"
        << "final = " << format_double(c.schedule.final) << "\n"
        << "steepness = " << format_double(c.schedule.steepness) << "\n"
        << "decay_power = " << format_double(c.schedule.decay_power) << "\n"
        << "milestones = " << detail::join(c.schedule.milestones) << "\n";
    if (c.baseline) {
        out << "\n[baseline]\n";
        detail::write_optimizer(out, *c.baseline);
    }
    if (c.sweep_rows || c.sweep_columns) {
        out << "\n[sweep]\n";
        if (c.sweep_rows) out << "rows = " << to_string(c.sweep_rows->kind) << ": " << detail::join(c.sweep_rows->values) << "\n";
        if (c.sweep_columns) out << "columns = " << to_string(c.sweep_columns->kind) << ": " << detail::join(c.sweep_columns->values) << "\n";
    }
    return out.str();
}

/// 64-bit FNV-1a of canonical_text(), as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canonical_text(c)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace sbs
