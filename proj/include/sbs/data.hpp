#pragma once
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>
#include <sbs/error.hpp>
#include <sbs/random.hpp>
#include <sbs/tensor.hpp>

namespace sbs {

struct Batch
{
    Tensor inputs;
    std::vector<int> labels;
};

/// Labelled examples; inputs has shape (n, ...).
struct Dataset
{
    Tensor inputs;
    std::vector<int> labels;
    std::size_t class_count = 0;

    std::size_t size() const noexcept { return labels.size(); }

    Shape sample_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }

    void validate() const
    {
        if (labels.empty()) throw PreconditionError("dataset must hold at least one example");
        if (inputs.rank() < 2 || inputs.dim(0) != labels.size()) {
            throw ShapeError("dataset inputs " + shape_string(inputs.shape()) + " do not match "
                             + std::to_string(labels.size()) + " labels");
        }
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count) {
                throw PreconditionError("label " + std::to_string(labels[i]) + " of example " + std::to_string(i)
                                        + " outside [0, " + std::to_string(class_count) + ")");
            }
        }
    }

    Batch gather(std::span<const std::size_t> indices) const
    {
        if (indices.empty()) throw PreconditionError("cannot gather an empty batch");
        const std::size_t row = inputs.row_size();
        Shape shape = inputs.shape();
        shape[0] = indices.size();
        std::vector<double> values;
        values.reserve(indices.size() * row);
        std::vector<int> lab;
        lab.reserve(indices.size());
        for (auto i : indices) {
            if (i >= size()) throw PreconditionError("example index " + std::to_string(i) + " out of range");
            const double* src = inputs.data() + i * row;
            values.insert(values.end(), src, src + row);
            lab.push_back(labels[i]);
        }
        return {Tensor(std::move(shape), std::move(values)), std::move(lab)};
    }

    Dataset subset(std::span<const std::size_t> indices) const
    {
        auto b = gather(indices);
        return Dataset{std::move(b.inputs), std::move(b.labels), class_count};
    }
};

/*
 * Gaussian clusters with unit variance per coordinate. Class means are placed
 * so that `separation` is the distance between neighbouring means: along the
 * axes (scaled by separation / sqrt 2) when class_count <= dim, otherwise on a
 * circle in the first two coordinates (or a line when dim == 1). Labels cycle
 * through the classes before shuffling, so proportions are equal up to one.
 */
inline Dataset make_blobs(std::size_t n, std::size_t class_count, std::size_t dim, double separation,
                          std::uint64_t seed)
{
    if (class_count < 2) throw PreconditionError("make_blobs needs at least two classes");
    if (n < class_count) throw PreconditionError("make_blobs needs n >= class count");
    if (dim == 0) throw PreconditionError("make_blobs needs a positive dimension");
    if (!(separation > 0.0)) throw PreconditionError("make_blobs needs a positive separation");

    std::vector<std::vector<double>> centers(class_count, std::vector<double>(dim, 0.0));
    for (std::size_t c = 0; c < class_count; ++c) {
        if (class_count <= dim) {
            centers[c][c] = separation / std::numbers::sqrt2;
        } else if (dim == 1) {
            centers[c][0] = separation * static_cast<double>(c);
        } else {
            const double radius = separation / (2.0 * std::sin(std::numbers::pi / static_cast<double>(class_count)));
            const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(class_count);
            centers[c][0] = radius * std::cos(angle);
            centers[c][1] = radius * std::sin(angle);
        }
    }

    SeedStream rng(seed);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % class_count);
    rng.shuffle(std::span<int>(labels));

    std::vector<double> values(n * dim);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < dim; ++d)
            values[i * dim + d] = centers[static_cast<std::size_t>(labels[i])][d] + rng.normal();

    Dataset ds{Tensor({n, dim}, std::move(values)), std::move(labels), class_count};
    return ds;
}

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline std::uint32_t read_be32(std::span<const unsigned char> b, std::size_t off)
{
    return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) | (std::uint32_t(b[off + 2]) << 8)
           | std::uint32_t(b[off + 3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v)
{
    const char bytes[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    out.write(bytes, 4);
}

struct IdxFile
{
    std::vector<std::uint32_t> dims;
    std::vector<unsigned char> bytes;
    std::size_t data_offset = 0;
};

inline IdxFile read_idx(const std::filesystem::path& path, std::uint32_t expected_magic)
{
    IdxFile f;
    f.bytes = read_file(path);
    const std::string name = "'" + path.string() + "'";
    if (f.bytes.size() < 4) {
        throw FormatError("truncated IDX file " + name + ": header needs 4 bytes, file has "
                          + std::to_string(f.bytes.size()));
    }
    const std::uint32_t magic = read_be32(f.bytes, 0);
    if (magic != expected_magic) {
        std::ostringstream msg;
        msg << "bad IDX magic number in " << name << ": expected 0x" << std::hex << expected_magic << ", found 0x"
            << magic;
        throw FormatError(msg.str());
    }
    const std::size_t ndims = magic & 0xff;
    f.data_offset = 4 + 4 * ndims;
    if (f.bytes.size() < f.data_offset) {
        throw FormatError("truncated IDX file " + name + ": header needs " + std::to_string(f.data_offset)
                          + " bytes, file has " + std::to_string(f.bytes.size()));
    }
    std::size_t total = 1;
    for (std::size_t d = 0; d < ndims; ++d) {
        f.dims.push_back(read_be32(f.bytes, 4 + 4 * d));
        if (f.dims.back() == 0) throw FormatError("IDX file " + name + " has a zero extent");
        total *= f.dims.back();
    }
    if (f.bytes.size() < f.data_offset + total) {
        throw FormatError("truncated IDX file " + name + ": data spans bytes [" + std::to_string(f.data_offset)
                          + ", " + std::to_string(f.data_offset + total) + ") but the file ends at byte "
                          + std::to_string(f.bytes.size()));
    }
    return f;
}

} // namespace detail

inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;

/// MNIST-style unsigned-byte IDX pair; pixels are scaled to [0, 1] and the
/// result has shape (n, 1, rows, cols).
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path)
{
    const auto img = detail::read_idx(images_path, idx_images_magic);
    const auto lab = detail::read_idx(labels_path, idx_labels_magic);
    const std::size_t n = img.dims[0];
    if (lab.dims[0] != n) {
        throw FormatError("IDX count mismatch: " + std::to_string(n) + " images but " + std::to_string(lab.dims[0])
                          + " labels");
    }
    const std::size_t rows = img.dims[1], cols = img.dims[2];
    std::vector<double> values(n * rows * cols);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = img.bytes[img.data_offset + i] / 255.0;
    std::vector<int> labels(n);
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = lab.bytes[lab.data_offset + i];
        max_label = std::max(max_label, labels[i]);
    }
    Dataset ds{Tensor({n, 1, rows, cols}, std::move(values)), std::move(labels),
               static_cast<std::size_t>(std::max(max_label + 1, 2))};
    return ds;
}

/// Writes an unsigned-byte IDX image file (n, rows, cols).
inline void write_idx_images(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                             std::span<const unsigned char> pixels)
{
    if (rows == 0 || cols == 0 || pixels.size() % (rows * cols)) throw PreconditionError("bad IDX image extents");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    detail::write_be32(out, idx_images_magic);
    detail::write_be32(out, static_cast<std::uint32_t>(pixels.size() / (rows * cols)));
    detail::write_be32(out, static_cast<std::uint32_t>(rows));
    detail::write_be32(out, static_cast<std::uint32_t>(cols));
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

inline void write_idx_labels(const std::filesystem::path& path, std::span<const unsigned char> labels)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    detail::write_be32(out, idx_labels_magic);
    detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

/// CSV with header `label,feature_0,...,feature_{d-1}`; inputs have shape (n, d).
inline Dataset load_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    const std::string where = path.string() + ":";
    std::string line;
    if (!std::getline(in, line)) throw FormatError(where + "1: missing header row");
    std::vector<std::string_view> cols;
    const auto split = [&cols](std::string_view s) {
        cols.clear();
        if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
        std::size_t start = 0;
        while (true) {
            const auto comma = s.find(',', start);
            cols.push_back(s.substr(start, comma - start));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
    };
    split(line);
    if (cols.size() < 2 || cols[0] != "label") throw FormatError(where + "1: header must start with 'label'");
    for (std::size_t d = 1; d < cols.size(); ++d) {
        if (cols[d] != "feature_" + std::to_string(d - 1)) {
            throw FormatError(where + "1: expected column 'feature_" + std::to_string(d - 1) + "', found '"
                              + std::string(cols[d]) + "'");
        }
    }
    const std::size_t dim = cols.size() - 1;
    std::vector<double> values;
    std::vector<int> labels;
    int max_label = 0;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        split(line);
        if (cols.size() != dim + 1) {
            throw FormatError(where + std::to_string(lineno) + ": expected " + std::to_string(dim + 1)
                              + " fields, found " + std::to_string(cols.size()));
        }
        int label = 0;
        auto [p, ec] = std::from_chars(cols[0].data(), cols[0].data() + cols[0].size(), label);
        if (ec != std::errc() || p != cols[0].data() + cols[0].size() || label < 0) {
            throw FormatError(where + std::to_string(lineno) + ": invalid label '" + std::string(cols[0]) + "'");
        }
        labels.push_back(label);
        max_label = std::max(max_label, label);
        for (std::size_t d = 1; d <= dim; ++d) {
            double v = 0.0;
            auto [q, ec2] = std::from_chars(cols[d].data(), cols[d].data() + cols[d].size(), v);
            if (ec2 != std::errc() || q != cols[d].data() + cols[d].size() || !std::isfinite(v)) {
                throw FormatError(where + std::to_string(lineno) + ": invalid value '" + std::string(cols[d])
                                  + "' in column feature_" + std::to_string(d - 1));
            }
            values.push_back(v);
        }
    }
    if (labels.empty()) throw FormatError(where + " no data rows");
    const std::size_t n = labels.size();
    Dataset ds{Tensor({n, dim}, std::move(values)), std::move(labels),
               static_cast<std::size_t>(std::max(max_label + 1, 2))};
    return ds;
}

/*
 * Stratified draw without replacement of floor(fraction * n) example ids.
 * Each class receives floor(fraction * n_c) examples, and the remaining
 * slots go to the classes with the largest fractional parts (ties to the
 * lower class id). Ids are returned in ascending order.
 */
inline std::vector<std::size_t> stratified_indices(const Dataset& ds, double fraction, SeedStream rng)
{
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw PreconditionError("subsample fraction must lie in (0, 1], got " + std::to_string(fraction));
    }
    const std::size_t n = ds.size();
    if (fraction == 1.0) {
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), 0);
        return all;
    }
    const auto total = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
    std::vector<std::vector<std::size_t>> by_class(ds.class_count);
    for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

    std::vector<std::size_t> quota(ds.class_count);
    std::vector<double> remainder(ds.class_count);
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < ds.class_count; ++c) {
        const double exact = fraction * static_cast<double>(by_class[c].size());
        quota[c] = static_cast<std::size_t>(std::floor(exact));
        remainder[c] = exact - static_cast<double>(quota[c]);
        assigned += quota[c];
    }
    std::vector<std::size_t> order(ds.class_count);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
    for (std::size_t k = 0; assigned < total && k < order.size(); ++k) {
        if (quota[order[k]] < by_class[order[k]].size()) {
            ++quota[order[k]];
            ++assigned;
        }
    }

    std::vector<std::size_t> chosen;
    for (std::size_t c = 0; c < ds.class_count; ++c) {
        if (by_class[c].empty()) continue;
        if (quota[c] == 0) {
            throw PreconditionError("subsample fraction " + std::to_string(fraction) + " leaves class "
                                    + std::to_string(c) + " with zero examples");
        }
        auto pool = by_class[c];
        rng.split(c).shuffle(std::span<std::size_t>(pool));
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(quota[c]));
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

/// Stratified subsample; fraction 1 returns the dataset unchanged.
inline Dataset subsample(const Dataset& ds, double fraction, SeedStream rng)
{
    if (fraction == 1.0) return ds;
    return ds.subset(stratified_indices(ds, fraction, rng));
}

inline Dataset subsample(const Dataset& ds, double fraction, std::uint64_t seed)
{
    return subsample(ds, fraction, SeedStream(seed));
}

/// Stratified (train, held-out) split with `holdout` of the examples held out.
inline std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double holdout, SeedStream rng)
{
    if (!(holdout > 0.0 && holdout < 1.0)) throw PreconditionError("holdout fraction must lie in (0, 1)");
    const auto held = stratified_indices(ds, holdout, rng);
    std::vector<std::size_t> kept;
    std::size_t h = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (h < held.size() && held[h] == i) ++h;
        else kept.push_back(i);
    }
    if (kept.empty()) throw PreconditionError("holdout leaves no training examples");
    return {ds.subset(kept), ds.subset(held)};
}

/// Shuffled partition of [0, n) into universal batches for one epoch.
struct BatchPlan
{
    std::uint64_t epoch = 0;
    std::size_t batch_size = 0;
    std::vector<std::vector<std::size_t>> batches;

    std::size_t batch_count() const noexcept { return batches.size(); }
};

/// Pure function of (n, batch_size, stream, epoch); the final batch may be short.
inline BatchPlan plan_epoch(std::size_t n, std::size_t batch_size, SeedStream stream, std::uint64_t epoch)
{
    if (batch_size == 0 || batch_size > n) {
        throw PreconditionError("batch size " + std::to_string(batch_size) + " must lie in [1, "
                                + std::to_string(n) + "]");
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    stream.split(epoch).shuffle(std::span<std::size_t>(perm));
    BatchPlan plan{epoch, batch_size, {}};
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        plan.batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                  perm.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return plan;
}

inline BatchPlan plan_epoch(std::size_t n, std::size_t batch_size, std::uint64_t base_seed, std::uint64_t epoch)
{
    return plan_epoch(n, batch_size, SeedStream(base_seed), epoch);
}

/// Per-channel standardization; a channel is axis 1 of the inputs (each
/// feature for (n, d) data). Fit on the training split only.
struct Normalizer
{
    std::vector<double> mean;
    std::vector<double> stddev;

    static Normalizer fit(const Dataset& ds)
    {
        const std::size_t n = ds.size(), c = ds.inputs.dim(1), inner = ds.inputs.size() / (n * c);
        Normalizer z{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
        const double count = static_cast<double>(n * inner);
        for (std::size_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t k = 0; k < inner; ++k) s += ds.inputs[(r * c + ch) * inner + k];
            const double m = s / count;
            double ss = 0.0;
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t k = 0; k < inner; ++k) {
                    const double d = ds.inputs[(r * c + ch) * inner + k] - m;
                    ss += d * d;
                }
            const double sd = std::sqrt(ss / count);
            z.mean[ch] = m;
            z.stddev[ch] = sd > 0.0 ? sd : 1.0;
        }
        return z;
    }

    void apply(Dataset& ds) const
    {
        const std::size_t n = ds.size(), c = ds.inputs.dim(1), inner = ds.inputs.size() / (n * c);
        if (c != mean.size()) throw ShapeError("normalizer channel count mismatch");
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t k = 0; k < inner; ++k) {
                    auto& v = ds.inputs[(r * c + ch) * inner + k];
                    v = (v - mean[ch]) / stddev[ch];
                }
    }
};

} // namespace sbs
