#pragma once
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>
#include <sbs/error.hpp>
#include <sbs/tensor.hpp>

namespace sbs {

enum class ParamType
{
    convolution,
    fully_connected,
    bias,
    batchnorm_scale,
    batchnorm_shift,
};

inline std::string_view to_string(ParamType t) noexcept
{
    switch (t) {
        case ParamType::convolution: return "convolution";
        case ParamType::fully_connected: return "fully_connected";
        case ParamType::bias: return "bias";
        case ParamType::batchnorm_scale: return "batchnorm_scale";
        case ParamType::batchnorm_shift: return "batchnorm_shift";
    }
    return "unknown";
}

/// Contiguous slice [offset, offset + length) of the flat parameter array
/// sharing one (layer, type) key. Layer indices start at 1.
struct ParameterGroup
{
    std::size_t layer = 1;
    ParamType type = ParamType::fully_connected;
    std::size_t offset = 0;
    std::size_t length = 0;
    Shape shape;

    std::string name() const
    {
        return "layer" + std::to_string(layer) + "/" + std::string(to_string(type));
    }
};

/// Flat parameter array plus its group partition. Every mutation through
/// mutable_values() bumps the revision so stale tapes can be detected.
class ParameterStore
{
public:
    ParameterStore() = default;

    ParameterStore(std::vector<ParameterGroup> groups)
        : groups_(std::move(groups))
    {
        std::size_t expected = 0;
        for (const auto& g : groups_) {
            if (g.offset != expected || g.length == 0) {
                throw PreconditionError("parameter groups must be non-empty and contiguous");
            }
            expected += g.length;
        }
        values_.assign(expected, 0.0);
    }

    std::size_t size() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    std::span<const ParameterGroup> groups() const noexcept { return groups_; }
    std::uint64_t revision() const noexcept { return revision_; }

    std::span<double> mutable_values() noexcept
    {
        ++revision_;
        return values_;
    }

    std::span<const double> group_values(std::size_t g) const
    {
        const auto& grp = groups_.at(g);
        return std::span<const double>(values_).subspan(grp.offset, grp.length);
    }

    void assign(std::span<const double> v)
    {
        if (v.size() != values_.size()) throw ShapeError("parameter assignment length mismatch");
        std::copy(v.begin(), v.end(), mutable_values().begin());
    }

private:
    std::vector<ParameterGroup> groups_;
    std::vector<double> values_;
    std::uint64_t revision_ = 0;
};

} // namespace sbs
