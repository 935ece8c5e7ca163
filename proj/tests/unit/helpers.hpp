#pragma once
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <sbs/autodiff.hpp>
#include <sbs/random.hpp>
#include <sbs/tensor.hpp>

namespace testing_support {

inline sbs::Tensor random_tensor(sbs::Shape shape, std::uint64_t seed, double scale = 1.0)
{
    sbs::SeedStream rng(seed);
    sbs::Tensor t(std::move(shape));
    for (auto& v : t.values()) v = scale * rng.normal();
    return t;
}

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double scale = 1.0)
{
    sbs::SeedStream rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

// Scratch directory under the build tree, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("sbs_unit_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace testing_support
