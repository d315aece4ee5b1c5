#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <random>
#include <string>

#include "puckloc/synthetic_rink.hpp"
#include "puckloc/training.hpp"

namespace puckloc::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("puckloc_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

/// Small synthetic scenario at the toy model's resolution.
inline ScenarioConfig toy_scenario(std::uint64_t seed) {
    ScenarioConfig c;
    c.frame_size = 64;
    c.rng_seed = seed;
    return c;
}

/// In-memory dataset of n generated clips, located like generate_dataset() places them.
inline ClipDataset synthetic_dataset(std::size_t n, std::uint64_t seed, std::size_t frame_size = 64) {
    ClipDataset ds;
    for (std::size_t i = 0; i < n; ++i) {
        ScenarioConfig c = toy_scenario(clip_seed(seed, i));
        c.frame_size = frame_size;
        c.puck.location = dataset_location(seed, i);
        c.puck.randomize_location = false;
        GeneratedClip clip = generate_clip(c);
        ds.add({"clip_" + std::to_string(i), clip.truth, std::make_shared<InMemoryClip>(std::move(clip.frames))});
    }
    return ds;
}

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(shape);
    for (auto& v : t.values()) v = u(rng);
    return t;
}

}  // namespace puckloc::testing
