#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "puckloc/data_pipeline.hpp"
#include "puckloc/model.hpp"
#include "puckloc/rink_geometry.hpp"
#include "puckloc/synthetic_rink.hpp"
#include "puckloc/training.hpp"

namespace puckloc {

struct PathsConfig {
    /// Dataset directory written by synth-gen (events.csv, manifest.csv, clips/).
    std::filesystem::path data_dir = "data";
    /// Overrides for the events and manifest files; default to data_dir.
    std::filesystem::path events;
    std::filesystem::path manifest;
    std::filesystem::path run_dir = "runs/default";
    /// Optional archive of extractor weights loaded before training.
    std::filesystem::path pretrained;

    std::filesystem::path events_path() const { return events.empty() ? data_dir / "events.csv" : events; }
    std::filesystem::path manifest_path() const { return manifest.empty() ? data_dir / "manifest.csv" : manifest; }
};

enum class SplitMode { kFractions, kAll };

struct SplitConfig {
    /// kAll uses every clip for train, validation and test (memorization runs).
    SplitMode mode = SplitMode::kFractions;
    SplitFractions fractions;
};

struct ZonePartitionConfig {
    std::vector<double> cuts;
    std::vector<std::string> labels;
    ZonePartition build() const { return ZonePartition(cuts, labels); }
};

struct ZonesConfig {
    ZonePartitionConfig three{ZonePartition::three_zone().cut_xs(), ZonePartition::three_zone().labels()};
    ZonePartitionConfig five{ZonePartition::five_zone().cut_xs(), ZonePartition::five_zone().labels()};
};

struct GridConfig {
    std::vector<double> sigmas{10.0, 15.0, 20.0, 25.0, 30.0};
    std::vector<SamplingMode> modes{SamplingMode::kRandomUniform};
};

/// Everything one run needs. A single top-level seed is fanned out to the
/// model, training, split and scenario streams.
struct RunConfig {
    std::uint64_t seed = 0;
    PathsConfig paths;
    ModelConfig model = ModelConfig::toy();
    TrainConfig train = [] {
        TrainConfig t;
        t.sampling.count = ModelConfig::toy().frames;
        return t;
    }();
    ScenarioConfig scenario;
    std::size_t synth_clips = 20;
    SplitConfig split;
    ZonesConfig zones;
    Normalization normalization;
    GridConfig grid;

    std::uint64_t model_seed() const;
    std::uint64_t split_seed() const;
};

/// Derives the per-module seeds from `seed` (train.seed, scenario.rng_seed).
void fan_out_seed(RunConfig& cfg);

/// Strict parse: unknown keys and wrongly typed values throw ConfigError
/// naming the dotted key path. Missing keys keep their defaults.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);
void validate(const RunConfig& cfg);

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void to_json(nlohmann::json& j, const TrainConfig& cfg);
void to_json(nlohmann::json& j, const ScenarioConfig& cfg);
ModelConfig parse_model_config(const nlohmann::json& j, const std::string& where = "model");
TrainConfig parse_train_config(const nlohmann::json& j, const std::string& where = "train");
ScenarioConfig parse_scenario_config(const nlohmann::json& j, const std::string& where = "scenario");

}  // namespace puckloc
