#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "puckloc/data_pipeline.hpp"
#include "puckloc/evaluation.hpp"
#include "puckloc/heatmap_codec.hpp"
#include "puckloc/model.hpp"

namespace puckloc {

struct TrainConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 10;
    std::size_t max_epochs = 100;
    /// Epochs without a validation AUC improvement before stopping; 0 disables.
    std::size_t patience = 10;
    double sigma = 25.0;
    SigmaUnit sigma_unit = SigmaUnit::kCells;
    bool normalize_target = false;
    SamplingPolicy sampling;
    std::size_t frozen_prefix = 5;
    std::uint64_t seed = 0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    /// Use BN running statistics everywhere (no statistic updates).
    bool freeze_bn_stats = false;
    bool shuffle = true;
};

void validate(const TrainConfig& cfg);

/// Mean over batch, rows and columns of squared differences.
double mse_heatmap_loss(std::span<const Heatmap> pred, std::span<const Heatmap> target);
/// Tensor form over N x H x W; writes dL/dpred into `grad` when given.
double mse_heatmap_loss(const Tensor& pred, const Tensor& target, Tensor* grad = nullptr);

struct ClipSample {
    std::string clip_id;
    RinkPoint truth;
    std::shared_ptr<const FrameProvider> frames;
};

/// Clips held in memory, already resized to the model's frame size.
class ClipDataset {
public:
    ClipDataset() = default;

    /// Loads the records whose clip_id is in `ids` (all records when ids is empty).
    static ClipDataset load(std::span<const EventRecord> records, const Manifest& manifest,
                            std::span<const std::string> ids, std::size_t frame_size);

    void add(ClipSample sample) { samples_.push_back(std::move(sample)); }
    std::size_t size() const noexcept { return samples_.size(); }
    bool empty() const noexcept { return samples_.empty(); }
    const ClipSample& operator[](std::size_t i) const { return samples_.at(i); }

private:
    std::vector<ClipSample> samples_;
};

TargetSpec target_spec(const TrainConfig& cfg, const ModelConfig& model);

struct Batch {
    Tensor inputs;   // N x 3 x T x S x S
    Tensor targets;  // N x H x W
    std::vector<std::string> clip_ids;
};

/// Frame-sampling seed for one clip in one epoch.
std::uint64_t sampling_seed(std::uint64_t seed, std::size_t epoch, std::size_t clip_index);
/// Fixed per-clip sampling seed used for evaluation.
std::uint64_t eval_sampling_seed(std::uint64_t seed, const std::string& clip_id);

Batch make_batch(const ClipDataset& data, std::span<const std::size_t> indices, std::span<const SamplingPolicy> policies,
                 const Normalization& norm, const ModelConfig& model, const TargetSpec& target);

class Adam {
public:
    Adam(std::vector<nn::Parameter*> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step();
    std::uint64_t steps() const noexcept { return t_; }
    double learning_rate() const noexcept { return lr_; }

    /// Moments are stored as adam.m.<param> and adam.v.<param>.
    void export_to(Archive& a) const;
    void import_from(const Archive& a);

private:
    std::vector<nn::Parameter*> params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    std::uint64_t t_ = 0;
};

/// One optimizer at a time over a model; used by train() and for step-level tests.
class Trainer {
public:
    Trainer(Model& model, const TrainConfig& cfg);

    /// Forward, MSE loss, backward and one Adam update. Returns the batch loss.
    /// Throws DivergenceError without updating when the loss is not finite.
    double step(const Tensor& inputs, const Tensor& targets, std::size_t epoch = 0, std::size_t batch_index = 0);

    Model& model() noexcept { return model_; }
    Adam& optimizer() noexcept { return adam_; }

private:
    Model& model_;
    TrainConfig cfg_;
    Adam adam_;
};

struct HistoryRow {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    AucSummary val_auc;
};

void write_history(const std::filesystem::path& path, std::span<const HistoryRow> rows);
std::vector<HistoryRow> read_history(const std::filesystem::path& path);

struct TrainOptions {
    /// Where history.csv and the checkpoints go; nothing is written when empty.
    std::optional<std::filesystem::path> run_dir;
    /// Continue from run_dir/checkpoint_last.bin.
    bool resume = false;
    /// JSON copy of the full run configuration, stored in every checkpoint.
    std::string config_echo = "{}";
    Normalization normalization;
    /// Stop after this epoch even if max_epochs is larger (0 = no limit).
    std::size_t stop_after_epoch = 0;
    std::function<void(const HistoryRow&)> on_epoch;
};

struct TrainResult {
    std::vector<HistoryRow> history;
    std::size_t best_epoch = 0;
    double best_val_auc = -1.0;
    std::filesystem::path best_checkpoint;
    std::filesystem::path last_checkpoint;
    bool early_stopped = false;
    std::uint64_t steps = 0;
};

TrainResult train(Model& model, const ClipDataset& train_set, const ClipDataset& val_set, const TrainConfig& cfg,
                  const TrainOptions& opts = {});

/// Checkpoint archive for the model plus training metadata.
Archive make_checkpoint(const Model& model, const std::string& metadata);

/// Loads a checkpoint written by train(): rebuilds the model from the stored
/// configuration and restores every tensor.
struct LoadedModel {
    std::unique_ptr<Model> model;
    std::string metadata;
    TrainConfig train;
    Normalization normalization;
};
LoadedModel load_checkpoint(const std::filesystem::path& path);

/// Argmax-decoded predictions in eval mode, one per clip.
std::vector<PredictionPair> predict_dataset(Model& model, const ClipDataset& data, const SamplingPolicy& policy,
                                            const Normalization& norm, std::size_t batch_size = 10);

struct ClipPrediction {
    RinkDecodeResult decoded;
    Heatmap heatmap;
};

ClipPrediction predict_clip(Model& model, const FrameProvider& clip, const SamplingPolicy& policy,
                            const Normalization& norm);

struct GridRow {
    double sigma = 0.0;
    SamplingMode mode = SamplingMode::kRandomUniform;
    std::optional<AucSummary> auc;
    std::string error;
};

struct GridOptions {
    std::optional<std::filesystem::path> out_dir;
    std::string config_echo = "{}";
    Normalization normalization;
    /// Every grid row starts from the same initialization.
    std::uint64_t model_seed = 0;
};

/// Trains one fresh model per (sigma, mode) and evaluates it on `test_set`.
/// A failing run is recorded in its row and the grid continues.
std::vector<GridRow> run_experiment_grid(const ModelConfig& model_cfg, const TrainConfig& base,
                                         std::span<const double> sigmas, std::span<const SamplingMode> modes,
                                         const ClipDataset& train_set, const ClipDataset& val_set,
                                         const ClipDataset& test_set, const GridOptions& opts = {});

/// Columns: sampling,sigma,auc_overall,auc_x,auc_y,status.
void write_grid_csv(const std::filesystem::path& path, std::span<const GridRow> rows);

}  // namespace puckloc
