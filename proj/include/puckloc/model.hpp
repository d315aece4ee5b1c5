#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "puckloc/nn.hpp"
#include "puckloc/tensor.hpp"

namespace puckloc {

struct ClipTensor;

enum class ModelScale { kPaper, kToy };

struct RegBlockSpec {
    std::size_t in_channels = 128;
    std::size_t out_channels = 32;
    std::size_t temporal_kernel = 4;
    std::size_t temporal_stride = 4;
};

struct ModelConfig {
    ModelScale scale = ModelScale::kPaper;
    std::size_t frames = 16;
    std::size_t frame_size = 256;
    int heatmap_width = 64;
    int heatmap_height = 64;
    std::size_t stem_width = 64;
    std::size_t stage2_width = 64;
    std::size_t stage3_width = 128;
    /// Intermediate width of the stem's factorized conv; 0 selects the
    /// parameter-matching rule.
    std::size_t stem_mid = 45;
    std::size_t frozen_prefix = 5;
    RegBlockSpec regblock_a{128, 32, 4, 4};
    RegBlockSpec regblock_b{32, 1, 2, 2};

    /// Truncated R(2+1)D-18 at 16 x 256 x 256 with a 64 x 64 heatmap.
    static ModelConfig paper();
    /// Same topology at T=8, S=64, widths 8/8/16 and a 16 x 16 heatmap.
    static ModelConfig toy();
};

std::string to_string(ModelScale s);
ModelScale parse_model_scale(const std::string& s);

/// Spatial d x d conv into M channels, BN, ReLU, then a temporal t x 1 x 1 conv.
struct FactorizedConvSpec {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t spatial_kernel = 3;
    std::size_t temporal_kernel = 3;
    std::size_t mid_channels = 0;
    std::size_t spatial_stride = 1;
    std::size_t temporal_stride = 1;

    std::size_t parameter_count() const;
    std::size_t full_kernel_parameter_count() const;
};

/// floor(t d^2 Nin Nout / (d^2 Nin + t Nout)): keeps the factorized pair at or
/// under the parameter budget of the full t x d x d kernel.
std::size_t matched_mid_channels(std::size_t in_channels, std::size_t out_channels, std::size_t spatial_kernel = 3,
                                 std::size_t temporal_kernel = 3);

/// One entry of the forward shape chain, in T x C x H x W order.
struct ShapeRecord {
    std::string stage;
    Shape shape;
};

enum class Mode { kTrain, kEval };

struct PretrainedReport {
    std::vector<std::string> matched;
    std::vector<std::string> unmatched;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// On-disk container for named tensors plus JSON metadata and a step counter.
struct Archive {
    std::string metadata;
    std::uint64_t step = 0;
    std::vector<NamedTensor> tensors;

    const Tensor* find(const std::string& name) const;
};

std::string encode_archive(const Archive& a);
Archive decode_archive(const std::string& bytes);
void write_archive(const std::filesystem::path& path, const Archive& a);
Archive read_archive(const std::filesystem::path& path);

namespace detail {

class FactorizedConv {
public:
    FactorizedConv() = default;
    FactorizedConv(const std::string& prefix, const FactorizedConvSpec& spec, std::size_t spatial_padding);

    Shape output_shape(const Shape& in) const;
    Tensor forward(const Tensor& x, const nn::Pass& pass);
    Tensor backward(const Tensor& dy, bool need_input_grad);
    void collect(nn::StateRefs& refs);
    void set_frozen(bool frozen);
    bool trainable() const;
    void init(std::mt19937_64& rng);

    const FactorizedConvSpec& spec() const noexcept { return spec_; }

private:
    FactorizedConvSpec spec_;
    nn::Conv3d spatial_;
    nn::BatchNorm3d mid_bn_;
    nn::ReLU relu_;
    nn::Conv3d temporal_;
};

class Stem {
public:
    Stem() = default;
    explicit Stem(const FactorizedConvSpec& spec);

    Shape output_shape(const Shape& in) const;
    Tensor forward(const Tensor& x, const nn::Pass& pass);
    Tensor backward(const Tensor& dy, bool need_input_grad);
    void collect(nn::StateRefs& refs);
    void set_frozen(bool frozen);
    bool trainable() const;
    void init(std::mt19937_64& rng);

private:
    FactorizedConv conv_;
    nn::BatchNorm3d bn_;
    nn::ReLU relu_;
};

class BasicBlock {
public:
    BasicBlock() = default;
    BasicBlock(const std::string& prefix, std::size_t in_channels, std::size_t out_channels, std::size_t stride);

    Shape output_shape(const Shape& in) const;
    Tensor forward(const Tensor& x, const nn::Pass& pass);
    Tensor backward(const Tensor& dy, bool need_input_grad);
    void collect(nn::StateRefs& refs);
    /// Freezes conv1 (with the shortcut) and/or conv2 with their norms.
    void set_frozen(bool conv1, bool conv2);
    bool trainable() const;
    void init(std::mt19937_64& rng);

private:
    FactorizedConv conv1_;
    nn::BatchNorm3d bn1_;
    nn::ReLU relu1_;
    FactorizedConv conv2_;
    nn::BatchNorm3d bn2_;
    bool has_downsample_ = false;
    nn::Conv3d down_conv_;
    nn::BatchNorm3d down_bn_;
    nn::ReLU out_relu_;
};

class RegBlock {
public:
    RegBlock() = default;
    RegBlock(const std::string& prefix, const RegBlockSpec& spec);

    Shape output_shape(const Shape& in) const;
    Tensor forward(const Tensor& x, const nn::Pass& pass);
    Tensor backward(const Tensor& dy, bool need_input_grad);
    void collect(nn::StateRefs& refs);
    void init(std::mt19937_64& rng);

private:
    nn::Conv3d conv_;
    nn::BatchNorm3d bn_;
    nn::ReLU relu_;
};

}  // namespace detail

/// Truncated (2+1)D residual feature extractor followed by two temporal
/// regression blocks that collapse the features into one heatmap per clip.
///
/// Inputs are N x 3 x T x S x S; outputs are N x H x W heatmaps.
class Model {
public:
    /// Builds and initializes the network. Throws ShapeError naming the
    /// offending layer if the configured shapes do not chain.
    Model(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return cfg_; }

    /// Shape chain derived at build time (per sample, T x C x H x W).
    const std::vector<ShapeRecord>& planned_shapes() const noexcept { return planned_; }
    /// Shapes observed during the most recent forward pass.
    const std::vector<ShapeRecord>& observed_shapes() const noexcept { return observed_; }

    Tensor forward(const Tensor& batch, Mode mode);
    Tensor forward(std::span<const ClipTensor> clips, Mode mode);

    /// Backpropagates dL/d(heatmaps) from the last kTrain forward into the
    /// gradients of every trainable parameter.
    void backward(const Tensor& grad_heatmaps);
    void zero_grad();

    /// Number of factorized conv layers in the extractor (stem counted first).
    static constexpr std::size_t kExtractorDepth = 9;
    void freeze_prefix(std::size_t n_layers);
    std::size_t frozen_prefix() const noexcept { return frozen_; }

    /// Make every BN layer use running statistics in training passes.
    void set_bn_running_stats(bool on);

    /// While on, training passes reuse the ReLU masks of the last unheld
    /// training pass, so the output is smooth in the parameters. For
    /// finite-difference gradient checks.
    void hold_activation_masks(bool on) noexcept { hold_masks_ = on; }

    nn::StateRefs state();
    std::vector<nn::Parameter*> trainable_parameters();

    Archive export_state() const;
    /// Loads every tensor of the model from the archive (all names required).
    void import_state(const Archive& a);

private:
    void apply_freeze();

    ModelConfig cfg_;
    detail::Stem stem_;
    detail::BasicBlock stage2_[2];
    detail::BasicBlock stage3_[2];
    detail::RegBlock reg_a_;
    detail::RegBlock reg_b_;

    std::size_t frozen_ = 0;
    bool bn_running_stats_ = false;
    bool hold_masks_ = false;
    std::size_t first_active_ = 0;
    bool has_cache_ = false;
    std::vector<ShapeRecord> planned_;
    std::vector<ShapeRecord> observed_;
};

/// Loads matching extractor weights; regression blocks are never loaded.
PretrainedReport load_pretrained(Model& model, const std::filesystem::path& archive_path);
PretrainedReport load_pretrained(Model& model, const Archive& archive);

/// Concatenates clips into an N x 3 x T x S x S batch.
Tensor stack_clips(std::span<const ClipTensor> clips);

/// FNV-1a over the raw bytes of a tensor, for freeze/determinism checks.
std::uint64_t checksum(const Tensor& t);

}  // namespace puckloc
