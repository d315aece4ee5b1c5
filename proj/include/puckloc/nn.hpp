#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "puckloc/tensor.hpp"

// Minimal layer set for 5-D video tensors (N x C x T x H x W) with manual
// backpropagation. Layers cache what their backward pass needs only when asked
// to, so inference at full resolution does not hold every activation.
namespace puckloc::nn {

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    void zero_grad() { grad.fill(0.0); }
};

/// Non-trainable state saved alongside parameters (BN running statistics).
struct Buffer {
    std::string name;
    Tensor* tensor;
};

class BatchNorm3d;

struct StateRefs {
    std::vector<Parameter*> params;
    std::vector<Buffer> buffers;
    std::vector<BatchNorm3d*> norms;
};

struct Pass {
    bool training = false;
    bool cache = false;
    /// ReLUs gate with the mask cached by the previous pass instead of the sign
    /// of the current input. Used to difference the network within one linear
    /// region of its activations.
    bool hold_masks = false;
};

struct Triple {
    std::size_t t = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    friend bool operator==(const Triple&, const Triple&) = default;
};

struct ConvGeometry {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    Triple kernel;
    Triple stride;
    Triple padding;
};

/// Output shape of a convolution over an N x C x T x H x W input.
/// Throws ShapeError naming `layer` when the input does not fit.
Shape conv_output_shape(const ConvGeometry& g, const Shape& input, const std::string& layer);

class Conv3d {
public:
    Conv3d() = default;
    Conv3d(std::string name, const ConvGeometry& g);

    const ConvGeometry& geometry() const noexcept { return geom_; }
    Parameter& weight() noexcept { return weight_; }
    const Parameter& weight() const noexcept { return weight_; }

    /// He-normal init, fan-out mode.
    void init(std::mt19937_64& rng);

    Tensor forward(const Tensor& x, const Pass& pass);
    /// Accumulates into weight().grad when trainable. Returns dL/dx when
    /// need_input_grad is set, otherwise an empty tensor.
    Tensor backward(const Tensor& dy, bool need_input_grad);

    void collect(StateRefs& refs) { refs.params.push_back(&weight_); }

private:
    ConvGeometry geom_;
    Parameter weight_;
    Tensor input_;
};

class BatchNorm3d {
public:
    BatchNorm3d() = default;
    BatchNorm3d(std::string name, std::size_t channels, double momentum = 0.1, double eps = 1e-5);

    Parameter& gamma() noexcept { return gamma_; }
    Parameter& beta() noexcept { return beta_; }
    Tensor& running_mean() noexcept { return running_mean_; }
    Tensor& running_var() noexcept { return running_var_; }

    /// Use running statistics even in training passes (frozen layers).
    void set_use_running_stats(bool on) noexcept { use_running_stats_ = on; }
    bool use_running_stats() const noexcept { return use_running_stats_; }

    Tensor forward(const Tensor& x, const Pass& pass);
    Tensor backward(const Tensor& dy, bool need_input_grad);

    void collect(StateRefs& refs);

private:
    std::string name_;
    double momentum_ = 0.1;
    double eps_ = 1e-5;
    bool use_running_stats_ = false;
    Parameter gamma_;
    Parameter beta_;
    Tensor running_mean_;
    Tensor running_var_;

    // backward cache
    Tensor x_hat_;
    std::vector<double> inv_std_;
    bool batch_stats_used_ = false;
};

class ReLU {
public:
    Tensor forward(const Tensor& x, const Pass& pass);
    Tensor backward(const Tensor& dy) const;

private:
    std::vector<unsigned char> mask_;
};

}  // namespace puckloc::nn
