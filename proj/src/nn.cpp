#include "puckloc/nn.hpp"

#include <cmath>
#include <cstring>

#include <Eigen/Core>
#include <fmt/format.h>

#include "puckloc/errors.hpp"

namespace puckloc::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using Mapped = Eigen::Map<RowMat>;
using ConstMapped = Eigen::Map<const RowMat>;

struct Dims {
    std::size_t n, c, t, h, w;
};

Dims dims_of(const Shape& s) { return {s[0], s[1], s[2], s[3], s[4]}; }

void require_5d(const Tensor& x, const std::string& layer) {
    if (x.rank() != 5) {
        throw ShapeError(fmt::format("{}: expected a 5-D N x C x T x H x W tensor, got {}", layer,
                                     to_string(x.shape())));
    }
}

std::size_t out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p, bool& ok) {
    const std::size_t padded = in + 2 * p;
    ok = padded >= k && s > 0;
    return ok ? (padded - k) / s + 1 : 0;
}

// Gather the receptive fields for output frame `to` of sample `n` into a
// K x P matrix, K = Cin*kt*kh*kw and P = Ho*Wo.
void im2col(const Tensor& x, std::size_t n, std::size_t to, const ConvGeometry& g, const Dims& in,
            std::size_t ho_n, std::size_t wo_n, RowMat& col) {
    const auto& k = g.kernel;
    const auto& s = g.stride;
    const auto& p = g.padding;
    const std::size_t plane = in.h * in.w;
    col.setZero();
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < in.c; ++ci) {
        for (std::size_t dt = 0; dt < k.t; ++dt) {
            const long ti = static_cast<long>(to * s.t + dt) - static_cast<long>(p.t);
            for (std::size_t dh = 0; dh < k.h; ++dh) {
                for (std::size_t dw = 0; dw < k.w; ++dw, ++row) {
                    if (ti < 0 || ti >= static_cast<long>(in.t)) continue;
                    const double* src = x.data() + ((n * in.c + ci) * in.t + static_cast<std::size_t>(ti)) * plane;
                    double* dst = col.data() + row * ho_n * wo_n;
                    for (std::size_t ho = 0; ho < ho_n; ++ho) {
                        const long hi = static_cast<long>(ho * s.h + dh) - static_cast<long>(p.h);
                        if (hi < 0 || hi >= static_cast<long>(in.h)) continue;
                        const double* src_row = src + static_cast<std::size_t>(hi) * in.w;
                        double* dst_row = dst + ho * wo_n;
                        for (std::size_t wo = 0; wo < wo_n; ++wo) {
                            const long wi = static_cast<long>(wo * s.w + dw) - static_cast<long>(p.w);
                            if (wi >= 0 && wi < static_cast<long>(in.w)) dst_row[wo] = src_row[wi];
                        }
                    }
                }
            }
        }
    }
}

void col2im(const RowMat& col, std::size_t n, std::size_t to, const ConvGeometry& g, const Dims& in,
            std::size_t ho_n, std::size_t wo_n, Tensor& dx) {
    const auto& k = g.kernel;
    const auto& s = g.stride;
    const auto& p = g.padding;
    const std::size_t plane = in.h * in.w;
    std::size_t row = 0;
    for (std::size_t ci = 0; ci < in.c; ++ci) {
        for (std::size_t dt = 0; dt < k.t; ++dt) {
            const long ti = static_cast<long>(to * s.t + dt) - static_cast<long>(p.t);
            for (std::size_t dh = 0; dh < k.h; ++dh) {
                for (std::size_t dw = 0; dw < k.w; ++dw, ++row) {
                    if (ti < 0 || ti >= static_cast<long>(in.t)) continue;
                    double* dst = dx.data() + ((n * in.c + ci) * in.t + static_cast<std::size_t>(ti)) * plane;
                    const double* src = col.data() + row * ho_n * wo_n;
                    for (std::size_t ho = 0; ho < ho_n; ++ho) {
                        const long hi = static_cast<long>(ho * s.h + dh) - static_cast<long>(p.h);
                        if (hi < 0 || hi >= static_cast<long>(in.h)) continue;
                        double* dst_row = dst + static_cast<std::size_t>(hi) * in.w;
                        const double* src_row = src + ho * wo_n;
                        for (std::size_t wo = 0; wo < wo_n; ++wo) {
                            const long wi = static_cast<long>(wo * s.w + dw) - static_cast<long>(p.w);
                            if (wi >= 0 && wi < static_cast<long>(in.w)) dst_row[wi] += src_row[wo];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Shape conv_output_shape(const ConvGeometry& g, const Shape& input, const std::string& layer) {
    if (input.size() != 5) {
        throw ShapeError(fmt::format("{}: expected a 5-D input, got {}", layer, to_string(input)));
    }
    if (input[1] != g.in_channels) {
        throw ShapeError(fmt::format("{}: expected {} input channels, got {} (input {})", layer, g.in_channels,
                                     input[1], to_string(input)));
    }
    bool ok_t = false;
    bool ok_h = false;
    bool ok_w = false;
    const std::size_t t = out_extent(input[2], g.kernel.t, g.stride.t, g.padding.t, ok_t);
    const std::size_t h = out_extent(input[3], g.kernel.h, g.stride.h, g.padding.h, ok_h);
    const std::size_t w = out_extent(input[4], g.kernel.w, g.stride.w, g.padding.w, ok_w);
    if (!ok_t || !ok_h || !ok_w) {
        throw ShapeError(fmt::format("{}: kernel does not fit input {}", layer, to_string(input)));
    }
    return {input[0], g.out_channels, t, h, w};
}

Conv3d::Conv3d(std::string name, const ConvGeometry& g) : geom_(g) {
    weight_.name = std::move(name);
    const Shape ws{g.out_channels, g.in_channels, g.kernel.t, g.kernel.h, g.kernel.w};
    weight_.value = Tensor(ws);
    weight_.grad = Tensor(ws);
}

void Conv3d::init(std::mt19937_64& rng) {
    const double fan_out = static_cast<double>(geom_.out_channels * geom_.kernel.t * geom_.kernel.h * geom_.kernel.w);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_out));
    for (double& v : weight_.value.values()) v = dist(rng);
}

Tensor Conv3d::forward(const Tensor& x, const Pass& pass) {
    const Shape out_shape = conv_output_shape(geom_, x.shape(), weight_.name);
    const Dims in = dims_of(x.shape());
    const Dims out = dims_of(out_shape);
    const std::size_t kdim = geom_.in_channels * geom_.kernel.t * geom_.kernel.h * geom_.kernel.w;
    const std::size_t pdim = out.h * out.w;

    Tensor y(out_shape);
    ConstMapped wmat(weight_.value.data(), static_cast<long>(geom_.out_channels), static_cast<long>(kdim));
    RowMat col(static_cast<long>(kdim), static_cast<long>(pdim));
    for (std::size_t n = 0; n < in.n; ++n) {
        for (std::size_t to = 0; to < out.t; ++to) {
            im2col(x, n, to, geom_, in, out.h, out.w, col);
            Strided ys(y.data() + (n * out.c * out.t + to) * pdim, static_cast<long>(out.c), static_cast<long>(pdim),
                       Eigen::OuterStride<>(static_cast<long>(out.t * pdim)));
            ys.noalias() = wmat * col;
        }
    }
    if (pass.cache) {
        input_ = x;
    } else {
        input_ = Tensor();
    }
    return y;
}

Tensor Conv3d::backward(const Tensor& dy, bool need_input_grad) {
    if (input_.empty()) {
        throw std::logic_error(weight_.name + ": backward called without a cached forward pass");
    }
    const Dims in = dims_of(input_.shape());
    const Dims out = dims_of(dy.shape());
    const std::size_t kdim = geom_.in_channels * geom_.kernel.t * geom_.kernel.h * geom_.kernel.w;
    const std::size_t pdim = out.h * out.w;

    Tensor dx;
    if (need_input_grad) dx = Tensor(input_.shape());
    if (!weight_.trainable && !need_input_grad) return dx;

    ConstMapped wmat(weight_.value.data(), static_cast<long>(geom_.out_channels), static_cast<long>(kdim));
    Mapped dw(weight_.grad.data(), static_cast<long>(geom_.out_channels), static_cast<long>(kdim));
    RowMat col(static_cast<long>(kdim), static_cast<long>(pdim));
    RowMat dcol;
    if (need_input_grad) dcol.resize(static_cast<long>(kdim), static_cast<long>(pdim));
    for (std::size_t n = 0; n < in.n; ++n) {
        for (std::size_t to = 0; to < out.t; ++to) {
            ConstStrided dys(dy.data() + (n * out.c * out.t + to) * pdim, static_cast<long>(out.c),
                             static_cast<long>(pdim), Eigen::OuterStride<>(static_cast<long>(out.t * pdim)));
            if (weight_.trainable) {
                im2col(input_, n, to, geom_, in, out.h, out.w, col);
                dw.noalias() += dys * col.transpose();
            }
            if (need_input_grad) {
                dcol.noalias() = wmat.transpose() * dys;
                col2im(dcol, n, to, geom_, in, out.h, out.w, dx);
            }
        }
    }
    return dx;
}

BatchNorm3d::BatchNorm3d(std::string name, std::size_t channels, double momentum, double eps)
    : name_(std::move(name)), momentum_(momentum), eps_(eps) {
    gamma_ = {name_ + ".weight", Tensor({channels}, 1.0), Tensor({channels}), true};
    beta_ = {name_ + ".bias", Tensor({channels}, 0.0), Tensor({channels}), true};
    running_mean_ = Tensor({channels}, 0.0);
    running_var_ = Tensor({channels}, 1.0);
}

void BatchNorm3d::collect(StateRefs& refs) {
    refs.params.push_back(&gamma_);
    refs.params.push_back(&beta_);
    refs.buffers.push_back({name_ + ".running_mean", &running_mean_});
    refs.buffers.push_back({name_ + ".running_var", &running_var_});
    refs.norms.push_back(this);
}

Tensor BatchNorm3d::forward(const Tensor& x, const Pass& pass) {
    require_5d(x, name_);
    const Dims d = dims_of(x.shape());
    const std::size_t channels = running_mean_.size();
    if (d.c != channels) {
        throw ShapeError(fmt::format("{}: expected {} channels, got {}", name_, channels, d.c));
    }
    const std::size_t inner = d.t * d.h * d.w;
    const std::size_t count = d.n * inner;
    const bool batch_stats = pass.training && !use_running_stats_;

    std::vector<double> mean(channels);
    std::vector<double> inv_std(channels);
    if (batch_stats) {
        if (count < 2) {
            throw ShapeError(fmt::format("{}: batch statistics need more than one value per channel", name_));
        }
        for (std::size_t c = 0; c < channels; ++c) {
            double sum = 0.0;
            for (std::size_t n = 0; n < d.n; ++n) {
                const double* p = x.data() + (n * channels + c) * inner;
                for (std::size_t i = 0; i < inner; ++i) sum += p[i];
            }
            const double m = sum / static_cast<double>(count);
            double sq = 0.0;
            for (std::size_t n = 0; n < d.n; ++n) {
                const double* p = x.data() + (n * channels + c) * inner;
                for (std::size_t i = 0; i < inner; ++i) sq += (p[i] - m) * (p[i] - m);
            }
            const double var = sq / static_cast<double>(count);
            mean[c] = m;
            inv_std[c] = 1.0 / std::sqrt(var + eps_);
            running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * m;
            running_var_[c] = (1.0 - momentum_) * running_var_[c] +
                              momentum_ * var * static_cast<double>(count) / static_cast<double>(count - 1);
        }
    } else {
        for (std::size_t c = 0; c < channels; ++c) {
            mean[c] = running_mean_[c];
            inv_std[c] = 1.0 / std::sqrt(running_var_[c] + eps_);
        }
    }

    Tensor y(x.shape());
    if (pass.cache) x_hat_ = Tensor(x.shape());
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t off = (n * channels + c) * inner;
            const double g = gamma_.value[c];
            const double b = beta_.value[c];
            for (std::size_t i = 0; i < inner; ++i) {
                const double xh = (x[off + i] - mean[c]) * inv_std[c];
                if (pass.cache) x_hat_[off + i] = xh;
                y[off + i] = g * xh + b;
            }
        }
    }
    if (pass.cache) {
        inv_std_ = std::move(inv_std);
        batch_stats_used_ = batch_stats;
    } else {
        x_hat_ = Tensor();
    }
    return y;
}

Tensor BatchNorm3d::backward(const Tensor& dy, bool need_input_grad) {
    if (x_hat_.empty()) {
        throw std::logic_error(name_ + ": backward called without a cached forward pass");
    }
    const Dims d = dims_of(dy.shape());
    const std::size_t channels = d.c;
    const std::size_t inner = d.t * d.h * d.w;
    const double count = static_cast<double>(d.n * inner);

    Tensor dx;
    if (need_input_grad) dx = Tensor(dy.shape());
    for (std::size_t c = 0; c < channels; ++c) {
        double sum_dy = 0.0;
        double sum_dy_xh = 0.0;
        for (std::size_t n = 0; n < d.n; ++n) {
            const std::size_t off = (n * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                sum_dy += dy[off + i];
                sum_dy_xh += dy[off + i] * x_hat_[off + i];
            }
        }
        if (gamma_.trainable) gamma_.grad[c] += sum_dy_xh;
        if (beta_.trainable) beta_.grad[c] += sum_dy;
        if (!need_input_grad) continue;

        const double scale = gamma_.value[c] * inv_std_[c];
        for (std::size_t n = 0; n < d.n; ++n) {
            const std::size_t off = (n * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                if (batch_stats_used_) {
                    dx[off + i] = scale * (dy[off + i] - sum_dy / count - x_hat_[off + i] * sum_dy_xh / count);
                } else {
                    dx[off + i] = scale * dy[off + i];
                }
            }
        }
    }
    return dx;
}

Tensor ReLU::forward(const Tensor& x, const Pass& pass) {
    Tensor y(x.shape());
    if (pass.hold_masks) {
        if (mask_.size() != x.size()) throw std::logic_error("ReLU: no cached mask to hold");
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = mask_[i] ? x[i] : 0.0;
        return y;
    }
    if (pass.cache) mask_.assign(x.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        // NaN passes through so a diverging run is caught at the loss.
        const bool on = !(x[i] <= 0.0);
        y[i] = on ? x[i] : 0.0;
        if (pass.cache) mask_[i] = on;
    }
    if (!pass.cache) mask_.clear();
    return y;
}

Tensor ReLU::backward(const Tensor& dy) const {
    if (mask_.size() != dy.size()) {
        throw std::logic_error("ReLU: backward called without a matching cached forward pass");
    }
    Tensor dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = mask_[i] ? dy[i] : 0.0;
    return dx;
}

}  // namespace puckloc::nn
