#include "puckloc/model.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "puckloc/data_pipeline.hpp"
#include "puckloc/errors.hpp"

namespace puckloc {

using nn::ConvGeometry;
using nn::Pass;
using nn::Triple;

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::toy() {
    ModelConfig c;
    c.scale = ModelScale::kToy;
    c.frames = 8;
    c.frame_size = 64;
    c.heatmap_width = 16;
    c.heatmap_height = 16;
    c.stem_width = 8;
    c.stage2_width = 8;
    c.stage3_width = 16;
    c.stem_mid = 0;
    c.frozen_prefix = 0;
    // T=8 halves to 4 in stage 3, so the first block can only take 2:2.
    c.regblock_a = {16, 4, 2, 2};
    c.regblock_b = {4, 1, 2, 2};
    return c;
}

std::string to_string(ModelScale s) { return s == ModelScale::kPaper ? "paper" : "toy"; }

ModelScale parse_model_scale(const std::string& s) {
    if (s == "paper") return ModelScale::kPaper;
    if (s == "toy") return ModelScale::kToy;
    throw ConfigError(fmt::format("unknown model scale '{}' (expected paper|toy)", s));
}

std::size_t matched_mid_channels(std::size_t in_channels, std::size_t out_channels, std::size_t spatial_kernel,
                                 std::size_t temporal_kernel) {
    const std::size_t d2 = spatial_kernel * spatial_kernel;
    return (temporal_kernel * d2 * in_channels * out_channels) / (d2 * in_channels + temporal_kernel * out_channels);
}

std::size_t FactorizedConvSpec::parameter_count() const {
    return spatial_kernel * spatial_kernel * in_channels * mid_channels + temporal_kernel * mid_channels * out_channels;
}

std::size_t FactorizedConvSpec::full_kernel_parameter_count() const {
    return temporal_kernel * spatial_kernel * spatial_kernel * in_channels * out_channels;
}

namespace {

// T x C x H x W view of an N x C x T x H x W shape.
Shape per_sample(const Shape& s) { return {s[2], s[1], s[3], s[4]}; }

void check_factorized(const std::string& name, const FactorizedConvSpec& spec) {
    if (spec.mid_channels < 1) {
        throw ShapeError(fmt::format("{}: intermediate width must be at least 1", name));
    }
    if (spec.parameter_count() > spec.full_kernel_parameter_count()) {
        throw ShapeError(fmt::format("{}: factorized pair has {} parameters, more than the {} of the full kernel",
                                     name, spec.parameter_count(), spec.full_kernel_parameter_count()));
    }
}

}  // namespace

namespace detail {

FactorizedConv::FactorizedConv(const std::string& prefix, const FactorizedConvSpec& spec, std::size_t spatial_padding)
    : spec_(spec) {
    check_factorized(prefix, spec);
    const std::size_t d = spec.spatial_kernel;
    const std::size_t t = spec.temporal_kernel;
    spatial_ = nn::Conv3d(prefix + ".0.weight", ConvGeometry{spec.in_channels, spec.mid_channels, Triple{1, d, d},
                                                             Triple{1, spec.spatial_stride, spec.spatial_stride},
                                                             Triple{0, spatial_padding, spatial_padding}});
    mid_bn_ = nn::BatchNorm3d(prefix + ".1", spec.mid_channels);
    temporal_ = nn::Conv3d(prefix + ".3.weight",
                           ConvGeometry{spec.mid_channels, spec.out_channels, Triple{t, 1, 1},
                                        Triple{spec.temporal_stride, 1, 1}, Triple{t / 2, 0, 0}});
}

Shape FactorizedConv::output_shape(const Shape& in) const {
    const Shape mid = nn::conv_output_shape(spatial_.geometry(), in, spatial_.weight().name);
    return nn::conv_output_shape(temporal_.geometry(), mid, temporal_.weight().name);
}

Tensor FactorizedConv::forward(const Tensor& x, const Pass& pass) {
    Tensor h = spatial_.forward(x, pass);
    h = mid_bn_.forward(h, pass);
    h = relu_.forward(h, pass);
    return temporal_.forward(h, pass);
}

Tensor FactorizedConv::backward(const Tensor& dy, bool need_input_grad) {
    const bool below = need_input_grad || spatial_.weight().trainable || mid_bn_.gamma().trainable;
    Tensor g = temporal_.backward(dy, below);
    if (!below) return {};
    g = relu_.backward(g);
    const bool into_spatial = need_input_grad || spatial_.weight().trainable;
    g = mid_bn_.backward(g, into_spatial);
    if (!into_spatial) return {};
    return spatial_.backward(g, need_input_grad);
}

void FactorizedConv::collect(nn::StateRefs& refs) {
    spatial_.collect(refs);
    mid_bn_.collect(refs);
    temporal_.collect(refs);
}

void FactorizedConv::set_frozen(bool frozen) {
    spatial_.weight().trainable = !frozen;
    mid_bn_.gamma().trainable = !frozen;
    mid_bn_.beta().trainable = !frozen;
    temporal_.weight().trainable = !frozen;
}

bool FactorizedConv::trainable() const { return spatial_.weight().trainable; }

void FactorizedConv::init(std::mt19937_64& rng) {
    spatial_.init(rng);
    temporal_.init(rng);
}

Stem::Stem(const FactorizedConvSpec& spec) : conv_("stem", spec, spec.spatial_kernel / 2), bn_("stem.4", spec.out_channels) {}

Shape Stem::output_shape(const Shape& in) const { return conv_.output_shape(in); }

Tensor Stem::forward(const Tensor& x, const Pass& pass) {
    Tensor h = conv_.forward(x, pass);
    h = bn_.forward(h, pass);
    return relu_.forward(h, pass);
}

Tensor Stem::backward(const Tensor& dy, bool need_input_grad) {
    Tensor g = relu_.backward(dy);
    const bool into_conv = need_input_grad || conv_.trainable();
    g = bn_.backward(g, into_conv);
    if (!into_conv) return {};
    return conv_.backward(g, need_input_grad);
}

void Stem::collect(nn::StateRefs& refs) {
    conv_.collect(refs);
    bn_.collect(refs);
}

void Stem::set_frozen(bool frozen) {
    conv_.set_frozen(frozen);
    bn_.gamma().trainable = !frozen;
    bn_.beta().trainable = !frozen;
}

bool Stem::trainable() const { return conv_.trainable(); }

void Stem::init(std::mt19937_64& rng) { conv_.init(rng); }

BasicBlock::BasicBlock(const std::string& prefix, std::size_t in_channels, std::size_t out_channels,
                       std::size_t stride) {
    // Both convs of a block share the block-level intermediate width.
    const std::size_t mid = matched_mid_channels(in_channels, out_channels);
    conv1_ = FactorizedConv(prefix + ".conv1.0", {in_channels, out_channels, 3, 3, mid, stride, stride}, 1);
    bn1_ = nn::BatchNorm3d(prefix + ".conv1.1", out_channels);
    conv2_ = FactorizedConv(prefix + ".conv2.0", {out_channels, out_channels, 3, 3, mid, 1, 1}, 1);
    bn2_ = nn::BatchNorm3d(prefix + ".conv2.1", out_channels);
    has_downsample_ = stride != 1 || in_channels != out_channels;
    if (has_downsample_) {
        down_conv_ = nn::Conv3d(prefix + ".downsample.0.weight",
                                ConvGeometry{in_channels, out_channels, Triple{1, 1, 1},
                                             Triple{stride, stride, stride}, Triple{0, 0, 0}});
        down_bn_ = nn::BatchNorm3d(prefix + ".downsample.1", out_channels);
    }
}

Shape BasicBlock::output_shape(const Shape& in) const {
    const Shape main = conv2_.output_shape(conv1_.output_shape(in));
    const Shape shortcut = has_downsample_ ? nn::conv_output_shape(down_conv_.geometry(), in, down_conv_.weight().name) : in;
    if (main != shortcut) {
        throw ShapeError(fmt::format("{}: residual branch {} does not match shortcut {}", down_conv_.weight().name,
                                     to_string(main), to_string(shortcut)));
    }
    return main;
}

Tensor BasicBlock::forward(const Tensor& x, const Pass& pass) {
    Tensor h = conv1_.forward(x, pass);
    h = bn1_.forward(h, pass);
    h = relu1_.forward(h, pass);
    h = conv2_.forward(h, pass);
    h = bn2_.forward(h, pass);
    if (has_downsample_) {
        Tensor s = down_conv_.forward(x, pass);
        s = down_bn_.forward(s, pass);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] += s[i];
    } else {
        for (std::size_t i = 0; i < h.size(); ++i) h[i] += x[i];
    }
    return out_relu_.forward(h, pass);
}

Tensor BasicBlock::backward(const Tensor& dy, bool need_input_grad) {
    const Tensor g = out_relu_.backward(dy);

    Tensor gm = bn2_.backward(g, true);
    gm = conv2_.backward(gm, true);
    gm = relu1_.backward(gm);
    const bool into_conv1 = need_input_grad || conv1_.trainable();
    gm = bn1_.backward(gm, into_conv1);
    Tensor dx;
    if (into_conv1) dx = conv1_.backward(gm, need_input_grad);

    if (has_downsample_) {
        const bool into_down = need_input_grad || down_conv_.weight().trainable;
        Tensor gs = down_bn_.backward(g, into_down);
        if (into_down) {
            gs = down_conv_.backward(gs, need_input_grad);
            if (need_input_grad) {
                for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gs[i];
            }
        }
    } else if (need_input_grad) {
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
    }
    return dx;
}

void BasicBlock::collect(nn::StateRefs& refs) {
    conv1_.collect(refs);
    bn1_.collect(refs);
    conv2_.collect(refs);
    bn2_.collect(refs);
    if (has_downsample_) {
        down_conv_.collect(refs);
        down_bn_.collect(refs);
    }
}

void BasicBlock::set_frozen(bool conv1, bool conv2) {
    conv1_.set_frozen(conv1);
    bn1_.gamma().trainable = !conv1;
    bn1_.beta().trainable = !conv1;
    if (has_downsample_) {
        down_conv_.weight().trainable = !conv1;
        down_bn_.gamma().trainable = !conv1;
        down_bn_.beta().trainable = !conv1;
    }
    conv2_.set_frozen(conv2);
    bn2_.gamma().trainable = !conv2;
    bn2_.beta().trainable = !conv2;
}

bool BasicBlock::trainable() const { return conv1_.trainable() || conv2_.trainable(); }

void BasicBlock::init(std::mt19937_64& rng) {
    conv1_.init(rng);
    conv2_.init(rng);
    if (has_downsample_) down_conv_.init(rng);
}

RegBlock::RegBlock(const std::string& prefix, const RegBlockSpec& spec)
    : conv_(prefix + ".0.weight", ConvGeometry{spec.in_channels, spec.out_channels,
                                               Triple{spec.temporal_kernel, 1, 1},
                                               Triple{spec.temporal_stride, 1, 1}, Triple{0, 0, 0}}),
      bn_(prefix + ".1", spec.out_channels) {}

Shape RegBlock::output_shape(const Shape& in) const {
    return nn::conv_output_shape(conv_.geometry(), in, conv_.weight().name);
}

Tensor RegBlock::forward(const Tensor& x, const Pass& pass) {
    Tensor h = conv_.forward(x, pass);
    h = bn_.forward(h, pass);
    return relu_.forward(h, pass);
}

Tensor RegBlock::backward(const Tensor& dy, bool need_input_grad) {
    Tensor g = relu_.backward(dy);
    g = bn_.backward(g, true);
    return conv_.backward(g, need_input_grad);
}

void RegBlock::collect(nn::StateRefs& refs) {
    conv_.collect(refs);
    bn_.collect(refs);
}

void RegBlock::init(std::mt19937_64& rng) { conv_.init(rng); }

}  // namespace detail

namespace {

void require_shape(const std::string& stage, const Shape& got, const Shape& want) {
    if (got != want) {
        throw ShapeError(fmt::format("{}: expected output {} (T x C x H x W), got {}", stage, to_string(want),
                                     to_string(got)));
    }
}

}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.frames < 1 || cfg.frame_size < 1 || cfg.heatmap_width < 1 || cfg.heatmap_height < 1) {
        throw ShapeError("model input and heatmap dimensions must be positive");
    }
    const std::size_t stem_mid = cfg.stem_mid ? cfg.stem_mid : matched_mid_channels(3, cfg.stem_width, 7, 3);
    stem_ = detail::Stem(FactorizedConvSpec{3, cfg.stem_width, 7, 3, stem_mid, 2, 1});
    stage2_[0] = detail::BasicBlock("layer1.0", cfg.stem_width, cfg.stage2_width, 1);
    stage2_[1] = detail::BasicBlock("layer1.1", cfg.stage2_width, cfg.stage2_width, 1);
    stage3_[0] = detail::BasicBlock("layer2.0", cfg.stage2_width, cfg.stage3_width, 2);
    stage3_[1] = detail::BasicBlock("layer2.1", cfg.stage3_width, cfg.stage3_width, 1);
    reg_a_ = detail::RegBlock("regblock_a", cfg.regblock_a);
    reg_b_ = detail::RegBlock("regblock_b", cfg.regblock_b);

    Shape s{1, 3, cfg.frames, cfg.frame_size, cfg.frame_size};
    planned_.push_back({"input", per_sample(s)});
    s = stem_.output_shape(s);
    planned_.push_back({"stem", per_sample(s)});
    s = stage2_[1].output_shape(stage2_[0].output_shape(s));
    planned_.push_back({"stage2", per_sample(s)});
    s = stage3_[1].output_shape(stage3_[0].output_shape(s));
    planned_.push_back({"stage3", per_sample(s)});
    s = reg_a_.output_shape(s);
    planned_.push_back({"regblock_a", per_sample(s)});
    s = reg_b_.output_shape(s);
    planned_.push_back({"regblock_b", per_sample(s)});
    const Shape heatmap{1, 1, static_cast<std::size_t>(cfg.heatmap_height), static_cast<std::size_t>(cfg.heatmap_width)};
    require_shape("regblock_b", per_sample(s), heatmap);
    planned_.push_back({"heatmap", {heatmap[2], heatmap[3]}});

    if (cfg.scale == ModelScale::kPaper) {
        require_shape("input", planned_[0].shape, {16, 3, 256, 256});
        require_shape("stem", planned_[1].shape, {16, 64, 128, 128});
        require_shape("stage2", planned_[2].shape, {16, 64, 128, 128});
        require_shape("stage3", planned_[3].shape, {8, 128, 64, 64});
        require_shape("regblock_a", planned_[4].shape, {2, 32, 64, 64});
        require_shape("regblock_b", planned_[5].shape, {1, 1, 64, 64});
    }

    std::mt19937_64 rng(seed);
    stem_.init(rng);
    for (auto& b : stage2_) b.init(rng);
    for (auto& b : stage3_) b.init(rng);
    reg_a_.init(rng);
    reg_b_.init(rng);

    freeze_prefix(cfg.frozen_prefix);
}

Tensor Model::forward(const Tensor& batch, Mode mode) {
    const Shape want{3, cfg_.frames, cfg_.frame_size, cfg_.frame_size};
    if (batch.rank() != 5 || batch.dim(0) < 1 ||
        !std::equal(want.begin(), want.end(), batch.shape().begin() + 1)) {
        throw ShapeError(fmt::format("model expects N x {} input, got {}", to_string(want), to_string(batch.shape())));
    }
    const bool training = mode == Mode::kTrain;
    auto pass_for = [&](std::size_t stage) {
        const bool cache = training && stage >= first_active_;
        return Pass{training, cache, cache && hold_masks_};
    };

    observed_.clear();
    observed_.push_back({"input", per_sample(batch.shape())});
    Tensor h = stem_.forward(batch, pass_for(0));
    observed_.push_back({"stem", per_sample(h.shape())});
    h = stage2_[0].forward(h, pass_for(1));
    h = stage2_[1].forward(h, pass_for(2));
    observed_.push_back({"stage2", per_sample(h.shape())});
    h = stage3_[0].forward(h, pass_for(3));
    h = stage3_[1].forward(h, pass_for(4));
    observed_.push_back({"stage3", per_sample(h.shape())});
    h = reg_a_.forward(h, pass_for(5));
    observed_.push_back({"regblock_a", per_sample(h.shape())});
    h = reg_b_.forward(h, pass_for(6));
    observed_.push_back({"regblock_b", per_sample(h.shape())});
    has_cache_ = training;

    const std::size_t n = batch.dim(0);
    Tensor out = std::move(h).reshaped(
        {n, static_cast<std::size_t>(cfg_.heatmap_height), static_cast<std::size_t>(cfg_.heatmap_width)});
    observed_.push_back({"heatmap", {out.dim(1), out.dim(2)}});
    return out;
}

Tensor Model::forward(std::span<const ClipTensor> clips, Mode mode) { return forward(stack_clips(clips), mode); }

void Model::backward(const Tensor& grad_heatmaps) {
    if (!has_cache_) {
        throw std::logic_error("Model::backward requires a preceding training-mode forward pass");
    }
    const std::size_t n = grad_heatmaps.dim(0);
    Tensor g = grad_heatmaps.reshaped(
        {n, 1, 1, static_cast<std::size_t>(cfg_.heatmap_height), static_cast<std::size_t>(cfg_.heatmap_width)});
    // Stage i needs to hand a gradient to its input only if some earlier
    // stage still has trainable parameters.
    g = reg_b_.backward(g, 6 > first_active_);
    if (first_active_ >= 6) return;
    g = reg_a_.backward(g, 5 > first_active_);
    if (first_active_ >= 5) return;
    g = stage3_[1].backward(g, 4 > first_active_);
    if (first_active_ >= 4) return;
    g = stage3_[0].backward(g, 3 > first_active_);
    if (first_active_ >= 3) return;
    g = stage2_[1].backward(g, 2 > first_active_);
    if (first_active_ >= 2) return;
    g = stage2_[0].backward(g, 1 > first_active_);
    if (first_active_ >= 1) return;
    stem_.backward(g, false);
}

void Model::zero_grad() {
    for (auto* p : state().params) p->zero_grad();
}

void Model::freeze_prefix(std::size_t n_layers) {
    if (n_layers > kExtractorDepth) {
        throw InvalidArgumentError(
            fmt::format("cannot freeze {} layers: the extractor has {}", n_layers, kExtractorDepth));
    }
    frozen_ = n_layers;
    apply_freeze();
}

void Model::set_bn_running_stats(bool on) {
    bn_running_stats_ = on;
    apply_freeze();
}

void Model::apply_freeze() {
    // Conv layer k (1-based): 1 stem, 2-5 stage 2, 6-9 stage 3.
    auto frozen = [this](std::size_t k) { return k <= frozen_; };
    stem_.set_frozen(frozen(1));
    stage2_[0].set_frozen(frozen(2), frozen(3));
    stage2_[1].set_frozen(frozen(4), frozen(5));
    stage3_[0].set_frozen(frozen(6), frozen(7));
    stage3_[1].set_frozen(frozen(8), frozen(9));

    // Stage order: stem, four blocks, two regression blocks.
    const bool stage_trainable[7] = {stem_.trainable(),         stage2_[0].trainable(), stage2_[1].trainable(),
                                     stage3_[0].trainable(),    stage3_[1].trainable(), true, true};
    first_active_ = 0;
    while (first_active_ < 7 && !stage_trainable[first_active_]) ++first_active_;

    // Frozen normalization layers use stored statistics.
    for (auto* bn : state().norms) bn->set_use_running_stats(bn_running_stats_ || !bn->gamma().trainable);
    has_cache_ = false;
}

nn::StateRefs Model::state() {
    nn::StateRefs refs;
    stem_.collect(refs);
    for (auto& b : stage2_) b.collect(refs);
    for (auto& b : stage3_) b.collect(refs);
    reg_a_.collect(refs);
    reg_b_.collect(refs);
    return refs;
}

std::vector<nn::Parameter*> Model::trainable_parameters() {
    std::vector<nn::Parameter*> out;
    for (auto* p : state().params) {
        if (p->trainable) out.push_back(p);
    }
    return out;
}

Archive Model::export_state() const {
    Archive a;
    nn::StateRefs refs = const_cast<Model*>(this)->state();
    for (const auto* p : refs.params) a.tensors.push_back({p->name, p->value});
    for (const auto& b : refs.buffers) a.tensors.push_back({b.name, *b.tensor});
    return a;
}

void Model::import_state(const Archive& a) {
    nn::StateRefs refs = state();
    auto load = [&](const std::string& name, Tensor& dst) {
        const Tensor* src = a.find(name);
        if (!src) throw ShapeError(fmt::format("archive is missing tensor '{}'", name));
        if (src->shape() != dst.shape()) {
            throw ShapeError(fmt::format("tensor '{}' has shape {} in the archive but {} in the model", name,
                                         to_string(src->shape()), to_string(dst.shape())));
        }
        dst = *src;
    };
    for (auto* p : refs.params) load(p->name, p->value);
    for (auto& b : refs.buffers) load(b.name, *b.tensor);
}

PretrainedReport load_pretrained(Model& model, const std::filesystem::path& archive_path) {
    return load_pretrained(model, read_archive(archive_path));
}

PretrainedReport load_pretrained(Model& model, const Archive& archive) {
    PretrainedReport report;
    nn::StateRefs refs = model.state();
    auto visit = [&](const std::string& name, Tensor& dst) {
        const bool head = name.rfind("regblock", 0) == 0;
        const Tensor* src = head ? nullptr : archive.find(name);
        if (src && src->shape() == dst.shape()) {
            dst = *src;
            report.matched.push_back(name);
        } else {
            report.unmatched.push_back(name);
        }
    };
    for (auto* p : refs.params) visit(p->name, p->value);
    for (auto& b : refs.buffers) visit(b.name, *b.tensor);
    if (report.matched.empty()) {
        spdlog::warn("pretrained archive matched no parameters; the extractor keeps its random initialization");
    } else {
        spdlog::info("loaded {} pretrained tensors, {} left at initialization", report.matched.size(),
                     report.unmatched.size());
    }
    return report;
}

Tensor stack_clips(std::span<const ClipTensor> clips) {
    if (clips.empty()) throw InvalidArgumentError("cannot stack an empty clip batch");
    const Shape& s = clips.front().frames.shape();  // T x 3 x S x S
    const std::size_t t = s[0];
    const std::size_t c = s[1];
    const std::size_t plane = s[2] * s[3];
    Tensor out({clips.size(), c, t, s[2], s[3]});
    for (std::size_t n = 0; n < clips.size(); ++n) {
        const Tensor& f = clips[n].frames;
        if (f.shape() != s) {
            throw ShapeError(fmt::format("clip {} has shape {}, expected {}", n, to_string(f.shape()), to_string(s)));
        }
        for (std::size_t ti = 0; ti < t; ++ti) {
            for (std::size_t ci = 0; ci < c; ++ci) {
                std::memcpy(out.data() + ((n * c + ci) * t + ti) * plane, f.data() + (ti * c + ci) * plane,
                            plane * sizeof(double));
            }
        }
    }
    return out;
}

std::uint64_t checksum(const Tensor& t) {
    std::uint64_t h = 1469598103934665603ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    for (std::size_t i = 0; i < t.size() * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    return h;
}

// Archive layout (little-endian):
//   "PUCKARC1" | u64 step | u64 len, metadata | u64 count |
//   count x (u32 len, name | u32 rank | rank x u64 dim | f64 data) | u64 fnv1a
namespace {

constexpr char kMagic[8] = {'P', 'U', 'C', 'K', 'A', 'R', 'C', '1'};

template <typename T>
void put(std::string& out, T v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

std::uint64_t fnv1a(const char* data, std::size_t n) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 1099511628211ULL;
    }
    return h;
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void read_doubles(double* dst, std::size_t n) {
        need(n * sizeof(double));
        std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
    }

    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw IoError("corrupt archive: truncated payload");
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

const Tensor* Archive::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t.tensor;
    }
    return nullptr;
}

std::string encode_archive(const Archive& a) {
    std::string out(kMagic, sizeof(kMagic));
    put<std::uint64_t>(out, a.step);
    put<std::uint64_t>(out, a.metadata.size());
    out += a.metadata;
    put<std::uint64_t>(out, a.tensors.size());
    for (const auto& t : a.tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.tensor.rank()));
        for (std::size_t d : t.tensor.shape()) put<std::uint64_t>(out, d);
        out.append(reinterpret_cast<const char*>(t.tensor.data()), t.tensor.size() * sizeof(double));
    }
    put<std::uint64_t>(out, fnv1a(out.data(), out.size()));
    return out;
}

Archive decode_archive(const std::string& bytes) {
    if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw IoError("corrupt archive: bad magic");
    }
    std::uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
    if (stored != fnv1a(bytes.data(), bytes.size() - 8)) {
        throw IoError("corrupt archive: checksum mismatch");
    }
    const std::string body = bytes.substr(0, bytes.size() - 8);
    Reader r(body);
    r.str(sizeof(kMagic));
    Archive a;
    a.step = r.get<std::uint64_t>();
    a.metadata = r.str(r.get<std::uint64_t>());
    const auto count = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedTensor nt;
        nt.name = r.str(r.get<std::uint32_t>());
        const auto rank = r.get<std::uint32_t>();
        Shape shape(rank);
        for (auto& d : shape) d = r.get<std::uint64_t>();
        nt.tensor = Tensor(shape);
        r.read_doubles(nt.tensor.data(), nt.tensor.size());
        a.tensors.push_back(std::move(nt));
    }
    if (r.pos() != body.size()) throw IoError("corrupt archive: trailing bytes");
    return a;
}

void write_archive(const std::filesystem::path& path, const Archive& a) {
    const std::string bytes = encode_archive(a);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError(fmt::format("cannot write archive '{}'", path.string()));
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError(fmt::format("failed writing archive '{}'", path.string()));
    }
    std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(fmt::format("cannot open archive '{}'", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return decode_archive(ss.str());
    } catch (const IoError& e) {
        throw IoError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

}  // namespace puckloc
