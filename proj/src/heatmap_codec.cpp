#include "puckloc/heatmap_codec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "puckloc/errors.hpp"

namespace puckloc {

Heatmap::Heatmap(int width, int height, double fill) : width_(width), height_(height) {
    if (width < 1 || height < 1) {
        throw InvalidArgumentError(fmt::format("heatmap dimensions must be positive, got {}x{}", width, height));
    }
    values_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

Heatmap::Heatmap(int width, int height, std::vector<double> values) : Heatmap(width, height) {
    if (values.size() != values_.size()) {
        throw ShapeError(fmt::format("heatmap {}x{} needs {} values, got {}", width, height, values_.size(),
                                     values.size()));
    }
    values_ = std::move(values);
}

std::size_t Heatmap::index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(col);
}

void validate(const TargetSpec& spec) {
    if (!(spec.sigma > 0.0) || !std::isfinite(spec.sigma)) {
        throw InvalidArgumentError(fmt::format("sigma must be positive, got {}", spec.sigma));
    }
    if (spec.width < 1 || spec.height < 1) {
        throw InvalidArgumentError("target heatmap dimensions must be positive");
    }
}

Heatmap render_target(const TargetSpec& spec, const HeatmapPoint& mean) {
    validate(spec);
    const ScalingTransform t(spec.width, spec.height);
    if (!t.contains(mean)) {
        throw DomainError(fmt::format("target mean ({}, {}) is outside the {}x{} grid", mean.u, mean.v,
                                      spec.width, spec.height));
    }
    double sigma_u = spec.sigma;
    double sigma_v = spec.sigma;
    if (spec.unit == SigmaUnit::kFeet) {
        sigma_u = spec.sigma * t.sx();
        sigma_v = spec.sigma * t.sy();
    }
    const double inv_2u = 1.0 / (2.0 * sigma_u * sigma_u);
    const double inv_2v = 1.0 / (2.0 * sigma_v * sigma_v);

    Heatmap h(spec.width, spec.height);
    for (int r = 0; r < spec.height; ++r) {
        const double dv = r + 0.5 - mean.v;
        for (int c = 0; c < spec.width; ++c) {
            const double du = c + 0.5 - mean.u;
            h.at(r, c) = std::exp(-(du * du * inv_2u + dv * dv * inv_2v));
        }
    }
    if (spec.normalize) {
        const auto vals = h.values();
        const double total = std::accumulate(vals.begin(), vals.end(), 0.0);
        for (double& v : vals) v /= total;
    }
    return h;
}

DecodeResult decode_argmax(const Heatmap& h) {
    const auto vals = h.values();
    if (vals.empty()) {
        throw InvalidArgumentError("cannot decode an empty heatmap");
    }
    // First maximum in row-major order = lowest row, then lowest column.
    std::size_t best = 0;
    double lo = vals[0];
    for (std::size_t i = 1; i < vals.size(); ++i) {
        if (vals[i] > vals[best]) best = i;
        lo = std::min(lo, vals[i]);
    }
    if (!(vals[best] > lo)) {
        return {{h.width() / 2.0, h.height() / 2.0}, true};
    }
    const int row = static_cast<int>(best / static_cast<std::size_t>(h.width()));
    const int col = static_cast<int>(best % static_cast<std::size_t>(h.width()));
    return {{col + 0.5, row + 0.5}, false};
}

RinkDecodeResult decode_to_rink(const Heatmap& h, const ScalingTransform& t) {
    if (h.width() != t.width() || h.height() != t.height()) {
        throw ShapeError(fmt::format("heatmap is {}x{} but the transform expects {}x{}", h.width(), h.height(),
                                     t.width(), t.height()));
    }
    const DecodeResult d = decode_argmax(h);
    return {heatmap_to_rink(t, d.point), d.low_confidence};
}

RinkPoint quantization_bound(const ScalingTransform& t) { return {0.5 * t.feet_per_col(), 0.5 * t.feet_per_row()}; }

void write_heatmap_png(const Heatmap& h, const std::filesystem::path& path) {
    cv::Mat img(h.height(), h.width(), CV_8UC1);
    for (int r = 0; r < h.height(); ++r) {
        for (int c = 0; c < h.width(); ++c) {
            const double v = std::clamp(h.at(r, c), 0.0, 1.0);
            img.at<unsigned char>(r, c) = static_cast<unsigned char>(std::lround(v * 255.0));
        }
    }
    if (!cv::imwrite(path.string(), img)) {
        throw IoError(fmt::format("failed to write heatmap image '{}'", path.string()));
    }
}

void write_heatmap_text(const Heatmap& h, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
    out << h.width() << ' ' << h.height() << '\n';
    for (int r = 0; r < h.height(); ++r) {
        for (int c = 0; c < h.width(); ++c) {
            out << (c ? " " : "") << fmt::format("{:.17g}", h.at(r, c));
        }
        out << '\n';
    }
    if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

Heatmap read_heatmap_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    int w = 0;
    int h = 0;
    if (!(in >> w >> h) || w < 1 || h < 1) {
        throw ParseError(1, "dimensions", "expected '<width> <height>'");
    }
    std::vector<double> values(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!(in >> values[i])) {
            throw ParseError(2 + i / static_cast<std::size_t>(w), "value", "truncated heatmap grid");
        }
    }
    return Heatmap(w, h, std::move(values));
}

}  // namespace puckloc
