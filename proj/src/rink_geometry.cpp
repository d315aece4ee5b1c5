#include "puckloc/rink_geometry.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "puckloc/errors.hpp"

namespace puckloc {

bool is_on_rink(const RinkPoint& p) noexcept {
    return std::isfinite(p.x) && std::isfinite(p.y) && p.x >= 0.0 && p.x <= kRinkLengthFt &&
           p.y >= 0.0 && p.y <= kRinkWidthFt;
}

void validate(const RinkPoint& p) {
    if (!is_on_rink(p)) {
        throw DomainError(fmt::format("rink point ({}, {}) is outside the {}x{} ft surface", p.x, p.y,
                                      kRinkLengthFt, kRinkWidthFt));
    }
}

ScalingTransform::ScalingTransform(int width, int height) : width_(width), height_(height) {
    if (width < 1 || height < 1) {
        throw InvalidArgumentError(fmt::format("heatmap dimensions must be positive, got {}x{}", width, height));
    }
    sx_ = static_cast<double>(width) / kRinkLengthFt;
    sy_ = static_cast<double>(height) / kRinkWidthFt;
    inv_sx_ = kRinkLengthFt / static_cast<double>(width);
    inv_sy_ = kRinkWidthFt / static_cast<double>(height);
}

bool ScalingTransform::contains(const HeatmapPoint& q) const noexcept {
    return std::isfinite(q.u) && std::isfinite(q.v) && q.u >= 0.0 && q.u <= width_ && q.v >= 0.0 &&
           q.v <= height_;
}

ScalingTransform make_scaling_transform(int width, int height) { return ScalingTransform(width, height); }

HeatmapPoint rink_to_heatmap(const ScalingTransform& t, const RinkPoint& p) {
    validate(p);
    return {p.x * t.sx(), p.y * t.sy()};
}

RinkPoint heatmap_to_rink(const ScalingTransform& t, const HeatmapPoint& q) {
    if (!t.contains(q)) {
        throw DomainError(fmt::format("heatmap point ({}, {}) is outside the {}x{} grid", q.u, q.v, t.width(),
                                      t.height()));
    }
    // Multiplying by the stored inverse keeps cell-center decodes exact for
    // power-of-two grids (200/64 and 85/64 are dyadic).
    RinkPoint p{q.u * t.feet_per_col(), q.v * t.feet_per_row()};
    p.x = std::clamp(p.x, 0.0, kRinkLengthFt);
    p.y = std::clamp(p.y, 0.0, kRinkWidthFt);
    return p;
}

ZonePartition::ZonePartition(std::vector<double> cut_xs, std::vector<std::string> labels, bool split_ends)
    : cut_xs_(std::move(cut_xs)), labels_(std::move(labels)), split_ends_(split_ends) {
    for (std::size_t i = 0; i < cut_xs_.size(); ++i) {
        const double c = cut_xs_[i];
        if (!(c > 0.0 && c < kRinkLengthFt)) {
            throw InvalidArgumentError(fmt::format("zone cut {} must lie strictly inside (0, 200)", c));
        }
        if (i > 0 && !(c > cut_xs_[i - 1])) {
            throw InvalidArgumentError("zone cuts must be strictly ascending");
        }
    }
    if (labels_.size() != cut_xs_.size() + 1) {
        throw InvalidArgumentError(
            fmt::format("{} cuts need {} labels, got {}", cut_xs_.size(), cut_xs_.size() + 1, labels_.size()));
    }
}

std::size_t ZonePartition::index_of(double x) const {
    if (!(x >= 0.0 && x <= kRinkLengthFt)) {
        throw DomainError(fmt::format("x = {} ft is outside the rink", x));
    }
    // upper_bound: a point on a cut lands in the higher-x zone.
    return static_cast<std::size_t>(std::upper_bound(cut_xs_.begin(), cut_xs_.end(), x) - cut_xs_.begin());
}

std::pair<double, double> ZonePartition::extent(std::size_t i) const {
    const double lo = i == 0 ? 0.0 : cut_xs_.at(i - 1);
    const double hi = i == cut_xs_.size() ? kRinkLengthFt : cut_xs_.at(i);
    return {lo, hi};
}

ZonePartition ZonePartition::three_zone() { return ZonePartition({75.0, 125.0}, {"defensive", "neutral", "offensive"}); }

ZonePartition ZonePartition::five_zone() {
    return ZonePartition({37.5, 75.0, 125.0, 162.5},
                         {"defensive-deep", "defensive-high", "neutral", "offensive-high", "offensive-deep"}, true);
}

const std::string& zone_of(const RinkPoint& p, const ZonePartition& zp) {
    validate(p);
    return zp.labels()[zp.index_of(p.x)];
}

}  // namespace puckloc
