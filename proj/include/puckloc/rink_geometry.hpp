#pragma once

#include <string>
#include <vector>

namespace puckloc {

inline constexpr double kRinkLengthFt = 200.0;
inline constexpr double kRinkWidthFt = 85.0;

/// A location on the ice surface, in feet.
///
/// The origin is the corner at the left end and far boards as seen by the
/// broadcast camera: x runs along the rink length (left to right on screen),
/// y runs across the rink from the far boards (0) to the near boards (85).
struct RinkPoint {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const RinkPoint&, const RinkPoint&) = default;
};

/// Continuous heatmap coordinates: u is columns in [0, W], v is rows in [0, H].
struct HeatmapPoint {
    double u = 0.0;
    double v = 0.0;

    friend bool operator==(const HeatmapPoint&, const HeatmapPoint&) = default;
};

bool is_on_rink(const RinkPoint& p) noexcept;

/// Throws DomainError when the point lies off the 200x85 ft surface.
void validate(const RinkPoint& p);

/// Diagonal scaling between rink feet and heatmap cells (no offset).
class ScalingTransform {
public:
    ScalingTransform(int width, int height);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    double sx() const noexcept { return sx_; }
    double sy() const noexcept { return sy_; }
    /// Feet per heatmap cell along each axis.
    double feet_per_col() const noexcept { return inv_sx_; }
    double feet_per_row() const noexcept { return inv_sy_; }

    bool contains(const HeatmapPoint& q) const noexcept;

private:
    int width_;
    int height_;
    double sx_;
    double sy_;
    double inv_sx_;
    double inv_sy_;
};

ScalingTransform make_scaling_transform(int width, int height);

HeatmapPoint rink_to_heatmap(const ScalingTransform& t, const RinkPoint& p);
RinkPoint heatmap_to_rink(const ScalingTransform& t, const HeatmapPoint& q);

/// Partition of the rink length into labelled zones.
///
/// Zone i covers [cut_xs[i-1], cut_xs[i]) with the first zone starting at 0 and
/// the last one closed at 200. A point exactly on a cut belongs to the zone on
/// its higher-x side.
class ZonePartition {
public:
    ZonePartition(std::vector<double> cut_xs, std::vector<std::string> labels, bool split_ends = false);

    const std::vector<double>& cut_xs() const noexcept { return cut_xs_; }
    const std::vector<std::string>& labels() const noexcept { return labels_; }
    bool split_ends() const noexcept { return split_ends_; }
    std::size_t size() const noexcept { return labels_.size(); }

    /// Index of the zone containing x.
    std::size_t index_of(double x) const;
    /// x-extent [lo, hi] of zone i.
    std::pair<double, double> extent(std::size_t i) const;

    /// Defensive / neutral / offensive, split at the blue lines (75 and 125 ft).
    static ZonePartition three_zone();
    /// Three-zone layout with the end zones halved at 37.5 and 162.5 ft.
    static ZonePartition five_zone();

private:
    std::vector<double> cut_xs_;
    std::vector<std::string> labels_;
    bool split_ends_;
};

const std::string& zone_of(const RinkPoint& p, const ZonePartition& zp);

}  // namespace puckloc
