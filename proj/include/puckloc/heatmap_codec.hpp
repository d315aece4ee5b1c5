#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "puckloc/rink_geometry.hpp"

namespace puckloc {

/// H x W grid of non-negative values, row-major, row 0 at the top.
class Heatmap {
public:
    Heatmap() = default;
    Heatmap(int width, int height, double fill = 0.0);
    Heatmap(int width, int height, std::vector<double> values);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return values_.size(); }

    double& at(int row, int col) { return values_[index(row, col)]; }
    double at(int row, int col) const { return values_[index(row, col)]; }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }

    friend bool operator==(const Heatmap&, const Heatmap&) = default;

private:
    std::size_t index(int row, int col) const;

    int width_ = 0;
    int height_ = 0;
    std::vector<double> values_;
};

enum class SigmaUnit { kCells, kFeet };

struct TargetSpec {
    double sigma = 25.0;
    SigmaUnit unit = SigmaUnit::kCells;
    /// Rescale the target to sum to one instead of peaking at one.
    bool normalize = false;
    int width = 64;
    int height = 64;
};

void validate(const TargetSpec& spec);

/// Gaussian target evaluated at cell centers, peak value 1 (unless normalized).
///
/// With SigmaUnit::kFeet the spread is isotropic on the rink, so the per-axis
/// sigma in cells is sigma * sx and sigma * sy.
Heatmap render_target(const TargetSpec& spec, const HeatmapPoint& mean);

struct DecodeResult {
    HeatmapPoint point;
    /// Set when the heatmap is flat (no unique information about the peak).
    bool low_confidence = false;
};

/// Cell center of the largest entry; ties go to the lowest row, then column.
DecodeResult decode_argmax(const Heatmap& h);

struct RinkDecodeResult {
    RinkPoint point;
    bool low_confidence = false;
};

RinkDecodeResult decode_to_rink(const Heatmap& h, const ScalingTransform& t);

/// Half a cell along each axis, in feet: the worst-case argmax quantization.
RinkPoint quantization_bound(const ScalingTransform& t);

// Debug exports.
void write_heatmap_png(const Heatmap& h, const std::filesystem::path& path);
void write_heatmap_text(const Heatmap& h, const std::filesystem::path& path);
Heatmap read_heatmap_text(const std::filesystem::path& path);

}  // namespace puckloc
