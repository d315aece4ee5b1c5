#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "puckloc/evaluation.hpp"

namespace puckloc {

/// Tolerance-accuracy curve with axes in feet and fraction correct.
cv::Mat plot_phi_curve(std::span<const PhiPoint> curve, const std::string& title);

/// Top view of the rink with each zone shaded and annotated by its accuracy.
cv::Mat plot_zone_diagram(std::span<const ZoneRow> rows, std::span<const double> cut_xs, const std::string& title);

/// Reads the CSVs written by emit_report() from report_dir and writes
/// phi_overall.png, phi_x.png, phi_y.png, zones_3.png and zones_5.png to
/// out_dir. Throws IoError when a CSV is missing.
std::vector<std::filesystem::path> render_report_plots(const std::filesystem::path& report_dir,
                                                       const std::filesystem::path& out_dir);

}  // namespace puckloc
