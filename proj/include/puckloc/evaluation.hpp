#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "puckloc/rink_geometry.hpp"

namespace puckloc {

enum class Axis { kBoth, kX, kY };

std::string to_string(Axis a);

/// Predicted location z0 against ground truth z for one clip.
struct PredictionPair {
    RinkPoint predicted;
    RinkPoint truth;
    std::string clip_id;
};

/// Euclidean (kBoth) or per-axis absolute error in feet.
double error_ft(const PredictionPair& p, Axis axis = Axis::kBoth);

/// Strict: an error of exactly t is not correct. Throws InvalidArgumentError for t <= 0.
bool correct_at(const PredictionPair& p, double t, Axis axis);

struct PhiPoint {
    double tolerance_ft = 0.0;
    double fraction = 0.0;
};

/// Fraction of pairs correct at each tolerance. The grid must be ascending.
std::vector<PhiPoint> phi_curve(std::span<const PredictionPair> pairs, std::span<const double> t_grid, Axis axis);

/// t_min, t_min + step, ..., t_max.
std::vector<double> tolerance_grid(double t_min, double t_max, double step);

/// Trapezoidal area under phi over [t_min, t_max] sampled every `step` feet,
/// divided by the range, in percent. step 1 is the reference rule; step 5 is
/// the coarser variant.
double auc(std::span<const PredictionPair> pairs, Axis axis, double t_min = 5.0, double t_max = 50.0,
           double step = 1.0);

struct AucSummary {
    double overall = 0.0;
    double x = 0.0;
    double y = 0.0;
};

AucSummary auc_summary(std::span<const PredictionPair> pairs, double step = 1.0);

double mean_error_ft(std::span<const PredictionPair> pairs);

struct ZoneRow {
    std::size_t zone = 0;
    std::string label;
    /// Number of pairs whose truth lies in this zone.
    std::size_t n = 0;
    /// Empty for zones without truth samples.
    std::optional<double> accuracy;
};

/// Per zone of the truth, the fraction of predictions landing in the same zone.
std::vector<ZoneRow> zone_accuracy(std::span<const PredictionPair> pairs, const ZonePartition& zp);

struct EvalReport {
    std::size_t count = 0;
    std::vector<PhiPoint> phi_overall;
    std::vector<PhiPoint> phi_x;
    std::vector<PhiPoint> phi_y;
    AucSummary auc;
    double mean_error_ft = 0.0;
    std::vector<ZoneRow> zones_3;
    std::vector<ZoneRow> zones_5;
};

/// Tolerances written to the curve files: 1..50 ft in 1-ft steps.
std::vector<double> report_tolerances();

EvalReport build_report(std::span<const PredictionPair> pairs, const ZonePartition& three, const ZonePartition& five);

/// Writes phi_overall.csv, phi_x.csv, phi_y.csv, auc.csv, zones_3.csv,
/// zones_5.csv and predictions.csv into out_dir.
EvalReport emit_report(std::span<const PredictionPair> pairs, const ZonePartition& three, const ZonePartition& five,
                       const std::filesystem::path& out_dir);

void write_predictions(const std::filesystem::path& path, std::span<const PredictionPair> pairs);
std::vector<PredictionPair> read_predictions(const std::filesystem::path& path);

void write_phi_csv(const std::filesystem::path& path, std::span<const PhiPoint> curve);
std::vector<PhiPoint> read_phi_csv(const std::filesystem::path& path);
void write_zone_csv(const std::filesystem::path& path, std::span<const ZoneRow> rows);
std::vector<ZoneRow> read_zone_csv(const std::filesystem::path& path);

}  // namespace puckloc
