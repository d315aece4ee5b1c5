#include "puckloc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "csv.hpp"
#include "puckloc/errors.hpp"

namespace puckloc {

namespace {

void require_pairs(std::span<const PredictionPair> pairs) {
    if (pairs.empty()) throw InvalidArgumentError("no prediction pairs to evaluate");
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
    return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

std::ifstream open_in(const std::filesystem::path& path, const std::string& header) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    std::string line;
    std::getline(in, line);
    csv::strip_cr(line);
    if (line != header) throw ParseError(1, "header", fmt::format("{}: expected '{}'", path.string(), header));
    return in;
}

}  // namespace

std::string to_string(Axis a) {
    switch (a) {
        case Axis::kX: return "x";
        case Axis::kY: return "y";
        default: return "overall";
    }
}

double error_ft(const PredictionPair& p, Axis axis) {
    const double dx = p.predicted.x - p.truth.x;
    const double dy = p.predicted.y - p.truth.y;
    switch (axis) {
        case Axis::kX: return std::abs(dx);
        case Axis::kY: return std::abs(dy);
        default: return std::hypot(dx, dy);
    }
}

bool correct_at(const PredictionPair& p, double t, Axis axis) {
    if (!(t > 0.0)) throw InvalidArgumentError(fmt::format("tolerance must be positive (got {})", t));
    return error_ft(p, axis) < t;
}

std::vector<PhiPoint> phi_curve(std::span<const PredictionPair> pairs, std::span<const double> t_grid, Axis axis) {
    require_pairs(pairs);
    if (!std::is_sorted(t_grid.begin(), t_grid.end())) throw InvalidArgumentError("tolerance grid must be ascending");
    std::vector<double> errors;
    errors.reserve(pairs.size());
    for (const auto& p : pairs) errors.push_back(error_ft(p, axis));
    std::sort(errors.begin(), errors.end());

    std::vector<PhiPoint> out;
    out.reserve(t_grid.size());
    const auto n = static_cast<double>(errors.size());
    for (double t : t_grid) {
        if (!(t > 0.0)) throw InvalidArgumentError(fmt::format("tolerance must be positive (got {})", t));
        const auto correct = std::lower_bound(errors.begin(), errors.end(), t) - errors.begin();
        out.push_back({t, static_cast<double>(correct) / n});
    }
    return out;
}

std::vector<double> tolerance_grid(double t_min, double t_max, double step) {
    if (!(t_min < t_max) || !(step > 0.0)) {
        throw InvalidArgumentError(fmt::format("invalid tolerance range [{}, {}] step {}", t_min, t_max, step));
    }
    const double intervals = (t_max - t_min) / step;
    const double rounded = std::round(intervals);
    if (std::abs(intervals - rounded) > 1e-9) {
        throw InvalidArgumentError(fmt::format("step {} does not divide [{}, {}]", step, t_min, t_max));
    }
    std::vector<double> grid;
    const auto n = static_cast<std::size_t>(rounded);
    for (std::size_t k = 0; k <= n; ++k) grid.push_back(t_min + static_cast<double>(k) * step);
    grid.back() = t_max;
    return grid;
}

double auc(std::span<const PredictionPair> pairs, Axis axis, double t_min, double t_max, double step) {
    const auto grid = tolerance_grid(t_min, t_max, step);
    const auto phi = phi_curve(pairs, grid, axis);
    double area = 0.0;
    for (std::size_t k = 0; k + 1 < phi.size(); ++k) {
        area += 0.5 * (phi[k].fraction + phi[k + 1].fraction) * (phi[k + 1].tolerance_ft - phi[k].tolerance_ft);
    }
    return 100.0 * area / (t_max - t_min);
}

AucSummary auc_summary(std::span<const PredictionPair> pairs, double step) {
    return {auc(pairs, Axis::kBoth, 5.0, 50.0, step), auc(pairs, Axis::kX, 5.0, 50.0, step),
            auc(pairs, Axis::kY, 5.0, 50.0, step)};
}

double mean_error_ft(std::span<const PredictionPair> pairs) {
    require_pairs(pairs);
    double sum = 0.0;
    for (const auto& p : pairs) sum += error_ft(p);
    return sum / static_cast<double>(pairs.size());
}

std::vector<ZoneRow> zone_accuracy(std::span<const PredictionPair> pairs, const ZonePartition& zp) {
    require_pairs(pairs);
    std::vector<std::size_t> n(zp.size(), 0);
    std::vector<std::size_t> hits(zp.size(), 0);
    for (const auto& p : pairs) {
        const std::size_t z = zp.index_of(p.truth.x);
        ++n[z];
        if (zp.index_of(p.predicted.x) == z) ++hits[z];
    }
    std::vector<ZoneRow> rows;
    for (std::size_t z = 0; z < zp.size(); ++z) {
        ZoneRow r{z, zp.labels()[z], n[z], std::nullopt};
        if (n[z] > 0) r.accuracy = static_cast<double>(hits[z]) / static_cast<double>(n[z]);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<double> report_tolerances() { return tolerance_grid(1.0, 50.0, 1.0); }

EvalReport build_report(std::span<const PredictionPair> pairs, const ZonePartition& three, const ZonePartition& five) {
    require_pairs(pairs);
    const auto grid = report_tolerances();
    EvalReport r;
    r.count = pairs.size();
    r.phi_overall = phi_curve(pairs, grid, Axis::kBoth);
    r.phi_x = phi_curve(pairs, grid, Axis::kX);
    r.phi_y = phi_curve(pairs, grid, Axis::kY);
    r.auc = auc_summary(pairs);
    r.mean_error_ft = mean_error_ft(pairs);
    r.zones_3 = zone_accuracy(pairs, three);
    r.zones_5 = zone_accuracy(pairs, five);
    return r;
}

EvalReport emit_report(std::span<const PredictionPair> pairs, const ZonePartition& three, const ZonePartition& five,
                       const std::filesystem::path& out_dir) {
    EvalReport r = build_report(pairs, three, five);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError(fmt::format("cannot create '{}': {}", out_dir.string(), ec.message()));

    write_phi_csv(out_dir / "phi_overall.csv", r.phi_overall);
    write_phi_csv(out_dir / "phi_x.csv", r.phi_x);
    write_phi_csv(out_dir / "phi_y.csv", r.phi_y);
    {
        const auto path = out_dir / "auc.csv";
        auto out = open_out(path);
        out << "axis,auc_percent\n";
        out << fmt::format("overall,{}\nx,{}\ny,{}\n", r.auc.overall, r.auc.x, r.auc.y);
        finish(out, path);
    }
    write_zone_csv(out_dir / "zones_3.csv", r.zones_3);
    write_zone_csv(out_dir / "zones_5.csv", r.zones_5);
    write_predictions(out_dir / "predictions.csv", pairs);
    return r;
}

void write_predictions(const std::filesystem::path& path, std::span<const PredictionPair> pairs) {
    auto out = open_out(path);
    out << "clip_id,pred_x_ft,pred_y_ft,true_x_ft,true_y_ft,error_ft\n";
    for (const auto& p : pairs) {
        out << fmt::format("{},{},{},{},{},{}\n", p.clip_id, p.predicted.x, p.predicted.y, p.truth.x, p.truth.y,
                           error_ft(p));
    }
    finish(out, path);
}

std::vector<PredictionPair> read_predictions(const std::filesystem::path& path) {
    auto in = open_in(path, "clip_id,pred_x_ft,pred_y_ft,true_x_ft,true_y_ft,error_ft");
    std::vector<PredictionPair> pairs;
    std::string line;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        csv::strip_cr(line);
        if (line.empty()) continue;
        const auto f = csv::split(line);
        if (f.size() != 6) throw ParseError(row, "row", "expected 6 fields");
        pairs.push_back({{csv::parse_double(f[1], row, "pred_x_ft"), csv::parse_double(f[2], row, "pred_y_ft")},
                         {csv::parse_double(f[3], row, "true_x_ft"), csv::parse_double(f[4], row, "true_y_ft")},
                         f[0]});
    }
    return pairs;
}

void write_phi_csv(const std::filesystem::path& path, std::span<const PhiPoint> curve) {
    auto out = open_out(path);
    out << "tolerance_ft,fraction\n";
    for (const auto& p : curve) out << fmt::format("{},{}\n", p.tolerance_ft, p.fraction);
    finish(out, path);
}

std::vector<PhiPoint> read_phi_csv(const std::filesystem::path& path) {
    auto in = open_in(path, "tolerance_ft,fraction");
    std::vector<PhiPoint> curve;
    std::string line;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        csv::strip_cr(line);
        if (line.empty()) continue;
        const auto f = csv::split(line);
        if (f.size() != 2) throw ParseError(row, "row", "expected 2 fields");
        curve.push_back({csv::parse_double(f[0], row, "tolerance_ft"), csv::parse_double(f[1], row, "fraction")});
    }
    return curve;
}

void write_zone_csv(const std::filesystem::path& path, std::span<const ZoneRow> rows) {
    auto out = open_out(path);
    out << "zone,label,n,accuracy\n";
    for (const auto& r : rows) {
        out << fmt::format("{},{},{},{}\n", r.zone, r.label, r.n, r.accuracy ? fmt::format("{}", *r.accuracy) : "NA");
    }
    finish(out, path);
}

std::vector<ZoneRow> read_zone_csv(const std::filesystem::path& path) {
    auto in = open_in(path, "zone,label,n,accuracy");
    std::vector<ZoneRow> rows;
    std::string line;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        csv::strip_cr(line);
        if (line.empty()) continue;
        const auto f = csv::split(line);
        if (f.size() != 4) throw ParseError(row, "row", "expected 4 fields");
        ZoneRow r;
        r.zone = static_cast<std::size_t>(csv::parse_int(f[0], row, "zone"));
        r.label = f[1];
        r.n = static_cast<std::size_t>(csv::parse_int(f[2], row, "n"));
        if (f[3] != "NA") r.accuracy = csv::parse_double(f[3], row, "accuracy");
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace puckloc
