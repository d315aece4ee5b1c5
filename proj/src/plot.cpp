#include "puckloc/plot.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "puckloc/errors.hpp"

namespace puckloc {

namespace {

const cv::Scalar kWhite(255, 255, 255);
const cv::Scalar kBlack(0, 0, 0);
const cv::Scalar kGrid(225, 225, 225);
const cv::Scalar kCurve(180, 90, 20);
constexpr int kFont = cv::FONT_HERSHEY_SIMPLEX;

void centered_text(cv::Mat& img, const std::string& text, cv::Point at, double scale, int thickness = 1) {
    int baseline = 0;
    const cv::Size sz = cv::getTextSize(text, kFont, scale, thickness, &baseline);
    cv::putText(img, text, {at.x - sz.width / 2, at.y + sz.height / 2}, kFont, scale, kBlack, thickness, cv::LINE_AA);
}

std::string tick_label(double v) {
    std::string s = fmt::format("{:.2f}", v);
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
    return s;
}

// 1, 2 or 5 times a power of ten, giving roughly `target` intervals over span.
double nice_step(double span, int target) {
    const double raw = span / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        if (m * mag >= raw) return m * mag;
    }
    return 10.0 * mag;
}

void write_png(const cv::Mat& img, const std::filesystem::path& path) {
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), img);
    } catch (const cv::Exception& e) {
        throw IoError(fmt::format("cannot write '{}': {}", path.string(), e.what()));
    }
    if (!ok) throw IoError(fmt::format("cannot write '{}'", path.string()));
}

}  // namespace

cv::Mat plot_phi_curve(std::span<const PhiPoint> curve, const std::string& title) {
    const int w = 640, h = 480;
    const int left = 70, right = 20, top = 50, bottom = 60;
    cv::Mat img(h, w, CV_8UC3, kWhite);

    double t_lo = 0.0, t_hi = 50.0;
    if (!curve.empty()) {
        t_lo = std::min(0.0, curve.front().tolerance_ft);
        t_hi = curve.back().tolerance_ft;
    }
    if (t_hi <= t_lo) t_hi = t_lo + 1.0;

    const auto px = [&](double t) { return left + static_cast<int>(std::lround((t - t_lo) / (t_hi - t_lo) * (w - left - right))); };
    const auto py = [&](double f) { return h - bottom - static_cast<int>(std::lround(f * (h - top - bottom))); };

    const double step = nice_step(t_hi - t_lo, 10);
    for (double t = std::ceil(t_lo / step) * step; t <= t_hi + 1e-9; t += step) {
        cv::line(img, {px(t), py(0)}, {px(t), py(1)}, kGrid, 1);
        centered_text(img, tick_label(t), {px(t), py(0) + 15}, 0.4);
    }
    for (int k = 0; k <= 5; ++k) {
        const double f = k / 5.0;
        cv::line(img, {px(t_lo), py(f)}, {px(t_hi), py(f)}, kGrid, 1);
        centered_text(img, tick_label(f), {left - 25, py(f)}, 0.4);
    }
    cv::rectangle(img, {px(t_lo), py(1)}, {px(t_hi), py(0)}, kBlack, 1);

    std::vector<cv::Point> pts;
    for (const auto& p : curve) pts.emplace_back(px(p.tolerance_ft), py(std::clamp(p.fraction, 0.0, 1.0)));
    if (pts.size() > 1) cv::polylines(img, pts, false, kCurve, 2, cv::LINE_AA);
    for (const auto& p : pts) cv::circle(img, p, 3, kCurve, cv::FILLED, cv::LINE_AA);

    centered_text(img, title, {w / 2, top / 2}, 0.6);
    centered_text(img, "tolerance t (ft)", {(left + w - right) / 2, h - 20}, 0.5);
    cv::Mat label(30, 200, CV_8UC3, kWhite);
    centered_text(label, "fraction correct", {100, 15}, 0.5);
    cv::rotate(label, label, cv::ROTATE_90_COUNTERCLOCKWISE);
    label.copyTo(img(cv::Rect(5, (h - 200) / 2, label.cols, label.rows)));
    return img;
}

cv::Mat plot_zone_diagram(std::span<const ZoneRow> rows, std::span<const double> cut_xs, const std::string& title) {
    const double scale = 4.0;
    const int margin = 20, top = 50, bottom = 20;
    const int rink_w = static_cast<int>(kRinkLengthFt * scale);
    const int rink_h = static_cast<int>(kRinkWidthFt * scale);
    cv::Mat img(rink_h + top + bottom, rink_w + 2 * margin, CV_8UC3, kWhite);

    std::vector<double> edges{0.0};
    edges.insert(edges.end(), cut_xs.begin(), cut_xs.end());
    edges.push_back(kRinkLengthFt);
    const auto x_px = [&](double x) { return margin + static_cast<int>(std::lround(x * scale)); };

    for (std::size_t z = 0; z + 1 < edges.size(); ++z) {
        const ZoneRow* row = z < rows.size() ? &rows[z] : nullptr;
        const cv::Rect r(cv::Point(x_px(edges[z]), top), cv::Point(x_px(edges[z + 1]), top + rink_h));
        cv::Scalar fill(235, 235, 235);
        std::string value = "n/a";
        if (row && row->accuracy) {
            // Light red for 0% through light green for 100%.
            const double a = std::clamp(*row->accuracy, 0.0, 1.0);
            fill = cv::Scalar(150 + 50 * a, 150 + 90 * a, 240 - 90 * a);
            value = fmt::format("{:.1f}%", 100.0 * a);
        }
        cv::rectangle(img, r, fill, cv::FILLED);
        const int cx = (r.x + r.x + r.width) / 2;
        if (row) centered_text(img, row->label, {cx, top + rink_h / 2 - 30}, 0.45);
        centered_text(img, value, {cx, top + rink_h / 2}, 0.7, 2);
        if (row) centered_text(img, fmt::format("n={}", row->n), {cx, top + rink_h / 2 + 30}, 0.45);
    }
    for (double x : cut_xs) cv::line(img, {x_px(x), top}, {x_px(x), top + rink_h}, cv::Scalar(175, 90, 25), 3);
    cv::rectangle(img, {x_px(0), top}, {x_px(kRinkLengthFt), top + rink_h}, kBlack, 2);
    centered_text(img, title, {img.cols / 2, top / 2}, 0.6);
    return img;
}

std::vector<std::filesystem::path> render_report_plots(const std::filesystem::path& report_dir,
                                                       const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    const std::vector<std::pair<std::string, std::string>> curves{
        {"phi_overall", "Accuracy vs tolerance (overall)"},
        {"phi_x", "Accuracy vs tolerance (X)"},
        {"phi_y", "Accuracy vs tolerance (Y)"}};
    const std::vector<std::pair<std::string, ZonePartition>> zones{{"zones_3", ZonePartition::three_zone()},
                                                                  {"zones_5", ZonePartition::five_zone()}};
    for (const auto& [name, title] : curves) {
        if (!fs::exists(report_dir / (name + ".csv"))) {
            throw IoError(fmt::format("missing report file '{}'", (report_dir / (name + ".csv")).string()));
        }
    }
    for (const auto& [name, zp] : zones) {
        if (!fs::exists(report_dir / (name + ".csv"))) {
            throw IoError(fmt::format("missing report file '{}'", (report_dir / (name + ".csv")).string()));
        }
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError(fmt::format("cannot create '{}': {}", out_dir.string(), ec.message()));

    std::vector<fs::path> written;
    for (const auto& [name, title] : curves) {
        const auto curve = read_phi_csv(report_dir / (name + ".csv"));
        const fs::path out = out_dir / (name + ".png");
        write_png(plot_phi_curve(curve, title), out);
        written.push_back(out);
    }
    for (const auto& [name, zp] : zones) {
        const auto rows = read_zone_csv(report_dir / (name + ".csv"));
        std::vector<double> cuts = zp.cut_xs();
        if (rows.size() != zp.size()) {
            cuts.clear();
            for (std::size_t i = 1; i < rows.size(); ++i) cuts.push_back(kRinkLengthFt * i / rows.size());
        }
        const fs::path out = out_dir / (name + ".png");
        write_png(plot_zone_diagram(rows, cuts, fmt::format("Zone accuracy ({} zones)", rows.size())), out);
        written.push_back(out);
    }
    return written;
}

}  // namespace puckloc
