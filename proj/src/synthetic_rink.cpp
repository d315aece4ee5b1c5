#include "puckloc/synthetic_rink.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

#include "puckloc/config.hpp"
#include "puckloc/errors.hpp"

namespace puckloc {

namespace {

constexpr double kTexturePxPerFt = 4.0;
const cv::Scalar kPuckColor(15, 15, 15);

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

double radical_inverse(std::size_t i, std::size_t base) {
    double f = 1.0;
    double r = 0.0;
    while (i > 0) {
        f /= static_cast<double>(base);
        r += f * static_cast<double>(i % base);
        i /= base;
    }
    return r;
}

// Position on [0, length] of a point moving freely along the unfolded line u,
// bouncing off both ends.
double fold(double u, double length) {
    double m = std::fmod(u, 2.0 * length);
    if (m < 0.0) m += 2.0 * length;
    return m <= length ? m : 2.0 * length - m;
}

double fold_sign(double u, double length) {
    double m = std::fmod(u, 2.0 * length);
    if (m < 0.0) m += 2.0 * length;
    return m <= length ? 1.0 : -1.0;
}

RinkPoint fold_point(const RinkPoint& u) { return {fold(u.x, kRinkLengthFt), fold(u.y, kRinkWidthFt)}; }

RinkPoint random_velocity(std::mt19937_64& rng, double max_speed) {
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> speed(0.0, max_speed);
    const double a = angle(rng);
    const double s = speed(rng);
    return {s * std::cos(a), s * std::sin(a)};
}

RinkPoint cap_speed(RinkPoint v, double max_speed) {
    const double s = std::hypot(v.x, v.y);
    if (s > max_speed && s > 0.0) {
        v.x *= max_speed / s;
        v.y *= max_speed / s;
    }
    return v;
}

struct Projected {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
};

Projected apply(const std::array<double, 9>& h, const RinkPoint& p) {
    const double x = h[0] * p.x + h[1] * p.y + h[2];
    const double y = h[3] * p.x + h[4] * p.y + h[5];
    const double w = h[6] * p.x + h[7] * p.y + h[8];
    return {x / w, y / w, w};
}

// Image pixels per rink foot around p, measured along the rink x axis.
double local_scale(const CameraState& cam, const RinkPoint& p) {
    const auto a = apply(cam.homography, p);
    const auto b = apply(cam.homography, {p.x + 1.0, p.y});
    return std::hypot(b.x - a.x, b.y - a.y);
}

struct EllipseShape {
    double cx = 0.0;
    double cy = 0.0;
    double ax = 0.0;
    double ay = 0.0;
    bool visible = false;
};

// Occluders stand upright on the ice: the ellipse's bottom touches the foot point.
EllipseShape occluder_shape(const CameraState& cam, const Occluder& o, const RinkPoint& at) {
    const auto foot = apply(cam.homography, at);
    if (foot.w <= 0.0) return {};
    const double ppf = local_scale(cam, at);
    EllipseShape e;
    e.ax = 0.5 * o.width_ft * ppf;
    e.ay = 0.5 * o.height_ft * ppf;
    e.cx = foot.x;
    e.cy = foot.y - e.ay;
    e.visible = true;
    return e;
}

bool inside(const EllipseShape& e, double x, double y) {
    if (!e.visible || e.ax <= 0.0 || e.ay <= 0.0) return false;
    const double dx = (x - e.cx) / e.ax;
    const double dy = (y - e.cy) / e.ay;
    return dx * dx + dy * dy <= 1.0;
}

double frame_time(const Scenario& s, std::size_t j) {
    return (static_cast<double>(j) - static_cast<double>(s.midpoint_frame)) / s.config.fps;
}

cv::Point2d texture_px(double x_ft, double y_ft) {
    return {x_ft * kTexturePxPerFt - 0.5, y_ft * kTexturePxPerFt - 0.5};
}

cv::Point fixed_point(const cv::Point2d& p) {
    return {static_cast<int>(std::lround(p.x * 16.0)), static_cast<int>(std::lround(p.y * 16.0))};
}

int fixed_len(double v) { return static_cast<int>(std::lround(v * 16.0)); }

cv::Mat build_rink_texture() {
    const int w = static_cast<int>(kRinkLengthFt * kTexturePxPerFt);
    const int h = static_cast<int>(kRinkWidthFt * kTexturePxPerFt);
    cv::Mat tex(h, w, CV_8UC3, cv::Scalar(245, 240, 236));
    const cv::Scalar red(40, 40, 205);
    const cv::Scalar blue(175, 90, 25);
    const cv::Scalar crease(235, 205, 160);
    const auto vline = [&](double x, double width, const cv::Scalar& c) {
        cv::rectangle(tex, fixed_point(texture_px(x - width / 2, 0)), fixed_point(texture_px(x + width / 2, kRinkWidthFt)),
                      c, cv::FILLED, cv::LINE_AA, 4);
    };
    const auto circle = [&](double x, double y, double r, const cv::Scalar& c, double thick_ft) {
        const int thickness = thick_ft <= 0 ? cv::FILLED : std::max(1, static_cast<int>(thick_ft * kTexturePxPerFt));
        cv::circle(tex, fixed_point(texture_px(x, y)), fixed_len(r * kTexturePxPerFt), c, thickness, cv::LINE_AA, 4);
    };

    circle(11.0, 42.5, 6.0, crease, 0);
    circle(189.0, 42.5, 6.0, crease, 0);
    vline(11.0, 0.5, red);
    vline(189.0, 0.5, red);
    vline(75.0, 1.0, blue);
    vline(125.0, 1.0, blue);
    vline(100.0, 1.0, red);
    circle(100.0, 42.5, 15.0, blue, 0.5);
    circle(100.0, 42.5, 0.75, blue, 0);
    for (double x : {31.0, 169.0}) {
        for (double y : {20.5, 64.5}) {
            circle(x, y, 15.0, red, 0.5);
            circle(x, y, 1.0, red, 0);
        }
    }
    for (double x : {80.0, 120.0}) {
        for (double y : {20.5, 64.5}) circle(x, y, 1.0, red, 0);
    }
    // Dasher boards along the rink edge.
    cv::rectangle(tex, cv::Point(0, 0), cv::Point(w - 1, h - 1), cv::Scalar(0, 190, 235), 2);
    return tex;
}

const cv::Mat& rink_texture() {
    static const cv::Mat tex = build_rink_texture();
    return tex;
}

cv::Mat crowd_background(std::uint64_t seed, int size) {
    std::mt19937_64 rng(splitmix64(seed ^ 0xA5A5A5A5ULL));
    std::uniform_int_distribution<int> base(115, 150);
    std::uniform_int_distribution<int> noise(-20, 20);
    const int b = base(rng), g = base(rng), r = base(rng);
    const int cells = std::max(1, size / 4);
    cv::Mat small(cells, cells, CV_8UC3);
    for (int y = 0; y < cells; ++y) {
        for (int x = 0; x < cells; ++x) {
            const int n = noise(rng);
            small.at<cv::Vec3b>(y, x) = cv::Vec3b(static_cast<uchar>(std::clamp(b + n, 100, 200)),
                                                  static_cast<uchar>(std::clamp(g + n, 100, 200)),
                                                  static_cast<uchar>(std::clamp(r + n, 100, 200)));
        }
    }
    cv::Mat out;
    cv::resize(small, out, cv::Size(size, size), 0, 0, cv::INTER_NEAREST);
    return out;
}

}  // namespace

void validate(const ScenarioConfig& cfg) {
    if (cfg.clip_len_frames < 1) throw InvalidArgumentError("scenario.clip_len_frames must be at least 1");
    if (!(cfg.fps > 0.0)) throw InvalidArgumentError("scenario.fps must be positive");
    if (cfg.frame_size < 16) throw InvalidArgumentError("scenario.frame_size must be at least 16");
    if (cfg.blur_subsamples < 1) throw InvalidArgumentError("scenario.blur_subsamples must be at least 1");
    if (cfg.max_attempts < 1) throw InvalidArgumentError("scenario.max_attempts must be at least 1");
    if (!(cfg.min_in_view_fraction >= 0.0 && cfg.min_in_view_fraction <= 1.0) ||
        !(cfg.max_occluded_fraction >= 0.0 && cfg.max_occluded_fraction <= 1.0)) {
        throw InvalidArgumentError("scenario visibility fractions must lie in [0, 1]");
    }
    if (!(cfg.puck_diameter_ft > 0.0)) throw InvalidArgumentError("scenario.puck_diameter_ft must be positive");

    const auto& p = cfg.puck;
    if (!p.randomize_location) validate(p.location);
    if (!(p.max_speed >= 0.0) || !(p.max_initial_speed >= 0.0)) {
        throw InvalidArgumentError("puck speeds must be non-negative");
    }
    if (!p.randomize_velocity && std::hypot(p.velocity.x, p.velocity.y) > p.max_speed) {
        throw InvalidArgumentError(fmt::format("puck velocity exceeds max_speed {} ft/s", p.max_speed));
    }
    if (!(p.impulse_probability >= 0.0 && p.impulse_probability <= 1.0)) {
        throw InvalidArgumentError("puck.impulse_probability must lie in [0, 1]");
    }

    const auto& o = cfg.occluders;
    if (!(o.width_min_ft > 0.0 && o.width_min_ft <= o.width_max_ft) ||
        !(o.height_min_ft > 0.0 && o.height_min_ft <= o.height_max_ft) || !(o.max_speed >= 0.0) ||
        !(o.spawn_radius_ft >= 0.0)) {
        throw InvalidArgumentError("occluder sizes must satisfy 0 < min <= max and speeds must be non-negative");
    }

    const auto& c = cfg.camera;
    if (!(c.zoom_min > 0.0 && c.zoom_min <= c.zoom_max)) throw InvalidArgumentError("camera zoom range is invalid");
    if (!(c.pan_min_x <= c.pan_max_x)) throw InvalidArgumentError("camera pan range is invalid");
    if (!(c.pan_lag_s > 0.0) || !(c.jitter_std_ft >= 0.0)) {
        throw InvalidArgumentError("camera pan_lag_s must be positive and jitter_std_ft non-negative");
    }
    if (!(c.height_ft > 0.0) || !(c.setback_ft > 0.0) || !(c.view_width_ft > 0.0)) {
        throw InvalidArgumentError("camera height, setback and view width must be positive");
    }
}

std::optional<PixelPoint> project_point(const CameraState& cam, const RinkPoint& p) {
    Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> h(cam.homography.data());
    const double det = h.determinant();
    const double scale = h.cwiseAbs().maxCoeff();
    if (!std::isfinite(det) || scale == 0.0 || std::abs(det) <= 1e-12 * scale * scale * scale) {
        throw DomainError("camera homography is singular");
    }
    const Eigen::Vector3d q = h * Eigen::Vector3d(p.x, p.y, 1.0);
    if (q.z() <= 0.0) return std::nullopt;
    const PixelPoint px{q.x() / q.z(), q.y() / q.z()};
    if (px.x < 0.0 || px.y < 0.0 || px.x > cam.image_width || px.y > cam.image_height) return std::nullopt;
    return px;
}

CameraState make_camera(const CameraConfig& cfg, double pan_x, double zoom, std::size_t frame_size) {
    const Eigen::Vector3d center(kRinkLengthFt / 2.0, kRinkWidthFt + cfg.setback_ft, cfg.height_ft);

    // The optical axis passes through the look-at point on the center line.
    Eigen::Vector2d heading(pan_x - center.x(), kRinkWidthFt / 2.0 - center.y());
    const double tilt = std::atan2(cfg.height_ft, heading.norm());
    heading.normalize();
    const Eigen::Vector3d forward(std::cos(tilt) * heading.x(), std::cos(tilt) * heading.y(), -std::sin(tilt));
    // Image x follows rink x and image y points down, so rink rows and image
    // rows grow together (a mirrored camera frame).
    const Eigen::Vector3d right = Eigen::Vector3d(-forward.y(), forward.x(), 0.0).normalized();
    const Eigen::Vector3d down = right.cross(forward);

    Eigen::Matrix3d rot;
    rot.row(0) = right;
    rot.row(1) = down;
    rot.row(2) = forward;
    const Eigen::Vector3d t = -rot * center;

    const double center_distance = std::hypot(cfg.setback_ft + kRinkWidthFt / 2.0, cfg.height_ft);
    const double s = static_cast<double>(frame_size);
    const double focal = zoom * s * center_distance / cfg.view_width_ft;
    Eigen::Matrix3d k;
    k << focal, 0, s / 2.0, 0, focal, s / 2.0, 0, 0, 1;

    Eigen::Matrix3d rt;
    rt.col(0) = rot.col(0);
    rt.col(1) = rot.col(1);
    rt.col(2) = t;
    const Eigen::Matrix3d h = k * rt;

    CameraState cam;
    cam.pan_x = pan_x;
    cam.zoom = zoom;
    cam.image_width = static_cast<int>(frame_size);
    cam.image_height = static_cast<int>(frame_size);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) cam.homography[static_cast<std::size_t>(r * 3 + c)] = h(r, c);
    }
    return cam;
}

RinkPoint Scenario::puck_at(double t) const {
    RinkPoint u{truth.x + start_velocity.x * t, truth.y + start_velocity.y * t};
    if (has_impulse && t > impulse_time) {
        const RinkPoint ui{truth.x + start_velocity.x * impulse_time, truth.y + start_velocity.y * impulse_time};
        // The new velocity is given on the ice; map it back onto the unfolded line.
        const RinkPoint v{impulse_velocity.x * fold_sign(ui.x, kRinkLengthFt),
                          impulse_velocity.y * fold_sign(ui.y, kRinkWidthFt)};
        u = {ui.x + v.x * (t - impulse_time), ui.y + v.y * (t - impulse_time)};
    }
    return fold_point(u);
}

std::vector<RinkPoint> Scenario::occluders_at(double t) const {
    std::vector<RinkPoint> out;
    out.reserve(occluders.size());
    for (const auto& o : occluders) {
        out.push_back(fold_point({o.position.x + o.velocity.x * t, o.position.y + o.velocity.y * t}));
    }
    return out;
}

Scenario simulate_scenario(const ScenarioConfig& cfg) {
    validate(cfg);
    std::mt19937_64 rng(cfg.rng_seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Scenario s;
    s.config = cfg;
    s.midpoint_frame = cfg.clip_len_frames / 2;
    s.truth = cfg.puck.location;
    if (cfg.puck.randomize_location) s.truth = {unit(rng) * kRinkLengthFt, unit(rng) * kRinkWidthFt};

    const std::size_t n = cfg.clip_len_frames;
    const double clip_end = static_cast<double>(n - 1 - s.midpoint_frame) / cfg.fps;
    static const std::array<cv::Scalar, 4> kJerseys{cv::Scalar(50, 50, 215), cv::Scalar(195, 95, 40),
                                                    cv::Scalar(60, 205, 230), cv::Scalar(40, 160, 60)};

    for (std::size_t attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
        s.attempts = attempt;
        s.has_impulse = false;
        if (cfg.puck.randomize_velocity) {
            s.start_velocity = random_velocity(rng, std::min(cfg.puck.max_initial_speed, cfg.puck.max_speed));
            if (clip_end > 0.0 && unit(rng) < cfg.puck.impulse_probability) {
                s.has_impulse = true;
                s.impulse_time = unit(rng) * clip_end;
                s.impulse_velocity = cap_speed(random_velocity(rng, cfg.puck.max_speed), cfg.puck.max_speed);
            }
        } else {
            s.start_velocity = cfg.puck.velocity;
        }

        s.occluders.clear();
        for (std::size_t k = 0; k < cfg.occluders.count; ++k) {
            Occluder o;
            const double r = cfg.occluders.spawn_radius_ft * std::sqrt(unit(rng));
            const double a = unit(rng) * 2.0 * std::numbers::pi;
            o.position = {std::clamp(s.truth.x + r * std::cos(a), 0.0, kRinkLengthFt),
                          std::clamp(s.truth.y + r * std::sin(a), 0.0, kRinkWidthFt)};
            o.velocity = random_velocity(rng, cfg.occluders.max_speed);
            o.width_ft = cfg.occluders.width_min_ft + unit(rng) * (cfg.occluders.width_max_ft - cfg.occluders.width_min_ft);
            o.height_ft =
                cfg.occluders.height_min_ft + unit(rng) * (cfg.occluders.height_max_ft - cfg.occluders.height_min_ft);
            o.color = kJerseys[static_cast<std::size_t>(unit(rng) * kJerseys.size()) % kJerseys.size()];
            s.occluders.push_back(o);
        }

        s.puck_track.clear();
        s.cameras.clear();
        const auto& cc = cfg.camera;
        double zoom = 1.0;
        double pan = cc.static_pan_x;
        double alpha = 0.0;
        if (cc.follow) {
            zoom = cc.zoom_min + unit(rng) * (cc.zoom_max - cc.zoom_min);
            pan = std::clamp(s.puck_at(frame_time(s, 0)).x + 8.0 * gauss(rng), cc.pan_min_x, cc.pan_max_x);
            alpha = 1.0 - std::exp(-1.0 / (cfg.fps * cc.pan_lag_s));
        }

        std::size_t in_view = 0;
        std::size_t occluded = 0;
        for (std::size_t j = 0; j < n; ++j) {
            const double t = frame_time(s, j);
            const RinkPoint puck = s.puck_at(t);
            s.puck_track.push_back(puck);
            double render_pan = pan;
            if (cc.follow) {
                if (j > 0) pan = std::clamp(pan + alpha * (puck.x - pan), cc.pan_min_x, cc.pan_max_x);
                render_pan = pan + cc.jitter_std_ft * gauss(rng);
            }
            s.cameras.push_back(make_camera(cc, render_pan, zoom, cfg.frame_size));

            const auto px = project_point(s.cameras.back(), puck);
            if (!px) continue;
            ++in_view;
            const auto occ = s.occluders_at(t);
            for (std::size_t k = 0; k < occ.size(); ++k) {
                if (inside(occluder_shape(s.cameras.back(), s.occluders[k], occ[k]), px->x, px->y)) {
                    ++occluded;
                    break;
                }
            }
        }
        s.in_view_fraction = static_cast<double>(in_view) / static_cast<double>(n);
        s.occluded_fraction = static_cast<double>(occluded) / static_cast<double>(n);
        if (s.in_view_fraction >= cfg.min_in_view_fraction && s.occluded_fraction <= cfg.max_occluded_fraction) {
            return s;
        }
    }
    throw DomainError(fmt::format(
        "scenario (seed {}) could not keep the puck in view for {:.0f}% of frames with at most {:.0f}% occluded "
        "after {} attempts",
        cfg.rng_seed, 100.0 * cfg.min_in_view_fraction, 100.0 * cfg.max_occluded_fraction, cfg.max_attempts));
}

std::vector<cv::Mat> render_scenario(const Scenario& s) {
    const auto& cfg = s.config;
    const int size = static_cast<int>(cfg.frame_size);
    const cv::Mat crowd = crowd_background(cfg.rng_seed, size);
    const cv::Mat& tex = rink_texture();
    const std::size_t subs = cfg.blur_subsamples;

    cv::Matx33d to_texture(1.0 / kTexturePxPerFt, 0, 0.5 / kTexturePxPerFt, 0, 1.0 / kTexturePxPerFt,
                           0.5 / kTexturePxPerFt, 0, 0, 1);
    const cv::Matx33d to_cv_pixels(1, 0, -0.5, 0, 1, -0.5, 0, 0, 1);

    std::vector<cv::Mat> frames;
    frames.reserve(s.cameras.size());
    for (std::size_t j = 0; j < s.cameras.size(); ++j) {
        const CameraState& cam = s.cameras[j];
        const cv::Matx33d h(cam.homography.data());
        const cv::Matx33d m = to_cv_pixels * h * to_texture;

        cv::Mat base = crowd.clone();
        cv::warpPerspective(tex, base, cv::Mat(m), base.size(), cv::INTER_LINEAR, cv::BORDER_TRANSPARENT);

        cv::Mat acc(base.size(), CV_64FC3, cv::Scalar::all(0));
        cv::Mat layer;
        for (std::size_t k = 0; k < subs; ++k) {
            const double offset = ((static_cast<double>(k) + 0.5) / static_cast<double>(subs) - 0.5) / cfg.fps;
            const double t = frame_time(s, j) + offset;
            base.copyTo(layer);

            const RinkPoint puck = s.puck_at(t);
            const auto pp = apply(cam.homography, puck);
            if (pp.w > 0.0) {
                const double diameter = std::clamp(local_scale(cam, puck) * cfg.puck_diameter_ft, 2.0, 5.0);
                cv::circle(layer, fixed_point({pp.x - 0.5, pp.y - 0.5}), fixed_len(diameter / 2.0), kPuckColor,
                           cv::FILLED, cv::LINE_AA, 4);
            }

            // Farther occluders first so nearer ones overlap them.
            const auto occ = s.occluders_at(t);
            std::vector<std::size_t> order(occ.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return occ[a].y < occ[b].y; });
            for (std::size_t i : order) {
                const auto e = occluder_shape(cam, s.occluders[i], occ[i]);
                if (!e.visible) continue;
                cv::ellipse(layer, fixed_point({e.cx - 0.5, e.cy - 0.5}), cv::Size(fixed_len(e.ax), fixed_len(e.ay)),
                            0.0, 0.0, 360.0, s.occluders[i].color, cv::FILLED, cv::LINE_AA, 4);
            }
            cv::accumulate(layer, acc);
        }
        cv::Mat frame;
        acc.convertTo(frame, CV_8UC3, 1.0 / static_cast<double>(subs));
        frames.push_back(std::move(frame));
    }
    return frames;
}

GeneratedClip generate_clip(const ScenarioConfig& cfg) {
    GeneratedClip out;
    out.scenario = simulate_scenario(cfg);
    out.frames = render_scenario(out.scenario);
    out.truth = out.scenario.truth;
    out.cameras = out.scenario.cameras;
    return out;
}

std::uint64_t clip_seed(std::uint64_t seed, std::size_t index) {
    return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(index) + 0x632BE59BD9B4E019ULL));
}

RinkPoint dataset_location(std::uint64_t seed, std::size_t index) {
    std::mt19937_64 rng(splitmix64(seed + 0x1B873593ULL));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double shift_x = unit(rng);
    const double shift_y = unit(rng);
    double hx = radical_inverse(index + 1, 2) + shift_x;
    double hy = radical_inverse(index + 1, 3) + shift_y;
    hx -= std::floor(hx);
    hy -= std::floor(hy);
    return {hx * kRinkLengthFt, hy * kRinkWidthFt};
}

DatasetSummary generate_dataset(std::size_t n, const ScenarioConfig& templ, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    if (n < 1) throw InvalidArgumentError("dataset size must be at least 1");
    validate(templ);

    std::error_code ec;
    fs::create_directories(out_dir / "clips", ec);
    if (ec) throw IoError(fmt::format("cannot create '{}': {}", (out_dir / "clips").string(), ec.message()));

    static const std::array<EventType, 3> kTypes{EventType::kShot, EventType::kDump, EventType::kFaceoff};
    const std::vector<int> png_params{cv::IMWRITE_PNG_COMPRESSION, 3};

    DatasetSummary summary;
    for (std::size_t i = 0; i < n; ++i) {
        ScenarioConfig cfg = templ;
        cfg.rng_seed = clip_seed(templ.rng_seed, i);
        if (templ.puck.randomize_location) {
            cfg.puck.location = dataset_location(templ.rng_seed, i);
            cfg.puck.randomize_location = false;
        }
        const GeneratedClip clip = generate_clip(cfg);
        const std::string id = fmt::format("clip_{:05d}", i);
        const fs::path rel = fs::path("clips") / id;
        const fs::path dir = out_dir / rel;
        fs::create_directories(dir, ec);
        if (ec) throw IoError(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
        for (std::size_t f = 0; f < clip.frames.size(); ++f) {
            const fs::path p = dir / FrameDirectoryClip::frame_name(f);
            bool ok = false;
            try {
                ok = cv::imwrite(p.string(), clip.frames[f], png_params);
            } catch (const cv::Exception& e) {
                throw IoError(fmt::format("cannot write '{}': {}", p.string(), e.what()));
            }
            if (!ok) throw IoError(fmt::format("cannot write '{}'", p.string()));
        }
        summary.events.push_back({id, static_cast<std::int64_t>(i), kTypes[i % kTypes.size()], clip.truth});
        summary.manifest[id] = rel;
        spdlog::debug("clip {} truth ({:.3f}, {:.3f}) attempts {}", id, clip.truth.x, clip.truth.y,
                      clip.scenario.attempts);
    }

    summary.events_path = out_dir / "events.csv";
    write_events(summary.events_path, summary.events);

    const fs::path echo = out_dir / "scenario.json";
    {
        std::ofstream out(echo);
        nlohmann::json j;
        j["n"] = n;
        j["scenario"] = templ;
        out << j.dump(2) << '\n';
        if (!out) throw IoError(fmt::format("cannot write '{}'", echo.string()));
    }

    // The manifest marks a complete dataset, so it appears only after everything else.
    summary.manifest_path = out_dir / "manifest.csv";
    const fs::path tmp = out_dir / "manifest.csv.tmp";
    write_manifest(tmp, summary.manifest);
    fs::rename(tmp, summary.manifest_path, ec);
    if (ec) throw IoError(fmt::format("cannot finalize '{}': {}", summary.manifest_path.string(), ec.message()));
    return summary;
}

}  // namespace puckloc
