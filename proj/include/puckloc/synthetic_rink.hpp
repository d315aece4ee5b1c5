#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <opencv2/core.hpp>

#include "puckloc/data_pipeline.hpp"
#include "puckloc/rink_geometry.hpp"

namespace puckloc {

struct PuckKinematics {
    /// Draw the midpoint location uniformly over the ice instead of using `location`.
    bool randomize_location = true;
    /// Draw the velocity (and an optional mid-clip impulse) instead of using `velocity`.
    bool randomize_velocity = true;
    /// Puck position at the clip's temporal midpoint (the label).
    RinkPoint location{100.0, 42.5};
    /// ft/s, used when randomize_velocity is off.
    RinkPoint velocity{0.0, 0.0};
    double max_initial_speed = 60.0;
    double max_speed = 120.0;
    double impulse_probability = 0.3;
};

struct OccluderConfig {
    std::size_t count = 4;
    double width_min_ft = 2.0;
    double width_max_ft = 3.5;
    double height_min_ft = 5.0;
    double height_max_ft = 6.5;
    double max_speed = 25.0;
    /// Occluders start within this distance of the puck's midpoint location.
    double spawn_radius_ft = 30.0;
};

struct CameraConfig {
    /// Pan to follow the puck; when off the camera stays at static_pan_x, zoom 1, no jitter.
    bool follow = true;
    double static_pan_x = 100.0;
    /// Time constant of the first-order pan lag, seconds.
    double pan_lag_s = 0.25;
    double pan_min_x = 30.0;
    double pan_max_x = 170.0;
    double zoom_min = 1.0;
    double zoom_max = 1.3;
    /// Per-frame pan jitter, feet.
    double jitter_std_ft = 0.5;
    /// Camera position: centered on the red line, behind the near boards.
    double height_ft = 70.0;
    double setback_ft = 50.0;
    /// Horizontal extent of the view at the rink center line for zoom 1.
    double view_width_ft = 110.0;
};

struct ScenarioConfig {
    std::uint64_t rng_seed = 0;
    std::size_t clip_len_frames = 60;
    double fps = 60.0;
    std::size_t frame_size = 256;
    PuckKinematics puck;
    OccluderConfig occluders;
    CameraConfig camera;
    std::size_t blur_subsamples = 3;
    /// Fraction of frames in which the puck must project inside the image.
    double min_in_view_fraction = 0.8;
    /// Fraction of frames in which an occluder may cover the puck.
    double max_occluded_fraction = 0.2;
    /// Rendered puck diameter before clamping to 2-5 px.
    double puck_diameter_ft = 1.0;
    std::size_t max_attempts = 64;
};

/// Throws InvalidArgumentError / DomainError describing the first violated constraint.
void validate(const ScenarioConfig& cfg);

/// Continuous image coordinates: pixel (c, r) covers [c, c+1) x [r, r+1).
struct PixelPoint {
    double x = 0.0;
    double y = 0.0;
};

struct CameraState {
    double pan_x = 100.0;
    double zoom = 1.0;
    int image_width = 256;
    int image_height = 256;
    /// Row-major 3x3 map from rink feet (x, y, 1) to homogeneous image coordinates.
    std::array<double, 9> homography{1, 0, 0, 0, 1, 0, 0, 0, 1};
};

/// Perspective projection of a rink point. Returns nullopt when the point is
/// behind the camera or lands outside [0, width] x [0, height].
/// Throws DomainError for a singular homography.
std::optional<PixelPoint> project_point(const CameraState& cam, const RinkPoint& p);

/// Pinhole camera looking at (pan_x, rink center) from the broadcast position.
CameraState make_camera(const CameraConfig& cfg, double pan_x, double zoom, std::size_t frame_size);

struct Occluder {
    RinkPoint position;
    RinkPoint velocity;
    double width_ft = 2.0;
    double height_ft = 5.0;
    cv::Scalar color;
};

/// Everything about a clip except its pixels.
struct Scenario {
    ScenarioConfig config;
    RinkPoint truth;
    std::size_t midpoint_frame = 0;
    /// Puck location at each frame time.
    std::vector<RinkPoint> puck_track;
    std::vector<CameraState> cameras;
    std::vector<Occluder> occluders;
    double in_view_fraction = 0.0;
    double occluded_fraction = 0.0;
    std::size_t attempts = 0;

    /// Puck location at time t seconds relative to the midpoint frame.
    RinkPoint puck_at(double t) const;
    /// Occluder positions at time t.
    std::vector<RinkPoint> occluders_at(double t) const;

    RinkPoint start_velocity;
    double impulse_time = 0.0;
    RinkPoint impulse_velocity;
    bool has_impulse = false;
};

/// Samples puck, occluders and camera path, resampling until the visibility
/// constraints hold. Throws DomainError if max_attempts is exhausted.
Scenario simulate_scenario(const ScenarioConfig& cfg);

struct GeneratedClip {
    std::vector<cv::Mat> frames;  // BGR, frame_size x frame_size
    RinkPoint truth;
    std::vector<CameraState> cameras;
    Scenario scenario;
};

GeneratedClip generate_clip(const ScenarioConfig& cfg);
std::vector<cv::Mat> render_scenario(const Scenario& s);

/// Per-clip seed derived from the dataset seed and the clip index.
std::uint64_t clip_seed(std::uint64_t seed, std::size_t index);

/// Midpoint locations for a dataset: a randomly shifted 2-D Halton sequence,
/// which covers the ice more evenly than independent draws.
RinkPoint dataset_location(std::uint64_t seed, std::size_t index);

struct DatasetSummary {
    Manifest manifest;
    std::vector<EventRecord> events;
    std::filesystem::path events_path;
    std::filesystem::path manifest_path;
};

/// Writes `clips/<clip_id>/frame_%04d.png`, `events.csv`, `scenario.json` and,
/// last, `manifest.csv` under `out_dir`. Clip ids are `clip_%05d`.
DatasetSummary generate_dataset(std::size_t n, const ScenarioConfig& templ, const std::filesystem::path& out_dir);

}  // namespace puckloc
