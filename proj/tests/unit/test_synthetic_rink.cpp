#include "doctest.h"

#include <cmath>
#include <limits>

#include <opencv2/core.hpp>

#include "puckloc/data_pipeline.hpp"
#include "puckloc/errors.hpp"
#include "puckloc/synthetic_rink.hpp"
#include "support.hpp"

using namespace puckloc;

namespace {

ScenarioConfig static_scenario() {
    ScenarioConfig c = testing::toy_scenario(0);
    c.camera.follow = false;
    c.puck.randomize_location = false;
    c.puck.randomize_velocity = false;
    c.puck.location = {100, 42.5};
    c.puck.velocity = {0, 0};
    c.occluders.count = 0;
    return c;
}

bool same_pixels(const cv::Mat& a, const cv::Mat& b) {
    return a.size() == b.size() && a.type() == b.type() && cv::norm(a, b, cv::NORM_INF) == 0.0;
}

}  // namespace

TEST_CASE("projection matches the homography product") {
    CameraState cam;
    cam.image_width = 640;
    cam.image_height = 480;
    cam.homography = {1.2, 0.1, 5.0, -0.05, 0.9, 3.0, 0.0005, 0.001, 1.0};
    for (const RinkPoint p : {RinkPoint{10, 20}, RinkPoint{100, 42.5}, RinkPoint{180, 80}}) {
        const double w = cam.homography[6] * p.x + cam.homography[7] * p.y + cam.homography[8];
        const double x = (cam.homography[0] * p.x + cam.homography[1] * p.y + cam.homography[2]) / w;
        const double y = (cam.homography[3] * p.x + cam.homography[4] * p.y + cam.homography[5]) / w;
        const auto q = project_point(cam, p);
        REQUIRE(q);
        CHECK(std::abs(q->x - x) < 1e-9);
        CHECK(std::abs(q->y - y) < 1e-9);
    }
}

TEST_CASE("identity-like homography maps rink corners to frame corners") {
    CameraState cam;
    cam.image_width = 400;
    cam.image_height = 170;
    cam.homography = {2, 0, 0, 0, 2, 0, 0, 0, 1};
    const auto tl = project_point(cam, {0, 0});
    const auto br = project_point(cam, {200, 85});
    REQUIRE(tl);
    REQUIRE(br);
    CHECK(tl->x == 0.0);
    CHECK(tl->y == 0.0);
    CHECK(br->x == 400.0);
    CHECK(br->y == 170.0);
    cam.image_width = 399;
    CHECK_FALSE(project_point(cam, {200, 85}));
}

TEST_CASE("points behind the camera are out of view") {
    CameraState cam;
    cam.homography = {1, 0, 0, 0, 1, 0, 0, 0.02, -0.5};
    CHECK_FALSE(project_point(cam, {10, 10}));
    CHECK(project_point(cam, {10, 40}));

    cam.homography = {1, 2, 3, 2, 4, 6, 0, 0, 1};
    CHECK_THROWS_AS(project_point(cam, {10, 10}), DomainError);
}

TEST_CASE("broadcast camera orientation") {
    const CameraConfig cc;
    const CameraState cam = make_camera(cc, 100, 1.0, 256);
    const auto center = project_point(cam, {100, 42.5});
    REQUIRE(center);
    CHECK(std::abs(center->x - 128) < 1e-9);
    CHECK(std::abs(center->y - 128) < 1e-9);
    // Rink x grows to the right, the near boards sit lower in the image.
    const auto right = project_point(cam, {120, 42.5});
    const auto near = project_point(cam, {100, 70});
    REQUIRE(right);
    REQUIRE(near);
    CHECK(right->x > center->x);
    CHECK(near->y > center->y);
    // Both boards at center ice are in frame, the far one above the center row.
    const auto far_b = project_point(cam, {100, 0});
    const auto near_b = project_point(cam, {100, 85});
    REQUIRE(far_b);
    REQUIRE(near_b);
    CHECK(far_b->y < center->y);
    CHECK(near_b->y > center->y);
    CHECK(near_b->y - center->y > center->y - far_b->y);
    // Zooming in pushes off-center points outward.
    const auto zoomed = project_point(make_camera(cc, 100, 1.3, 256), {120, 42.5});
    REQUIRE(zoomed);
    CHECK(zoomed->x > right->x);
    // Panning moves the look-at point to the image center.
    const auto panned = project_point(make_camera(cc, 60, 1.0, 256), {60, 42.5});
    REQUIRE(panned);
    CHECK(std::abs(panned->x - 128) < 1e-9);
}

TEST_CASE("degenerate static scenario renders identical frames") {
    const auto clip = generate_clip(static_scenario());
    CHECK(clip.truth == RinkPoint{100, 42.5});
    REQUIRE(clip.frames.size() == 60);
    for (const auto& f : clip.frames) {
        CHECK(f.rows == 64);
        CHECK(f.type() == CV_8UC3);
        CHECK(same_pixels(f, clip.frames[0]));
    }
}

TEST_CASE("generation is deterministic per seed") {
    const auto a = generate_clip(testing::toy_scenario(11));
    const auto b = generate_clip(testing::toy_scenario(11));
    CHECK(a.truth == b.truth);
    REQUIRE(a.frames.size() == b.frames.size());
    for (std::size_t i = 0; i < a.frames.size(); ++i) CHECK(same_pixels(a.frames[i], b.frames[i]));
    const auto c = generate_clip(testing::toy_scenario(12));
    CHECK_FALSE(c.truth == a.truth);
}

TEST_CASE("puck tracks stay on the ice and the midpoint carries the label") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        ScenarioConfig c;
        c.rng_seed = seed;
        c.puck.impulse_probability = 0.8;
        const Scenario s = simulate_scenario(c);
        REQUIRE(s.puck_track.size() == c.clip_len_frames);
        CHECK(s.puck_track[s.midpoint_frame] == s.truth);
        for (const auto& p : s.puck_track) CHECK(is_on_rink(p));
        for (const auto& o : s.occluders_at(0.5)) CHECK(is_on_rink(o));
        CHECK(s.in_view_fraction >= 0.8);
        CHECK(s.occluded_fraction <= 0.2);
        CHECK(s.cameras.size() == c.clip_len_frames);
        // Speeds never exceed the cap (finite differences between frames).
        for (std::size_t j = 1; j < s.puck_track.size(); ++j) {
            const double d = std::hypot(s.puck_track[j].x - s.puck_track[j - 1].x,
                                        s.puck_track[j].y - s.puck_track[j - 1].y);
            CHECK(d * c.fps <= c.puck.max_speed + 1e-9);
        }
    }
}

TEST_CASE("impossible visibility constraints are reported") {
    ScenarioConfig c = testing::toy_scenario(1);
    c.camera.follow = false;
    c.camera.static_pan_x = 30;
    c.puck.randomize_location = false;
    c.puck.randomize_velocity = false;
    c.puck.location = {195, 42.5};
    c.max_attempts = 3;
    CHECK_THROWS_AS(simulate_scenario(c), DomainError);
}

TEST_CASE("scenario configs are validated") {
    ScenarioConfig c;
    c.clip_len_frames = 0;
    CHECK_THROWS(validate(c));
    c = ScenarioConfig{};
    c.fps = 0;
    CHECK_THROWS(validate(c));
    c = ScenarioConfig{};
    c.min_in_view_fraction = 1.5;
    CHECK_THROWS(validate(c));
    c = ScenarioConfig{};
    c.puck.location = {300, 10};
    c.puck.randomize_location = false;
    CHECK_THROWS(validate(c));
    CHECK_NOTHROW(validate(ScenarioConfig{}));
}

TEST_CASE("default truths occupy every zone") {
    const ZonePartition three = ZonePartition::three_zone();
    std::vector<int> counts(3, 0);
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        ScenarioConfig c;
        c.rng_seed = seed;
        ++counts[three.index_of(simulate_scenario(c).truth.x)];
    }
    for (int n : counts) CHECK(n >= 200);

    std::vector<int> ds(3, 0);
    for (std::size_t i = 0; i < 1000; ++i) ++ds[three.index_of(dataset_location(3, i).x)];
    for (int n : ds) CHECK(n >= 200);
}

TEST_CASE("dataset truths are spread out") {
    std::vector<RinkPoint> pts;
    ScenarioConfig templ;
    templ.rng_seed = 7;
    for (std::size_t i = 0; i < 500; ++i) {
        ScenarioConfig c = templ;
        c.rng_seed = clip_seed(templ.rng_seed, i);
        c.puck.location = dataset_location(templ.rng_seed, i);
        c.puck.randomize_location = false;
        pts.push_back(simulate_scenario(c).truth);
    }
    double total = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < pts.size(); ++j) {
            if (i != j) best = std::min(best, std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y));
        }
        total += best;
    }
    const double mean_nn = total / static_cast<double>(pts.size());
    MESSAGE("mean nearest-neighbour distance " << mean_nn << " ft");
    CHECK(mean_nn > 3.0);
}

TEST_CASE("the rendered puck sits at its projected location") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        ScenarioConfig c;
        c.rng_seed = seed;
        c.frame_size = 256;
        c.clip_len_frames = 3;
        c.occluders.count = 0;
        c.puck.randomize_velocity = false;
        const auto clip = generate_clip(c);
        const auto& cam = clip.cameras[1];
        const auto px = project_point(cam, clip.truth);
        REQUIRE(px);
        const cv::Mat& f = clip.frames[1];
        // Darkness-weighted centroid in a window around the projection.
        double wx = 0, wy = 0, w = 0;
        const int cx = static_cast<int>(px->x), cy = static_cast<int>(px->y);
        for (int r = std::max(0, cy - 6); r <= std::min(f.rows - 1, cy + 6); ++r) {
            for (int col = std::max(0, cx - 6); col <= std::min(f.cols - 1, cx + 6); ++col) {
                const auto v = f.at<cv::Vec3b>(r, col);
                const int m = std::max({v[0], v[1], v[2]});
                if (m >= 80) continue;
                const double weight = 80.0 - m;
                wx += weight * (col + 0.5);
                wy += weight * (r + 0.5);
                w += weight;
            }
        }
        REQUIRE(w > 0);
        CHECK(std::hypot(wx / w - px->x, wy / w - px->y) <= 1.5);
    }
}

TEST_CASE("the camera follows the puck across the rink") {
    double lo = 1e9, hi = -1e9;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        ScenarioConfig c;
        c.rng_seed = seed;
        for (const auto& cam : simulate_scenario(c).cameras) {
            lo = std::min(lo, cam.pan_x);
            hi = std::max(hi, cam.pan_x);
        }
    }
    CHECK(hi - lo >= 120.0);
}

TEST_CASE("dataset seeds and locations are reproducible") {
    CHECK(clip_seed(7, 3) == clip_seed(7, 3));
    CHECK(clip_seed(7, 3) != clip_seed(7, 4));
    CHECK(clip_seed(7, 3) != clip_seed(8, 3));
    CHECK(dataset_location(7, 10) == dataset_location(7, 10));
    for (std::size_t i = 0; i < 200; ++i) CHECK(is_on_rink(dataset_location(1, i)));
}

TEST_CASE("dataset generation writes a complete directory") {
    testing::TempDir dir("synth");
    ScenarioConfig c = testing::toy_scenario(5);
    c.clip_len_frames = 16;
    const auto s = generate_dataset(10, c, dir.path());
    CHECK(s.manifest.size() == 10);
    CHECK(s.events.size() == 10);
    CHECK(std::filesystem::exists(dir / "scenario.json"));
    CHECK(std::filesystem::exists(dir / "manifest.csv"));
    std::size_t clips = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "clips")) {
        ++clips;
        CHECK(FrameDirectoryClip(e.path()).frame_count() == 16);
    }
    CHECK(clips == 10);
    CHECK(load_events(s.events_path).records == s.events);

    testing::TempDir again("synth");
    generate_dataset(10, c, again.path());
    CHECK(testing::slurp(dir / "events.csv") == testing::slurp(again / "events.csv"));
    CHECK(testing::slurp(dir / "clips/clip_00003/frame_0007.png") ==
          testing::slurp(again / "clips/clip_00003/frame_0007.png"));
}
