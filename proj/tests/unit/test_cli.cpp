#include "doctest.h"

#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "json.hpp"

#include "puckloc/cli.hpp"
#include "puckloc/model.hpp"
#include "puckloc/plot.hpp"
#include "support.hpp"

using namespace puckloc;
using nlohmann::json;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), {"--log-level", "warn"});
    std::ostringstream out, err;
    Outcome o;
    o.code = cli::run(args, out, err);
    o.out = out.str();
    o.err = err.str();
    return o;
}

json small_run(const std::filesystem::path& root) {
    return {{"seed", 3},
            {"paths", {{"data_dir", (root / "data").string()}, {"run_dir", (root / "run").string()}}},
            {"train", {{"learning_rate", 0.003}, {"sigma", 2}, {"batch_size", 5}, {"max_epochs", 2}, {"patience", 0}}},
            {"scenario", {{"frame_size", 64}, {"clip_len_frames", 20}}},
            {"synth_clips", 10},
            {"split", {{"mode", "all"}}}};
}

std::string write_config(const testing::TempDir& dir, const json& j, const std::string& name = "run.json") {
    testing::spit(dir / name, j.dump(2));
    return (dir / name).string();
}

}  // namespace

TEST_CASE("argument errors exit with the user error code") {
    CHECK(run_cli({}).code == cli::kUserError);
    CHECK(run_cli({"fly"}).code == cli::kUserError);
    CHECK(run_cli({"predict"}).code == cli::kUserError);
    CHECK(run_cli({"synth-gen", "--n", "many"}).code == cli::kUserError);
    CHECK(run_cli({"--help"}).code == cli::kOk);
}

TEST_CASE("a bad config file is a user error") {
    testing::TempDir dir("cli");
    const auto cfg = write_config(dir, json{{"sampling", 1}});
    const Outcome o = run_cli({"synth-gen", "--config", cfg});
    CHECK(o.code == cli::kUserError);
    CHECK(o.err.find("unknown key 'sampling'") != std::string::npos);
}

TEST_CASE("synth-gen writes a dataset and refuses unwritable targets") {
    testing::TempDir dir("cli");
    const auto cfg = write_config(dir, small_run(dir.path()));
    const Outcome o = run_cli({"synth-gen", "--config", cfg});
    CHECK(o.code == cli::kOk);
    std::size_t clips = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir / "data/clips")) ++clips;
    CHECK(clips == 10);
    CHECK(std::filesystem::exists(dir / "data/manifest.csv"));

    testing::spit(dir / "blocker", "a regular file");
    const Outcome bad = run_cli({"synth-gen", "--config", cfg, "--out", (dir / "blocker/data").string()});
    CHECK(bad.code != cli::kOk);
    CHECK_FALSE(std::filesystem::exists(dir / "blocker/data/manifest.csv"));

    // The same seed reproduces the manifest and events byte for byte.
    const Outcome again = run_cli({"synth-gen", "--config", cfg, "--out", (dir / "again").string()});
    CHECK(again.code == cli::kOk);
    CHECK(testing::slurp(dir / "data/events.csv") == testing::slurp(dir / "again/events.csv"));
    const Outcome other = run_cli({"synth-gen", "--config", cfg, "--seed", "4", "--out", (dir / "other").string()});
    CHECK(other.code == cli::kOk);
    CHECK(testing::slurp(dir / "data/events.csv") != testing::slurp(dir / "other/events.csv"));
}

TEST_CASE("train, eval, predict and plot on a small synthetic set") {
    testing::TempDir dir("cli");
    const json run = small_run(dir.path());
    const auto cfg = write_config(dir, run);
    REQUIRE(run_cli({"synth-gen", "--config", cfg}).code == cli::kOk);

    const Outcome t = run_cli({"train", "--config", cfg});
    REQUIRE(t.code == cli::kOk);
    for (const char* f : {"config.json", "split.json", "history.csv", "checkpoint_best.bin", "checkpoint_last.bin"}) {
        CHECK(std::filesystem::exists(dir / "run" / f));
    }
    CHECK(read_archive(dir / "run/checkpoint_last.bin").step == 4);

    // The echo alone reproduces the run.
    const Outcome echo = run_cli({"train", "--config", (dir / "run/config.json").string(), "--out",
                                  (dir / "echo").string()});
    REQUIRE(echo.code == cli::kOk);
    CHECK(testing::slurp(dir / "run/history.csv") == testing::slurp(dir / "echo/history.csv"));

    json longer = run;
    longer["train"]["max_epochs"] = 3;
    const auto cfg3 = write_config(dir, longer, "run3.json");
    const Outcome resumed = run_cli({"train", "--config", cfg3, "--resume"});
    REQUIRE(resumed.code == cli::kOk);
    CHECK(read_archive(dir / "run/checkpoint_last.bin").step == 6);
    CHECK(read_history(dir / "run/history.csv").size() == 3);

    const Outcome e = run_cli({"eval", "--config", cfg, "--zones", "5"});
    REQUIRE(e.code == cli::kOk);
    CHECK(e.out.find("AUC overall") != std::string::npos);
    CHECK(e.out.find("offensive-deep") != std::string::npos);
    for (const char* f : {"phi_overall.csv", "phi_x.csv", "phi_y.csv", "auc.csv", "zones_3.csv", "zones_5.csv",
                          "predictions.csv", "auc_table.csv"}) {
        CHECK(std::filesystem::exists(dir / "run/report" / f));
    }
    CHECK(testing::slurp(dir / "run/report/auc_table.csv").rfind("sigma,auc_overall,auc_x,auc_y\n2,", 0) == 0);

    const std::string clip = (dir / "data/clips/clip_00002").string();
    const Outcome p = run_cli({"predict", "--config", cfg, "--clip", clip, "--heatmap", (dir / "hm.png").string()});
    REQUIRE(p.code == cli::kOk);
    double x = -1, y = -1;
    char zone[64] = {};
    CHECK(std::sscanf(p.out.c_str(), "%lf,%lf,%63s", &x, &y, zone) == 3);
    CHECK(is_on_rink({x, y}));
    CHECK((std::string(zone) == "defensive" || std::string(zone) == "neutral" || std::string(zone) == "offensive"));
    const cv::Mat hm = cv::imread((dir / "hm.png").string(), cv::IMREAD_UNCHANGED);
    CHECK(hm.rows == 16);
    CHECK(hm.cols == 16);
    CHECK(hm.type() == CV_8UC1);

    std::filesystem::create_directories(dir / "corrupt");
    for (int i = 0; i < 10; ++i) testing::spit(dir / "corrupt" / FrameDirectoryClip::frame_name(i), "junk");
    CHECK(run_cli({"predict", "--config", cfg, "--clip", (dir / "corrupt").string()}).code == cli::kUserError);
    CHECK(run_cli({"predict", "--config", cfg, "--clip", (dir / "nowhere").string()}).code == cli::kUserError);

    const Outcome pl = run_cli({"plot", "--report", (dir / "run/report").string(), "--out", (dir / "figs").string()});
    REQUIRE(pl.code == cli::kOk);
    const Outcome pl2 = run_cli({"plot", "--report", (dir / "run/report").string(), "--out", (dir / "figs2").string()});
    REQUIRE(pl2.code == cli::kOk);
    for (const char* f : {"phi_overall.png", "phi_x.png", "phi_y.png", "zones_3.png", "zones_5.png"}) {
        REQUIRE(std::filesystem::exists(dir / "figs" / f));
        CHECK(testing::slurp(dir / "figs" / f) == testing::slurp(dir / "figs2" / f));
    }

    // A checkpoint from another architecture is refused when a config is given.
    json paper = run;
    paper["model"] = {{"scale", "paper"}};
    const auto cfgp = write_config(dir, paper, "paper.json");
    CHECK(run_cli({"eval", "--config", cfgp, "--checkpoint", (dir / "run/checkpoint_best.bin").string()}).code ==
          cli::kUserError);
}

TEST_CASE("missing inputs are user errors") {
    testing::TempDir dir("cli");
    const auto cfg = write_config(dir, small_run(dir.path()));
    const Outcome t = run_cli({"train", "--config", cfg});
    CHECK(t.code == cli::kUserError);
    CHECK(t.err.find((dir / "data/events.csv").string()) != std::string::npos);
    CHECK(run_cli({"eval", "--config", cfg}).code == cli::kUserError);
    CHECK(run_cli({"plot", "--report", (dir / "none").string()}).code == cli::kUserError);
    CHECK(run_cli({"train", "--config", cfg, "--resume"}).code == cli::kUserError);
}

TEST_CASE("an empty test split fails evaluation") {
    testing::TempDir dir("cli");
    json run = small_run(dir.path());
    run["split"] = {{"mode", "fractions"}, {"train", 0.9}, {"val", 0.1}, {"test", 0.0}};
    run["train"]["max_epochs"] = 1;
    const auto cfg = write_config(dir, run);
    REQUIRE(run_cli({"synth-gen", "--config", cfg}).code == cli::kOk);
    REQUIRE(run_cli({"train", "--config", cfg}).code == cli::kOk);
    const Outcome e = run_cli({"eval", "--config", cfg});
    CHECK(e.code == cli::kUserError);
    CHECK(e.err.find("test split is empty") != std::string::npos);
}

TEST_CASE("grid command writes its table") {
    testing::TempDir dir("cli");
    json run = small_run(dir.path());
    run["train"]["max_epochs"] = 1;
    run["grid"] = {{"sigmas", {2}}, {"modes", {"random_uniform", "constant_interval"}}};
    const auto cfg = write_config(dir, run);
    REQUIRE(run_cli({"synth-gen", "--config", cfg}).code == cli::kOk);
    const Outcome g = run_cli({"grid", "--config", cfg});
    REQUIRE(g.code == cli::kOk);
    const std::string csv = testing::slurp(dir / "run/grid/grid.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(csv.find("constant_interval,2,") != std::string::npos);
}

TEST_CASE("plots render degenerate inputs") {
    std::vector<PhiPoint> one{{5.0, 0.4}};
    const cv::Mat img = plot_phi_curve(one, "single point");
    CHECK(img.cols == 640);
    CHECK(img.rows == 480);
    const cv::Mat empty = plot_phi_curve({}, "empty");
    CHECK_FALSE(empty.empty());

    testing::TempDir dir("plot");
    testing::spit(dir / "phi_overall.csv", "tolerance_ft,fraction\n7,0.5\n");
    testing::spit(dir / "phi_x.csv", "tolerance_ft,fraction\n7,0.75\n");
    testing::spit(dir / "phi_y.csv", "tolerance_ft,fraction\n7,1\n");
    testing::spit(dir / "zones_3.csv", "zone,label,n,accuracy\n0,defensive,2,0.5\n1,neutral,0,NA\n2,offensive,1,1\n");
    testing::spit(dir / "zones_5.csv",
                  "zone,label,n,accuracy\n0,a,1,1\n1,b,0,NA\n2,c,0,NA\n3,d,0,NA\n4,e,2,0\n");
    const Outcome o = run_cli({"plot", "--report", dir.path().string()});
    CHECK(o.code == cli::kOk);
    CHECK(std::filesystem::exists(dir / "phi_x.png"));
    CHECK(std::filesystem::exists(dir / "zones_5.png"));
}
