#include "doctest.h"

#include <cmath>
#include <limits>

#include "json.hpp"

#include "puckloc/errors.hpp"
#include "puckloc/training.hpp"
#include "support.hpp"

using namespace puckloc;

namespace {

TrainConfig small_config() {
    TrainConfig c;
    c.learning_rate = 1e-3;
    c.batch_size = 3;
    c.max_epochs = 3;
    c.patience = 0;
    c.sigma = 2;
    c.sampling.count = ModelConfig::toy().frames;
    c.seed = 5;
    return c;
}

const ClipDataset& six_clips() {
    static const ClipDataset ds = testing::synthetic_dataset(6, 31);
    return ds;
}

}  // namespace

TEST_CASE("MSE loss basics") {
    const Heatmap target = render_target({3.0, SigmaUnit::kCells, false, 8, 8}, {4, 4});
    std::vector<Heatmap> t{target};
    CHECK(mse_heatmap_loss(t, t) == 0.0);
    Heatmap shifted = target;
    for (double& v : shifted.values()) v += 0.1;
    std::vector<Heatmap> p{shifted};
    CHECK(std::abs(mse_heatmap_loss(p, t) - 0.01) < 1e-15);
    CHECK(mse_heatmap_loss(p, t) >= 0.0);
    std::vector<Heatmap> wrong{Heatmap(4, 8)};
    CHECK_THROWS_AS(mse_heatmap_loss(wrong, t), ShapeError);
}

TEST_CASE("MSE loss matches a double-loop oracle") {
    const Tensor pred = testing::random_tensor({2, 4, 4}, 17, 0, 1);
    const Tensor target = testing::random_tensor({2, 4, 4}, 18, 0, 1);
    double oracle = 0;
    for (std::size_t n = 0; n < 2; ++n) {
        for (std::size_t r = 0; r < 4; ++r) {
            for (std::size_t c = 0; c < 4; ++c) {
                const std::size_t i = (n * 4 + r) * 4 + c;
                oracle += (pred[i] - target[i]) * (pred[i] - target[i]);
            }
        }
    }
    oracle /= 32.0;
    Tensor grad;
    CHECK(std::abs(mse_heatmap_loss(pred, target, &grad) - oracle) < 1e-7);

    std::vector<Heatmap> hp, ht;
    for (std::size_t n = 0; n < 2; ++n) {
        hp.emplace_back(4, 4, std::vector<double>(pred.values().begin() + n * 16, pred.values().begin() + (n + 1) * 16));
        ht.emplace_back(4, 4,
                        std::vector<double>(target.values().begin() + n * 16, target.values().begin() + (n + 1) * 16));
    }
    CHECK(std::abs(mse_heatmap_loss(hp, ht) - oracle) < 1e-7);

    // Gradient against central differences.
    REQUIRE(grad.shape() == pred.shape());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        Tensor up = pred, down = pred;
        up[i] += 1e-6;
        down[i] -= 1e-6;
        const double fd = (mse_heatmap_loss(up, target) - mse_heatmap_loss(down, target)) / 2e-6;
        CHECK(std::abs(fd - grad[i]) < 1e-8);
    }
}

TEST_CASE("training configs are validated") {
    TrainConfig c = small_config();
    CHECK_NOTHROW(validate(c));
    c.batch_size = 0;
    CHECK_THROWS_AS(validate(c), InvalidArgumentError);
    c = small_config();
    c.sigma = 0;
    CHECK_THROWS_AS(validate(c), InvalidArgumentError);
    c = small_config();
    c.learning_rate = -1;
    CHECK_THROWS_AS(validate(c), InvalidArgumentError);
    c = small_config();
    c.frozen_prefix = 12;
    CHECK_THROWS(validate(c));
}

TEST_CASE("batches stack clips and targets") {
    const ClipDataset& ds = six_clips();
    const ModelConfig mc = ModelConfig::toy();
    const TrainConfig cfg = small_config();
    const std::vector<std::size_t> idx{4, 1};
    std::vector<SamplingPolicy> pol(2, cfg.sampling);
    const Batch b = make_batch(ds, idx, pol, Normalization{}, mc, target_spec(cfg, mc));
    CHECK(b.inputs.shape() == Shape{2, 3, 8, 64, 64});
    CHECK(b.targets.shape() == Shape{2, 16, 16});
    CHECK(b.clip_ids == std::vector<std::string>{ds[4].clip_id, ds[1].clip_id});
    // The target peak sits at the truth's cell.
    const auto t = make_scaling_transform(16, 16);
    Heatmap h(16, 16, std::vector<double>(b.targets.values().begin(), b.targets.values().begin() + 256));
    const RinkPoint decoded = decode_to_rink(h, t).point;
    CHECK(std::abs(decoded.x - ds[4].truth.x) <= quantization_bound(t).x);
    CHECK(std::abs(decoded.y - ds[4].truth.y) <= quantization_bound(t).y);

    CHECK(sampling_seed(1, 2, 3) != sampling_seed(1, 3, 3));
    CHECK(sampling_seed(1, 2, 3) != sampling_seed(1, 2, 4));
    CHECK(eval_sampling_seed(1, "a") == eval_sampling_seed(1, "a"));
    CHECK(eval_sampling_seed(1, "a") != eval_sampling_seed(1, "b"));
}

TEST_CASE("a non-finite loss raises a divergence error") {
    Model m(ModelConfig::toy(), 1);
    Trainer trainer(m, small_config());
    Tensor x = testing::random_tensor({1, 3, 8, 64, 64}, 3);
    x[100] = std::numeric_limits<double>::quiet_NaN();
    const auto before = checksum(m.state().params.back()->value);
    try {
        trainer.step(x, Tensor({1, 16, 16}), 4, 2);
        FAIL("expected divergence");
    } catch (const DivergenceError& e) {
        CHECK(e.epoch() == 4);
        CHECK(e.batch_index() == 2);
    }
    CHECK(checksum(m.state().params.back()->value) == before);
    CHECK(trainer.optimizer().steps() == 0);
}

TEST_CASE("zero learning rate keeps the loss constant") {
    TrainConfig cfg = small_config();
    cfg.learning_rate = 0;
    cfg.freeze_bn_stats = true;
    cfg.max_epochs = 4;
    cfg.sampling.mode = SamplingMode::kConstantInterval;
    cfg.sampling.interval = 7;
    Model m(ModelConfig::toy(), 9);
    const auto before = checksum(m.state().params.front()->value);
    const TrainResult r = train(m, six_clips(), six_clips(), cfg);
    REQUIRE(r.history.size() == 4);
    for (const auto& row : r.history) CHECK(std::abs(row.train_loss - r.history[0].train_loss) < 1e-9);
    CHECK(checksum(m.state().params.front()->value) == before);
}

TEST_CASE("training writes history and checkpoints, and resume is exact") {
    const TrainConfig cfg = small_config();
    testing::TempDir full("train"), split("train");

    Model a(ModelConfig::toy(), 3);
    TrainOptions oa;
    oa.run_dir = full.path();
    const TrainResult ra = train(a, six_clips(), six_clips(), cfg, oa);
    REQUIRE(ra.history.size() == 3);
    CHECK(ra.steps == 6);
    CHECK(std::filesystem::exists(full / "checkpoint_best.bin"));
    CHECK(std::filesystem::exists(full / "checkpoint_last.bin"));
    const auto hist = read_history(full / "history.csv");
    REQUIRE(hist.size() == 3);
    CHECK(hist[2].train_loss == ra.history[2].train_loss);
    CHECK(hist[1].val_auc.overall == ra.history[1].val_auc.overall);

    Model b(ModelConfig::toy(), 3);
    TrainOptions ob;
    ob.run_dir = split.path();
    ob.stop_after_epoch = 2;
    const TrainResult first = train(b, six_clips(), six_clips(), cfg, ob);
    CHECK(first.history.size() == 2);
    CHECK(read_archive(split / "checkpoint_last.bin").step == 4);

    Model c(ModelConfig::toy(), 999);
    TrainOptions oc;
    oc.run_dir = split.path();
    oc.resume = true;
    const TrainResult resumed = train(c, six_clips(), six_clips(), cfg, oc);
    REQUIRE(resumed.history.size() == 3);
    CHECK(resumed.steps == 6);
    CHECK(std::abs(resumed.history[2].train_loss - ra.history[2].train_loss) < 1e-9);
    CHECK(resumed.history[2].val_auc.overall == ra.history[2].val_auc.overall);
    CHECK(testing::slurp(full / "history.csv") == testing::slurp(split / "history.csv"));
    CHECK(resumed.best_epoch == ra.best_epoch);

    const LoadedModel loaded = load_checkpoint(full / "checkpoint_best.bin");
    CHECK(loaded.train.sigma == cfg.sigma);
    CHECK(loaded.train.seed == cfg.seed);
    const Tensor x = testing::random_tensor({1, 3, 8, 64, 64}, 4);
    CHECK(loaded.model->forward(x, Mode::kEval) == a.forward(x, Mode::kEval));

    TrainOptions missing;
    missing.run_dir = full / "nothing";
    missing.resume = true;
    Model d(ModelConfig::toy(), 3);
    CHECK_THROWS_AS(train(d, six_clips(), six_clips(), cfg, missing), IoError);
}

TEST_CASE("early stopping and best-weight restore") {
    TrainConfig cfg = small_config();
    cfg.learning_rate = 0;
    cfg.max_epochs = 20;
    cfg.patience = 2;
    cfg.freeze_bn_stats = true;
    cfg.sampling.mode = SamplingMode::kConstantInterval;
    Model m(ModelConfig::toy(), 9);
    const TrainResult r = train(m, six_clips(), six_clips(), cfg);
    // Nothing changes, so epoch 1 stays best and two more epochs end the run.
    CHECK(r.history.size() == 3);
    CHECK(r.best_epoch == 1);
    CHECK(r.early_stopped);
}

TEST_CASE("training rejects mismatched inputs") {
    Model m(ModelConfig::toy(), 1);
    TrainConfig cfg = small_config();
    CHECK_THROWS_AS(train(m, ClipDataset{}, six_clips(), cfg), InvalidArgumentError);
    CHECK_THROWS_AS(train(m, six_clips(), ClipDataset{}, cfg), InvalidArgumentError);
    cfg.sampling.count = 4;
    CHECK_THROWS_AS(train(m, six_clips(), six_clips(), cfg), InvalidArgumentError);
}

TEST_CASE("predictions cover every clip") {
    Model m(ModelConfig::toy(), 2);
    SamplingPolicy p = small_config().sampling;
    const auto pairs = predict_dataset(m, six_clips(), p, Normalization{}, 4);
    REQUIRE(pairs.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(pairs[i].clip_id == six_clips()[i].clip_id);
        CHECK(pairs[i].truth == six_clips()[i].truth);
        CHECK(is_on_rink(pairs[i].predicted));
    }
    CHECK(predict_dataset(m, six_clips(), p, Normalization{}, 4)[3].predicted == pairs[3].predicted);
    const ClipPrediction cp = predict_clip(m, *six_clips()[0].frames, p, Normalization{});
    CHECK(cp.heatmap.width() == 16);
    CHECK(is_on_rink(cp.decoded.point));
}

TEST_CASE("experiment grid emits one row per setting") {
    TrainConfig cfg = small_config();
    cfg.max_epochs = 1;
    const std::vector<double> sigmas{2.0};
    const std::vector<SamplingMode> modes{SamplingMode::kRandomUniform, SamplingMode::kConstantInterval};
    testing::TempDir dir("grid");
    GridOptions opts;
    opts.out_dir = dir.path();
    const auto rows = run_experiment_grid(ModelConfig::toy(), cfg, sigmas, modes, six_clips(), six_clips(),
                                          six_clips(), opts);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].mode == SamplingMode::kRandomUniform);
    CHECK(rows[1].mode == SamplingMode::kConstantInterval);
    for (const auto& r : rows) {
        REQUIRE(r.auc);
        CHECK(r.error.empty());
        for (double v : {r.auc->overall, r.auc->x, r.auc->y}) {
            CHECK(v >= 0);
            CHECK(v <= 100);
        }
    }
    write_grid_csv(dir / "grid.csv", rows);
    const std::string csv = testing::slurp(dir / "grid.csv");
    CHECK(csv.rfind("sampling,sigma,auc_overall,auc_x,auc_y,status\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("a failing grid run is recorded and the grid continues") {
    TrainConfig cfg = small_config();
    cfg.max_epochs = 1;
    const std::vector<double> sigmas{-1.0, 2.0};
    const std::vector<SamplingMode> modes{SamplingMode::kRandomUniform};
    const auto rows = run_experiment_grid(ModelConfig::toy(), cfg, sigmas, modes, six_clips(), six_clips(),
                                          six_clips());
    REQUIRE(rows.size() == 2);
    CHECK_FALSE(rows[0].auc);
    CHECK_FALSE(rows[0].error.empty());
    CHECK(rows[1].auc);
}

TEST_CASE("a single clip is memorized") {
    ScenarioConfig sc = testing::toy_scenario(77);
    sc.puck.randomize_location = false;
    // A cell center of the 16 x 16 heatmap, so the decode can be exact.
    sc.puck.location = {93.75, 45.15625};
    GeneratedClip clip = generate_clip(sc);
    ClipDataset one;
    one.add({"solo", clip.truth, std::make_shared<InMemoryClip>(std::move(clip.frames))});

    TrainConfig cfg = small_config();
    cfg.learning_rate = 3e-3;
    cfg.max_epochs = 60;
    cfg.patience = 0;
    const std::vector<double> sigmas{1.0};
    const std::vector<SamplingMode> modes{SamplingMode::kRandomUniform};
    const auto rows = run_experiment_grid(ModelConfig::toy(), cfg, sigmas, modes, one, one, one);
    REQUIRE(rows.size() == 1);
    REQUIRE(rows[0].auc);
    CHECK(rows[0].auc->overall == 100.0);
}
