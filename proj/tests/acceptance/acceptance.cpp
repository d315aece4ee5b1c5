// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "json.hpp"

#include "puckloc/cli.hpp"
#include "puckloc/evaluation.hpp"
#include "puckloc/heatmap_codec.hpp"
#include "puckloc/model.hpp"
#include "puckloc/rink_geometry.hpp"
#include "puckloc/synthetic_rink.hpp"
#include "puckloc/training.hpp"
#include "support.hpp"

using namespace puckloc;

namespace {

struct Verdict {
    bool pass = false;
    std::string details;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

Shape stage_shape(const std::vector<ShapeRecord>& records, const std::string& stage) {
    for (const auto& r : records) {
        if (r.stage == stage) return r.shape;
    }
    return {};
}

std::string shape_str(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out;
}

Verdict shape_conformance() {
    const auto t0 = Clock::now();
    Model m(ModelConfig::paper(), 1);
    const ModelConfig& c = m.config();
    const Tensor x = testing::random_tensor({1, 3, c.frames, c.frame_size, c.frame_size}, 2, 0, 1);
    const Tensor y = m.forward(x, Mode::kEval);
    const double secs = seconds_since(t0);

    const auto& seen = m.observed_shapes();
    const bool chain = stage_shape(seen, "input") == Shape{16, 3, 256, 256} &&
                       stage_shape(seen, "stage3") == Shape{8, 128, 64, 64} &&
                       stage_shape(seen, "regblock_a") == Shape{2, 32, 64, 64} &&
                       stage_shape(seen, "heatmap") == Shape{64, 64} && y.shape() == Shape{1, 64, 64};
    const bool finite = std::all_of(y.values().begin(), y.values().end(), [](double v) { return std::isfinite(v); });
    return {chain && finite && secs < 120.0,
            fmt::format("{} -> {} -> {} -> {}, {:.1f} s", shape_str(stage_shape(seen, "input")),
                        shape_str(stage_shape(seen, "stage3")), shape_str(stage_shape(seen, "regblock_a")),
                        shape_str(stage_shape(seen, "heatmap")), secs)};
}

Verdict transform_suite() {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> ux(0.0, kRinkLengthFt), uy(0.0, kRinkWidthFt);
    const int sizes[] = {16, 32, 64, 128};
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const auto t = make_scaling_transform(sizes[i % 4], sizes[(i / 4) % 4]);
        const RinkPoint p{ux(rng), uy(rng)};
        const RinkPoint back = heatmap_to_rink(t, rink_to_heatmap(t, p));
        worst = std::max({worst, std::abs(back.x - p.x), std::abs(back.y - p.y)});
    }
    const auto t = make_scaling_transform(64, 64);
    const auto a = rink_to_heatmap(t, {100, 42.5});
    const auto b = rink_to_heatmap(t, {150, 20});
    const auto c = heatmap_to_rink(t, {48, 1280.0 / 85.0});
    const double worked = std::max({std::abs(a.u - 32), std::abs(a.v - 32), std::abs(b.u - 48),
                                    std::abs(b.v - 1280.0 / 85.0), std::abs(c.x - 150), std::abs(c.y - 20)});
    return {worst < 1e-9 && worked < 1e-12,
            fmt::format("max round-trip error {:.3g} ft, worked examples within {:.3g}", worst, worked)};
}

Verdict codec_suite() {
    const auto t = make_scaling_transform(64, 64);
    const RinkPoint bound = quantization_bound(t);
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> ux(0.0, kRinkLengthFt), uy(0.0, kRinkWidthFt);
    double ex = 0.0, ey = 0.0, gauss = 0.0;
    for (double sigma : {10.0, 15.0, 20.0, 25.0, 30.0}) {
        TargetSpec spec;
        spec.sigma = sigma;
        for (int i = 0; i < 500; ++i) {
            const RinkPoint p{ux(rng), uy(rng)};
            const RinkPoint d = decode_to_rink(render_target(spec, rink_to_heatmap(t, p)), t).point;
            ex = std::max(ex, std::abs(d.x - p.x));
            ey = std::max(ey, std::abs(d.y - p.y));
        }
        // Mean on a cell center, so the cell sigma columns away sits exactly sigma from it.
        const Heatmap h = render_target(spec, {20.5, 30.5});
        gauss = std::max(gauss, std::abs(h.at(30, 20 + static_cast<int>(sigma)) - std::exp(-0.5)));
    }
    const bool pass = ex <= 1.5625 && ey <= 0.6641 && gauss < 1e-9;
    return {pass, fmt::format("max error ({:.4f}, {:.4f}) ft vs bound ({:.4f}, {:.4f}); exp(-0.5) within {:.2g}", ex,
                              ey, bound.x, bound.y, gauss)};
}

Verdict gradient_check() {
    const auto t0 = Clock::now();
    Model m(ModelConfig::toy(), 17);
    m.freeze_prefix(0);
    const ModelConfig& c = m.config();
    const Tensor x = testing::random_tensor({2, 3, c.frames, c.frame_size, c.frame_size}, 3);
    const Tensor target = testing::random_tensor({2, c.heatmap_height, c.heatmap_width}, 4, 0, 1);

    auto loss_at = [&] { return mse_heatmap_loss(m.forward(x, Mode::kTrain), target); };

    m.zero_grad();
    Tensor dloss;
    mse_heatmap_loss(m.forward(x, Mode::kTrain), target, &dloss);
    m.backward(dloss);

    const double eps = 1e-5;
    std::mt19937_64 rng(8);
    double worst = 0.0, worst_free = 0.0;
    std::string worst_name;
    std::size_t groups = 0, entries = 0;
    for (nn::Parameter* p : m.trainable_parameters()) {
        const Tensor analytic = p->grad;
        // The entry with the largest analytic gradient plus a few random ones.
        std::vector<std::size_t> idx;
        std::size_t top = 0;
        for (std::size_t i = 1; i < analytic.size(); ++i) {
            if (std::abs(analytic[i]) > std::abs(analytic[top])) top = i;
        }
        idx.push_back(top);
        std::uniform_int_distribution<std::size_t> pick(0, analytic.size() - 1);
        for (int k = 0; k < 3; ++k) idx.push_back(pick(rng));

        // held: ReLU masks fixed to the reference pass; free: masks recomputed per evaluation.
        double held_diff2 = 0.0, free_diff2 = 0.0, a2 = 0.0, held2 = 0.0, free2 = 0.0;
        for (std::size_t i : idx) {
            const double keep = p->value[i];
            double numeric[2];
            // Unheld passes recache the masks, so refresh them at the reference point first.
            loss_at();
            for (int held = 1; held >= 0; --held) {
                m.hold_activation_masks(held == 1);
                p->value[i] = keep + eps;
                const double up = loss_at();
                p->value[i] = keep - eps;
                const double down = loss_at();
                p->value[i] = keep;
                numeric[held] = (up - down) / (2 * eps);
            }
            m.hold_activation_masks(false);
            held_diff2 += (numeric[1] - analytic[i]) * (numeric[1] - analytic[i]);
            free_diff2 += (numeric[0] - analytic[i]) * (numeric[0] - analytic[i]);
            a2 += analytic[i] * analytic[i];
            held2 += numeric[1] * numeric[1];
            free2 += numeric[0] * numeric[0];
            ++entries;
        }
        const double rel = std::sqrt(held_diff2) / std::max(std::sqrt(a2) + std::sqrt(held2), 1e-300);
        const double rel_free = std::sqrt(free_diff2) / std::max(std::sqrt(a2) + std::sqrt(free2), 1e-300);
        if (rel > worst) {
            worst = rel;
            worst_name = p->name;
        }
        worst_free = std::max(worst_free, rel_free);
        ++groups;
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-4 && secs < 600.0,
            fmt::format("{} groups, {} entries, worst relative error {:.3g} ({}) with ReLU masks held; {:.3g} with "
                        "masks recomputed (kink crossings); {:.1f} s",
                        groups, entries, worst, worst_name, worst_free, secs)};
}

Verdict freezing_contract() {
    Model m(ModelConfig::toy(), 23);
    TrainConfig cfg;
    cfg.frozen_prefix = 5;
    cfg.learning_rate = 1e-2;
    cfg.sampling.count = m.config().frames;
    Trainer trainer(m, cfg);
    auto frozen_sums = [&] {
        std::vector<std::uint64_t> out;
        for (auto* p : m.state().params) {
            if (!p->trainable) out.push_back(checksum(p->value));
        }
        return out;
    };
    auto live_sums = [&] {
        std::vector<std::uint64_t> out;
        for (auto* p : m.state().params) {
            if (p->trainable) out.push_back(checksum(p->value));
        }
        return out;
    };
    const auto frozen_before = frozen_sums();
    const auto live_before = live_sums();
    const ModelConfig& c = m.config();
    for (std::size_t s = 0; s < 50; ++s) {
        trainer.step(testing::random_tensor({2, 3, c.frames, c.frame_size, c.frame_size}, 100 + s),
                     testing::random_tensor({2, c.heatmap_height, c.heatmap_width}, 200 + s, 0, 1), 0, s);
    }
    const auto frozen_after = frozen_sums();
    const auto live_after = live_sums();
    std::size_t moved = 0;
    for (std::size_t i = 0; i < live_after.size(); ++i) moved += live_after[i] != live_before[i];
    return {!frozen_before.empty() && frozen_after == frozen_before && moved > 0,
            fmt::format("{} frozen tensors bit-identical after {} steps; {}/{} trainable tensors changed",
                        frozen_before.size(), trainer.optimizer().steps(), moved, live_after.size())};
}

struct OverfitOutcome {
    std::vector<PredictionPair> pairs;
    Verdict verdict;
};

OverfitOutcome overfit_run() {
    const auto t0 = Clock::now();
    const ClipDataset ds = testing::synthetic_dataset(20, 7);
    TrainConfig cfg;
    cfg.learning_rate = 3e-3;
    cfg.sigma = 2.0;
    cfg.frozen_prefix = 5;
    cfg.max_epochs = 200;
    cfg.patience = 0;
    cfg.sampling.count = ModelConfig::toy().frames;
    cfg.seed = 11;
    Model m(ModelConfig::toy(), 5);
    const TrainResult r = train(m, ds, ds, cfg);

    const double first = r.history.front().train_loss;
    double lowest = first;
    std::size_t below_at = 0;
    for (const auto& row : r.history) {
        lowest = std::min(lowest, row.train_loss);
        if (below_at == 0 && row.train_loss < 0.1 * first) below_at = row.epoch;
    }
    SamplingPolicy policy = cfg.sampling;
    policy.rng_seed = cfg.seed;
    OverfitOutcome out;
    out.pairs = predict_dataset(m, ds, policy, Normalization{});
    const AucSummary a = auc_summary(out.pairs);
    const double err = mean_error_ft(out.pairs);
    const double secs = seconds_since(t0);
    out.verdict = {below_at > 0 && a.overall >= 90.0 && err < 10.0 && secs <= 1800.0,
                   fmt::format("loss below 10% of epoch 1 at epoch {} (final ratio {:.3f}); AUC {:.2f} (x {:.2f}, y "
                               "{:.2f}), mean error {:.2f} ft, best epoch {}, {:.0f} s",
                               below_at, r.history.back().train_loss / first, a.overall, a.x, a.y, err, r.best_epoch,
                               secs)};
    return out;
}

double brute_phi(const std::vector<PredictionPair>& pairs, double t, Axis axis) {
    int hits = 0;
    for (const auto& p : pairs) {
        const double dx = p.predicted.x - p.truth.x, dy = p.predicted.y - p.truth.y;
        const double e = axis == Axis::kX ? std::abs(dx) : axis == Axis::kY ? std::abs(dy) : std::hypot(dx, dy);
        if (e < t) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

double brute_auc(const std::vector<PredictionPair>& pairs, Axis axis) {
    double area = 0;
    for (int t = 5; t < 50; ++t) area += 0.5 * (brute_phi(pairs, t, axis) + brute_phi(pairs, t + 1, axis));
    return 100.0 * area / 45.0;
}

std::vector<PredictionPair> random_pairs(std::size_t n, std::uint64_t seed, double spread) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(0, 200), uy(0, 85);
    std::normal_distribution<double> g(0, spread);
    std::vector<PredictionPair> out;
    for (std::size_t i = 0; i < n; ++i) {
        const RinkPoint z{ux(rng), uy(rng)};
        const RinkPoint p{std::clamp(z.x + g(rng), 0.0, 200.0), std::clamp(z.y + g(rng), 0.0, 85.0)};
        out.push_back({p, z, "c" + std::to_string(i)});
    }
    return out;
}

Verdict metric_oracles(const std::vector<PredictionPair>& overfit_pairs) {
    const auto pairs = random_pairs(100, 5, 20.0);
    double worst = 0.0;
    for (Axis axis : {Axis::kBoth, Axis::kX, Axis::kY}) {
        for (const auto& pt : phi_curve(pairs, report_tolerances(), axis)) {
            worst = std::max(worst, std::abs(pt.fraction - brute_phi(pairs, pt.tolerance_ft, axis)));
        }
        worst = std::max(worst, std::abs(auc(pairs, axis) - brute_auc(pairs, axis)));
    }
    // One pair 10 ft off: phi is 0 up to 10 and 1 from 11, so the trapezoids give 39.5 of 45 ft.
    const std::vector<PredictionPair> ten{{{110, 40}, {100, 40}, "ten"}};
    const double closed = 39.5 / 45.0 * 100.0;
    const double ten_err = std::abs(auc(ten, Axis::kBoth) - closed);

    std::size_t sets = 0, violations = 0;
    auto dominance = [&](const std::vector<PredictionPair>& set) {
        const AucSummary s = auc_summary(set);
        ++sets;
        if (s.x < s.overall || s.y < s.overall) ++violations;
    };
    for (std::uint64_t seed = 0; seed < 20; ++seed) dominance(random_pairs(50, 1000 + seed, 5.0 + 2.0 * seed));
    dominance(pairs);
    dominance(ten);
    if (!overfit_pairs.empty()) dominance(overfit_pairs);

    return {worst < 1e-12 && ten_err < 1e-12 && violations == 0,
            fmt::format("max oracle gap {:.3g}; 10-ft case {:.12f} vs {:.12f}; dominance held on {}/{} sets", worst,
                        auc(ten, Axis::kBoth), closed, sets - violations, sets)};
}

std::vector<PredictionPair> confusion_fixture(const ZonePartition& zp, const std::vector<std::vector<int>>& m) {
    std::vector<PredictionPair> out;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const auto [ti0, ti1] = zp.extent(i);
        for (std::size_t j = 0; j < m[i].size(); ++j) {
            const auto [pj0, pj1] = zp.extent(j);
            for (int k = 0; k < m[i][j]; ++k) {
                out.push_back({{0.5 * (pj0 + pj1), 10.0 + k % 60}, {0.5 * (ti0 + ti1), 20.0 + k % 50}, ""});
            }
        }
    }
    return out;
}

bool table_matches(const std::vector<ZoneRow>& rows, const std::vector<std::vector<int>>& m) {
    if (rows.size() != m.size()) return false;
    for (std::size_t i = 0; i < m.size(); ++i) {
        int n = 0;
        for (int v : m[i]) n += v;
        if (rows[i].n != static_cast<std::size_t>(n)) return false;
        if (n == 0) {
            if (rows[i].accuracy) return false;
        } else if (!rows[i].accuracy || *rows[i].accuracy != static_cast<double>(m[i][i]) / n) {
            return false;
        }
    }
    return true;
}

Verdict zone_logic() {
    const ZonePartition three = ZonePartition::three_zone();
    const ZonePartition five = ZonePartition::five_zone();
    std::vector<PredictionPair> identity;
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> ux(0, 200), uy(0, 85);
    for (int i = 0; i < 500; ++i) {
        const RinkPoint p{ux(rng), uy(rng)};
        identity.push_back({p, p, ""});
    }
    bool perfect = true;
    std::size_t populated = 0;
    for (const ZonePartition* zp : {&three, &five}) {
        for (const auto& row : zone_accuracy(identity, *zp)) {
            if (row.n == 0) continue;
            ++populated;
            perfect = perfect && row.accuracy && *row.accuracy == 1.0;
        }
    }
    const std::vector<std::vector<int>> m3{{70, 20, 10}, {15, 80, 5}, {0, 40, 60}};
    const std::vector<std::vector<int>> m5{
        {9, 1, 0, 0, 0}, {2, 18, 0, 0, 0}, {0, 0, 0, 0, 0}, {0, 0, 3, 27, 0}, {1, 1, 1, 1, 36}};
    const bool t3 = table_matches(zone_accuracy(confusion_fixture(three, m3), three), m3);
    const bool t5 = table_matches(zone_accuracy(confusion_fixture(five, m5), five), m5);
    return {perfect && populated == 8 && t3 && t5,
            fmt::format("identity perfect in {} populated zones: {}; 3-zone table {}; 5-zone table {}", populated,
                        perfect ? "yes" : "no", t3 ? "exact" : "mismatch", t5 ? "exact" : "mismatch")};
}

Verdict sampling_harness() {
    const auto t0 = Clock::now();
    const ClipDataset train_set = testing::synthetic_dataset(8, 41);
    const ClipDataset test_set = testing::synthetic_dataset(4, 42);
    TrainConfig cfg;
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 4;
    cfg.max_epochs = 3;
    cfg.patience = 0;
    cfg.sampling.count = ModelConfig::toy().frames;
    cfg.seed = 13;
    testing::TempDir dir("acceptance_grid");
    GridOptions opts;
    opts.out_dir = dir.path();
    opts.model_seed = 3;
    const std::vector<double> sigmas{2.0};
    const std::vector<SamplingMode> modes{SamplingMode::kRandomUniform, SamplingMode::kConstantInterval};
    const auto rows = run_experiment_grid(ModelConfig::toy(), cfg, sigmas, modes, train_set, test_set, test_set, opts);
    write_grid_csv(dir / "grid.csv", rows);
    const std::string csv = testing::slurp(dir / "grid.csv");
    const bool both = rows.size() == 2 && rows[0].auc && rows[1].auc &&
                      rows[0].mode == SamplingMode::kRandomUniform &&
                      rows[1].mode == SamplingMode::kConstantInterval &&
                      std::count(csv.begin(), csv.end(), '\n') == 3;
    std::string details = fmt::format("{} rows", rows.size());
    for (const auto& r : rows) {
        details += fmt::format("; {} sigma {}: {}", to_string(r.mode), r.sigma,
                               r.auc ? fmt::format("AUC {:.2f}", r.auc->overall) : r.error);
    }
    return {both, details + fmt::format(" ({:.0f} s)", seconds_since(t0))};
}

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), {"--log-level", "warn"});
    std::ostringstream out, err;
    return cli::run(args, out, err);
}

Verdict determinism() {
    testing::TempDir dir("acceptance_determinism");
    const char* files[] = {"history.csv",           "report/phi_overall.csv", "report/phi_x.csv",
                           "report/phi_y.csv",      "report/auc.csv",         "report/zones_3.csv",
                           "report/zones_5.csv",    "report/predictions.csv", "report/auc_table.csv"};
    std::vector<std::vector<std::string>> contents;
    for (const char* tag : {"a", "b"}) {
        const auto root = dir / tag;
        std::filesystem::create_directories(root);
        const nlohmann::json cfg{
            {"seed", 19},
            {"paths", {{"data_dir", (root / "data").string()}, {"run_dir", (root / "run").string()}}},
            {"train", {{"learning_rate", 0.003}, {"sigma", 2}, {"batch_size", 4}, {"max_epochs", 3}, {"patience", 0}}},
            {"scenario", {{"frame_size", 64}, {"clip_len_frames", 24}}},
            {"synth_clips", 12},
            {"split", {{"mode", "fractions"}, {"train", 0.5}, {"val", 0.25}, {"test", 0.25}}}};
        const auto cfg_path = root / "run.json";
        testing::spit(cfg_path, cfg.dump(2));
        for (const char* cmd : {"synth-gen", "train", "eval"}) {
            const int code = run_cli({cmd, "--config", cfg_path.string()});
            if (code != cli::kOk) return {false, fmt::format("run {}: {} exited with {}", tag, cmd, code)};
        }
        std::vector<std::string> run;
        for (const char* f : files) run.push_back(testing::slurp(root / "run" / f));
        contents.push_back(std::move(run));
    }
    std::size_t same = 0;
    std::string differing;
    for (std::size_t i = 0; i < contents[0].size(); ++i) {
        if (contents[0][i] == contents[1][i] && !contents[0][i].empty()) {
            ++same;
        } else {
            differing += std::string(" ") + files[i];
        }
    }
    const std::size_t total = contents[0].size();
    return {same == total, fmt::format("{}/{} files identical across two runs{}", same, total,
                                       differing.empty() ? "" : ";" + differing + " differ")};
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::warn);
    int failures = 0;
    auto report = [&](int n, const char* name, const std::function<Verdict()>& fn) {
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        if (!v.pass) ++failures;
        std::printf("%s %d %s: %s\n", v.pass ? "PASS" : "FAIL", n, name, v.details.c_str());
        std::fflush(stdout);
    };

    std::vector<PredictionPair> overfit_pairs;
    report(1, "shape conformance", shape_conformance);
    report(2, "transform suite", transform_suite);
    report(3, "codec suite", codec_suite);
    report(4, "gradient check", gradient_check);
    report(5, "freezing contract", freezing_contract);
    report(6, "overfit run", [&] {
        OverfitOutcome o = overfit_run();
        overfit_pairs = std::move(o.pairs);
        return o.verdict;
    });
    report(7, "metric oracles", [&] { return metric_oracles(overfit_pairs); });
    report(8, "zone logic", zone_logic);
    report(9, "sampling harness", sampling_harness);
    report(10, "determinism", determinism);
    return failures == 0 ? 0 : 1;
}
