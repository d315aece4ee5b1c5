#include "puckloc/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <spdlog/spdlog.h>

#include "puckloc/config.hpp"
#include "puckloc/errors.hpp"
#include "puckloc/evaluation.hpp"
#include "puckloc/heatmap_codec.hpp"
#include "puckloc/plot.hpp"
#include "puckloc/synthetic_rink.hpp"
#include "puckloc/training.hpp"

namespace puckloc::cli {

namespace fs = std::filesystem;

namespace {

template <typename Fn>
int guarded(const char* name, std::ostream& err, Fn&& fn) {
    try {
        return fn();
    } catch (const UserError& e) {
        fmt::print(err, "puckloc {}: error: {}\n", name, e.what());
        return kUserError;
    } catch (const DivergenceError& e) {
        fmt::print(err, "puckloc {}: training diverged at epoch {}, batch {}: {}\n", name, e.epoch(), e.batch_index(),
                   e.what());
        return kInternalError;
    } catch (const std::exception& e) {
        fmt::print(err, "puckloc {}: internal error: {}\n", name, e.what());
        return kInternalError;
    }
}

RunConfig resolve_config(const Options& opts) {
    RunConfig cfg = opts.config.empty() ? RunConfig{} : load_run_config(opts.config);
    if (opts.seed) cfg.seed = *opts.seed;
    fan_out_seed(cfg);
    validate(cfg);
    return cfg;
}

const ZonePartition& chosen_zones(int zones, const ZonePartition& three, const ZonePartition& five) {
    if (zones == 3) return three;
    if (zones == 5) return five;
    throw InvalidArgumentError(fmt::format("--zones must be 3 or 5 (got {})", zones));
}

struct Splits {
    std::vector<EventRecord> records;
    Manifest manifest;
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

Splits load_splits(const RunConfig& cfg) {
    const fs::path events = cfg.paths.events_path();
    const fs::path manifest = cfg.paths.manifest_path();
    if (!fs::exists(events)) throw IoError(fmt::format("events file '{}' does not exist", events.string()));
    if (!fs::exists(manifest)) throw IoError(fmt::format("manifest '{}' does not exist", manifest.string()));
    Splits s;
    s.records = load_events(events).records;
    s.manifest = read_manifest(manifest);
    if (s.records.empty()) throw InvalidArgumentError(fmt::format("'{}' holds no usable events", events.string()));
    if (cfg.split.mode == SplitMode::kAll) {
        for (const auto& r : s.records) s.train.push_back(r.clip_id);
        std::sort(s.train.begin(), s.train.end());
        s.train.erase(std::unique(s.train.begin(), s.train.end()), s.train.end());
        s.val = s.train;
        s.test = s.train;
    } else {
        const DatasetSplit split = make_split(s.records, cfg.split.fractions, cfg.split_seed());
        s.train = split.train;
        s.val = split.val;
        s.test = split.test;
    }
    return s;
}

ClipDataset dataset_for(const Splits& s, const std::vector<std::string>& ids, const ModelConfig& model,
                        const char* which) {
    if (ids.empty()) throw InvalidArgumentError(fmt::format("the {} split is empty", which));
    return ClipDataset::load(s.records, s.manifest, ids, model.frame_size);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
}

void write_split(const fs::path& path, const Splits& s) {
    nlohmann::json j{{"train", s.train}, {"val", s.val}, {"test", s.test}};
    write_text(path, j.dump(2) + "\n");
}

fs::path checkpoint_path(const Options& opts, const RunConfig& cfg) {
    return opts.checkpoint.empty() ? cfg.paths.run_dir / "checkpoint_best.bin" : opts.checkpoint;
}

LoadedModel load_checked(const Options& opts, const RunConfig& cfg) {
    const fs::path ckpt = checkpoint_path(opts, cfg);
    if (!fs::exists(ckpt)) throw IoError(fmt::format("checkpoint '{}' does not exist", ckpt.string()));
    LoadedModel loaded = load_checkpoint(ckpt);
    if (!opts.config.empty()) {
        const nlohmann::json want = cfg.model;
        const nlohmann::json have = loaded.model->config();
        if (want != have) {
            throw ConfigError(fmt::format("checkpoint '{}' was trained with model {} but the config asks for {}",
                                          ckpt.string(), have.dump(), want.dump()));
        }
    }
    return loaded;
}

void print_zone_table(std::ostream& out, const std::vector<ZoneRow>& rows) {
    for (const auto& r : rows) {
        fmt::print(out, "  {:<16} n={:<5} {}\n", r.label, r.n,
                   r.accuracy ? fmt::format("{:.2f}%", 100.0 * *r.accuracy) : std::string("NA"));
    }
}

}  // namespace

int cmd_synth_gen(const Options& opts, std::ostream& out, std::ostream& err) {
    return guarded("synth-gen", err, [&] {
        const RunConfig cfg = resolve_config(opts);
        const std::size_t n = opts.n.value_or(cfg.synth_clips);
        const fs::path dir = opts.out.empty() ? cfg.paths.data_dir : opts.out;
        const DatasetSummary summary = generate_dataset(n, cfg.scenario, dir);

        const ZonePartition zp = cfg.zones.three.build();
        std::vector<std::size_t> hist(zp.size(), 0);
        for (const auto& e : summary.events) ++hist[zp.index_of(e.location.x)];
        fmt::print(out, "wrote {} clips to {}\n", n, dir.string());
        for (std::size_t z = 0; z < zp.size(); ++z) fmt::print(out, "  {:<12} {}\n", zp.labels()[z], hist[z]);
        return kOk;
    });
}

int cmd_train(const Options& opts, std::ostream& out, std::ostream& err) {
    return guarded("train", err, [&] {
        RunConfig cfg = resolve_config(opts);
        if (!opts.out.empty()) cfg.paths.run_dir = opts.out;
        const Splits s = load_splits(cfg);
        const ClipDataset train_set = dataset_for(s, s.train, cfg.model, "train");
        const ClipDataset val_set = dataset_for(s, s.val, cfg.model, "validation");

        std::error_code ec;
        fs::create_directories(cfg.paths.run_dir, ec);
        if (ec) throw IoError(fmt::format("cannot create '{}': {}", cfg.paths.run_dir.string(), ec.message()));
        const std::string echo = to_json(cfg).dump(2);
        write_text(cfg.paths.run_dir / "config.json", echo + "\n");
        write_split(cfg.paths.run_dir / "split.json", s);

        ModelConfig mc = cfg.model;
        mc.frozen_prefix = cfg.train.frozen_prefix;
        Model model(mc, cfg.model_seed());
        if (!cfg.paths.pretrained.empty() && !opts.resume) load_pretrained(model, cfg.paths.pretrained);

        TrainOptions topts;
        topts.run_dir = cfg.paths.run_dir;
        topts.resume = opts.resume;
        topts.config_echo = echo;
        topts.normalization = cfg.normalization;
        const TrainResult r = train(model, train_set, val_set, cfg.train, topts);

        fmt::print(out, "trained {} epochs ({} steps){}\n", r.history.empty() ? 0 : r.history.back().epoch, r.steps,
                   r.early_stopped ? ", stopped early" : "");
        fmt::print(out, "best epoch {} with validation AUC {:.2f}\n", r.best_epoch, r.best_val_auc);
        fmt::print(out, "run directory: {}\n", cfg.paths.run_dir.string());
        return kOk;
    });
}

int cmd_eval(const Options& opts, std::ostream& out, std::ostream& err) {
    return guarded("eval", err, [&] {
        const RunConfig cfg = resolve_config(opts);
        LoadedModel loaded = load_checked(opts, cfg);
        const Splits s = load_splits(cfg);
        const ClipDataset test_set = dataset_for(s, s.test, loaded.model->config(), "test");

        SamplingPolicy policy = loaded.train.sampling;
        policy.rng_seed = loaded.train.seed;
        const auto pairs = predict_dataset(*loaded.model, test_set, policy, loaded.normalization,
                                           loaded.train.batch_size);
        const fs::path dir = opts.out.empty() ? cfg.paths.run_dir / "report" : opts.out;
        const ZonePartition three = cfg.zones.three.build();
        const ZonePartition five = cfg.zones.five.build();
        const EvalReport report = emit_report(pairs, three, five, dir);
        write_text(dir / "auc_table.csv", fmt::format("sigma,auc_overall,auc_x,auc_y\n{},{},{},{}\n",
                                                      loaded.train.sigma, report.auc.overall, report.auc.x,
                                                      report.auc.y));

        fmt::print(out, "evaluated {} clips\n", report.count);
        fmt::print(out, "AUC overall {:.2f}  x {:.2f}  y {:.2f}\n", report.auc.overall, report.auc.x, report.auc.y);
        fmt::print(out, "mean error {:.2f} ft\n", report.mean_error_ft);
        const ZonePartition& zp = chosen_zones(opts.zones, three, five);
        fmt::print(out, "{}-zone accuracy:\n", zp.size());
        print_zone_table(out, opts.zones == 5 ? report.zones_5 : report.zones_3);
        fmt::print(out, "report: {}\n", dir.string());
        return kOk;
    });
}

int cmd_predict(const Options& opts, std::ostream& out, std::ostream& err) {
    return guarded("predict", err, [&] {
        const RunConfig cfg = resolve_config(opts);
        if (opts.clip.empty()) throw InvalidArgumentError("--clip is required");
        const ZonePartition three = cfg.zones.three.build();
        const ZonePartition five = cfg.zones.five.build();
        const ZonePartition& zp = chosen_zones(opts.zones, three, five);
        LoadedModel loaded = load_checked(opts, cfg);
        const auto clip = open_clip(opts.clip);

        SamplingPolicy policy = loaded.train.sampling;
        policy.rng_seed = eval_sampling_seed(loaded.train.seed, opts.clip.filename().string());
        const ClipPrediction p = predict_clip(*loaded.model, *clip, policy, loaded.normalization);
        if (p.decoded.low_confidence) fmt::print(err, "warning: flat heatmap, prediction is the rink center\n");
        if (!opts.heatmap.empty()) write_heatmap_png(p.heatmap, opts.heatmap);
        fmt::print(out, "{},{},{}\n", p.decoded.point.x, p.decoded.point.y, zone_of(p.decoded.point, zp));
        return kOk;
    });
}

int cmd_plot(const Options& opts, std::ostream& out, std::ostream& err) {
    return guarded("plot", err, [&] {
        fs::path report = opts.report;
        if (report.empty()) {
            const RunConfig cfg = resolve_config(opts);
            report = cfg.paths.run_dir / "report";
        }
        const fs::path dir = opts.out.empty() ? report : opts.out;
        for (const auto& p : render_report_plots(report, dir)) fmt::print(out, "{}\n", p.string());
        return kOk;
    });
}

int cmd_grid(const Options& opts, std::ostream& out, std::ostream& err) {
    return guarded("grid", err, [&] {
        const RunConfig cfg = resolve_config(opts);
        const Splits s = load_splits(cfg);
        const ClipDataset train_set = dataset_for(s, s.train, cfg.model, "train");
        const ClipDataset val_set = dataset_for(s, s.val, cfg.model, "validation");
        const ClipDataset test_set = dataset_for(s, s.test, cfg.model, "test");

        const fs::path dir = opts.out.empty() ? cfg.paths.run_dir / "grid" : opts.out;
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw IoError(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
        const std::string echo = to_json(cfg).dump(2);
        write_text(dir / "config.json", echo + "\n");

        GridOptions gopts;
        gopts.out_dir = dir;
        gopts.config_echo = echo;
        gopts.normalization = cfg.normalization;
        gopts.model_seed = cfg.model_seed();
        ModelConfig mc = cfg.model;
        mc.frozen_prefix = cfg.train.frozen_prefix;
        const auto rows =
            run_experiment_grid(mc, cfg.train, cfg.grid.sigmas, cfg.grid.modes, train_set, val_set, test_set, gopts);
        write_grid_csv(dir / "grid.csv", rows);

        std::size_t failed = 0;
        for (const auto& r : rows) {
            if (r.auc) {
                fmt::print(out, "{:<18} sigma {:>5}  AUC {:6.2f}  x {:6.2f}  y {:6.2f}\n", to_string(r.mode), r.sigma,
                           r.auc->overall, r.auc->x, r.auc->y);
            } else {
                ++failed;
                fmt::print(out, "{:<18} sigma {:>5}  failed: {}\n", to_string(r.mode), r.sigma, r.error);
            }
        }
        fmt::print(out, "grid table: {}\n", (dir / "grid.csv").string());
        return failed == rows.size() ? kUserError : kOk;
    });
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Puck localization from broadcast video clips"};
    app.require_subcommand(1);
    Options opts;
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

    const auto common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config, "JSON run configuration");
        sub->add_option("--seed", opts.seed, "Override the top-level seed");
    };

    auto* synth = app.add_subcommand("synth-gen", "Generate a synthetic labelled dataset");
    common(synth);
    synth->add_option("--n", opts.n, "Number of clips");
    synth->add_option("--out", opts.out, "Dataset directory");

    auto* train = app.add_subcommand("train", "Train a model");
    common(train);
    train->add_option("--out", opts.out, "Run directory");
    train->add_flag("--resume", opts.resume, "Continue from the run's last checkpoint");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    common(eval);
    eval->add_option("--checkpoint", opts.checkpoint, "Checkpoint (default: run_dir/checkpoint_best.bin)");
    eval->add_option("--out", opts.out, "Report directory");
    eval->add_option("--zones", opts.zones, "Zone table to print (3 or 5)");

    auto* predict = app.add_subcommand("predict", "Locate the puck in one clip");
    common(predict);
    predict->add_option("--checkpoint", opts.checkpoint, "Checkpoint (default: run_dir/checkpoint_best.bin)");
    predict->add_option("--clip", opts.clip, "Frame directory or video file")->required();
    predict->add_option("--heatmap", opts.heatmap, "Write the predicted heatmap as a PNG");
    predict->add_option("--zones", opts.zones, "Zone partition for the label (3 or 5)");

    auto* plot = app.add_subcommand("plot", "Render report figures");
    common(plot);
    plot->add_option("--report", opts.report, "Report directory written by eval");
    plot->add_option("--out", opts.out, "Figure directory (default: the report directory)");

    auto* grid = app.add_subcommand("grid", "Sigma and sampling-mode experiment grid");
    common(grid);
    grid->add_option("--out", opts.out, "Grid output directory");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUserError;
    }

    const auto level = spdlog::level::from_str(log_level);
    spdlog::set_level(level);

    if (synth->parsed()) return cmd_synth_gen(opts, out, err);
    if (train->parsed()) return cmd_train(opts, out, err);
    if (eval->parsed()) return cmd_eval(opts, out, err);
    if (predict->parsed()) return cmd_predict(opts, out, err);
    if (plot->parsed()) return cmd_plot(opts, out, err);
    return cmd_grid(opts, out, err);
}

}  // namespace puckloc::cli
