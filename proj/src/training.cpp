#include "puckloc/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "csv.hpp"
#include "puckloc/config.hpp"
#include "puckloc/errors.hpp"

namespace puckloc {

using nlohmann::json;

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t shuffle_seed(std::uint64_t seed, std::size_t epoch) { return mix(mix(seed ^ 0x5DEECE66DULL) + epoch); }

json normalization_json(const Normalization& n) { return {{"mean", n.mean}, {"std", n.std}}; }

Normalization normalization_from_json(const json& j) {
    Normalization n;
    n.mean = j.at("mean").get<std::array<double, 3>>();
    n.std = j.at("std").get<std::array<double, 3>>();
    return n;
}

json history_json(std::span<const HistoryRow> rows) {
    json a = json::array();
    for (const auto& r : rows) a.push_back({r.epoch, r.train_loss, r.val_auc.overall, r.val_auc.x, r.val_auc.y});
    return a;
}

std::vector<HistoryRow> history_from_json(const json& a) {
    std::vector<HistoryRow> rows;
    for (const auto& e : a) {
        rows.push_back({e.at(0).get<std::size_t>(), e.at(1).get<double>(),
                        {e.at(2).get<double>(), e.at(3).get<double>(), e.at(4).get<double>()}});
    }
    return rows;
}

struct Progress {
    std::size_t epoch = 0;
    double best_val_auc = -1.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_since_best = 0;
    std::vector<HistoryRow> history;
};

std::string checkpoint_metadata(const Model& model, const TrainConfig& cfg, const TrainOptions& opts,
                                const Progress& p) {
    json run;
    try {
        run = json::parse(opts.config_echo);
    } catch (const json::parse_error& e) {
        throw InvalidArgumentError(fmt::format("config echo is not valid JSON: {}", e.what()));
    }
    json meta{{"format", "puckloc-checkpoint-1"},
              {"model", model.config()},
              {"train", cfg},
              {"train_seed", cfg.seed},
              {"normalization", normalization_json(opts.normalization)},
              {"epoch", p.epoch},
              {"best_val_auc", p.best_val_auc},
              {"best_epoch", p.best_epoch},
              {"epochs_since_best", p.epochs_since_best},
              {"history", history_json(p.history)},
              {"run", run}};
    return meta.dump();
}

std::string sanitize(std::string s) {
    std::replace(s.begin(), s.end(), ',', ';');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

}  // namespace

void validate(const TrainConfig& cfg) {
    if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
        throw InvalidArgumentError("learning_rate must be a non-negative finite number");
    }
    if (cfg.batch_size < 1) throw InvalidArgumentError("batch_size must be at least 1");
    if (cfg.max_epochs < 1) throw InvalidArgumentError("max_epochs must be at least 1");
    if (!(cfg.sigma > 0.0)) throw InvalidArgumentError("sigma must be positive");
    if (!(cfg.adam_beta1 >= 0.0 && cfg.adam_beta1 < 1.0) || !(cfg.adam_beta2 >= 0.0 && cfg.adam_beta2 < 1.0) ||
        !(cfg.adam_eps > 0.0)) {
        throw InvalidArgumentError("Adam betas must lie in [0, 1) and eps must be positive");
    }
    if (cfg.frozen_prefix > Model::kExtractorDepth) {
        throw InvalidArgumentError(fmt::format("frozen_prefix must be at most {}", Model::kExtractorDepth));
    }
    validate(cfg.sampling);
}

double mse_heatmap_loss(std::span<const Heatmap> pred, std::span<const Heatmap> target) {
    if (pred.size() != target.size() || pred.empty()) {
        throw ShapeError(fmt::format("loss needs equal non-empty batches (got {} and {})", pred.size(), target.size()));
    }
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i].width() != target[i].width() || pred[i].height() != target[i].height()) {
            throw ShapeError(fmt::format("heatmap {} is {}x{} but its target is {}x{}", i, pred[i].width(),
                                         pred[i].height(), target[i].width(), target[i].height()));
        }
        const auto a = pred[i].values();
        const auto b = target[i].values();
        for (std::size_t k = 0; k < a.size(); ++k) sum += (a[k] - b[k]) * (a[k] - b[k]);
        count += a.size();
    }
    return sum / static_cast<double>(count);
}

double mse_heatmap_loss(const Tensor& pred, const Tensor& target, Tensor* grad) {
    if (pred.shape() != target.shape() || pred.empty()) {
        throw ShapeError(fmt::format("prediction shape {} does not match target shape {}", to_string(pred.shape()),
                                     to_string(target.shape())));
    }
    const auto n = static_cast<double>(pred.size());
    if (grad) *grad = Tensor(pred.shape());
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        sum += d * d;
        if (grad) (*grad)[i] = 2.0 * d / n;
    }
    return sum / n;
}

ClipDataset ClipDataset::load(std::span<const EventRecord> records, const Manifest& manifest,
                              std::span<const std::string> ids, std::size_t frame_size) {
    const std::set<std::string> wanted(ids.begin(), ids.end());
    ClipDataset data;
    for (const auto& r : records) {
        if (!wanted.empty() && !wanted.count(r.clip_id)) continue;
        const auto it = manifest.find(r.clip_id);
        if (it == manifest.end()) throw IoError(fmt::format("clip '{}' is not listed in the manifest", r.clip_id));
        const auto clip = open_clip(it->second);
        data.add({r.clip_id, r.location, std::make_shared<InMemoryClip>(load_resized(*clip, frame_size))});
    }
    return data;
}

TargetSpec target_spec(const TrainConfig& cfg, const ModelConfig& model) {
    TargetSpec t;
    t.sigma = cfg.sigma;
    t.unit = cfg.sigma_unit;
    t.normalize = cfg.normalize_target;
    t.width = model.heatmap_width;
    t.height = model.heatmap_height;
    return t;
}

std::uint64_t sampling_seed(std::uint64_t seed, std::size_t epoch, std::size_t clip_index) {
    return mix(mix(mix(seed) + epoch) + clip_index);
}

std::uint64_t eval_sampling_seed(std::uint64_t seed, const std::string& clip_id) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : clip_id) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return mix(seed ^ mix(h));
}

Batch make_batch(const ClipDataset& data, std::span<const std::size_t> indices, std::span<const SamplingPolicy> policies,
                 const Normalization& norm, const ModelConfig& model, const TargetSpec& target) {
    if (indices.empty() || indices.size() != policies.size()) {
        throw InvalidArgumentError("a batch needs one sampling policy per clip");
    }
    const ScalingTransform tf(target.width, target.height);
    const std::size_t cells = static_cast<std::size_t>(target.width) * static_cast<std::size_t>(target.height);

    std::vector<ClipTensor> clips;
    clips.reserve(indices.size());
    Batch b;
    b.targets = Tensor({indices.size(), static_cast<std::size_t>(target.height), static_cast<std::size_t>(target.width)});
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const ClipSample& s = data[indices[k]];
        const auto frames = sample_frame_indices(policies[k], s.frames->frame_count());
        clips.push_back(preprocess_clip(*s.frames, frames, norm, model.frame_size));
        const Heatmap h = render_target(target, rink_to_heatmap(tf, s.truth));
        std::copy(h.values().begin(), h.values().end(), b.targets.data() + k * cells);
        b.clip_ids.push_back(s.clip_id);
    }
    b.inputs = stack_clips(clips);
    return b;
}

Adam::Adam(std::vector<nn::Parameter*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        nn::Parameter& p = *params_[i];
        if (!p.trainable) continue;
        double* w = p.value.data();
        const double* g = p.grad.data();
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
            w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
        }
    }
}

void Adam::export_to(Archive& a) const {
    a.step = t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        a.tensors.push_back({"adam.m." + params_[i]->name, m_[i]});
        a.tensors.push_back({"adam.v." + params_[i]->name, v_[i]});
    }
}

void Adam::import_from(const Archive& a) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        for (auto [prefix, dst] : {std::pair{"adam.m.", &m_[i]}, std::pair{"adam.v.", &v_[i]}}) {
            const std::string name = prefix + params_[i]->name;
            const Tensor* src = a.find(name);
            if (!src || src->shape() != dst->shape()) {
                throw IoError(fmt::format("checkpoint has no usable optimizer state '{}'", name));
            }
            *dst = *src;
        }
    }
    t_ = a.step;
}

Trainer::Trainer(Model& model, const TrainConfig& cfg)
    : model_(model),
      cfg_(cfg),
      adam_([&] {
          model.freeze_prefix(cfg.frozen_prefix);
          model.set_bn_running_stats(cfg.freeze_bn_stats);
          return Adam(model.trainable_parameters(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
      }()) {}

double Trainer::step(const Tensor& inputs, const Tensor& targets, std::size_t epoch, std::size_t batch_index) {
    const Tensor pred = model_.forward(inputs, Mode::kTrain);
    Tensor grad;
    const double loss = mse_heatmap_loss(pred, targets, &grad);
    if (!std::isfinite(loss)) {
        throw DivergenceError(epoch, batch_index, fmt::format("loss became {}", loss));
    }
    model_.zero_grad();
    model_.backward(grad);
    adam_.step();
    return loss;
}

void write_history(const std::filesystem::path& path, std::span<const HistoryRow> rows) {
    std::ofstream out(path);
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
    out << "epoch,train_loss,val_auc_overall,val_auc_x,val_auc_y\n";
    for (const auto& r : rows) {
        out << fmt::format("{},{},{},{},{}\n", r.epoch, r.train_loss, r.val_auc.overall, r.val_auc.x, r.val_auc.y);
    }
    if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

std::vector<HistoryRow> read_history(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open '{}'", path.string()));
    std::string line;
    std::getline(in, line);
    csv::strip_cr(line);
    if (line != "epoch,train_loss,val_auc_overall,val_auc_x,val_auc_y") {
        throw ParseError(1, "header", "not a training history file");
    }
    std::vector<HistoryRow> rows;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        csv::strip_cr(line);
        if (line.empty()) continue;
        const auto f = csv::split(line);
        if (f.size() != 5) throw ParseError(row, "row", "expected 5 fields");
        rows.push_back({static_cast<std::size_t>(csv::parse_int(f[0], row, "epoch")),
                        csv::parse_double(f[1], row, "train_loss"),
                        {csv::parse_double(f[2], row, "val_auc_overall"), csv::parse_double(f[3], row, "val_auc_x"),
                         csv::parse_double(f[4], row, "val_auc_y")}});
    }
    return rows;
}

Archive make_checkpoint(const Model& model, const std::string& metadata) {
    Archive a = model.export_state();
    a.metadata = metadata;
    return a;
}

TrainResult train(Model& model, const ClipDataset& train_set, const ClipDataset& val_set, const TrainConfig& cfg,
                  const TrainOptions& opts) {
    validate(cfg);
    if (train_set.empty()) throw InvalidArgumentError("training set is empty");
    if (val_set.empty()) throw InvalidArgumentError("validation set is empty");
    if (cfg.sampling.count != model.config().frames) {
        throw InvalidArgumentError(fmt::format("sampling count {} does not match the model's {} input frames",
                                               cfg.sampling.count, model.config().frames));
    }

    Trainer trainer(model, cfg);
    const TargetSpec target = target_spec(cfg, model.config());
    validate(target);

    namespace fs = std::filesystem;
    TrainResult result;
    Progress progress;
    if (opts.run_dir) {
        std::error_code ec;
        fs::create_directories(*opts.run_dir, ec);
        if (ec) throw IoError(fmt::format("cannot create run directory '{}': {}", opts.run_dir->string(), ec.message()));
        result.best_checkpoint = *opts.run_dir / "checkpoint_best.bin";
        result.last_checkpoint = *opts.run_dir / "checkpoint_last.bin";
    }

    if (opts.resume) {
        if (!opts.run_dir) throw InvalidArgumentError("resuming needs a run directory");
        if (!fs::exists(result.last_checkpoint)) {
            throw IoError(fmt::format("no checkpoint to resume from at '{}'", result.last_checkpoint.string()));
        }
        const Archive a = read_archive(result.last_checkpoint);
        model.import_state(a);
        trainer.optimizer().import_from(a);
        const json meta = json::parse(a.metadata);
        progress.epoch = meta.at("epoch").get<std::size_t>();
        progress.best_val_auc = meta.at("best_val_auc").get<double>();
        progress.best_epoch = meta.at("best_epoch").get<std::size_t>();
        progress.epochs_since_best = meta.at("epochs_since_best").get<std::size_t>();
        progress.history = history_from_json(meta.at("history"));
        spdlog::info("resuming after epoch {} (step {})", progress.epoch, a.step);
    }

    Archive best_state = model.export_state();
    if (opts.resume && fs::exists(result.best_checkpoint)) best_state = read_archive(result.best_checkpoint);
    SamplingPolicy eval_policy = cfg.sampling;
    eval_policy.rng_seed = cfg.seed;

    const std::size_t n = train_set.size();
    for (std::size_t epoch = progress.epoch + 1; epoch <= cfg.max_epochs; ++epoch) {
        if (cfg.patience > 0 && progress.epochs_since_best >= cfg.patience) break;

        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        if (cfg.shuffle) {
            std::mt19937_64 rng(shuffle_seed(cfg.seed, epoch));
            std::shuffle(order.begin(), order.end(), rng);
        }

        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
            const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, n - start));
            std::vector<SamplingPolicy> policies(idx.size(), cfg.sampling);
            for (std::size_t k = 0; k < idx.size(); ++k) policies[k].rng_seed = sampling_seed(cfg.seed, epoch, idx[k]);
            const Batch batch = make_batch(train_set, idx, policies, opts.normalization, model.config(), target);
            try {
                loss_sum += trainer.step(batch.inputs, batch.targets, epoch, batch_index) * static_cast<double>(idx.size());
            } catch (const DivergenceError& e) {
                spdlog::error("training diverged at epoch {} batch {}: {}", epoch, batch_index, e.what());
                if (opts.run_dir) {
                    std::ofstream dump(*opts.run_dir / "divergence.json");
                    dump << json{{"epoch", epoch}, {"batch_index", batch_index}, {"clip_ids", batch.clip_ids},
                                 {"message", e.what()}}
                                .dump(2)
                         << '\n';
                }
                throw;
            }
        }

        HistoryRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / static_cast<double>(n);
        row.val_auc = auc_summary(predict_dataset(model, val_set, eval_policy, opts.normalization, cfg.batch_size));
        progress.history.push_back(row);
        progress.epoch = epoch;
        spdlog::info("epoch {:3d}  loss {:.6g}  val AUC {:.2f} (x {:.2f}, y {:.2f})", epoch, row.train_loss,
                     row.val_auc.overall, row.val_auc.x, row.val_auc.y);

        const bool improved = row.val_auc.overall > progress.best_val_auc;
        if (improved) {
            progress.best_val_auc = row.val_auc.overall;
            progress.best_epoch = epoch;
            progress.epochs_since_best = 0;
            best_state = model.export_state();
        } else {
            ++progress.epochs_since_best;
        }

        if (opts.run_dir) {
            const std::string meta = checkpoint_metadata(model, cfg, opts, progress);
            if (improved) write_archive(result.best_checkpoint, make_checkpoint(model, meta));
            Archive last = make_checkpoint(model, meta);
            trainer.optimizer().export_to(last);
            write_archive(result.last_checkpoint, last);
            write_history(*opts.run_dir / "history.csv", progress.history);
        }
        if (opts.on_epoch) opts.on_epoch(row);
        if (opts.stop_after_epoch > 0 && epoch >= opts.stop_after_epoch) break;
    }

    result.early_stopped =
        cfg.patience > 0 && progress.epochs_since_best >= cfg.patience && progress.epoch < cfg.max_epochs;
    result.history = progress.history;
    result.best_epoch = progress.best_epoch;
    result.best_val_auc = progress.best_val_auc;
    result.steps = trainer.optimizer().steps();
    if (progress.best_epoch > 0) model.import_state(best_state);
    return result;
}

LoadedModel load_checkpoint(const std::filesystem::path& path) {
    const Archive a = read_archive(path);
    json meta;
    try {
        meta = json::parse(a.metadata);
    } catch (const json::parse_error& e) {
        throw IoError(fmt::format("checkpoint '{}' has unreadable metadata: {}", path.string(), e.what()));
    }
    if (!meta.is_object() || !meta.contains("model") || !meta.contains("train")) {
        throw IoError(fmt::format("'{}' is not a training checkpoint", path.string()));
    }
    LoadedModel out;
    const ModelConfig mc = parse_model_config(meta.at("model"));
    out.model = std::make_unique<Model>(mc, 0);
    out.model->import_state(a);
    out.train = parse_train_config(meta.at("train"));
    if (meta.contains("train_seed")) out.train.seed = meta.at("train_seed").get<std::uint64_t>();
    if (meta.contains("normalization")) out.normalization = normalization_from_json(meta.at("normalization"));
    out.metadata = a.metadata;
    return out;
}

std::vector<PredictionPair> predict_dataset(Model& model, const ClipDataset& data, const SamplingPolicy& policy,
                                            const Normalization& norm, std::size_t batch_size) {
    if (data.empty()) throw InvalidArgumentError("cannot predict on an empty dataset");
    const ModelConfig& mc = model.config();
    TargetSpec target;
    target.width = mc.heatmap_width;
    target.height = mc.heatmap_height;
    const ScalingTransform tf(mc.heatmap_width, mc.heatmap_height);
    const std::size_t cells = static_cast<std::size_t>(mc.heatmap_width) * static_cast<std::size_t>(mc.heatmap_height);

    std::vector<PredictionPair> pairs;
    pairs.reserve(data.size());
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        const std::size_t count = std::min(batch_size, data.size() - start);
        std::vector<std::size_t> idx(count);
        std::iota(idx.begin(), idx.end(), start);
        std::vector<SamplingPolicy> policies(count, policy);
        for (std::size_t k = 0; k < count; ++k) {
            policies[k].rng_seed = eval_sampling_seed(policy.rng_seed, data[idx[k]].clip_id);
        }
        const Batch batch = make_batch(data, idx, policies, norm, mc, target);
        const Tensor pred = model.forward(batch.inputs, Mode::kEval);
        for (std::size_t k = 0; k < count; ++k) {
            std::vector<double> v(pred.data() + k * cells, pred.data() + (k + 1) * cells);
            const Heatmap h(mc.heatmap_width, mc.heatmap_height, std::move(v));
            pairs.push_back({decode_to_rink(h, tf).point, data[idx[k]].truth, data[idx[k]].clip_id});
        }
    }
    return pairs;
}

ClipPrediction predict_clip(Model& model, const FrameProvider& clip, const SamplingPolicy& policy,
                            const Normalization& norm) {
    const ModelConfig& mc = model.config();
    const ClipTensor ct = preprocess_clip(clip, policy, norm, mc.frame_size);
    const Tensor pred = model.forward(std::span<const ClipTensor>(&ct, 1), Mode::kEval);
    std::vector<double> v(pred.values().begin(), pred.values().end());
    ClipPrediction out;
    out.heatmap = Heatmap(mc.heatmap_width, mc.heatmap_height, std::move(v));
    out.decoded = decode_to_rink(out.heatmap, ScalingTransform(mc.heatmap_width, mc.heatmap_height));
    return out;
}

std::vector<GridRow> run_experiment_grid(const ModelConfig& model_cfg, const TrainConfig& base,
                                         std::span<const double> sigmas, std::span<const SamplingMode> modes,
                                         const ClipDataset& train_set, const ClipDataset& val_set,
                                         const ClipDataset& test_set, const GridOptions& opts) {
    if (sigmas.empty() || modes.empty()) throw InvalidArgumentError("experiment grid needs sigmas and sampling modes");
    std::vector<GridRow> rows;
    for (const SamplingMode mode : modes) {
        for (const double sigma : sigmas) {
            GridRow row;
            row.sigma = sigma;
            row.mode = mode;
            try {
                TrainConfig cfg = base;
                cfg.sigma = sigma;
                cfg.sampling.mode = mode;
                Model model(model_cfg, opts.model_seed);
                TrainOptions topts;
                topts.config_echo = opts.config_echo;
                topts.normalization = opts.normalization;
                if (opts.out_dir) topts.run_dir = *opts.out_dir / fmt::format("{}_sigma{}", to_string(mode), sigma);
                train(model, train_set, val_set, cfg, topts);
                SamplingPolicy eval_policy = cfg.sampling;
                eval_policy.rng_seed = cfg.seed;
                row.auc = auc_summary(predict_dataset(model, test_set, eval_policy, opts.normalization, cfg.batch_size));
                spdlog::info("grid {} sigma {}: AUC {:.2f} (x {:.2f}, y {:.2f})", to_string(mode), sigma,
                             row.auc->overall, row.auc->x, row.auc->y);
            } catch (const std::exception& e) {
                row.error = e.what();
                spdlog::error("grid {} sigma {} failed: {}", to_string(mode), sigma, e.what());
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

void write_grid_csv(const std::filesystem::path& path, std::span<const GridRow> rows) {
    std::ofstream out(path);
    if (!out) throw IoError(fmt::format("cannot write '{}'", path.string()));
    out << "sampling,sigma,auc_overall,auc_x,auc_y,status\n";
    for (const auto& r : rows) {
        if (r.auc) {
            out << fmt::format("{},{},{},{},{},ok\n", to_string(r.mode), r.sigma, r.auc->overall, r.auc->x, r.auc->y);
        } else {
            out << fmt::format("{},{},NA,NA,NA,{}\n", to_string(r.mode), r.sigma, sanitize("failed: " + r.error));
        }
    }
    if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

}  // namespace puckloc
