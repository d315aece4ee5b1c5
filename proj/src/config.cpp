#include "puckloc/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "puckloc/errors.hpp"

namespace puckloc {

using nlohmann::json;

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t x = seed ^ (stream * 0x9E3779B97F4A7C15ULL);
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Reads the keys of one JSON object, remembering which were used so that
// leftovers can be reported as unknown.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(fmt::format("{}: expected an object", where_));
    }

    const json* find(const char* key) {
        const auto it = j_.find(key);
        if (it == j_.end()) return nullptr;
        used_.insert(key);
        return &*it;
    }

    std::string path(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

    void get(const char* key, double& out) {
        if (const json* v = find(key)) {
            if (!v->is_number()) throw type_error(key, "a number");
            out = v->get<double>();
        }
    }

    void get(const char* key, std::size_t& out) {
        if (const json* v = find(key)) {
            if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) throw type_error(key, "a non-negative integer");
            out = v->get<std::size_t>();
        }
    }

    void get(const char* key, int& out) {
        if (const json* v = find(key)) {
            if (!v->is_number_integer()) throw type_error(key, "an integer");
            out = v->get<int>();
        }
    }

    void get(const char* key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) throw type_error(key, "a boolean");
            out = v->get<bool>();
        }
    }

    void get(const char* key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) throw type_error(key, "a string");
            out = v->get<std::string>();
        }
    }

    void get(const char* key, std::filesystem::path& out) {
        std::string s = out.string();
        get(key, s);
        out = s;
    }

    void get(const char* key, RinkPoint& out) {
        if (const json* v = find(key)) {
            if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number()) {
                throw type_error(key, "an [x, y] pair of numbers");
            }
            out = {(*v)[0].get<double>(), (*v)[1].get<double>()};
        }
    }

    void get(const char* key, std::vector<double>& out) {
        if (const json* v = find(key)) {
            if (!v->is_array()) throw type_error(key, "an array of numbers");
            out.clear();
            for (const auto& e : *v) {
                if (!e.is_number()) throw type_error(key, "an array of numbers");
                out.push_back(e.get<double>());
            }
        }
    }

    void get(const char* key, std::vector<std::string>& out) {
        if (const json* v = find(key)) {
            if (!v->is_array()) throw type_error(key, "an array of strings");
            out.clear();
            for (const auto& e : *v) {
                if (!e.is_string()) throw type_error(key, "an array of strings");
                out.push_back(e.get<std::string>());
            }
        }
    }

    void get(const char* key, std::array<double, 3>& out) {
        if (const json* v = find(key)) {
            if (!v->is_array() || v->size() != 3) throw type_error(key, "an array of 3 numbers");
            for (std::size_t i = 0; i < 3; ++i) {
                if (!(*v)[i].is_number()) throw type_error(key, "an array of 3 numbers");
                out[i] = (*v)[i].get<double>();
            }
        }
    }

    template <typename Fn>
    void object(const char* key, Fn&& fn) {
        if (const json* v = find(key)) {
            ObjectReader sub(*v, path(key));
            fn(sub);
            sub.finish();
        }
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!used_.count(it.key())) throw ConfigError(fmt::format("unknown key '{}'", path(it.key().c_str())));
        }
    }

private:
    ConfigError type_error(const char* key, const char* expected) const {
        return ConfigError(fmt::format("'{}' must be {}", path(key), expected));
    }

    const json& j_;
    std::string where_;
    std::set<std::string> used_;
};

json point_json(const RinkPoint& p) { return json::array({p.x, p.y}); }

void read_regblock(ObjectReader& r, const char* key, RegBlockSpec& spec) {
    r.object(key, [&](ObjectReader& b) {
        b.get("in_channels", spec.in_channels);
        b.get("out_channels", spec.out_channels);
        b.get("temporal_kernel", spec.temporal_kernel);
        b.get("temporal_stride", spec.temporal_stride);
    });
}

json regblock_json(const RegBlockSpec& s) {
    return {{"in_channels", s.in_channels},
            {"out_channels", s.out_channels},
            {"temporal_kernel", s.temporal_kernel},
            {"temporal_stride", s.temporal_stride}};
}

void read_model(ObjectReader& r, ModelConfig& m) {
    std::string scale = to_string(m.scale);
    r.get("scale", scale);
    try {
        m = parse_model_scale(scale) == ModelScale::kToy ? ModelConfig::toy() : ModelConfig::paper();
    } catch (const UserError& e) {
        throw ConfigError(fmt::format("'{}': {}", r.path("scale"), e.what()));
    }
    r.get("frames", m.frames);
    r.get("frame_size", m.frame_size);
    r.get("heatmap_width", m.heatmap_width);
    r.get("heatmap_height", m.heatmap_height);
    r.get("stem_width", m.stem_width);
    r.get("stage2_width", m.stage2_width);
    r.get("stage3_width", m.stage3_width);
    r.get("stem_mid", m.stem_mid);
    read_regblock(r, "regblock_a", m.regblock_a);
    read_regblock(r, "regblock_b", m.regblock_b);
}

void read_train(ObjectReader& r, TrainConfig& t) {
    r.get("learning_rate", t.learning_rate);
    r.get("batch_size", t.batch_size);
    r.get("max_epochs", t.max_epochs);
    r.get("patience", t.patience);
    r.get("sigma", t.sigma);
    std::string unit = t.sigma_unit == SigmaUnit::kFeet ? "feet" : "cells";
    r.get("sigma_unit", unit);
    if (unit == "cells") {
        t.sigma_unit = SigmaUnit::kCells;
    } else if (unit == "feet") {
        t.sigma_unit = SigmaUnit::kFeet;
    } else {
        throw ConfigError(fmt::format("'{}' must be \"cells\" or \"feet\"", r.path("sigma_unit")));
    }
    r.get("normalize_target", t.normalize_target);
    r.object("sampling", [&](ObjectReader& s) {
        std::string mode = to_string(t.sampling.mode);
        s.get("mode", mode);
        t.sampling.mode = parse_sampling_mode(mode);
        s.get("count", t.sampling.count);
        s.get("interval", t.sampling.interval);
    });
    r.get("frozen_prefix", t.frozen_prefix);
    r.object("adam", [&](ObjectReader& a) {
        a.get("beta1", t.adam_beta1);
        a.get("beta2", t.adam_beta2);
        a.get("eps", t.adam_eps);
    });
    r.get("freeze_bn_stats", t.freeze_bn_stats);
    r.get("shuffle", t.shuffle);
}

void read_scenario(ObjectReader& r, ScenarioConfig& s) {
    r.get("rng_seed", s.rng_seed);
    r.get("clip_len_frames", s.clip_len_frames);
    r.get("fps", s.fps);
    r.get("frame_size", s.frame_size);
    r.object("puck", [&](ObjectReader& p) {
        p.get("randomize_location", s.puck.randomize_location);
        p.get("randomize_velocity", s.puck.randomize_velocity);
        p.get("location", s.puck.location);
        p.get("velocity", s.puck.velocity);
        p.get("max_initial_speed", s.puck.max_initial_speed);
        p.get("max_speed", s.puck.max_speed);
        p.get("impulse_probability", s.puck.impulse_probability);
    });
    r.object("occluders", [&](ObjectReader& o) {
        o.get("count", s.occluders.count);
        o.get("width_min_ft", s.occluders.width_min_ft);
        o.get("width_max_ft", s.occluders.width_max_ft);
        o.get("height_min_ft", s.occluders.height_min_ft);
        o.get("height_max_ft", s.occluders.height_max_ft);
        o.get("max_speed", s.occluders.max_speed);
        o.get("spawn_radius_ft", s.occluders.spawn_radius_ft);
    });
    r.object("camera", [&](ObjectReader& c) {
        c.get("follow", s.camera.follow);
        c.get("static_pan_x", s.camera.static_pan_x);
        c.get("pan_lag_s", s.camera.pan_lag_s);
        c.get("pan_min_x", s.camera.pan_min_x);
        c.get("pan_max_x", s.camera.pan_max_x);
        c.get("zoom_min", s.camera.zoom_min);
        c.get("zoom_max", s.camera.zoom_max);
        c.get("jitter_std_ft", s.camera.jitter_std_ft);
        c.get("height_ft", s.camera.height_ft);
        c.get("setback_ft", s.camera.setback_ft);
        c.get("view_width_ft", s.camera.view_width_ft);
    });
    r.get("blur_subsamples", s.blur_subsamples);
    r.get("min_in_view_fraction", s.min_in_view_fraction);
    r.get("max_occluded_fraction", s.max_occluded_fraction);
    r.get("puck_diameter_ft", s.puck_diameter_ft);
    r.get("max_attempts", s.max_attempts);
}

void read_zone_partition(ObjectReader& r, const char* key, ZonePartitionConfig& z) {
    r.object(key, [&](ObjectReader& p) {
        p.get("cuts", z.cuts);
        p.get("labels", z.labels);
    });
}

template <typename Fn>
auto config_errors(Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const UserError& e) {
        throw ConfigError(e.what());
    }
}

}  // namespace

std::uint64_t RunConfig::model_seed() const { return mix_seed(seed, 1); }
std::uint64_t RunConfig::split_seed() const { return mix_seed(seed, 2); }

void fan_out_seed(RunConfig& cfg) {
    cfg.train.seed = mix_seed(cfg.seed, 3);
    cfg.scenario.rng_seed = mix_seed(cfg.seed, 4);
}

void to_json(json& j, const ModelConfig& m) {
    j = {{"scale", to_string(m.scale)},
         {"frames", m.frames},
         {"frame_size", m.frame_size},
         {"heatmap_width", m.heatmap_width},
         {"heatmap_height", m.heatmap_height},
         {"stem_width", m.stem_width},
         {"stage2_width", m.stage2_width},
         {"stage3_width", m.stage3_width},
         {"stem_mid", m.stem_mid},
         {"regblock_a", regblock_json(m.regblock_a)},
         {"regblock_b", regblock_json(m.regblock_b)}};
}

void to_json(json& j, const TrainConfig& t) {
    j = {{"learning_rate", t.learning_rate},
         {"batch_size", t.batch_size},
         {"max_epochs", t.max_epochs},
         {"patience", t.patience},
         {"sigma", t.sigma},
         {"sigma_unit", t.sigma_unit == SigmaUnit::kFeet ? "feet" : "cells"},
         {"normalize_target", t.normalize_target},
         {"sampling",
          {{"mode", to_string(t.sampling.mode)}, {"count", t.sampling.count}, {"interval", t.sampling.interval}}},
         {"frozen_prefix", t.frozen_prefix},
         {"adam", {{"beta1", t.adam_beta1}, {"beta2", t.adam_beta2}, {"eps", t.adam_eps}}},
         {"freeze_bn_stats", t.freeze_bn_stats},
         {"shuffle", t.shuffle}};
}

void to_json(json& j, const ScenarioConfig& s) {
    j = {{"rng_seed", s.rng_seed},
         {"clip_len_frames", s.clip_len_frames},
         {"fps", s.fps},
         {"frame_size", s.frame_size},
         {"puck",
          {{"randomize_location", s.puck.randomize_location},
           {"randomize_velocity", s.puck.randomize_velocity},
           {"location", point_json(s.puck.location)},
           {"velocity", point_json(s.puck.velocity)},
           {"max_initial_speed", s.puck.max_initial_speed},
           {"max_speed", s.puck.max_speed},
           {"impulse_probability", s.puck.impulse_probability}}},
         {"occluders",
          {{"count", s.occluders.count},
           {"width_min_ft", s.occluders.width_min_ft},
           {"width_max_ft", s.occluders.width_max_ft},
           {"height_min_ft", s.occluders.height_min_ft},
           {"height_max_ft", s.occluders.height_max_ft},
           {"max_speed", s.occluders.max_speed},
           {"spawn_radius_ft", s.occluders.spawn_radius_ft}}},
         {"camera",
          {{"follow", s.camera.follow},
           {"static_pan_x", s.camera.static_pan_x},
           {"pan_lag_s", s.camera.pan_lag_s},
           {"pan_min_x", s.camera.pan_min_x},
           {"pan_max_x", s.camera.pan_max_x},
           {"zoom_min", s.camera.zoom_min},
           {"zoom_max", s.camera.zoom_max},
           {"jitter_std_ft", s.camera.jitter_std_ft},
           {"height_ft", s.camera.height_ft},
           {"setback_ft", s.camera.setback_ft},
           {"view_width_ft", s.camera.view_width_ft}}},
         {"blur_subsamples", s.blur_subsamples},
         {"min_in_view_fraction", s.min_in_view_fraction},
         {"max_occluded_fraction", s.max_occluded_fraction},
         {"puck_diameter_ft", s.puck_diameter_ft},
         {"max_attempts", s.max_attempts}};
}

ModelConfig parse_model_config(const json& j, const std::string& where) {
    return config_errors([&] {
        ModelConfig m = ModelConfig::toy();
        ObjectReader r(j, where);
        read_model(r, m);
        r.finish();
        return m;
    });
}

TrainConfig parse_train_config(const json& j, const std::string& where) {
    return config_errors([&] {
        TrainConfig t;
        ObjectReader r(j, where);
        read_train(r, t);
        r.finish();
        return t;
    });
}

ScenarioConfig parse_scenario_config(const json& j, const std::string& where) {
    return config_errors([&] {
        ScenarioConfig s;
        ObjectReader r(j, where);
        read_scenario(r, s);
        r.finish();
        return s;
    });
}

RunConfig parse_run_config(const json& j) {
    return config_errors([&] {
        RunConfig cfg;
        ObjectReader r(j, "");
        r.get("seed", cfg.seed);
        r.object("paths", [&](ObjectReader& p) {
            p.get("data_dir", cfg.paths.data_dir);
            p.get("events", cfg.paths.events);
            p.get("manifest", cfg.paths.manifest);
            p.get("run_dir", cfg.paths.run_dir);
            p.get("pretrained", cfg.paths.pretrained);
        });
        r.object("model", [&](ObjectReader& m) { read_model(m, cfg.model); });
        bool count_given = false;
        r.object("train", [&](ObjectReader& t) {
            if (const json* s = t.find("sampling"); s && s->is_object()) count_given = s->contains("count");
            read_train(t, cfg.train);
        });
        if (!count_given) cfg.train.sampling.count = cfg.model.frames;
        r.object("scenario", [&](ObjectReader& s) {
            read_scenario(s, cfg.scenario);
            if (s.find("rng_seed")) {
                throw ConfigError("'scenario.rng_seed' is derived from the top-level seed and cannot be set");
            }
        });
        r.get("synth_clips", cfg.synth_clips);
        r.object("split", [&](ObjectReader& s) {
            std::string mode = cfg.split.mode == SplitMode::kAll ? "all" : "fractions";
            s.get("mode", mode);
            if (mode == "all") {
                cfg.split.mode = SplitMode::kAll;
            } else if (mode == "fractions") {
                cfg.split.mode = SplitMode::kFractions;
            } else {
                throw ConfigError("'split.mode' must be \"fractions\" or \"all\"");
            }
            s.get("train", cfg.split.fractions.train);
            s.get("val", cfg.split.fractions.val);
            s.get("test", cfg.split.fractions.test);
        });
        r.object("zones", [&](ObjectReader& z) {
            read_zone_partition(z, "three", cfg.zones.three);
            read_zone_partition(z, "five", cfg.zones.five);
        });
        r.object("normalization", [&](ObjectReader& n) {
            n.get("mean", cfg.normalization.mean);
            n.get("std", cfg.normalization.std);
        });
        r.object("grid", [&](ObjectReader& g) {
            g.get("sigmas", cfg.grid.sigmas);
            std::vector<std::string> modes;
            for (auto m : cfg.grid.modes) modes.push_back(to_string(m));
            g.get("modes", modes);
            cfg.grid.modes.clear();
            for (const auto& m : modes) cfg.grid.modes.push_back(parse_sampling_mode(m));
        });
        r.finish();
        fan_out_seed(cfg);
        validate(cfg);
        return cfg;
    });
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
    try {
        return parse_run_config(j);
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

json to_json(const RunConfig& cfg) {
    json scenario = cfg.scenario;
    scenario.erase("rng_seed");
    json modes = json::array();
    for (auto m : cfg.grid.modes) modes.push_back(to_string(m));
    return {{"seed", cfg.seed},
            {"paths",
             {{"data_dir", cfg.paths.data_dir.string()},
              {"events", cfg.paths.events.string()},
              {"manifest", cfg.paths.manifest.string()},
              {"run_dir", cfg.paths.run_dir.string()},
              {"pretrained", cfg.paths.pretrained.string()}}},
            {"model", cfg.model},
            {"train", cfg.train},
            {"scenario", scenario},
            {"synth_clips", cfg.synth_clips},
            {"split",
             {{"mode", cfg.split.mode == SplitMode::kAll ? "all" : "fractions"},
              {"train", cfg.split.fractions.train},
              {"val", cfg.split.fractions.val},
              {"test", cfg.split.fractions.test}}},
            {"zones",
             {{"three", {{"cuts", cfg.zones.three.cuts}, {"labels", cfg.zones.three.labels}}},
              {"five", {{"cuts", cfg.zones.five.cuts}, {"labels", cfg.zones.five.labels}}}}},
            {"normalization", {{"mean", cfg.normalization.mean}, {"std", cfg.normalization.std}}},
            {"grid", {{"sigmas", cfg.grid.sigmas}, {"modes", modes}}}};
}

void validate(const RunConfig& cfg) {
    validate(cfg.train);
    validate(cfg.scenario);
    validate(cfg.normalization);
    if (cfg.train.sampling.count != cfg.model.frames) {
        throw ConfigError(fmt::format("train.sampling.count ({}) must equal model.frames ({})",
                                      cfg.train.sampling.count, cfg.model.frames));
    }
    if (cfg.train.frozen_prefix > Model::kExtractorDepth) {
        throw ConfigError(fmt::format("train.frozen_prefix must be at most {}", Model::kExtractorDepth));
    }
    if (cfg.split.mode == SplitMode::kFractions) {
        const auto& f = cfg.split.fractions;
        const double total = f.train + f.val + f.test;
        if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(total - 1.0) > 1e-9) {
            throw ConfigError(fmt::format("split fractions must be non-negative and sum to 1 (got {})", total));
        }
    }
    if (cfg.synth_clips < 1) throw ConfigError("synth_clips must be at least 1");
    cfg.zones.three.build();
    cfg.zones.five.build();
    for (double s : cfg.grid.sigmas) {
        if (!(s > 0.0)) throw ConfigError("grid.sigmas must be positive");
    }
}

}  // namespace puckloc
