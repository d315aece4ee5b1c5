#include "puckloc/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/videoio.hpp>
#include <spdlog/spdlog.h>

#include "csv.hpp"
#include "puckloc/errors.hpp"

namespace puckloc {

namespace {

constexpr std::array<std::pair<EventType, const char*>, 6> kEventNames{{
    {EventType::kShot, "shot"},
    {EventType::kDump, "dump"},
    {EventType::kFaceoff, "faceoff"},
    {EventType::kTurnover, "turnover"},
    {EventType::kHit, "hit"},
    {EventType::kOther, "other"},
}};

}  // namespace

std::string to_string(EventType t) {
    for (const auto& [type, name] : kEventNames) {
        if (type == t) return name;
    }
    return "other";
}

EventType parse_event_type(const std::string& s) {
    for (const auto& [type, name] : kEventNames) {
        if (s == name) return type;
    }
    throw InvalidArgumentError(fmt::format("unknown event type '{}'", s));
}

EventLoadResult load_events(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open events file '{}'", path.string()));

    std::string line;
    if (!std::getline(in, line)) throw ParseError(1, "header", "file is empty");
    csv::strip_cr(line);
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
    if (line != "clip_id,game_clock_s,event_type,x_ft,y_ft") {
        throw ParseError(1, "header", fmt::format("expected 'clip_id,game_clock_s,event_type,x_ft,y_ft', got '{}'", line));
    }

    EventLoadResult result;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        csv::strip_cr(line);
        if (line.empty()) continue;
        const auto f = csv::split(line);
        if (f.size() != 5) {
            throw ParseError(row, "row", fmt::format("expected 5 fields, got {}", f.size()));
        }
        EventRecord rec;
        rec.clip_id = f[0];
        if (rec.clip_id.empty()) throw ParseError(row, "clip_id", "empty identifier");
        rec.game_clock_s = csv::parse_int(f[1], row, "game_clock_s");
        try {
            rec.event_type = parse_event_type(f[2]);
        } catch (const InvalidArgumentError& e) {
            throw ParseError(row, "event_type", e.what());
        }
        rec.location = {csv::parse_double(f[3], row, "x_ft"), csv::parse_double(f[4], row, "y_ft")};
        if (!is_on_rink(rec.location)) {
            auto msg = fmt::format("{}: row {} rejected: location ({}, {}) is off the rink", path.filename().string(),
                                   row, rec.location.x, rec.location.y);
            spdlog::warn(msg);
            result.warnings.push_back(std::move(msg));
            continue;
        }
        result.records.push_back(std::move(rec));
    }

    std::map<std::string, std::size_t> histogram;
    for (const auto& r : result.records) ++histogram[to_string(r.event_type)];
    std::string hist;
    for (const auto& [name, n] : histogram) hist += fmt::format(" {}={}", name, n);
    spdlog::info("loaded {} events from {} ({} rejected):{}", result.records.size(), path.string(),
                 result.warnings.size(), hist);
    return result;
}

void write_events(const std::filesystem::path& path, std::span<const EventRecord> records) {
    std::ofstream out(path);
    if (!out) throw IoError(fmt::format("cannot write events file '{}'", path.string()));
    out << "clip_id,game_clock_s,event_type,x_ft,y_ft\n";
    for (const auto& r : records) {
        out << fmt::format("{},{},{},{:.17g},{:.17g}\n", r.clip_id, r.game_clock_s, to_string(r.event_type),
                           r.location.x, r.location.y);
    }
    if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

std::string to_string(SamplingMode m) {
    return m == SamplingMode::kRandomUniform ? "random_uniform" : "constant_interval";
}

SamplingMode parse_sampling_mode(const std::string& s) {
    if (s == "random_uniform" || s == "random") return SamplingMode::kRandomUniform;
    if (s == "constant_interval" || s == "constant") return SamplingMode::kConstantInterval;
    throw ConfigError(fmt::format("unknown sampling mode '{}' (expected random_uniform|constant_interval)", s));
}

void validate(const SamplingPolicy& p) {
    if (p.count < 1) throw InvalidArgumentError("sampling count must be at least 1");
    if (p.interval < 1) throw InvalidArgumentError("sampling interval must be at least 1");
}

std::vector<std::size_t> sample_frame_indices(const SamplingPolicy& policy, std::size_t clip_len) {
    validate(policy);
    if (clip_len < policy.count) {
        throw InsufficientFramesError(
            fmt::format("clip has {} frames, sampling needs at least {}", clip_len, policy.count));
    }
    std::vector<std::size_t> out;
    out.reserve(policy.count);
    if (policy.mode == SamplingMode::kConstantInterval) {
        for (std::size_t i = 0; i < policy.count; ++i) out.push_back(std::min(i * policy.interval, clip_len - 1));
        return out;
    }
    // Selection sampling (Knuth's algorithm S) keeps the draw ordered.
    std::mt19937_64 rng(policy.rng_seed);
    std::uniform_int_distribution<std::size_t> pick;
    std::size_t needed = policy.count;
    for (std::size_t i = 0; i < clip_len && needed > 0; ++i) {
        const std::size_t remaining = clip_len - i;
        if (pick(rng, decltype(pick)::param_type(0, remaining - 1)) < needed) {
            out.push_back(i);
            --needed;
        }
    }
    return out;
}

void validate(const Normalization& n) {
    for (std::size_t c = 0; c < 3; ++c) {
        if (!(n.std[c] > 0.0) || !std::isfinite(n.mean[c])) {
            throw InvalidArgumentError("normalization std must be positive and mean finite");
        }
    }
}

Tensor denormalize(const ClipTensor& clip) {
    Tensor out = clip.frames;
    const std::size_t t = out.dim(0);
    const std::size_t plane = out.dim(2) * out.dim(3);
    for (std::size_t ti = 0; ti < t; ++ti) {
        for (std::size_t c = 0; c < 3; ++c) {
            double* p = out.data() + (ti * 3 + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] = p[i] * clip.normalization.std[c] + clip.normalization.mean[c];
        }
    }
    return out;
}

cv::Mat InMemoryClip::frame(std::size_t index) const {
    if (index >= frames_.size()) throw IoError(fmt::format("frame {} is out of range", index));
    if (frames_[index].empty()) throw IoError(fmt::format("frame {} could not be decoded", index));
    return frames_[index];
}

std::string FrameDirectoryClip::frame_name(std::size_t index) { return fmt::format("frame_{:04d}.png", index); }

FrameDirectoryClip::FrameDirectoryClip(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (!std::filesystem::is_directory(dir_)) {
        throw IoError(fmt::format("clip directory '{}' does not exist", dir_.string()));
    }
    while (std::filesystem::exists(dir_ / frame_name(count_))) ++count_;
}

cv::Mat FrameDirectoryClip::frame(std::size_t index) const {
    if (index >= count_) throw IoError(fmt::format("frame {} is out of range for '{}'", index, dir_.string()));
    const auto path = dir_ / frame_name(index);
    cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (img.empty()) throw IoError(fmt::format("frame {} ('{}') could not be decoded", index, path.string()));
    return img;
}

VideoFileClip::VideoFileClip(const std::filesystem::path& path) {
    cv::VideoCapture cap(path.string());
    if (!cap.isOpened()) throw IoError(fmt::format("cannot open video '{}'", path.string()));
    cv::Mat f;
    while (cap.read(f)) frames_.push_back(f.clone());
    if (frames_.empty()) throw IoError(fmt::format("video '{}' has no decodable frames", path.string()));
}

cv::Mat VideoFileClip::frame(std::size_t index) const {
    if (index >= frames_.size()) throw IoError(fmt::format("frame {} is out of range", index));
    return frames_[index];
}

std::unique_ptr<FrameProvider> open_clip(const std::filesystem::path& path) {
    if (std::filesystem::is_directory(path)) return std::make_unique<FrameDirectoryClip>(path);
    if (!std::filesystem::exists(path)) throw IoError(fmt::format("clip '{}' does not exist", path.string()));
    return std::make_unique<VideoFileClip>(path);
}

namespace {

cv::Mat checked_frame(const FrameProvider& clip, std::size_t index) {
    cv::Mat f = clip.frame(index);
    if (f.depth() != CV_8U) throw IoError(fmt::format("frame {} is not 8-bit", index));
    if (f.channels() != 3) {
        throw InvalidArgumentError(fmt::format("frame {} has {} channels, expected 3", index, f.channels()));
    }
    return f;
}

cv::Mat resized(const cv::Mat& f, std::size_t size) {
    const int s = static_cast<int>(size);
    if (f.cols == s && f.rows == s) return f;
    cv::Mat out;
    const int interp = (f.cols > s || f.rows > s) ? cv::INTER_AREA : cv::INTER_LINEAR;
    cv::resize(f, out, cv::Size(s, s), 0, 0, interp);
    return out;
}

}  // namespace

ClipTensor preprocess_clip(const FrameProvider& clip, std::span<const std::size_t> indices, const Normalization& norm,
                           std::size_t size) {
    validate(norm);
    if (size < 1) throw InvalidArgumentError("frame size must be positive");
    const std::size_t plane = size * size;
    ClipTensor out{Tensor({indices.size(), 3, size, size}), norm};
    for (std::size_t t = 0; t < indices.size(); ++t) {
        const cv::Mat f = resized(checked_frame(clip, indices[t]), size);
        for (std::size_t c = 0; c < 3; ++c) {
            // OpenCV stores BGR; tensor channels are RGB.
            const int src_c = static_cast<int>(2 - c);
            const double mean = norm.mean[c];
            const double inv_std = 1.0 / norm.std[c];
            double* dst = out.frames.data() + (t * 3 + c) * plane;
            for (int r = 0; r < f.rows; ++r) {
                const auto* row = f.ptr<unsigned char>(r);
                for (int col = 0; col < f.cols; ++col) {
                    const double v = row[col * 3 + src_c] / 255.0;
                    dst[static_cast<std::size_t>(r) * size + static_cast<std::size_t>(col)] = (v - mean) * inv_std;
                }
            }
        }
    }
    return out;
}

ClipTensor preprocess_clip(const FrameProvider& clip, const SamplingPolicy& policy, const Normalization& norm,
                           std::size_t size) {
    const auto indices = sample_frame_indices(policy, clip.frame_count());
    return preprocess_clip(clip, indices, norm, size);
}

InMemoryClip load_resized(const FrameProvider& clip, std::size_t size) {
    std::vector<cv::Mat> frames;
    frames.reserve(clip.frame_count());
    for (std::size_t i = 0; i < clip.frame_count(); ++i) frames.push_back(resized(checked_frame(clip, i), size).clone());
    return InMemoryClip(std::move(frames));
}

DatasetSplit make_split(std::span<const EventRecord> records, const SplitFractions& fractions, std::uint64_t seed) {
    if (records.empty()) throw InvalidArgumentError("cannot split an empty record set");
    const double total = fractions.train + fractions.val + fractions.test;
    if (fractions.train < 0 || fractions.val < 0 || fractions.test < 0 || std::abs(total - 1.0) > 1e-9) {
        throw InvalidArgumentError(fmt::format("split fractions must be non-negative and sum to 1 (got {})", total));
    }
    std::set<std::string> unique;
    for (const auto& r : records) unique.insert(r.clip_id);
    std::vector<std::string> ids(unique.begin(), unique.end());
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);

    const auto n = static_cast<double>(ids.size());
    const auto n_val = static_cast<std::size_t>(std::floor(n * fractions.val + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(n * fractions.test + 1e-9));

    DatasetSplit split;
    split.fractions = fractions;
    split.seed = seed;
    split.val.assign(ids.begin(), ids.begin() + static_cast<long>(n_val));
    split.test.assign(ids.begin() + static_cast<long>(n_val), ids.begin() + static_cast<long>(n_val + n_test));
    split.train.assign(ids.begin() + static_cast<long>(n_val + n_test), ids.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(fmt::format("cannot open manifest '{}'", path.string()));
    std::string line;
    std::getline(in, line);
    csv::strip_cr(line);
    if (line != "clip_id,path") throw ParseError(1, "header", "expected 'clip_id,path'");
    Manifest m;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        csv::strip_cr(line);
        if (line.empty()) continue;
        const auto f = csv::split(line);
        if (f.size() != 2 || f[0].empty() || f[1].empty()) throw ParseError(row, "row", "expected 'clip_id,path'");
        std::filesystem::path p(f[1]);
        if (p.is_relative()) p = path.parent_path() / p;
        m[f[0]] = p;
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
    std::ofstream out(path);
    if (!out) throw IoError(fmt::format("cannot write manifest '{}'", path.string()));
    out << "clip_id,path\n";
    for (const auto& [id, p] : manifest) out << id << ',' << p.generic_string() << '\n';
    if (!out) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

}  // namespace puckloc
