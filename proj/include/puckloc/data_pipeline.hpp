#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "puckloc/rink_geometry.hpp"
#include "puckloc/tensor.hpp"

namespace puckloc {

enum class EventType { kShot, kDump, kFaceoff, kTurnover, kHit, kOther };

std::string to_string(EventType t);
/// Throws InvalidArgumentError for unknown names.
EventType parse_event_type(const std::string& s);

struct EventRecord {
    std::string clip_id;
    std::int64_t game_clock_s = 0;
    EventType event_type = EventType::kOther;
    RinkPoint location;

    friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct EventLoadResult {
    std::vector<EventRecord> records;
    /// One entry per rejected (off-rink) row.
    std::vector<std::string> warnings;
};

/// Reads `clip_id,game_clock_s,event_type,x_ft,y_ft` (header required).
///
/// Malformed rows throw ParseError with the 1-based file line and field name.
/// Rows whose location lies off the rink are skipped with a warning.
EventLoadResult load_events(const std::filesystem::path& path);
void write_events(const std::filesystem::path& path, std::span<const EventRecord> records);

enum class SamplingMode { kRandomUniform, kConstantInterval };

std::string to_string(SamplingMode m);
SamplingMode parse_sampling_mode(const std::string& s);

struct SamplingPolicy {
    SamplingMode mode = SamplingMode::kRandomUniform;
    std::size_t count = 16;
    std::size_t interval = 4;
    std::uint64_t rng_seed = 0;
};

void validate(const SamplingPolicy& p);

/// Ascending frame indices in [0, clip_len).
///
/// Random mode draws `count` distinct indices uniformly; constant mode takes
/// every `interval`-th frame from 0 and clamps to the last frame, repeating it
/// when the clip is too short for the full stride.
std::vector<std::size_t> sample_frame_indices(const SamplingPolicy& policy, std::size_t clip_len);

/// Per-channel RGB statistics applied after scaling pixels to [0, 1].
struct Normalization {
    std::array<double, 3> mean{0.43216, 0.394666, 0.37645};
    std::array<double, 3> std{0.22803, 0.22145, 0.216989};

    friend bool operator==(const Normalization&, const Normalization&) = default;
};

void validate(const Normalization& n);

/// T x 3 x S x S normalized RGB frames.
struct ClipTensor {
    Tensor frames;
    Normalization normalization;
};

/// Undo the standardization, recovering values in [0, 1].
Tensor denormalize(const ClipTensor& clip);

/// Source of decoded frames. Frames are 8-bit BGR images (OpenCV order).
class FrameProvider {
public:
    virtual ~FrameProvider() = default;
    virtual std::size_t frame_count() const = 0;
    /// Throws IoError naming the index when the frame cannot be decoded.
    virtual cv::Mat frame(std::size_t index) const = 0;
};

class InMemoryClip : public FrameProvider {
public:
    explicit InMemoryClip(std::vector<cv::Mat> frames) : frames_(std::move(frames)) {}

    std::size_t frame_count() const override { return frames_.size(); }
    cv::Mat frame(std::size_t index) const override;

private:
    std::vector<cv::Mat> frames_;
};

/// Directory of `frame_%04d.png` images.
class FrameDirectoryClip : public FrameProvider {
public:
    explicit FrameDirectoryClip(std::filesystem::path dir);

    std::size_t frame_count() const override { return count_; }
    cv::Mat frame(std::size_t index) const override;

    static std::string frame_name(std::size_t index);

private:
    std::filesystem::path dir_;
    std::size_t count_ = 0;
};

/// Video file decoded eagerly through OpenCV.
class VideoFileClip : public FrameProvider {
public:
    explicit VideoFileClip(const std::filesystem::path& path);

    std::size_t frame_count() const override { return frames_.size(); }
    cv::Mat frame(std::size_t index) const override;

private:
    std::vector<cv::Mat> frames_;
};

/// Opens a frame directory or a video file.
std::unique_ptr<FrameProvider> open_clip(const std::filesystem::path& path);

ClipTensor preprocess_clip(const FrameProvider& clip, std::span<const std::size_t> indices, const Normalization& norm,
                           std::size_t size);
ClipTensor preprocess_clip(const FrameProvider& clip, const SamplingPolicy& policy, const Normalization& norm,
                           std::size_t size);

/// Decodes every frame and resizes it to size x size.
InMemoryClip load_resized(const FrameProvider& clip, std::size_t size);

struct SplitFractions {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct DatasetSplit {
    SplitFractions fractions;
    std::uint64_t seed = 0;
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;
};

/// Per-clip split. val and test get floor(n * fraction); train takes the rest.
DatasetSplit make_split(std::span<const EventRecord> records, const SplitFractions& fractions, std::uint64_t seed);

/// clip_id -> clip path, stored as `clip_id,path` CSV next to the events file.
using Manifest = std::map<std::string, std::filesystem::path>;

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

}  // namespace puckloc
