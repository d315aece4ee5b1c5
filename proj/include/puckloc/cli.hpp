#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace puckloc::cli {

enum ExitCode : int { kOk = 0, kUserError = 1, kInternalError = 2 };

struct Options {
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out;
    bool resume = false;
    std::filesystem::path heatmap;
    int zones = 3;
    std::optional<std::size_t> n;
    std::filesystem::path checkpoint;
    std::filesystem::path clip;
    std::filesystem::path report;
};

// Each command returns its exit code; errors are reported on `err`.
int cmd_synth_gen(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_train(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_eval(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_predict(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_plot(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_grid(const Options& opts, std::ostream& out, std::ostream& err);

/// Parses `args` (without the program name) and dispatches to a subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace puckloc::cli
