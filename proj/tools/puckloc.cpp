#include <iostream>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "puckloc/cli.hpp"

int main(int argc, char** argv) {
    // Logs go to stderr so command output on stdout stays machine-readable.
    spdlog::set_default_logger(spdlog::stderr_color_mt("puckloc"));
    std::vector<std::string> args(argv + 1, argv + argc);
    return puckloc::cli::run(args, std::cout, std::cerr);
}
