#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hanova/io.hpp"

namespace hanova {

struct RunConfig {
    std::string data_path;
    std::string model;
    std::string method = "all";  // classical | moments | bayes | all
    int draws = 1000;
    int chains = 4;
    int iters = 2000;
    int warmup = 1000;
    int thin = 1;
    std::uint64_t seed = 1;
    std::string format = "text";  // text | json | csv | svg
    std::string out_path;         // empty: stdout
    std::vector<std::string> aliases;  // "coarse=fine" declarations
    unsigned threads = 1;
    bool px = true;
    double sigma_max = std::numeric_limits<double>::quiet_NaN();

    void validate() const;  // throws ConfigError
};

// Parses the model, builds the design and runs the requested engines.
RunResult run_fit(const RunConfig& config, const Dataset& data);
// Same, reading the data from config.data_path.
RunResult run_fit(const RunConfig& config);

// Renders in config.format.
std::string render(const RunResult& result, const std::string& format);

}  // namespace hanova
