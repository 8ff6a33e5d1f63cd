#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "hanova/error.hpp"
#include "hanova/run.hpp"

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical analysis of variance"};
    app.require_subcommand(1);
    hanova::RunConfig config;
    std::string seed_text;

    CLI::App* fit = app.add_subcommand("fit", "Fit a model to a CSV data file");
    fit->add_option("--data", config.data_path, "CSV file with a header row")->required();
    fit->add_option("--model", config.model, "Model formula, e.g. \"y ~ a*b\"")->required();
    fit->add_option("--method", config.method, "classical | moments | bayes | all")
        ->check(CLI::IsMember({"classical", "moments", "bayes", "all"}));
    fit->add_option("--draws", config.draws, "Simulation draws for the moments method");
    fit->add_option("--chains", config.chains, "Gibbs chains");
    fit->add_option("--iters", config.iters, "Iterations per chain, including warmup");
    fit->add_option("--warmup", config.warmup, "Warmup iterations per chain");
    fit->add_option("--thin", config.thin, "Keep every T-th post-warmup draw");
    fit->add_option("--seed", seed_text, "Random seed (falls back to HANOVA_SEED, then 1)");
    fit->add_option("--format", config.format, "text | json | csv | svg")
        ->check(CLI::IsMember({"text", "json", "csv", "svg"}));
    fit->add_option("--out", config.out_path, "Output file (default: stdout)");
    fit->add_option("--alias", config.aliases, "Aliasing declaration coarse=fine, e.g. trt=row:col");
    fit->add_option("--threads", config.threads, "Worker threads");
    fit->add_option("--sigma-max", config.sigma_max,
                    "Upper bound on sigma for 1-df batches (default 100 sd(y))");
    bool no_px = false;
    fit->add_flag("--no-px", no_px, "Use plain Gibbs instead of parameter expansion");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInput;
    }
    config.px = !no_px;

    try {
        if (seed_text.empty()) {
            const char* env = std::getenv("HANOVA_SEED");
            if (env && *env) seed_text = env;
        }
        if (!seed_text.empty()) {
            std::size_t used = 0;
            try {
                config.seed = std::stoull(seed_text, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != seed_text.size() || seed_text.front() == '-')
                throw hanova::ConfigError("seed must be a nonnegative integer, got '" + seed_text + "'");
        }
        const hanova::RunResult result = hanova::run_fit(config);
        const std::string output = hanova::render(result, config.format);
        if (config.out_path.empty()) {
            std::cout << output;
        } else {
            std::ofstream out(config.out_path, std::ios::binary);
            if (!out) throw hanova::SerializationError("cannot write '" + config.out_path + "'");
            out << output;
            if (!out) throw hanova::SerializationError("cannot write '" + config.out_path + "'");
        }
        if (config.format != "text")
            for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
        return 0;
    } catch (const hanova::InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const hanova::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    }
}
