#include "hanova/run.hpp"

#include <cmath>

#include "hanova/error.hpp"
#include "hanova/formula.hpp"

namespace hanova {

void RunConfig::validate() const {
    if (method != "classical" && method != "moments" && method != "bayes" && method != "all")
        throw ConfigError("unknown method '" + method + "'");
    if (format != "text" && format != "json" && format != "csv" && format != "svg")
        throw ConfigError("unknown format '" + format + "'");
    if (format == "svg" && method == "classical")
        throw ConfigError("svg output needs a variance-component method");
    if ((method == "moments" || method == "all") && draws < 1)
        throw ConfigError("draws must be at least 1");
    if (method == "bayes" || method == "all") {
        ChainConfig chain;
        chain.chains = chains;
        chain.iters = iters;
        chain.warmup = warmup;
        chain.thin = thin;
        chain.validate();
        if (!std::isnan(sigma_max) && !(sigma_max > 0.0))
            throw ConfigError("sigma-max must be positive");
    }
    if (threads < 1) throw ConfigError("threads must be at least 1");
}

namespace {

std::vector<AliasDecl> collect_aliases(const ModelSpec& spec, const RunConfig& config) {
    std::vector<AliasDecl> aliases = spec.aliases;
    for (const auto& text : config.aliases) aliases.push_back(parse_alias(text));
    return aliases;
}

}  // namespace

RunResult run_fit(const RunConfig& config, const Dataset& data) {
    config.validate();
    const ModelSpec spec = parse_model(config.model);
    const std::vector<Term> terms = expand_terms(spec, data.factor_names());
    const DesignModel design = build_design(terms, data, collect_aliases(spec, config));

    RunResult result;
    result.model = render_model(spec);
    result.method = config.method;
    result.seed = config.seed;
    for (const auto& b : design.batches) {
        result.labels.push_back(b.label);
        result.J.push_back(b.J);
        result.df.push_back(b.df);
    }

    const bool classical_ok = design.balance.balanced && design.balance.orthogonal;
    const bool wants_classical = config.method != "bayes";
    const bool wants_moments = config.method == "moments" || config.method == "all";
    const bool wants_bayes = config.method == "bayes" || config.method == "all";

    if (wants_classical && !classical_ok && config.method == "all") {
        result.warnings.push_back(
            "design is not balanced and orthogonal; classical and moments results skipped");
    } else if (wants_classical || classical_ok) {
        const BatchEstimates est = fit_effects(design, data.y);
        result.table = anova_table(est, design);
        if (wants_moments) {
            const MomentsResult moments = run_moments(design, est, config.draws, config.seed, config.threads);
            result.moments = summarize_moments(moments, design);
            result.moment_draws = config.draws;
            for (const auto& w : moments.warnings) result.warnings.push_back(w);
        }
    }

    if (wants_bayes) {
        ChainConfig chain;
        chain.chains = config.chains;
        chain.iters = config.iters;
        chain.warmup = config.warmup;
        chain.thin = config.thin;
        chain.seed = config.seed;
        chain.px = config.px;
        chain.threads = config.threads;
        chain.options.sigma_max = config.sigma_max;
        if (std::isnan(chain.options.sigma_max)) {
            const double n = static_cast<double>(data.n());
            const double sd = n > 1 ? std::sqrt((data.y.array() - data.y.mean()).square().sum() / (n - 1))
                                    : 0.0;
            chain.options.sigma_max = 100.0 * (sd > 0.0 ? sd : 1.0);
        }
        const PosteriorResult posterior =
            run_chains(design, data.y, HyperPrior::uniform_sigma(design.M()), chain);
        result.posterior = summarize_posterior(posterior.draws, design);
        result.chain = chain;
        result.diagnostics = posterior.diagnostics;
        for (const auto& w : posterior.diagnostics.warnings) result.warnings.push_back(w);
    }
    return result;
}

RunResult run_fit(const RunConfig& config) {
    config.validate();
    const ModelSpec spec = parse_model(config.model);
    const Dataset data = read_csv(config.data_path, spec.response, referenced_factors(spec));
    return run_fit(config, data);
}

std::string render(const RunResult& result, const std::string& format) {
    if (format == "json") return write_json(result);
    if (format == "csv") return write_csv(result);
    if (format == "svg") {
        const VCSummary* vc = result.primary_summary();
        if (!vc) throw ConfigError("svg output needs a variance-component method");
        return render_vc_display(*vc, DisplayFormat::svg);
    }
    return render_text(result);
}

}  // namespace hanova
