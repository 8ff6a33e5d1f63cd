#include "hanova/bayes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hanova/error.hpp"
#include "hanova/parallel.hpp"

namespace hanova {

HyperPrior HyperPrior::uniform_sigma(int batches) {
    return {std::vector<double>(static_cast<std::size_t>(batches), -1.0),
            std::vector<double>(static_cast<std::size_t>(batches), 0.0)};
}

std::vector<int> sampled_batches(const DesignModel& design) {
    std::vector<int> out;
    for (int m : design.sweep_order)
        if (m != design.residual && design.batch(m).df > 0) out.push_back(m);
    return out;
}

namespace {

constexpr double kTinyVariance = std::numeric_limits<double>::min();

double sample_sd(const Eigen::Ref<const Eigen::VectorXd>& y) {
    if (y.size() < 2) return 0.0;
    return std::sqrt((y.array() - y.mean()).square().sum() / static_cast<double>(y.size() - 1));
}

double resolve_sigma_max(const SamplerOptions& options, const Eigen::Ref<const Eigen::VectorXd>& y) {
    if (!std::isnan(options.sigma_max)) return options.sigma_max;
    const double sd = sample_sd(y);
    return 100.0 * (sd > 0.0 ? sd : 1.0);
}

Eigen::VectorXd total_fit(const DesignModel& design, const std::vector<int>& sampled,
                          const std::vector<Eigen::VectorXd>& beta) {
    Eigen::VectorXd fit = Eigen::VectorXd::Zero(design.n);
    for (int m : sampled) fit += design.expand(m, beta[m]);
    return fit;
}

// sigma^2 draw from scaled-Inv-chi^2(J + nu, (nu s0^2 + S) / (J + nu)),
// optionally conditioned on sigma^2 <= bound.
double draw_variance(double count, double sum_squares, double nu, double s0sq, double bound,
                     RngStream& rng) {
    const double dof = count + nu;
    if (!(dof > 0.0))
        throw NumericalFailure("variance conditional has nonpositive degrees of freedom");
    const double numerator = nu * s0sq + sum_squares;
    double chi = sample_chisq(dof, rng);
    if (std::isfinite(bound)) {
        const double floor = numerator / bound;
        for (int attempt = 0; chi < floor && attempt < 1000; ++attempt) chi = sample_chisq(dof, rng);
        chi = std::max(chi, floor);
    }
    return std::max(numerator / chi, kTinyVariance);
}

double variance_bound(const DesignModel& design, int m, double sigma_max) {
    return design.batch(m).df == 1 ? sigma_max * sigma_max : std::numeric_limits<double>::infinity();
}

void draw_mu(ChainState& state, const Eigen::Ref<const Eigen::VectorXd>& y,
             const Eigen::VectorXd& fit, double noise_var, RngStream& rng) {
    const double n = static_cast<double>(y.size());
    state.mu = sample_normal((y - fit).mean(), std::sqrt(noise_var / n), rng);
}

}  // namespace

ChainState init_chain(const DesignModel& design, const Eigen::Ref<const Eigen::VectorXd>& y,
                      const std::optional<MomentsEstimate>& moments, bool px, RngStream& rng) {
    const int M = design.M();
    const BatchEstimates est = sweep_effects(design, y);
    const Eigen::MatrixXd a = ev_matrix(design);
    const std::vector<int> sampled = sampled_batches(design);
    const double fallback = 1e-6 * std::max(sample_sd(y) * sample_sd(y), 1e-12);

    ChainState state;
    state.mu = est.grand_mean;
    state.sigma = Eigen::VectorXd::Zero(M);
    state.beta.resize(static_cast<std::size_t>(M));
    for (int m = 0; m < M; ++m) state.beta[m] = Eigen::VectorXd::Zero(design.batch(m).J);

    std::vector<int> active = sampled;
    active.push_back(design.residual);
    for (int m : active) {
        double var;
        if (moments && moments->sigma2[m] > 0.0) {
            var = moments->sigma2[m] * sample_uniform(0.8, 1.25, rng);
        } else if (moments) {
            double bound = std::fabs(moments->excess[m]);
            if (!(bound > 0.0)) bound = std::isnan(est.v[m]) ? 0.0 : est.v[m];
            var = sample_uniform(0.0, bound, rng);
        } else {
            var = (std::isnan(est.v[m]) ? 0.0 : est.v[m]) * sample_uniform(0.8, 1.25, rng);
        }
        if (!(var > 0.0)) var = fallback;
        state.sigma[m] = std::sqrt(var);
    }
    for (int m : sampled) {
        const Batch& b = design.batch(m);
        double noise = 0.0;
        for (int k : b.containers) noise += a(m, k) * state.sigma[k] * state.sigma[k];
        const double var = state.sigma[m] * state.sigma[m];
        state.beta[m] = (var / (var + noise)) * est.beta[m];
    }
    state.beta[design.residual] = y.array() - state.mu - total_fit(design, sampled, state.beta).array();
    if (px) state.px = PxState{state.beta, Eigen::VectorXd::Ones(M), state.sigma};
    return state;
}

void update_beta(ChainState& state, const DesignModel& design,
                 const Eigen::Ref<const Eigen::VectorXd>& y, RngStream& rng) {
    const std::vector<int> sampled = sampled_batches(design);
    const double noise_var = state.sigma[design.residual] * state.sigma[design.residual];
    Eigen::VectorXd fit = total_fit(design, sampled, state.beta);
    draw_mu(state, y, fit, noise_var, rng);
    for (int m : sampled) {
        const Batch& b = design.batch(m);
        fit -= design.expand(m, state.beta[m]);
        const Eigen::VectorXd sums = design.cell_sums(m, y.array() - state.mu - fit.array());
        const double prior_prec = 1.0 / (state.sigma[m] * state.sigma[m]);
        for (Index j = 0; j < b.J; ++j) {
            const double prec = static_cast<double>(b.cell_count[j]) / noise_var + prior_prec;
            state.beta[m][j] = sample_normal(sums[j] / noise_var / prec, std::sqrt(1.0 / prec), rng);
        }
        fit += design.expand(m, state.beta[m]);
    }
    state.beta[design.residual] = y.array() - state.mu - fit.array();
    update_shifts(state, design, rng);
}

void update_shifts(ChainState& state, const DesignModel& design, RngStream& rng) {
    const std::vector<int> sampled = sampled_batches(design);
    std::vector<char> is_sampled(static_cast<std::size_t>(design.M()), 0);
    for (int m : sampled) is_sampled[m] = 1;
    for (int m : sampled) {
        const Batch& b = design.batch(m);
        const double child_prec = 1.0 / (state.sigma[m] * state.sigma[m]);
        for (std::size_t k = 0; k < b.ancestors.size(); ++k) {
            const int a = b.ancestors[k];
            if (!is_sampled[a]) continue;
            const std::vector<Index>& parent = b.ancestor_cells[k];
            const Index Ja = design.batch(a).J;
            Eigen::VectorXd child_sum = Eigen::VectorXd::Zero(Ja);
            Eigen::VectorXd child_count = Eigen::VectorXd::Zero(Ja);
            for (Index j = 0; j < b.J; ++j) {
                child_sum[parent[j]] += state.beta[m][j];
                child_count[parent[j]] += 1.0;
            }
            const double parent_prec = 1.0 / (state.sigma[a] * state.sigma[a]);
            Eigen::VectorXd delta(Ja);
            for (Index c = 0; c < Ja; ++c) {
                const double prec = parent_prec + child_count[c] * child_prec;
                const double mean = (child_sum[c] * child_prec - state.beta[a][c] * parent_prec) / prec;
                delta[c] = sample_normal(mean, std::sqrt(1.0 / prec), rng);
            }
            state.beta[a] += delta;
            for (Index j = 0; j < b.J; ++j) state.beta[m][j] -= delta[parent[j]];
        }
        // The grand mean has a flat prior, so only the batch prior constrains the shift.
        const double delta = sample_normal(state.beta[m].mean(),
                                           state.sigma[m] / std::sqrt(static_cast<double>(b.J)), rng);
        state.mu += delta;
        state.beta[m].array() -= delta;
    }
}

void update_sigma(ChainState& state, const DesignModel& design, const HyperPrior& prior,
                  double sigma_max, RngStream& rng) {
    std::vector<int> active = sampled_batches(design);
    active.push_back(design.residual);
    for (int m : active) {
        const double var = draw_variance(static_cast<double>(design.batch(m).J),
                                         state.beta[m].squaredNorm(), prior.nu.at(m),
                                         prior.s0sq.at(m), variance_bound(design, m, sigma_max), rng);
        state.sigma[m] = std::sqrt(var);
    }
}

ChainState gibbs_step_plain(const ChainState& state, const DesignModel& design,
                            const Eigen::Ref<const Eigen::VectorXd>& y, const HyperPrior& prior,
                            RngStream& rng, const SamplerOptions& options) {
    ChainState next = state;
    next.px.reset();
    update_beta(next, design, y, rng);
    update_sigma(next, design, prior, resolve_sigma_max(options, y), rng);
    return next;
}

Eigen::MatrixXd px_predictors(const DesignModel& design, const PxState& px) {
    const std::vector<int> sampled = sampled_batches(design);
    Eigen::MatrixXd z(design.n, static_cast<Index>(sampled.size()));
    for (std::size_t c = 0; c < sampled.size(); ++c)
        z.col(static_cast<Index>(c)) = design.expand(sampled[c], px.gamma[sampled[c]]);
    return z;
}

ChainState gibbs_step_px(const ChainState& state, const DesignModel& design,
                         const Eigen::Ref<const Eigen::VectorXd>& y, const HyperPrior& prior,
                         RngStream& rng, const SamplerOptions& options) {
    const int M = design.M();
    const std::vector<int> sampled = sampled_batches(design);
    const int res = design.residual;
    const double sigma_max = resolve_sigma_max(options, y);

    // Each step starts from the identity expansion of the current (beta, sigma).
    ChainState next = state;
    update_shifts(next, design, rng);
    PxState px{next.beta, Eigen::VectorXd::Ones(M), next.sigma};
    const double noise_var = state.sigma[res] * state.sigma[res];

    Eigen::VectorXd fit = total_fit(design, sampled, px.gamma);
    draw_mu(next, y, fit, noise_var, rng);

    for (int m : sampled) {
        const Batch& b = design.batch(m);
        const double alpha = px.alpha[m];
        fit -= alpha * design.expand(m, px.gamma[m]);
        const Eigen::VectorXd sums = design.cell_sums(m, y.array() - next.mu - fit.array());
        const double prior_prec = 1.0 / (px.tau[m] * px.tau[m]);
        for (Index j = 0; j < b.J; ++j) {
            const double prec =
                alpha * alpha * static_cast<double>(b.cell_count[j]) / noise_var + prior_prec;
            px.gamma[m][j] = sample_normal(alpha * sums[j] / noise_var / prec, std::sqrt(1.0 / prec), rng);
        }
        fit += alpha * design.expand(m, px.gamma[m]);
    }

    if (!sampled.empty()) {
        const Eigen::MatrixXd z = px_predictors(design, px);
        const Eigen::VectorXd target = y.array() - next.mu;
        Eigen::MatrixXd gram = z.transpose() * z;
        Eigen::VectorXd scale = gram.diagonal().cwiseSqrt();
        if ((scale.array() <= 0.0).any() || !scale.allFinite())
            throw NumericalFailure("expansion regression has an all-zero predictor");
        // Equilibrate so that near-zero batches do not wreck the factorization.
        gram = scale.cwiseInverse().asDiagonal() * gram * scale.cwiseInverse().asDiagonal();
        const Eigen::VectorXd rhs = scale.cwiseInverse().asDiagonal() * (z.transpose() * target);
        Eigen::LLT<Eigen::MatrixXd> llt(gram);
        if (llt.info() != Eigen::Success)
            throw NumericalFailure("expansion regression is not positive definite");
        const Eigen::VectorXd mean = llt.solve(rhs);
        Eigen::VectorXd noise(static_cast<Index>(sampled.size()));
        for (Index c = 0; c < noise.size(); ++c) noise[c] = sample_normal(0.0, 1.0, rng);
        const Eigen::VectorXd draw =
            mean + std::sqrt(noise_var) * llt.matrixU().solve(noise);
        for (std::size_t c = 0; c < sampled.size(); ++c)
            px.alpha[sampled[c]] = draw[static_cast<Index>(c)] / scale[static_cast<Index>(c)];
    }

    for (int m : sampled) {
        const double alpha = std::fabs(px.alpha[m]);
        const double bound = design.batch(m).df == 1
                                 ? (sigma_max / alpha) * (sigma_max / alpha)
                                 : std::numeric_limits<double>::infinity();
        const double var = draw_variance(static_cast<double>(design.batch(m).J),
                                         px.gamma[m].squaredNorm(), prior.nu.at(m),
                                         prior.s0sq.at(m), bound, rng);
        // tau carries the sign of alpha so that sigma = alpha * tau holds literally.
        px.tau[m] = std::copysign(std::sqrt(var), px.alpha[m]);
        next.beta[m] = px.alpha[m] * px.gamma[m];
        next.sigma[m] = px.alpha[m] * px.tau[m];
    }

    next.beta[res] = y.array() - next.mu - total_fit(design, sampled, next.beta).array();
    next.sigma[res] = std::sqrt(draw_variance(static_cast<double>(design.batch(res).J),
                                              next.beta[res].squaredNorm(), prior.nu.at(res),
                                              prior.s0sq.at(res),
                                              variance_bound(design, res, sigma_max), rng));
    px.gamma[res] = next.beta[res];
    px.tau[res] = next.sigma[res];
    next.px = std::move(px);
    return next;
}

void ChainConfig::validate() const {
    if (chains < 1) throw ConfigError("chains must be at least 1");
    if (warmup < 0) throw ConfigError("warmup must be nonnegative");
    if (iters <= warmup) throw ConfigError("iters must exceed warmup");
    if (thin < 1) throw ConfigError("thin must be at least 1");
}

namespace {

struct ChainOutput {
    std::vector<Eigen::VectorXd> sigma, s, beta;
    std::vector<double> mu;
    std::vector<int> iteration;
};

std::vector<std::vector<double>> per_chain(const Eigen::Ref<const Eigen::VectorXd>& values,
                                           const std::vector<int>& chain, int chains) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(chains));
    for (Index i = 0; i < values.size(); ++i) out.at(chain.at(i)).push_back(values[i]);
    return out;
}

double mean_of(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += v[i];
    return s / static_cast<double>(hi - lo);
}

double var_of(const std::vector<double>& v, std::size_t lo, std::size_t hi) {
    const double mean = mean_of(v, lo, hi);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += (v[i] - mean) * (v[i] - mean);
    return s / static_cast<double>(hi - lo - 1);
}

}  // namespace

double split_rhat(const Eigen::Ref<const Eigen::VectorXd>& values, const std::vector<int>& chain,
                  int chains) {
    std::vector<std::pair<const std::vector<double>*, std::pair<std::size_t, std::size_t>>> parts;
    const auto seqs = per_chain(values, chain, chains);
    std::size_t len = std::numeric_limits<std::size_t>::max();
    for (const auto& s : seqs) len = std::min(len, s.size() / 2);
    if (len < 2) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> means, vars;
    for (const auto& s : seqs) {
        const std::size_t half = s.size() / 2;
        for (std::size_t start : {std::size_t{0}, s.size() - half}) {
            means.push_back(mean_of(s, start, start + len));
            vars.push_back(var_of(s, start, start + len));
        }
    }
    const double L = static_cast<double>(len);
    const Eigen::Map<Eigen::VectorXd> mv(means.data(), static_cast<Index>(means.size()));
    const double within = Eigen::Map<Eigen::VectorXd>(vars.data(), static_cast<Index>(vars.size())).mean();
    const double between = L * (mv.array() - mv.mean()).square().sum() / static_cast<double>(mv.size() - 1);
    if (within <= 0.0) return 1.0;
    const double pooled = (L - 1.0) / L * within + between / L;
    return std::sqrt(pooled / within);
}

double effective_sample_size(const Eigen::Ref<const Eigen::VectorXd>& values,
                             const std::vector<int>& chain, int chains) {
    const auto seqs = per_chain(values, chain, chains);
    std::size_t len = std::numeric_limits<std::size_t>::max();
    for (const auto& s : seqs) len = std::min(len, s.size());
    if (len < 4) return static_cast<double>(values.size());
    const double L = static_cast<double>(len);
    std::vector<double> means, vars;
    for (const auto& s : seqs) {
        means.push_back(mean_of(s, 0, len));
        vars.push_back(var_of(s, 0, len));
    }
    double within = 0.0;
    for (double v : vars) within += v;
    within /= static_cast<double>(seqs.size());
    double between = 0.0;
    if (seqs.size() > 1) {
        const double grand = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
        for (double m : means) between += (m - grand) * (m - grand);
        between = L * between / static_cast<double>(means.size() - 1);
    }
    const double pooled = (L - 1.0) / L * within + between / L;
    if (!(pooled > 0.0)) return static_cast<double>(values.size());

    auto rho = [&](std::size_t lag) {
        double acov = 0.0;
        for (std::size_t c = 0; c < seqs.size(); ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i + lag < len; ++i)
                s += (seqs[c][i] - means[c]) * (seqs[c][i + lag] - means[c]);
            acov += s / L;
        }
        acov /= static_cast<double>(seqs.size());
        return 1.0 - (within * (L - 1.0) / L - acov) / pooled;
    };
    double tau = -1.0;
    double previous = std::numeric_limits<double>::infinity();
    for (std::size_t lag = 0; lag + 1 < len; lag += 2) {
        double pair = rho(lag) + rho(lag + 1);
        if (pair <= 0.0) break;
        pair = std::min(pair, previous);
        previous = pair;
        tau += 2.0 * pair;
    }
    const double total = L * static_cast<double>(seqs.size());
    return total / std::max(tau, 1.0 / std::log10(total + 10.0));
}

double mc_standard_error(const Eigen::Ref<const Eigen::VectorXd>& values,
                         const std::vector<int>& chain, int chains) {
    const double n = static_cast<double>(values.size());
    const double var = (values.array() - values.mean()).square().sum() / (n - 1.0);
    return std::sqrt(var / effective_sample_size(values, chain, chains));
}

PosteriorResult run_chains(const DesignModel& design, const Eigen::Ref<const Eigen::VectorXd>& y,
                           const HyperPrior& prior, const ChainConfig& config) {
    config.validate();
    const int M = design.M();
    if (static_cast<int>(prior.nu.size()) != M || static_cast<int>(prior.s0sq.size()) != M)
        throw ConfigError("prior must have one entry per batch");
    if (y.size() != design.n) throw DimensionMismatch("response length does not match design");

    PosteriorResult result;
    Diagnostics& diag = result.diagnostics;
    std::vector<int> active = sampled_batches(design);
    active.push_back(design.residual);
    for (int m = 0; m < M; ++m) {
        const Batch& b = design.batch(m);
        if (b.df <= 0 && m != design.residual)
            diag.warnings.push_back("batch '" + b.label +
                                    "' has no degrees of freedom and is held at zero");
    }
    for (int m : active)
        if (design.batch(m).df == 1 && prior.is_uniform(m)) {
            diag.improper.push_back(m);
            diag.warnings.push_back("ImproperPosterior: batch '" + design.batch(m).label +
                                    "' has 1 degree of freedom; under the uniform prior its "
                                    "sigma posterior is improper and draws are truncated at "
                                    "sigma_max");
        }

    std::optional<MomentsEstimate> moments;
    if (design.balance.balanced && design.balance.orthogonal) {
        const BatchEstimates est = fit_effects(design, y);
        moments = estimate_sigma_moments(est.v, ev_matrix(design));
    }

    SamplerOptions options = config.options;
    options.sigma_max = resolve_sigma_max(options, y);

    std::vector<Index> offset(static_cast<std::size_t>(M), -1);
    Index beta_cols = 0;
    for (int m = 0; m < M; ++m)
        if (m != design.residual && design.batch(m).df > 0) {
            offset[m] = beta_cols;
            beta_cols += design.batch(m).J;
        }

    const Eigen::VectorXd data = y;
    std::vector<ChainOutput> outputs(static_cast<std::size_t>(config.chains));
    const RngStream base(config.seed);
    parallel_for(static_cast<std::size_t>(config.chains), config.threads, [&](std::size_t c) {
        RngStream rng = base.split(c + 1);
        ChainState state = init_chain(design, data, moments, config.px, rng);
        ChainOutput& out = outputs[c];
        for (int it = 0; it < config.iters; ++it) {
            state = config.px ? gibbs_step_px(state, design, data, prior, rng, options)
                              : gibbs_step_plain(state, design, data, prior, rng, options);
            if (it < config.warmup || (it - config.warmup) % config.thin != 0) continue;
            Eigen::VectorXd s = Eigen::VectorXd::Zero(M);
            for (int m : active) s[m] = design.finite_population_sd(m, state.beta[m]);
            out.sigma.push_back(state.sigma);
            out.s.push_back(std::move(s));
            out.mu.push_back(state.mu);
            out.iteration.push_back(it);
            if (config.keep_beta) {
                Eigen::VectorXd flat(beta_cols);
                for (int m = 0; m < M; ++m)
                    if (offset[m] >= 0) flat.segment(offset[m], design.batch(m).J) = state.beta[m];
                out.beta.push_back(std::move(flat));
            }
        }
    });

    PosteriorDraws& draws = result.draws;
    Index total = 0;
    for (const auto& o : outputs) total += static_cast<Index>(o.sigma.size());
    draws.chains = config.chains;
    draws.sigma.resize(total, M);
    draws.s.resize(total, M);
    draws.mu.resize(total);
    draws.beta_offset = offset;
    if (config.keep_beta) draws.beta.resize(total, beta_cols);
    Index row = 0;
    for (int c = 0; c < config.chains; ++c) {
        const ChainOutput& o = outputs[c];
        for (std::size_t i = 0; i < o.sigma.size(); ++i, ++row) {
            draws.sigma.row(row) = o.sigma[i].transpose();
            draws.s.row(row) = o.s[i].transpose();
            draws.mu[row] = o.mu[i];
            if (config.keep_beta) draws.beta.row(row) = o.beta[i].transpose();
            draws.chain.push_back(c);
            draws.iteration.push_back(o.iteration[i]);
        }
    }

    diag.rhat = Eigen::VectorXd::Constant(M, std::numeric_limits<double>::quiet_NaN());
    diag.ess = Eigen::VectorXd::Constant(M, std::numeric_limits<double>::quiet_NaN());
    for (int m : active) {
        diag.rhat[m] = split_rhat(draws.sigma.col(m), draws.chain, draws.chains);
        diag.ess[m] = effective_sample_size(draws.sigma.col(m), draws.chain, draws.chains);
    }
    return result;
}

VCSummary summarize_posterior(const PosteriorDraws& draws, const DesignModel& design) {
    if (draws.size() == 0) throw InvalidParameter("no posterior draws to summarize");
    VCSummary summary;
    summary.point_origin = "posterior";
    for (int m = 0; m < design.M(); ++m) {
        const Batch& b = design.batch(m);
        VCRow row;
        row.label = b.label;
        row.J = b.J;
        row.df = b.df;
        row.s = summarize(draws.s.col(m));
        row.s_point = row.s.q50;
        row.has_sigma = true;
        row.sigma = summarize(draws.sigma.col(m));
        row.sigma_point = row.sigma.q50;
        summary.rows.push_back(row);
    }
    return summary;
}

}  // namespace hanova
