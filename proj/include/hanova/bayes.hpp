#pragma once

#include <Eigen/Dense>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hanova/classical.hpp"
#include "hanova/design.hpp"
#include "hanova/rng.hpp"
#include "hanova/summary.hpp"

namespace hanova {

// sigma_m^2 ~ scaled-Inv-chi^2(nu_m, s0sq_m). nu = -1, s0sq = 0 is the
// uniform prior on sigma_m.
struct HyperPrior {
    std::vector<double> nu;
    std::vector<double> s0sq;

    static HyperPrior uniform_sigma(int batches);
    bool is_uniform(int m) const { return nu.at(m) == -1.0 && s0sq.at(m) == 0.0; }
};

// Expanded parameterization: beta = alpha * gamma, sigma = alpha * tau.
struct PxState {
    std::vector<Eigen::VectorXd> gamma;
    Eigen::VectorXd alpha;
    Eigen::VectorXd tau;
};

struct ChainState {
    double mu = 0.0;                    // grand mean, flat prior
    std::vector<Eigen::VectorXd> beta;  // unconstrained; residual batch holds y - fit
    Eigen::VectorXd sigma;              // positive for sampled batches, 0 for df = 0 batches
    std::optional<PxState> px;
};

struct SamplerOptions {
    // Upper bound on sigma for df = 1 batches, whose posterior under the
    // uniform prior is improper. NaN selects 100 * sd(y).
    double sigma_max = std::numeric_limits<double>::quiet_NaN();
};

// Batches drawn by the sampler: every non-residual batch with df > 0.
std::vector<int> sampled_batches(const DesignModel& design);

ChainState init_chain(const DesignModel& design, const Eigen::Ref<const Eigen::VectorXd>& y,
                      const std::optional<MomentsEstimate>& moments, bool px, RngStream& rng);

// Coefficient half-step: grand mean, then every sampled batch in sweep
// order from its exact diagonal normal conditional; residual = y - fit.
void update_beta(ChainState& state, const DesignModel& design,
                 const Eigen::Ref<const Eigen::VectorXd>& y, RngStream& rng);
// Translation moves that leave the fit unchanged: each sampled batch trades
// a per-cell shift with each sampled ancestor, then a common shift with the
// grand mean. Each shift is drawn from its exact Gaussian conditional.
// Called by update_beta and at the start of the expanded step.
void update_shifts(ChainState& state, const DesignModel& design, RngStream& rng);
// Variance half-step: independent scaled-Inv-chi^2 conditionals.
void update_sigma(ChainState& state, const DesignModel& design, const HyperPrior& prior,
                  double sigma_max, RngStream& rng);

ChainState gibbs_step_plain(const ChainState& state, const DesignModel& design,
                            const Eigen::Ref<const Eigen::VectorXd>& y, const HyperPrior& prior,
                            RngStream& rng, const SamplerOptions& options = {});

// Parameter-expanded step: gamma | alpha, tau; alpha | gamma (regression of
// y - mu on the batch predictors z_m = X_m gamma_m, flat prior); tau^2 |
// gamma; then beta, sigma are rebuilt. Requires state.px.
ChainState gibbs_step_px(const ChainState& state, const DesignModel& design,
                         const Eigen::Ref<const Eigen::VectorXd>& y, const HyperPrior& prior,
                         RngStream& rng, const SamplerOptions& options = {});

// Per-observation predictors z_m = X_m gamma_m, one column per sampled batch.
Eigen::MatrixXd px_predictors(const DesignModel& design, const PxState& px);

struct ChainConfig {
    int chains = 4;
    int iters = 2000;
    int warmup = 1000;
    int thin = 1;
    std::uint64_t seed = 1;
    bool px = true;
    bool keep_beta = false;
    unsigned threads = 1;
    SamplerOptions options;

    void validate() const;  // throws ConfigError
};

struct PosteriorDraws {
    Eigen::MatrixXd sigma;  // draws x M
    Eigen::MatrixXd s;      // draws x M
    Eigen::VectorXd mu;
    // draws x sum_m J_m over sampled batches, in design order, when kept.
    Eigen::MatrixXd beta;
    std::vector<Index> beta_offset;  // column offset of batch m in `beta` (-1 if absent)
    std::vector<int> chain;
    std::vector<int> iteration;
    int chains = 0;

    Index size() const { return sigma.rows(); }
};

struct Diagnostics {
    Eigen::VectorXd rhat;  // split-chain potential scale reduction of sigma_m
    Eigen::VectorXd ess;   // effective sample size of sigma_m
    std::vector<int> improper;  // batches with df = 1 under the uniform prior
    std::vector<std::string> warnings;
};

struct PosteriorResult {
    PosteriorDraws draws;
    Diagnostics diagnostics;
};

PosteriorResult run_chains(const DesignModel& design, const Eigen::Ref<const Eigen::VectorXd>& y,
                           const HyperPrior& prior, const ChainConfig& config);

VCSummary summarize_posterior(const PosteriorDraws& draws, const DesignModel& design);

// Split-chain R-hat; `chain` labels each draw with its chain.
double split_rhat(const Eigen::Ref<const Eigen::VectorXd>& values, const std::vector<int>& chain,
                  int chains);
// Effective sample size from per-chain autocorrelations (Geyer initial
// positive sequence).
double effective_sample_size(const Eigen::Ref<const Eigen::VectorXd>& values,
                             const std::vector<int>& chain, int chains);
// Monte Carlo standard error of the mean.
double mc_standard_error(const Eigen::Ref<const Eigen::VectorXd>& values,
                         const std::vector<int>& chain, int chains);

}  // namespace hanova
