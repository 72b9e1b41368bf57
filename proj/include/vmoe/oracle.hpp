#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

// Monte Carlo and closed-form checks of the statistical claims behind
// ensemble fusion: variance reduction of the k-expert mean, its breakdown
// under correlation, the variance effect of outlier truncation, and the
// sensitivity of contested votes to probability perturbation.
namespace vmoe::oracle {

struct SimulationSpec {
    int k = 1;
    double sigma2 = 1.0;
    double mu = 0.0;
    double rho = 0.0;
    std::uint64_t trials = 100000;
    std::uint64_t seed = 0;

    void validate() const;
};

struct VarianceReport {
    SimulationSpec spec;
    double theoretical = 0.0;
    double empirical = 0.0;
    double relative_error = 0.0;
};

// Empirical variance of the mean of k independent Normal(mu, sigma2) draws
// against the closed form sigma2 / k. Requires rho == 0.
VarianceReport variance_of_mean_iid(const SimulationSpec& spec);

// Equicorrelated experts via the one-common-factor construction
// p_i = mu + sqrt(rho)*sigma*z + sqrt(1-rho)*sigma*w_i, checked against
// sigma2 * (1 + (k-1)*rho) / k. Requires 0 <= rho < 1.
VarianceReport variance_of_mean_correlated(const SimulationSpec& spec);

// Two-component probability mixture: a tight clean component and a
// high-value spike that plays the overconfident outlier.
struct MixtureSpec {
    double clean_mean = 0.2;
    double clean_std = 0.02;
    double spike_value = 0.95;
    double spike_prob = 0.1;
    int sample_size = 64;
    std::uint64_t trials = 10000;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TruncationEffectReport {
    double reduced_fraction = 0.0;
    double variance_ratio_mean = 0.0;
    double mad_before = 0.0;
    double mad_after = 0.0;
    double mean_removed = 0.0;
    std::uint64_t trials = 0;
    std::uint64_t seed = 0;
};

// Runs the production truncation on mixture samples and reports how often
// the post-truncation population variance drops, the average post/pre
// variance ratio (1 when nothing is removed), and the mean absolute
// deviation from the clean component's mean before vs after.
TruncationEffectReport truncation_effect(const MixtureSpec& spec,
                                         double threshold_multiplier);

struct DominanceSpec {
    int num_experts = 6;
    bool unanimous = false;
    double base_noise_scale = 0.0;
    std::uint64_t trials = 1000;
    std::uint64_t seed = 0;

    void validate() const;
};

struct DominanceReport {
    double flip_fraction = 0.0;
    std::uint64_t trials = 0;
    std::uint64_t seed = 0;
    double base_noise_scale = 0.0;
};

// Synthetic vocab-2 ensembles with one overconfident dissenter: fuses each
// ensemble twice, once as drawn and once with probabilities perturbed by
// Normal(0, sigma_eps^2) noise (sigma_eps from the trial's maximum
// probability), and reports the fraction of differing winners.
DominanceReport perturbation_dominance(const DominanceSpec& spec);

// One line of the emitted oracle suite.
struct OracleReport {
    std::string claim;
    std::optional<double> theoretical;
    double empirical = 0.0;
    std::uint64_t trials = 0;
    std::uint64_t seed = 0;
    std::optional<double> tolerance;
    bool pass = true;
};

// Reference suite covering every oracle, tolerances included where a closed
// form exists.
std::vector<OracleReport> run_oracle_suite(std::uint64_t seed);

// JSON array rendering of a suite, one object per report with fields claim,
// theoretical, empirical, trials, seed, tolerance, pass.
std::string reports_to_json(const std::vector<OracleReport>& reports);

} // namespace vmoe::oracle
