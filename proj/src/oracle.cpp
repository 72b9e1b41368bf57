#include "vmoe/oracle.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "vmoe/errors.hpp"
#include "vmoe/fusion.hpp"
#include "vmoe/noise.hpp"
#include "vmoe/rng.hpp"

namespace vmoe::oracle {

namespace {

constexpr std::uint64_t kStreamIid = 0x696964ull;
constexpr std::uint64_t kStreamCorrCommon = 0x636f6dull;
constexpr std::uint64_t kStreamCorrLocal = 0x6c6f63ull;
constexpr std::uint64_t kStreamMixGate = 0x6d6778ull;
constexpr std::uint64_t kStreamMixClean = 0x6d6b63ull;
constexpr std::uint64_t kStreamDomProb = 0x647062ull;
constexpr std::uint64_t kStreamDomNoise = 0x646e7aull;

double clip01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Population variance of a running series without storing it: Welford.
class RunningVariance {
public:
    void add(double x) {
        ++n_;
        const double delta = x - mean_;
        mean_ += delta / static_cast<double>(n_);
        m2_ += delta * (x - mean_);
    }
    double variance() const {
        return n_ > 0 ? m2_ / static_cast<double>(n_) : 0.0;
    }
    double mean() const { return mean_; }

private:
    std::uint64_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

VarianceReport finish_report(const SimulationSpec& spec, double theoretical,
                             double empirical) {
    VarianceReport report;
    report.spec = spec;
    report.theoretical = theoretical;
    report.empirical = empirical;
    report.relative_error =
        theoretical != 0.0
            ? std::abs(empirical - theoretical) / std::abs(theoretical)
            : std::abs(empirical);
    return report;
}

} // namespace

void SimulationSpec::validate() const {
    if (k < 1)
        throw ConfigError("simulation k must be >= 1");
    if (!(sigma2 >= 0.0) || !std::isfinite(sigma2))
        throw ConfigError("simulation sigma2 must be finite and >= 0");
    if (!std::isfinite(mu))
        throw ConfigError("simulation mu must be finite");
    if (!(rho >= 0.0 && rho < 1.0))
        throw ConfigError("simulation rho must lie in [0, 1)");
    if (trials < 1)
        throw ConfigError("simulation trials must be >= 1");
}

void MixtureSpec::validate() const {
    if (!(clean_std >= 0.0) || !std::isfinite(clean_std))
        throw ConfigError("mixture clean_std must be finite and >= 0");
    if (!(spike_prob >= 0.0 && spike_prob <= 1.0))
        throw ConfigError("mixture spike_prob must lie in [0, 1]");
    if (sample_size < 1)
        throw ConfigError("mixture sample_size must be >= 1");
    if (trials < 1)
        throw ConfigError("mixture trials must be >= 1");
}

void DominanceSpec::validate() const {
    if (num_experts < 2)
        throw ConfigError("dominance num_experts must be >= 2");
    if (!(base_noise_scale >= 0.0) || !std::isfinite(base_noise_scale))
        throw ConfigError("dominance base_noise_scale must be finite and >= 0");
    if (trials < 1)
        throw ConfigError("dominance trials must be >= 1");
}

VarianceReport variance_of_mean_iid(const SimulationSpec& spec) {
    spec.validate();
    if (spec.rho != 0.0)
        throw ConfigError("variance_of_mean_iid requires rho == 0");
    const double sigma = std::sqrt(spec.sigma2);
    RunningVariance means;
    for (std::uint64_t t = 0; t < spec.trials; ++t) {
        double sum = 0.0;
        for (int i = 0; i < spec.k; ++i) {
            const std::uint64_t key = rng::derive(
                spec.seed, kStreamIid, t, static_cast<std::uint64_t>(i));
            sum += spec.mu + sigma * rng::standard_normal(key);
        }
        means.add(sum / static_cast<double>(spec.k));
    }
    return finish_report(spec, spec.sigma2 / static_cast<double>(spec.k),
                         means.variance());
}

VarianceReport variance_of_mean_correlated(const SimulationSpec& spec) {
    spec.validate();
    const double sigma = std::sqrt(spec.sigma2);
    const double common_weight = std::sqrt(spec.rho);
    const double local_weight = std::sqrt(1.0 - spec.rho);
    RunningVariance means;
    for (std::uint64_t t = 0; t < spec.trials; ++t) {
        const double z = rng::standard_normal(
            rng::derive(spec.seed, kStreamCorrCommon, t));
        double sum = 0.0;
        for (int i = 0; i < spec.k; ++i) {
            const std::uint64_t key = rng::derive(
                spec.seed, kStreamCorrLocal, t, static_cast<std::uint64_t>(i));
            const double w = rng::standard_normal(key);
            sum += spec.mu + sigma * (common_weight * z + local_weight * w);
        }
        means.add(sum / static_cast<double>(spec.k));
    }
    const double k = static_cast<double>(spec.k);
    const double theoretical = spec.sigma2 * (1.0 + (k - 1.0) * spec.rho) / k;
    return finish_report(spec, theoretical, means.variance());
}

TruncationEffectReport truncation_effect(const MixtureSpec& spec,
                                         double threshold_multiplier) {
    spec.validate();
    if (std::isnan(threshold_multiplier) || threshold_multiplier < 0.0)
        throw ConfigError("threshold_multiplier must be >= 0");

    TruncationEffectReport report;
    report.trials = spec.trials;
    report.seed = spec.seed;

    std::uint64_t reduced = 0;
    double ratio_sum = 0.0;
    double mad_before_sum = 0.0;
    double mad_after_sum = 0.0;
    std::uint64_t removed_total = 0;

    ExpertSubset sample(static_cast<std::size_t>(spec.sample_size));
    for (std::uint64_t t = 0; t < spec.trials; ++t) {
        for (int i = 0; i < spec.sample_size; ++i) {
            const auto idx = static_cast<std::uint64_t>(i);
            const double gate =
                rng::unit_double(rng::derive(spec.seed, kStreamMixGate, t, idx));
            double p;
            if (gate < spec.spike_prob) {
                p = spec.spike_value;
            } else {
                const double z = rng::standard_normal(
                    rng::derive(spec.seed, kStreamMixClean, t, idx));
                p = clip01(spec.clean_mean + spec.clean_std * z);
            }
            sample[static_cast<std::size_t>(i)] = {i, 0, p, {}};
        }
        const TruncationStats before =
            compute_truncation_stats(sample, threshold_multiplier);
        const ExpertSubset kept = truncate_outliers(
            sample, before, EmptyTruncationPolicy::keep_all);
        const TruncationStats after =
            compute_truncation_stats(kept, threshold_multiplier);

        const double var_before = before.std * before.std;
        const double var_after = after.std * after.std;
        if (var_after < var_before)
            ++reduced;
        ratio_sum += var_before == var_after ? 1.0 : var_after / var_before;
        removed_total += sample.size() - kept.size();

        double mad_before = 0.0;
        for (const ExpertPrediction& p : sample)
            mad_before += std::abs(p.probability - spec.clean_mean);
        double mad_after = 0.0;
        for (const ExpertPrediction& p : kept)
            mad_after += std::abs(p.probability - spec.clean_mean);
        mad_before_sum += mad_before / static_cast<double>(sample.size());
        mad_after_sum += mad_after / static_cast<double>(kept.size());
    }

    const double trials = static_cast<double>(spec.trials);
    report.reduced_fraction = static_cast<double>(reduced) / trials;
    report.variance_ratio_mean = ratio_sum / trials;
    report.mad_before = mad_before_sum / trials;
    report.mad_after = mad_after_sum / trials;
    report.mean_removed = static_cast<double>(removed_total) / trials;
    return report;
}

DominanceReport perturbation_dominance(const DominanceSpec& spec) {
    spec.validate();

    FusionConfig config;
    config.num_experts = spec.num_experts;
    config.top_k = spec.num_experts;
    config.threshold_multiplier = kInfiniteMultiplier;

    DominanceReport report;
    report.trials = spec.trials;
    report.seed = spec.seed;
    report.base_noise_scale = spec.base_noise_scale;

    std::uint64_t flips = 0;
    for (std::uint64_t t = 0; t < spec.trials; ++t) {
        std::vector<ExpertPrediction> ensemble(
            static_cast<std::size_t>(spec.num_experts));
        double p_max = 0.0;
        for (int i = 0; i < spec.num_experts; ++i) {
            ExpertPrediction& pred = ensemble[static_cast<std::size_t>(i)];
            pred.expert_id = i;
            pred.token = spec.unanimous ? 7u : static_cast<TokenId>(i % 2);
            if (!spec.unanimous && i == 0) {
                pred.probability = 0.97;
            } else {
                const double z = rng::standard_normal(rng::derive(
                    spec.seed, kStreamDomProb, t, static_cast<std::uint64_t>(i)));
                pred.probability = clip01(0.6 + 0.1 * z);
            }
            p_max = std::max(p_max, pred.probability);
        }
        const TokenId base_winner = fuse_step(ensemble, config).winner;

        const double sigma_eps = noise_sigma(spec.base_noise_scale, p_max);
        std::vector<ExpertPrediction> perturbed = ensemble;
        for (int i = 0; i < spec.num_experts; ++i) {
            const double eps =
                sigma_eps * rng::standard_normal(rng::derive(
                                spec.seed, kStreamDomNoise, t,
                                static_cast<std::uint64_t>(i)));
            auto& pred = perturbed[static_cast<std::size_t>(i)];
            pred.probability = clip01(pred.probability + eps);
        }
        const TokenId perturbed_winner = fuse_step(perturbed, config).winner;
        if (perturbed_winner != base_winner)
            ++flips;
    }
    report.flip_fraction =
        static_cast<double>(flips) / static_cast<double>(spec.trials);
    return report;
}

std::vector<OracleReport> run_oracle_suite(std::uint64_t seed) {
    std::vector<OracleReport> out;

    const auto add_variance = [&](const char* claim, const VarianceReport& r,
                                  double tolerance) {
        OracleReport report;
        report.claim = claim;
        report.theoretical = r.theoretical;
        report.empirical = r.empirical;
        report.trials = r.spec.trials;
        report.seed = r.spec.seed;
        report.tolerance = tolerance;
        report.pass = r.relative_error <= tolerance;
        out.push_back(std::move(report));
    };

    for (const int k : {1, 4, 16}) {
        for (const double sigma2 : {0.04, 1.0}) {
            SimulationSpec spec;
            spec.k = k;
            spec.sigma2 = sigma2;
            spec.trials = 100000;
            spec.seed = seed;
            const std::string claim =
                "variance of k-expert mean equals sigma2/k (k=" +
                std::to_string(k) + ", sigma2=" + std::to_string(sigma2) + ")";
            add_variance(claim.c_str(), variance_of_mean_iid(spec), 0.05);
        }
    }

    {
        SimulationSpec spec;
        spec.k = 4;
        spec.sigma2 = 1.0;
        spec.rho = 0.5;
        spec.trials = 100000;
        spec.seed = seed;
        add_variance(
            "equicorrelated variance equals sigma2*(1+(k-1)rho)/k "
            "(k=4, rho=0.5)",
            variance_of_mean_correlated(spec), 0.05);
    }

    {
        MixtureSpec spec;
        spec.seed = seed;
        const TruncationEffectReport r = truncation_effect(spec, 1.0);
        OracleReport report;
        report.claim =
            "outlier truncation reduces sample variance on spike mixtures";
        report.empirical = r.reduced_fraction;
        report.trials = r.trials;
        report.seed = r.seed;
        report.tolerance = 0.01;
        report.pass = r.reduced_fraction >= 0.99 && r.mad_after < r.mad_before;
        out.push_back(std::move(report));
    }

    {
        DominanceSpec spec;
        spec.base_noise_scale = 1.0;
        spec.trials = 10000;
        spec.seed = seed;
        const DominanceReport r = perturbation_dominance(spec);
        OracleReport report;
        report.claim =
            "probability perturbation flips contested votes at a nonzero rate";
        report.empirical = r.flip_fraction;
        report.trials = r.trials;
        report.seed = r.seed;
        report.pass = r.flip_fraction > 0.0 && r.flip_fraction < 1.0;
        out.push_back(std::move(report));
    }

    return out;
}

std::string reports_to_json(const std::vector<OracleReport>& reports) {
    nlohmann::json arr = nlohmann::json::array();
    for (const OracleReport& r : reports) {
        nlohmann::json obj = {
            {"claim", r.claim},
            {"empirical", r.empirical},
            {"trials", r.trials},
            {"seed", r.seed},
            {"pass", r.pass},
        };
        obj["theoretical"] =
            r.theoretical ? nlohmann::json(*r.theoretical) : nlohmann::json();
        obj["tolerance"] =
            r.tolerance ? nlohmann::json(*r.tolerance) : nlohmann::json();
        arr.push_back(std::move(obj));
    }
    return arr.dump(2);
}

} // namespace vmoe::oracle
