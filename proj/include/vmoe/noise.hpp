#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

#include "vmoe/errors.hpp"
#include "vmoe/rng.hpp"
#include "vmoe/types.hpp"

// Embedding-space noise: the winning token's embedding is perturbed with
// zero-mean Gaussian noise whose standard deviation grows quadratically with
// the distance of the step's maximum expert probability from 0.5. The
// perturbed embedding feeds back into the next step's context.
namespace vmoe {

struct NoiseParams {
    double base_noise_scale = 0.0;
    double p_max = 0.0;
    double sigma = 0.0;
    std::uint64_t seed = 0;
    int step = 0;
};

// sigma = base_noise_scale * (p_max - 0.5)^2. Zero at p_max = 0.5 and
// symmetric around it.
inline double noise_sigma(double base_noise_scale, double p_max) {
    if (!std::isfinite(base_noise_scale) || base_noise_scale < 0.0)
        throw ConfigError("noise_sigma: base_noise_scale must be >= 0");
    if (!(p_max >= 0.0 && p_max <= 1.0))
        throw ConfigError("noise_sigma: p_max must lie in [0, 1]");
    const double d = p_max - 0.5;
    return base_noise_scale * d * d;
}

namespace detail {
inline constexpr std::uint64_t kStreamNoise = 0x6e6f697365ull;
}

// Adds an independent Normal(0, sigma^2) draw to every component. The draw
// for component j of step s is addressed by (seed, s, j), so the stream is
// reproducible and independent of evaluation order. sigma == 0 returns the
// input bit-for-bit.
inline EmbeddingVector inject_noise(const EmbeddingVector& embedding,
                                    const NoiseParams& params) {
    if (params.sigma == 0.0)
        return embedding;
    EmbeddingVector out(embedding.size());
    for (Eigen::Index j = 0; j < embedding.size(); ++j) {
        const std::uint64_t key =
            rng::derive(params.seed, detail::kStreamNoise,
                        static_cast<std::uint64_t>(params.step),
                        static_cast<std::uint64_t>(j));
        out[j] = embedding[j] + params.sigma * rng::standard_normal(key);
    }
    return out;
}

// Perturbs the winner's embedding for the next-step context. p_max is the
// maximum probability over ALL of the step's predictions, not just the
// filtered subset.
inline std::pair<EmbeddingVector, NoiseParams>
apply_noise_to_step(const StepRecord& record, const FusionConfig& config) {
    if (record.predictions.empty())
        throw ConfigError("apply_noise_to_step: record has no predictions");
    double p_max = 0.0;
    for (const ExpertPrediction& p : record.predictions)
        p_max = std::max(p_max, p.probability);

    const EmbeddingVector* winner_embedding = nullptr;
    for (const ExpertPrediction& p : record.predictions) {
        if (p.token == record.winner) {
            winner_embedding = &p.embedding;
            break;
        }
    }
    if (winner_embedding == nullptr)
        throw std::logic_error("apply_noise_to_step: winner not among predictions");

    NoiseParams params;
    params.base_noise_scale = config.base_noise_scale;
    params.p_max = p_max;
    params.sigma = noise_sigma(config.base_noise_scale, p_max);
    params.seed = config.noise_seed;
    params.step = record.step;
    return {inject_noise(*winner_embedding, params), params};
}

} // namespace vmoe
