#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vmoe/errors.hpp"

namespace vmoe {

// Opaque index into a finite vocabulary. No tokenizer exists in this project;
// ids are supplied by the backend.
using TokenId = std::uint32_t;

// Fixed-length real vector; dimension is constant across one run.
using EmbeddingVector = Eigen::VectorXd;

// One virtual expert's candidate token for one generation step. probability
// is the probability the expert assigns to its own argmax token.
struct ExpertPrediction {
    int expert_id = 0;
    TokenId token = 0;
    double probability = 0.0;
    EmbeddingVector embedding;
};

inline bool operator==(const ExpertPrediction& a, const ExpertPrediction& b) {
    return a.expert_id == b.expert_id && a.token == b.token &&
           a.probability == b.probability &&
           a.embedding.size() == b.embedding.size() &&
           (a.embedding.size() == 0 ||
            (a.embedding.array() == b.embedding.array()).all());
}

enum class EmptyTruncationPolicy { keep_all, keep_max_probability };
enum class TieBreakFinal { lowest_token_id };

// Knobs for one fusion pipeline instance. threshold_multiplier may be +inf,
// which disables outlier truncation through the single shared code path.
struct FusionConfig {
    int num_experts = 1;
    int top_k = 1;
    double threshold_multiplier = 1.0;
    double base_noise_scale = 0.0;
    std::uint64_t noise_seed = 0;
    EmptyTruncationPolicy empty_truncation_policy =
        EmptyTruncationPolicy::keep_all;
    TieBreakFinal tie_break_final = TieBreakFinal::lowest_token_id;

    void validate() const {
        if (num_experts < 1)
            throw ConfigError("num_experts must be >= 1");
        if (top_k < 1 || top_k > num_experts)
            throw ConfigError("top_k must lie in [1, num_experts]");
        if (std::isnan(threshold_multiplier) || threshold_multiplier < 0.0)
            throw ConfigError("threshold_multiplier must be >= 0");
        if (!std::isfinite(base_noise_scale) || base_noise_scale < 0.0)
            throw ConfigError("base_noise_scale must be finite and >= 0");
    }
};

inline bool operator==(const FusionConfig& a, const FusionConfig& b) {
    return a.num_experts == b.num_experts && a.top_k == b.top_k &&
           a.threshold_multiplier == b.threshold_multiplier &&
           a.base_noise_scale == b.base_noise_scale &&
           a.noise_seed == b.noise_seed &&
           a.empty_truncation_policy == b.empty_truncation_policy &&
           a.tie_break_final == b.tie_break_final;
}

// Population mean/std of the selected subset's probabilities and the derived
// threshold. threshold == mean + multiplier * std by construction; +inf when
// the multiplier is +inf.
struct TruncationStats {
    double mean = 0.0;
    double std = 0.0;
    double threshold = 0.0;
};

inline bool operator==(const TruncationStats& a, const TruncationStats& b) {
    return a.mean == b.mean && a.std == b.std && a.threshold == b.threshold;
}

// Frequency table over candidate tokens plus each token's best probability.
struct VoteTally {
    std::map<TokenId, int> counts;
    std::map<TokenId, double> max_probability;
};

// Pairwise cosine similarities of the experts' chosen-token embeddings at one
// step. mean_upper averages the strictly-upper triangle (diagonal excluded);
// orthogonality == 1 - mean_upper.
struct SimilarityRecord {
    Eigen::MatrixXd matrix;
    double mean_upper = 0.0;
    double orthogonality = 0.0;
    int step = 0;
};

inline bool operator==(const SimilarityRecord& a, const SimilarityRecord& b) {
    return a.step == b.step && a.mean_upper == b.mean_upper &&
           a.orthogonality == b.orthogonality &&
           a.matrix.rows() == b.matrix.rows() &&
           a.matrix.cols() == b.matrix.cols() &&
           (a.matrix.size() == 0 ||
            (a.matrix.array() == b.matrix.array()).all());
}

// Everything that happened at one generation step. predictions holds all N
// experts ascending by expert_id; selected/filtered store expert_ids in
// subset order (descending probability, ties by ascending expert_id).
// similarity is absent when fewer than two experts participate.
struct StepRecord {
    int step = 0;
    std::vector<ExpertPrediction> predictions;
    std::vector<int> selected;
    std::vector<int> filtered;
    TruncationStats stats;
    TokenId winner = 0;
    double noise_sigma = 0.0;
    std::optional<SimilarityRecord> similarity;
};

inline bool operator==(const StepRecord& a, const StepRecord& b) {
    return a.step == b.step && a.predictions == b.predictions &&
           a.selected == b.selected && a.filtered == b.filtered &&
           a.stats == b.stats && a.winner == b.winner &&
           a.noise_sigma == b.noise_sigma && a.similarity == b.similarity;
}

// Full record of one generation run. tokens holds the fused winners, one per
// step. error is non-empty only when complete is false.
struct GenerationTrace {
    FusionConfig config;
    std::string prompt;
    std::vector<StepRecord> steps;
    std::vector<TokenId> tokens;
    bool complete = true;
    std::string error;
};

inline bool operator==(const GenerationTrace& a, const GenerationTrace& b) {
    return a.config == b.config && a.prompt == b.prompt && a.steps == b.steps &&
           a.tokens == b.tokens && a.complete == b.complete &&
           a.error == b.error;
}

inline constexpr double kInfiniteMultiplier =
    std::numeric_limits<double>::infinity();

} // namespace vmoe
