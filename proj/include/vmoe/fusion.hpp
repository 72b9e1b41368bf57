#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "vmoe/errors.hpp"
#include "vmoe/types.hpp"

// Decoding-time fusion: top-k expert selection, statistical outlier
// truncation against theta = mean + multiplier * std, and fixed frequency
// voting with a probability tie-break. All functions are pure.
namespace vmoe {

// Subset of one step's predictions, ordered by descending probability with
// ties broken by ascending expert_id.
using ExpertSubset = std::vector<ExpertPrediction>;

struct VoteOutcome {
    TokenId winner = 0;
    VoteTally tally;
    bool tie_broken = false;
};

// Retains the top_k highest-probability predictions, descending.
inline ExpertSubset select_top_k(const std::vector<ExpertPrediction>& predictions,
                                 int top_k) {
    const int n = static_cast<int>(predictions.size());
    if (n == 0)
        throw ConfigError("select_top_k: empty prediction list");
    if (top_k < 1 || top_k > n)
        throw ConfigError("select_top_k: top_k out of range [1, N]");
    ExpertSubset sorted = predictions;
    std::sort(sorted.begin(), sorted.end(),
              [](const ExpertPrediction& a, const ExpertPrediction& b) {
                  if (a.probability != b.probability)
                      return a.probability > b.probability;
                  return a.expert_id < b.expert_id;
              });
    sorted.resize(static_cast<std::size_t>(top_k));
    return sorted;
}

// Population mean/std over the subset's probabilities and the truncation
// threshold. Summation runs left to right in ascending expert_id order so the
// result is bit-reproducible and independent of subset ordering. An infinite
// multiplier yields threshold = +inf regardless of std.
inline TruncationStats compute_truncation_stats(const ExpertSubset& subset,
                                                double threshold_multiplier) {
    if (subset.empty())
        throw std::logic_error("compute_truncation_stats: empty subset");
    std::vector<double> probs;
    probs.reserve(subset.size());
    {
        ExpertSubset by_id = subset;
        std::sort(by_id.begin(), by_id.end(),
                  [](const ExpertPrediction& a, const ExpertPrediction& b) {
                      return a.expert_id < b.expert_id;
                  });
        for (const ExpertPrediction& p : by_id)
            probs.push_back(p.probability);
    }
    const double n = static_cast<double>(probs.size());
    double sum = 0.0;
    for (double p : probs)
        sum += p;
    const double mean = sum / n;
    double sq = 0.0;
    for (double p : probs)
        sq += (p - mean) * (p - mean);
    TruncationStats stats;
    stats.mean = mean;
    stats.std = std::sqrt(sq / n);
    stats.threshold = std::isinf(threshold_multiplier)
                          ? kInfiniteMultiplier
                          : mean + threshold_multiplier * stats.std;
    return stats;
}

// Removes predictions with probability strictly above the threshold;
// equality keeps the prediction. Input ordering is preserved. When every
// prediction would be removed the policy decides the non-empty fallback.
inline ExpertSubset truncate_outliers(const ExpertSubset& subset,
                                      const TruncationStats& stats,
                                      EmptyTruncationPolicy policy) {
    if (subset.empty())
        throw std::logic_error("truncate_outliers: empty subset");
    ExpertSubset kept;
    kept.reserve(subset.size());
    for (const ExpertPrediction& p : subset)
        if (!(p.probability > stats.threshold))
            kept.push_back(p);
    if (!kept.empty())
        return kept;
    if (policy == EmptyTruncationPolicy::keep_all)
        return subset;
    const ExpertPrediction* best = &subset.front();
    for (const ExpertPrediction& p : subset) {
        if (p.probability > best->probability ||
            (p.probability == best->probability &&
             p.expert_id < best->expert_id))
            best = &p;
    }
    return {*best};
}

// Frequency-argmax vote. Frequency ties go to the token whose best member
// probability is largest; an exact probability tie goes to the lowest token
// id.
inline VoteOutcome vote(const ExpertSubset& filtered) {
    if (filtered.empty())
        throw std::logic_error("vote: empty subset");
    VoteOutcome out;
    for (const ExpertPrediction& p : filtered) {
        out.tally.counts[p.token] += 1;
        auto [it, inserted] =
            out.tally.max_probability.emplace(p.token, p.probability);
        if (!inserted && p.probability > it->second)
            it->second = p.probability;
    }
    int best_count = 0;
    for (const auto& [token, count] : out.tally.counts)
        best_count = std::max(best_count, count);
    int at_best = 0;
    bool have = false;
    TokenId winner = 0;
    double winner_prob = 0.0;
    for (const auto& [token, count] : out.tally.counts) {
        if (count != best_count)
            continue;
        ++at_best;
        const double prob = out.tally.max_probability.at(token);
        // Map iteration is ascending by token id, so on an exact probability
        // tie the first (lowest) token stands.
        if (!have || prob > winner_prob) {
            have = true;
            winner = token;
            winner_prob = prob;
        }
    }
    out.winner = winner;
    out.tie_broken = at_best > 1;
    return out;
}

// Composes selection, truncation statistics, truncation and voting into one
// StepRecord. predictions must carry exactly config.num_experts distinct
// expert ids; input order is irrelevant.
inline StepRecord fuse_step(std::vector<ExpertPrediction> predictions,
                            const FusionConfig& config) {
    config.validate();
    if (static_cast<int>(predictions.size()) != config.num_experts)
        throw ConfigError("fuse_step: prediction count != num_experts");
    std::sort(predictions.begin(), predictions.end(),
              [](const ExpertPrediction& a, const ExpertPrediction& b) {
                  return a.expert_id < b.expert_id;
              });
    for (std::size_t i = 1; i < predictions.size(); ++i)
        if (predictions[i].expert_id == predictions[i - 1].expert_id)
            throw ConfigError("fuse_step: duplicate expert_id");

    StepRecord record;
    record.predictions = std::move(predictions);
    const ExpertSubset selected =
        select_top_k(record.predictions, config.top_k);
    record.stats =
        compute_truncation_stats(selected, config.threshold_multiplier);
    const ExpertSubset filtered = truncate_outliers(
        selected, record.stats, config.empty_truncation_policy);
    record.winner = vote(filtered).winner;
    record.selected.reserve(selected.size());
    for (const ExpertPrediction& p : selected)
        record.selected.push_back(p.expert_id);
    record.filtered.reserve(filtered.size());
    for (const ExpertPrediction& p : filtered)
        record.filtered.push_back(p.expert_id);
    return record;
}

// Rebuilds a subset from the expert ids stored in a StepRecord.
inline ExpertSubset subset_from_ids(const StepRecord& record,
                                    const std::vector<int>& ids) {
    ExpertSubset out;
    out.reserve(ids.size());
    for (int id : ids) {
        for (const ExpertPrediction& p : record.predictions) {
            if (p.expert_id == id) {
                out.push_back(p);
                break;
            }
        }
    }
    return out;
}

} // namespace vmoe
