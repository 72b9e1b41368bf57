#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vmoe/backend.hpp"
#include "vmoe/diversity.hpp"
#include "vmoe/types.hpp"

// Experiment orchestration: generation runs, the expert-count orthogonality
// sweep, the four-way ablation, fixture-scale factuality evaluation, and
// consolidated report emission. Every run with a fixed seed and the mock
// backend is byte-reproducible end to end.
namespace vmoe {

enum class AblationVariant {
    baseline,
    fusion_full,
    fusion_no_truncation,
    fusion_no_noise,
};

std::string to_string(AblationVariant variant);
AblationVariant variant_from_string(const std::string& name);

struct ExperimentSpec {
    std::string name = "vmoe";
    std::vector<std::string> tasks = {
        "Tell a story",
        "Predict the 2025 world economic outlook",
    };
    std::vector<int> expert_counts = {128, 32, 3};
    int steps = 10;
    int runs = 1;
    std::string out_dir = "out";
    // fusion.top_k == 0 is a spec-level sentinel meaning "all experts"; the
    // derived per-run config always carries a concrete top_k.
    FusionConfig fusion;
    BackendConfig backend;
    std::string eval_cases_path;
    std::string prompts_path;
    // Mock consensus per expert count; counts absent from the map fall back
    // to backend.mock_consensus. Mirrors the observation that larger expert
    // pools behave more uniformly.
    std::map<int, double> consensus_by_count = {{128, 0.95},
                                                {32, 0.7},
                                                {3, 0.1}};

    ExperimentSpec() {
        fusion.top_k = 0;
        fusion.base_noise_scale = 0.1;
    }

    void validate() const;
};

// Reads a single JSON document; absent fields keep their defaults.
ExperimentSpec load_experiment_spec(const std::string& path);

// Concrete per-run fusion config for a variant. baseline pins one expert and
// disables truncation and noise; fusion_no_truncation sets an infinite
// threshold multiplier; fusion_no_noise zeroes base_noise_scale.
FusionConfig variant_config(const ExperimentSpec& spec, AblationVariant variant,
                            int expert_count);
int variant_expert_count(AblationVariant variant, int requested);

// Expert pool of the given size, loaded from prompts_path when set (the file
// must supply at least `count` prompts) and synthesized otherwise.
ExpertPool pool_for(const ExperimentSpec& spec, int count);

// Full decoding loop: per step, fan out to all experts, fuse, record the
// similarity of all chosen-token embeddings (absent when count < 2), perturb
// the winner's embedding, and feed it back into the context. A backend error
// aborts the run; the partial trace is returned marked incomplete.
GenerationTrace run_generation(const ExperimentSpec& spec, int task_index,
                               int expert_count,
                               AblationVariant variant = AblationVariant::fusion_full,
                               int run_index = 0);

struct OrthogonalityCell {
    int task_index = 0;
    int expert_count = 0;
    OrthogonalityTrace trace;
};

// One generation run per (task, expert_count) cell. Writes per-cell CSVs, a
// combined CSV, one similarity heatmap per cell at the middle step, and a
// line plot of the smoothed scores under out_dir/orthogonality/.
std::vector<OrthogonalityCell> run_orthogonality_experiment(
    const ExperimentSpec& spec);

struct AblationRow {
    AblationVariant variant = AblationVariant::baseline;
    int num_experts = 1;
    int top_k = 1;
    bool truncation = false;
    bool noise = false;
    int runs = 0;
    double distinct_token_ratio = 0.0;
    double repeated_bigram_rate = 0.0;
    double fused_prob_variance = 0.0;
    double majority_agreement_rate = 0.0;
    // Mean predictions removed by truncation per step; meaningful only when
    // truncation is on.
    double mean_removed_per_step = 0.0;
    // NaN when no eval fixture is configured; rendered as an empty CSV cell.
    double eval_accuracy = 0.0;
};

// Runs every variant over tasks x runs at expert_counts.front() experts,
// persists all traces under out_dir/ablation/<variant>/, and writes one CSV
// row per variant. Output contains no timestamps or latency, so identical
// seeds give identical bundles.
std::vector<AblationRow> run_ablation(const ExperimentSpec& spec);
std::string ablation_csv(const std::vector<AblationRow>& rows);

enum class Verdict { unjudged, factual, hallucinated };

struct EvalCase {
    std::string question;
    std::vector<std::string> references;
    std::string output;
    Verdict verdict = Verdict::unjudged;
};

// JSONL, one {"question": ..., "references": [...]} per line. Malformed
// lines raise FixtureError naming the line number.
std::vector<EvalCase> load_eval_cases(const std::string& path);

// Lowercases, trims, and collapses whitespace runs.
std::string normalize_answer(const std::string& text);
// Factual iff the normalized output equals a normalized reference or
// contains one as a substring.
bool judge_match(const std::string& output,
                 const std::vector<std::string>& references);

struct EvalResult {
    double hallucination_rate = 0.0;
    double mean_latency_ms = 0.0;
    std::vector<EvalCase> cases;
};

// One fused step per case. With the mock backend in eval mode the per-case
// correct token is parsed from the first reference (decimal id, else a hash
// into the vocabulary).
EvalResult run_eval(const ExperimentSpec& spec, AblationVariant variant);

struct ReportWarning {
    std::string file;
    std::string message;
};

// Consolidates every *.trace.jsonl under run_dir into report.json,
// report.csv and report.svg with stable bytes. Incomplete or unreadable
// traces become warnings and are excluded from aggregates.
void emit_report(const std::string& run_dir);

} // namespace vmoe
