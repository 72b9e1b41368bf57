#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vmoe/errors.hpp"
#include "vmoe/types.hpp"

// Per-expert prediction providers: a seeded deterministic mock and an HTTP
// client for OpenAI-compatible completion servers exposing token
// log-probabilities.
namespace vmoe {

// Domain-specific framing prepended to the shared context for one expert.
struct ExpertPrompt {
    int expert_id = 0;
    std::string prompt_text;
};

struct ExpertPool {
    std::vector<ExpertPrompt> experts;
    int size() const { return static_cast<int>(experts.size()); }
};

enum class BackendKind { mock, http };

struct BackendConfig {
    BackendKind kind = BackendKind::mock;
    std::string base_url;
    std::string model_name = "default";
    int request_timeout_ms = 5000;
    int max_retries = 2;
    int max_concurrent_requests = 1;
    std::uint64_t mock_seed = 0;
    double mock_consensus = 0.7;
    int vocab_size = 64;
    int embedding_dim = 64;
    int mock_delay_ms = 0;
    // When >= 0, the expert with this id always emits a high-confidence
    // (0.97) token adjacent to the consensus token.
    int mock_dissenter_id = -1;
    // Eval-mode mock: when >= 0, every expert emits mock_eval_correct_token
    // with probability 1 - mock_eval_error_prob and the adjacent wrong token
    // otherwise, at a constant probability of 0.7.
    double mock_eval_error_prob = -1.0;
    TokenId mock_eval_correct_token = 1;
    std::string embedding_table_path;

    void validate() const;
};

// One entry of the decoding context: a fused token and the embedding carried
// forward for it (possibly noise-perturbed).
struct ContextItem {
    TokenId token = 0;
    EmbeddingVector embedding;
};

struct GenerationContext {
    std::string prompt;
    std::vector<ContextItem> items;
};

// Token embeddings for one run. Either derived on demand from a seed (unit
// vectors with components built from integer-addressed uniform draws, then
// normalized) or loaded from a JSON table file.
class EmbeddingTable {
public:
    EmbeddingTable(int dim, std::uint64_t seed);
    static EmbeddingTable load(const std::string& path);

    EmbeddingVector row(TokenId token) const;
    int dim() const { return dim_; }

private:
    EmbeddingTable() = default;
    int dim_ = 0;
    std::uint64_t seed_ = 0;
    std::optional<Eigen::MatrixXd> rows_;
};

// Config plus the run's embedding table.
struct Backend {
    explicit Backend(BackendConfig config);
    BackendConfig config;
    EmbeddingTable table;
};

// Builds a pool with expert_ids 0..N-1 assigned in input order.
ExpertPool build_pool(const std::vector<std::string>& prompts);

// Loads a JSONL prompt file, one {"expert_id": ..., "prompt": ...} object per
// line; entries are sorted by expert_id and ids must be unique.
ExpertPool load_pool_jsonl(const std::string& path);

// Fresh decoding context for a task prompt.
GenerationContext seed_context(const std::string& prompt);

// One prediction for one expert, dispatching on backend kind. The HTTP path
// sends a single completion request (max_tokens=1, temperature=0, top
// log-probabilities requested); the argmax token and exp(logprob) become the
// prediction. Embeddings always come from the run's table.
ExpertPrediction fetch_prediction(const ExpertPrompt& expert,
                                  const GenerationContext& context,
                                  const Backend& backend);

// One prediction per expert, ordered by expert_id regardless of completion
// order. Per-expert failures surface as one BackendError naming every failing
// expert_id; partial results are never returned. The mock path is a pure
// function of (mock_seed, expert_id, context, mock_consensus).
std::vector<ExpertPrediction> predict_all(const ExpertPool& pool,
                                          const GenerationContext& context,
                                          const Backend& backend);

namespace detail {
// Mock internals exposed for tests and for harness metrics.
std::uint64_t context_hash(const GenerationContext& context);
TokenId mock_consensus_token(const GenerationContext& context,
                             const BackendConfig& config);
ExpertPrediction mock_predict(const ExpertPrompt& expert,
                              const GenerationContext& context,
                              const Backend& backend);
// 64-entry probability table resembling a mid-concentrated Beta sample;
// integer-indexed so the sampling path stays free of transcendentals.
const std::array<double, 64>& mock_probability_table();
// Full-string decimal parse, else FNV-1a hash reduced into the vocabulary.
TokenId token_from_string(const std::string& text, int vocab_size);
} // namespace detail

} // namespace vmoe
