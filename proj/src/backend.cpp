#include "vmoe/backend.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "vmoe/rng.hpp"

namespace vmoe {

namespace {

constexpr std::uint64_t kStreamConsensus = 0x636f6e73ull;
constexpr std::uint64_t kStreamGate = 0x67617465ull;
constexpr std::uint64_t kStreamToken = 0x746f6bull;
constexpr std::uint64_t kStreamProb = 0x70726f62ull;
constexpr std::uint64_t kStreamEmbed = 0x656d6264ull;
constexpr std::uint64_t kStreamEval = 0x6576616cull;

std::uint64_t fold_item(std::uint64_t h, const ContextItem& item) {
    h = rng::combine(h, item.token);
    for (Eigen::Index j = 0; j < item.embedding.size(); ++j)
        h = rng::combine(h, rng::double_bits(item.embedding[j]));
    return h;
}

// Hash of the prompt plus the last context item only. The consensus token is
// keyed off this, making the no-noise winner sequence a deterministic chain
// on the previous winner while noise-perturbed embeddings break the chain.
std::uint64_t last_item_hash(const GenerationContext& context) {
    std::uint64_t h = rng::fnv1a64(context.prompt);
    if (!context.items.empty())
        h = fold_item(h, context.items.back());
    return h;
}

} // namespace

void BackendConfig::validate() const {
    if (kind == BackendKind::http && base_url.empty())
        throw ConfigError("http backend requires base_url");
    if (request_timeout_ms <= 0)
        throw ConfigError("request_timeout_ms must be positive");
    if (max_retries < 0)
        throw ConfigError("max_retries must be >= 0");
    if (max_concurrent_requests < 1)
        throw ConfigError("max_concurrent_requests must be >= 1");
    if (!(mock_consensus >= 0.0 && mock_consensus <= 1.0))
        throw ConfigError("mock_consensus must lie in [0, 1]");
    if (vocab_size < 1)
        throw ConfigError("vocab_size must be >= 1");
    if (embedding_dim < 1)
        throw ConfigError("embedding_dim must be >= 1");
    if (mock_delay_ms < 0)
        throw ConfigError("mock_delay_ms must be >= 0");
    if (mock_eval_error_prob > 1.0)
        throw ConfigError("mock_eval_error_prob must be <= 1");
}

EmbeddingTable::EmbeddingTable(int dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {
    if (dim < 1)
        throw ConfigError("embedding dimension must be >= 1");
}

EmbeddingTable EmbeddingTable::load(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open embedding table: " + path);
    nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_array() || doc.empty())
        throw IoError("embedding table " + path +
                      ": expected a non-empty JSON array of rows");
    const auto rows = static_cast<Eigen::Index>(doc.size());
    if (!doc[0].is_array() || doc[0].empty())
        throw IoError("embedding table " + path + ": row 0 is not an array");
    const auto cols = static_cast<Eigen::Index>(doc[0].size());

    EmbeddingTable table;
    table.dim_ = static_cast<int>(cols);
    table.rows_.emplace(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = doc[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
            throw IoError("embedding table " + path + ": row " +
                          std::to_string(r) + " has inconsistent length");
        for (Eigen::Index c = 0; c < cols; ++c) {
            const auto& cell = row[static_cast<std::size_t>(c)];
            if (!cell.is_number())
                throw IoError("embedding table " + path + ": row " +
                              std::to_string(r) + " holds a non-number");
            (*table.rows_)(r, c) = cell.get<double>();
        }
    }
    return table;
}

EmbeddingVector EmbeddingTable::row(TokenId token) const {
    if (rows_) {
        const auto n = static_cast<TokenId>(rows_->rows());
        return rows_->row(static_cast<Eigen::Index>(token % n)).transpose();
    }
    EmbeddingVector v(dim_);
    for (int j = 0; j < dim_; ++j) {
        const std::uint64_t key =
            rng::derive(seed_, kStreamEmbed, token, static_cast<std::uint64_t>(j));
        v[j] = 2.0 * rng::unit_double(key) - 1.0;
    }
    // Sequential norm accumulation keeps the bytes independent of Eigen's
    // vectorized reduction order.
    double sq = 0.0;
    for (int j = 0; j < dim_; ++j)
        sq += v[j] * v[j];
    const double norm = std::sqrt(sq);
    if (norm < 1e-12) {
        v.setZero();
        v[0] = 1.0;
        return v;
    }
    for (int j = 0; j < dim_; ++j)
        v[j] /= norm;
    return v;
}

Backend::Backend(BackendConfig cfg)
    : config(std::move(cfg)),
      table(config.embedding_table_path.empty()
                ? EmbeddingTable(std::max(config.embedding_dim, 1),
                                 config.mock_seed)
                : EmbeddingTable::load(config.embedding_table_path)) {
    config.validate();
}

ExpertPool build_pool(const std::vector<std::string>& prompts) {
    if (prompts.empty())
        throw ConfigError("expert pool must contain at least one prompt");
    ExpertPool pool;
    pool.experts.reserve(prompts.size());
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        if (prompts[i].empty())
            throw ConfigError("expert prompt " + std::to_string(i) +
                              " is empty");
        pool.experts.push_back({static_cast<int>(i), prompts[i]});
    }
    return pool;
}

ExpertPool load_pool_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw FixtureError("cannot open prompt file: " + path);
    ExpertPool pool;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        const std::string where = path + ":" + std::to_string(line_no);
        nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
        if (doc.is_discarded() || !doc.is_object())
            throw FixtureError(where + ": expected a JSON object");
        if (!doc.contains("expert_id") || !doc["expert_id"].is_number_integer())
            throw FixtureError(where + ": missing integer expert_id");
        if (!doc.contains("prompt") || !doc["prompt"].is_string())
            throw FixtureError(where + ": missing string prompt");
        ExpertPrompt expert;
        expert.expert_id = doc["expert_id"].get<int>();
        expert.prompt_text = doc["prompt"].get<std::string>();
        if (expert.expert_id < 0)
            throw FixtureError(where + ": expert_id must be >= 0");
        if (expert.prompt_text.empty())
            throw FixtureError(where + ": prompt is empty");
        pool.experts.push_back(std::move(expert));
    }
    if (pool.experts.empty())
        throw FixtureError(path + ": no prompts");
    std::sort(pool.experts.begin(), pool.experts.end(),
              [](const ExpertPrompt& a, const ExpertPrompt& b) {
                  return a.expert_id < b.expert_id;
              });
    for (std::size_t i = 1; i < pool.experts.size(); ++i)
        if (pool.experts[i].expert_id == pool.experts[i - 1].expert_id)
            throw FixtureError(path + ": duplicate expert_id " +
                               std::to_string(pool.experts[i].expert_id));
    return pool;
}

GenerationContext seed_context(const std::string& prompt) {
    GenerationContext context;
    context.prompt = prompt;
    return context;
}

namespace detail {

std::uint64_t context_hash(const GenerationContext& context) {
    std::uint64_t h = rng::fnv1a64(context.prompt);
    for (const ContextItem& item : context.items)
        h = fold_item(h, item);
    return h;
}

TokenId mock_consensus_token(const GenerationContext& context,
                             const BackendConfig& config) {
    const std::uint64_t key =
        rng::derive(config.mock_seed, kStreamConsensus, last_item_hash(context));
    return rng::bounded(key, static_cast<std::uint32_t>(config.vocab_size));
}

const std::array<double, 64>& mock_probability_table() {
    static const std::array<double, 64> table = [] {
        std::array<double, 64> t{};
        for (int j = 0; j < 64; ++j) {
            const double w = (2.0 * j + 1.0 - 64.0) / 64.0;
            t[static_cast<std::size_t>(j)] = 0.55 + 0.35 * w * w * w + 0.05 * w;
        }
        return t;
    }();
    return table;
}

ExpertPrediction mock_predict(const ExpertPrompt& expert,
                              const GenerationContext& context,
                              const Backend& backend) {
    const BackendConfig& cfg = backend.config;
    const auto vocab = static_cast<std::uint32_t>(cfg.vocab_size);
    const std::uint64_t base =
        rng::derive(cfg.mock_seed, context_hash(context),
                    static_cast<std::uint64_t>(expert.expert_id),
                    rng::fnv1a64(expert.prompt_text));

    ExpertPrediction pred;
    pred.expert_id = expert.expert_id;

    if (cfg.mock_eval_error_prob >= 0.0) {
        const bool wrong = rng::unit_double(rng::derive(base, kStreamEval)) <
                           cfg.mock_eval_error_prob;
        const TokenId correct = cfg.mock_eval_correct_token % vocab;
        pred.token = wrong ? (correct + 1) % vocab : correct;
        pred.probability = 0.7;
    } else if (cfg.mock_dissenter_id >= 0 &&
               expert.expert_id == cfg.mock_dissenter_id) {
        pred.token = (mock_consensus_token(context, cfg) + 1) % vocab;
        pred.probability = 0.97;
    } else {
        // (gate >> 11) is uniform on [0, 2^53); the comparison fires with
        // probability mock_consensus exactly at both endpoints.
        const std::uint64_t gate = rng::derive(base, kStreamGate);
        const auto cut = static_cast<std::uint64_t>(cfg.mock_consensus *
                                                    9007199254740992.0);
        if ((gate >> 11) < cut)
            pred.token = mock_consensus_token(context, cfg);
        else
            pred.token = rng::bounded(rng::derive(base, kStreamToken), vocab);
        pred.probability =
            mock_probability_table()[rng::bounded(rng::derive(base, kStreamProb), 64)];
    }
    pred.embedding = backend.table.row(pred.token);
    return pred;
}

TokenId token_from_string(const std::string& text, int vocab_size) {
    std::uint64_t value = 0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (!text.empty() && ec == std::errc() && ptr == last &&
        value <= std::numeric_limits<TokenId>::max())
        return static_cast<TokenId>(value);
    return static_cast<TokenId>(rng::fnv1a64(text) %
                                static_cast<std::uint64_t>(vocab_size));
}

} // namespace detail

namespace {

std::string render_prompt(const ExpertPrompt& expert,
                          const GenerationContext& context) {
    std::string text = expert.prompt_text;
    text += "\n\n";
    text += context.prompt;
    // No tokenizer exists; generated tokens are rendered as decimal ids.
    for (const ContextItem& item : context.items) {
        text += ' ';
        text += std::to_string(item.token);
    }
    return text;
}

struct HttpAttempt {
    bool retryable = false;
    std::string error;
    std::optional<ExpertPrediction> prediction;
};

HttpAttempt protocol_error(std::string message) {
    return {false, std::move(message), std::nullopt};
}

HttpAttempt http_attempt(const ExpertPrompt& expert,
                         const GenerationContext& context,
                         const Backend& backend) {
    const BackendConfig& cfg = backend.config;
    httplib::Client client(cfg.base_url);
    const time_t seconds = cfg.request_timeout_ms / 1000;
    const time_t micros = (cfg.request_timeout_ms % 1000) * 1000;
    client.set_connection_timeout(seconds, micros);
    client.set_read_timeout(seconds, micros);
    client.set_write_timeout(seconds, micros);

    const nlohmann::json body = {
        {"model", cfg.model_name},
        {"prompt", render_prompt(expert, context)},
        {"max_tokens", 1},
        {"logprobs", 5},
        {"temperature", 0},
    };
    auto res = client.Post("/v1/completions", body.dump(), "application/json");
    if (!res)
        return {true, "transport error: " + httplib::to_string(res.error()),
                std::nullopt};
    if (res->status >= 500)
        return {true, "HTTP " + std::to_string(res->status), std::nullopt};
    if (res->status != 200)
        return protocol_error("HTTP " + std::to_string(res->status));

    const nlohmann::json doc = nlohmann::json::parse(res->body, nullptr, false);
    if (doc.is_discarded())
        return protocol_error("response body is not valid JSON");
    if (!doc.contains("choices") || !doc["choices"].is_array() ||
        doc["choices"].empty())
        return protocol_error("response has no choices");
    const auto& choice = doc["choices"][0];
    if (!choice.contains("logprobs") || !choice["logprobs"].is_object())
        return protocol_error("choice carries no logprobs");
    const auto& logprobs = choice["logprobs"];
    if (!logprobs.contains("top_logprobs") ||
        !logprobs["top_logprobs"].is_array() ||
        logprobs["top_logprobs"].empty())
        return protocol_error("logprobs carry no top_logprobs");
    const auto& top = logprobs["top_logprobs"][0];
    if (!top.is_object() || top.empty())
        return protocol_error("top_logprobs[0] is not a non-empty object");

    // nlohmann objects iterate in key order, so on equal logprobs the
    // lexicographically smallest token wins deterministically.
    std::string best_token;
    double best_logprob = 0.0;
    bool have = false;
    for (auto it = top.begin(); it != top.end(); ++it) {
        if (!it.value().is_number())
            return protocol_error("logprob for token '" + it.key() +
                                  "' is not a number");
        const double lp = it.value().get<double>();
        if (!have || lp > best_logprob) {
            have = true;
            best_token = it.key();
            best_logprob = lp;
        }
    }
    if (best_logprob > 0.0)
        return protocol_error("logprob above zero implies probability > 1");

    ExpertPrediction pred;
    pred.expert_id = expert.expert_id;
    pred.token = detail::token_from_string(best_token, cfg.vocab_size);
    pred.probability = std::exp(best_logprob);
    pred.embedding = backend.table.row(pred.token);
    return {false, "", std::move(pred)};
}

ExpertPrediction http_predict(const ExpertPrompt& expert,
                              const GenerationContext& context,
                              const Backend& backend) {
    const int max_attempts = backend.config.max_retries + 1;
    std::string last_error;
    int made = 0;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        HttpAttempt out = http_attempt(expert, context, backend);
        ++made;
        if (out.prediction)
            return std::move(*out.prediction);
        last_error = std::move(out.error);
        if (!out.retryable)
            break;
    }
    throw BackendError(last_error + " (" + std::to_string(made) + " attempt" +
                       (made == 1 ? "" : "s") + ")");
}

} // namespace

ExpertPrediction fetch_prediction(const ExpertPrompt& expert,
                                  const GenerationContext& context,
                                  const Backend& backend) {
    if (backend.config.kind == BackendKind::mock) {
        if (backend.config.mock_delay_ms > 0)
            std::this_thread::sleep_for(
                std::chrono::milliseconds(backend.config.mock_delay_ms));
        return detail::mock_predict(expert, context, backend);
    }
    return http_predict(expert, context, backend);
}

std::vector<ExpertPrediction> predict_all(const ExpertPool& pool,
                                          const GenerationContext& context,
                                          const Backend& backend) {
    if (pool.experts.empty())
        throw ConfigError("expert pool is empty");
    const int n = pool.size();
    std::vector<std::optional<ExpertPrediction>> slots(
        static_cast<std::size_t>(n));
    std::vector<std::pair<int, std::string>> failures;
    std::mutex failures_mutex;

    auto fetch_into_slot = [&](int i) {
        try {
            slots[static_cast<std::size_t>(i)] = fetch_prediction(
                pool.experts[static_cast<std::size_t>(i)], context, backend);
        } catch (const std::exception& e) {
            const std::lock_guard<std::mutex> lock(failures_mutex);
            failures.emplace_back(
                pool.experts[static_cast<std::size_t>(i)].expert_id, e.what());
        }
    };

    const int workers = std::min(backend.config.max_concurrent_requests, n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i)
            fetch_into_slot(i);
    } else {
        std::atomic<int> next{0};
        auto drain = [&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= n)
                    return;
                fetch_into_slot(i);
            }
        };
        std::vector<std::thread> threads;
        threads.reserve(static_cast<std::size_t>(workers));
        for (int w = 0; w < workers; ++w)
            threads.emplace_back(drain);
        for (std::thread& t : threads)
            t.join();
    }

    if (!failures.empty()) {
        std::sort(failures.begin(), failures.end());
        std::string msg = "prediction failed:";
        for (std::size_t i = 0; i < failures.size(); ++i) {
            msg += i == 0 ? " " : "; ";
            msg += "expert " + std::to_string(failures[i].first) + ": " +
                   failures[i].second;
        }
        throw BackendError(msg);
    }

    std::vector<ExpertPrediction> out;
    out.reserve(static_cast<std::size_t>(n));
    for (auto& slot : slots)
        out.push_back(std::move(*slot));
    std::sort(out.begin(), out.end(),
              [](const ExpertPrediction& a, const ExpertPrediction& b) {
                  return a.expert_id < b.expert_id;
              });
    return out;
}

} // namespace vmoe
