#include "vmoe/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <utility>

#include <json.hpp>

#include "vmoe/errors.hpp"
#include "vmoe/fusion.hpp"
#include "vmoe/noise.hpp"
#include "vmoe/rng.hpp"
#include "vmoe/svg.hpp"
#include "vmoe/trace_io.hpp"

namespace fs = std::filesystem;

namespace vmoe {

namespace {

using nlohmann::json;

constexpr std::uint64_t kStreamRun = 0x72756eull;
constexpr std::uint64_t kStreamCase = 0x63617365ull;

constexpr AblationVariant kVariants[] = {
    AblationVariant::baseline,
    AblationVariant::fusion_full,
    AblationVariant::fusion_no_truncation,
    AblationVariant::fusion_no_noise,
};

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open file for writing: " + path.string());
    out << content;
    if (!out)
        throw IoError("failed writing file: " + path.string());
}

double spec_real(const json& j, const char* what) {
    if (j.is_number())
        return j.get<double>();
    if (j.is_string() && j.get<std::string>() == "inf")
        return std::numeric_limits<double>::infinity();
    throw ConfigError(std::string(what) + " must be a number or \"inf\"");
}

std::string cell_name(int task_index, int expert_count) {
    return "task" + std::to_string(task_index) + "_n" +
           std::to_string(expert_count);
}

std::string csv_quote(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos)
        return field;
    std::string out = "\"";
    for (const char c : field) {
        if (c == '"')
            out += '"';
        out += c;
    }
    out += '"';
    return out;
}

double trace_distinct_ratio(const GenerationTrace& trace) {
    if (trace.tokens.empty())
        return 0.0;
    const std::set<TokenId> distinct(trace.tokens.begin(), trace.tokens.end());
    return static_cast<double>(distinct.size()) /
           static_cast<double>(trace.tokens.size());
}

double trace_repeated_bigram_rate(const GenerationTrace& trace) {
    if (trace.tokens.size() < 2)
        return 0.0;
    std::set<std::pair<TokenId, TokenId>> seen;
    int repeats = 0;
    for (std::size_t i = 1; i < trace.tokens.size(); ++i)
        if (!seen.insert({trace.tokens[i - 1], trace.tokens[i]}).second)
            ++repeats;
    return static_cast<double>(repeats) /
           static_cast<double>(trace.tokens.size() - 1);
}

// Probability backing the fused winner: the best probability among filtered
// predictions that voted for it.
double winner_probability(const StepRecord& record) {
    double best = 0.0;
    for (int id : record.filtered) {
        for (const ExpertPrediction& p : record.predictions) {
            if (p.expert_id == id && p.token == record.winner)
                best = std::max(best, p.probability);
        }
    }
    return best;
}

double trace_fused_prob_variance(const GenerationTrace& trace) {
    if (trace.steps.empty())
        return 0.0;
    double sum = 0.0;
    for (const StepRecord& s : trace.steps)
        sum += winner_probability(s);
    const double mean = sum / static_cast<double>(trace.steps.size());
    double sq = 0.0;
    for (const StepRecord& s : trace.steps) {
        const double d = winner_probability(s) - mean;
        sq += d * d;
    }
    return sq / static_cast<double>(trace.steps.size());
}

// Fraction of steps whose winner is among the modal tokens of all N
// predictions (pre-selection, pre-truncation).
double trace_majority_agreement(const GenerationTrace& trace) {
    if (trace.steps.empty())
        return 0.0;
    int agree = 0;
    for (const StepRecord& s : trace.steps) {
        std::map<TokenId, int> counts;
        for (const ExpertPrediction& p : s.predictions)
            counts[p.token] += 1;
        int best = 0;
        for (const auto& [token, count] : counts)
            best = std::max(best, count);
        if (counts.count(s.winner) && counts.at(s.winner) == best)
            ++agree;
    }
    return static_cast<double>(agree) / static_cast<double>(trace.steps.size());
}

double trace_mean_removed(const GenerationTrace& trace) {
    if (trace.steps.empty())
        return 0.0;
    double removed = 0.0;
    for (const StepRecord& s : trace.steps)
        removed += static_cast<double>(s.selected.size() - s.filtered.size());
    return removed / static_cast<double>(trace.steps.size());
}

double trace_mean_orthogonality(const GenerationTrace& trace, bool& present) {
    double sum = 0.0;
    int n = 0;
    for (const StepRecord& s : trace.steps) {
        if (s.similarity) {
            sum += s.similarity->orthogonality;
            ++n;
        }
    }
    present = n > 0;
    return present ? sum / n : 0.0;
}

BackendConfig run_backend_config(const ExperimentSpec& spec, int expert_count,
                                 int task_index, int run_index) {
    BackendConfig cfg = spec.backend;
    const auto it = spec.consensus_by_count.find(expert_count);
    if (it != spec.consensus_by_count.end())
        cfg.mock_consensus = it->second;
    cfg.mock_seed = rng::derive(spec.backend.mock_seed, kStreamRun,
                                static_cast<std::uint64_t>(task_index),
                                static_cast<std::uint64_t>(expert_count),
                                static_cast<std::uint64_t>(run_index));
    return cfg;
}

} // namespace

std::string to_string(AblationVariant variant) {
    switch (variant) {
    case AblationVariant::baseline:
        return "baseline";
    case AblationVariant::fusion_full:
        return "fusion_full";
    case AblationVariant::fusion_no_truncation:
        return "fusion_no_truncation";
    case AblationVariant::fusion_no_noise:
        return "fusion_no_noise";
    }
    throw ConfigError("unknown ablation variant");
}

AblationVariant variant_from_string(const std::string& name) {
    for (const AblationVariant v : kVariants)
        if (to_string(v) == name)
            return v;
    throw ConfigError("unknown ablation variant: " + name);
}

void ExperimentSpec::validate() const {
    if (tasks.empty())
        throw ConfigError("experiment needs at least one task");
    for (const std::string& task : tasks)
        if (task.empty())
            throw ConfigError("experiment task prompt is empty");
    if (expert_counts.empty())
        throw ConfigError("experiment needs at least one expert count");
    for (const int count : expert_counts)
        if (count < 1)
            throw ConfigError("expert counts must be >= 1");
    if (steps < 1)
        throw ConfigError("steps must be >= 1");
    if (runs < 1)
        throw ConfigError("runs must be >= 1");
    if (out_dir.empty())
        throw ConfigError("out_dir must not be empty");
    if (fusion.top_k < 0)
        throw ConfigError("fusion top_k must be >= 0 (0 means all experts)");
    if (std::isnan(fusion.threshold_multiplier) ||
        fusion.threshold_multiplier < 0.0)
        throw ConfigError("threshold_multiplier must be >= 0");
    if (!std::isfinite(fusion.base_noise_scale) || fusion.base_noise_scale < 0.0)
        throw ConfigError("base_noise_scale must be finite and >= 0");
    for (const auto& [count, consensus] : consensus_by_count)
        if (!(consensus >= 0.0 && consensus <= 1.0))
            throw ConfigError("consensus for count " + std::to_string(count) +
                              " must lie in [0, 1]");
    backend.validate();
}

ExperimentSpec load_experiment_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open experiment spec: " + path);
    const json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        throw ConfigError("experiment spec " + path +
                          " is not a JSON object");

    ExperimentSpec spec;
    if (doc.contains("name"))
        spec.name = doc["name"].get<std::string>();
    if (doc.contains("tasks"))
        spec.tasks = doc["tasks"].get<std::vector<std::string>>();
    if (doc.contains("expert_counts"))
        spec.expert_counts = doc["expert_counts"].get<std::vector<int>>();
    if (doc.contains("steps"))
        spec.steps = doc["steps"].get<int>();
    if (doc.contains("runs"))
        spec.runs = doc["runs"].get<int>();
    if (doc.contains("out_dir"))
        spec.out_dir = doc["out_dir"].get<std::string>();
    if (doc.contains("eval_cases"))
        spec.eval_cases_path = doc["eval_cases"].get<std::string>();
    if (doc.contains("prompts"))
        spec.prompts_path = doc["prompts"].get<std::string>();

    if (doc.contains("fusion")) {
        const json& f = doc["fusion"];
        if (f.contains("top_k"))
            spec.fusion.top_k = f["top_k"].get<int>();
        if (f.contains("threshold_multiplier"))
            spec.fusion.threshold_multiplier =
                spec_real(f["threshold_multiplier"], "threshold_multiplier");
        if (f.contains("base_noise_scale"))
            spec.fusion.base_noise_scale = f["base_noise_scale"].get<double>();
        if (f.contains("noise_seed"))
            spec.fusion.noise_seed = f["noise_seed"].get<std::uint64_t>();
        if (f.contains("empty_truncation_policy"))
            spec.fusion.empty_truncation_policy = truncation_policy_from_string(
                f["empty_truncation_policy"].get<std::string>());
        if (f.contains("tie_break_final"))
            spec.fusion.tie_break_final =
                tie_break_from_string(f["tie_break_final"].get<std::string>());
    }

    if (doc.contains("backend")) {
        const json& b = doc["backend"];
        if (b.contains("kind")) {
            const std::string kind = b["kind"].get<std::string>();
            if (kind == "mock")
                spec.backend.kind = BackendKind::mock;
            else if (kind == "http")
                spec.backend.kind = BackendKind::http;
            else
                throw ConfigError("unknown backend kind: " + kind);
        }
        if (b.contains("base_url"))
            spec.backend.base_url = b["base_url"].get<std::string>();
        if (b.contains("model_name"))
            spec.backend.model_name = b["model_name"].get<std::string>();
        if (b.contains("request_timeout_ms"))
            spec.backend.request_timeout_ms = b["request_timeout_ms"].get<int>();
        if (b.contains("max_retries"))
            spec.backend.max_retries = b["max_retries"].get<int>();
        if (b.contains("max_concurrent_requests"))
            spec.backend.max_concurrent_requests =
                b["max_concurrent_requests"].get<int>();
        if (b.contains("mock_seed"))
            spec.backend.mock_seed = b["mock_seed"].get<std::uint64_t>();
        if (b.contains("mock_consensus"))
            spec.backend.mock_consensus = b["mock_consensus"].get<double>();
        if (b.contains("vocab_size"))
            spec.backend.vocab_size = b["vocab_size"].get<int>();
        if (b.contains("embedding_dim"))
            spec.backend.embedding_dim = b["embedding_dim"].get<int>();
        if (b.contains("mock_delay_ms"))
            spec.backend.mock_delay_ms = b["mock_delay_ms"].get<int>();
        if (b.contains("mock_dissenter_id"))
            spec.backend.mock_dissenter_id = b["mock_dissenter_id"].get<int>();
        if (b.contains("mock_eval_error_prob"))
            spec.backend.mock_eval_error_prob =
                b["mock_eval_error_prob"].get<double>();
        if (b.contains("mock_eval_correct_token"))
            spec.backend.mock_eval_correct_token =
                b["mock_eval_correct_token"].get<TokenId>();
        if (b.contains("embedding_table_path"))
            spec.backend.embedding_table_path =
                b["embedding_table_path"].get<std::string>();
    }

    if (doc.contains("consensus_by_count")) {
        const json& m = doc["consensus_by_count"];
        if (!m.is_object())
            throw ConfigError("consensus_by_count must be an object");
        spec.consensus_by_count.clear();
        for (auto it = m.begin(); it != m.end(); ++it) {
            try {
                spec.consensus_by_count[std::stoi(it.key())] =
                    it.value().get<double>();
            } catch (const std::exception&) {
                throw ConfigError("consensus_by_count key '" + it.key() +
                                  "' is not an integer");
            }
        }
    }

    spec.validate();
    return spec;
}

int variant_expert_count(AblationVariant variant, int requested) {
    return variant == AblationVariant::baseline ? 1 : requested;
}

FusionConfig variant_config(const ExperimentSpec& spec, AblationVariant variant,
                            int expert_count) {
    if (expert_count < 1)
        throw ConfigError("expert_count must be >= 1");
    FusionConfig cfg = spec.fusion;
    const int n = variant_expert_count(variant, expert_count);
    cfg.num_experts = n;
    cfg.top_k = spec.fusion.top_k == 0 ? n : std::min(spec.fusion.top_k, n);
    switch (variant) {
    case AblationVariant::baseline:
        cfg.top_k = 1;
        cfg.threshold_multiplier = kInfiniteMultiplier;
        cfg.base_noise_scale = 0.0;
        break;
    case AblationVariant::fusion_no_truncation:
        cfg.threshold_multiplier = kInfiniteMultiplier;
        break;
    case AblationVariant::fusion_no_noise:
        cfg.base_noise_scale = 0.0;
        break;
    case AblationVariant::fusion_full:
        break;
    }
    cfg.validate();
    return cfg;
}

ExpertPool pool_for(const ExperimentSpec& spec, int count) {
    if (count < 1)
        throw ConfigError("expert pool size must be >= 1");
    if (!spec.prompts_path.empty()) {
        ExpertPool pool = load_pool_jsonl(spec.prompts_path);
        if (pool.size() < count)
            throw ConfigError("prompt file " + spec.prompts_path + " holds " +
                              std::to_string(pool.size()) +
                              " prompts, need " + std::to_string(count));
        pool.experts.resize(static_cast<std::size_t>(count));
        return pool;
    }
    std::vector<std::string> prompts;
    prompts.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        prompts.push_back("You are virtual expert " + std::to_string(i) +
                          ". Continue the text from the standpoint of domain " +
                          std::to_string(i) + ".");
    return build_pool(prompts);
}

GenerationTrace run_generation(const ExperimentSpec& spec, int task_index,
                               int expert_count, AblationVariant variant,
                               int run_index) {
    spec.validate();
    if (task_index < 0 || task_index >= static_cast<int>(spec.tasks.size()))
        throw ConfigError("task index out of range");
    if (run_index < 0)
        throw ConfigError("run index must be >= 0");

    const int n = variant_expert_count(variant, expert_count);
    FusionConfig fusion = variant_config(spec, variant, expert_count);
    fusion.noise_seed = rng::derive(spec.fusion.noise_seed, kStreamRun,
                                    static_cast<std::uint64_t>(task_index),
                                    static_cast<std::uint64_t>(n),
                                    static_cast<std::uint64_t>(run_index));
    const Backend backend(run_backend_config(spec, n, task_index, run_index));
    const ExpertPool pool = pool_for(spec, n);

    GenerationTrace trace;
    trace.config = fusion;
    trace.prompt = spec.tasks[static_cast<std::size_t>(task_index)];
    GenerationContext context = seed_context(trace.prompt);

    for (int step = 0; step < spec.steps; ++step) {
        std::vector<ExpertPrediction> predictions;
        try {
            predictions = predict_all(pool, context, backend);
        } catch (const BackendError& e) {
            trace.complete = false;
            trace.error = e.what();
            break;
        }
        StepRecord record = fuse_step(std::move(predictions), fusion);
        record.step = step;
        if (n >= 2) {
            std::vector<EmbeddingVector> embeddings;
            embeddings.reserve(record.predictions.size());
            for (const ExpertPrediction& p : record.predictions)
                embeddings.push_back(p.embedding);
            record.similarity = make_similarity_record(embeddings, step);
        }
        auto [carried, params] = apply_noise_to_step(record, fusion);
        record.noise_sigma = params.sigma;
        trace.tokens.push_back(record.winner);
        context.items.push_back({record.winner, std::move(carried)});
        trace.steps.push_back(std::move(record));
    }
    return trace;
}

std::vector<OrthogonalityCell> run_orthogonality_experiment(
    const ExperimentSpec& spec) {
    spec.validate();
    for (const int count : spec.expert_counts)
        if (count < 2)
            throw ConfigError(
                "orthogonality experiment requires expert counts >= 2");

    const fs::path dir = fs::path(spec.out_dir) / "orthogonality";
    fs::create_directories(dir);

    std::vector<OrthogonalityCell> cells;
    std::string combined = "task,expert_count,step,score,smoothed\n";
    std::vector<LineSeries> series;

    for (std::size_t t = 0; t < spec.tasks.size(); ++t) {
        for (const int count : spec.expert_counts) {
            GenerationTrace trace =
                run_generation(spec, static_cast<int>(t), count);
            const std::string name = cell_name(static_cast<int>(t), count);
            save_trace(trace, (dir / (name + ".trace.jsonl")).string());
            if (!trace.complete)
                throw BackendError("orthogonality run " + name +
                                   " aborted: " + trace.error);

            std::vector<double> raw;
            raw.reserve(trace.steps.size());
            for (const StepRecord& s : trace.steps)
                raw.push_back(s.similarity->orthogonality);

            OrthogonalityCell cell;
            cell.task_index = static_cast<int>(t);
            cell.expert_count = count;
            cell.trace = make_orthogonality_trace(std::move(raw));

            std::string csv = "step,score,smoothed\n";
            for (std::size_t i = 0; i < cell.trace.raw.size(); ++i) {
                const std::string row = std::to_string(i) + "," +
                                        fixed(cell.trace.raw[i], 6) + "," +
                                        fixed(cell.trace.smoothed[i], 6) + "\n";
                csv += row;
                combined += std::to_string(t) + "," + std::to_string(count) +
                            "," + row;
            }
            write_text(dir / (name + ".csv"), csv);

            const StepRecord& mid = trace.steps[trace.steps.size() / 2];
            heatmap_export(*mid.similarity,
                           (dir / (name + "_heatmap.svg")).string());

            series.push_back({name, cell.trace.smoothed});
            cells.push_back(std::move(cell));
        }
    }

    write_text(dir / "combined.csv", combined);
    line_plot_export(series, "orthogonality",
                     (dir / "orthogonality.svg").string());
    return cells;
}

std::vector<AblationRow> run_ablation(const ExperimentSpec& spec) {
    spec.validate();
    const int count = spec.expert_counts.front();
    const fs::path dir = fs::path(spec.out_dir) / "ablation";

    std::vector<AblationRow> rows;
    for (const AblationVariant variant : kVariants) {
        const fs::path vdir = dir / to_string(variant);
        fs::create_directories(vdir);
        const FusionConfig cfg = variant_config(spec, variant, count);

        AblationRow row;
        row.variant = variant;
        row.num_experts = cfg.num_experts;
        row.top_k = cfg.top_k;
        row.truncation = !std::isinf(cfg.threshold_multiplier);
        row.noise = cfg.base_noise_scale > 0.0;

        double distinct = 0.0, bigrams = 0.0, prob_var = 0.0, majority = 0.0,
               removed = 0.0;
        int traces = 0;
        for (std::size_t t = 0; t < spec.tasks.size(); ++t) {
            for (int r = 0; r < spec.runs; ++r) {
                GenerationTrace trace = run_generation(
                    spec, static_cast<int>(t), count, variant, r);
                const std::string name = cell_name(static_cast<int>(t),
                                                   cfg.num_experts) +
                                         "_run" + std::to_string(r) +
                                         ".trace.jsonl";
                save_trace(trace, (vdir / name).string());
                if (!trace.complete)
                    throw BackendError("ablation run " + name +
                                       " aborted: " + trace.error);
                distinct += trace_distinct_ratio(trace);
                bigrams += trace_repeated_bigram_rate(trace);
                prob_var += trace_fused_prob_variance(trace);
                majority += trace_majority_agreement(trace);
                removed += trace_mean_removed(trace);
                ++traces;
            }
        }
        row.runs = traces;
        row.distinct_token_ratio = distinct / traces;
        row.repeated_bigram_rate = bigrams / traces;
        row.fused_prob_variance = prob_var / traces;
        row.majority_agreement_rate = majority / traces;
        row.mean_removed_per_step = removed / traces;
        row.eval_accuracy =
            spec.eval_cases_path.empty()
                ? std::numeric_limits<double>::quiet_NaN()
                : 1.0 - run_eval(spec, variant).hallucination_rate;
        rows.push_back(row);
    }

    write_text(dir / "ablation.csv", ablation_csv(rows));
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string csv =
        "variant,num_experts,top_k,truncation,noise,runs,"
        "distinct_token_ratio,repeated_bigram_rate,fused_prob_variance,"
        "majority_agreement_rate,mean_removed_per_step,eval_accuracy\n";
    for (const AblationRow& row : rows) {
        csv += to_string(row.variant) + "," + std::to_string(row.num_experts) +
               "," + std::to_string(row.top_k) + "," +
               (row.truncation ? "on" : "off") + "," +
               (row.noise ? "on" : "off") + "," + std::to_string(row.runs) +
               "," + fixed(row.distinct_token_ratio, 6) + "," +
               fixed(row.repeated_bigram_rate, 6) + "," +
               fixed(row.fused_prob_variance, 6) + "," +
               fixed(row.majority_agreement_rate, 6) + ",";
        if (row.truncation)
            csv += fixed(row.mean_removed_per_step, 6);
        csv += ",";
        if (!std::isnan(row.eval_accuracy))
            csv += fixed(row.eval_accuracy, 6);
        csv += "\n";
    }
    return csv;
}

std::vector<EvalCase> load_eval_cases(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw FixtureError("cannot open eval fixture: " + path);
    std::vector<EvalCase> cases;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        const std::string where = path + ":" + std::to_string(line_no);
        const json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded() || !doc.is_object())
            throw FixtureError(where + ": expected a JSON object");
        if (!doc.contains("question") || !doc["question"].is_string())
            throw FixtureError(where + ": missing string question");
        if (!doc.contains("references") || !doc["references"].is_array() ||
            doc["references"].empty())
            throw FixtureError(where + ": references must be a non-empty array");
        EvalCase c;
        c.question = doc["question"].get<std::string>();
        for (const json& ref : doc["references"]) {
            if (!ref.is_string())
                throw FixtureError(where + ": references must be strings");
            c.references.push_back(ref.get<std::string>());
        }
        cases.push_back(std::move(c));
    }
    if (cases.empty())
        throw FixtureError(path + ": no eval cases");
    return cases;
}

std::string normalize_answer(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (const char raw : text) {
        const auto c = static_cast<unsigned char>(raw);
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out += ' ';
            pending_space = false;
        }
        out += static_cast<char>(std::tolower(c));
    }
    return out;
}

bool judge_match(const std::string& output,
                 const std::vector<std::string>& references) {
    const std::string norm_out = normalize_answer(output);
    for (const std::string& ref : references) {
        const std::string norm_ref = normalize_answer(ref);
        if (norm_ref.empty())
            continue;
        if (norm_out == norm_ref || norm_out.find(norm_ref) != std::string::npos)
            return true;
    }
    return false;
}

EvalResult run_eval(const ExperimentSpec& spec, AblationVariant variant) {
    spec.validate();
    if (spec.eval_cases_path.empty())
        throw ConfigError("run_eval requires an eval_cases path");
    std::vector<EvalCase> cases = load_eval_cases(spec.eval_cases_path);

    const int count =
        variant_expert_count(variant, spec.expert_counts.front());
    const FusionConfig fusion =
        variant_config(spec, variant, spec.expert_counts.front());
    const ExpertPool pool = pool_for(spec, count);

    int hallucinated = 0;
    double total_ms = 0.0;
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        EvalCase& c = cases[ci];
        BackendConfig cfg = spec.backend;
        cfg.mock_seed = rng::derive(spec.backend.mock_seed, kStreamCase,
                                    static_cast<std::uint64_t>(ci));
        if (cfg.mock_eval_error_prob >= 0.0)
            cfg.mock_eval_correct_token = detail::token_from_string(
                c.references.front(), cfg.vocab_size);
        const Backend backend(cfg);
        const GenerationContext context = seed_context(c.question);

        const auto begin = std::chrono::steady_clock::now();
        std::vector<ExpertPrediction> predictions =
            predict_all(pool, context, backend);
        const StepRecord record = fuse_step(std::move(predictions), fusion);
        const auto end = std::chrono::steady_clock::now();
        total_ms +=
            std::chrono::duration<double, std::milli>(end - begin).count();

        c.output = std::to_string(record.winner);
        const bool factual = judge_match(c.output, c.references);
        c.verdict = factual ? Verdict::factual : Verdict::hallucinated;
        if (!factual)
            ++hallucinated;
    }

    EvalResult result;
    result.hallucination_rate =
        static_cast<double>(hallucinated) / static_cast<double>(cases.size());
    result.mean_latency_ms = total_ms / static_cast<double>(cases.size());
    result.cases = std::move(cases);
    return result;
}

void emit_report(const std::string& run_dir) {
    const fs::path dir(run_dir);
    if (!fs::exists(dir) || !fs::is_directory(dir))
        throw IoError("report directory does not exist: " + run_dir);

    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file())
            continue;
        const std::string name = entry.path().filename().string();
        constexpr const char* kSuffix = ".trace.jsonl";
        if (name.size() > std::strlen(kSuffix) &&
            name.compare(name.size() - std::strlen(kSuffix),
                         std::strlen(kSuffix), kSuffix) == 0)
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) {
                  return a.generic_string() < b.generic_string();
              });

    json runs = json::array();
    json warnings = json::array();
    std::string csv =
        "file,prompt,num_experts,top_k,steps,distinct_token_ratio,"
        "repeated_bigram_rate,mean_orthogonality,mean_noise_sigma\n";
    std::vector<LineSeries> series;

    for (const fs::path& file : files) {
        const std::string rel = fs::relative(file, dir).generic_string();
        GenerationTrace trace;
        try {
            trace = load_trace(file.string());
        } catch (const IoError& e) {
            warnings.push_back({{"file", rel}, {"message", e.what()}});
            continue;
        }
        if (!trace.complete) {
            warnings.push_back(
                {{"file", rel},
                 {"message", "incomplete trace: " + trace.error}});
            continue;
        }

        bool has_orthogonality = false;
        const double mean_orthogonality =
            trace_mean_orthogonality(trace, has_orthogonality);
        double mean_sigma = 0.0;
        for (const StepRecord& s : trace.steps)
            mean_sigma += s.noise_sigma;
        mean_sigma =
            trace.steps.empty()
                ? 0.0
                : mean_sigma / static_cast<double>(trace.steps.size());

        json run = {
            {"file", rel},
            {"prompt", trace.prompt},
            {"num_experts", trace.config.num_experts},
            {"top_k", trace.config.top_k},
            {"steps", trace.steps.size()},
            {"distinct_token_ratio", trace_distinct_ratio(trace)},
            {"repeated_bigram_rate", trace_repeated_bigram_rate(trace)},
            {"mean_noise_sigma", mean_sigma},
        };
        run["mean_orthogonality"] =
            has_orthogonality ? json(mean_orthogonality) : json();
        runs.push_back(std::move(run));

        csv += rel + "," + csv_quote(trace.prompt) + "," +
               std::to_string(trace.config.num_experts) + "," +
               std::to_string(trace.config.top_k) + "," +
               std::to_string(trace.steps.size()) + "," +
               fixed(trace_distinct_ratio(trace), 6) + "," +
               fixed(trace_repeated_bigram_rate(trace), 6) + ",";
        if (has_orthogonality)
            csv += fixed(mean_orthogonality, 6);
        csv += "," + fixed(mean_sigma, 6) + "\n";

        if (has_orthogonality) {
            std::vector<double> raw;
            for (const StepRecord& s : trace.steps)
                if (s.similarity)
                    raw.push_back(s.similarity->orthogonality);
            series.push_back(
                {rel, make_orthogonality_trace(std::move(raw)).smoothed});
        }
    }

    const json report = {
        {"empty", runs.empty()},
        {"runs", std::move(runs)},
        {"warnings", std::move(warnings)},
    };
    write_text(dir / "report.json", report.dump(2) + "\n");
    write_text(dir / "report.csv", csv);
    if (!series.empty())
        line_plot_export(series, "orthogonality",
                         (dir / "report.svg").string());
}

} // namespace vmoe
