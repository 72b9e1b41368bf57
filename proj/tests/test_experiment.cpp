#include <doctest.h>

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vmoe/experiment.hpp"
#include "vmoe/trace_io.hpp"

#include "test_util.hpp"

using namespace vmoe;

namespace {

ExperimentSpec tiny_spec(const testutil::TempDir& dir) {
    ExperimentSpec spec;
    spec.tasks = {"alpha task"};
    spec.expert_counts = {4};
    spec.steps = 6;
    spec.runs = 1;
    spec.out_dir = dir.file("out");
    spec.consensus_by_count.clear();
    spec.backend.mock_consensus = 0.6;
    spec.backend.mock_seed = 11;
    return spec;
}

double distinct_ratio(const GenerationTrace& trace) {
    const std::set<TokenId> distinct(trace.tokens.begin(), trace.tokens.end());
    return static_cast<double>(distinct.size()) /
           static_cast<double>(trace.tokens.size());
}

double majority_agreement(const GenerationTrace& trace) {
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
    return static_cast<double>(agree) /
           static_cast<double>(trace.steps.size());
}

double removal_rate(const GenerationTrace& trace) {
    int removed_steps = 0;
    for (const StepRecord& s : trace.steps)
        if (s.filtered.size() < s.selected.size())
            ++removed_steps;
    return static_cast<double>(removed_steps) /
           static_cast<double>(trace.steps.size());
}

} // namespace

TEST_CASE("experiment spec defaults are valid and fusion-enabled") {
    ExperimentSpec spec;
    CHECK_NOTHROW(spec.validate());
    CHECK(spec.fusion.top_k == 0);
    CHECK(spec.fusion.base_noise_scale > 0.0);

    spec.tasks.clear();
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = ExperimentSpec{};
    spec.expert_counts = {0};
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = ExperimentSpec{};
    spec.steps = 0;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
    spec = ExperimentSpec{};
    spec.consensus_by_count[5] = 1.5;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("variant names round trip") {
    for (const char* name :
         {"baseline", "fusion_full", "fusion_no_truncation", "fusion_no_noise"})
        CHECK(to_string(variant_from_string(name)) == name);
    CHECK_THROWS_AS(variant_from_string("bogus"), ConfigError);
}

TEST_CASE("variant_config derives the per-run fusion settings") {
    ExperimentSpec spec;
    spec.fusion.threshold_multiplier = 1.0;
    spec.fusion.base_noise_scale = 0.1;

    SUBCASE("baseline pins a single expert") {
        const auto cfg = variant_config(spec, AblationVariant::baseline, 9);
        CHECK(cfg.num_experts == 1);
        CHECK(cfg.top_k == 1);
        CHECK(std::isinf(cfg.threshold_multiplier));
        CHECK(cfg.base_noise_scale == 0.0);
        CHECK(variant_expert_count(AblationVariant::baseline, 9) == 1);
    }
    SUBCASE("fusion_full keeps the spec settings, top_k 0 means all") {
        const auto cfg = variant_config(spec, AblationVariant::fusion_full, 9);
        CHECK(cfg.num_experts == 9);
        CHECK(cfg.top_k == 9);
        CHECK(cfg.threshold_multiplier == 1.0);
        CHECK(cfg.base_noise_scale == 0.1);
    }
    SUBCASE("explicit top_k is clamped to the pool size") {
        spec.fusion.top_k = 5;
        CHECK(variant_config(spec, AblationVariant::fusion_full, 3).top_k == 3);
        CHECK(variant_config(spec, AblationVariant::fusion_full, 8).top_k == 5);
    }
    SUBCASE("ablation arms switch off one mechanism each") {
        const auto no_trunc =
            variant_config(spec, AblationVariant::fusion_no_truncation, 4);
        CHECK(std::isinf(no_trunc.threshold_multiplier));
        CHECK(no_trunc.base_noise_scale == 0.1);

        const auto no_noise =
            variant_config(spec, AblationVariant::fusion_no_noise, 4);
        CHECK(no_noise.base_noise_scale == 0.0);
        CHECK(no_noise.threshold_multiplier == 1.0);
    }
    CHECK_THROWS_AS(variant_config(spec, AblationVariant::fusion_full, 0),
                    ConfigError);
}

TEST_CASE("pool_for synthesizes or loads expert prompts") {
    ExperimentSpec spec;

    auto pool = pool_for(spec, 3);
    REQUIRE(pool.size() == 3);
    CHECK(pool.experts[2].expert_id == 2);
    CHECK(pool.experts[0].prompt_text != pool.experts[1].prompt_text);

    testutil::TempDir dir;
    const std::string path = dir.file("prompts.jsonl");
    testutil::write_file(path,
                         "{\"expert_id\": 0, \"prompt\": \"p0\"}\n"
                         "{\"expert_id\": 1, \"prompt\": \"p1\"}\n"
                         "{\"expert_id\": 2, \"prompt\": \"p2\"}\n");
    spec.prompts_path = path;
    auto loaded = pool_for(spec, 2);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded.experts[1].prompt_text == "p1");
    CHECK_THROWS_AS(pool_for(spec, 5), ConfigError);
}

TEST_CASE("experiment spec loads from JSON with sparse overrides") {
    testutil::TempDir dir;
    const std::string path = dir.file("spec.json");
    testutil::write_file(path, R"({
        "name": "demo",
        "tasks": ["one", "two"],
        "expert_counts": [8, 2],
        "steps": 4,
        "runs": 3,
        "out_dir": "results",
        "fusion": {
            "top_k": 2,
            "threshold_multiplier": "inf",
            "base_noise_scale": 0.25,
            "noise_seed": 9,
            "empty_truncation_policy": "keep_max_probability"
        },
        "backend": {
            "kind": "http",
            "base_url": "http://127.0.0.1:9999",
            "model_name": "m",
            "mock_seed": 5,
            "vocab_size": 32
        },
        "consensus_by_count": {"8": 0.9, "2": 0.2}
    })");

    const ExperimentSpec spec = load_experiment_spec(path);
    CHECK(spec.name == "demo");
    CHECK(spec.tasks.size() == 2);
    CHECK(spec.expert_counts == std::vector<int>{8, 2});
    CHECK(spec.steps == 4);
    CHECK(spec.runs == 3);
    CHECK(spec.out_dir == "results");
    CHECK(spec.fusion.top_k == 2);
    CHECK(std::isinf(spec.fusion.threshold_multiplier));
    CHECK(spec.fusion.base_noise_scale == 0.25);
    CHECK(spec.fusion.noise_seed == 9);
    CHECK(spec.fusion.empty_truncation_policy ==
          EmptyTruncationPolicy::keep_max_probability);
    CHECK(spec.backend.kind == BackendKind::http);
    CHECK(spec.backend.base_url == "http://127.0.0.1:9999");
    CHECK(spec.backend.vocab_size == 32);
    CHECK(spec.consensus_by_count.at(8) == 0.9);
    CHECK(spec.consensus_by_count.at(2) == 0.2);
    // Fields absent from the file keep their defaults.
    CHECK(spec.backend.max_retries == 2);
}

TEST_CASE("experiment spec loader rejects malformed input") {
    testutil::TempDir dir;
    const std::string path = dir.file("spec.json");

    CHECK_THROWS_AS(load_experiment_spec(dir.file("absent.json")), ConfigError);

    testutil::write_file(path, "[1, 2]");
    CHECK_THROWS_AS(load_experiment_spec(path), ConfigError);

    testutil::write_file(path, R"({"backend": {"kind": "grpc"}})");
    CHECK_THROWS_AS(load_experiment_spec(path), ConfigError);

    testutil::write_file(path, R"({"consensus_by_count": {"many": 0.5}})");
    CHECK_THROWS_AS(load_experiment_spec(path), ConfigError);

    testutil::write_file(path, R"({"steps": 0})");
    CHECK_THROWS_AS(load_experiment_spec(path), ConfigError);

    testutil::write_file(path, R"({"fusion": {"threshold_multiplier": "-inf"}})");
    CHECK_THROWS_AS(load_experiment_spec(path), ConfigError);
}

TEST_CASE("run_generation is deterministic and well formed") {
    testutil::TempDir dir;
    const ExperimentSpec spec = tiny_spec(dir);

    const GenerationTrace a = run_generation(spec, 0, 4);
    const GenerationTrace b = run_generation(spec, 0, 4);
    CHECK(trace_to_jsonl(a) == trace_to_jsonl(b));

    REQUIRE(a.complete);
    REQUIRE(a.steps.size() == 6);
    CHECK(a.tokens.size() == 6);
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        const StepRecord& s = a.steps[i];
        CHECK(s.step == static_cast<int>(i));
        CHECK(s.predictions.size() == 4);
        CHECK(s.selected.size() == 4);
        CHECK(a.tokens[i] == s.winner);
        REQUIRE(s.similarity.has_value());
        CHECK(s.similarity->matrix.rows() == 4);
    }

    // A different run index yields a different stream.
    const GenerationTrace c = run_generation(
        spec, 0, 4, AblationVariant::fusion_full, 1);
    CHECK(trace_to_jsonl(c) != trace_to_jsonl(a));
}

TEST_CASE("single-expert runs carry the expert's own tokens") {
    testutil::TempDir dir;
    ExperimentSpec spec = tiny_spec(dir);

    const GenerationTrace trace =
        run_generation(spec, 0, 4, AblationVariant::baseline);
    REQUIRE(trace.complete);
    CHECK(trace.config.num_experts == 1);
    for (const StepRecord& s : trace.steps) {
        REQUIRE(s.predictions.size() == 1);
        CHECK(s.winner == s.predictions[0].token);
        CHECK_FALSE(s.similarity.has_value());
        CHECK(s.noise_sigma == 0.0);
    }
}

TEST_CASE("disabling noise equals a zero noise scale, byte for byte") {
    testutil::TempDir dir;
    ExperimentSpec spec = tiny_spec(dir);
    spec.fusion.base_noise_scale = 0.3;

    const GenerationTrace no_noise =
        run_generation(spec, 0, 4, AblationVariant::fusion_no_noise);

    ExperimentSpec zeroed = spec;
    zeroed.fusion.base_noise_scale = 0.0;
    const GenerationTrace full_zero =
        run_generation(zeroed, 0, 4, AblationVariant::fusion_full);

    CHECK(trace_to_jsonl(no_noise) == trace_to_jsonl(full_zero));
}

TEST_CASE("full consensus drives orthogonality to zero") {
    testutil::TempDir dir;
    ExperimentSpec spec = tiny_spec(dir);
    spec.backend.mock_consensus = 1.0;
    spec.fusion.base_noise_scale = 0.0;

    const GenerationTrace trace = run_generation(spec, 0, 4);
    REQUIRE(trace.complete);
    for (const StepRecord& s : trace.steps) {
        for (const ExpertPrediction& p : s.predictions)
            CHECK(p.token == s.winner);
        REQUIRE(s.similarity.has_value());
        CHECK(s.similarity->orthogonality ==
              doctest::Approx(0.0).epsilon(1e-9));
    }
}

TEST_CASE("a dead backend yields an incomplete trace, not an exception") {
    testutil::TempDir dir;
    ExperimentSpec spec = tiny_spec(dir);
    spec.backend.kind = BackendKind::http;
    spec.backend.base_url = "http://127.0.0.1:1";
    spec.backend.max_retries = 0;
    spec.backend.request_timeout_ms = 500;

    const GenerationTrace trace = run_generation(spec, 0, 2);
    CHECK_FALSE(trace.complete);
    CHECK(trace.steps.empty());
    CHECK(trace.tokens.empty());
    CHECK(trace.error.find("expert") != std::string::npos);
}

TEST_CASE("noise injection breaks the repetition loop") {
    testutil::TempDir dir;
    ExperimentSpec spec = tiny_spec(dir);
    spec.expert_counts = {8};
    spec.steps = 40;
    spec.backend.mock_consensus = 0.9;
    spec.fusion.base_noise_scale = 0.5;

    double with_noise = 0.0;
    double without_noise = 0.0;
    const int runs = 20;
    for (int r = 0; r < runs; ++r) {
        with_noise += distinct_ratio(
            run_generation(spec, 0, 8, AblationVariant::fusion_full, r));
        without_noise += distinct_ratio(
            run_generation(spec, 0, 8, AblationVariant::fusion_no_noise, r));
    }
    with_noise /= runs;
    without_noise /= runs;

    // Without noise the winner chain is a deterministic walk on the
    // vocabulary and quickly enters a cycle; noise re-keys every step.
    CHECK(without_noise < 0.45);
    CHECK(with_noise > 0.6);
    CHECK(with_noise > without_noise + 0.2);
}

TEST_CASE("truncation strips an overconfident dissenter") {
    testutil::TempDir dir;
    ExperimentSpec spec = tiny_spec(dir);
    spec.expert_counts = {7};
    spec.steps = 100;
    spec.fusion.top_k = 3;
    spec.fusion.base_noise_scale = 0.1;
    spec.backend.mock_consensus = 0.5;
    spec.backend.mock_dissenter_id = 6;

    double full = 0.0;
    double no_trunc = 0.0;
    double full_removal = 0.0;
    const int runs = 3;
    for (int r = 0; r < runs; ++r) {
        const GenerationTrace a =
            run_generation(spec, 0, 7, AblationVariant::fusion_full, r);
        const GenerationTrace b =
            run_generation(spec, 0, 7, AblationVariant::fusion_no_truncation, r);
        REQUIRE(a.complete);
        REQUIRE(b.complete);
        full += majority_agreement(a);
        no_trunc += majority_agreement(b);
        full_removal += removal_rate(a);
        for (const StepRecord& s : b.steps)
            CHECK(s.filtered.size() == s.selected.size());
    }
    full /= runs;
    no_trunc /= runs;
    full_removal /= runs;

    // The dissenter's 0.97 sits above mean + std of the top-3 subset on most
    // steps, so truncation removes it and the vote follows the majority.
    CHECK(full_removal > 0.5);
    CHECK(full > no_trunc + 0.1);
}

TEST_CASE("orthogonality experiment writes the full bundle") {
    testutil::TempDir dir;
    ExperimentSpec spec = tiny_spec(dir);
    spec.tasks = {"alpha task", "beta task"};
    spec.expert_counts = {3, 4};

    const auto cells = run_orthogonality_experiment(spec);
    REQUIRE(cells.size() == 4);
    CHECK(cells[0].task_index == 0);
    CHECK(cells[0].expert_count == 3);
    CHECK(cells[3].task_index == 1);
    CHECK(cells[3].expert_count == 4);
    for (const auto& cell : cells) {
        CHECK(cell.trace.raw.size() == 6);
        CHECK(cell.trace.smoothed.size() == 6);
        CHECK(cell.trace.window == 10);
    }

    const std::string base = spec.out_dir + "/orthogonality/";
    const std::string cell_csv = testutil::read_file(base + "task0_n3.csv");
    CHECK(cell_csv.rfind("step,score,smoothed\n", 0) == 0);

    const std::string combined = testutil::read_file(base + "combined.csv");
    CHECK(combined.rfind("task,expert_count,step,score,smoothed\n", 0) == 0);
    // One row per (task, count, step) plus the header.
    CHECK(std::count(combined.begin(), combined.end(), '\n') == 1 + 4 * 6);

    CHECK(load_trace(base + "task1_n4.trace.jsonl").complete);
    CHECK(testutil::read_file(base + "task0_n4_heatmap.svg").find("<svg") == 0);
    CHECK(testutil::read_file(base + "orthogonality.svg").find("polyline") !=
          std::string::npos);

    ExperimentSpec bad = spec;
    bad.expert_counts = {1};
    CHECK_THROWS_AS(run_orthogonality_experiment(bad), ConfigError);
}

TEST_CASE("ablation emits one row per variant with stable bytes") {
    testutil::TempDir dir;
    ExperimentSpec spec = tiny_spec(dir);
    spec.expert_counts = {5};
    spec.steps = 8;
    spec.runs = 2;

    const auto rows = run_ablation(spec);
    REQUIRE(rows.size() == 4);

    CHECK(rows[0].variant == AblationVariant::baseline);
    CHECK(rows[0].num_experts == 1);
    CHECK(rows[0].top_k == 1);
    CHECK_FALSE(rows[0].truncation);
    CHECK_FALSE(rows[0].noise);
    CHECK(rows[0].runs == 2);
    CHECK(std::isnan(rows[0].eval_accuracy));

    CHECK(rows[1].variant == AblationVariant::fusion_full);
    CHECK(rows[1].num_experts == 5);
    CHECK(rows[1].top_k == 5);
    CHECK(rows[1].truncation);
    CHECK(rows[1].noise);

    CHECK_FALSE(rows[2].truncation);
    CHECK(rows[2].noise);
    CHECK(rows[3].truncation);
    CHECK_FALSE(rows[3].noise);

    const std::string csv =
        testutil::read_file(spec.out_dir + "/ablation/ablation.csv");
    CHECK(csv.rfind("variant,num_experts,top_k,truncation,noise,runs,"
                    "distinct_token_ratio,repeated_bigram_rate,"
                    "fused_prob_variance,majority_agreement_rate,"
                    "mean_removed_per_step,eval_accuracy\n",
                    0) == 0);
    CHECK(csv.find("baseline,1,1,off,off,2,") != std::string::npos);
    // Without truncation or an eval fixture the trailing cells stay empty.
    CHECK(csv.find("fusion_no_truncation,5,5,off,on,2,") != std::string::npos);
    for (const std::string& line : {std::string("baseline"),
                                    std::string("fusion_no_truncation")}) {
        const auto pos = csv.find(line);
        const auto eol = csv.find('\n', pos);
        const std::string row = csv.substr(pos, eol - pos);
        CHECK(row.substr(row.size() - 2) == ",,");
    }

    CHECK(load_trace(spec.out_dir +
                     "/ablation/fusion_full/task0_n5_run1.trace.jsonl")
              .complete);

    // A second pass over the same spec reproduces the bytes exactly.
    ExperimentSpec again = spec;
    again.out_dir = dir.file("out2");
    run_ablation(again);
    CHECK(testutil::read_file(again.out_dir + "/ablation/ablation.csv") == csv);
}

TEST_CASE("eval fixtures load and validate") {
    testutil::TempDir dir;
    const std::string path = dir.file("cases.jsonl");
    testutil::write_file(
        path,
        "{\"question\": \"q1\", \"references\": [\"1\"]}\n"
        "\n"
        "{\"question\": \"q2\", \"references\": [\"2\", \"two\"]}\n");
    const auto cases = load_eval_cases(path);
    REQUIRE(cases.size() == 2);
    CHECK(cases[0].question == "q1");
    CHECK(cases[1].references.size() == 2);
    CHECK(cases[0].verdict == Verdict::unjudged);

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_eval_cases(dir.file("absent.jsonl")),
                        FixtureError);
    }
    SUBCASE("malformed line is named") {
        testutil::write_file(path,
                             "{\"question\": \"q\", \"references\": [\"1\"]}\n"
                             "{\"question\": \"q\"}\n");
        try {
            load_eval_cases(path);
            FAIL("expected FixtureError");
        } catch (const FixtureError& e) {
            CHECK(std::string(e.what()).find(":2") != std::string::npos);
        }
    }
    SUBCASE("empty references") {
        testutil::write_file(path,
                             "{\"question\": \"q\", \"references\": []}\n");
        CHECK_THROWS_AS(load_eval_cases(path), FixtureError);
    }
    SUBCASE("non-string reference") {
        testutil::write_file(path,
                             "{\"question\": \"q\", \"references\": [3]}\n");
        CHECK_THROWS_AS(load_eval_cases(path), FixtureError);
    }
    SUBCASE("empty file") {
        testutil::write_file(path, "\n\n");
        CHECK_THROWS_AS(load_eval_cases(path), FixtureError);
    }
}

TEST_CASE("answer normalization and matching") {
    CHECK(normalize_answer("  Hello   WORLD ") == "hello world");
    CHECK(normalize_answer("a\tb\nc") == "a b c");
    CHECK(normalize_answer("") == "");

    CHECK(judge_match("the answer is 42", {"42"}));
    CHECK(judge_match("Paris", {"london", "PARIS"}));
    CHECK_FALSE(judge_match("4", {"42"}));
    CHECK_FALSE(judge_match("", {"42"}));
    CHECK_FALSE(judge_match("something", {""}));
    // Matching is insensitive to the output's own spacing and case.
    CHECK(judge_match(" THE  Answer ", {"the answer"}));
}

TEST_CASE("eval pipeline scores the mock backend") {
    testutil::TempDir dir;
    ExperimentSpec spec = tiny_spec(dir);
    spec.expert_counts = {3};
    const std::string path = dir.file("cases.jsonl");
    testutil::write_file(
        path,
        "{\"question\": \"qa\", \"references\": [\"1\"]}\n"
        "{\"question\": \"qb\", \"references\": [\"7\"]}\n"
        "{\"question\": \"qc\", \"references\": [\"12\"]}\n");
    spec.eval_cases_path = path;

    SUBCASE("a perfect backend never hallucinates") {
        spec.backend.mock_eval_error_prob = 0.0;
        const auto result = run_eval(spec, AblationVariant::fusion_full);
        CHECK(result.hallucination_rate == 0.0);
        REQUIRE(result.cases.size() == 3);
        CHECK(result.cases[0].output == "1");
        CHECK(result.cases[1].output == "7");
        CHECK(result.cases[2].output == "12");
        for (const auto& c : result.cases)
            CHECK(c.verdict == Verdict::factual);
        CHECK(result.mean_latency_ms >= 0.0);
    }
    SUBCASE("an always-wrong backend always hallucinates") {
        spec.backend.mock_eval_error_prob = 1.0;
        const auto result = run_eval(spec, AblationVariant::fusion_full);
        CHECK(result.hallucination_rate == 1.0);
        for (const auto& c : result.cases)
            CHECK(c.verdict == Verdict::hallucinated);
    }
    SUBCASE("the eval path requires a fixture") {
        spec.eval_cases_path.clear();
        CHECK_THROWS_AS(run_eval(spec, AblationVariant::fusion_full),
                        ConfigError);
    }
}

TEST_CASE("report consolidates traces and flags problems") {
    testutil::TempDir dir;
    const std::string run_dir = dir.file("runs");
    std::filesystem::create_directories(run_dir);

    SUBCASE("an empty directory produces an empty report") {
        emit_report(run_dir);
        const auto doc = nlohmann::json::parse(
            testutil::read_file(run_dir + "/report.json"));
        CHECK(doc["empty"] == true);
        CHECK(doc["runs"].empty());
        CHECK(doc["warnings"].empty());
        CHECK_FALSE(std::filesystem::exists(run_dir + "/report.svg"));
        const std::string csv = testutil::read_file(run_dir + "/report.csv");
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 1);
    }

    SUBCASE("complete, incomplete and unreadable traces") {
        ExperimentSpec spec = tiny_spec(dir);
        const GenerationTrace good = run_generation(spec, 0, 4);
        save_trace(good, run_dir + "/good.trace.jsonl");

        GenerationTrace bad = good;
        bad.complete = false;
        bad.error = "prediction failed: expert 0: transport error";
        save_trace(bad, run_dir + "/bad.trace.jsonl");

        testutil::write_file(run_dir + "/mangled.trace.jsonl", "not json\n");
        testutil::write_file(run_dir + "/ignored.txt", "not a trace");

        emit_report(run_dir);
        const auto doc = nlohmann::json::parse(
            testutil::read_file(run_dir + "/report.json"));
        CHECK(doc["empty"] == false);
        REQUIRE(doc["runs"].size() == 1);
        CHECK(doc["runs"][0]["file"] == "good.trace.jsonl");
        CHECK(doc["runs"][0]["steps"] == 6);
        CHECK(doc["runs"][0]["mean_orthogonality"].is_number());
        REQUIRE(doc["warnings"].size() == 2);

        const std::string csv = testutil::read_file(run_dir + "/report.csv");
        CHECK(csv.rfind("file,prompt,num_experts,top_k,steps,"
                        "distinct_token_ratio,repeated_bigram_rate,"
                        "mean_orthogonality,mean_noise_sigma\n",
                        0) == 0);
        CHECK(csv.find("good.trace.jsonl,alpha task,4,4,6,") !=
              std::string::npos);
        CHECK(std::filesystem::exists(run_dir + "/report.svg"));

        // Emission is idempotent: report files are not inputs.
        const std::string first_json =
            testutil::read_file(run_dir + "/report.json");
        emit_report(run_dir);
        CHECK(testutil::read_file(run_dir + "/report.json") == first_json);
    }

    SUBCASE("prompts with commas are quoted in the CSV") {
        ExperimentSpec spec = tiny_spec(dir);
        spec.tasks = {"a, \"quoted\" task"};
        save_trace(run_generation(spec, 0, 4), run_dir + "/q.trace.jsonl");
        emit_report(run_dir);
        const std::string csv = testutil::read_file(run_dir + "/report.csv");
        CHECK(csv.find("\"a, \"\"quoted\"\" task\"") != std::string::npos);
    }

    CHECK_THROWS_AS(emit_report(dir.file("missing")), IoError);
}
