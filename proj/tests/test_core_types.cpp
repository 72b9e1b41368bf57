#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "vmoe/diversity.hpp"
#include "vmoe/fusion.hpp"
#include "vmoe/trace_io.hpp"
#include "vmoe/types.hpp"

#include "test_util.hpp"

using namespace vmoe;

namespace {

ExpertPrediction pred(int expert_id, TokenId token, double probability,
                      std::initializer_list<double> embedding) {
    ExpertPrediction p;
    p.expert_id = expert_id;
    p.token = token;
    p.probability = probability;
    p.embedding = EmbeddingVector(static_cast<Eigen::Index>(embedding.size()));
    Eigen::Index i = 0;
    for (double v : embedding)
        p.embedding[i++] = v;
    return p;
}

GenerationTrace sample_trace() {
    GenerationTrace trace;
    trace.config.num_experts = 3;
    trace.config.top_k = 2;
    trace.config.threshold_multiplier = 1.25;
    trace.config.base_noise_scale = 0.1;
    trace.config.noise_seed = 0xdeadbeefcafe1234ull;
    trace.config.empty_truncation_policy =
        EmptyTruncationPolicy::keep_max_probability;
    trace.prompt = "two words";

    for (int step = 0; step < 2; ++step) {
        StepRecord record;
        record.step = step;
        record.predictions = {
            pred(0, 4, 1.0 / 3.0, {0.25, -0.5}),
            pred(1, 4, 0.7, {1.0, 0.0}),
            pred(2, 9, 0.2 + 0.3 * step, {0.0, 1.0}),
        };
        record.selected = {1, 0};
        record.filtered = {1, 0};
        record.stats = compute_truncation_stats(
            {record.predictions[0], record.predictions[1]}, 1.25);
        record.winner = 4;
        record.noise_sigma = 0.004;
        SimilarityRecord sim;
        sim.step = step;
        sim.matrix = Eigen::MatrixXd::Identity(3, 3);
        sim.matrix(0, 1) = sim.matrix(1, 0) = 1.0 / 7.0;
        sim.mean_upper = mean_upper_triangle(sim.matrix);
        sim.orthogonality = 1.0 - sim.mean_upper;
        record.similarity = sim;
        trace.steps.push_back(record);
        trace.tokens.push_back(record.winner);
    }
    return trace;
}

} // namespace

TEST_CASE("fusion config validation") {
    FusionConfig config;
    config.num_experts = 4;
    config.top_k = 4;
    CHECK_NOTHROW(config.validate());

    config.top_k = 5;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config.top_k = 0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config.top_k = 2;

    config.num_experts = 0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config.num_experts = 4;

    config.threshold_multiplier = -1.0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config.threshold_multiplier = std::nan("");
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config.threshold_multiplier = kInfiniteMultiplier;
    CHECK_NOTHROW(config.validate());

    config.base_noise_scale = -0.1;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config.base_noise_scale = kInfiniteMultiplier;
    CHECK_THROWS_AS(config.validate(), ConfigError);
}

TEST_CASE("enum names round trip") {
    CHECK(to_string(EmptyTruncationPolicy::keep_all) == "keep_all");
    CHECK(truncation_policy_from_string("keep_max_probability") ==
          EmptyTruncationPolicy::keep_max_probability);
    CHECK(tie_break_from_string(to_string(TieBreakFinal::lowest_token_id)) ==
          TieBreakFinal::lowest_token_id);
    CHECK_THROWS_AS(truncation_policy_from_string("bogus"), ConfigError);
    CHECK_THROWS_AS(tie_break_from_string(""), ConfigError);
}

TEST_CASE("trace round trip is lossless") {
    const GenerationTrace trace = sample_trace();
    const std::string text = trace_to_jsonl(trace);
    const GenerationTrace back = trace_from_jsonl(text);
    CHECK(back == trace);
    // Serialization itself is deterministic.
    CHECK(trace_to_jsonl(back) == text);
}

TEST_CASE("trace round trip with non-finite threshold") {
    GenerationTrace trace = sample_trace();
    trace.config.threshold_multiplier = kInfiniteMultiplier;
    for (auto& record : trace.steps)
        record.stats.threshold = kInfiniteMultiplier;

    const std::string text = trace_to_jsonl(trace);
    CHECK(text.find("\"threshold_multiplier\":\"inf\"") != std::string::npos);
    CHECK(text.find("\"threshold\":\"inf\"") != std::string::npos);
    CHECK(trace_from_jsonl(text) == trace);
}

TEST_CASE("single expert trace carries no similarity") {
    GenerationTrace trace;
    trace.config.num_experts = 1;
    trace.config.top_k = 1;
    trace.prompt = "solo";
    StepRecord record;
    record.step = 0;
    record.predictions = {pred(0, 2, 0.5, {1.0})};
    record.selected = {0};
    record.filtered = {0};
    record.stats = compute_truncation_stats(record.predictions, 1.0);
    record.winner = 2;
    trace.steps.push_back(record);
    trace.tokens.push_back(2);

    const std::string text = trace_to_jsonl(trace);
    CHECK(text.find("\"similarity\":null") != std::string::npos);
    CHECK(text.find("\"orthogonality\":null") != std::string::npos);
    CHECK(trace_from_jsonl(text) == trace);
}

TEST_CASE("step lines expose the pinned field names") {
    const std::string text = trace_to_jsonl(sample_trace());
    const std::string step_line = text.substr(text.find('\n') + 1);
    for (const char* field :
         {"\"step\":", "\"expert_id\":", "\"token\":", "\"probability\":",
          "\"mean\":", "\"std\":", "\"threshold\":", "\"winner\":",
          "\"noise_sigma\":", "\"orthogonality\":"})
        CHECK_MESSAGE(step_line.find(field) != std::string::npos, field);
}

TEST_CASE("incomplete traces keep their error text") {
    GenerationTrace trace;
    trace.config.num_experts = 2;
    trace.config.top_k = 1;
    trace.prompt = "p";
    trace.complete = false;
    trace.error = "prediction failed: expert 1: HTTP 500";
    CHECK(trace_from_jsonl(trace_to_jsonl(trace)) == trace);
}

TEST_CASE("trace file save and load") {
    testutil::TempDir dir;
    const GenerationTrace trace = sample_trace();
    const std::string path = dir.file("run.trace.jsonl");
    save_trace(trace, path);
    CHECK(load_trace(path) == trace);

    CHECK_THROWS_AS(load_trace(dir.file("missing.trace.jsonl")), IoError);
    CHECK_THROWS_AS(save_trace(trace, dir.file("no/such/dir/x.jsonl")), IoError);
}

TEST_CASE("malformed trace text is rejected with context") {
    CHECK_THROWS_AS(trace_from_jsonl(""), IoError);
    CHECK_THROWS_AS(trace_from_jsonl("not json\n"), IoError);

    GenerationTrace trace = sample_trace();
    std::string text = trace_to_jsonl(trace);
    text += "{\"bad\":true}\n";
    CHECK_THROWS_AS(trace_from_jsonl(text), IoError);

    // Unknown enum value inside the header is a file problem, not a config one.
    std::string mangled = trace_to_jsonl(trace);
    const auto pos = mangled.find("keep_max_probability");
    REQUIRE(pos != std::string::npos);
    mangled.replace(pos, std::string("keep_max_probability").size(),
                    "keep_max_probabilitx");
    CHECK_THROWS_AS(trace_from_jsonl(mangled), IoError);
}
