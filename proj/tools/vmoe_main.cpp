#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vmoe/errors.hpp"
#include "vmoe/experiment.hpp"
#include "vmoe/oracle.hpp"
#include "vmoe/rng.hpp"
#include "vmoe/trace_io.hpp"

namespace {

namespace fs = std::filesystem;

struct Cli {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> backend;
    std::optional<std::string> out;
    std::optional<int> steps;
    std::vector<int> experts;
    std::string variant = "fusion_full";
    std::string cases;
};

vmoe::ExperimentSpec make_spec(const Cli& cli) {
    vmoe::ExperimentSpec spec;
    if (!cli.config.empty())
        spec = vmoe::load_experiment_spec(cli.config);
    if (cli.seed) {
        spec.backend.mock_seed = vmoe::rng::derive(*cli.seed, 0x6d6f636bull);
        spec.fusion.noise_seed = vmoe::rng::derive(*cli.seed, 0x6e6f6973ull);
    }
    if (cli.backend) {
        if (*cli.backend == "mock")
            spec.backend.kind = vmoe::BackendKind::mock;
        else if (*cli.backend == "http")
            spec.backend.kind = vmoe::BackendKind::http;
        else
            throw vmoe::ConfigError("unknown backend: " + *cli.backend);
    }
    if (cli.out)
        spec.out_dir = *cli.out;
    if (cli.steps)
        spec.steps = *cli.steps;
    if (!cli.experts.empty())
        spec.expert_counts = cli.experts;
    if (!cli.cases.empty())
        spec.eval_cases_path = cli.cases;
    spec.validate();
    return spec;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw vmoe::IoError("cannot open file for writing: " + path.string());
    out << content;
}

int run_generate(const Cli& cli) {
    const vmoe::ExperimentSpec spec = make_spec(cli);
    const auto variant = vmoe::variant_from_string(cli.variant);
    const fs::path dir = fs::path(spec.out_dir) / "generate";
    fs::create_directories(dir);
    for (std::size_t t = 0; t < spec.tasks.size(); ++t) {
        for (const int count : spec.expert_counts) {
            const vmoe::GenerationTrace trace = vmoe::run_generation(
                spec, static_cast<int>(t), count, variant);
            const fs::path path =
                dir / ("task" + std::to_string(t) + "_n" +
                       std::to_string(count) + ".trace.jsonl");
            vmoe::save_trace(trace, path.string());
            if (!trace.complete)
                throw vmoe::BackendError("generation aborted (partial trace at " +
                                         path.string() + "): " + trace.error);
            std::cout << path.string() << ": " << trace.tokens.size()
                      << " tokens\n";
        }
    }
    return 0;
}

int run_orthogonality_cmd(const Cli& cli) {
    const vmoe::ExperimentSpec spec = make_spec(cli);
    const auto cells = vmoe::run_orthogonality_experiment(spec);
    std::cout << spec.out_dir << "/orthogonality: " << cells.size()
              << " configurations\n";
    return 0;
}

int run_ablation_cmd(const Cli& cli) {
    const vmoe::ExperimentSpec spec = make_spec(cli);
    const auto rows = vmoe::run_ablation(spec);
    std::cout << vmoe::ablation_csv(rows);
    return 0;
}

int run_eval_cmd(const Cli& cli) {
    const vmoe::ExperimentSpec spec = make_spec(cli);
    if (spec.eval_cases_path.empty())
        throw vmoe::ConfigError("eval requires --cases or eval_cases in the spec");
    const auto variant = vmoe::variant_from_string(cli.variant);
    const vmoe::EvalResult result = vmoe::run_eval(spec, variant);

    const fs::path dir = fs::path(spec.out_dir) / "eval";
    fs::create_directories(dir);
    std::string body = "{\n  \"variant\": \"" + cli.variant + "\",\n";
    char buf[128];
    std::snprintf(buf, sizeof(buf),
                  "  \"hallucination_rate\": %.6f,\n  \"mean_latency_ms\": %.3f,\n",
                  result.hallucination_rate, result.mean_latency_ms);
    body += buf;
    body += "  \"cases\": " + std::to_string(result.cases.size()) + "\n}\n";
    write_file(dir / "eval.json", body);

    std::cout << "hallucination_rate=" << result.hallucination_rate
              << " mean_latency_ms=" << result.mean_latency_ms << " over "
              << result.cases.size() << " cases\n";
    return 0;
}

int run_report_cmd(const Cli& cli) {
    const std::string dir = cli.out ? *cli.out : "out";
    vmoe::emit_report(dir);
    std::cout << dir << "/report.json\n";
    return 0;
}

int run_oracle_cmd(const Cli& cli) {
    const std::uint64_t seed = cli.seed ? *cli.seed : 0;
    const auto reports = vmoe::oracle::run_oracle_suite(seed);
    const std::string body = vmoe::oracle::reports_to_json(reports) + "\n";
    if (cli.out) {
        const fs::path dir = fs::path(*cli.out) / "oracle";
        fs::create_directories(dir);
        write_file(dir / "oracle.json", body);
    }
    std::cout << body;
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Virtual mixture-of-experts fusion harness"};
    app.require_subcommand(1);

    Cli cli;
    app.add_option("--config", cli.config, "Experiment spec JSON");
    app.add_option("--seed", cli.seed, "Master seed for mock and noise streams");
    app.add_option("--backend", cli.backend, "Backend kind: mock or http");
    app.add_option("--out", cli.out, "Output directory");
    app.add_option("--steps", cli.steps, "Generation steps per run");
    app.add_option("--experts", cli.experts, "Expert counts, comma separated")
        ->delimiter(',');
    app.add_option("--variant", cli.variant,
                   "Ablation variant: baseline, fusion_full, "
                   "fusion_no_truncation, fusion_no_noise");
    app.add_option("--cases", cli.cases, "Eval fixture JSONL");

    CLI::App* generate = app.add_subcommand("generate", "Run generation traces");
    CLI::App* orthogonality = app.add_subcommand(
        "orthogonality", "Expert-count orthogonality sweep");
    CLI::App* ablation =
        app.add_subcommand("ablation", "Four-variant ablation sweep");
    CLI::App* eval_cmd =
        app.add_subcommand("eval", "Fixture-scale factuality evaluation");
    CLI::App* report =
        app.add_subcommand("report", "Consolidate traces under --out");
    CLI::App* oracle_cmd =
        app.add_subcommand("oracle", "Run the statistical oracle suite");
    for (CLI::App* sub :
         {generate, orthogonality, ablation, eval_cmd, report, oracle_cmd})
        sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (generate->parsed())
            return run_generate(cli);
        if (orthogonality->parsed())
            return run_orthogonality_cmd(cli);
        if (ablation->parsed())
            return run_ablation_cmd(cli);
        if (eval_cmd->parsed())
            return run_eval_cmd(cli);
        if (report->parsed())
            return run_report_cmd(cli);
        if (oracle_cmd->parsed())
            return run_oracle_cmd(cli);
    } catch (const vmoe::BackendError& e) {
        std::cerr << "backend error: " << e.what() << "\n";
        return 2;
    } catch (const vmoe::FixtureError& e) {
        std::cerr << "fixture error: " << e.what() << "\n";
        return 3;
    } catch (const vmoe::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
