#include "vmoe/trace_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "vmoe/errors.hpp"

namespace vmoe {

namespace {

using nlohmann::json;

json real_to_json(double v) {
    if (std::isfinite(v))
        return v;
    if (std::isnan(v))
        return "nan";
    return v > 0.0 ? "inf" : "-inf";
}

double real_from_json(const json& j, const std::string& where) {
    if (j.is_number())
        return j.get<double>();
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "inf")
            return std::numeric_limits<double>::infinity();
        if (s == "-inf")
            return -std::numeric_limits<double>::infinity();
        if (s == "nan")
            return std::numeric_limits<double>::quiet_NaN();
    }
    throw IoError(where + ": expected a number or inf/nan string");
}

const json& need(const json& obj, const char* key, const std::string& where) {
    const auto it = obj.find(key);
    if (it == obj.end())
        throw IoError(where + ": missing field '" + key + "'");
    return *it;
}

json step_to_json(const StepRecord& s) {
    json preds = json::array();
    for (const ExpertPrediction& p : s.predictions) {
        json components = json::array();
        for (Eigen::Index j = 0; j < p.embedding.size(); ++j)
            components.push_back(p.embedding[j]);
        preds.push_back({{"expert_id", p.expert_id},
                         {"token", p.token},
                         {"probability", p.probability},
                         {"embedding", std::move(components)}});
    }
    json out = {
        {"step", s.step},
        {"predictions", std::move(preds)},
        {"selected", s.selected},
        {"filtered", s.filtered},
        {"mean", s.stats.mean},
        {"std", s.stats.std},
        {"threshold", real_to_json(s.stats.threshold)},
        {"winner", s.winner},
        {"noise_sigma", s.noise_sigma},
    };
    if (s.similarity) {
        json rows = json::array();
        for (Eigen::Index r = 0; r < s.similarity->matrix.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < s.similarity->matrix.cols(); ++c)
                row.push_back(s.similarity->matrix(r, c));
            rows.push_back(std::move(row));
        }
        out["similarity"] = std::move(rows);
        out["mean_upper"] = s.similarity->mean_upper;
        out["orthogonality"] = s.similarity->orthogonality;
    } else {
        out["similarity"] = nullptr;
        out["mean_upper"] = nullptr;
        out["orthogonality"] = nullptr;
    }
    return out;
}

StepRecord step_from_json(const json& obj, const std::string& where) {
    if (!obj.is_object())
        throw IoError(where + ": step line is not a JSON object");
    StepRecord s;
    s.step = need(obj, "step", where).get<int>();
    const json& preds = need(obj, "predictions", where);
    if (!preds.is_array() || preds.empty())
        throw IoError(where + ": predictions must be a non-empty array");
    for (const json& p : preds) {
        ExpertPrediction pred;
        pred.expert_id = need(p, "expert_id", where).get<int>();
        pred.token = need(p, "token", where).get<TokenId>();
        pred.probability = need(p, "probability", where).get<double>();
        const json& components = need(p, "embedding", where);
        if (!components.is_array())
            throw IoError(where + ": embedding must be an array");
        pred.embedding.resize(static_cast<Eigen::Index>(components.size()));
        Eigen::Index j = 0;
        for (const json& c : components)
            pred.embedding[j++] = c.get<double>();
        s.predictions.push_back(std::move(pred));
    }
    s.selected = need(obj, "selected", where).get<std::vector<int>>();
    s.filtered = need(obj, "filtered", where).get<std::vector<int>>();
    s.stats.mean = need(obj, "mean", where).get<double>();
    s.stats.std = need(obj, "std", where).get<double>();
    s.stats.threshold =
        real_from_json(need(obj, "threshold", where), where + ".threshold");
    s.winner = need(obj, "winner", where).get<TokenId>();
    s.noise_sigma = need(obj, "noise_sigma", where).get<double>();

    const json& sim = need(obj, "similarity", where);
    if (!sim.is_null()) {
        if (!sim.is_array() || sim.empty())
            throw IoError(where + ": similarity must be null or a matrix");
        SimilarityRecord record;
        const auto n = static_cast<Eigen::Index>(sim.size());
        record.matrix.resize(n, n);
        for (Eigen::Index r = 0; r < n; ++r) {
            const json& row = sim[static_cast<std::size_t>(r)];
            if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n)
                throw IoError(where + ": similarity matrix is not square");
            for (Eigen::Index c = 0; c < n; ++c)
                record.matrix(r, c) = row[static_cast<std::size_t>(c)].get<double>();
        }
        record.mean_upper = need(obj, "mean_upper", where).get<double>();
        record.orthogonality = need(obj, "orthogonality", where).get<double>();
        record.step = s.step;
        s.similarity = std::move(record);
    }
    return s;
}

} // namespace

std::string to_string(EmptyTruncationPolicy policy) {
    return policy == EmptyTruncationPolicy::keep_all ? "keep_all"
                                                     : "keep_max_probability";
}

std::string to_string(TieBreakFinal) { return "lowest_token_id"; }

EmptyTruncationPolicy truncation_policy_from_string(const std::string& name) {
    if (name == "keep_all")
        return EmptyTruncationPolicy::keep_all;
    if (name == "keep_max_probability")
        return EmptyTruncationPolicy::keep_max_probability;
    throw ConfigError("unknown empty_truncation_policy: " + name);
}

TieBreakFinal tie_break_from_string(const std::string& name) {
    if (name == "lowest_token_id")
        return TieBreakFinal::lowest_token_id;
    throw ConfigError("unknown tie_break_final: " + name);
}

std::string trace_to_jsonl(const GenerationTrace& trace) {
    const json header = {
        {"prompt", trace.prompt},
        {"complete", trace.complete},
        {"error", trace.error},
        {"config",
         {{"num_experts", trace.config.num_experts},
          {"top_k", trace.config.top_k},
          {"threshold_multiplier",
           real_to_json(trace.config.threshold_multiplier)},
          {"base_noise_scale", trace.config.base_noise_scale},
          {"noise_seed", trace.config.noise_seed},
          {"empty_truncation_policy",
           to_string(trace.config.empty_truncation_policy)},
          {"tie_break_final", to_string(trace.config.tie_break_final)}}},
    };
    std::string out = header.dump();
    out += '\n';
    for (const StepRecord& s : trace.steps) {
        out += step_to_json(s).dump();
        out += '\n';
    }
    return out;
}

GenerationTrace trace_from_jsonl(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    GenerationTrace trace;
    int line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        const std::string where = "line " + std::to_string(line_no);
        const json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded())
            throw IoError(where + ": invalid JSON");
        if (!have_header) {
            if (!doc.is_object())
                throw IoError(where + ": header line is not a JSON object");
            trace.prompt = need(doc, "prompt", where).get<std::string>();
            trace.complete = need(doc, "complete", where).get<bool>();
            trace.error = need(doc, "error", where).get<std::string>();
            const json& cfg = need(doc, "config", where);
            trace.config.num_experts =
                need(cfg, "num_experts", where).get<int>();
            trace.config.top_k = need(cfg, "top_k", where).get<int>();
            trace.config.threshold_multiplier = real_from_json(
                need(cfg, "threshold_multiplier", where), where);
            trace.config.base_noise_scale =
                need(cfg, "base_noise_scale", where).get<double>();
            trace.config.noise_seed =
                need(cfg, "noise_seed", where).get<std::uint64_t>();
            try {
                trace.config.empty_truncation_policy =
                    truncation_policy_from_string(
                        need(cfg, "empty_truncation_policy", where)
                            .get<std::string>());
                trace.config.tie_break_final = tie_break_from_string(
                    need(cfg, "tie_break_final", where).get<std::string>());
            } catch (const ConfigError& e) {
                throw IoError(where + ": " + e.what());
            }
            have_header = true;
            continue;
        }
        trace.steps.push_back(step_from_json(doc, where));
    }
    if (!have_header)
        throw IoError("trace has no header line");
    trace.tokens.reserve(trace.steps.size());
    for (const StepRecord& s : trace.steps)
        trace.tokens.push_back(s.winner);
    return trace;
}

void save_trace(const GenerationTrace& trace, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open trace file for writing: " + path);
    out << trace_to_jsonl(trace);
    if (!out)
        throw IoError("failed writing trace file: " + path);
}

GenerationTrace load_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open trace file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    try {
        return trace_from_jsonl(buffer.str());
    } catch (const IoError& e) {
        throw IoError(path + ": " + e.what());
    }
}

} // namespace vmoe
