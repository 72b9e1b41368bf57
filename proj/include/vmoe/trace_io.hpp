#pragma once

#include <string>

#include "vmoe/types.hpp"

// JSONL persistence for generation traces: one header line carrying the
// fusion config, prompt and completion status, then one line per step. Round
// trips are lossless, including non-finite thresholds, which are encoded as
// the strings "inf", "-inf" and "nan".
namespace vmoe {

std::string trace_to_jsonl(const GenerationTrace& trace);
GenerationTrace trace_from_jsonl(const std::string& text);

void save_trace(const GenerationTrace& trace, const std::string& path);
GenerationTrace load_trace(const std::string& path);

std::string to_string(EmptyTruncationPolicy policy);
std::string to_string(TieBreakFinal tie_break);
EmptyTruncationPolicy truncation_policy_from_string(const std::string& name);
TieBreakFinal tie_break_from_string(const std::string& name);

} // namespace vmoe
