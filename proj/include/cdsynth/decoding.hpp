#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "cdsynth/logprob.hpp"
#include "cdsynth/rng.hpp"
#include "cdsynth/tiny_decoder.hpp"

namespace cdsynth {

enum class SelectionMode { greedy, sample };
enum class StopReason { stop_token, max_tokens, context_overflow };

const char* to_string(SelectionMode m);
const char* to_string(StopReason r);
SelectionMode selection_mode_from_string(std::string_view s);

struct ContrastiveConfig {
    double alpha = 0.06;            // plausibility cutoff in [0, 1]
    std::int64_t max_tokens = 4096; // response length cap
    std::vector<std::int32_t> stop_tokens;
    SelectionMode mode = SelectionMode::greedy;
    double temperature = 1.0; // sampling only
    std::uint64_t seed = 0;   // sampling only

    void validate() const;
};

// One decoding decision, as recorded in the trace.
struct StepTrace {
    std::int64_t step = 0;
    std::int32_t chosen = -1;
    std::int64_t plausible_count = 0;
    double expert_logprob = 0.0;
    double amateur_logprob = 0.0;
    double score = 0.0;
};

struct GenerationResult {
    std::vector<std::int32_t> response; // includes the terminal stop token, if any
    std::vector<StepTrace> trace;
    StopReason stop_reason = StopReason::max_tokens;
};

// Token ids the expert considers plausible: v such that
// expert[v] >= log(alpha) + max_w expert[w]. alpha = 0 admits every token,
// alpha = 1 only the argmax set. Returned ascending.
std::vector<std::int32_t> plausible_set(const LogProbVector& expert, double alpha);

// Contrastive score expert[v] - amateur[v] for plausible v; implausible
// entries are -infinity. Never NaN.
std::vector<double> contrastive_scores(const LogProbVector& expert, const LogProbVector& amateur,
                                       double alpha);

// Picks the next token from the scores. Greedy takes the maximum finite
// score, breaking ties by higher expert log-probability and then by lower
// token id. Sampling draws from softmax(scores / temperature) restricted to
// the plausible set.
std::int32_t select_token(std::span<const double> scores, const LogProbVector& expert,
                          const ContrastiveConfig& cfg, Rng& rng);

// Decodes a full response. Both providers score the identical token
// sequence (prompt plus everything emitted so far). The stop-token set must
// be non-empty and include the expert's end-of-sequence id.
GenerationResult generate(const LogitProvider& expert, const LogitProvider& amateur,
                          std::span<const std::int32_t> prompt, const ContrastiveConfig& cfg);

// One JSON object per decision with fields
// {step, chosen, plausible_count, expert_logprob, amateur_logprob, score}.
void write_trace_jsonl(std::ostream& out, std::span<const StepTrace> trace);

} // namespace cdsynth
