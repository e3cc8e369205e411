#include "cdsynth/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <nlohmann/json.hpp>

namespace cdsynth {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

const char* to_string(SelectionMode m) { return m == SelectionMode::greedy ? "greedy" : "sample"; }

const char* to_string(StopReason r) {
    switch (r) {
    case StopReason::stop_token: return "stop_token";
    case StopReason::max_tokens: return "max_tokens";
    case StopReason::context_overflow: return "context_overflow";
    }
    return "unknown";
}

SelectionMode selection_mode_from_string(std::string_view s) {
    if (s == "greedy") return SelectionMode::greedy;
    if (s == "sample") return SelectionMode::sample;
    fail_config("unknown selection mode '" + std::string(s) + "' (greedy|sample)");
}

void ContrastiveConfig::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail_config("alpha must lie in [0, 1]");
    if (max_tokens < 1) fail_config("max_tokens must be at least 1");
    if (stop_tokens.empty()) fail_config("stop_tokens must be non-empty");
    if (mode == SelectionMode::sample && !(temperature > 0.0))
        fail_config("sampling temperature must be positive");
}

std::vector<std::int32_t> plausible_set(const LogProbVector& expert, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) fail_config("alpha must lie in [0, 1]");
    std::vector<std::int32_t> out;
    const std::int32_t V = expert.size();
    if (alpha == 0.0) {
        out.resize(static_cast<std::size_t>(V));
        for (std::int32_t v = 0; v < V; ++v) out[static_cast<std::size_t>(v)] = v;
        return out;
    }
    const double threshold = std::log(alpha) + expert.max_value();
    for (std::int32_t v = 0; v < V; ++v) {
        if (expert[v] >= threshold) out.push_back(v);
    }
    return out;
}

std::vector<double> contrastive_scores(const LogProbVector& expert, const LogProbVector& amateur,
                                       double alpha) {
    if (expert.size() != amateur.size())
        fail_data("expert and amateur distributions have different sizes");
    std::vector<double> scores(static_cast<std::size_t>(expert.size()), kNegInf);
    for (std::int32_t v : plausible_set(expert, alpha))
        scores[static_cast<std::size_t>(v)] = expert[v] - amateur[v];
    return scores;
}

std::int32_t select_token(std::span<const double> scores, const LogProbVector& expert,
                          const ContrastiveConfig& cfg, Rng& rng) {
    if (static_cast<std::int32_t>(scores.size()) != expert.size())
        fail_data("score vector does not match the distribution size");

    if (cfg.mode == SelectionMode::greedy) {
        std::int32_t best = -1;
        for (std::int32_t v = 0; v < expert.size(); ++v) {
            double s = scores[static_cast<std::size_t>(v)];
            if (!std::isfinite(s)) continue;
            if (best < 0) {
                best = v;
                continue;
            }
            double bs = scores[static_cast<std::size_t>(best)];
            // Strict improvement on (score, expert log-prob); ties keep the
            // lower id because iteration is ascending.
            if (s > bs || (s == bs && expert[v] > expert[best])) best = v;
        }
        if (best < 0) fail_data("no plausible token to select");
        return best;
    }

    // Sampling: softmax over the finite scores at the configured temperature.
    std::vector<std::int32_t> support;
    std::vector<double> scaled;
    for (std::int32_t v = 0; v < expert.size(); ++v) {
        double s = scores[static_cast<std::size_t>(v)];
        if (!std::isfinite(s)) continue;
        support.push_back(v);
        scaled.push_back(s / cfg.temperature);
    }
    if (support.empty()) fail_data("no plausible token to select");
    double m = *std::max_element(scaled.begin(), scaled.end());
    double total = 0.0;
    for (double& s : scaled) {
        s = std::exp(s - m);
        total += s;
    }
    double draw = rng.uniform01() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < support.size(); ++i) {
        acc += scaled[i];
        if (draw < acc) return support[i];
    }
    return support.back(); // numeric edge: draw == total
}

GenerationResult generate(const LogitProvider& expert, const LogitProvider& amateur,
                          std::span<const std::int32_t> prompt, const ContrastiveConfig& cfg) {
    cfg.validate();
    if (!(expert.vocab() == amateur.vocab()))
        fail_data("expert and amateur must share an identical vocabulary");
    if (prompt.empty()) fail_data("prompt must be non-empty");
    const std::int32_t V = expert.vocab().size();
    for (std::int32_t t : prompt) {
        if (t < 0 || t >= V) fail_data("prompt token id " + std::to_string(t) + " outside the vocabulary");
    }
    const std::int32_t eos = expert.vocab().special().eos;
    if (std::find(cfg.stop_tokens.begin(), cfg.stop_tokens.end(), eos) == cfg.stop_tokens.end())
        fail_config("stop_tokens must include the end-of-sequence id");
    for (std::int32_t t : cfg.stop_tokens) {
        if (t < 0 || t >= V) fail_config("stop token id " + std::to_string(t) + " outside the vocabulary");
    }

    const std::int64_t window = std::min(expert.max_context(), amateur.max_context());
    if (static_cast<std::int64_t>(prompt.size()) > window)
        fail_data("prompt of " + std::to_string(prompt.size()) + " tokens exceeds the context window of " +
                  std::to_string(window));

    GenerationResult result;
    std::vector<std::int32_t> context(prompt.begin(), prompt.end());
    Rng rng(cfg.seed);

    for (std::int64_t step = 0; step < cfg.max_tokens; ++step) {
        if (static_cast<std::int64_t>(context.size()) + 1 > window) {
            // The next decision would push the sequence past the window:
            // stop and flag it rather than truncating silently.
            result.stop_reason = StopReason::context_overflow;
            return result;
        }
        LogProbVector e = expert.next_logprobs(context);
        LogProbVector a = amateur.next_logprobs(context);
        if (e.size() != V || a.size() != V)
            fail_data("provider returned a distribution of the wrong size");
        std::vector<double> scores = contrastive_scores(e, a, cfg.alpha);
        std::int32_t chosen = select_token(scores, e, cfg, rng);

        StepTrace tr;
        tr.step = step;
        tr.chosen = chosen;
        tr.plausible_count = static_cast<std::int64_t>(plausible_set(e, cfg.alpha).size());
        tr.expert_logprob = e[chosen];
        tr.amateur_logprob = a[chosen];
        tr.score = scores[static_cast<std::size_t>(chosen)];
        result.trace.push_back(tr);

        result.response.push_back(chosen);
        context.push_back(chosen);
        if (std::find(cfg.stop_tokens.begin(), cfg.stop_tokens.end(), chosen) != cfg.stop_tokens.end()) {
            result.stop_reason = StopReason::stop_token;
            return result;
        }
    }
    result.stop_reason = StopReason::max_tokens;
    return result;
}

void write_trace_jsonl(std::ostream& out, std::span<const StepTrace> trace) {
    for (const StepTrace& tr : trace) {
        nlohmann::json j;
        j["step"] = tr.step;
        j["chosen"] = tr.chosen;
        j["plausible_count"] = tr.plausible_count;
        j["expert_logprob"] = tr.expert_logprob;
        j["amateur_logprob"] = tr.amateur_logprob;
        j["score"] = tr.score;
        out << j.dump() << "\n";
    }
}

} // namespace cdsynth
