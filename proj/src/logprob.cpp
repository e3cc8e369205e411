#include "cdsynth/logprob.hpp"

#include <algorithm>
#include <cmath>

namespace cdsynth {

double logsumexp(std::span<const double> values) {
    if (values.empty()) fail_data("logsumexp of empty vector");
    double m = *std::max_element(values.begin(), values.end());
    if (!std::isfinite(m)) {
        // All -inf is a valid degenerate input for max-shifted reductions of
        // masked scores, but not for a distribution; let the caller decide.
        return m;
    }
    double acc = 0.0;
    for (double v : values) acc += std::exp(v - m);
    return m + std::log(acc);
}

std::vector<double> log_softmax(std::span<const double> logits) {
    if (logits.empty()) fail_data("log_softmax of empty vector");
    for (double v : logits) {
        if (!std::isfinite(v)) fail_data("log_softmax input contains a non-finite value");
    }
    double lse = logsumexp(logits);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

LogProbVector::LogProbVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) fail_data("log-prob vector must be non-empty");
    for (double v : values_) {
        if (!std::isfinite(v)) fail_data("log-prob vector contains a non-finite value");
    }
    double err = std::abs(logsumexp(values_));
    if (err > normalization_tolerance)
        fail_data("log-prob vector is not normalized (|logsumexp| = " + std::to_string(err) + ")");
}

std::int32_t LogProbVector::argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values_.size(); ++i) {
        if (values_[i] > values_[best]) best = i;
    }
    return static_cast<std::int32_t>(best);
}

double LogProbVector::max_value() const { return values_[static_cast<std::size_t>(argmax())]; }

double LogProbVector::normalization_error() const { return std::abs(logsumexp(values_)); }

} // namespace cdsynth
