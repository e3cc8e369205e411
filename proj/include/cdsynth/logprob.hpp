#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cdsynth/error.hpp"

namespace cdsynth {

double logsumexp(std::span<const double> values);

// Shifted-exponential log-softmax: subtracts the maximum before
// exponentiating so the result is finite for any finite input.
std::vector<double> log_softmax(std::span<const double> logits);

// A full next-token distribution in log space. Construction checks that the
// entries are finite and that they sum to one in probability space. The
// tolerance on |logsumexp| is 1e-5, loose enough to accept distributions
// computed in single precision; values produced by log_softmax here are
// accurate to ~1e-12.
class LogProbVector {
public:
    explicit LogProbVector(std::vector<double> values);

    std::int32_t size() const { return static_cast<std::int32_t>(values_.size()); }
    double operator[](std::int32_t i) const { return values_[static_cast<std::size_t>(i)]; }
    std::span<const double> values() const { return values_; }

    // Largest entry; ties resolve to the lowest token id.
    std::int32_t argmax() const;
    double max_value() const;

    // |logsumexp| of the stored values, for tests that pin the tolerance.
    double normalization_error() const;

    static constexpr double normalization_tolerance = 1e-5;

private:
    std::vector<double> values_;
};

} // namespace cdsynth
