#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cdsynth/tensor.hpp"

namespace cdsynth {

struct SkippedTensor {
    std::string name;
    std::string reason; // "only_in_a", "only_in_b", "shape_mismatch"
};

// Cosine-similarity report over two tensor maps, flattened over the name
// intersection in lexicographic order with double accumulation.
struct DeltaReport {
    double cosine = 0.0;
    std::int64_t matched_tensors = 0;
    std::vector<SkippedTensor> skipped;
    double norm_a = 0.0;
    double norm_b = 0.0;

    std::string to_json() const;
};

// Element-wise difference post - pre over the shared names. A name present
// on only one side is skipped (and reported when `skipped` is given); a
// shared name with mismatched shape or dtype is an error.
TensorMap extract(const TensorMap& post, const TensorMap& pre,
                  std::vector<SkippedTensor>* skipped = nullptr);

// base + scale * delta over the names shared with `delta`; tensors of
// `base` without a delta entry pass through unchanged.
TensorMap apply(const TensorMap& base, const TensorMap& delta, double scale,
                std::vector<SkippedTensor>* skipped = nullptr);

// Cosine similarity between the flattened shared entries of `a` and `b`.
// Raises an error when either flattened norm is zero or no entries match:
// the result is always a defined value in [-1, 1], never NaN.
DeltaReport cosine_similarity(const TensorMap& a, const TensorMap& b);

// Scalar observable of a weight map, e.g. one token's log-probability under
// a model built from the weights.
using LogProbFn = std::function<double(const TensorMap& weights, std::span<const std::int32_t> context,
                                       std::int32_t token)>;

// Central finite difference of `fn` along `delta` at `pre`:
//   [fn(pre + h*delta) - fn(pre - h*delta)] / (2h).
// Evaluations run on double-precision copies of the weights.
double directional_derivative(const LogProbFn& fn, const TensorMap& pre, const TensorMap& delta,
                              std::span<const std::int32_t> context, std::int32_t token, double h);

// Step used when the caller does not pin one: 1e-3 along the unit direction,
// i.e. h = 1e-3 / ||delta||.
double default_probe_step(const TensorMap& delta);

struct TaylorProbe {
    std::vector<std::int32_t> context;
    std::int32_t token = 0;
    double h = 0.0;
    double s_actual = 0.0; // fn(post) - fn(pre)
    double s_approx = 0.0; // first-order estimate along post - pre
    double residual = 0.0; // |s_actual - s_approx|
};

// First-order check at one probe point. `h` = 0 selects the default step.
TaylorProbe taylor_residual(const LogProbFn& fn, const TensorMap& post, const TensorMap& pre,
                            std::span<const std::int32_t> context, std::int32_t token, double h = 0.0);

} // namespace cdsynth
