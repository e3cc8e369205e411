#include "cdsynth/chat_vector.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace cdsynth {

namespace {

// Walks the shared names of two maps in lexicographic order, recording
// one-sided and shape-mismatched entries.
template <typename Fn>
void for_shared(const TensorMap& a, const TensorMap& b, std::vector<SkippedTensor>* skipped,
                bool mismatch_is_error, Fn&& fn) {
    for (const auto& [name, ta] : a) {
        const Tensor* tb = b.find(name);
        if (!tb) {
            if (skipped) skipped->push_back({name, "only_in_a"});
            continue;
        }
        if (!same_shape(ta, *tb)) {
            if (mismatch_is_error) fail_data("tensor '" + name + "' has mismatched shapes");
            if (skipped) skipped->push_back({name, "shape_mismatch"});
            continue;
        }
        fn(name, ta, *tb);
    }
    if (skipped) {
        for (const auto& [name, tb] : b) {
            if (!a.contains(name)) skipped->push_back({name, "only_in_b"});
        }
    }
}

} // namespace

TensorMap extract(const TensorMap& post, const TensorMap& pre, std::vector<SkippedTensor>* skipped) {
    TensorMap delta;
    for_shared(post, pre, skipped, /*mismatch_is_error=*/true,
               [&](const std::string& name, const Tensor& tpost, const Tensor& tpre) {
                   if (tpost.dtype != tpre.dtype)
                       fail_data("tensor '" + name + "' has mismatched dtypes");
                   Tensor out = Tensor::zeros(tpost.dtype, tpost.shape);
                   std::int64_t n = out.numel();
                   for (std::int64_t i = 0; i < n; ++i)
                       out.set_value(i, tpost.value_at(i) - tpre.value_at(i));
                   delta.add(name, std::move(out));
               });
    if (delta.empty()) fail_data("no shared tensors between the two maps");
    return delta;
}

TensorMap apply(const TensorMap& base, const TensorMap& delta, double scale,
                std::vector<SkippedTensor>* skipped) {
    if (!std::isfinite(scale)) fail_config("scale must be finite");
    TensorMap out;
    std::int64_t touched = 0;
    for (const auto& [name, tbase] : base) {
        const Tensor* tdelta = delta.find(name);
        if (!tdelta) {
            out.add(name, tbase);
            continue;
        }
        if (!same_shape(tbase, *tdelta)) fail_data("tensor '" + name + "' has mismatched shapes");
        Tensor shifted = Tensor::zeros(tbase.dtype, tbase.shape);
        std::int64_t n = shifted.numel();
        for (std::int64_t i = 0; i < n; ++i)
            shifted.set_value(i, tbase.value_at(i) + scale * tdelta->value_at(i));
        out.add(name, std::move(shifted));
        ++touched;
    }
    if (skipped) {
        for (const auto& [name, _] : delta) {
            if (!base.contains(name)) skipped->push_back({name, "only_in_b"});
        }
    }
    if (touched == 0) fail_data("delta shares no tensors with the base map");
    return out;
}

DeltaReport cosine_similarity(const TensorMap& a, const TensorMap& b) {
    DeltaReport report;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for_shared(a, b, &report.skipped, /*mismatch_is_error=*/false,
               [&](const std::string&, const Tensor& ta, const Tensor& tb) {
                   std::int64_t n = ta.numel();
                   for (std::int64_t i = 0; i < n; ++i) {
                       double va = ta.value_at(i);
                       double vb = tb.value_at(i);
                       dot += va * vb;
                       na += va * va;
                       nb += vb * vb;
                   }
                   ++report.matched_tensors;
               });
    if (report.matched_tensors == 0) fail_data("no shared tensors to compare");
    report.norm_a = std::sqrt(na);
    report.norm_b = std::sqrt(nb);
    if (report.norm_a == 0.0 || report.norm_b == 0.0)
        fail_data("cosine similarity is undefined for a zero-norm operand");
    report.cosine = dot / (report.norm_a * report.norm_b);
    // Clamp the rounding spill so downstream consumers can rely on [-1, 1].
    if (report.cosine > 1.0) report.cosine = 1.0;
    if (report.cosine < -1.0) report.cosine = -1.0;
    return report;
}

std::string DeltaReport::to_json() const {
    nlohmann::json j;
    j["cosine"] = cosine;
    j["matched_tensors"] = matched_tensors;
    j["norm_a"] = norm_a;
    j["norm_b"] = norm_b;
    j["skipped"] = nlohmann::json::array();
    for (const auto& s : skipped) j["skipped"].push_back({{"name", s.name}, {"reason", s.reason}});
    return j.dump();
}

double default_probe_step(const TensorMap& delta) {
    double norm = l2_norm(delta);
    if (norm == 0.0) fail_data("probe direction has zero norm");
    return 1e-3 / norm;
}

double directional_derivative(const LogProbFn& fn, const TensorMap& pre, const TensorMap& delta,
                              std::span<const std::int32_t> context, std::int32_t token, double h) {
    if (!(h > 0.0)) fail_config("finite-difference step must be positive");
    TensorMap pre64 = to_f64(pre);
    TensorMap delta64 = to_f64(delta);
    TensorMap plus = apply(pre64, delta64, h);
    TensorMap minus = apply(pre64, delta64, -h);
    double f_plus = fn(plus, context, token);
    double f_minus = fn(minus, context, token);
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
        fail_data("observable returned a non-finite value during differencing");
    return (f_plus - f_minus) / (2.0 * h);
}

TaylorProbe taylor_residual(const LogProbFn& fn, const TensorMap& post, const TensorMap& pre,
                            std::span<const std::int32_t> context, std::int32_t token, double h) {
    TensorMap post64 = to_f64(post);
    TensorMap pre64 = to_f64(pre);
    TensorMap delta = extract(post64, pre64);
    TaylorProbe probe;
    probe.context.assign(context.begin(), context.end());
    probe.token = token;
    probe.h = (h == 0.0) ? default_probe_step(delta) : h;
    probe.s_actual = fn(post64, context, token) - fn(pre64, context, token);
    probe.s_approx = directional_derivative(fn, pre64, delta, context, token, probe.h);
    probe.residual = std::abs(probe.s_actual - probe.s_approx);
    return probe;
}

} // namespace cdsynth
