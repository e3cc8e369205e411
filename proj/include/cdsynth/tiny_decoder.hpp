#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cdsynth/logprob.hpp"
#include "cdsynth/tensor.hpp"
#include "cdsynth/vocab.hpp"

namespace cdsynth {

// Abstract next-token scorer. Implementations must be deterministic: the
// same context always yields the same distribution.
class LogitProvider {
public:
    virtual ~LogitProvider() = default;

    virtual const Vocabulary& vocab() const = 0;
    virtual std::int64_t max_context() const = 0;
    // Full normalized next-token distribution after `context`. The context
    // must be non-empty, within the window, and contain only valid ids.
    virtual LogProbVector next_logprobs(std::span<const std::int32_t> context) const = 0;
    // Stable identifier recorded in provenance.
    virtual const std::string& id() const = 0;
};

struct TinyDecoderConfig {
    std::int32_t vocab_size = 0;
    std::int32_t d_model = 0;
    std::int32_t n_layers = 0;
    std::int32_t n_heads = 0;
    std::int64_t max_context = 0;

    std::int32_t head_dim() const { return d_model / n_heads; }
    std::int32_t d_ff() const { return 4 * d_model; }
    void validate() const;

    bool operator==(const TinyDecoderConfig&) const = default;
};

// Flat double-precision parameter store for the reference decoder, plus the
// mapping to and from named tensors. Tensor names and shapes are part of the
// checkpoint contract:
//   tok_embed.weight [V,d], pos_embed.weight [C,d],
//   blocks.{i}.ln1.{weight,bias}, blocks.{i}.attn.{q,k,v,out}.{weight,bias},
//   blocks.{i}.ln2.{weight,bias}, blocks.{i}.mlp.{fc,proj}.{weight,bias},
//   final_ln.{weight,bias}, lm_head.weight [V,d]
class DecoderParams {
public:
    struct BlockOffsets {
        std::int64_t ln1_w, ln1_b;
        std::int64_t q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
        std::int64_t ln2_w, ln2_b;
        std::int64_t fc_w, fc_b, proj_w, proj_b;
    };
    struct Layout {
        std::int64_t tok_embed = 0;
        std::int64_t pos_embed = 0;
        std::vector<BlockOffsets> blocks;
        std::int64_t final_ln_w = 0, final_ln_b = 0;
        std::int64_t lm_head = 0;
        std::int64_t total = 0;
    };

    explicit DecoderParams(TinyDecoderConfig cfg); // zero-initialized
    static DecoderParams from_map(TinyDecoderConfig cfg, const TensorMap& weights);
    static DecoderParams random_init(TinyDecoderConfig cfg, std::uint64_t seed, double init_std = 0.02);

    TensorMap to_map(Dtype dtype = Dtype::f32) const;

    const TinyDecoderConfig& config() const { return cfg_; }
    const Layout& layout() const { return layout_; }
    std::span<double> flat() { return flat_; }
    std::span<const double> flat() const { return flat_; }

    // Names and shapes of every tensor, in internal layout order.
    static std::vector<std::pair<std::string, std::vector<std::int64_t>>> tensor_schema(
        const TinyDecoderConfig& cfg);

private:
    TinyDecoderConfig cfg_;
    Layout layout_;
    std::vector<double> flat_;
};

// Derives the architecture from checkpoint tensor shapes; the head count is
// not recoverable from shapes and must be supplied.
TinyDecoderConfig infer_decoder_config(const TensorMap& weights, std::int32_t n_heads);

// Hidden states for every input position, ready for the output projection.
// `rows` holds T * d_model values after the final layer norm.
struct ForwardStates {
    std::int64_t positions = 0;
    std::vector<double> rows;
};

ForwardStates decoder_forward(const DecoderParams& p, std::span<const std::int32_t> tokens);

// Logits (not normalized) at one hidden row.
std::vector<double> decoder_logits_row(const DecoderParams& p, std::span<const double> row);

// Summed cross-entropy over target indices [target_start, L) of `tokens`,
// where target j is predicted from the prefix tokens[0..j-1]. When `grad` is
// non-empty it must match the flat parameter size; the unscaled gradient of
// the summed loss is accumulated into it. Returns {ce_sum, target_count}.
std::pair<double, std::int64_t> sequence_ce_and_grad(const DecoderParams& p,
                                                     std::span<const std::int32_t> tokens,
                                                     std::int64_t target_start,
                                                     std::span<double> grad);

// Reference in-process model behind the LogitProvider interface. All
// internal arithmetic is double precision regardless of checkpoint dtype.
class TinyDecoder final : public LogitProvider {
public:
    TinyDecoder(TinyDecoderConfig cfg, const TensorMap& weights, Vocabulary vocab, std::string id);
    TinyDecoder(DecoderParams params, Vocabulary vocab, std::string id);

    const Vocabulary& vocab() const override { return vocab_; }
    std::int64_t max_context() const override { return params_.config().max_context; }
    LogProbVector next_logprobs(std::span<const std::int32_t> context) const override;
    const std::string& id() const override { return id_; }

    const DecoderParams& params() const { return params_; }

private:
    DecoderParams params_;
    Vocabulary vocab_;
    std::string id_;
};

} // namespace cdsynth
