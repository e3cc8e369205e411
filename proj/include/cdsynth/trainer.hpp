#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "cdsynth/chat_vector.hpp"
#include "cdsynth/records.hpp"
#include "cdsynth/tensor.hpp"
#include "cdsynth/tiny_decoder.hpp"
#include "cdsynth/vocab.hpp"

namespace cdsynth {

enum class LossMask { response_only, full_sequence };

const char* to_string(LossMask m);
LossMask loss_mask_from_string(std::string_view s);

struct TrainConfig {
    double learning_rate_peak = 3e-4;
    double learning_rate_min = 3e-5;
    double beta1 = 0.90;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double warmup_ratio = 0.1;
    std::int64_t epochs = 2;
    std::int64_t batch_size = 8;
    std::uint64_t seed = 0;
    LossMask loss_mask = LossMask::response_only;

    // Defaults sized for a full-scale run rather than the in-repo model.
    static TrainConfig full_scale();

    void validate() const;
};

// Deterministic learning-rate schedule: linear warmup to the peak over
// warmup_steps = max(1, round(warmup_ratio * total_steps)) when the ratio is
// positive, then cosine decay to learning_rate_min at the last step.
double lr_at_step(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps);
std::int64_t warmup_steps(const TrainConfig& cfg, std::int64_t total_steps);

// One instruction/response pair flattened to token ids. `response_start`
// indexes the first response token inside `tokens`.
struct TokenizedPair {
    std::string id;
    std::vector<std::int32_t> tokens;
    std::int64_t response_start = 0;
};

TokenizedPair tokenize_pair(const Tokenizer& tok, const ChatTemplate& tmpl,
                            const SynthesizedPair& pair);

struct TrainStepInfo {
    std::int64_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double grad_norm = 0.0;
};

// Called after each optimizer step with the updated master weights.
using StepObserver = std::function<void(const TrainStepInfo&, const DecoderParams&)>;

// Mean token-level cross-entropy over a batch, with the response-only or
// full-sequence mask applied.
double batch_loss(const DecoderParams& p, const std::vector<TokenizedPair>& batch, LossMask mask);

// Gradient of batch_loss with respect to the flat parameters. Returns the
// loss through `loss_out` when given.
std::vector<double> batch_loss_grad(const DecoderParams& p, const std::vector<TokenizedPair>& batch,
                                    LossMask mask, double* loss_out = nullptr);

// Supervised fine-tuning of the reference decoder with AdamW (zero weight
// decay). Deterministic for a fixed config: seeded shuffling, fixed batch
// order, double-precision master weights rounded to F32 on output.
// `log_jsonl`, when given, receives one {step, lr, loss, grad_norm} object
// per optimizer step.
TensorMap finetune(const TensorMap& pre, const TinyDecoderConfig& cfg,
                   const std::vector<SynthesizedPair>& data, const Vocabulary& vocab,
                   const ChatTemplate& tmpl, const TrainConfig& train_cfg,
                   std::ostream* log_jsonl = nullptr, const StepObserver& observer = {});

// trained - pre over the shared tensors: the update induced by fine-tuning.
TensorMap induced_update(const TensorMap& pre, const TensorMap& trained,
                         std::vector<SkippedTensor>* skipped = nullptr);

} // namespace cdsynth
