#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cdsynth/pipeline.hpp"
#include "cdsynth/trainer.hpp"

namespace cdsynth {

// Protocol settings for the induced-update study: synthesize with the
// expert/amateur pair, fine-tune the amateur on the result, and compare the
// induced weight update against the expert-minus-amateur reference vector.
struct TrendConfig {
    ContrastiveConfig contrastive; // decoding settings; greedy is forced
    TrainConfig train;             // per-run seed is overridden
    ChatTemplate chat;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    std::int64_t sample_count = 512;
    int workers = 1;
};

struct TrendSeedRow {
    std::uint64_t seed = 0;
    double cosine_contrastive = 0.0;
    double cosine_vanilla = 0.0;
};

struct TrendReport {
    std::vector<TrendSeedRow> rows;
    double median_contrastive = 0.0;
    double median_vanilla = 0.0;
    bool gate_passed = false; // median_contrastive >= median_vanilla, both positive
    std::int64_t dataset_size = 0;
    double synth_seconds = 0.0;
    double train_seconds = 0.0;

    std::string to_json() const;
};

// Fine-tunes `pre` on `pairs` and returns the cosine between the induced
// update and `delta_ref` (flattened over shared tensors).
double induced_cosine(const TensorMap& pre, const TinyDecoderConfig& model_cfg,
                      const std::vector<SynthesizedPair>& pairs, const Vocabulary& vocab,
                      const ChatTemplate& chat, const TrainConfig& train_cfg,
                      const TensorMap& delta_ref);

// Runs the full contrastive-versus-vanilla comparison over several training
// seeds. The vanilla baseline decodes the expert greedily (realized as a
// contrastive run with the expert standing in for the amateur, which reduces
// to expert argmax exactly).
TrendReport replicate_trend(const TensorMap& post, const TensorMap& pre,
                            const TinyDecoderConfig& model_cfg, const Vocabulary& vocab,
                            const std::vector<InstructionRecord>& records, const TrendConfig& cfg);

struct AlphaSweepRow {
    double alpha = 0.0;
    double cosine = 0.0;
    std::int64_t dataset_size = 0;
};

struct AlphaSweepReport {
    std::vector<AlphaSweepRow> rows;
    std::string to_json() const;
};

// Repeats synthesize + fine-tune + cosine across a plausibility-cutoff grid
// with a fixed training seed.
AlphaSweepReport alpha_sweep(const TensorMap& post, const TensorMap& pre,
                             const TinyDecoderConfig& model_cfg, const Vocabulary& vocab,
                             const std::vector<InstructionRecord>& records, const TrendConfig& base,
                             std::span<const double> alphas);

// Scalar observable for derivative probes: builds a decoder from the weight
// map and returns the log-probability of `token` after `context`.
LogProbFn decoder_logprob_fn(const TinyDecoderConfig& model_cfg);

double median(std::vector<double> values);

} // namespace cdsynth
