#include "cdsynth/analysis.hpp"

#include <algorithm>
#include <chrono>

#include <nlohmann/json.hpp>

namespace cdsynth {

using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

} // namespace

double median(std::vector<double> values) {
    if (values.empty()) fail_data("median of an empty list");
    std::sort(values.begin(), values.end());
    std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double induced_cosine(const TensorMap& pre, const TinyDecoderConfig& model_cfg,
                      const std::vector<SynthesizedPair>& pairs, const Vocabulary& vocab,
                      const ChatTemplate& chat, const TrainConfig& train_cfg,
                      const TensorMap& delta_ref) {
    TensorMap trained = finetune(pre, model_cfg, pairs, vocab, chat, train_cfg);
    TensorMap induced = induced_update(pre, trained);
    return cosine_similarity(delta_ref, induced).cosine;
}

TrendReport replicate_trend(const TensorMap& post, const TensorMap& pre,
                            const TinyDecoderConfig& model_cfg, const Vocabulary& vocab,
                            const std::vector<InstructionRecord>& records, const TrendConfig& cfg) {
    if (cfg.seeds.empty()) fail_config("at least one training seed is required");
    if (cfg.sample_count < 1) fail_config("sample_count must be positive");

    std::vector<InstructionRecord> sample = records;
    if (static_cast<std::int64_t>(sample.size()) > cfg.sample_count)
        sample.resize(static_cast<std::size_t>(cfg.sample_count));
    if (sample.empty()) fail_data("no instructions to synthesize from");

    TinyDecoder expert(model_cfg, post, vocab, "expert");
    TinyDecoder amateur(model_cfg, pre, vocab, "amateur");
    Tokenizer tok(vocab);

    ContrastiveConfig decode = cfg.contrastive;
    decode.mode = SelectionMode::greedy; // the protocol is deterministic

    TrendReport report;
    report.dataset_size = static_cast<std::int64_t>(sample.size());

    auto t0 = std::chrono::steady_clock::now();
    std::vector<SynthesizedPair> contrastive_data =
        synthesize(sample, expert, amateur, decode, tok, cfg.chat, cfg.workers);
    // Expert-as-amateur cancels every score, so greedy selection falls back
    // to the expert argmax: this is exactly vanilla expert decoding.
    std::vector<SynthesizedPair> vanilla_data =
        synthesize(sample, expert, expert, decode, tok, cfg.chat, cfg.workers);
    report.synth_seconds = seconds_since(t0);

    TensorMap delta_ref = extract(to_f64(post), to_f64(pre));

    auto t1 = std::chrono::steady_clock::now();
    std::vector<double> cos_c, cos_v;
    for (std::uint64_t seed : cfg.seeds) {
        TrainConfig train_cfg = cfg.train;
        train_cfg.seed = seed;
        TrendSeedRow row;
        row.seed = seed;
        row.cosine_contrastive =
            induced_cosine(pre, model_cfg, contrastive_data, vocab, cfg.chat, train_cfg, delta_ref);
        row.cosine_vanilla =
            induced_cosine(pre, model_cfg, vanilla_data, vocab, cfg.chat, train_cfg, delta_ref);
        cos_c.push_back(row.cosine_contrastive);
        cos_v.push_back(row.cosine_vanilla);
        report.rows.push_back(row);
    }
    report.train_seconds = seconds_since(t1);

    report.median_contrastive = median(cos_c);
    report.median_vanilla = median(cos_v);
    report.gate_passed = report.median_contrastive >= report.median_vanilla &&
                         report.median_contrastive > 0.0 && report.median_vanilla > 0.0;
    return report;
}

std::string TrendReport::to_json() const {
    json j;
    j["dataset_size"] = dataset_size;
    j["median_contrastive"] = median_contrastive;
    j["median_vanilla"] = median_vanilla;
    j["gate_passed"] = gate_passed;
    j["synth_seconds"] = synth_seconds;
    j["train_seconds"] = train_seconds;
    j["rows"] = json::array();
    for (const auto& r : rows) {
        j["rows"].push_back({{"seed", r.seed},
                             {"cosine_contrastive", r.cosine_contrastive},
                             {"cosine_vanilla", r.cosine_vanilla}});
    }
    return j.dump(2);
}

AlphaSweepReport alpha_sweep(const TensorMap& post, const TensorMap& pre,
                             const TinyDecoderConfig& model_cfg, const Vocabulary& vocab,
                             const std::vector<InstructionRecord>& records, const TrendConfig& base,
                             std::span<const double> alphas) {
    if (alphas.empty()) fail_config("alpha grid is empty");

    std::vector<InstructionRecord> sample = records;
    if (static_cast<std::int64_t>(sample.size()) > base.sample_count)
        sample.resize(static_cast<std::size_t>(base.sample_count));
    if (sample.empty()) fail_data("no instructions to synthesize from");

    TinyDecoder expert(model_cfg, post, vocab, "expert");
    TinyDecoder amateur(model_cfg, pre, vocab, "amateur");
    Tokenizer tok(vocab);
    TensorMap delta_ref = extract(to_f64(post), to_f64(pre));

    AlphaSweepReport report;
    for (double alpha : alphas) {
        ContrastiveConfig decode = base.contrastive;
        decode.alpha = alpha;
        decode.mode = SelectionMode::greedy;
        std::vector<SynthesizedPair> data =
            synthesize(sample, expert, amateur, decode, tok, base.chat, base.workers);
        AlphaSweepRow row;
        row.alpha = alpha;
        row.dataset_size = static_cast<std::int64_t>(data.size());
        row.cosine = induced_cosine(pre, model_cfg, data, vocab, base.chat, base.train, delta_ref);
        report.rows.push_back(row);
    }
    return report;
}

std::string AlphaSweepReport::to_json() const {
    json j;
    j["rows"] = json::array();
    for (const auto& r : rows) {
        j["rows"].push_back(
            {{"alpha", r.alpha}, {"cosine", r.cosine}, {"dataset_size", r.dataset_size}});
    }
    return j.dump(2);
}

LogProbFn decoder_logprob_fn(const TinyDecoderConfig& model_cfg) {
    return [model_cfg](const TensorMap& weights, std::span<const std::int32_t> context,
                       std::int32_t token) {
        if (context.empty()) fail_data("log-probability probe needs a non-empty context");
        if (token < 0 || token >= model_cfg.vocab_size)
            fail_data("log-probability probe token out of range");
        DecoderParams p = DecoderParams::from_map(model_cfg, weights);
        ForwardStates st = decoder_forward(p, context);
        std::span<const double> last(st.rows.data() + (st.positions - 1) * model_cfg.d_model,
                                     static_cast<std::size_t>(model_cfg.d_model));
        std::vector<double> logprobs = log_softmax(decoder_logits_row(p, last));
        return logprobs[static_cast<std::size_t>(token)];
    };
}

} // namespace cdsynth
