#include "cdsynth/trainer.hpp"

#include <cmath>
#include <ostream>

#include <nlohmann/json.hpp>

#include "cdsynth/rng.hpp"

namespace cdsynth {

const char* to_string(LossMask m) {
    return m == LossMask::response_only ? "response_only" : "full_sequence";
}

LossMask loss_mask_from_string(std::string_view s) {
    if (s == "response_only") return LossMask::response_only;
    if (s == "full_sequence") return LossMask::full_sequence;
    fail_config("unknown loss mask '" + std::string(s) + "' (response_only|full_sequence)");
}

TrainConfig TrainConfig::full_scale() {
    TrainConfig cfg;
    cfg.learning_rate_peak = 2.5e-5;
    cfg.learning_rate_min = 2.5e-6;
    cfg.batch_size = 512;
    return cfg;
}

void TrainConfig::validate() const {
    if (!(learning_rate_peak > 0.0)) fail_config("learning_rate_peak must be positive");
    if (!(learning_rate_min >= 0.0)) fail_config("learning_rate_min must be non-negative");
    if (learning_rate_min > learning_rate_peak)
        fail_config("learning_rate_min must not exceed learning_rate_peak");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) fail_config("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) fail_config("beta2 must lie in [0, 1)");
    if (!(adam_eps > 0.0)) fail_config("adam_eps must be positive");
    if (!(warmup_ratio >= 0.0 && warmup_ratio <= 1.0)) fail_config("warmup_ratio must lie in [0, 1]");
    if (epochs < 0) fail_config("epochs must be non-negative");
    if (batch_size < 1) fail_config("batch_size must be positive");
}

std::int64_t warmup_steps(const TrainConfig& cfg, std::int64_t total_steps) {
    if (cfg.warmup_ratio == 0.0) return 0;
    std::int64_t w = std::llround(cfg.warmup_ratio * static_cast<double>(total_steps));
    return std::max<std::int64_t>(1, w);
}

double lr_at_step(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps) {
    if (total_steps < 1) fail_config("total_steps must be positive");
    if (step < 0 || step >= total_steps) fail_config("step outside [0, total_steps)");
    // Warmup cannot swallow the whole schedule: the final step is pinned to
    // the minimum rate.
    std::int64_t w = std::min(warmup_steps(cfg, total_steps), total_steps - 1);
    if (step < w) return cfg.learning_rate_peak * static_cast<double>(step) / static_cast<double>(w);
    std::int64_t denom = total_steps - 1 - w;
    if (denom == 0) return (w > 0) ? cfg.learning_rate_min : cfg.learning_rate_peak;
    double progress = static_cast<double>(step - w) / static_cast<double>(denom);
    return cfg.learning_rate_min +
           (cfg.learning_rate_peak - cfg.learning_rate_min) * 0.5 *
               (1.0 + std::cos(3.14159265358979323846 * progress));
}

TokenizedPair tokenize_pair(const Tokenizer& tok, const ChatTemplate& tmpl,
                            const SynthesizedPair& pair) {
    TokenizedPair out;
    out.id = pair.instruction.id;
    out.tokens = make_prompt(tok, tmpl, pair.instruction.text);
    out.response_start = static_cast<std::int64_t>(out.tokens.size());
    std::vector<std::int32_t> resp = tok.encode(pair.response);
    out.tokens.insert(out.tokens.end(), resp.begin(), resp.end());
    out.tokens.push_back(tok.vocab().special().eos);
    return out;
}

namespace {

std::int64_t target_start_for(const TokenizedPair& item, LossMask mask) {
    if (mask == LossMask::full_sequence) return 1;
    if (item.response_start < 1 || item.response_start >= static_cast<std::int64_t>(item.tokens.size()))
        fail_data("pair '" + item.id + "' has an invalid response boundary");
    return item.response_start;
}

} // namespace

double batch_loss(const DecoderParams& p, const std::vector<TokenizedPair>& batch, LossMask mask) {
    if (batch.empty()) fail_data("empty batch");
    double ce = 0.0;
    std::int64_t count = 0;
    for (const auto& item : batch) {
        auto [s, c] = sequence_ce_and_grad(p, item.tokens, target_start_for(item, mask), {});
        ce += s;
        count += c;
    }
    return ce / static_cast<double>(count);
}

std::vector<double> batch_loss_grad(const DecoderParams& p, const std::vector<TokenizedPair>& batch,
                                    LossMask mask, double* loss_out) {
    if (batch.empty()) fail_data("empty batch");
    std::vector<double> grad(p.flat().size(), 0.0);
    double ce = 0.0;
    std::int64_t count = 0;
    for (const auto& item : batch) {
        auto [s, c] = sequence_ce_and_grad(p, item.tokens, target_start_for(item, mask), grad);
        ce += s;
        count += c;
    }
    double scale = 1.0 / static_cast<double>(count);
    for (double& g : grad) g *= scale;
    if (loss_out) *loss_out = ce * scale;
    return grad;
}

TensorMap finetune(const TensorMap& pre, const TinyDecoderConfig& cfg,
                   const std::vector<SynthesizedPair>& data, const Vocabulary& vocab,
                   const ChatTemplate& tmpl, const TrainConfig& train_cfg,
                   std::ostream* log_jsonl, const StepObserver& observer) {
    train_cfg.validate();
    cfg.validate();
    if (vocab.size() != cfg.vocab_size)
        fail_data("vocabulary size does not match the model vocab_size");
    if (data.empty()) fail_data("fine-tuning dataset is empty");

    Tokenizer tok(vocab);
    std::vector<TokenizedPair> items;
    items.reserve(data.size());
    std::string too_long;
    for (const auto& pair : data) {
        TokenizedPair item = tokenize_pair(tok, tmpl, pair);
        // Inputs are tokens[0..L-2]; they must fit the context window.
        if (static_cast<std::int64_t>(item.tokens.size()) - 1 > cfg.max_context) {
            if (!too_long.empty()) too_long += ", ";
            too_long += item.id;
            continue;
        }
        items.push_back(std::move(item));
    }
    if (!too_long.empty())
        fail_data("pairs exceed the context window: " + too_long);

    DecoderParams master = DecoderParams::from_map(cfg, pre);
    const std::int64_t N = static_cast<std::int64_t>(items.size());
    const std::int64_t B = train_cfg.batch_size;
    const std::int64_t batches_per_epoch = (N + B - 1) / B;
    const std::int64_t total_steps = train_cfg.epochs * batches_per_epoch;
    if (total_steps == 0) return master.to_map(Dtype::f32);

    std::vector<double> m(master.flat().size(), 0.0), v(master.flat().size(), 0.0);
    Rng shuffle_rng(train_cfg.seed);
    std::int64_t step = 0;

    for (std::int64_t epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        std::vector<std::int64_t> order(static_cast<std::size_t>(N));
        for (std::int64_t i = 0; i < N; ++i) order[static_cast<std::size_t>(i)] = i;
        shuffle_rng.shuffle(order);

        for (std::int64_t b = 0; b < batches_per_epoch; ++b) {
            std::vector<TokenizedPair> batch;
            for (std::int64_t i = b * B; i < std::min((b + 1) * B, N); ++i)
                batch.push_back(items[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);

            double loss = 0.0;
            std::vector<double> grad = batch_loss_grad(master, batch, train_cfg.loss_mask, &loss);
            if (!std::isfinite(loss))
                fail_data("non-finite loss at step " + std::to_string(step));

            double gn = 0.0;
            for (double g : grad) gn += g * g;
            gn = std::sqrt(gn);

            const double lr = lr_at_step(train_cfg, step, total_steps);
            const double t = static_cast<double>(step + 1);
            const double bc1 = 1.0 - std::pow(train_cfg.beta1, t);
            const double bc2 = 1.0 - std::pow(train_cfg.beta2, t);
            std::span<double> w = master.flat();
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = train_cfg.beta1 * m[i] + (1.0 - train_cfg.beta1) * grad[i];
                v[i] = train_cfg.beta2 * v[i] + (1.0 - train_cfg.beta2) * grad[i] * grad[i];
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                w[i] -= lr * mhat / (std::sqrt(vhat) + train_cfg.adam_eps);
            }

            TrainStepInfo info{step, lr, loss, gn};
            if (log_jsonl) {
                nlohmann::json j;
                j["step"] = info.step;
                j["lr"] = info.lr;
                j["loss"] = info.loss;
                j["grad_norm"] = info.grad_norm;
                (*log_jsonl) << j.dump() << "\n";
            }
            if (observer) observer(info, master);
            ++step;
        }
    }
    return master.to_map(Dtype::f32);
}

TensorMap induced_update(const TensorMap& pre, const TensorMap& trained,
                         std::vector<SkippedTensor>* skipped) {
    return extract(trained, pre, skipped);
}

} // namespace cdsynth
