#include "cdsynth/run.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cdsynth/analysis.hpp"
#include "cdsynth/checkpoint.hpp"
#include "cdsynth/decoding.hpp"
#include "cdsynth/http_provider.hpp"
#include "cdsynth/judge.hpp"
#include "cdsynth/pipeline.hpp"
#include "cdsynth/rng.hpp"
#include "cdsynth/tiny_decoder.hpp"
#include "cdsynth/trainer.hpp"

namespace cdsynth {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------- helpers

Vocabulary load_vocab(RunConfig& cfg) {
    return Vocabulary::load_json(cfg.require_string("paths.vocab"));
}

std::unique_ptr<LogitProvider> make_provider(RunConfig& cfg, const char* key,
                                             const Vocabulary& vocab) {
    std::string target = cfg.require_string(key);
    if (target.rfind("http://", 0) == 0) {
        HttpProviderConfig pc;
        pc.url = target;
        pc.max_context = cfg.get_int("provider.max_context", 1 << 20);
        pc.timeout_ms = static_cast<int>(cfg.get_int("provider.timeout_ms", 30000));
        pc.max_retries = static_cast<int>(cfg.get_int("provider.max_retries", 2));
        return std::make_unique<HttpLogitProvider>(pc, vocab, target);
    }
    TensorMap weights = load_checkpoint(target);
    TinyDecoderConfig mc =
        infer_decoder_config(weights, static_cast<std::int32_t>(cfg.get_int("model.n_heads", 4)));
    std::string id = std::filesystem::path(target).stem().string();
    return std::make_unique<TinyDecoder>(mc, weights, vocab, id);
}

ContrastiveConfig contrastive_from(RunConfig& cfg, const Vocabulary& vocab) {
    ContrastiveConfig c;
    c.alpha = cfg.get_double("contrastive.alpha", 0.06);
    c.max_tokens = cfg.get_int("contrastive.max_tokens", 4096);
    c.mode = selection_mode_from_string(cfg.get_string("contrastive.mode", "greedy"));
    c.temperature = cfg.get_double("contrastive.temperature", 1.0);
    c.seed = cfg.get_u64("contrastive.seed", 0);
    c.stop_tokens = {vocab.special().eos};
    for (std::int64_t t : cfg.get_int_list("contrastive.extra_stop_tokens", {}))
        c.stop_tokens.push_back(static_cast<std::int32_t>(t));
    return c;
}

ChatTemplate chat_from(RunConfig& cfg) {
    ChatTemplate t;
    t.prefix = cfg.get_string("chat.prefix", t.prefix);
    t.suffix = cfg.get_string("chat.suffix", t.suffix);
    return t;
}

TrainConfig train_from(RunConfig& cfg) {
    std::string preset = cfg.get_string("train.preset", "desk");
    TrainConfig t;
    if (preset == "full_scale")
        t = TrainConfig::full_scale();
    else if (preset != "desk")
        fail_config("train.preset must be 'desk' or 'full_scale'");
    t.learning_rate_peak = cfg.get_double("train.learning_rate_peak", t.learning_rate_peak);
    t.learning_rate_min = cfg.get_double("train.learning_rate_min", t.learning_rate_min);
    t.beta1 = cfg.get_double("train.beta1", t.beta1);
    t.beta2 = cfg.get_double("train.beta2", t.beta2);
    t.warmup_ratio = cfg.get_double("train.warmup_ratio", t.warmup_ratio);
    t.epochs = cfg.get_int("train.epochs", t.epochs);
    t.batch_size = cfg.get_int("train.batch_size", t.batch_size);
    t.seed = cfg.get_u64("train.seed", t.seed);
    t.loss_mask = loss_mask_from_string(cfg.get_string("train.loss_mask", to_string(t.loss_mask)));
    return t;
}

FilterRules filters_from(RunConfig& cfg) {
    FilterRules fr = FilterRules::defaults();
    fr.min_chars = cfg.get_int("filter.min_chars", fr.min_chars);
    fr.max_chars = cfg.get_int("filter.max_chars", fr.max_chars);
    fr.template_prefixes = cfg.get_string_list("filter.template_prefixes", fr.template_prefixes);
    fr.dedup.normalize_whitespace =
        cfg.get_bool("filter.dedup.normalize_whitespace", fr.dedup.normalize_whitespace);
    fr.dedup.case_fold = cfg.get_bool("filter.dedup.case_fold", fr.dedup.case_fold);
    return fr;
}

void write_file(const std::string& path, const std::string& payload) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) fail_data("cannot write report '" + path + "'");
    f << payload << "\n";
}

json preprocess_json(const PreprocessReport& r) {
    json j;
    j["input_count"] = r.input_count;
    j["kept"] = r.kept;
    j["dropped_empty"] = r.dropped_empty;
    j["dropped_short"] = r.dropped_short;
    j["dropped_long"] = r.dropped_long;
    j["dropped_template"] = r.dropped_template;
    j["dropped_duplicate"] = r.dropped_duplicate;
    return j;
}

// ---------------------------------------------------------------- commands

int cmd_generate(RunConfig& cfg, std::ostream& out, std::ostream&) {
    const std::string report_path = cfg.get_string("paths.reports_out", "");
    Vocabulary vocab = load_vocab(cfg);
    auto expert = make_provider(cfg, "paths.expert_ckpt", vocab);
    auto amateur = make_provider(cfg, "paths.amateur_ckpt", vocab);
    ContrastiveConfig decode = contrastive_from(cfg, vocab);
    ChatTemplate chat = chat_from(cfg);
    std::string instruction = cfg.require_string("generate.instruction");
    bool raw = cfg.get_bool("generate.raw_prompt", false);
    std::string trace_path = cfg.get_string("generate.trace_out", "");

    Tokenizer tok(vocab);
    std::vector<std::int32_t> prompt;
    if (raw) {
        if (vocab.special().bos) prompt.push_back(*vocab.special().bos);
        std::vector<std::int32_t> body = tok.encode(instruction);
        prompt.insert(prompt.end(), body.begin(), body.end());
    } else {
        prompt = make_prompt(tok, chat, instruction);
    }

    GenerationResult res = generate(*expert, *amateur, prompt, decode);
    std::string text = tok.decode(res.response);

    if (!trace_path.empty()) {
        std::ofstream tf(trace_path, std::ios::trunc);
        if (!tf) fail_data("cannot write trace '" + trace_path + "'");
        write_trace_jsonl(tf, res.trace);
    }
    out << text << "\n";

    if (!report_path.empty()) {
        json j;
        j["response"] = text;
        j["stop_reason"] = to_string(res.stop_reason);
        j["tokens_emitted"] = static_cast<std::int64_t>(res.response.size());
        j["config"] = json::parse(cfg.echo_json());
        write_file(report_path, j.dump(2));
    }
    return 0;
}

int cmd_synthesize(RunConfig& cfg, std::ostream& out, std::ostream&) {
    const std::string report_path = cfg.get_string("paths.reports_out", "");
    Vocabulary vocab = load_vocab(cfg);
    auto expert = make_provider(cfg, "paths.expert_ckpt", vocab);
    auto amateur = make_provider(cfg, "paths.amateur_ckpt", vocab);
    ContrastiveConfig decode = contrastive_from(cfg, vocab);
    ChatTemplate chat = chat_from(cfg);
    FilterRules filters = filters_from(cfg);
    const std::string in_path = cfg.require_string("paths.instructions_in");
    const std::string data_path = cfg.require_string("paths.dataset_out");
    const int workers = static_cast<int>(cfg.get_int("pipeline.workers", 1));

    IngestResult ingested = ingest_jsonl(in_path);
    auto [kept, prep] = preprocess(std::move(ingested.records), filters);

    Tokenizer tok(vocab);
    std::vector<SynthesizedPair> pairs =
        synthesize(kept, *expert, *amateur, decode, tok, chat, workers);

    // The worker count cannot change the output, so it stays out of the
    // manifest echo: runs at different parallelism produce identical files.
    const std::string exclude[] = {std::string("pipeline.workers")};
    Manifest manifest = emit_jsonl(pairs, data_path, cfg.echo_json(exclude));

    out << "wrote " << manifest.count << " pairs to " << data_path << " (sha256 " << manifest.sha256
        << ")\n"
        << "ingest: " << prep.input_count << " records, " << ingested.malformed_lines
        << " malformed lines skipped; dropped " << prep.dropped_total() << ", kept " << prep.kept
        << "\n";

    if (!report_path.empty()) {
        json j;
        j["malformed_lines"] = ingested.malformed_lines;
        j["preprocess"] = preprocess_json(prep);
        j["emitted"] = manifest.count;
        j["sha256"] = manifest.sha256;
        j["config"] = json::parse(cfg.echo_json(exclude));
        write_file(report_path, j.dump(2));
    }
    return 0;
}

int cmd_judge_bestofn(RunConfig& cfg, std::ostream& out, std::ostream&) {
    const std::string report_path = cfg.get_string("paths.reports_out", "");
    const std::string question = cfg.require_string("judge.question");
    const std::string candidates_file = cfg.get_string("judge.candidates_file", "");
    std::vector<std::string> candidates;
    if (!candidates_file.empty()) {
        std::ifstream in(candidates_file);
        if (!in) fail_data("cannot open candidates '" + candidates_file + "'");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            json j = json::parse(line, nullptr, false);
            if (j.is_string())
                candidates.push_back(j.get<std::string>());
            else if (j.is_object() && j.contains("response") && j["response"].is_string())
                candidates.push_back(j["response"].get<std::string>());
            else
                fail_data("candidates file lines must be JSON strings or {\"response\": ...}");
        }
    } else {
        candidates = cfg.get_string_list("judge.candidates", {});
    }
    if (candidates.empty()) fail_config("no candidates given (judge.candidates[_file])");

    const int in_flight = static_cast<int>(cfg.get_int("judge.in_flight", 4));
    const std::string replies_file = cfg.get_string("judge.replies_file", "");

    JudgeResult result;
    if (!replies_file.empty()) {
        RecordedJudgeTransport transport = RecordedJudgeTransport::from_jsonl(replies_file);
        result = judge_candidates(question, candidates, transport, 1);
    } else {
        JudgeEndpoint ep;
        ep.base_url = cfg.require_string("judge.url");
        ep.model = cfg.require_string("judge.model");
        ep.timeout_ms = static_cast<int>(cfg.get_int("judge.timeout_ms", 60000));
        ep.max_retries = static_cast<int>(cfg.get_int("judge.max_retries", 2));
        ep.auth_env = cfg.get_string("judge.auth_env", "JUDGE_API_KEY");
        HttpJudgeTransport transport(ep);
        std::ofstream audit;
        const std::string audit_path = cfg.get_string("judge.audit_out", "");
        if (!audit_path.empty()) {
            audit.open(audit_path, std::ios::app);
            if (!audit) fail_data("cannot write audit log '" + audit_path + "'");
            transport.set_audit(&audit);
        }
        result = judge_candidates(question, candidates, transport, in_flight);
    }

    json j;
    j["winner"] = result.winner;
    j["verdicts"] = json::array();
    for (const auto& cv : result.verdicts) {
        json v;
        v["ok"] = cv.ok;
        if (cv.ok) {
            v["score"] = cv.verdict.score;
            v["strengths"] = cv.verdict.strengths;
            v["weaknesses"] = cv.verdict.weaknesses;
        } else {
            v["error"] = cv.error;
        }
        j["verdicts"].push_back(std::move(v));
    }
    out << j.dump(2) << "\n";
    if (!report_path.empty()) write_file(report_path, j.dump(2));
    return 0;
}

int cmd_chatvec_extract(RunConfig& cfg, std::ostream& out, std::ostream&) {
    TensorMap post = load_checkpoint(cfg.require_string("paths.expert_ckpt"));
    TensorMap pre = load_checkpoint(cfg.require_string("paths.amateur_ckpt"));
    const std::string delta_path = cfg.require_string("paths.delta_out");
    std::vector<SkippedTensor> skipped;
    TensorMap delta = extract(post, pre, &skipped);
    save_checkpoint(delta, delta_path);
    out << "wrote " << delta.size() << " delta tensors to " << delta_path;
    if (!skipped.empty()) out << " (" << skipped.size() << " skipped)";
    out << "\n";
    return 0;
}

int cmd_chatvec_apply(RunConfig& cfg, std::ostream& out, std::ostream&) {
    TensorMap base = load_checkpoint(cfg.require_string("paths.amateur_ckpt"));
    TensorMap delta = load_checkpoint(cfg.require_string("paths.delta_ckpt"));
    const double scale = cfg.get_double("chatvec.scale", 1.0);
    const std::string out_path = cfg.require_string("paths.ckpt_out");
    TensorMap shifted = apply(base, delta, scale);
    save_checkpoint(shifted, out_path);
    out << "wrote " << shifted.size() << " tensors to " << out_path << " (scale " << scale << ")\n";
    return 0;
}

int cmd_chatvec_cosine(RunConfig& cfg, std::ostream& out, std::ostream&) {
    const std::string report_path = cfg.get_string("paths.reports_out", "");
    TensorMap a = load_checkpoint(cfg.require_string("paths.expert_ckpt"));
    TensorMap b = load_checkpoint(cfg.require_string("paths.amateur_ckpt"));
    DeltaReport report = cosine_similarity(a, b);
    out << report.to_json() << "\n";
    if (!report_path.empty()) write_file(report_path, report.to_json());
    return 0;
}

int cmd_verify_taylor(RunConfig& cfg, std::ostream& out, std::ostream&) {
    const std::string report_path = cfg.get_string("paths.reports_out", "");
    TensorMap post = load_checkpoint(cfg.require_string("paths.expert_ckpt"));
    TensorMap pre = load_checkpoint(cfg.require_string("paths.amateur_ckpt"));
    TinyDecoderConfig mc =
        infer_decoder_config(post, static_cast<std::int32_t>(cfg.get_int("model.n_heads", 4)));

    const std::int64_t probes = cfg.get_int("taylor.probes", 16);
    std::vector<double> epsilons = cfg.get_double_list("taylor.epsilons", {0.2, 0.1, 0.05, 0.025});
    const double step = cfg.get_double("taylor.step", 0.0);
    const std::uint64_t seed = cfg.get_u64("taylor.seed", 0);
    const std::int64_t context_len = cfg.get_int("taylor.context_len", 8);
    const double ratio_min = cfg.get_double("taylor.ratio_min", 2.0);
    const double ratio_max = cfg.get_double("taylor.ratio_max", 8.0);
    if (probes < 1) fail_config("taylor.probes must be positive");
    if (context_len < 1 || context_len >= mc.max_context)
        fail_config("taylor.context_len must fit the context window");
    if (epsilons.size() < 2) fail_config("taylor.epsilons needs at least two scales");
    for (std::size_t i = 1; i < epsilons.size(); ++i) {
        if (!(epsilons[i] < epsilons[i - 1])) fail_config("taylor.epsilons must strictly decrease");
    }

    TensorMap pre64 = to_f64(pre);
    TensorMap delta = extract(to_f64(post), pre64);
    LogProbFn fn = decoder_logprob_fn(mc);

    // Fixed probe set shared by every scale.
    Rng rng(seed);
    std::vector<std::vector<std::int32_t>> contexts;
    std::vector<std::int32_t> tokens;
    for (std::int64_t i = 0; i < probes; ++i) {
        std::size_t len = 1 + static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(context_len)));
        std::vector<std::int32_t> ctx(len);
        for (auto& t : ctx) t = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(mc.vocab_size)));
        contexts.push_back(std::move(ctx));
        tokens.push_back(static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(mc.vocab_size))));
    }

    std::vector<double> means;
    for (double eps : epsilons) {
        TensorMap post_eps = apply(pre64, delta, eps);
        double total = 0.0;
        for (std::int64_t i = 0; i < probes; ++i) {
            TaylorProbe p = taylor_residual(fn, post_eps, pre64, contexts[static_cast<std::size_t>(i)],
                                            tokens[static_cast<std::size_t>(i)], step);
            total += p.residual;
        }
        means.push_back(total / static_cast<double>(probes));
    }

    bool gate = true;
    std::vector<double> ratios;
    for (std::size_t i = 1; i < means.size(); ++i) {
        if (!(means[i] < means[i - 1])) gate = false;
        double ratio = (means[i] > 0.0) ? means[i - 1] / means[i] : 0.0;
        ratios.push_back(ratio);
        if (!(ratio >= ratio_min && ratio <= ratio_max)) gate = false;
    }

    json j;
    j["epsilons"] = epsilons;
    j["mean_residuals"] = means;
    j["ratios"] = ratios;
    j["probes"] = probes;
    j["gate_passed"] = gate;
    out << j.dump(2) << "\n";
    if (!report_path.empty()) write_file(report_path, j.dump(2));
    return gate ? 0 : 5;
}

int cmd_finetune(RunConfig& cfg, std::ostream& out, std::ostream&) {
    const std::string report_path = cfg.get_string("paths.reports_out", "");
    Vocabulary vocab = load_vocab(cfg);
    TensorMap pre = load_checkpoint(cfg.require_string("paths.amateur_ckpt"));
    TinyDecoderConfig mc =
        infer_decoder_config(pre, static_cast<std::int32_t>(cfg.get_int("model.n_heads", 4)));
    std::vector<SynthesizedPair> data = load_pairs_jsonl(cfg.require_string("paths.dataset_in"));
    TrainConfig train_cfg = train_from(cfg);
    ChatTemplate chat = chat_from(cfg);
    const std::string ckpt_out = cfg.require_string("paths.ckpt_out");
    const std::string log_path = cfg.get_string("train.log_out", "");

    std::ofstream log_stream;
    std::ostream* log = nullptr;
    if (!log_path.empty()) {
        log_stream.open(log_path, std::ios::trunc);
        if (!log_stream) fail_data("cannot write training log '" + log_path + "'");
        log = &log_stream;
    }

    TrainStepInfo last{};
    std::int64_t steps = 0;
    StepObserver observer = [&](const TrainStepInfo& info, const DecoderParams&) {
        last = info;
        ++steps;
    };

    TensorMap trained = finetune(pre, mc, data, vocab, chat, train_cfg, log, observer);
    save_checkpoint(trained, ckpt_out);

    out << "trained " << steps << " steps on " << data.size() << " pairs; final loss " << last.loss
        << "; wrote " << ckpt_out << "\n";
    if (!report_path.empty()) {
        json j;
        j["steps"] = steps;
        j["pairs"] = static_cast<std::int64_t>(data.size());
        j["final_loss"] = last.loss;
        j["final_lr"] = last.lr;
        j["config"] = json::parse(cfg.echo_json());
        write_file(report_path, j.dump(2));
    }
    return 0;
}

// Shared input loading for the two study drivers.
std::vector<InstructionRecord> load_study_records(RunConfig& cfg) {
    IngestResult ingested = ingest_jsonl(cfg.require_string("paths.instructions_in"));
    auto [kept, prep] = preprocess(std::move(ingested.records), filters_from(cfg));
    (void)prep;
    return kept;
}

int cmd_replicate_fig3(RunConfig& cfg, std::ostream& out, std::ostream&) {
    const std::string report_path = cfg.get_string("paths.reports_out", "");
    Vocabulary vocab = load_vocab(cfg);
    TensorMap post = load_checkpoint(cfg.require_string("paths.expert_ckpt"));
    TensorMap pre = load_checkpoint(cfg.require_string("paths.amateur_ckpt"));
    TinyDecoderConfig mc =
        infer_decoder_config(post, static_cast<std::int32_t>(cfg.get_int("model.n_heads", 4)));
    std::vector<InstructionRecord> records = load_study_records(cfg);

    TrendConfig tc;
    tc.contrastive = contrastive_from(cfg, vocab);
    tc.train = train_from(cfg);
    tc.chat = chat_from(cfg);
    tc.seeds.clear();
    for (std::int64_t s : cfg.get_int_list("fig3.seeds", {0, 1, 2, 3, 4}))
        tc.seeds.push_back(static_cast<std::uint64_t>(s));
    tc.sample_count = cfg.get_int("fig3.sample_count", 512);
    tc.workers = static_cast<int>(cfg.get_int("pipeline.workers", 1));

    TrendReport report = replicate_trend(post, pre, mc, vocab, records, tc);
    out << report.to_json() << "\n";
    if (!report_path.empty()) write_file(report_path, report.to_json());
    return report.gate_passed ? 0 : 5;
}

int cmd_alpha_sweep(RunConfig& cfg, std::ostream& out, std::ostream&) {
    const std::string report_path = cfg.get_string("paths.reports_out", "");
    Vocabulary vocab = load_vocab(cfg);
    TensorMap post = load_checkpoint(cfg.require_string("paths.expert_ckpt"));
    TensorMap pre = load_checkpoint(cfg.require_string("paths.amateur_ckpt"));
    TinyDecoderConfig mc =
        infer_decoder_config(post, static_cast<std::int32_t>(cfg.get_int("model.n_heads", 4)));
    std::vector<InstructionRecord> records = load_study_records(cfg);

    TrendConfig base;
    base.contrastive = contrastive_from(cfg, vocab);
    base.train = train_from(cfg);
    base.chat = chat_from(cfg);
    base.sample_count = cfg.get_int("sweep.sample_count", 512);
    base.workers = static_cast<int>(cfg.get_int("pipeline.workers", 1));
    std::vector<double> alphas = cfg.get_double_list("sweep.alphas", {0.01, 0.04, 0.07, 0.1});

    AlphaSweepReport report = alpha_sweep(post, pre, mc, vocab, records, base, alphas);
    out << report.to_json() << "\n";
    if (!report_path.empty()) write_file(report_path, report.to_json());
    return 0;
}

// ---------------------------------------------------------------- registry

struct KeyDoc {
    const char* key;
    const char* desc;
};

struct CommandSpec {
    const char* name;
    const char* summary;
    std::vector<KeyDoc> keys;
    int (*handler)(RunConfig&, std::ostream&, std::ostream&);
};

const std::vector<KeyDoc> kProviderKeys = {
    {"paths.vocab", "vocabulary JSON file"},
    {"paths.expert_ckpt", "expert checkpoint path or http:// endpoint"},
    {"paths.amateur_ckpt", "amateur checkpoint path or http:// endpoint"},
    {"model.n_heads", "attention heads when loading checkpoints (default 4)"},
    {"provider.max_context", "context window for http providers (default 1048576)"},
    {"provider.timeout_ms", "http provider timeout (default 30000)"},
    {"provider.max_retries", "http provider retries (default 2)"},
};

const std::vector<KeyDoc> kDecodeKeys = {
    {"contrastive.alpha", "plausibility cutoff in [0,1] (default 0.06)"},
    {"contrastive.max_tokens", "response length cap (default 4096)"},
    {"contrastive.mode", "greedy|sample (default greedy)"},
    {"contrastive.temperature", "sampling temperature (default 1.0)"},
    {"contrastive.seed", "sampling seed (default 0)"},
    {"contrastive.extra_stop_tokens", "stop ids beyond eos (default [])"},
    {"chat.prefix", "chat template prefix (default 'user: ')"},
    {"chat.suffix", "chat template suffix (default '\\nassistant: ')"},
};

const std::vector<KeyDoc> kTrainKeys = {
    {"train.preset", "desk|full_scale base preset (default desk)"},
    {"train.learning_rate_peak", "peak learning rate"},
    {"train.learning_rate_min", "final learning rate"},
    {"train.beta1", "AdamW beta1 (default 0.90)"},
    {"train.beta2", "AdamW beta2 (default 0.95)"},
    {"train.warmup_ratio", "warmup fraction of total steps (default 0.1)"},
    {"train.epochs", "training epochs (default 2)"},
    {"train.batch_size", "sequences per optimizer step"},
    {"train.seed", "shuffle seed (default 0)"},
    {"train.loss_mask", "response_only|full_sequence (default response_only)"},
};

const std::vector<KeyDoc> kFilterKeys = {
    {"filter.min_chars", "minimum instruction length (default 1)"},
    {"filter.max_chars", "maximum instruction length (default 4096)"},
    {"filter.template_prefixes", "literal prefixes to reject (documented defaults)"},
    {"filter.dedup.normalize_whitespace", "dedup on whitespace-normalized text (default true)"},
    {"filter.dedup.case_fold", "case-insensitive dedup (default false)"},
};

std::vector<KeyDoc> concat(std::initializer_list<std::vector<KeyDoc>> lists) {
    std::vector<KeyDoc> out;
    for (const auto& l : lists) out.insert(out.end(), l.begin(), l.end());
    return out;
}

const std::vector<CommandSpec>& command_registry() {
    static const std::vector<CommandSpec> registry = {
        {"generate", "decode one response with contrastive decoding",
         concat({kProviderKeys,
                 kDecodeKeys,
                 {{"generate.instruction", "instruction text (required)"},
                  {"generate.raw_prompt", "skip the chat template (default false)"},
                  {"generate.trace_out", "write per-step trace JSONL here"},
                  {"paths.reports_out", "write a JSON run report here"}}}),
         cmd_generate},
        {"synthesize", "build an instruction-tuning dataset from raw instructions",
         concat({kProviderKeys,
                 kDecodeKeys,
                 kFilterKeys,
                 {{"paths.instructions_in", "instruction JSONL input (required)"},
                  {"paths.dataset_out", "dataset JSONL output (required)"},
                  {"pipeline.workers", "decoding worker threads (default 1)"},
                  {"paths.reports_out", "write a JSON run report here"}}}),
         cmd_synthesize},
        {"judge-bestofn", "score candidate responses and pick the winner",
         {{"judge.question", "the user query (required)"},
          {"judge.candidates", "candidate responses (inline list)"},
          {"judge.candidates_file", "candidate responses, one JSON string per line"},
          {"judge.url", "judge endpoint base URL (http mode)"},
          {"judge.model", "judge model name (http mode)"},
          {"judge.timeout_ms", "request timeout (default 60000)"},
          {"judge.max_retries", "transport retries per candidate (default 2)"},
          {"judge.auth_env", "env var NAME holding the bearer token (default JUDGE_API_KEY)"},
          {"judge.in_flight", "concurrent requests (default 4)"},
          {"judge.replies_file", "recorded replies JSONL; skips the network"},
          {"judge.audit_out", "append request/response bodies here (token never logged)"},
          {"paths.reports_out", "write the verdict JSON here"}},
         cmd_judge_bestofn},
        {"chatvec-extract", "subtract two checkpoints into a delta checkpoint",
         {{"paths.expert_ckpt", "post-trained checkpoint (required)"},
          {"paths.amateur_ckpt", "pre-trained checkpoint (required)"},
          {"paths.delta_out", "where to write the delta (required)"}},
         cmd_chatvec_extract},
        {"chatvec-apply", "add a scaled delta onto a base checkpoint",
         {{"paths.amateur_ckpt", "base checkpoint (required)"},
          {"paths.delta_ckpt", "delta checkpoint (required)"},
          {"chatvec.scale", "delta scale (default 1.0)"},
          {"paths.ckpt_out", "where to write the result (required)"}},
         cmd_chatvec_apply},
        {"chatvec-cosine", "cosine similarity between two weight deltas",
         {{"paths.expert_ckpt", "first operand checkpoint (required)"},
          {"paths.amateur_ckpt", "second operand checkpoint (required)"},
          {"paths.reports_out", "write the report JSON here"}},
         cmd_chatvec_cosine},
        {"verify-taylor", "check the first-order residual decays quadratically",
         {{"paths.expert_ckpt", "post-trained checkpoint (required)"},
          {"paths.amateur_ckpt", "pre-trained checkpoint (required)"},
          {"model.n_heads", "attention heads when loading checkpoints (default 4)"},
          {"taylor.probes", "probe points per scale (default 16)"},
          {"taylor.epsilons", "decreasing delta scales (default [0.2,0.1,0.05,0.025])"},
          {"taylor.step", "finite-difference step; 0 selects 1e-3 on the unit direction"},
          {"taylor.seed", "probe sampling seed (default 0)"},
          {"taylor.context_len", "max probe context length (default 8)"},
          {"taylor.ratio_min", "lower bound on residual decay per halving (default 2)"},
          {"taylor.ratio_max", "upper bound on residual decay per halving (default 8)"},
          {"paths.reports_out", "write the report JSON here"}},
         cmd_verify_taylor},
        {"finetune", "supervised fine-tuning of the reference decoder",
         concat({kTrainKeys,
                 {{"paths.vocab", "vocabulary JSON file"},
                  {"paths.amateur_ckpt", "initial weights (required)"},
                  {"model.n_heads", "attention heads when loading checkpoints (default 4)"},
                  {"paths.dataset_in", "training pairs JSONL (required)"},
                  {"paths.ckpt_out", "where to write the trained checkpoint (required)"},
                  {"train.log_out", "write {step, lr, loss, grad_norm} JSONL here"},
                  {"chat.prefix", "chat template prefix (default 'user: ')"},
                  {"chat.suffix", "chat template suffix (default '\\nassistant: ')"},
                  {"paths.reports_out", "write a JSON run report here"}}}),
         cmd_finetune},
        {"replicate-fig3", "contrastive vs vanilla induced-update comparison",
         concat({kProviderKeys,
                 kDecodeKeys,
                 kTrainKeys,
                 kFilterKeys,
                 {{"paths.instructions_in", "instruction JSONL input (required)"},
                  {"fig3.seeds", "training seeds (default [0,1,2,3,4])"},
                  {"fig3.sample_count", "instructions to synthesize (default 512)"},
                  {"pipeline.workers", "decoding worker threads (default 1)"},
                  {"paths.reports_out", "write the report JSON here"}}}),
         cmd_replicate_fig3},
        {"alpha-sweep", "induced-update cosine across a plausibility-cutoff grid",
         concat({kProviderKeys,
                 kDecodeKeys,
                 kTrainKeys,
                 kFilterKeys,
                 {{"paths.instructions_in", "instruction JSONL input (required)"},
                  {"sweep.alphas", "cutoff grid (default [0.01,0.04,0.07,0.1])"},
                  {"sweep.sample_count", "instructions to synthesize (default 512)"},
                  {"pipeline.workers", "decoding worker threads (default 1)"},
                  {"paths.reports_out", "write the report JSON here"}}}),
         cmd_alpha_sweep},
    };
    return registry;
}

const CommandSpec* find_command(const std::string& name) {
    for (const auto& spec : command_registry()) {
        if (name == spec.name) return &spec;
    }
    return nullptr;
}

std::string footer_for(const CommandSpec& spec) {
    std::string s = "Configuration keys (via --config file and --set KEY=VALUE):\n";
    for (const auto& k : spec.keys) {
        s += "  ";
        s += k.key;
        s += "\n      ";
        s += k.desc;
        s += "\n";
    }
    return s;
}

} // namespace

std::vector<std::string> command_names() {
    std::vector<std::string> out;
    for (const auto& spec : command_registry()) out.push_back(spec.name);
    return out;
}

std::vector<std::string> command_config_keys(const std::string& command) {
    const CommandSpec* spec = find_command(command);
    if (!spec) fail_config("unknown command '" + command + "'");
    std::vector<std::string> out;
    for (const auto& k : spec->keys) out.push_back(k.key);
    return out;
}

int run_command(const std::string& name, RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const CommandSpec* spec = find_command(name);
    if (!spec) fail_config("unknown command '" + name + "'");
    return spec->handler(cfg, out, err);
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"contrastive-decoding dataset synthesis and verification toolkit"};
    app.require_subcommand(1);

    struct SubArgs {
        std::string config_file;
        std::vector<std::string> sets;
        std::string expert, amateur, vocab, report;
    };
    std::map<std::string, SubArgs> args;
    std::string selected;

    for (const auto& spec : command_registry()) {
        CLI::App* sub = app.add_subcommand(spec.name, spec.summary);
        SubArgs& a = args[spec.name];
        sub->add_option("--config", a.config_file, "JSON config file");
        sub->add_option("--set", a.sets, "KEY=VALUE override (repeatable)");
        sub->add_option("--expert", a.expert, "shorthand for paths.expert_ckpt");
        sub->add_option("--amateur", a.amateur, "shorthand for paths.amateur_ckpt");
        sub->add_option("--vocab", a.vocab, "shorthand for paths.vocab");
        sub->add_option("--report", a.report, "shorthand for paths.reports_out");
        sub->footer(footer_for(spec));
        sub->callback([&selected, name = std::string(spec.name)]() { selected = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    try {
        RunConfig cfg;
        const SubArgs& a = args[selected];
        if (!a.config_file.empty()) cfg.merge_file(a.config_file);
        for (const std::string& s : a.sets) cfg.apply_set(s);
        if (!a.expert.empty()) cfg.set_string("paths.expert_ckpt", a.expert);
        if (!a.amateur.empty()) cfg.set_string("paths.amateur_ckpt", a.amateur);
        if (!a.vocab.empty()) cfg.set_string("paths.vocab", a.vocab);
        if (!a.report.empty()) cfg.set_string("paths.reports_out", a.report);
        return run_command(selected, cfg, out, err);
    } catch (const Error& e) {
        err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace cdsynth
