#include "cdsynth/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <mutex>
#include <thread>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "cdsynth/decoding.hpp"
#include "cdsynth/hash.hpp"
#include "cdsynth/rng.hpp"

namespace cdsynth {

using nlohmann::json;

const char* const kGeneratorVersion = "cdsynth-0.1.0";

std::vector<std::string> FilterRules::default_template_prefixes() {
    return {
        "as an ai language model",
        "i'm sorry, but",
        "translate the following",
        "repeat after me",
    };
}

FilterRules FilterRules::defaults() {
    FilterRules r;
    r.template_prefixes = default_template_prefixes();
    return r;
}

void FilterRules::validate() const {
    if (min_chars < 0) fail_config("min_chars must be non-negative");
    if (max_chars < min_chars) fail_config("max_chars must be at least min_chars");
}

std::string normalize_whitespace(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char c : text) {
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
            if (!out.empty()) pending_space = true;
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(c);
    }
    return out;
}

IngestResult ingest_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail_data("cannot open instruction file '" + path.string() + "'");
    IngestResult result;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("text") || !j["text"].is_string()) {
            ++result.malformed_lines;
            continue;
        }
        InstructionRecord rec;
        rec.text = j["text"].get<std::string>();
        if (normalize_whitespace(rec.text).empty()) {
            ++result.malformed_lines;
            continue;
        }
        bool bad = false;
        auto read_string = [&](const char* key, std::string& into) {
            if (!j.contains(key) || j[key].is_null()) return;
            if (!j[key].is_string()) {
                bad = true;
                return;
            }
            into = j[key].get<std::string>();
        };
        read_string("id", rec.id);
        read_string("source", rec.source);
        read_string("lang", rec.lang);
        if (bad) {
            ++result.malformed_lines;
            continue;
        }
        if (rec.id.empty()) rec.id = sha256_hex(normalize_whitespace(rec.text));
        result.records.push_back(std::move(rec));
    }
    return result;
}

namespace {

std::string ascii_lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

} // namespace

std::pair<std::vector<InstructionRecord>, PreprocessReport> preprocess(
    std::vector<InstructionRecord> records, const FilterRules& rules) {
    rules.validate();
    PreprocessReport report;
    report.input_count = static_cast<std::int64_t>(records.size());

    std::vector<InstructionRecord> kept;
    std::unordered_set<std::string> seen;
    for (InstructionRecord& rec : records) {
        const std::string original = rec.text;
        rec.text = normalize_whitespace(rec.text);
        if (rec.text.empty()) {
            ++report.dropped_empty;
            continue;
        }
        const std::int64_t n = static_cast<std::int64_t>(rec.text.size());
        if (n < rules.min_chars) {
            ++report.dropped_short;
            continue;
        }
        if (n > rules.max_chars) {
            ++report.dropped_long;
            continue;
        }
        bool templated = false;
        const std::string lowered = ascii_lower(rec.text);
        for (const std::string& prefix : rules.template_prefixes) {
            if (lowered.starts_with(ascii_lower(prefix))) {
                templated = true;
                break;
            }
        }
        if (templated) {
            ++report.dropped_template;
            continue;
        }
        std::string key = rules.dedup.normalize_whitespace ? rec.text : original;
        if (rules.dedup.case_fold) key = ascii_lower(key);
        if (!seen.insert(key).second) {
            ++report.dropped_duplicate;
            continue;
        }
        kept.push_back(std::move(rec));
    }
    report.kept = static_cast<std::int64_t>(kept.size());
    return {std::move(kept), report};
}

std::vector<SynthesizedPair> synthesize(const std::vector<InstructionRecord>& records,
                                        const LogitProvider& expert, const LogitProvider& amateur,
                                        const ContrastiveConfig& cfg, const Tokenizer& tok,
                                        const ChatTemplate& tmpl, int workers) {
    cfg.validate();
    if (workers < 1) fail_config("worker count must be positive");
    if (!(expert.vocab() == amateur.vocab()))
        fail_data("expert and amateur must share an identical vocabulary");
    {
        std::unordered_set<std::string> ids;
        for (const auto& rec : records) {
            if (rec.id.empty()) fail_data("record with empty id");
            if (!ids.insert(rec.id).second) fail_data("duplicate record id '" + rec.id + "'");
        }
    }

    const std::int64_t window = std::min(expert.max_context(), amateur.max_context());
    std::vector<SynthesizedPair> out(records.size());

    auto run_one = [&](std::size_t i) {
        const InstructionRecord& rec = records[i];
        ContrastiveConfig local = cfg;
        local.seed = derive_seed(cfg.seed, rec.id);

        SynthesizedPair pair;
        pair.instruction = rec;
        pair.provenance.expert_id = expert.id();
        pair.provenance.amateur_id = amateur.id();
        pair.provenance.alpha = cfg.alpha;
        pair.provenance.mode = cfg.mode;
        pair.provenance.seed = local.seed;
        pair.provenance.generator_version = kGeneratorVersion;

        std::vector<std::int32_t> prompt = make_prompt(tok, tmpl, rec.text);
        if (static_cast<std::int64_t>(prompt.size()) + 1 > window) {
            // No room to decode even one token: flag, don't fail the batch.
            pair.provenance.stop_reason = StopReason::context_overflow;
            pair.response.clear();
            pair.tokens_emitted = 0;
        } else {
            GenerationResult gen = generate(expert, amateur, prompt, local);
            pair.provenance.stop_reason = gen.stop_reason;
            pair.response = tok.decode(gen.response);
            pair.tokens_emitted = static_cast<std::int64_t>(gen.response.size());
        }
        out[i] = std::move(pair);
    };

    if (workers == 1 || records.size() <= 1) {
        for (std::size_t i = 0; i < records.size(); ++i) run_one(i);
        return out;
    }

    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string error_msg;
    ErrorKind error_kind = ErrorKind::data;
    std::mutex error_mu;

    auto worker_fn = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= records.size() || failed.load()) return;
            try {
                run_one(i);
            } catch (const Error& e) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!failed.exchange(true)) {
                    error_msg = e.what();
                    error_kind = e.kind();
                }
                return;
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!failed.exchange(true)) {
                    error_msg = e.what();
                    error_kind = ErrorKind::data;
                }
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    const int count = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(workers), records.size()));
    pool.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) pool.emplace_back(worker_fn);
    for (auto& t : pool) t.join();
    if (failed.load()) fail(error_kind, error_msg);
    return out;
}

namespace {

json pair_to_json(const SynthesizedPair& p) {
    json j;
    j["id"] = p.instruction.id;
    j["instruction"] = p.instruction.text;
    j["response"] = p.response;
    json prov;
    prov["expert_id"] = p.provenance.expert_id;
    prov["amateur_id"] = p.provenance.amateur_id;
    prov["alpha"] = p.provenance.alpha;
    prov["mode"] = to_string(p.provenance.mode);
    prov["seed"] = p.provenance.seed;
    prov["stop_reason"] = to_string(p.provenance.stop_reason);
    j["provenance"] = std::move(prov);
    return j;
}

} // namespace

Manifest emit_jsonl(const std::vector<SynthesizedPair>& pairs, const std::filesystem::path& data_path,
                    const std::string& config_echo_json) {
    std::vector<const SynthesizedPair*> order;
    order.reserve(pairs.size());
    for (const auto& p : pairs) order.push_back(&p);
    std::sort(order.begin(), order.end(),
              [](const SynthesizedPair* a, const SynthesizedPair* b) {
                  return a->instruction.id < b->instruction.id;
              });
    for (std::size_t i = 1; i < order.size(); ++i) {
        if (order[i - 1]->instruction.id == order[i]->instruction.id)
            fail_data("duplicate id '" + order[i]->instruction.id + "' in emitted dataset");
    }

    {
        std::ofstream out(data_path, std::ios::binary | std::ios::trunc);
        if (!out) fail_data("cannot write dataset '" + data_path.string() + "'");
        for (const SynthesizedPair* p : order) out << pair_to_json(*p).dump() << "\n";
        out.flush();
        if (!out) fail_data("write failed for dataset '" + data_path.string() + "'");
    }

    Manifest manifest;
    manifest.count = static_cast<std::int64_t>(pairs.size());
    manifest.config_json = config_echo_json;
    manifest.sha256 = sha256_file(data_path);

    json config = json::parse(config_echo_json, nullptr, false);
    if (config.is_discarded()) fail_config("config echo is not valid JSON");
    json mj;
    mj["count"] = manifest.count;
    mj["config"] = std::move(config);
    mj["sha256"] = manifest.sha256;
    std::filesystem::path manifest_path = data_path;
    manifest_path += ".manifest.json";
    std::ofstream mout(manifest_path, std::ios::binary | std::ios::trunc);
    if (!mout) fail_data("cannot write manifest '" + manifest_path.string() + "'");
    mout << mj.dump(2) << "\n";
    return manifest;
}

std::vector<SynthesizedPair> load_pairs_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail_data("cannot open dataset '" + path.string() + "'");
    std::vector<SynthesizedPair> out;
    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j.contains("instruction") ||
            !j.contains("response"))
            fail_data("dataset '" + path.string() + "' line " + std::to_string(line_no) +
                      " is malformed");
        SynthesizedPair p;
        p.instruction.id = j["id"].get<std::string>();
        p.instruction.text = j["instruction"].get<std::string>();
        p.response = j["response"].get<std::string>();
        if (j.contains("provenance") && j["provenance"].is_object()) {
            const json& prov = j["provenance"];
            if (prov.contains("expert_id")) p.provenance.expert_id = prov["expert_id"].get<std::string>();
            if (prov.contains("amateur_id"))
                p.provenance.amateur_id = prov["amateur_id"].get<std::string>();
            if (prov.contains("alpha")) p.provenance.alpha = prov["alpha"].get<double>();
            if (prov.contains("mode"))
                p.provenance.mode = selection_mode_from_string(prov["mode"].get<std::string>());
            if (prov.contains("seed")) p.provenance.seed = prov["seed"].get<std::uint64_t>();
            if (prov.contains("stop_reason")) {
                std::string sr = prov["stop_reason"].get<std::string>();
                if (sr == "stop_token") p.provenance.stop_reason = StopReason::stop_token;
                else if (sr == "max_tokens") p.provenance.stop_reason = StopReason::max_tokens;
                else if (sr == "context_overflow") p.provenance.stop_reason = StopReason::context_overflow;
                else fail_data("unknown stop_reason '" + sr + "'");
            }
        }
        out.push_back(std::move(p));
    }
    return out;
}

} // namespace cdsynth
