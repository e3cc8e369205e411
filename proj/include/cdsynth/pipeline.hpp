#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "cdsynth/records.hpp"
#include "cdsynth/tiny_decoder.hpp"
#include "cdsynth/vocab.hpp"

namespace cdsynth {

// Version tag recorded in dataset provenance and manifests.
extern const char* const kGeneratorVersion;

struct DedupRules {
    bool normalize_whitespace = true;
    bool case_fold = false;
};

struct FilterRules {
    std::int64_t min_chars = 1;
    std::int64_t max_chars = 4096;
    // Literal prefixes that mark templated/boilerplate instructions.
    std::vector<std::string> template_prefixes;
    DedupRules dedup;

    static std::vector<std::string> default_template_prefixes();
    static FilterRules defaults();
    void validate() const;
};

struct IngestResult {
    std::vector<InstructionRecord> records;
    std::int64_t malformed_lines = 0;
};

struct PreprocessReport {
    std::int64_t input_count = 0;
    std::int64_t kept = 0;
    std::int64_t dropped_empty = 0;
    std::int64_t dropped_short = 0;
    std::int64_t dropped_long = 0;
    std::int64_t dropped_template = 0;
    std::int64_t dropped_duplicate = 0;

    std::int64_t dropped_total() const {
        return dropped_empty + dropped_short + dropped_long + dropped_template + dropped_duplicate;
    }
};

// Collapses runs of ASCII whitespace to single spaces and trims the ends.
std::string normalize_whitespace(std::string_view text);

// Reads instruction JSONL: one {"id"?, "text", "source"?, "lang"?} object
// per line. Lines that fail to parse, lack a usable text, or carry wrong
// types are counted, not fatal. A missing id becomes the hex SHA-256 of the
// normalized text.
IngestResult ingest_jsonl(const std::filesystem::path& path);

// Ordered filters: whitespace normalization, length bounds, template-prefix
// rejection, then exact-match dedup (first occurrence wins).
std::pair<std::vector<InstructionRecord>, PreprocessReport> preprocess(
    std::vector<InstructionRecord> records, const FilterRules& rules);

// Contrastive synthesis over a record batch. Each record decodes under its
// own seed derived from (cfg.seed, record.id), so the result set does not
// depend on the worker count; outputs land at the record's index.
std::vector<SynthesizedPair> synthesize(const std::vector<InstructionRecord>& records,
                                        const LogitProvider& expert, const LogitProvider& amateur,
                                        const ContrastiveConfig& cfg, const Tokenizer& tok,
                                        const ChatTemplate& tmpl, int workers = 1);

struct Manifest {
    std::int64_t count = 0;
    std::string config_json; // resolved-config echo, serialized
    std::string sha256;      // digest of the emitted data file
};

// Writes pairs as JSONL sorted by instruction id, plus a sibling
// "<data>.manifest.json" with {count, config, sha256}. Returns the manifest.
Manifest emit_jsonl(const std::vector<SynthesizedPair>& pairs, const std::filesystem::path& data_path,
                    const std::string& config_echo_json);

// Reads back a dataset emitted by emit_jsonl.
std::vector<SynthesizedPair> load_pairs_jsonl(const std::filesystem::path& path);

} // namespace cdsynth
