#pragma once

#include <cstdint>
#include <string>

#include "cdsynth/decoding.hpp"

namespace cdsynth {

// One raw instruction as ingested. `id` is caller-supplied or derived from a
// content hash; it is unique within a run.
struct InstructionRecord {
    std::string id;
    std::string text;
    std::string source; // free-form origin tag, may be empty
    std::string lang = "und";
};

// How a response came to be: enough to reproduce it exactly.
struct Provenance {
    std::string expert_id;
    std::string amateur_id;
    double alpha = 0.0;
    SelectionMode mode = SelectionMode::greedy;
    std::uint64_t seed = 0;
    std::string generator_version;
    StopReason stop_reason = StopReason::stop_token;
};

struct SynthesizedPair {
    InstructionRecord instruction;
    std::string response;
    std::int64_t tokens_emitted = 0;
    Provenance provenance;
};

} // namespace cdsynth
