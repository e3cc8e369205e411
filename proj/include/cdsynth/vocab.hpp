#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cdsynth/error.hpp"

namespace cdsynth {

struct SpecialTokens {
    std::optional<std::int32_t> bos;
    std::int32_t eos = -1;
    std::optional<std::int32_t> pad;

    bool operator==(const SpecialTokens&) const = default;
};

// Token inventory shared by a model pair. Token ids are dense [0, V); the
// string for each id is unique. An end-of-sequence id is mandatory.
class Vocabulary {
public:
    Vocabulary(std::vector<std::string> tokens, SpecialTokens special);

    std::int32_t size() const { return static_cast<std::int32_t>(tokens_.size()); }
    const std::string& token(std::int32_t id) const;
    std::optional<std::int32_t> id_of(std::string_view token) const;
    bool is_special(std::int32_t id) const;
    const SpecialTokens& special() const { return special_; }
    const std::vector<std::string>& tokens() const { return tokens_; }

    bool operator==(const Vocabulary& other) const {
        return tokens_ == other.tokens_ && special_ == other.special_;
    }

    // Character-level builder: reserves <pad>=0, <bos>=1, <eos>=2 and then
    // one token per character of `charset`, in order.
    static Vocabulary from_chars(std::string_view charset);

    // JSON file format: {"tokens": [...], "bos": id|null, "eos": id,
    // "pad": id|null}.
    static Vocabulary load_json(const std::filesystem::path& path);
    void save_json(const std::filesystem::path& path) const;

private:
    std::vector<std::string> tokens_;
    SpecialTokens special_;
    std::unordered_map<std::string, std::int32_t> index_;
};

// Greedy longest-prefix-match tokenizer over the non-special vocabulary
// entries. Text that cannot be matched is a hard error, never a silent skip.
class Tokenizer {
public:
    explicit Tokenizer(const Vocabulary& vocab);

    std::vector<std::int32_t> encode(std::string_view text) const;
    // Concatenates the strings of non-special tokens; special ids are
    // dropped. Out-of-range ids are an error.
    std::string decode(std::span<const std::int32_t> ids) const;

    const Vocabulary& vocab() const { return *vocab_; }

private:
    const Vocabulary* vocab_;
    std::unordered_map<std::string, std::int32_t> matchable_;
    std::size_t max_token_len_ = 0;
};

// Fixed chat scaffold wrapped around an instruction before decoding.
struct ChatTemplate {
    std::string prefix = "user: ";
    std::string suffix = "\nassistant: ";

    std::string render(std::string_view instruction) const {
        std::string out;
        out.reserve(prefix.size() + instruction.size() + suffix.size());
        out += prefix;
        out += instruction;
        out += suffix;
        return out;
    }
};

// Prompt ids for an instruction: optional BOS, then the templated text.
std::vector<std::int32_t> make_prompt(const Tokenizer& tok, const ChatTemplate& tmpl,
                                      std::string_view instruction);

} // namespace cdsynth
