#include "cdsynth/vocab.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace cdsynth {

using nlohmann::json;

Vocabulary::Vocabulary(std::vector<std::string> tokens, SpecialTokens special)
    : tokens_(std::move(tokens)), special_(special) {
    if (tokens_.empty()) fail_data("vocabulary must be non-empty");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (tokens_[i].empty()) fail_data("vocabulary token " + std::to_string(i) + " is empty");
        auto [_, inserted] = index_.emplace(tokens_[i], static_cast<std::int32_t>(i));
        if (!inserted) fail_data("duplicate vocabulary token '" + tokens_[i] + "'");
    }
    auto check = [&](std::optional<std::int32_t> id, const char* what) {
        if (id && (*id < 0 || *id >= size()))
            fail_data(std::string(what) + " id " + std::to_string(*id) + " outside the vocabulary");
    };
    if (special_.eos < 0 || special_.eos >= size())
        fail_data("eos id " + std::to_string(special_.eos) + " outside the vocabulary");
    check(special_.bos, "bos");
    check(special_.pad, "pad");
}

const std::string& Vocabulary::token(std::int32_t id) const {
    if (id < 0 || id >= size()) fail_data("token id " + std::to_string(id) + " outside the vocabulary");
    return tokens_[static_cast<std::size_t>(id)];
}

std::optional<std::int32_t> Vocabulary::id_of(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? std::nullopt : std::optional<std::int32_t>(it->second);
}

bool Vocabulary::is_special(std::int32_t id) const {
    return id == special_.eos || (special_.bos && id == *special_.bos) ||
           (special_.pad && id == *special_.pad);
}

Vocabulary Vocabulary::from_chars(std::string_view charset) {
    std::vector<std::string> tokens = {"<pad>", "<bos>", "<eos>"};
    for (char c : charset) tokens.emplace_back(1, c);
    SpecialTokens special;
    special.pad = 0;
    special.bos = 1;
    special.eos = 2;
    return Vocabulary(std::move(tokens), special);
}

Vocabulary Vocabulary::load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail_data("cannot open vocabulary '" + path.string() + "'");
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("tokens") || !j["tokens"].is_array())
        fail_data("vocabulary '" + path.string() + "' is not a JSON object with a tokens array");
    std::vector<std::string> tokens;
    for (const auto& t : j["tokens"]) {
        if (!t.is_string()) fail_data("vocabulary '" + path.string() + "' has a non-string token");
        tokens.push_back(t.get<std::string>());
    }
    SpecialTokens special;
    auto read_opt = [&](const char* key) -> std::optional<std::int32_t> {
        if (!j.contains(key) || j[key].is_null()) return std::nullopt;
        if (!j[key].is_number_integer()) fail_data(std::string("vocabulary key '") + key + "' must be an integer or null");
        return j[key].get<std::int32_t>();
    };
    special.bos = read_opt("bos");
    special.pad = read_opt("pad");
    if (!j.contains("eos") || !j["eos"].is_number_integer())
        fail_data("vocabulary '" + path.string() + "' is missing an integer eos id");
    special.eos = j["eos"].get<std::int32_t>();
    return Vocabulary(std::move(tokens), special);
}

void Vocabulary::save_json(const std::filesystem::path& path) const {
    json j;
    j["tokens"] = tokens_;
    j["eos"] = special_.eos;
    j["bos"] = special_.bos ? json(*special_.bos) : json(nullptr);
    j["pad"] = special_.pad ? json(*special_.pad) : json(nullptr);
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail_data("cannot write vocabulary '" + path.string() + "'");
    out << j.dump() << "\n";
}

Tokenizer::Tokenizer(const Vocabulary& vocab) : vocab_(&vocab) {
    for (std::int32_t id = 0; id < vocab.size(); ++id) {
        if (vocab.is_special(id)) continue;
        const std::string& s = vocab.token(id);
        matchable_.emplace(s, id);
        max_token_len_ = std::max(max_token_len_, s.size());
    }
}

std::vector<std::int32_t> Tokenizer::encode(std::string_view text) const {
    std::vector<std::int32_t> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t longest = std::min(max_token_len_, text.size() - pos);
        std::int32_t matched = -1;
        std::size_t matched_len = 0;
        for (std::size_t len = longest; len >= 1; --len) {
            auto it = matchable_.find(std::string(text.substr(pos, len)));
            if (it != matchable_.end()) {
                matched = it->second;
                matched_len = len;
                break;
            }
        }
        if (matched < 0)
            fail_data("text is not tokenizable at byte " + std::to_string(pos) + " ('" +
                      std::string(text.substr(pos, 1)) + "')");
        out.push_back(matched);
        pos += matched_len;
    }
    return out;
}

std::string Tokenizer::decode(std::span<const std::int32_t> ids) const {
    std::string out;
    for (std::int32_t id : ids) {
        if (id < 0 || id >= vocab_->size())
            fail_data("cannot decode token id " + std::to_string(id));
        if (vocab_->is_special(id)) continue;
        out += vocab_->token(id);
    }
    return out;
}

std::vector<std::int32_t> make_prompt(const Tokenizer& tok, const ChatTemplate& tmpl,
                                      std::string_view instruction) {
    std::vector<std::int32_t> ids;
    if (tok.vocab().special().bos) ids.push_back(*tok.vocab().special().bos);
    std::vector<std::int32_t> body = tok.encode(tmpl.render(instruction));
    ids.insert(ids.end(), body.begin(), body.end());
    return ids;
}

} // namespace cdsynth
