#include <doctest.h>

#include "cdsynth/vocab.hpp"
#include "support.hpp"

using namespace cdsynth;
using cdsynth::testing::TempDir;

TEST_SUITE_BEGIN("vocab");

namespace {

Vocabulary letters() { return Vocabulary::from_chars("abcdefghijklmnopqrstuvwxyz :\n"); }

} // namespace

TEST_CASE("from_chars reserves the special ids and adds one token per character") {
    Vocabulary v = Vocabulary::from_chars("ab");
    CHECK(v.size() == 5);
    CHECK(v.special().pad == 0);
    CHECK(v.special().bos == 1);
    CHECK(v.special().eos == 2);
    CHECK(v.token(0) == "<pad>");
    CHECK(v.token(1) == "<bos>");
    CHECK(v.token(2) == "<eos>");
    CHECK(v.token(3) == "a");
    CHECK(v.token(4) == "b");
    CHECK(v.id_of("b") == 4);
    CHECK_FALSE(v.id_of("z").has_value());
    CHECK(v.is_special(0));
    CHECK(v.is_special(2));
    CHECK_FALSE(v.is_special(3));
}

TEST_CASE("vocabulary validation rejects duplicates, empties, and bad special ids") {
    SpecialTokens sp;
    sp.eos = 0;
    CHECK_THROWS_AS(Vocabulary({"<eos>", "x", "x"}, sp), Error);
    CHECK_THROWS_AS(Vocabulary({"<eos>", ""}, sp), Error);
    SpecialTokens out_of_range;
    out_of_range.eos = 5;
    CHECK_THROWS_AS(Vocabulary({"a", "b"}, out_of_range), Error);
    SpecialTokens negative;
    negative.eos = 0;
    negative.bos = -2;
    CHECK_THROWS_AS(Vocabulary({"<eos>", "a"}, negative), Error);
}

TEST_CASE("json round trip preserves tokens and specials") {
    TempDir tmp;
    Vocabulary v = letters();
    v.save_json(tmp.file("vocab.json"));
    Vocabulary back = Vocabulary::load_json(tmp.file("vocab.json"));
    CHECK(back == v);
}

TEST_CASE("loading a broken vocabulary file is a data error") {
    TempDir tmp;
    cdsynth::testing::write_text(tmp.file("bad.json"), "{\"tokens\": 3}");
    CHECK_THROWS_AS(Vocabulary::load_json(tmp.file("bad.json")), Error);
    CHECK_THROWS_AS(Vocabulary::load_json(tmp.file("missing.json")), Error);
}

TEST_CASE("greedy matching takes the longest prefix at each position") {
    SpecialTokens sp;
    sp.eos = 0;
    Vocabulary v({"<eos>", "a", "ab", "b"}, sp);
    Tokenizer tok(v);
    CHECK(tok.encode("ab") == std::vector<std::int32_t>{2});
    CHECK(tok.encode("aab") == std::vector<std::int32_t>{1, 2});
    CHECK(tok.encode("ba") == std::vector<std::int32_t>{3, 1});
    CHECK(tok.encode("").empty());
}

TEST_CASE("character vocabulary encodes and decodes text losslessly") {
    Vocabulary v = letters();
    Tokenizer tok(v);
    std::string text = "hello world\nnext: line";
    std::vector<std::int32_t> ids = tok.encode(text);
    CHECK(ids.size() == text.size()); // one char per token in this vocabulary
    CHECK(tok.decode(ids) == text);
}

TEST_CASE("unencodable input names the offending position") {
    Vocabulary v = letters();
    Tokenizer tok(v);
    try {
        tok.encode("ok then X");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::data);
        CHECK(std::string(e.what()).find("8") != std::string::npos);
    }
}

TEST_CASE("decode drops special ids and rejects out-of-range ids") {
    Vocabulary v = letters();
    Tokenizer tok(v);
    std::vector<std::int32_t> ids = tok.encode("hi");
    std::vector<std::int32_t> wrapped;
    wrapped.push_back(*v.special().bos);
    wrapped.insert(wrapped.end(), ids.begin(), ids.end());
    wrapped.push_back(v.special().eos);
    CHECK(tok.decode(wrapped) == "hi");

    std::vector<std::int32_t> bad{v.size()};
    CHECK_THROWS_AS(tok.decode(bad), Error);
    std::vector<std::int32_t> negative{-1};
    CHECK_THROWS_AS(tok.decode(negative), Error);
}

TEST_CASE("the chat template wraps the instruction verbatim") {
    ChatTemplate t;
    CHECK(t.render("say hi") == "user: say hi\nassistant: ");
    ChatTemplate bare{"", ""};
    CHECK(bare.render("x") == "x");
}

TEST_CASE("make_prompt is BOS plus the encoded template") {
    Vocabulary v = letters();
    Tokenizer tok(v);
    ChatTemplate t;
    std::vector<std::int32_t> prompt = make_prompt(tok, t, "say hi");
    REQUIRE(!prompt.empty());
    CHECK(prompt.front() == *v.special().bos);
    std::vector<std::int32_t> body(prompt.begin() + 1, prompt.end());
    CHECK(body == tok.encode("user: say hi\nassistant: "));

    // Without a BOS id, the prompt is the encoded template alone.
    SpecialTokens sp;
    sp.eos = 0;
    std::vector<std::string> tokens{"<eos>"};
    for (char c : std::string("userayhitn:\n ")) tokens.push_back(std::string(1, c));
    Vocabulary no_bos(tokens, sp);
    Tokenizer tok2(no_bos);
    std::vector<std::int32_t> p2 = make_prompt(tok2, t, "say hi");
    CHECK(p2 == tok2.encode("user: say hi\nassistant: "));
}

TEST_SUITE_END();
