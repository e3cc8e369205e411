#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cdsynth/decoding.hpp"
#include "support.hpp"

using namespace cdsynth;
using cdsynth::testing::normalized;

TEST_SUITE_BEGIN("decoding");

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Brute-force reference: apply the plausibility inequality, score the
// survivors, then the documented tie-break, all in independent code.
std::vector<std::int32_t> brute_plausible(const LogProbVector& expert, double alpha) {
    std::vector<std::int32_t> out;
    double cutoff = (alpha == 0.0) ? -kInf : std::log(alpha) + expert.max_value();
    for (std::int32_t v = 0; v < expert.size(); ++v) {
        if (expert[v] >= cutoff) out.push_back(v);
    }
    return out;
}

std::int32_t brute_greedy(const LogProbVector& expert, const LogProbVector& amateur, double alpha) {
    std::vector<std::int32_t> candidates = brute_plausible(expert, alpha);
    std::int32_t best = candidates.front();
    for (std::int32_t v : candidates) {
        double sv = expert[v] - amateur[v];
        double sb = expert[best] - amateur[best];
        if (sv > sb || (sv == sb && expert[v] > expert[best])) best = v;
        // equal score and equal expert log-prob: keep the lower id (already held)
    }
    return best;
}

LogProbVector random_logprobs(Rng& rng, std::int32_t v_size, bool with_ties) {
    std::vector<double> logits(static_cast<std::size_t>(v_size));
    for (double& x : logits) x = 4.0 * rng.uniform01() - 2.0;
    if (with_ties && v_size >= 4) {
        // Force exact duplicates so tie-breaks actually trigger.
        logits[1] = logits[0];
        logits[3] = logits[2];
    }
    return normalized(std::move(logits));
}

// Deterministic provider that replays fixed distributions step by step.
class ScriptedProvider final : public LogitProvider {
public:
    ScriptedProvider(Vocabulary vocab, std::vector<std::vector<double>> logits_per_step,
                     std::string id)
        : vocab_(std::move(vocab)), steps_(std::move(logits_per_step)), id_(std::move(id)) {}

    const Vocabulary& vocab() const override { return vocab_; }
    std::int64_t max_context() const override { return 1 << 20; }
    const std::string& id() const override { return id_; }

    LogProbVector next_logprobs(std::span<const std::int32_t> context) const override {
        last_contexts_.push_back(std::vector<std::int32_t>(context.begin(), context.end()));
        std::size_t step = std::min(call_count_++, steps_.size() - 1);
        return normalized(steps_[step]);
    }

    mutable std::vector<std::vector<std::int32_t>> last_contexts_;
    mutable std::size_t call_count_ = 0;

private:
    Vocabulary vocab_;
    std::vector<std::vector<double>> steps_;
    std::string id_;
};

Vocabulary small_vocab() { return Vocabulary::from_chars("abcd"); } // V = 7

} // namespace

TEST_CASE("alpha = 0 admits the whole vocabulary, alpha = 1 only the argmax set") {
    Rng rng(5);
    LogProbVector lp = random_logprobs(rng, 12, false);
    std::vector<std::int32_t> all = plausible_set(lp, 0.0);
    CHECK(all.size() == 12);
    for (std::int32_t v = 0; v < 12; ++v) CHECK(all[static_cast<std::size_t>(v)] == v);

    std::vector<std::int32_t> top = plausible_set(lp, 1.0);
    REQUIRE(top.size() == 1);
    CHECK(top[0] == lp.argmax());

    // With an exact two-way tie at the top, alpha = 1 keeps both.
    LogProbVector tied(std::vector<double>{std::log(0.4), std::log(0.4), std::log(0.2)});
    CHECK(plausible_set(tied, 1.0) == std::vector<std::int32_t>{0, 1});
}

TEST_CASE("plausibility agrees with the inequality on random vectors and shrinks with alpha") {
    Rng rng(11);
    for (int trial = 0; trial < 300; ++trial) {
        std::int32_t v_size = 2 + static_cast<std::int32_t>(rng.below(30));
        LogProbVector lp = random_logprobs(rng, v_size, trial % 3 == 0);
        double prev_size = std::numeric_limits<double>::infinity();
        for (double alpha : {0.0, 0.01, 0.06, 0.3, 0.7, 1.0}) {
            std::vector<std::int32_t> got = plausible_set(lp, alpha);
            CHECK(got == brute_plausible(lp, alpha)); // soundness + completeness
            CHECK(static_cast<double>(got.size()) <= prev_size); // monotone in alpha
            CHECK(!got.empty()); // the argmax always survives
            prev_size = static_cast<double>(got.size());
        }
    }
}

TEST_CASE("scores are the log-prob gap on plausible tokens and -inf elsewhere") {
    LogProbVector expert(log_softmax(std::vector<double>{3.0, 0.0, 2.9}));
    LogProbVector amateur(log_softmax(std::vector<double>{0.0, 0.0, 1.0}));
    std::vector<double> s = contrastive_scores(expert, amateur, 0.5);
    // log(0.5) ~ -0.693: token 1 sits ~3.0 below the max and is implausible.
    CHECK(s[0] == doctest::Approx(expert[0] - amateur[0]));
    CHECK(s[1] == -kInf);
    CHECK(s[2] == doctest::Approx(expert[2] - amateur[2]));
}

TEST_CASE("greedy selection matches brute force over randomized pairs") {
    Rng rng(17);
    ContrastiveConfig cfg;
    cfg.mode = SelectionMode::greedy;
    for (int trial = 0; trial < 500; ++trial) {
        std::int32_t v_size = 2 + static_cast<std::int32_t>(rng.below(24));
        LogProbVector expert = random_logprobs(rng, v_size, trial % 2 == 0);
        LogProbVector amateur = random_logprobs(rng, v_size, trial % 4 == 0);
        for (double alpha : {0.0, 0.06, 0.5, 1.0}) {
            cfg.alpha = alpha;
            Rng step_rng(0);
            std::vector<double> s = contrastive_scores(expert, amateur, alpha);
            CHECK(select_token(s, expert, cfg, step_rng) == brute_greedy(expert, amateur, alpha));
        }
    }
}

TEST_CASE("expert-equals-amateur reduces greedy contrastive decoding to expert argmax") {
    Rng rng(23);
    ContrastiveConfig cfg;
    cfg.alpha = 0.06;
    for (int trial = 0; trial < 200; ++trial) {
        LogProbVector expert = random_logprobs(rng, 16, trial % 2 == 0);
        std::vector<double> s = contrastive_scores(expert, expert, cfg.alpha);
        Rng step_rng(0);
        // All plausible scores are exactly zero; the tie-break must hand the
        // choice to the expert's own argmax.
        CHECK(select_token(s, expert, cfg, step_rng) == expert.argmax());
    }
}

TEST_CASE("score ties break on expert log-prob, then on the lower id") {
    // P_expert = [0.35, 0.35, 0.2, 0.1]: entries 0 and 1 are bit-identical.
    std::vector<double> e{std::log(0.35), std::log(0.35), std::log(0.2), std::log(0.1)};
    LogProbVector expert(e);
    ContrastiveConfig cfg;
    cfg.alpha = 0.0;

    SUBCASE("expert log-prob decides between equal scores") {
        // Tokens 2 and 3 share the exact top score; token 2 carries more
        // expert mass and must win.
        std::vector<double> s{0.1, 0.1, 0.5, 0.5};
        Rng rng(0);
        CHECK(select_token(s, expert, cfg, rng) == 2);
    }

    SUBCASE("full tie lands on the lower id") {
        // Tokens 0 and 1 tie on score and on expert log-prob.
        std::vector<double> s{0.5, 0.5, 0.1, 0.1};
        Rng rng(0);
        CHECK(select_token(s, expert, cfg, rng) == 0);
    }

    SUBCASE("the integrated path produces the same exact-tie behavior") {
        std::vector<double> s = contrastive_scores(expert, expert, 0.0);
        CHECK(s[0] == s[1]); // identical inputs give bit-identical scores
        Rng rng(0);
        CHECK(select_token(s, expert, cfg, rng) == 0);
    }
}

TEST_CASE("sampling is seed-deterministic, plausible-only, and temperature-sensitive") {
    Rng rng(29);
    LogProbVector expert = random_logprobs(rng, 10, false);
    LogProbVector amateur = random_logprobs(rng, 10, false);
    ContrastiveConfig cfg;
    cfg.mode = SelectionMode::sample;
    cfg.alpha = 0.2;
    std::vector<double> s = contrastive_scores(expert, amateur, cfg.alpha);

    std::vector<std::int32_t> plausible = plausible_set(expert, cfg.alpha);
    std::map<std::int32_t, int> histogram;
    Rng sample_rng(77);
    for (int i = 0; i < 2000; ++i) {
        std::int32_t pick = select_token(s, expert, cfg, sample_rng);
        bool in_plausible = false;
        for (std::int32_t v : plausible) in_plausible |= (v == pick);
        REQUIRE(in_plausible);
        histogram[pick]++;
    }

    Rng replay_a(123), replay_b(123);
    for (int i = 0; i < 50; ++i)
        CHECK(select_token(s, expert, cfg, replay_a) == select_token(s, expert, cfg, replay_b));

    // Near-zero temperature concentrates on the greedy winner.
    ContrastiveConfig cold = cfg;
    cold.temperature = 1e-6;
    ContrastiveConfig greedy = cfg;
    greedy.mode = SelectionMode::greedy;
    Rng rng_cold(5), rng_greedy(5);
    std::int32_t greedy_pick = select_token(s, expert, greedy, rng_greedy);
    for (int i = 0; i < 20; ++i) CHECK(select_token(s, expert, cold, rng_cold) == greedy_pick);

    // The expected sampling distribution is softmax(scores) on the plausible
    // set; spot-check the mode of the histogram agrees.
    std::int32_t hist_mode = histogram.begin()->first;
    for (const auto& [token, count] : histogram)
        if (count > histogram[hist_mode]) hist_mode = token;
    CHECK(hist_mode == greedy_pick);
}

TEST_CASE("configuration validation rejects out-of-range settings") {
    ContrastiveConfig cfg;
    cfg.stop_tokens = {2};
    cfg.validate();

    ContrastiveConfig bad = cfg;
    bad.alpha = -0.1;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = cfg;
    bad.alpha = 1.5;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = cfg;
    bad.max_tokens = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = cfg;
    bad.temperature = 0.0;
    bad.mode = SelectionMode::sample;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("generation stops at a stop token and includes it in the response") {
    Vocabulary v = small_vocab();
    // Step 0 prefers token 3 ('a'), step 1 prefers eos (2).
    std::vector<std::vector<double>> expert_steps{{0, 0, -5, 9, 0, 0, 0}, {0, 0, 9, 0, 0, 0, 0}};
    std::vector<std::vector<double>> amateur_steps{{0, 0, 0, 0, 0, 0, 0}, {0, 0, 0, 0, 0, 0, 0}};
    ScriptedProvider expert(v, expert_steps, "e");
    ScriptedProvider amateur(v, amateur_steps, "a");

    ContrastiveConfig cfg;
    cfg.alpha = 0.0;
    cfg.stop_tokens = {v.special().eos};
    cfg.max_tokens = 10;

    std::vector<std::int32_t> prompt{1, 3};
    GenerationResult res = generate(expert, amateur, prompt, cfg);
    CHECK(res.stop_reason == StopReason::stop_token);
    CHECK(res.response == std::vector<std::int32_t>{3, 2});
    REQUIRE(res.trace.size() == 2);
    CHECK(res.trace[0].chosen == 3);
    CHECK(res.trace[1].chosen == 2);
    CHECK(res.trace[0].step == 0);
    CHECK(res.trace[1].step == 1);

    // Both providers saw identical, growing contexts.
    REQUIRE(expert.last_contexts_.size() == 2);
    CHECK(expert.last_contexts_ == amateur.last_contexts_);
    CHECK(expert.last_contexts_[0] == prompt);
    CHECK(expert.last_contexts_[1] == std::vector<std::int32_t>{1, 3, 3});
}

TEST_CASE("generation respects max_tokens") {
    Vocabulary v = small_vocab();
    std::vector<std::vector<double>> steps{{0, 0, -9, 9, 0, 0, 0}}; // never eos
    ScriptedProvider expert(v, steps, "e");
    ScriptedProvider amateur(v, steps, "a");
    ContrastiveConfig cfg;
    cfg.alpha = 0.0;
    cfg.stop_tokens = {v.special().eos};
    cfg.max_tokens = 4;
    GenerationResult res = generate(expert, amateur, std::vector<std::int32_t>{1}, cfg);
    CHECK(res.stop_reason == StopReason::max_tokens);
    CHECK(res.response == std::vector<std::int32_t>{3, 3, 3, 3});
    CHECK(res.trace.size() == 4);
}

TEST_CASE("generation flags context overflow before overrunning the window") {
    Vocabulary v = small_vocab();

    class WindowProvider final : public LogitProvider {
    public:
        explicit WindowProvider(Vocabulary vocab) : vocab_(std::move(vocab)) {}
        const Vocabulary& vocab() const override { return vocab_; }
        std::int64_t max_context() const override { return 3; }
        const std::string& id() const override { return id_; }
        LogProbVector next_logprobs(std::span<const std::int32_t> context) const override {
            REQUIRE(static_cast<std::int64_t>(context.size()) <= 3);
            return normalized(std::vector<double>{0, 0, -9, 9, 0, 0, 0});
        }

    private:
        Vocabulary vocab_;
        std::string id_ = "w";
    };

    WindowProvider expert(v), amateur(v);
    ContrastiveConfig cfg;
    cfg.alpha = 0.0;
    cfg.stop_tokens = {v.special().eos};
    cfg.max_tokens = 50;
    GenerationResult res = generate(expert, amateur, std::vector<std::int32_t>{1, 3}, cfg);
    CHECK(res.stop_reason == StopReason::context_overflow);
    CHECK(res.response == std::vector<std::int32_t>{3}); // one step fits, the next would not
}

TEST_CASE("generation rejects bad prompts, mismatched vocabularies, and no-eos stop sets") {
    Vocabulary v = small_vocab();
    std::vector<std::vector<double>> steps{{0, 0, 9, 0, 0, 0, 0}};
    ScriptedProvider expert(v, steps, "e");
    ScriptedProvider amateur(v, steps, "a");
    ContrastiveConfig cfg;
    cfg.stop_tokens = {v.special().eos};

    CHECK_THROWS_AS(generate(expert, amateur, std::vector<std::int32_t>{}, cfg), Error);
    CHECK_THROWS_AS(generate(expert, amateur, std::vector<std::int32_t>{99}, cfg), Error);

    ContrastiveConfig no_eos = cfg;
    no_eos.stop_tokens = {3};
    CHECK_THROWS_AS(generate(expert, amateur, std::vector<std::int32_t>{1}, no_eos), Error);

    Vocabulary other = Vocabulary::from_chars("xyzw"); // same size, different tokens
    ScriptedProvider mismatched(other, steps, "m");
    CHECK_THROWS_AS(generate(expert, mismatched, std::vector<std::int32_t>{1}, cfg), Error);
}

TEST_CASE("the trace serializes with exactly the documented fields") {
    StepTrace t;
    t.step = 3;
    t.chosen = 5;
    t.plausible_count = 4;
    t.expert_logprob = -0.25;
    t.amateur_logprob = -1.5;
    t.score = 1.25;
    std::ostringstream out;
    write_trace_jsonl(out, std::vector<StepTrace>{t});
    std::string line = out.str();
    CHECK(line.back() == '\n');
    nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.size() == 6);
    CHECK(j["step"] == 3);
    CHECK(j["chosen"] == 5);
    CHECK(j["plausible_count"] == 4);
    CHECK(j["expert_logprob"] == doctest::Approx(-0.25));
    CHECK(j["amateur_logprob"] == doctest::Approx(-1.5));
    CHECK(j["score"] == doctest::Approx(1.25));
}

TEST_CASE("mode and stop-reason names round-trip") {
    CHECK(std::string(to_string(SelectionMode::greedy)) == "greedy");
    CHECK(std::string(to_string(SelectionMode::sample)) == "sample");
    CHECK(selection_mode_from_string("greedy") == SelectionMode::greedy);
    CHECK(selection_mode_from_string("sample") == SelectionMode::sample);
    CHECK_THROWS_AS(selection_mode_from_string("beam"), Error);
    CHECK(std::string(to_string(StopReason::stop_token)) == "stop_token");
    CHECK(std::string(to_string(StopReason::max_tokens)) == "max_tokens");
    CHECK(std::string(to_string(StopReason::context_overflow)) == "context_overflow");
}

TEST_SUITE_END();
