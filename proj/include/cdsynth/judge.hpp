#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cdsynth/error.hpp"

namespace cdsynth {

// Embedded judge prompts. `best_of_n` is the single-turn scoring rubric with
// {question}/{answer} placeholders; `checklist` is the multi-turn variant
// with {$history}/{$user_query}/{$model_output}/{$checklist}, shipped as a
// selectable resource only.
enum class PromptTemplateId { best_of_n, checklist };

std::string_view prompt_template(PromptTemplateId id);

// Substitutes placeholders in a single pass: substituted values are copied
// verbatim and never re-scanned, so placeholder-shaped text inside a value
// cannot inject. A placeholder that never occurs in the template is an
// error.
std::string render_template(std::string_view tmpl,
                            std::span<const std::pair<std::string_view, std::string_view>> subs);

// The best-of-N rubric with the question and answer filled in.
std::string render_prompt(std::string_view question, std::string_view answer);

struct JudgeVerdict {
    std::string strengths;
    std::string weaknesses;
    int score = 0;       // integral, in [1, 10]
    std::string raw;     // the matched JSON object text
};

enum class VerdictErrorKind {
    no_json_object,    // no balanced, parseable JSON object in the reply
    missing_key,       // an object was found but lacks strengths/weaknesses/score
    score_not_numeric, // score exists but cannot be coerced to an integer
    score_out_of_range // integral score outside [1, 10]
};

const char* to_string(VerdictErrorKind k);

class VerdictError : public Error {
public:
    VerdictError(VerdictErrorKind kind, std::string msg)
        : Error(ErrorKind::data, std::move(msg)), verdict_kind_(kind) {}
    VerdictErrorKind verdict_kind() const noexcept { return verdict_kind_; }

private:
    VerdictErrorKind verdict_kind_;
};

// Extracts the verdict from a judge reply. The reply may contain analysis
// prose, markdown fences, or stray braces; the parser scans for balanced
// brace regions (string-aware) and takes the LAST well-formed JSON object
// carrying all of strengths/weaknesses/score. The score is coerced from a
// JSON integer or a numeric string and must be integral in [1, 10].
JudgeVerdict parse_verdict(const std::string& reply);

// Index of the highest-scoring verdict; the first index wins ties.
std::size_t best_of_n(std::span<const JudgeVerdict> verdicts);

// How to reach a judge endpoint. `auth_env` names the environment variable
// holding the bearer token; the token value itself is never stored, printed,
// or logged.
struct JudgeEndpoint {
    std::string base_url; // e.g. "http://127.0.0.1:8080/v1"
    std::string model;
    int timeout_ms = 60000;
    int max_retries = 2;
    std::string auth_env = "JUDGE_API_KEY";
};

// One judge round trip: prompt in, raw reply text out. Implementations
// throw an endpoint error on delivery failure.
class JudgeTransport {
public:
    virtual ~JudgeTransport() = default;
    virtual std::string complete(const std::string& prompt) = 0;
};

// OpenAI-compatible chat-completions client: POST {base_url}/chat/completions
// with {model, messages, temperature: 0}. Transport and non-200 failures are
// retried up to endpoint.max_retries times (so at most 1 + max_retries
// requests per call); a malformed response envelope is not. The optional
// audit stream receives request/response bodies only — never the
// Authorization header, so the token cannot leak into logs.
class HttpJudgeTransport final : public JudgeTransport {
public:
    explicit HttpJudgeTransport(JudgeEndpoint endpoint);
    ~HttpJudgeTransport() override;

    void set_audit(std::ostream* audit) { audit_ = audit; }
    std::string complete(const std::string& prompt) override;

private:
    JudgeEndpoint endpoint_;
    std::ostream* audit_ = nullptr;
};

// Replays pre-recorded replies in request order; used for offline runs and
// deterministic tests.
class RecordedJudgeTransport final : public JudgeTransport {
public:
    explicit RecordedJudgeTransport(std::vector<std::string> replies);
    static RecordedJudgeTransport from_jsonl(const std::string& path);

    std::string complete(const std::string& prompt) override;

private:
    std::vector<std::string> replies_;
    std::size_t next_ = 0;
    std::unique_ptr<std::mutex> mu_;
};

// Per-candidate outcome. Failed candidates carry the error text and are
// excluded from winner selection.
struct CandidateVerdict {
    bool ok = false;
    JudgeVerdict verdict;
    std::string error;
};

struct JudgeResult {
    std::size_t winner = 0; // index into the original candidate list
    std::vector<CandidateVerdict> verdicts;
};

// Scores every candidate for one question and picks the winner among the
// candidates that produced a valid verdict (first index on score ties).
// Raises an endpoint error when every candidate failed. `in_flight` bounds
// concurrent transport calls.
JudgeResult judge_candidates(const std::string& question, std::span<const std::string> candidates,
                             JudgeTransport& transport, int in_flight = 1);

} // namespace cdsynth
