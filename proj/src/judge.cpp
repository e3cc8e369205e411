#include "cdsynth/judge.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace cdsynth {

using nlohmann::json;

const char* to_string(VerdictErrorKind k) {
    switch (k) {
    case VerdictErrorKind::no_json_object: return "no_json_object";
    case VerdictErrorKind::missing_key: return "missing_key";
    case VerdictErrorKind::score_not_numeric: return "score_not_numeric";
    case VerdictErrorKind::score_out_of_range: return "score_out_of_range";
    }
    return "unknown";
}

std::string render_template(std::string_view tmpl,
                            std::span<const std::pair<std::string_view, std::string_view>> subs) {
    std::vector<std::size_t> hits(subs.size(), 0);
    std::string out;
    out.reserve(tmpl.size());
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        bool matched = false;
        for (std::size_t i = 0; i < subs.size(); ++i) {
            const std::string_view key = subs[i].first;
            if (tmpl.compare(pos, key.size(), key) == 0) {
                out.append(subs[i].second);
                pos += key.size();
                ++hits[i];
                matched = true;
                break;
            }
        }
        if (!matched) {
            out.push_back(tmpl[pos]);
            ++pos;
        }
    }
    for (std::size_t i = 0; i < subs.size(); ++i) {
        if (hits[i] == 0)
            fail_config("placeholder '" + std::string(subs[i].first) + "' missing from the template");
    }
    return out;
}

std::string render_prompt(std::string_view question, std::string_view answer) {
    const std::pair<std::string_view, std::string_view> subs[] = {
        {"{question}", question},
        {"{answer}", answer},
    };
    return render_template(prompt_template(PromptTemplateId::best_of_n), subs);
}

namespace {

// Scans a balanced brace region starting at `start` (reply[start] == '{'),
// honoring JSON string syntax. Returns one past the closing brace, or 0 when
// the region never closes.
std::size_t balanced_end(const std::string& s, std::size_t start) {
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = start; i < s.size(); ++i) {
        char c = s[i];
        if (in_string) {
            if (c == '\\') {
                ++i; // skip the escaped character
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            --depth;
            if (depth == 0) return i + 1;
            if (depth < 0) return 0;
        }
    }
    return 0;
}

std::string coerce_text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

// Integer score from a JSON value; throws the designated verdict errors.
int coerce_score(const json& v) {
    double num = 0.0;
    if (v.is_number()) {
        num = v.get<double>();
    } else if (v.is_string()) {
        std::string s = v.get<std::string>();
        std::size_t a = s.find_first_not_of(" \t\r\n");
        std::size_t b = s.find_last_not_of(" \t\r\n");
        if (a == std::string::npos)
            throw VerdictError(VerdictErrorKind::score_not_numeric, "score string is empty");
        s = s.substr(a, b - a + 1);
        try {
            std::size_t used = 0;
            num = std::stod(s, &used);
            if (used != s.size())
                throw VerdictError(VerdictErrorKind::score_not_numeric,
                                   "score string '" + s + "' is not a number");
        } catch (const VerdictError&) {
            throw;
        } catch (const std::exception&) {
            throw VerdictError(VerdictErrorKind::score_not_numeric,
                               "score string '" + s + "' is not a number");
        }
    } else {
        throw VerdictError(VerdictErrorKind::score_not_numeric,
                           "score is neither a number nor a numeric string");
    }
    if (!std::isfinite(num) || num != std::floor(num))
        throw VerdictError(VerdictErrorKind::score_not_numeric,
                           "score " + std::to_string(num) + " is not an integer");
    int score = static_cast<int>(num);
    if (score < 1 || score > 10)
        throw VerdictError(VerdictErrorKind::score_out_of_range,
                           "score " + std::to_string(score) + " outside [1, 10]");
    return score;
}

} // namespace

JudgeVerdict parse_verdict(const std::string& reply) {
    bool saw_object = false;
    bool saw_complete = false; // an object with all three keys
    std::string last_complete_text;
    json last_complete;
    std::string last_missing_msg;

    for (std::size_t i = 0; i < reply.size(); ++i) {
        if (reply[i] != '{') continue;
        std::size_t end = balanced_end(reply, i);
        if (end == 0) continue;
        json obj = json::parse(reply.substr(i, end - i), nullptr, false);
        if (obj.is_discarded() || !obj.is_object()) continue;
        saw_object = true;
        std::string missing;
        for (const char* key : {"strengths", "weaknesses", "score"}) {
            if (!obj.contains(key)) {
                if (!missing.empty()) missing += ", ";
                missing += key;
            }
        }
        if (!missing.empty()) {
            last_missing_msg = "object is missing: " + missing;
            continue;
        }
        saw_complete = true;
        last_complete = obj;
        last_complete_text = reply.substr(i, end - i);
    }

    if (!saw_object)
        throw VerdictError(VerdictErrorKind::no_json_object, "no JSON object found in the reply");
    if (!saw_complete)
        throw VerdictError(VerdictErrorKind::missing_key,
                           last_missing_msg.empty() ? "required keys missing" : last_missing_msg);

    JudgeVerdict verdict;
    verdict.score = coerce_score(last_complete["score"]);
    verdict.strengths = coerce_text(last_complete["strengths"]);
    verdict.weaknesses = coerce_text(last_complete["weaknesses"]);
    verdict.raw = std::move(last_complete_text);
    return verdict;
}

std::size_t best_of_n(std::span<const JudgeVerdict> verdicts) {
    if (verdicts.empty()) fail_data("cannot pick a winner from an empty verdict list");
    std::size_t best = 0;
    for (std::size_t i = 1; i < verdicts.size(); ++i) {
        // Strictly greater keeps the first index on ties.
        if (verdicts[i].score > verdicts[best].score) best = i;
    }
    return best;
}

RecordedJudgeTransport::RecordedJudgeTransport(std::vector<std::string> replies)
    : replies_(std::move(replies)), mu_(std::make_unique<std::mutex>()) {}

RecordedJudgeTransport RecordedJudgeTransport::from_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_data("cannot open recorded replies '" + path + "'");
    std::vector<std::string> replies;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_string()) {
            replies.push_back(j.get<std::string>());
        } else if (j.is_object() && j.contains("reply") && j["reply"].is_string()) {
            replies.push_back(j["reply"].get<std::string>());
        } else {
            fail_data("recorded replies '" + path + "': each line must be a JSON string or {\"reply\": ...}");
        }
    }
    return RecordedJudgeTransport(std::move(replies));
}

std::string RecordedJudgeTransport::complete(const std::string&) {
    std::lock_guard<std::mutex> lock(*mu_);
    if (next_ >= replies_.size()) fail_endpoint("recorded transport has no replies left");
    return replies_[next_++];
}

JudgeResult judge_candidates(const std::string& question, std::span<const std::string> candidates,
                             JudgeTransport& transport, int in_flight) {
    if (candidates.empty()) fail_data("candidate list is empty");
    if (in_flight < 1) fail_config("in_flight must be positive");

    JudgeResult result;
    result.verdicts.resize(candidates.size());

    auto judge_one = [&](std::size_t i) {
        CandidateVerdict& cv = result.verdicts[i];
        try {
            std::string reply = transport.complete(render_prompt(question, candidates[i]));
            cv.verdict = parse_verdict(reply);
            cv.ok = true;
        } catch (const Error& e) {
            cv.ok = false;
            cv.error = e.what();
        }
    };

    if (in_flight == 1 || candidates.size() <= 1) {
        for (std::size_t i = 0; i < candidates.size(); ++i) judge_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&]() {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= candidates.size()) return;
                judge_one(i);
            }
        };
        std::vector<std::thread> pool;
        std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(in_flight), candidates.size());
        for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::vector<JudgeVerdict> ok_verdicts;
    std::vector<std::size_t> ok_index;
    for (std::size_t i = 0; i < result.verdicts.size(); ++i) {
        if (result.verdicts[i].ok) {
            ok_verdicts.push_back(result.verdicts[i].verdict);
            ok_index.push_back(i);
        }
    }
    if (ok_verdicts.empty()) fail_endpoint("every candidate failed to produce a verdict");
    result.winner = ok_index[best_of_n(ok_verdicts)];
    return result;
}

} // namespace cdsynth
