#include "cdsynth/judge.hpp"

#include <cstdlib>
#include <ostream>

#include <nlohmann/json.hpp>

#define CPPHTTPLIB_NO_EXCEPTIONS
#include <httplib.h>

#include "http_util.hpp"

namespace cdsynth {

using nlohmann::json;

HttpJudgeTransport::HttpJudgeTransport(JudgeEndpoint endpoint) : endpoint_(std::move(endpoint)) {
    if (endpoint_.max_retries < 0) fail_config("max_retries must be non-negative");
    detail::parse_http_url(endpoint_.base_url); // validate eagerly
}

HttpJudgeTransport::~HttpJudgeTransport() = default;

std::string HttpJudgeTransport::complete(const std::string& prompt) {
    detail::ParsedUrl url = detail::parse_http_url(endpoint_.base_url);
    std::string path = url.path;
    if (!path.empty() && path.back() == '/') path.pop_back();
    path += "/chat/completions";

    json body;
    body["model"] = endpoint_.model;
    body["messages"] = json::array({json{{"role", "user"}, {"content", prompt}}});
    body["temperature"] = 0;
    const std::string payload = body.dump();

    // The bearer token is read from the named environment variable at call
    // time and handed straight to the header; it is never logged.
    const char* token = endpoint_.auth_env.empty() ? nullptr : std::getenv(endpoint_.auth_env.c_str());

    std::string last_error;
    for (int attempt = 0; attempt <= endpoint_.max_retries; ++attempt) {
        httplib::Client client(url.host, url.port);
        client.set_connection_timeout(0, endpoint_.timeout_ms * 1000);
        client.set_read_timeout(endpoint_.timeout_ms / 1000, (endpoint_.timeout_ms % 1000) * 1000);
        httplib::Headers headers;
        if (token) headers.emplace("Authorization", std::string("Bearer ") + token);
        httplib::Result res = client.Post(path, headers, payload, "application/json");
        if (!res) {
            last_error = "transport failure (" + httplib::to_string(res.error()) + ")";
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP status " + std::to_string(res->status);
            continue;
        }
        if (audit_) {
            // Bodies only: the Authorization header never reaches the log.
            json line;
            line["request"] = payload;
            line["response"] = res->body;
            (*audit_) << line.dump() << "\n";
        }
        json reply = json::parse(res->body, nullptr, false);
        if (reply.is_discarded() || !reply.is_object() || !reply.contains("choices") ||
            !reply["choices"].is_array() || reply["choices"].empty())
            fail_endpoint("judge returned a malformed completion envelope");
        const json& first = reply["choices"][0];
        if (!first.contains("message") || !first["message"].contains("content") ||
            !first["message"]["content"].is_string())
            fail_endpoint("judge completion has no message content");
        return first["message"]["content"].get<std::string>();
    }
    fail_endpoint("judge endpoint unreachable after " + std::to_string(endpoint_.max_retries + 1) +
                  " attempts: " + last_error);
}

} // namespace cdsynth
