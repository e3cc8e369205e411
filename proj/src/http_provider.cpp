#include "cdsynth/http_provider.hpp"

#include <nlohmann/json.hpp>

#define CPPHTTPLIB_NO_EXCEPTIONS
#include <httplib.h>

#include "http_util.hpp"

namespace cdsynth {

using nlohmann::json;

HttpLogitProvider::HttpLogitProvider(HttpProviderConfig cfg, Vocabulary vocab, std::string id)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)), id_(std::move(id)) {
    if (cfg_.max_context < 2) fail_config("max_context must be at least 2");
    if (cfg_.max_retries < 0) fail_config("max_retries must be non-negative");
    detail::ParsedUrl url = detail::parse_http_url(cfg_.url);
    host_ = url.host;
    port_ = url.port;
    path_ = url.path;
}

LogProbVector HttpLogitProvider::next_logprobs(std::span<const std::int32_t> context) const {
    if (context.empty()) fail_data("context must be non-empty");
    if (static_cast<std::int64_t>(context.size()) > cfg_.max_context)
        fail_data("context exceeds the provider window");
    for (std::int32_t t : context) {
        if (t < 0 || t >= vocab_.size())
            fail_data("token id " + std::to_string(t) + " outside the vocabulary");
    }

    json body;
    body["context"] = std::vector<std::int32_t>(context.begin(), context.end());
    const std::string payload = body.dump();

    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        httplib::Client client(host_, port_);
        client.set_connection_timeout(0, cfg_.timeout_ms * 1000);
        client.set_read_timeout(cfg_.timeout_ms / 1000, (cfg_.timeout_ms % 1000) * 1000);
        httplib::Result res = client.Post(path_, payload, "application/json");
        if (!res) {
            last_error = "transport failure (" + httplib::to_string(res.error()) + ")";
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP status " + std::to_string(res->status);
            continue;
        }
        json reply = json::parse(res->body, nullptr, false);
        if (reply.is_discarded() || !reply.is_object() || !reply.contains("logprobs") ||
            !reply["logprobs"].is_array())
            fail_endpoint("provider '" + id_ + "' returned a malformed body");
        std::vector<double> values;
        values.reserve(reply["logprobs"].size());
        for (const auto& v : reply["logprobs"]) {
            if (!v.is_number()) fail_endpoint("provider '" + id_ + "' returned a non-numeric entry");
            values.push_back(v.get<double>());
        }
        if (static_cast<std::int32_t>(values.size()) != vocab_.size())
            fail_endpoint("provider '" + id_ + "' returned " + std::to_string(values.size()) +
                          " entries for a vocabulary of " + std::to_string(vocab_.size()));
        // Re-normalize: a server computing in single precision drifts within
        // the documented tolerance, and raw logits become valid log-probs.
        return LogProbVector(log_softmax(values));
    }
    fail_endpoint("provider '" + id_ + "' unreachable after " + std::to_string(cfg_.max_retries + 1) +
                  " attempts: " + last_error);
}

} // namespace cdsynth
