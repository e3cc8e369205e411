#pragma once

#include <string>

#include "cdsynth/tiny_decoder.hpp"

namespace cdsynth {

struct HttpProviderConfig {
    std::string url;        // full endpoint, e.g. "http://127.0.0.1:9000/logprobs"
    std::int64_t max_context = 1 << 20;
    int timeout_ms = 30000;
    int max_retries = 2;
};

// Remote next-token scorer speaking a one-shot wire protocol: POST the JSON
// body {"context": [ids]} and receive {"logprobs": [V floats]}. The reply is
// re-normalized through log_softmax so single-precision servers still meet
// the distribution invariant. Transport and non-200 failures retry up to
// max_retries times; a malformed body does not.
class HttpLogitProvider final : public LogitProvider {
public:
    HttpLogitProvider(HttpProviderConfig cfg, Vocabulary vocab, std::string id);

    const Vocabulary& vocab() const override { return vocab_; }
    std::int64_t max_context() const override { return cfg_.max_context; }
    LogProbVector next_logprobs(std::span<const std::int32_t> context) const override;
    const std::string& id() const override { return id_; }

private:
    HttpProviderConfig cfg_;
    Vocabulary vocab_;
    std::string id_;
    std::string host_;
    int port_ = 80;
    std::string path_;
};

} // namespace cdsynth
