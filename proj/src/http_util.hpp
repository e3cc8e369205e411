#pragma once

#include <string>

#include "cdsynth/error.hpp"

namespace cdsynth::detail {

struct ParsedUrl {
    std::string host;
    int port = 80;
    std::string path = "/";
};

// Minimal parser for plain-HTTP URLs of the form http://host[:port][/path].
inline ParsedUrl parse_http_url(const std::string& url) {
    const std::string scheme = "http://";
    if (url.rfind(scheme, 0) != 0)
        fail_config("endpoint URL '" + url + "' must start with http://");
    std::string rest = url.substr(scheme.size());
    ParsedUrl out;
    std::size_t slash = rest.find('/');
    std::string authority = (slash == std::string::npos) ? rest : rest.substr(0, slash);
    if (slash != std::string::npos) out.path = rest.substr(slash);
    std::size_t colon = authority.find(':');
    if (colon == std::string::npos) {
        out.host = authority;
    } else {
        out.host = authority.substr(0, colon);
        try {
            out.port = std::stoi(authority.substr(colon + 1));
        } catch (const std::exception&) {
            fail_config("endpoint URL '" + url + "' has an invalid port");
        }
    }
    if (out.host.empty()) fail_config("endpoint URL '" + url + "' has an empty host");
    return out;
}

} // namespace cdsynth::detail
