#include "cdsynth/hash.hpp"

#include <fstream>

#include <openssl/evp.h>

#include "cdsynth/error.hpp"

namespace cdsynth {

namespace {

std::string to_hex(const unsigned char* digest, unsigned len) {
    static const char* k = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned i = 0; i < len; ++i) {
        out.push_back(k[digest[i] >> 4]);
        out.push_back(k[digest[i] & 0xf]);
    }
    return out;
}

struct DigestCtx {
    EVP_MD_CTX* ctx;
    DigestCtx() : ctx(EVP_MD_CTX_new()) {
        if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1)
            fail_data("SHA-256 context initialization failed");
    }
    ~DigestCtx() { EVP_MD_CTX_free(ctx); }
    void update(const char* bytes, std::size_t n) {
        if (EVP_DigestUpdate(ctx, bytes, n) != 1) fail_data("SHA-256 update failed");
    }
    std::string finish() {
        unsigned char digest[EVP_MAX_MD_SIZE];
        unsigned len = 0;
        if (EVP_DigestFinal_ex(ctx, digest, &len) != 1) fail_data("SHA-256 finalization failed");
        return to_hex(digest, len);
    }
};

} // namespace

std::string sha256_hex(std::string_view bytes) {
    DigestCtx d;
    d.update(bytes.data(), bytes.size());
    return d.finish();
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_data("cannot open '" + path.string() + "' for hashing");
    DigestCtx d;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        std::streamsize got = in.gcount();
        if (got > 0) d.update(buf, static_cast<std::size_t>(got));
    }
    return d.finish();
}

} // namespace cdsynth
