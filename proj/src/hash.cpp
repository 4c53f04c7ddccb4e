#include "topocontro/hash.hpp"

#include <array>
#include <fstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "topocontro/common.hpp"

namespace topocontro {
namespace {

struct DigestCtx {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    DigestCtx() {
        if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1)
            throw Error("sha256: digest init failed");
    }
    ~DigestCtx() { EVP_MD_CTX_free(ctx); }
    DigestCtx(const DigestCtx&) = delete;
    DigestCtx& operator=(const DigestCtx&) = delete;

    void update(const void* data, std::size_t n) {
        if (EVP_DigestUpdate(ctx, data, n) != 1) throw Error("sha256: update failed");
    }
    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned len = 0;
        if (EVP_DigestFinal_ex(ctx, md.data(), &len) != 1) throw Error("sha256: final failed");
        std::string out;
        out.reserve(len * 2);
        for (unsigned i = 0; i < len; ++i) out += fmt::format("{:02x}", md[i]);
        return out;
    }
};

}  // namespace

std::string sha256_hex(std::string_view data) {
    DigestCtx d;
    d.update(data.data(), data.size());
    return d.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(fmt::format("cannot open '{}' for hashing", path.string()));
    DigestCtx d;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) d.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return d.hex();
}

}  // namespace topocontro
