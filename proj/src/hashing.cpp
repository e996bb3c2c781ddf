#include "vgtree/hashing.hpp"

#include "vgtree/errors.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>

namespace vgtree {

namespace {

struct DigestCtx {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};

    DigestCtx()
    {
        if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
            throw Error("sha256 init failed");
    }

    void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx.get(), data, n); }

    std::string hex()
    {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
        static constexpr char kDigits[] = "0123456789abcdef";
        std::string out;
        out.reserve(len * 2);
        for (unsigned int i = 0; i < len; ++i) {
            out.push_back(kDigits[md[i] >> 4]);
            out.push_back(kDigits[md[i] & 0xF]);
        }
        return out;
    }
};

} // namespace

std::string sha256_hex(std::string_view data)
{
    DigestCtx d;
    d.update(data.data(), data.size());
    return d.hex();
}

std::string file_sha256_hex(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot read " + path.string());
    DigestCtx d;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        d.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return d.hex();
}

} // namespace vgtree
