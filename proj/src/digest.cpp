#include "povgen/digest.hpp"

#include "povgen/error.hpp"
#include "povgen/fsutil.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <vector>

namespace povgen {

namespace fs = std::filesystem;

struct Sha256::Impl {
    EVP_MD_CTX* ctx = nullptr;
};

Sha256::Sha256() : impl_(std::make_unique<Impl>())
{
    impl_->ctx = EVP_MD_CTX_new();
    if (impl_->ctx == nullptr || EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256: digest context initialisation failed");
    }
}

Sha256::~Sha256()
{
    EVP_MD_CTX_free(impl_->ctx);
}

Sha256& Sha256::update(std::string_view bytes)
{
    EVP_DigestUpdate(impl_->ctx, bytes.data(), bytes.size());
    return *this;
}

Sha256& Sha256::field(std::string_view bytes)
{
    std::array<unsigned char, 8> len{};
    auto n = static_cast<std::uint64_t>(bytes.size());
    for (std::size_t i = 0; i < len.size(); ++i) {
        len[i] = static_cast<unsigned char>((n >> (8 * i)) & 0xffU);
    }
    EVP_DigestUpdate(impl_->ctx, len.data(), len.size());
    return update(bytes);
}

std::string Sha256::hex_digest()
{
    std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
    unsigned int out_len = 0;
    EVP_DigestFinal_ex(impl_->ctx, out.data(), &out_len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string hex;
    hex.reserve(out_len * 2);
    for (unsigned int i = 0; i < out_len; ++i) {
        hex.push_back(kHex[out[i] >> 4]);
        hex.push_back(kHex[out[i] & 0x0f]);
    }
    return hex;
}

std::string sha256_hex(std::string_view bytes)
{
    Sha256 h;
    h.update(bytes);
    return h.hex_digest();
}

std::string tree_digest(const fs::path& root)
{
    std::vector<fs::path> entries;
    for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
        entries.push_back(it->path());
    }
    std::sort(entries.begin(), entries.end());

    Sha256 h;
    h.field("tree-v1");
    for (const auto& p : entries) {
        auto st = fs::symlink_status(p);
        h.field(fs::relative(p, root).generic_string());
        if (fs::is_symlink(st)) {
            h.field("l").field(fs::read_symlink(p).generic_string());
        } else if (fs::is_directory(st)) {
            h.field("d");
        } else {
            bool exec = (st.permissions() & fs::perms::owner_exec) != fs::perms::none;
            h.field(exec ? "x" : "f").field(read_text(p));
        }
    }
    return h.hex_digest();
}

} // namespace povgen
