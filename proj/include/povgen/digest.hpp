#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

namespace povgen {

// Incremental SHA-256. Fields fed through `field()` are length-prefixed so
// that concatenation boundaries are part of the digest ("ab","c" != "a","bc").
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    Sha256& update(std::string_view bytes);
    Sha256& field(std::string_view bytes);
    std::string hex_digest();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::string_view bytes);

// Digest over (relative path, file type, content) of every entry below root,
// visited in sorted order. Modification times and permissions other than the
// executable bit are ignored.
std::string tree_digest(const std::filesystem::path& root);

} // namespace povgen
