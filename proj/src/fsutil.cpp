#include "povgen/fsutil.hpp"

#include "povgen/error.hpp"

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

namespace povgen {

namespace fs = std::filesystem;

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_atomic(const fs::path& path, std::string_view content)
{
    static std::atomic<unsigned> counter{0};
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write " + tmp.string());
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) {
            throw IoError("short write to " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot rename onto " + path.string());
    }
}

void copy_tree(const fs::path& from, const fs::path& to)
{
    fs::create_directories(to);
    fs::copy(from, to,
             fs::copy_options::recursive | fs::copy_options::copy_symlinks |
                 fs::copy_options::overwrite_existing);
}

TempDir::TempDir(std::string_view prefix)
{
    std::random_device rd;
    std::mt19937_64 rng(rd());
    for (int attempt = 0; attempt < 32; ++attempt) {
        auto candidate = fs::temp_directory_path() /
                         (std::string(prefix) + "-" + std::to_string(::getpid()) + "-" + std::to_string(rng() % 1000000007ULL));
        std::error_code ec;
        if (fs::create_directory(candidate, ec)) {
            path_ = fs::canonical(candidate);
            return;
        }
    }
    throw IoError("cannot create temporary directory");
}

TempDir::~TempDir()
{
    std::error_code ec;
    fs::remove_all(path_, ec);
}

std::string tail_truncate(std::string_view text, std::size_t max_bytes)
{
    if (text.size() <= max_bytes) {
        return std::string(text);
    }
    std::string out(kTruncatedMarker);
    out += '\n';
    out.append(text.substr(text.size() - max_bytes));
    return out;
}

std::string head_truncate(std::string_view text, std::size_t max_bytes)
{
    if (text.size() <= max_bytes) {
        return std::string(text);
    }
    std::string out(text.substr(0, max_bytes));
    out += '\n';
    out.append(kTruncatedMarker);
    return out;
}

} // namespace povgen
