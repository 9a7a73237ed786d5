#include "nla/binio.hpp"

#include <array>
#include <atomic>
#include <charconv>
#include <fstream>
#include <iterator>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

namespace nla {

std::vector<char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_file_text(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return {bytes.begin(), bytes.end()};
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    static std::atomic<unsigned> counter{0};
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ostringstream suffix;
    suffix << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id()) << '.' << counter++;
    const std::filesystem::path tmp = path.string() + suffix.str();
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out)
            throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

std::string format_double(double v) {
    std::array<char, 32> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc())
        throw std::runtime_error("format_double failed");
    return {buf.data(), ptr};
}

} // namespace nla
