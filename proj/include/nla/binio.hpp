#ifndef NLA_BINIO_HPP
#define NLA_BINIO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace nla {

class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Byte sink with explicit little-endian encoding for every scalar.
class ByteWriter {
public:
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    const std::vector<char>& buffer() const { return buf_; }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i)
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    std::vector<char> buf_;
};

/// Cursor over a byte buffer; every read reports the offending offset on
/// truncation.
class ByteReader {
public:
    explicit ByteReader(std::vector<char> data) : data_(std::move(data)) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s(data_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4, false)); }
    std::uint64_t u64() { return get(8, false); }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::uint32_t u32_be() { return static_cast<std::uint32_t>(get(4, true)); }
    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1, false)); }

private:
    void need(std::size_t n) const {
        if (remaining() < n)
            throw FormatError("truncated file", pos_);
    }
    std::uint64_t get(int n, bool big_endian) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            const auto b = static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i]));
            v |= big_endian ? b << (8 * (n - 1 - i)) : b << (8 * i);
        }
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::vector<char> data_;
    std::size_t pos_ = 0;
};

std::vector<char> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);

/// Write to a sibling temp file, then rename over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
inline void write_file_atomic(const std::filesystem::path& path, const std::vector<char>& contents) {
    write_file_atomic(path, std::string_view(contents.data(), contents.size()));
}

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view data);

/// Shortest decimal text that round-trips the double exactly.
std::string format_double(double v);

} // namespace nla

#endif // NLA_BINIO_HPP
