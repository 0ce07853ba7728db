#pragma once

// Little-endian primitive IO shared by the cache file and the checkpoint.

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

namespace marm::detail {

class Writer {
  public:
    explicit Writer(std::ostream& out) : out_(out) {}
    template <typename U>
    void put(U v) {
        std::array<char, sizeof(U)> buf;
        for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out_.write(buf.data(), buf.size());
    }
    void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
    void put_f64(double f) { put(std::bit_cast<std::uint64_t>(f)); }
    void put_bytes(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }

  private:
    std::ostream& out_;
};

// Error must be constructible from (std::string, std::uint64_t offset).
template <typename Error>
class Reader {
  public:
    explicit Reader(std::istream& in) : in_(in) {}
    template <typename U>
    U get(const char* what) {
        std::array<unsigned char, sizeof(U)> buf;
        in_.read(reinterpret_cast<char*>(buf.data()), buf.size());
        if (in_.gcount() != static_cast<std::streamsize>(buf.size())) {
            throw Error(std::string("truncated file while reading ") + what,
                        offset_ + static_cast<std::uint64_t>(in_.gcount()));
        }
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(U(buf[i]) << (8 * i));
        offset_ += sizeof(U);
        return v;
    }
    float get_f32(const char* what) { return std::bit_cast<float>(get<std::uint32_t>(what)); }
    double get_f64(const char* what) { return std::bit_cast<double>(get<std::uint64_t>(what)); }
    std::uint64_t offset() const { return offset_; }
    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  private:
    std::istream& in_;
    std::uint64_t offset_ = 0;
};

}  // namespace marm::detail
