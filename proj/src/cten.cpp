#include "collabod/cten.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace collabod::cten {
namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                       static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error("CTEN: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint8_t get_u8(std::istream& in) {
    char c;
    if (!in.get(c)) throw Error("CTEN: truncated header");
    return static_cast<std::uint8_t>(c);
}

}  // namespace

void write(std::ostream& out, const Tensor& t) {
    out.write("CTEN", 4);
    out.put(static_cast<char>(kVersion));
    out.put(static_cast<char>(kDtypeF32));
    out.put(static_cast<char>(4));
    for (int d : t.shape().dims) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    if (!out) throw Error("CTEN: write failed");
}

Tensor read(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "CTEN", 4) != 0)
        throw Error("CTEN: bad magic");
    const std::uint8_t version = get_u8(in);
    if (version != kVersion) throw Error("CTEN: unsupported version " + std::to_string(version));
    const std::uint8_t dtype = get_u8(in);
    if (dtype != kDtypeF32) throw Error("CTEN: unsupported dtype code " + std::to_string(dtype));
    const std::uint8_t rank = get_u8(in);
    if (rank < 1 || rank > 4) throw Error("CTEN: unsupported rank " + std::to_string(rank));
    Shape shape{1, 1, 1, 1};
    for (int i = 0; i < rank; ++i) {
        const std::uint32_t e = get_u32(in);
        if (e == 0 || e > static_cast<std::uint32_t>(1) << 30)
            throw Error("CTEN: invalid extent " + std::to_string(e) + " at axis " + std::to_string(i));
        shape.dims[4 - rank + i] = static_cast<int>(e);
    }
    std::vector<float> data(shape.numel());
    for (auto& v : data) {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error("CTEN: truncated payload");
        const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                                   (static_cast<std::uint32_t>(b[1]) << 8) |
                                   (static_cast<std::uint32_t>(b[2]) << 16) |
                                   (static_cast<std::uint32_t>(b[3]) << 24);
        v = std::bit_cast<float>(bits);
    }
    return Tensor(shape, std::move(data));
}

std::vector<std::uint8_t> encode(const Tensor& t) {
    std::ostringstream out(std::ios::binary);
    write(out, t);
    const std::string s = out.str();
    return {s.begin(), s.end()};
}

Tensor decode(const std::vector<std::uint8_t>& bytes) {
    std::istringstream in(std::string(bytes.begin(), bytes.end()), std::ios::binary);
    Tensor t = read(in);
    if (in.peek() != std::char_traits<char>::eof()) throw Error("CTEN: trailing bytes");
    return t;
}

void save(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("CTEN: cannot open " + path.string() + " for writing");
    write(out, t);
}

Tensor load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("CTEN: cannot open " + path.string());
    return read(in);
}

}  // namespace collabod::cten
