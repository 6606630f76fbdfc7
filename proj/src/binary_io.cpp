#include "pigan/binary_io.hpp"

#include <bit>
#include <limits>

namespace pigan {

void BinaryWriter::u8(std::uint8_t v)
{
    out_.put(static_cast<char>(v));
}

void BinaryWriter::u16(std::uint16_t v)
{
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void BinaryWriter::u32(std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void BinaryWriter::u64(std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void BinaryWriter::f32(float v)
{
    u32(std::bit_cast<std::uint32_t>(v));
}

void BinaryWriter::f64(double v)
{
    u64(std::bit_cast<std::uint64_t>(v));
}

void BinaryWriter::bytes(const void* data, std::size_t size)
{
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
}

void BinaryWriter::string(const std::string& s)
{
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
}

void BinaryReader::fail(const std::string& what) const
{
    throw FormatError(context_ + ": " + what);
}

std::uint8_t BinaryReader::u8()
{
    const int c = in_.get();
    if (c == std::char_traits<char>::eof()) fail("truncated file");
    return static_cast<std::uint8_t>(c);
}

std::uint16_t BinaryReader::u16()
{
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v = static_cast<std::uint16_t>(v | (std::uint16_t{u8()} << (8 * i)));
    return v;
}

std::uint32_t BinaryReader::u32()
{
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{u8()} << (8 * i);
    return v;
}

std::uint64_t BinaryReader::u64()
{
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{u8()} << (8 * i);
    return v;
}

float BinaryReader::f32()
{
    return std::bit_cast<float>(u32());
}

double BinaryReader::f64()
{
    return std::bit_cast<double>(u64());
}

void BinaryReader::bytes(void* data, std::size_t size)
{
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(size));
    if (static_cast<std::size_t>(in_.gcount()) != size) fail("truncated file");
}

std::string BinaryReader::string(std::size_t max_size)
{
    const auto n = u32();
    if (n > max_size) fail("string length " + std::to_string(n) + " exceeds limit");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
}

bool BinaryReader::at_end()
{
    return in_.peek() == std::char_traits<char>::eof();
}

void write_tensor(BinaryWriter& w, const Tensor& t)
{
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.f32(v);
}

Tensor read_tensor(BinaryReader& r)
{
    const auto rank = r.u32();
    if (rank > 8) r.fail("tensor rank " + std::to_string(rank) + " out of range");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
        d = r.u32();
        if (d == 0) r.fail("zero tensor dimension");
        if (n > (std::size_t{1} << 32) / d) r.fail("tensor too large");
        n *= d;
    }
    std::vector<float> data(n);
    for (auto& v : data) v = r.f32();
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace pigan
