#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pigan/tensor.hpp"

namespace pigan {

/// Malformed or truncated binary file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Little-endian writer independent of host byte order.
class BinaryWriter {
public:
    explicit BinaryWriter(std::ostream& out) : out_(out) {}

    void u8(std::uint8_t v);
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void f64(double v);
    void bytes(const void* data, std::size_t size);
    /// u32 length followed by raw UTF-8 bytes.
    void string(const std::string& s);

private:
    std::ostream& out_;
};

class BinaryReader {
public:
    BinaryReader(std::istream& in, std::string context) : in_(in), context_(std::move(context)) {}

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    double f64();
    void bytes(void* data, std::size_t size);
    std::string string(std::size_t max_size = 1u << 24);
    /// True when no byte remains.
    bool at_end();

    [[noreturn]] void fail(const std::string& what) const;

private:
    std::istream& in_;
    std::string context_;
};

/// u32 rank, u32 dims[rank], f32 data[product].
void write_tensor(BinaryWriter& w, const Tensor& t);
Tensor read_tensor(BinaryReader& r);

}  // namespace pigan
