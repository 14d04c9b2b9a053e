#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>

#include "json.hpp"

// Shared layout of the engine's binary files:
//   16-byte magic (ASCII tag, zero padded) | u32 LE header length | UTF-8 JSON header | payload
namespace xfe::io {

inline constexpr std::size_t kMagicSize = 16;

void write_header(std::ostream& out, std::string_view magic, const nlohmann::json& header);

// Reads and checks magic and header; `offset` is advanced past them.
nlohmann::json read_header(std::istream& in, std::string_view magic, std::size_t& offset);

void write_f32(std::ostream& out, std::span<const float> values);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);

// Each reader throws FormatError naming the expected and actual byte counts on a short read.
void read_f32(std::istream& in, std::span<float> values, std::size_t& offset, std::string_view what);
std::uint32_t read_u32(std::istream& in, std::size_t& offset, std::string_view what);
std::uint64_t read_u64(std::istream& in, std::size_t& offset, std::string_view what);
std::string read_string(std::istream& in, std::size_t length, std::size_t& offset, std::string_view what);

// Throws FormatError unless the stream is exhausted.
void expect_end(std::istream& in, std::size_t offset);

}  // namespace xfe::io
