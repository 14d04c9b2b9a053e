#include "xfe/binary_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "xfe/error.hpp"

namespace xfe::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {
void read_exact(std::istream& in, char* dst, std::size_t n, std::size_t& offset, std::string_view what) {
  in.read(dst, static_cast<std::streamsize>(n));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got != n) {
    throw FormatError("truncated " + std::string(what) + ": expected " + std::to_string(n) + " bytes, got " +
                          std::to_string(got),
                      offset + got);
  }
  offset += n;
}
}  // namespace

void write_header(std::ostream& out, std::string_view magic, const nlohmann::json& header) {
  std::array<char, kMagicSize> tag{};
  std::memcpy(tag.data(), magic.data(), std::min(magic.size(), kMagicSize));
  out.write(tag.data(), tag.size());
  const std::string text = header.dump();
  write_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

nlohmann::json read_header(std::istream& in, std::string_view magic, std::size_t& offset) {
  std::array<char, kMagicSize> tag{};
  read_exact(in, tag.data(), tag.size(), offset, "magic");
  std::array<char, kMagicSize> expected{};
  std::memcpy(expected.data(), magic.data(), std::min(magic.size(), kMagicSize));
  if (tag != expected) throw FormatError("bad magic, expected " + std::string(magic), 0);
  const std::uint32_t len = read_u32(in, offset, "header length");
  const std::size_t header_start = offset;
  const std::string text = read_string(in, len, offset, "JSON header");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("malformed JSON header: ") + e.what(), header_start + e.byte);
  }
}

void write_f32(std::ostream& out, std::span<const float> values) {
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
}

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

void read_f32(std::istream& in, std::span<float> values, std::size_t& offset, std::string_view what) {
  read_exact(in, reinterpret_cast<char*>(values.data()), values.size_bytes(), offset, what);
}

std::uint32_t read_u32(std::istream& in, std::size_t& offset, std::string_view what) {
  std::uint32_t v = 0;
  read_exact(in, reinterpret_cast<char*>(&v), sizeof v, offset, what);
  return v;
}

std::uint64_t read_u64(std::istream& in, std::size_t& offset, std::string_view what) {
  std::uint64_t v = 0;
  read_exact(in, reinterpret_cast<char*>(&v), sizeof v, offset, what);
  return v;
}

std::string read_string(std::istream& in, std::size_t length, std::size_t& offset, std::string_view what) {
  std::string s(length, '\0');
  read_exact(in, s.data(), length, offset, what);
  return s;
}

void expect_end(std::istream& in, std::size_t offset) {
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after payload", offset);
  }
}

}  // namespace xfe::io
