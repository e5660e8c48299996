#include "posefuse/blob_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "posefuse/error.hpp"

namespace posefuse {

namespace fs = std::filesystem;

namespace {

template <typename Word>
Word byteswap(Word w) noexcept {
  Word out = 0;
  for (std::size_t i = 0; i < sizeof(Word); ++i) {
    out = (out << 8) | (w & 0xff);
    w >>= 8;
  }
  return out;
}

template <typename T, typename Word>
void write_blob_impl(const fs::path& file, std::span<const T> values) {
  static_assert(sizeof(T) == sizeof(Word));
  std::vector<char> bytes(values.size() * sizeof(T));
  for (std::size_t i = 0; i < values.size(); ++i) {
    Word w = std::bit_cast<Word>(values[i]);
    if constexpr (std::endian::native == std::endian::big) w = byteswap(w);
    std::memcpy(bytes.data() + i * sizeof(T), &w, sizeof(T));
  }
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + file.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + file.string() + "'");
}

template <typename T, typename Word>
std::vector<T> read_blob_impl(const fs::path& file, std::size_t count, const std::string& what) {
  std::error_code ec;
  if (!fs::is_regular_file(file, ec)) throw MissingLayer(what);
  const auto bytes_on_disk = fs::file_size(file, ec);
  if (ec) throw IoError("cannot stat '" + file.string() + "'");
  if (bytes_on_disk != count * sizeof(T)) {
    throw ShapeMismatch("blob for '" + what + "' holds " + std::to_string(bytes_on_disk) +
                        " bytes, expected " + std::to_string(count * sizeof(T)));
  }
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open '" + file.string() + "'");
  std::vector<char> bytes(count * sizeof(T));
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw IoError("short read on '" + file.string() + "'");
  std::vector<T> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    Word w;
    std::memcpy(&w, bytes.data() + i * sizeof(T), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) w = byteswap(w);
    values[i] = std::bit_cast<T>(w);
  }
  return values;
}

}  // namespace

std::string to_string(DType dtype) { return dtype == DType::kF32Le ? "f32le" : "f64le"; }

DType parse_dtype(const std::string& text) {
  if (text == "f32le") return DType::kF32Le;
  if (text == "f64le") return DType::kF64Le;
  throw ShapeMismatch("unsupported dtype '" + text + "'");
}

std::size_t dtype_size(DType dtype) noexcept { return dtype == DType::kF32Le ? 4 : 8; }

void write_blob(const fs::path& file, std::span<const float> values) {
  write_blob_impl<float, std::uint32_t>(file, values);
}

void write_blob(const fs::path& file, std::span<const double> values) {
  write_blob_impl<double, std::uint64_t>(file, values);
}

std::vector<float> read_blob_f32(const fs::path& file, std::size_t count, const std::string& what) {
  return read_blob_impl<float, std::uint32_t>(file, count, what);
}

std::vector<double> read_blob_f64(const fs::path& file, std::size_t count,
                                  const std::string& what) {
  return read_blob_impl<double, std::uint64_t>(file, count, what);
}

nlohmann::json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open '" + file.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed JSON in '" + file.string() + "': " + e.what());
  }
}

void write_json(const fs::path& file, const nlohmann::json& doc) {
  write_text(file, doc.dump(2) + "\n");
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + file.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + file.string() + "'");
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open '" + file.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void Fnv1a::update(std::span<const std::uint8_t> bytes) noexcept {
  for (std::uint8_t b : bytes) {
    state_ ^= b;
    state_ *= 0x100000001b3ULL;
  }
}

void Fnv1a::update(std::string_view text) noexcept {
  update(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                       text.size()));
}

void Fnv1a::update(std::span<const double> values) noexcept {
  for (double v : values) {
    std::uint64_t w = std::bit_cast<std::uint64_t>(v);
    std::uint8_t le[8];
    for (auto& b : le) {
      b = static_cast<std::uint8_t>(w & 0xff);
      w >>= 8;
    }
    update(std::span<const std::uint8_t>(le, 8));
  }
}

std::string fingerprint_hex(std::uint64_t fingerprint) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fingerprint));
  return buf;
}

std::uint64_t parse_fingerprint_hex(const std::string& text) {
  if (text.size() != 16) throw FormatError("fingerprint must be 16 hex digits");
  std::uint64_t out = 0;
  for (char ch : text) {
    out <<= 4;
    if (ch >= '0' && ch <= '9') {
      out |= static_cast<std::uint64_t>(ch - '0');
    } else if (ch >= 'a' && ch <= 'f') {
      out |= static_cast<std::uint64_t>(ch - 'a' + 10);
    } else {
      throw FormatError("fingerprint must be lowercase hex");
    }
  }
  return out;
}

const nlohmann::json& require_key(const nlohmann::json& doc, const char* key,
                                  const std::string& context) {
  if (!doc.is_object() || !doc.contains(key)) {
    throw FormatError(context + ": missing field '" + key + "'");
  }
  return doc.at(key);
}

Shape3 parse_shape(const nlohmann::json& value, const std::string& context) {
  if (!value.is_array() || value.size() != 3) {
    throw FormatError(context + ": shape must be [C, H, W]");
  }
  Shape3 shape;
  try {
    shape.channels = value[0].get<int>();
    shape.height = value[1].get<int>();
    shape.width = value[2].get<int>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(context + ": shape entries must be integers");
  }
  if (shape.channels < 1 || shape.height < 1 || shape.width < 1) {
    throw FormatError(context + ": shape entries must be positive");
  }
  return shape;
}

nlohmann::json shape_json(const Shape3& shape) {
  return nlohmann::json::array({shape.channels, shape.height, shape.width});
}

}  // namespace posefuse
