#pragma once

// Raw little-endian blob files and the manifest.json container shared by feature
// fixtures, checkpoints and gallery feature caches.

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "posefuse/tensor.hpp"

namespace posefuse {

enum class DType { kF32Le, kF64Le };

std::string to_string(DType dtype);
DType parse_dtype(const std::string& text);
std::size_t dtype_size(DType dtype) noexcept;

void write_blob(const std::filesystem::path& file, std::span<const float> values);
void write_blob(const std::filesystem::path& file, std::span<const double> values);

/// Reads exactly `count` values. `what` names the entry in error messages.
/// Throws MissingLayer if the file is absent, ShapeMismatch if its size is wrong.
std::vector<float> read_blob_f32(const std::filesystem::path& file, std::size_t count,
                                 const std::string& what);
std::vector<double> read_blob_f64(const std::filesystem::path& file, std::size_t count,
                                  const std::string& what);

/// Parses a JSON document; FormatError on malformed input, IoError if unreadable.
nlohmann::json read_json(const std::filesystem::path& file);
/// Writes `doc` with two-space indentation and a trailing newline.
void write_json(const std::filesystem::path& file, const nlohmann::json& doc);

void write_text(const std::filesystem::path& file, const std::string& text);
std::string read_text(const std::filesystem::path& file);

/// 64-bit FNV-1a, used for model and gallery fingerprints.
class Fnv1a {
 public:
  void update(std::span<const std::uint8_t> bytes) noexcept;
  void update(std::string_view text) noexcept;
  void update(std::span<const double> values) noexcept;
  std::uint64_t digest() const noexcept { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string fingerprint_hex(std::uint64_t fingerprint);
std::uint64_t parse_fingerprint_hex(const std::string& text);

// Helpers that throw FormatError naming the missing/invalid key.
const nlohmann::json& require_key(const nlohmann::json& doc, const char* key,
                                  const std::string& context);
Shape3 parse_shape(const nlohmann::json& value, const std::string& context);
nlohmann::json shape_json(const Shape3& shape);

}  // namespace posefuse
