#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>

namespace llmoe {

// FNV-1a 64-bit. Stable across platforms, used for prompt hashes and
// input-content digests.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex64(std::uint64_t v);

// splitmix64 finalizer; used to derive independent sub-seeds from one seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Fixed 4-decimal rendering, locale independent ("0.1000", "-0.4000").
std::string format_fixed4(double v);

// Fixed N-decimal rendering, locale independent.
std::string format_fixed(double v, int decimals);

// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

// Case-insensitive search; npos when absent.
std::size_t ifind(std::string_view haystack, std::string_view needle);

// Current UTC time as ISO-8601 "yyyy-mm-ddThh:mm:ssZ".
std::string utc_timestamp();

// Writes content to path via a temp file + rename so readers never observe
// a partial file.
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

// FNV-1a digest of a file's bytes, as 16 hex chars.
std::string file_digest(const std::string& path);

}  // namespace llmoe
