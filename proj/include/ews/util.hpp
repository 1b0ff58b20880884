#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace ews {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

// 64-bit FNV-1a; used for config and schema fingerprints.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v);

// splitmix64 step; derives independent child seeds from a root seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag) {
  return mix_seed(root ^ fnv1a64(tag));
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) {
  return mix_seed(root + mix_seed(index + 0x632BE59BD9B4E019ULL));
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index is handled
// exactly once; callers write into pre-sized slots so results do not depend
// on the job count.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

std::vector<std::string> split(std::string_view s, char sep);
std::string trim(std::string_view s);

// Strict double parse: whole token must be consumed and the value finite.
bool parse_double(std::string_view token, double& out);
bool parse_int64(std::string_view token, std::int64_t& out);

std::string format_double(double v);

// ISO-8601 UTC ("2020-01-01T00:00:00Z") for epoch seconds.
std::string iso8601(std::int64_t epoch_s);
std::int64_t parse_iso8601(const std::string& s);

}  // namespace ews
