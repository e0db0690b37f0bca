#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bprobe {

// Row-major throughout: weight rows are token embeddings and the checkpoint
// format stores row-major f64 blocks, so this keeps serialization a memcpy.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Exit-code contract: 2 usage, 3 data, 4 numeric.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

// Stable per-item seed derivation so worker scheduling can never change results.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view id, std::uint64_t stream = 0) {
  std::uint64_t h = fnv1a64(id);
  h = fnv1a64(&base, sizeof(base), h);
  h = fnv1a64(&stream, sizeof(stream), h);
  return h;
}

using Rng = std::mt19937_64;

// Shortest round-trip decimal form, locale-free; used by every text artifact.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

inline int argmax_lowest(const Vec& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace bprobe
