#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace clipmatrix {

template <typename T>
using Vec2 = Eigen::Matrix<T, 2, 1>;
template <typename T>
using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T>
using Mat3 = Eigen::Matrix<T, 3, 3>;

using Vec2d = Vec2<double>;
using Vec3d = Vec3<double>;
using Mat3d = Mat3<double>;

using Face = std::array<std::uint32_t, 3>;

// Error hierarchy. Callers map these onto exit codes in the CLI.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad configuration or mismatched dimensions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent file contents (models, checkpoints).
class LoadError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ScorerError : public Error {
 public:
  using Error::Error;
};

// The scorer could not be reached at all (after retries).
class ScorerUnavailable : public ScorerError {
 public:
  using ScorerError::ScorerError;
};

// Non-finite values in gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

/// SplitMix64 finalizer; used to derive independent seeds from tuples.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = mix64(seed);
  for (std::uint64_t p : parts) {
    h = mix64(h ^ mix64(p));
  }
  return h;
}

using Rng = std::mt19937_64;

/// Uniform draw in [0,1) from the top 53 bits; independent of the standard
/// library's distribution implementations.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Standard normal draw (Box-Muller, one value per call).
inline double normal01(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

constexpr double kPi = 3.14159265358979323846;

/// H x W x 3 array of doubles, row-major, RGB interleaved, top-left origin.
struct RgbGrid {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  RgbGrid() = default;
  RgbGrid(int h, int w, double fill = 0.0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w * 3, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  std::size_t index(int row, int col) const {
    return (static_cast<std::size_t>(row) * width + col) * 3;
  }
  double& at(int row, int col, int ch) { return values[index(row, col) + ch]; }
  double at(int row, int col, int ch) const { return values[index(row, col) + ch]; }
  bool same_shape(const RgbGrid& other) const {
    return height == other.height && width == other.width;
  }

  bool operator==(const RgbGrid&) const = default;
};

/// Rendered image, values in [0,1].
using Image = RgbGrid;
/// Loss gradient with respect to an Image.
using ImageGrad = RgbGrid;

}  // namespace clipmatrix
