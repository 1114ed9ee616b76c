// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace redloop {

using Json = nlohmann::ordered_json;
using Vector = std::vector<double>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data (scores out of range, wrong shapes, bad payloads).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent or missing configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Stable across platforms; used to derive independent RNG streams.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream);

/// Deterministic random source. Streams forked with `fork` do not depend on
/// how many values the parent has already produced.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::size_t index(std::size_t n);
  Rng fork(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Small dense helpers; the latent spaces here are tiny.
double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double squared_distance(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> a);

/// A count over a denominator. Percentages are rendered from the exact
/// fraction, rounded half-up to two decimals.
struct Rate {
  std::size_t hits = 0;
  std::size_t total = 0;

  double fraction() const;
  double percent() const { return 100.0 * fraction(); }
  std::string percent_string() const;
};

std::string sha256_hex(std::string_view bytes);
/// Digest of a latent vector's little-endian IEEE-754 bytes.
std::string latent_digest(std::span<const double> latent);

std::vector<std::string> read_lines(const std::string& path);
std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, std::string_view contents);

Json vector_to_json(std::span<const double> v);
Vector vector_from_json(const Json& j);

}  // namespace redloop
