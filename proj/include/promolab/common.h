#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace promolab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input files.
class IngestError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or violated operation precondition.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A query ledger would exceed its cap.
class BudgetError : public Error {
 public:
  BudgetError(std::string endpoint, std::uint64_t cap, std::uint64_t attempted);

  const std::string& endpoint() const { return endpoint_; }
  std::uint64_t cap() const { return cap_; }
  std::uint64_t attempted() const { return attempted_; }

 private:
  std::string endpoint_;
  std::uint64_t cap_;
  std::uint64_t attempted_;
};

/// Network failure that survived all retries. `retriable()` reports whether
/// the last failure was of a transient kind.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, bool retriable) : Error(what), retriable_(retriable) {}
  bool retriable() const { return retriable_; }

 private:
  bool retriable_;
};

/// Remote output that could not be parsed into the expected shape.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// An experiment stage failed. Carries the stage name for diagnostics.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// ---------------------------------------------------------------------------
// Seeding and randomness
// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x);

/// Derive an independent child seed from a parent seed and a path of indices.
/// Serial and parallel callers that use the same path get the same seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

/// Portable pseudo-random source. Only the raw engine output is used so that
/// every derived quantity is identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  /// Uniform integer in [0, n). n must be positive.
  std::size_t index(std::size_t n);
  /// Uniform double in [0, 1).
  double uniform();
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  std::uint64_t state_;
};

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);

std::string to_hex(std::uint64_t value);

/// ceil(fraction * n) with a small tolerance so that 0.1 * 20 yields 2.
std::size_t ceil_fraction(double fraction, std::size_t n);

}  // namespace promolab
