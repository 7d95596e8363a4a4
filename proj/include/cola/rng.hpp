// Seeded randomness for the simulation study.
//
// Every draw comes from std::mt19937_64 seeded through splitmix64 applied to
// (base seed, replicate, stream tag, attempt). Uniforms, normals and Bernoulli
// draws are transformed by hand so results do not depend on the standard
// library's distribution implementations.
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cola {

inline constexpr std::string_view kGeneratorName = "mt19937_64/splitmix64-seeded";

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Order-sensitive mix of seed components.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0) noexcept;

enum class Stream : std::uint64_t {
  covariates = 0x636f76,
  treatment = 0x747274,
  outcome = 0x6f7574,
  assignment = 0x617367,
  rare_site = 0x726172,
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double normal() noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace cola
