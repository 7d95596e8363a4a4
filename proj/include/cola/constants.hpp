// Reference values for the simulation study. Regenerate with
//   cola truth --samples 10000000 --seed 1234567
#pragma once

#include <cstddef>
#include <cstdint>

namespace cola {

/// Marginal causal log odds ratio of the generative model (10^7 draws).
inline constexpr double kTrueLogOr = 0.36447564578255753;
inline constexpr double kTrueMu1 = 0.31968139228357595;
inline constexpr double kTrueMu0 = 0.24606470399540736;
inline constexpr std::uint64_t kTruthSeed = 1234567;
inline constexpr std::size_t kTruthSamples = 10'000'000;

}  // namespace cola
