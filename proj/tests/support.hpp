#pragma once

#include <cstdint>
#include <string>

#include "cola/model.hpp"
#include "cola/simgen.hpp"

namespace cola::test {

// n rows from the simulation model, as one site.
inline SiteDataset simulated_site(std::size_t n, std::uint64_t seed, std::string id = "s") {
  const Population pop = generate_population(n, seed);
  return SiteDataset::create(pop.y, pop.a, pop.x, std::move(id));
}

inline double max_rel_diff(const Matrix& a, const Matrix& b) {
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace cola::test
