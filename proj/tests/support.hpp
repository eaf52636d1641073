#pragma once

// Random fixtures shared by the test binaries.

#include <cstddef>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "gmil/bag_graph.hpp"
#include "gmil/linalg.hpp"
#include "gmil/model.hpp"

namespace fixture {

inline gmil::Matrix random_matrix(std::size_t r, std::size_t c, gmil::Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
  gmil::Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

inline gmil::Vector random_vector(std::size_t n, gmil::Rng& rng, double lo = -1.0, double hi = 1.0) {
  gmil::Vector v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Features in [-1, 1]; about a third of the instances are perturbed copies
// of earlier ones so similarity graphs have edges.
inline gmil::Bag random_bag(std::size_t k, std::size_t f, gmil::Rng& rng, int label = 0) {
  gmil::Bag bag{"b", label, {}};
  for (std::size_t i = 0; i < k; ++i) {
    gmil::Vector x = random_vector(f, rng);
    if (i > 0 && rng.below(3) == 0) {
      const auto& src = bag.instances[rng.below(i)].features;
      for (std::size_t c = 0; c < f; ++c) x[c] = src[c] + 0.2 * x[c];
    }
    bag.instances.push_back({x, std::nullopt});
  }
  return bag;
}

// Distinct cells of a side x side grid, chosen at random.
inline gmil::Bag random_grid_bag(std::size_t k, std::size_t f, std::size_t side, gmil::Rng& rng) {
  std::vector<std::size_t> cells(side * side);
  std::iota(cells.begin(), cells.end(), 0);
  rng.shuffle(cells);
  gmil::Bag bag = random_bag(k, f, rng);
  for (std::size_t i = 0; i < k; ++i) {
    bag.instances[i].grid_pos =
        gmil::GridPos{static_cast<int>(cells[i] / side), static_cast<int>(cells[i] % side)};
  }
  return bag;
}

inline std::vector<std::size_t> random_perm(std::size_t n, gmil::Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  rng.shuffle(p);
  return p;
}

inline gmil::ModelConfig small_config(std::size_t input_dim) {
  gmil::ModelConfig c;
  c.input_dim = input_dim;
  c.conv_dims = {5, 4};
  c.attention_dim = 3;
  return c;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("gmil_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fixture
