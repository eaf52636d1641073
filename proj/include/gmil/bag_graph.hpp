#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "gmil/kernels.hpp"
#include "gmil/linalg.hpp"

namespace gmil {

struct GridPos {
  int row = 0;
  int col = 0;
  bool operator==(const GridPos&) const = default;
};

struct Instance {
  Vector features;
  std::optional<GridPos> grid_pos;
  bool operator==(const Instance&) const = default;
};

/// A labeled set of instances; the unit of prediction.
struct Bag {
  std::string id;
  int label = 0;
  std::vector<Instance> instances;

  std::size_t size() const noexcept { return instances.size(); }
  std::size_t feature_dim() const noexcept {
    return instances.empty() ? 0 : instances.front().features.size();
  }
  bool has_grid() const noexcept {
    return !instances.empty() && instances.front().grid_pos.has_value();
  }
  /// Instance features stacked into a K x F matrix.
  Matrix feature_matrix() const;

  bool operator==(const Bag&) const = default;
};

/// Checks the Bag invariants: non-empty, uniform feature length, all-or-none
/// grid positions, unique grid positions. Throws ContractError.
void validate_bag(const Bag& bag);

/// Symmetric 0/1 adjacency with unit diagonal plus row degrees.
struct BagGraph {
  Matrix adjacency;
  Vector degrees;
  NeighborLists lists;

  std::size_t num_nodes() const noexcept { return degrees.size(); }

  /// Builds degrees and neighbor lists from an adjacency matrix; the
  /// diagonal is forced to one.
  static BagGraph from_adjacency(Matrix adjacency);
  /// Graph where every node's only neighbor is itself.
  static BagGraph self_only(std::size_t k);
};

enum class GraphMode { kSimilarity, kSpatial, kNone };

GraphMode parse_graph_mode(const std::string& s);
std::string to_string(GraphMode mode);

inline constexpr double kDefaultSimilarityThreshold = 0.5;

/// Cosine of the angle between a and b. Throws DegenerateInputError on a
/// zero-norm argument.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// A_mn = 1 iff cosine(x_m, x_n) > threshold; diagonal forced to one.
BagGraph build_similarity_graph(const Bag& bag, double threshold = kDefaultSimilarityThreshold);

/// A_mn = 1 iff the grid positions are 8-connected (Chebyshev distance <= 1).
BagGraph build_spatial_graph(const Bag& bag);

/// Dispatches on the mode; kNone yields self_only.
BagGraph build_graph(const Bag& bag, GraphMode mode,
                     double threshold = kDefaultSimilarityThreshold);

/// Sorted neighbor indices of node k, k included.
std::vector<std::size_t> neighbors(const BagGraph& graph, std::size_t k);

}  // namespace gmil
