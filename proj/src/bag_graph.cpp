#include "gmil/bag_graph.hpp"

#include <cstdlib>
#include <set>
#include <utility>

#include "gmil/errors.hpp"

namespace gmil {

Matrix Bag::feature_matrix() const {
  const std::size_t k = size();
  const std::size_t f = feature_dim();
  Matrix m(k, f);
  for (std::size_t i = 0; i < k; ++i) {
    if (instances[i].features.size() != f) {
      throw ShapeError("bag '" + id + "': instance " + std::to_string(i) + " has " +
                       std::to_string(instances[i].features.size()) + " features, expected " +
                       std::to_string(f));
    }
    std::copy(instances[i].features.begin(), instances[i].features.end(), m.row(i).begin());
  }
  return m;
}

void validate_bag(const Bag& bag) {
  if (bag.instances.empty()) throw ContractError("bag '" + bag.id + "' has no instances");
  const std::size_t f = bag.feature_dim();
  const bool grid = bag.has_grid();
  std::set<std::pair<int, int>> seen;
  for (std::size_t i = 0; i < bag.size(); ++i) {
    const auto& inst = bag.instances[i];
    if (inst.features.size() != f) {
      throw ContractError("bag '" + bag.id + "': instance " + std::to_string(i) +
                          " has a different feature length");
    }
    if (inst.grid_pos.has_value() != grid) {
      throw ContractError("bag '" + bag.id + "': grid positions must be on all instances or none");
    }
    if (grid && !seen.emplace(inst.grid_pos->row, inst.grid_pos->col).second) {
      throw ContractError("bag '" + bag.id + "': duplicate grid position (" +
                          std::to_string(inst.grid_pos->row) + "," +
                          std::to_string(inst.grid_pos->col) + ")");
    }
  }
}

BagGraph BagGraph::from_adjacency(Matrix adjacency) {
  if (adjacency.rows() != adjacency.cols()) {
    throw ShapeError("adjacency must be square, got " + adjacency.shape_str());
  }
  const std::size_t k = adjacency.rows();
  BagGraph g;
  g.degrees.assign(k, 0.0);
  g.lists.offsets.assign(k + 1, 0);
  for (std::size_t i = 0; i < k; ++i) {
    adjacency(i, i) = 1.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (adjacency(i, j) != 0.0) {
        g.lists.indices.push_back(j);
        g.degrees[i] += adjacency(i, j);
      }
    }
    g.lists.offsets[i + 1] = g.lists.indices.size();
  }
  g.lists.degrees = g.degrees;
  g.adjacency = std::move(adjacency);
  return g;
}

BagGraph BagGraph::self_only(std::size_t k) { return from_adjacency(Matrix::identity(k)); }

GraphMode parse_graph_mode(const std::string& s) {
  if (s == "similarity") return GraphMode::kSimilarity;
  if (s == "spatial") return GraphMode::kSpatial;
  if (s == "none") return GraphMode::kNone;
  throw ConfigError("unknown graph mode '" + s + "' (expected similarity|spatial|none)");
}

std::string to_string(GraphMode mode) {
  switch (mode) {
    case GraphMode::kSimilarity:
      return "similarity";
    case GraphMode::kSpatial:
      return "spatial";
    case GraphMode::kNone:
      return "none";
  }
  return "none";
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0) throw DegenerateInputError("cosine_similarity: zero-norm vector");
  return dot(a, b) / (na * nb);
}

BagGraph build_similarity_graph(const Bag& bag, double threshold) {
  const Matrix x = bag.feature_matrix();
  const std::size_t k = x.rows();
  Vector norms(k);
  for (std::size_t i = 0; i < k; ++i) {
    norms[i] = norm2(x.row(i));
    if (!(norms[i] > 0.0) || !std::isfinite(norms[i])) {
      throw DegenerateInputError("build_similarity_graph: bag '" + bag.id + "' instance " +
                                 std::to_string(i) + " has zero or non-finite norm");
    }
  }
  Matrix adj(k, k);
  const auto n = static_cast<std::ptrdiff_t>(k);
  // Upper triangle per row; rows are independent.
#pragma omp parallel for schedule(dynamic, 8) if (k * k * x.cols() >= kernels::kParallelThreshold)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t j = i + 1; j < k; ++j) {
      const double c = dot(x.row(i), x.row(j)) / (norms[i] * norms[j]);
      adj(i, j) = c > threshold ? 1.0 : 0.0;
    }
  }
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < i; ++j) adj(i, j) = adj(j, i);
  return BagGraph::from_adjacency(std::move(adj));
}

BagGraph build_spatial_graph(const Bag& bag) {
  const std::size_t k = bag.size();
  for (std::size_t i = 0; i < k; ++i) {
    if (!bag.instances[i].grid_pos) {
      throw ContractError("build_spatial_graph: bag '" + bag.id + "' instance " +
                          std::to_string(i) + " has no grid position");
    }
  }
  Matrix adj(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    const GridPos p = *bag.instances[i].grid_pos;
    for (std::size_t j = 0; j < k; ++j) {
      const GridPos q = *bag.instances[j].grid_pos;
      if (std::abs(p.row - q.row) <= 1 && std::abs(p.col - q.col) <= 1) adj(i, j) = 1.0;
    }
  }
  return BagGraph::from_adjacency(std::move(adj));
}

BagGraph build_graph(const Bag& bag, GraphMode mode, double threshold) {
  switch (mode) {
    case GraphMode::kSimilarity:
      return build_similarity_graph(bag, threshold);
    case GraphMode::kSpatial:
      return build_spatial_graph(bag);
    case GraphMode::kNone:
      break;
  }
  return BagGraph::self_only(bag.size());
}

std::vector<std::size_t> neighbors(const BagGraph& graph, std::size_t k) {
  if (k >= graph.num_nodes()) {
    throw IndexError("neighbors: node " + std::to_string(k) + " out of range for " +
                     std::to_string(graph.num_nodes()) + " nodes");
  }
  auto row = graph.lists.of(k);
  return {row.begin(), row.end()};
}

}  // namespace gmil
