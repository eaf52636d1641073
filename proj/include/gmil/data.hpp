#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmil/bag_graph.hpp"

namespace gmil {

struct DatasetManifest {
  std::string name;
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  std::size_t num_bags = 0;
  std::size_t num_instances = 0;
  std::vector<std::size_t> class_counts;  // bags per class
  bool has_grid = false;

  bool operator==(const DatasetManifest&) const = default;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);

DatasetManifest make_manifest(const std::string& name, const std::vector<Bag>& bags);

struct Dataset {
  std::vector<Bag> bags;
  DatasetManifest manifest;
};

/// Reads the canonical bag CSV: header `bag_id,label,f0..f{F-1}`, optionally
/// with `row,col` columns. Rows of one bag must be contiguous; instance order
/// is file order. Throws FormatError with a line number or bag id.
Dataset load_bag_csv(const std::string& path);

/// Like load_bag_csv but the `row` and `col` columns are mandatory.
Dataset load_gridded_csv(const std::string& path);

/// Writes bags in the canonical layout, 17 significant digits per value.
/// Grid columns are appended after the features when the bags carry them.
void write_bag_csv(const std::string& path, const std::vector<Bag>& bags);

/// Bags drawn so that the bag label follows the "at least one positive
/// instance" rule exactly. Background instances are uniform in
/// [-background_half_width, +background_half_width]^F, rejected if they fall
/// in the positive ball; positive instances are uniform in the ball.
struct SyntheticSpec {
  std::size_t num_bags = 100;
  std::size_t min_bag_size = 4;
  std::size_t max_bag_size = 12;
  std::size_t feature_dim = 8;
  /// Ball center; every coordinate takes this value.
  double center = 0.5;
  double radius = 0.6;
  double background_half_width = 1.0;
  double positive_fraction = 0.5;
  /// Upper bound on planted positives in a positive bag.
  std::size_t max_positives = 3;
  /// When > 0, instances get distinct positions on a grid_side x grid_side grid.
  std::size_t grid_side = 0;
  std::uint64_t seed = 1;

  /// Throws ConfigError on an inconsistent spec.
  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

struct SyntheticData {
  std::vector<Bag> bags;
  /// Planted instance labels, parallel to bags[i].instances.
  std::vector<std::vector<int>> instance_labels;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// Per-dimension z-score fitted on one set of bags and applied to others.
struct Standardizer {
  Vector mean;
  Vector scale;  // 1 / std, or 1 where std is 0

  static Standardizer fit(const std::vector<Bag>& bags);
  static Standardizer identity(std::size_t dim);
  Bag apply(const Bag& bag) const;
  std::vector<Bag> apply(const std::vector<Bag>& bags) const;
};

}  // namespace gmil
