#include "gmil/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_set>

#include "gmil/errors.hpp"

namespace gmil {

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = nlohmann::json{{"name", m.name},
                     {"num_classes", m.num_classes},
                     {"feature_dim", m.feature_dim},
                     {"num_bags", m.num_bags},
                     {"num_instances", m.num_instances},
                     {"class_counts", m.class_counts},
                     {"has_grid", m.has_grid}};
}

DatasetManifest make_manifest(const std::string& name, const std::vector<Bag>& bags) {
  DatasetManifest m;
  m.name = name;
  m.num_bags = bags.size();
  int max_label = 1;
  for (const Bag& b : bags) max_label = std::max(max_label, b.label);
  m.num_classes = static_cast<std::size_t>(max_label) + 1;
  m.class_counts.assign(m.num_classes, 0);
  for (const Bag& b : bags) {
    m.num_instances += b.size();
    m.class_counts[static_cast<std::size_t>(b.label)]++;
  }
  if (!bags.empty()) {
    m.feature_dim = bags.front().feature_dim();
    m.has_grid = bags.front().has_grid();
  }
  return m;
}

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

struct Columns {
  std::size_t bag_id = 0;
  std::size_t label = 0;
  std::optional<std::size_t> row;
  std::optional<std::size_t> col;
  std::vector<std::size_t> features;  // column index of f0, f1, ...
  std::size_t total = 0;
};

Columns parse_header(std::string_view line, const std::string& path) {
  const auto cells = split(line);
  Columns c;
  c.total = cells.size();
  std::optional<std::size_t> bag_id, label;
  std::map<std::size_t, std::size_t> feats;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::string_view name = trim(cells[i]);
    if (name == "bag_id") {
      bag_id = i;
    } else if (name == "label") {
      label = i;
    } else if (name == "row") {
      c.row = i;
    } else if (name == "col") {
      c.col = i;
    } else if (name.size() > 1 && name.front() == 'f') {
      auto idx = parse_number<std::size_t>(name.substr(1));
      if (!idx || !feats.emplace(*idx, i).second) {
        throw FormatError(path + ":1: bad feature column '" + std::string(name) + "'");
      }
    } else {
      throw FormatError(path + ":1: unknown column '" + std::string(name) + "'");
    }
  }
  if (!bag_id || !label) throw FormatError(path + ":1: header needs bag_id and label columns");
  if (c.row.has_value() != c.col.has_value()) {
    throw FormatError(path + ":1: grid files need both row and col columns");
  }
  if (feats.empty()) throw FormatError(path + ":1: no feature columns");
  std::size_t expect = 0;
  for (const auto& [idx, pos] : feats) {
    if (idx != expect++) throw FormatError(path + ":1: feature columns must be f0..f{F-1}");
    c.features.push_back(pos);
  }
  c.bag_id = *bag_id;
  c.label = *label;
  return c;
}

Dataset load_impl(const std::string& path, bool require_grid) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty file");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const Columns cols = parse_header(line, path);
  if (require_grid && !cols.row) throw FormatError(path + ":1: missing row/col columns");

  std::vector<Bag> bags;
  std::unordered_set<std::string> closed;
  std::set<std::pair<int, int>> grid_seen;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split(line);
    const std::string where = path + ":" + std::to_string(lineno);
    if (cells.size() != cols.total) {
      throw FormatError(where + ": expected " + std::to_string(cols.total) + " fields, got " +
                        std::to_string(cells.size()));
    }
    const std::string id(trim(cells[cols.bag_id]));
    if (id.empty()) throw FormatError(where + ": empty bag_id");
    const auto label = parse_number<int>(cells[cols.label]);
    if (!label || *label < 0) throw FormatError(where + ": bad label");

    if (bags.empty() || bags.back().id != id) {
      if (!bags.empty()) closed.insert(bags.back().id);
      if (closed.count(id)) throw FormatError(where + ": rows of bag '" + id + "' are not contiguous");
      bags.push_back(Bag{id, *label, {}});
      grid_seen.clear();
    } else if (bags.back().label != *label) {
      throw FormatError(where + ": inconsistent label within bag '" + id + "'");
    }

    Instance inst;
    inst.features.reserve(cols.features.size());
    for (std::size_t c : cols.features) {
      auto v = parse_number<double>(cells[c]);
      if (!v || !std::isfinite(*v)) {
        throw FormatError(where + ": bad feature value '" + std::string(trim(cells[c])) + "'");
      }
      inst.features.push_back(*v);
    }
    if (cols.row) {
      auto r = parse_number<int>(cells[*cols.row]);
      auto c = parse_number<int>(cells[*cols.col]);
      if (!r || !c) throw FormatError(where + ": bad grid position");
      if (!grid_seen.emplace(*r, *c).second) {
        throw FormatError(where + ": duplicate grid position (" + std::to_string(*r) + "," +
                          std::to_string(*c) + ") in bag '" + id + "'");
      }
      inst.grid_pos = GridPos{*r, *c};
    }
    bags.back().instances.push_back(std::move(inst));
  }
  if (bags.empty()) throw FormatError(path + ": no bags");
  Dataset ds;
  ds.manifest = make_manifest(std::filesystem::path(path).stem().string(), bags);
  ds.bags = std::move(bags);
  return ds;
}

}  // namespace

Dataset load_bag_csv(const std::string& path) { return load_impl(path, false); }

Dataset load_gridded_csv(const std::string& path) { return load_impl(path, true); }

void write_bag_csv(const std::string& path, const std::vector<Bag>& bags) {
  if (bags.empty()) throw ContractError("write_bag_csv: no bags");
  const std::size_t dim = bags.front().feature_dim();
  const bool grid = bags.front().has_grid();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << "bag_id,label";
  for (std::size_t i = 0; i < dim; ++i) out << ",f" << i;
  if (grid) out << ",row,col";
  out << '\n';
  char buf[32];
  for (const Bag& b : bags) {
    validate_bag(b);
    if (b.feature_dim() != dim || b.has_grid() != grid) {
      throw ContractError("write_bag_csv: bag '" + b.id + "' differs in layout");
    }
    for (const Instance& inst : b.instances) {
      out << b.id << ',' << b.label;
      for (double v : inst.features) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << ',' << buf;
      }
      if (grid) out << ',' << inst.grid_pos->row << ',' << inst.grid_pos->col;
      out << '\n';
    }
  }
  if (!out) throw Error("write to '" + path + "' failed");
}

void SyntheticSpec::validate() const {
  if (num_bags == 0) throw ConfigError("synthetic: num_bags must be >= 1");
  if (min_bag_size == 0 || min_bag_size > max_bag_size)
    throw ConfigError("synthetic: need 1 <= min_bag_size <= max_bag_size");
  if (feature_dim == 0) throw ConfigError("synthetic: feature_dim must be >= 1");
  if (!(radius > 0.0)) throw ConfigError("synthetic: radius must be > 0");
  if (!(background_half_width > 0.0)) throw ConfigError("synthetic: background_half_width must be > 0");
  if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0))
    throw ConfigError("synthetic: positive_fraction must lie in [0, 1]");
  if (max_positives == 0) throw ConfigError("synthetic: max_positives must be >= 1");
  if (grid_side > 0 && max_bag_size > grid_side * grid_side)
    throw ConfigError("synthetic: max_bag_size exceeds grid capacity");
  // The ball must not swallow the whole background cube, or rejection
  // sampling of negatives never terminates.
  const double corner = std::sqrt(static_cast<double>(feature_dim)) *
                        (background_half_width + std::abs(center));
  if (radius >= corner) throw ConfigError("synthetic: positive ball covers the background cube");
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = nlohmann::json{{"num_bags", s.num_bags},
                     {"min_bag_size", s.min_bag_size},
                     {"max_bag_size", s.max_bag_size},
                     {"feature_dim", s.feature_dim},
                     {"center", s.center},
                     {"radius", s.radius},
                     {"background_half_width", s.background_half_width},
                     {"positive_fraction", s.positive_fraction},
                     {"max_positives", s.max_positives},
                     {"grid_side", s.grid_side},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  s.num_bags = j.value("num_bags", s.num_bags);
  s.min_bag_size = j.value("min_bag_size", s.min_bag_size);
  s.max_bag_size = j.value("max_bag_size", s.max_bag_size);
  s.feature_dim = j.value("feature_dim", s.feature_dim);
  s.center = j.value("center", s.center);
  s.radius = j.value("radius", s.radius);
  s.background_half_width = j.value("background_half_width", s.background_half_width);
  s.positive_fraction = j.value("positive_fraction", s.positive_fraction);
  s.max_positives = j.value("max_positives", s.max_positives);
  s.grid_side = j.value("grid_side", s.grid_side);
  s.seed = j.value("seed", s.seed);
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t f = spec.feature_dim;

  auto dist_to_center = [&](const Vector& x) {
    double s = 0.0;
    for (double v : x) s += (v - spec.center) * (v - spec.center);
    return std::sqrt(s);
  };
  auto background = [&] {
    Vector x(f);
    do {
      for (double& v : x) v = rng.uniform(-spec.background_half_width, spec.background_half_width);
    } while (dist_to_center(x) <= spec.radius);
    return x;
  };
  auto positive = [&] {
    // Uniform in the ball, kept strictly inside so the planted label is
    // unambiguous under rounding.
    Vector dir(f);
    double n = 0.0;
    do {
      for (double& v : dir) v = rng.normal();
      n = norm2(dir);
    } while (n == 0.0);
    const double r = 0.999 * spec.radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(f));
    Vector x(f);
    for (std::size_t i = 0; i < f; ++i) x[i] = spec.center + r * dir[i] / n;
    return x;
  };

  const auto num_pos = static_cast<std::size_t>(
      std::llround(spec.positive_fraction * static_cast<double>(spec.num_bags)));
  std::vector<int> labels(spec.num_bags, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(num_pos), 1);
  rng.shuffle(labels);

  SyntheticData out;
  for (std::size_t b = 0; b < spec.num_bags; ++b) {
    const std::size_t k =
        spec.min_bag_size + rng.below(spec.max_bag_size - spec.min_bag_size + 1);
    std::vector<int> planted(k, 0);
    if (labels[b] == 1) {
      const std::size_t n = 1 + rng.below(std::min(spec.max_positives, k));
      std::fill(planted.begin(), planted.begin() + static_cast<std::ptrdiff_t>(n), 1);
      rng.shuffle(planted);
    }
    Bag bag;
    bag.id = "syn_" + std::to_string(b);
    bag.label = labels[b];
    std::vector<std::size_t> cells;
    if (spec.grid_side > 0) {
      cells.resize(spec.grid_side * spec.grid_side);
      for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
      rng.shuffle(cells);
    }
    for (std::size_t i = 0; i < k; ++i) {
      Instance inst{planted[i] ? positive() : background(), std::nullopt};
      if (spec.grid_side > 0) {
        inst.grid_pos = GridPos{static_cast<int>(cells[i] / spec.grid_side),
                                static_cast<int>(cells[i] % spec.grid_side)};
      }
      bag.instances.push_back(std::move(inst));
    }
    out.bags.push_back(std::move(bag));
    out.instance_labels.push_back(std::move(planted));
  }
  return out;
}

Standardizer Standardizer::fit(const std::vector<Bag>& bags) {
  if (bags.empty()) throw ContractError("Standardizer::fit: no bags");
  const std::size_t f = bags.front().feature_dim();
  Vector sum(f, 0.0);
  std::size_t n = 0;
  for (const Bag& b : bags)
    for (const Instance& inst : b.instances) {
      if (inst.features.size() != f) throw ShapeError("Standardizer::fit: ragged features");
      for (std::size_t i = 0; i < f; ++i) sum[i] += inst.features[i];
      ++n;
    }
  Standardizer s;
  s.mean.resize(f);
  for (std::size_t i = 0; i < f; ++i) s.mean[i] = sum[i] / static_cast<double>(n);
  Vector sq(f, 0.0);
  for (const Bag& b : bags)
    for (const Instance& inst : b.instances)
      for (std::size_t i = 0; i < f; ++i) {
        const double d = inst.features[i] - s.mean[i];
        sq[i] += d * d;
      }
  s.scale.resize(f);
  for (std::size_t i = 0; i < f; ++i) {
    const double sd = std::sqrt(sq[i] / static_cast<double>(n));
    s.scale[i] = sd > 0.0 ? 1.0 / sd : 1.0;
  }
  return s;
}

Standardizer Standardizer::identity(std::size_t dim) {
  return Standardizer{Vector(dim, 0.0), Vector(dim, 1.0)};
}

Bag Standardizer::apply(const Bag& bag) const {
  Bag out = bag;
  for (Instance& inst : out.instances) {
    if (inst.features.size() != mean.size()) {
      throw ShapeError("Standardizer: bag '" + bag.id + "' has " +
                       std::to_string(inst.features.size()) + " features, fitted on " +
                       std::to_string(mean.size()));
    }
    for (std::size_t i = 0; i < mean.size(); ++i)
      inst.features[i] = (inst.features[i] - mean[i]) * scale[i];
  }
  return out;
}

std::vector<Bag> Standardizer::apply(const std::vector<Bag>& bags) const {
  std::vector<Bag> out;
  out.reserve(bags.size());
  for (const Bag& b : bags) out.push_back(apply(b));
  return out;
}

}  // namespace gmil
