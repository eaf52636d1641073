#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gmil/data.hpp"
#include "gmil/errors.hpp"
#include "support.hpp"

using namespace gmil;
namespace fs = std::filesystem;

namespace {

std::string write_file(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p.string();
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

const std::string kData = GMIL_DATA_DIR;

}  // namespace

TEST_CASE("minimal bag file") {
  const auto dir = fixture::temp_dir("data_min");
  const auto path =
      write_file(dir, "min.csv", "bag_id,label,f0,f1,f2\nb1,1,0.5,1,2\nb1,1,-3,4e-2,5\n");
  const Dataset ds = load_bag_csv(path);
  REQUIRE(ds.bags.size() == 1);
  CHECK(ds.bags[0].id == "b1");
  CHECK(ds.bags[0].label == 1);
  CHECK(ds.bags[0].size() == 2);
  CHECK(ds.bags[0].instances[1].features == Vector{-3, 0.04, 5});
  CHECK(ds.manifest.feature_dim == 3);
  CHECK(ds.manifest.num_instances == 2);
  CHECK_FALSE(ds.manifest.has_grid);
}

TEST_CASE("MUSK1 counts") {
  const Dataset ds = load_bag_csv(kData + "/musk1.csv");
  CHECK(ds.manifest.num_bags == 92);
  CHECK(ds.manifest.num_instances == 476);
  CHECK(ds.manifest.feature_dim == 166);
  REQUIRE(ds.manifest.class_counts.size() == 2);
  CHECK(ds.manifest.class_counts[1] == 47);
  CHECK(ds.manifest.class_counts[0] == 45);
}

TEST_CASE("MUSK2 counts") {
  const Dataset ds = load_bag_csv(kData + "/musk2.csv");
  CHECK(ds.manifest.num_bags == 102);
  // The distributed MUSK2 data has 6598 instances.
  CHECK(ds.manifest.num_instances == 6598);
  CHECK(ds.manifest.feature_dim == 166);
  CHECK(ds.manifest.class_counts[1] == 39);
  CHECK(ds.manifest.class_counts[0] == 63);
}

TEST_CASE("ELEPHANT counts") {
  const Dataset ds = load_bag_csv(kData + "/elephant.csv");
  CHECK(ds.manifest.num_bags == 200);
  CHECK(ds.manifest.num_instances == 1391);
  CHECK(ds.manifest.feature_dim == 230);
  CHECK(ds.manifest.class_counts[0] == 100);
  CHECK(ds.manifest.class_counts[1] == 100);
}

TEST_CASE("gridded files") {
  const auto dir = fixture::temp_dir("data_grid");
  const auto grid = write_file(dir, "g.csv",
                               "bag_id,label,f0,f1,row,col\n"
                               "g,1,1,2,0,0\ng,1,2,1,0,1\ng,1,1,1,1,0\ng,1,3,1,1,1\n"
                               "s,0,1,1,5,7\n");
  const Dataset ds = load_gridded_csv(grid);
  REQUIRE(ds.bags.size() == 2);
  CHECK(ds.bags[0].size() == 4);
  CHECK(ds.manifest.has_grid);
  CHECK(ds.bags[0].instances[3].grid_pos == GridPos{1, 1});
  CHECK(build_spatial_graph(ds.bags[0]).degrees == Vector{4, 4, 4, 4});
  CHECK(build_spatial_graph(ds.bags[1]).degrees == Vector{1});

  // The generic loader also accepts grid columns.
  CHECK(load_bag_csv(grid).bags[0].has_grid());

  const auto no_col = write_file(dir, "nocol.csv", "bag_id,label,f0,row\ng,1,1,0\n");
  CHECK_THROWS_AS(load_gridded_csv(no_col), FormatError);
  const auto plain = write_file(dir, "plain.csv", "bag_id,label,f0\ng,1,1\n");
  CHECK_THROWS_AS(load_gridded_csv(plain), FormatError);

  const auto dup = write_file(dir, "dup.csv",
                              "bag_id,label,f0,row,col\ng,1,1,0,0\ng,1,2,0,0\n");
  CHECK(error_of([&] { load_gridded_csv(dup); }).find("duplicate") != std::string::npos);
}

TEST_CASE("format errors carry locations") {
  const auto dir = fixture::temp_dir("data_err");
  const auto ragged = write_file(dir, "r.csv", "bag_id,label,f0,f1\na,0,1,2\na,0,1\n");
  CHECK(error_of([&] { load_bag_csv(ragged); }).find(":3:") != std::string::npos);

  const auto label = write_file(dir, "l.csv", "bag_id,label,f0\na,0,1\na,1,2\n");
  CHECK(error_of([&] { load_bag_csv(label); }).find("'a'") != std::string::npos);

  const auto split = write_file(dir, "s.csv", "bag_id,label,f0\na,0,1\nb,0,2\na,0,3\n");
  CHECK(error_of([&] { load_bag_csv(split); }).find("contiguous") != std::string::npos);

  const auto value = write_file(dir, "v.csv", "bag_id,label,f0\na,0,abc\n");
  CHECK(error_of([&] { load_bag_csv(value); }).find(":2:") != std::string::npos);

  const auto header = write_file(dir, "h.csv", "id,label,f0\na,0,1\n");
  CHECK_THROWS_AS(load_bag_csv(header), FormatError);
  const auto gap = write_file(dir, "gap.csv", "bag_id,label,f0,f2\na,0,1,2\n");
  CHECK_THROWS_AS(load_bag_csv(gap), FormatError);
  CHECK_THROWS_AS(load_bag_csv((dir / "missing.csv").string()), FormatError);
  const auto empty = write_file(dir, "e.csv", "");
  CHECK_THROWS_AS(load_bag_csv(empty), FormatError);
}

TEST_CASE("csv round trip is exact") {
  const auto dir = fixture::temp_dir("data_rt");
  Rng rng(3);
  std::vector<Bag> bags;
  for (int b = 0; b < 5; ++b) {
    Bag bag = fixture::random_grid_bag(1 + rng.below(6), 4, 3, rng);
    bag.id = "bag" + std::to_string(b);
    bag.label = b % 2;
    for (auto& inst : bag.instances)
      for (double& v : inst.features) v = rng.normal() * std::pow(10.0, rng.uniform(-8, 8));
    bags.push_back(bag);
  }
  const auto path = (dir / "rt.csv").string();
  write_bag_csv(path, bags);
  CHECK(load_gridded_csv(path).bags == bags);

  const Dataset musk = load_bag_csv(kData + "/musk1.csv");
  write_bag_csv((dir / "musk.csv").string(), musk.bags);
  CHECK(load_bag_csv((dir / "musk.csv").string()).bags == musk.bags);
}

TEST_CASE("synthetic generator") {
  SyntheticSpec spec;
  spec.num_bags = 200;
  spec.seed = 17;
  const SyntheticData data = generate_synthetic(spec);
  REQUIRE(data.bags.size() == 200);
  std::size_t positives = 0;
  for (std::size_t b = 0; b < data.bags.size(); ++b) {
    const Bag& bag = data.bags[b];
    CHECK(bag.size() >= spec.min_bag_size);
    CHECK(bag.size() <= spec.max_bag_size);
    int planted = 0;
    bool near = false;
    for (std::size_t k = 0; k < bag.size(); ++k) {
      planted += data.instance_labels[b][k];
      double d2 = 0.0;
      for (double v : bag.instances[k].features) d2 += (v - spec.center) * (v - spec.center);
      const bool inside = std::sqrt(d2) <= spec.radius;
      CHECK(inside == (data.instance_labels[b][k] == 1));
      near = near || inside;
    }
    // Bag label follows the at-least-one-positive rule.
    CHECK(bag.label == (planted > 0 ? 1 : 0));
    CHECK(near == (bag.label == 1));
    positives += static_cast<std::size_t>(bag.label);
  }
  CHECK(positives == 100);

  const SyntheticData again = generate_synthetic(spec);
  CHECK(again.bags == data.bags);
  CHECK(again.instance_labels == data.instance_labels);
  spec.seed = 18;
  CHECK_FALSE(generate_synthetic(spec).bags == data.bags);
}

TEST_CASE("synthetic generator edge cases") {
  SyntheticSpec spec;
  spec.positive_fraction = 0.0;
  for (const Bag& b : generate_synthetic(spec).bags) CHECK(b.label == 0);

  spec = SyntheticSpec{};
  spec.grid_side = 4;
  spec.max_bag_size = 16;
  for (const Bag& b : generate_synthetic(spec).bags) CHECK_NOTHROW(validate_bag(b));

  SyntheticSpec bad;
  bad.radius = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = SyntheticSpec{};
  bad.positive_fraction = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = SyntheticSpec{};
  bad.grid_side = 2;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  SyntheticSpec s;
  s.num_bags = 7;
  s.center = -0.25;
  const nlohmann::json j = s;
  const SyntheticSpec back = j.get<SyntheticSpec>();
  CHECK(back.num_bags == 7);
  CHECK(back.center == -0.25);
}

TEST_CASE("standardizer") {
  const std::vector<Bag> bags{
      Bag{"a", 0, {{{1.0, 5.0}, std::nullopt}, {{3.0, 5.0}, std::nullopt}}},
      Bag{"b", 1, {{{5.0, 5.0}, std::nullopt}}}};
  const Standardizer z = Standardizer::fit(bags);
  CHECK(z.mean == Vector{3.0, 5.0});
  CHECK(z.scale[1] == 1.0);  // constant column
  const auto out = z.apply(bags);
  double sum = 0.0, sq = 0.0;
  for (const Bag& b : out)
    for (const Instance& i : b.instances) {
      sum += i.features[0];
      sq += i.features[0] * i.features[0];
      CHECK(i.features[1] == 0.0);
    }
  CHECK(sum == doctest::Approx(0.0));
  CHECK(sq / 3.0 == doctest::Approx(1.0));
  CHECK(Standardizer::identity(2).apply(bags[0]) == bags[0]);
  CHECK_THROWS_AS(z.apply(Bag{"c", 0, {{{1.0}, std::nullopt}}}), ShapeError);
}

TEST_CASE("manifest json") {
  const Dataset ds = load_bag_csv(kData + "/musk1.csv");
  const nlohmann::json j = ds.manifest;
  CHECK(j["num_bags"] == 92);
  CHECK(j["name"] == "musk1");
}
