#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmil/data.hpp"
#include "gmil/model.hpp"
#include "gmil/train.hpp"

namespace gmil::cli {

/// Stable process exit codes.
enum ExitCode : int { kOk = 0, kConfigError = 2, kNumericalError = 3 };

enum class DatasetFormat { kAuto, kBag, kGridded };

/// Fully resolved settings of one command. Built from an optional JSON file
/// with command-line flags layered on top.
struct RunConfig {
  std::string dataset;
  DatasetFormat format = DatasetFormat::kAuto;
  GraphConfig graph;
  ModelConfig model;
  TrainConfig train;
  SyntheticSpec synthetic;
  std::string checkpoint;
  std::string out = ".";
  std::uint64_t seed = 1;
};

nlohmann::json to_json(const RunConfig& c);
/// Applies the keys present in `j` on top of `c`.
void apply_json(const nlohmann::json& j, RunConfig& c);

/// Entry point shared by the gmil executable and the tests. `args` excludes
/// the program name. Returns an ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gmil::cli
