// Acceptance suite. Each criterion prints one PASS/FAIL line.
// Exit codes: 0 pass, 1 fail, 77 not runnable here (missing datasets).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gmil/cli.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace gmil;
namespace fs = std::filesystem;

namespace {

constexpr int kSkip = 77;

const fs::path kDataDir = GMIL_DATA_DIR;
const fs::path kConfigDir = GMIL_CONFIG_DIR;

struct Outcome {
  enum Status { kPass, kFail, kSkip } status = kFail;
  std::string detail;
};

Outcome pass_if(bool ok, std::string detail) {
  return {ok ? Outcome::kPass : Outcome::kFail, std::move(detail)};
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string fmt_sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Runs the command line tool in-process; throws on a non-zero exit.
void gmil_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) throw std::runtime_error("gmil " + args.front() + " failed: " + err.str());
}

struct CvSummary {
  double mean = 0.0;
  double stderr_ = 0.0;
  double seconds = 0.0;
};

// Cross-validation of a benchmark with its config; extra flags override it.
CvSummary benchmark_cv(const std::string& name, const fs::path& out,
                       const std::vector<std::string>& extra = {}) {
  std::vector<std::string> args{"crossval",
                                "--config",
                                (kConfigDir / (name + ".json")).string(),
                                "--dataset",
                                (kDataDir / (name + ".csv")).string(),
                                "--out",
                                out.string()};
  args.insert(args.end(), extra.begin(), extra.end());
  const auto t0 = std::chrono::steady_clock::now();
  gmil_cli(args);
  const auto report = nlohmann::json::parse(slurp(out / "report.json"));
  const auto& acc = report["result"]["summary"]["accuracy"];
  // Standard error over repeats when there are several, over folds otherwise.
  const auto& spread = acc["over_repeats"]["n"].get<int>() > 1 ? acc["over_repeats"]
                                                                 : acc["over_folds"];
  return {acc["over_folds"]["mean"].get<double>(), spread["stderr"].get<double>(),
          seconds_since(t0)};
}

bool have_dataset(const std::string& name) { return fs::exists(kDataDir / (name + ".csv")); }

// ---- criteria ---------------------------------------------------------------

Outcome musk1(const fs::path& work) {
  const CvSummary s = benchmark_cv("musk1", work / "musk1");
  return pass_if(s.mean >= 0.85, "MUSK1 10-fold x 5 mean accuracy " + fmt(s.mean) + " +- " +
                                     fmt(s.stderr_) + " (need >= 0.85), " + fmt(s.seconds, 0) +
                                     " s");
}

Outcome other_benchmarks(const fs::path& work) {
  struct Target {
    const char* name;
    double threshold;
  };
  const Target targets[] = {{"musk2", 0.84}, {"elephant", 0.82}, {"fox", 0.60}, {"tiger", 0.80}};
  bool ok = true, missing = false;
  std::string detail;
  double total = 0.0;
  for (const Target& t : targets) {
    if (!detail.empty()) detail += "; ";
    if (!have_dataset(t.name)) {
      missing = true;
      detail += std::string(t.name) + " dataset not available";
      continue;
    }
    const CvSummary s = benchmark_cv(t.name, work / t.name);
    total += s.seconds;
    ok = ok && s.mean >= t.threshold;
    detail += std::string(t.name) + " " + fmt(s.mean) + " +- " + fmt(s.stderr_) + " (need >= " +
              fmt(t.threshold, 2) + ")";
  }
  ok = ok && total < 7200.0;
  detail += "; total " + fmt(total / 60.0, 1) + " min (need < 120)";
  if (ok && missing) return {Outcome::kSkip, detail};
  return pass_if(ok, detail);
}

Outcome ablation(const fs::path& work) {
  // Desk scale: one 10-fold repeat with 100 epochs per variant.
  const std::vector<std::string> scale{"--repeats", "1", "--epochs", "100"};
  struct Variant {
    const char* tag;
    const char* conv;
    const char* attention;
  };
  const Variant variants[] = {
      {"graph+graph", "graph", "graph"}, {"graph+plain", "graph", "plain"}, {"dense+plain", "dense", "plain"}};

  std::size_t ordered = 0, available = 0;
  std::string detail;
  for (const char* name : {"musk1", "musk2", "fox", "tiger", "elephant"}) {
    if (!have_dataset(name)) continue;
    ++available;
    CvSummary s[3];
    for (int v = 0; v < 3; ++v) {
      auto args = scale;
      args.insert(args.end(), {"--conv-mode", variants[v].conv, "--attention-mode",
                               variants[v].attention});
      s[v] = benchmark_cv(name, work / name / variants[v].tag, args);
    }
    // a >= b, counting a difference within the larger stderr as equality.
    auto geq = [](const CvSummary& a, const CvSummary& b) {
      return a.mean + std::max(a.stderr_, b.stderr_) >= b.mean;
    };
    const bool holds = geq(s[0], s[1]) && geq(s[1], s[2]);
    ordered += holds ? 1 : 0;
    if (!detail.empty()) detail += "; ";
    detail += std::string(name) + " " + fmt(s[0].mean, 3) + " / " + fmt(s[1].mean, 3) + " / " +
              fmt(s[2].mean, 3) + (holds ? " ordered" : " not ordered");
  }
  detail = std::to_string(ordered) + " of " + std::to_string(available) +
           " benchmarks ordered (need 3; graph+graph / graph+plain / dense+plain): " + detail;
  return pass_if(ordered >= 3, detail);
}

Outcome permutation_invariance(const fs::path&) {
  Rng rng(4401);
  std::size_t failures = 0, cases = 0;
  double worst = 0.0;
  for (int b = 0; b < 100; ++b) {
    const std::size_t k = 2 + rng.below(15);
    const std::size_t f = 2 + rng.below(8);
    ModelConfig cfg = fixture::small_config(f);
    const ModelParams params = gradcheck::random_params(cfg, rng);
    const Bag sim = fixture::random_bag(k, f, rng);
    const Bag grid = fixture::random_grid_bag(k, f, 5, rng);
    const double s_sim = forward(sim, build_similarity_graph(sim), params).positive_probability();
    const double s_grid = forward(grid, build_spatial_graph(grid), params).positive_probability();
    for (int p = 0; p < 100; ++p) {
      const auto perm = fixture::random_perm(k, rng);
      const Bag ps = permute_bag(sim, perm);
      const Bag pg = permute_bag(grid, perm);
      const double d_sim =
          std::abs(forward(ps, build_similarity_graph(ps), params).positive_probability() - s_sim);
      const double d_grid =
          std::abs(forward(pg, build_spatial_graph(pg), params).positive_probability() - s_grid);
      for (double d : {d_sim, d_grid}) {
        ++cases;
        worst = std::max(worst, d);
        if (!(d <= 1e-9)) ++failures;
      }
    }
  }
  return pass_if(failures == 0, std::to_string(cases) + " permuted scores, " +
                                    std::to_string(failures) + " with |dS| > 1e-9, max |dS| " +
                                    fmt_sci(worst));
}

Outcome gradients(const fs::path&) {
  Rng rng(5501);
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t coordinates = 0, failures = 0;
  std::string first;
  for (std::size_t i = 0; i < 50; ++i) {
    const gradcheck::Case c = gradcheck::random_case(i, rng);
    const gradcheck::Report r = gradcheck::check(c.features, c.graph, c.params, c.label);
    coordinates += r.coordinates;
    failures += r.mismatches.size();
    if (first.empty() && !r.mismatches.empty())
      first = "; first: " + c.description + " " + r.mismatches[0].tensor;
  }
  const double secs = seconds_since(t0);
  return pass_if(failures == 0 && secs < 60.0,
                 "50 instances, " + std::to_string(coordinates) + " coordinates, " +
                     std::to_string(failures) + " mismatches, " + fmt(secs, 2) + " s" + first);
}

Outcome oracles(const fs::path&) {
  Rng rng(6601);
  std::size_t adjacency_failures = 0;
  for (int b = 0; b < 1000; ++b) {
    const std::size_t side = 2 + rng.below(6);
    const Bag bag = fixture::random_grid_bag(1 + rng.below(side * side), 1 + rng.below(8), side, rng);
    const double t = rng.uniform(-1.0, 1.0);
    const BagGraph sim = build_similarity_graph(bag, t);
    const BagGraph spa = build_spatial_graph(bag);
    if (!(sim.adjacency == oracle::similarity_adjacency(bag, t))) ++adjacency_failures;
    if (!(spa.adjacency == oracle::spatial_adjacency(bag))) ++adjacency_failures;
    if (!(sim.degrees == oracle::row_sums(sim.adjacency))) ++adjacency_failures;
    if (!(spa.degrees == oracle::row_sums(spa.adjacency))) ++adjacency_failures;
  }

  double conv_err = 0.0, att_err = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t k = 1 + rng.below(20);
    const std::size_t f = 1 + rng.below(12);
    const std::size_t h = 1 + rng.below(12);
    const std::size_t l = 1 + rng.below(8);
    const Bag bag = i % 2 == 0 ? fixture::random_bag(k, f, rng)
                               : fixture::random_grid_bag(k, f, 5, rng);
    const BagGraph g = i % 2 == 0 ? build_similarity_graph(bag, rng.uniform(-0.5, 0.9))
                                  : build_spatial_graph(bag);
    const Matrix x = bag.feature_matrix();
    const Matrix w = fixture::random_matrix(f, h, rng);
    const Matrix conv = graph_conv(x, g, w);
    const Matrix expect = oracle::graph_conv(x, g.adjacency, w);
    for (std::size_t r = 0; r < k; ++r)
      for (std::size_t c = 0; c < h; ++c) conv_err = std::max(conv_err, std::abs(conv(r, c) - expect(r, c)));

    const Matrix z = fixture::random_matrix(k, h, rng);
    const Vector u = fixture::random_vector(l, rng);
    const Matrix v = fixture::random_matrix(l, h, rng);
    const AttentionPool pool = graph_attention_pool(z, g, u, v);
    const oracle::Pool ref = oracle::attention(z, g.adjacency, u, v);
    for (std::size_t j = 0; j < k; ++j) {
      att_err = std::max(att_err, std::abs(pool.scores[j] - ref.scores[j]));
      att_err = std::max(att_err, std::abs(pool.alpha[j] - ref.alpha[j]));
    }
    for (std::size_t c = 0; c < h; ++c)
      att_err = std::max(att_err, std::abs(pool.bag_embedding[c] - ref.z[c]));
  }
  const bool ok = adjacency_failures == 0 && conv_err <= 1e-12 && att_err <= 1e-12;
  return pass_if(ok, "1000 bags, " + std::to_string(adjacency_failures) +
                         " adjacency mismatches; 200 inputs, max conv error " + fmt_sci(conv_err) +
                         ", max attention error " + fmt_sci(att_err) + " (need <= 1e-12)");
}

Outcome synthetic(const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string cfg = (kConfigDir / "synthetic.json").string();
  const std::string train = (work / "train.csv").string();
  const std::string test = (work / "test.csv").string();
  gmil_cli({"synth", "--config", cfg, "--seed", "101", "--out", train});
  gmil_cli({"synth", "--config", cfg, "--seed", "202", "--out", test});
  gmil_cli({"train", "--config", cfg, "--dataset", train, "--out", (work / "run").string()});
  gmil_cli({"evaluate", "--dataset", test, "--checkpoint", (work / "run" / "checkpoint.bin").string(),
            "--out", (work / "test").string()});
  const auto report = nlohmann::json::parse(slurp(work / "test" / "report.json"));
  const double acc = report["metrics"]["accuracy"];
  const double secs = seconds_since(t0);
  return pass_if(acc >= 0.95 && secs < 120.0, "disjoint synthetic test accuracy " + fmt(acc) +
                                                  " (need >= 0.95), " + fmt(secs, 1) + " s");
}

Outcome determinism(const fs::path& work) {
  benchmark_cv("musk1", work / "run1");
  benchmark_cv("musk1", work / "run2");
  const std::string a = slurp(work / "run1" / "report.json");
  const std::string b = slurp(work / "run2" / "report.json");
  return pass_if(!a.empty() && a == b, "two MUSK1 runs with seed 1: report.json " +
                                           std::string(a == b ? "identical" : "differs") + " (" +
                                           std::to_string(a.size()) + " bytes)");
}

struct Criterion {
  int id;
  const char* title;
  std::function<Outcome(const fs::path&)> run;
};

const std::vector<Criterion> kCriteria{
    {1, "MUSK1 reproduction", musk1},
    {2, "MUSK2/FOX/TIGER/ELEPHANT reproduction", other_benchmarks},
    {3, "ablation ordering", ablation},
    {4, "permutation invariance", permutation_invariance},
    {5, "gradient correctness", gradients},
    {6, "oracle equivalence", oracles},
    {7, "synthetic sanity", synthetic},
    {8, "determinism", determinism},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gmil acceptance suite"};
  std::vector<int> selected;
  std::string workdir = (fs::temp_directory_path() / "gmil_acceptance").string();
  app.add_option("--criterion", selected, "Criterion numbers to run (default: all)")
      ->check(CLI::Range(1, 8));
  app.add_option("--workdir", workdir, "Scratch directory for reports");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty())
    for (const Criterion& c : kCriteria) selected.push_back(c.id);

  bool any_fail = false, any_skip = false;
  for (const Criterion& c : kCriteria) {
    if (std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    const fs::path work = fs::path(workdir) / ("criterion_" + std::to_string(c.id));
    fs::remove_all(work);
    fs::create_directories(work);
    Outcome o;
    try {
      o = c.run(work);
    } catch (const std::exception& e) {
      o = {Outcome::kFail, std::string("error: ") + e.what()};
    }
    const char* tag = o.status == Outcome::kPass ? "PASS" : "FAIL";
    std::cout << tag << " criterion " << c.id << " (" << c.title << "): " << o.detail
              << (o.status == Outcome::kSkip ? " [not runnable: data missing]" : "") << std::endl;
    any_fail = any_fail || o.status == Outcome::kFail;
    any_skip = any_skip || o.status == Outcome::kSkip;
  }
  if (any_fail) return 1;
  return any_skip ? kSkip : 0;
}
