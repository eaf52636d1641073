#include "gmil/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

#include "gmil/errors.hpp"

namespace gmil::cli {
namespace fs = std::filesystem;

namespace {

std::string to_string(DatasetFormat f) {
  switch (f) {
    case DatasetFormat::kBag:
      return "bag";
    case DatasetFormat::kGridded:
      return "gridded";
    case DatasetFormat::kAuto:
      break;
  }
  return "auto";
}

DatasetFormat parse_format(const std::string& s) {
  if (s == "auto") return DatasetFormat::kAuto;
  if (s == "bag") return DatasetFormat::kBag;
  if (s == "gridded") return DatasetFormat::kGridded;
  throw ConfigError("unknown dataset format '" + s + "' (expected auto|bag|gridded)");
}

std::vector<std::size_t> parse_dims(const std::string& s) {
  std::vector<std::size_t> dims;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t pos = 0;
      const long v = std::stol(tok, &pos);
      if (pos != tok.size() || v < 1) throw std::invalid_argument(tok);
      dims.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("bad layer width list '" + s + "'");
    }
  }
  if (dims.empty()) throw ConfigError("empty layer width list");
  return dims;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error("write to '" + path.string() + "' failed");
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path ensure_out_dir(const std::string& out) {
  fs::path p(out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw ConfigError("cannot create output directory '" + out + "': " + ec.message());
  return p;
}

Dataset load_dataset(const RunConfig& c) {
  if (c.dataset.empty()) throw ConfigError("--dataset is required");
  if (!fs::exists(c.dataset)) throw ConfigError("dataset '" + c.dataset + "' does not exist");
  Dataset ds = c.format == DatasetFormat::kGridded ? load_gridded_csv(c.dataset)
                                                   : load_bag_csv(c.dataset);
  if (c.format == DatasetFormat::kBag && ds.manifest.has_grid) {
    for (Bag& b : ds.bags)
      for (Instance& inst : b.instances) inst.grid_pos.reset();
    ds.manifest.has_grid = false;
  }
  if (c.graph.mode == GraphMode::kSpatial && !ds.manifest.has_grid) {
    throw ConfigError("graph mode 'spatial' needs a gridded dataset (row,col columns)");
  }
  return ds;
}

/// Model dims that follow from the data.
ModelConfig model_for(const RunConfig& c, const DatasetManifest& m) {
  ModelConfig mc = c.model;
  mc.input_dim = m.feature_dim;
  mc.num_classes = std::max<std::size_t>(2, m.num_classes);
  mc.validate();
  return mc;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

std::string metrics_table(const Metrics& m) {
  std::ostringstream os;
  os << "accuracy  " << fmt(m.accuracy) << "\n"
     << "precision " << fmt(m.precision) << "\n"
     << "recall    " << fmt(m.recall) << "\n"
     << "f_score   " << fmt(m.f_score) << "\n"
     << "auc       " << (m.auc ? fmt(*m.auc) : std::string("undefined")) << "\n";
  return os.str();
}

nlohmann::json metrics_json(const Metrics& m) {
  return {{"accuracy", m.accuracy},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f_score", m.f_score},
          {"auc", m.auc ? nlohmann::json(*m.auc) : nlohmann::json(nullptr)}};
}

struct Preprocessing {
  GraphConfig graph;
  Standardizer standardizer;
};

Preprocessing preprocessing_from(const Checkpoint& ck) {
  Preprocessing p;
  const auto& md = ck.metadata;
  p.graph.mode = parse_graph_mode(md.value("graph_mode", std::string("similarity")));
  p.graph.threshold = md.value("threshold", kDefaultSimilarityThreshold);
  const std::size_t dim = ck.params.config.input_dim;
  auto mean = ck.extras.find("standardizer.mean");
  auto scale = ck.extras.find("standardizer.scale");
  if (mean != ck.extras.end() && scale != ck.extras.end()) {
    p.standardizer = Standardizer{mean->second, scale->second};
  } else {
    p.standardizer = Standardizer::identity(dim);
  }
  if (p.standardizer.mean.size() != dim || p.standardizer.scale.size() != dim) {
    throw FormatError("checkpoint standardizer does not match input_dim");
  }
  return p;
}

Checkpoint load_checked_checkpoint(const RunConfig& c, const DatasetManifest& m) {
  if (c.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (!fs::exists(c.checkpoint)) throw ConfigError("checkpoint '" + c.checkpoint + "' does not exist");
  Checkpoint ck = load_checkpoint(c.checkpoint);
  if (ck.params.config.input_dim != m.feature_dim) {
    throw ConfigError("checkpoint expects " + std::to_string(ck.params.config.input_dim) +
                      " features, dataset '" + m.name + "' has " + std::to_string(m.feature_dim));
  }
  if (preprocessing_from(ck).graph.mode == GraphMode::kSpatial && !m.has_grid) {
    throw ConfigError("checkpoint uses the spatial graph but the dataset has no grid");
  }
  return ck;
}

// ---- commands -------------------------------------------------------------

int cmd_synth(const RunConfig& c, std::ostream& out) {
  SyntheticSpec spec = c.synthetic;
  spec.seed = c.seed;
  const SyntheticData data = generate_synthetic(spec);
  fs::path target(c.out);
  if (target.extension() != ".csv") target = ensure_out_dir(c.out) / "synthetic.csv";
  else if (target.has_parent_path()) ensure_out_dir(target.parent_path().string());
  write_bag_csv(target.string(), data.bags);
  out << "wrote " << data.bags.size() << " bags to " << target.string() << "\n";
  return kOk;
}

int cmd_crossval(const RunConfig& c, std::ostream& out) {
  const Dataset ds = load_dataset(c);
  const ModelConfig mc = model_for(c, ds.manifest);
  if (c.train.folds > ds.bags.size()) {
    throw ConfigError(std::to_string(c.train.folds) + " folds requested for " +
                      std::to_string(ds.bags.size()) + " bags");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const CrossValidationResult cv = cross_validate(ds.bags, mc, c.train, c.graph);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  RunConfig resolved = c;
  resolved.model = mc;
  const fs::path dir = ensure_out_dir(c.out);
  nlohmann::json report{{"command", "crossval"},
                        {"config", to_json(resolved)},
                        {"manifest", ds.manifest},
                        {"result", cv}};
  write_json(dir / "report.json", report);

  std::ostringstream txt;
  txt << "cross-validation on " << ds.manifest.name << " (" << c.train.folds << " folds x "
      << c.train.repeats << " repeats, graph=" << gmil::to_string(c.graph.mode)
      << ", conv=" << gmil::to_string(mc.conv_mode)
      << ", attention=" << gmil::to_string(mc.attention_mode) << ")\n\n";
  txt << "repeat fold  n   accuracy precision recall  f_score auc     best_epoch\n";
  for (const FoldReport& r : cv.folds) {
    txt << std::setw(6) << r.repeat << std::setw(5) << r.fold << std::setw(4) << r.test_size
        << "   " << fmt(r.accuracy) << "   " << fmt(r.precision) << "    " << fmt(r.recall)
        << "  " << fmt(r.f_score) << "  " << (r.auc ? fmt(*r.auc) : std::string(" n/a  "))
        << "  " << r.best_epoch << "\n";
  }
  auto line = [&](const char* name, const MetricSummary& s) {
    txt << std::left << std::setw(10) << name << std::right << fmt(s.over_folds.mean) << " +- "
        << fmt(s.over_folds.stderr_) << " (folds, n=" << s.over_folds.n << ")   "
        << fmt(s.over_repeats.mean) << " +- " << fmt(s.over_repeats.stderr_)
        << " (repeats, n=" << s.over_repeats.n << ")\n";
  };
  txt << "\n";
  line("accuracy", cv.accuracy);
  line("precision", cv.precision);
  line("recall", cv.recall);
  line("f_score", cv.f_score);
  line("auc", cv.auc);
  txt << "\nelapsed " << fmt(secs, 1) << " s\n";
  write_text(dir / "report.txt", txt.str());
  out << txt.str();
  return kOk;
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  const Dataset ds = load_dataset(c);
  const ModelConfig mc = model_for(c, ds.manifest);
  c.train.validate();

  std::vector<int> labels;
  for (const Bag& b : ds.bags) labels.push_back(b.label);
  Rng split_rng(derive_seed(c.seed, {0x5A11}));
  auto [keep, held] = stratified_holdout(labels, c.train.val_fraction, split_rng);
  std::vector<Bag> train_bags, val_bags;
  for (std::size_t i : keep) train_bags.push_back(ds.bags[i]);
  for (std::size_t i : held) val_bags.push_back(ds.bags[i]);

  const Standardizer z = c.train.standardize ? Standardizer::fit(train_bags)
                                             : Standardizer::identity(ds.manifest.feature_dim);
  const auto train_p = prepare_bags(z.apply(train_bags), c.graph);
  const auto val_p = prepare_bags(z.apply(val_bags), c.graph);
  const TrainResult tr = train_one(train_p, val_p, mc, c.train, derive_seed(c.seed, {0x7EA1}));

  Checkpoint ck;
  ck.params = tr.best;
  ck.metadata = {{"graph_mode", gmil::to_string(c.graph.mode)},
                 {"threshold", c.graph.threshold},
                 {"standardize", c.train.standardize},
                 {"dataset", ds.manifest.name},
                 {"best_epoch", tr.best_epoch}};
  ck.extras["standardizer.mean"] = z.mean;
  ck.extras["standardizer.scale"] = z.scale;

  const fs::path dir = ensure_out_dir(c.out);
  save_checkpoint((dir / "checkpoint.bin").string(), ck);

  nlohmann::json history = nlohmann::json::array();
  for (const EpochRecord& e : tr.history)
    history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  write_json(dir / "history.json", history);

  const Metrics train_m = compute_metrics(predict(tr.best, train_p));
  const Metrics val_m = compute_metrics(predict(tr.best, val_p));
  RunConfig resolved = c;
  resolved.model = mc;
  write_json(dir / "report.json", {{"command", "train"},
                                   {"config", to_json(resolved)},
                                   {"manifest", ds.manifest},
                                   {"best_epoch", tr.best_epoch},
                                   {"best_val_loss", tr.best_val_loss},
                                   {"train_metrics", metrics_json(train_m)},
                                   {"val_metrics", metrics_json(val_m)}});
  std::ostringstream txt;
  txt << "trained on " << train_p.size() << " bags, validated on " << val_p.size() << "\n"
      << "best epoch " << tr.best_epoch << " (val loss " << fmt(tr.best_val_loss, 6) << ")\n\n"
      << "training split\n"
      << metrics_table(train_m) << "\nvalidation split\n"
      << metrics_table(val_m);
  write_text(dir / "report.txt", txt.str());
  out << txt.str();
  return kOk;
}

int cmd_evaluate(const RunConfig& c, std::ostream& out) {
  const Dataset ds = load_dataset(c);
  const Checkpoint ck = load_checked_checkpoint(c, ds.manifest);
  const Preprocessing pre = preprocessing_from(ck);
  const auto bags = prepare_bags(pre.standardizer.apply(ds.bags), pre.graph);
  const auto preds = predict(ck.params, bags);
  const Metrics m = compute_metrics(preds);

  nlohmann::json per_bag = nlohmann::json::array();
  for (std::size_t i = 0; i < bags.size(); ++i)
    per_bag.push_back({{"bag_id", bags[i].id}, {"label", preds[i].label}, {"prob", preds[i].prob}});
  const fs::path dir = ensure_out_dir(c.out);
  write_json(dir / "report.json", {{"command", "evaluate"},
                                   {"checkpoint", ck.metadata},
                                   {"model", ck.params.config},
                                   {"manifest", ds.manifest},
                                   {"metrics", metrics_json(m)},
                                   {"predictions", per_bag}});
  const std::string txt = "evaluated " + std::to_string(bags.size()) + " bags of " +
                          ds.manifest.name + "\n" + metrics_table(m);
  write_text(dir / "report.txt", txt);
  out << txt;
  return kOk;
}

int cmd_export_attention(const RunConfig& c, std::ostream& out) {
  const Dataset ds = load_dataset(c);
  const Checkpoint ck = load_checked_checkpoint(c, ds.manifest);
  const Preprocessing pre = preprocessing_from(ck);
  const fs::path dir = ensure_out_dir(c.out);
  const fs::path path = dir / "attention.csv";
  std::ofstream csv(path, std::ios::trunc);
  if (!csv) throw Error("cannot open '" + path.string() + "' for writing");
  csv << "bag_id,instance_index,row,col,alpha\n";
  char buf[32];
  std::size_t rows = 0;
  for (const Bag& raw : ds.bags) {
    const PreparedBag b = prepare_bag(pre.standardizer.apply(raw), pre.graph);
    const ForwardTrace t = forward(b.features, b.graph, ck.params);
    for (std::size_t k = 0; k < raw.size(); ++k) {
      csv << raw.id << ',' << k << ',';
      if (const auto& g = raw.instances[k].grid_pos) csv << g->row << ',' << g->col;
      else csv << ',';
      std::snprintf(buf, sizeof buf, "%.17g", t.alpha[k]);
      csv << ',' << buf << '\n';
      ++rows;
    }
  }
  if (!csv) throw Error("write to '" + path.string() + "' failed");
  out << "wrote " << rows << " attention weights for " << ds.bags.size() << " bags to "
      << path.string() << "\n";
  return kOk;
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
  return {{"dataset", c.dataset},
          {"format", to_string(c.format)},
          {"graph", {{"mode", gmil::to_string(c.graph.mode)}, {"threshold", c.graph.threshold}}},
          {"model", c.model},
          {"train", c.train},
          {"synthetic", c.synthetic},
          {"checkpoint", c.checkpoint},
          {"seed", c.seed}};
}

void apply_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  try {
    if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
    if (j.contains("format")) c.format = parse_format(j.at("format").get<std::string>());
    if (j.contains("graph")) {
      const auto& g = j.at("graph");
      if (g.contains("mode")) c.graph.mode = parse_graph_mode(g.at("mode").get<std::string>());
      c.graph.threshold = g.value("threshold", c.graph.threshold);
    }
    if (j.contains("model")) from_json(j.at("model"), c.model);
    if (j.contains("train")) from_json(j.at("train"), c.train);
    if (j.contains("synthetic")) from_json(j.at("synthetic"), c.synthetic);
    if (j.contains("checkpoint")) c.checkpoint = j.at("checkpoint").get<std::string>();
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Graph-based multi-instance learning"};
  app.require_subcommand(1);

  struct Flags {
    std::string config, dataset, format, graph_mode, conv_mode, attention_mode, conv_dims,
        encoder_dims, checkpoint, out;
    double threshold = 0, lr = 0;
    std::size_t attention_dim = 0, folds = 0, repeats = 0, epochs = 0;
    std::uint64_t seed = 0;
    int threads = 0;
    bool no_standardize = false;
  } f;

  std::vector<CLI::Option*> opts;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON config file; flags override it");
    sub->add_option("--out", f.out, "Output directory");
    sub->add_option("--seed", f.seed, "Master seed");
  };
  auto data_opts = [&](CLI::App* sub) {
    sub->add_option("--dataset", f.dataset, "Canonical bag CSV");
    sub->add_option("--format", f.format, "auto|bag|gridded");
  };
  auto model_opts = [&](CLI::App* sub) {
    sub->add_option("--graph-mode", f.graph_mode, "similarity|spatial|none");
    sub->add_option("--threshold", f.threshold, "Cosine similarity threshold");
    sub->add_option("--attention-dim", f.attention_dim, "Attention width L");
    sub->add_option("--conv-dims", f.conv_dims, "Comma-separated conv layer widths");
    sub->add_option("--encoder-dims", f.encoder_dims, "Comma-separated encoder widths");
    sub->add_option("--conv-mode", f.conv_mode, "graph|dense");
    sub->add_option("--attention-mode", f.attention_mode, "graph|plain");
    sub->add_option("--epochs", f.epochs, "Maximum epochs");
    sub->add_option("--lr", f.lr, "Adam learning rate");
    sub->add_option("--threads", f.threads, "Fold worker threads (0 = OpenMP default)");
    sub->add_flag("--no-standardize", f.no_standardize, "Disable feature z-scoring");
  };

  CLI::App* crossval = app.add_subcommand("crossval", "Repeated stratified k-fold cross-validation");
  common(crossval);
  data_opts(crossval);
  model_opts(crossval);
  crossval->add_option("--folds", f.folds, "Number of folds");
  crossval->add_option("--repeats", f.repeats, "Number of repeats");

  CLI::App* train = app.add_subcommand("train", "Train one model and write checkpoint.bin");
  common(train);
  data_opts(train);
  model_opts(train);

  CLI::App* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a dataset");
  common(evaluate);
  data_opts(evaluate);
  evaluate->add_option("--checkpoint", f.checkpoint, "checkpoint.bin from train");

  CLI::App* exporter = app.add_subcommand("export-attention", "Write per-instance attention weights");
  common(exporter);
  data_opts(exporter);
  exporter->add_option("--checkpoint", f.checkpoint, "checkpoint.bin from train");

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic bag CSV");
  common(synth);

  std::vector<std::string> argv_store{"gmil"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_store) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }
  CLI::App* sub = app.get_subcommands().front();
  auto given = [&](const char* name) { return sub->get_option_no_throw(name) && sub->count(name) > 0; };

  try {
    RunConfig c;
    if (!f.config.empty()) {
      std::ifstream in(f.config);
      if (!in) throw ConfigError("cannot open config '" + f.config + "'");
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + f.config + "' is not valid JSON: " + e.what());
      }
      apply_json(j, c);
    }
    if (given("--dataset")) c.dataset = f.dataset;
    if (given("--format")) c.format = parse_format(f.format);
    if (given("--graph-mode")) c.graph.mode = parse_graph_mode(f.graph_mode);
    if (given("--threshold")) c.graph.threshold = f.threshold;
    if (given("--attention-dim")) c.model.attention_dim = f.attention_dim;
    if (given("--conv-dims")) c.model.conv_dims = parse_dims(f.conv_dims);
    if (given("--encoder-dims")) c.model.encoder_dims = parse_dims(f.encoder_dims);
    if (given("--conv-mode")) c.model.conv_mode = parse_conv_mode(f.conv_mode);
    if (given("--attention-mode")) c.model.attention_mode = parse_attention_mode(f.attention_mode);
    if (given("--epochs")) c.train.max_epochs = f.epochs;
    if (given("--lr")) c.train.learning_rate = f.lr;
    if (given("--threads")) c.train.threads = f.threads;
    if (given("--no-standardize")) c.train.standardize = false;
    if (given("--folds")) c.train.folds = f.folds;
    if (given("--repeats")) c.train.repeats = f.repeats;
    if (given("--checkpoint")) c.checkpoint = f.checkpoint;
    if (given("--out")) c.out = f.out;
    if (given("--seed")) c.seed = f.seed;
    c.train.seed = c.seed;
    c.synthetic.seed = c.seed;
    c.train.validate();

    const std::string name = sub->get_name();
    if (name == "crossval") return cmd_crossval(c, out);
    if (name == "train") return cmd_train(c, out);
    if (name == "evaluate") return cmd_evaluate(c, out);
    if (name == "export-attention") return cmd_export_attention(c, out);
    return cmd_synth(c, out);
  } catch (const TrainingError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumericalError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }
}

}  // namespace gmil::cli
