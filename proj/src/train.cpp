#include "gmil/train.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "gmil/data.hpp"
#include "gmil/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gmil {

void TrainConfig::validate() const {
  if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  if (batch_size != 1) throw ConfigError("train: batch_size is fixed at 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train: Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("train: epsilon must be > 0");
  if (!(val_fraction > 0.0 && val_fraction < 0.5))
    throw ConfigError("train: val_fraction must lie in (0, 0.5)");
  if (folds < 2) throw ConfigError("train: folds must be >= 2");
  if (repeats < 1) throw ConfigError("train: repeats must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"max_epochs", c.max_epochs},     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
                     {"beta1", c.beta1},               {"beta2", c.beta2},
                     {"epsilon", c.epsilon},           {"seed", c.seed},
                     {"val_fraction", c.val_fraction}, {"folds", c.folds},
                     {"repeats", c.repeats},           {"standardize", c.standardize}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.seed = j.value("seed", c.seed);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.folds = j.value("folds", c.folds);
  c.repeats = j.value("repeats", c.repeats);
  c.standardize = j.value("standardize", c.standardize);
  c.threads = j.value("threads", c.threads);
}

double bce_loss(double prob, int label) {
  const double p = std::clamp(prob, kProbClamp, 1.0 - kProbClamp);
  return label == 1 ? -std::log(p) : -std::log1p(-p);
}

double ce_loss(std::span<const double> probs, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size())
    throw ContractError("ce_loss: label out of range");
  return -std::log(std::clamp(probs[static_cast<std::size_t>(label)], kProbClamp, 1.0 - kProbClamp));
}

double trace_loss(const ForwardTrace& trace, int label) {
  if (trace.probs.size() == 2) return bce_loss(trace.probs[1], label);
  return ce_loss(trace.probs, label);
}

AdamState AdamState::init(const ParameterSet& params) {
  return AdamState{params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state,
               const TrainConfig& cfg) {
  grads.for_each_tensor([](const std::string& name, std::span<const double> g) {
    if (!all_finite(g)) throw TrainingError("non-finite gradient in tensor '" + name + "'");
  });

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = cfg.learning_rate * cfg.weight_decay;
  const double inv_bc1 = 1.0 / bc1;
  const double inv_bc2 = 1.0 / bc2;

  // Walk the four parameter sets in lockstep.
  std::vector<std::span<const double>> gs;
  std::vector<std::span<double>> ms, vs;
  grads.for_each_tensor([&](const std::string&, std::span<const double> s) { gs.push_back(s); });
  state.m.for_each_tensor([&](const std::string&, std::span<double> s) { ms.push_back(s); });
  state.v.for_each_tensor([&](const std::string&, std::span<double> s) { vs.push_back(s); });
  std::size_t i = 0;
  params.for_each_tensor([&](const std::string& name, std::span<double> p) {
    if (i >= gs.size() || gs[i].size() != p.size() || ms[i].size() != p.size()) {
      throw ShapeError("adam_step: gradient shape mismatch at '" + name + "'");
    }
    const auto g = gs[i];
    const auto m = ms[i];
    const auto v = vs[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      p[j] -= decay * p[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] * inv_bc1;
      const double vhat = v[j] * inv_bc2;
      p[j] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
    ++i;
  });
}

PreparedBag prepare_bag(const Bag& bag, const GraphConfig& graph) {
  validate_bag(bag);
  return PreparedBag{bag.id, bag.label, bag.feature_matrix(),
                     build_graph(bag, graph.mode, graph.threshold)};
}

std::vector<PreparedBag> prepare_bags(const std::vector<Bag>& bags, const GraphConfig& graph) {
  std::vector<PreparedBag> out;
  out.reserve(bags.size());
  for (const Bag& b : bags) out.push_back(prepare_bag(b, graph));
  return out;
}

double mean_loss(const ModelParams& params, const std::vector<PreparedBag>& bags) {
  double total = 0.0;
  for (const PreparedBag& b : bags)
    total += trace_loss(forward(b.features, b.graph, params), b.label);
  return total / static_cast<double>(bags.size());
}

namespace {

void check_split(const std::vector<PreparedBag>& bags, const ModelConfig& cfg, const char* what) {
  if (bags.empty()) throw ContractError(std::string("train_one: empty ") + what + " split");
  for (const PreparedBag& b : bags) {
    if (b.features.cols() != cfg.input_dim) {
      throw ContractError(std::string("train_one: ") + what + " bag '" + b.id + "' has " +
                          std::to_string(b.features.cols()) + " features, model expects " +
                          std::to_string(cfg.input_dim));
    }
    if (b.label < 0 || static_cast<std::size_t>(b.label) >= cfg.num_classes) {
      throw ContractError(std::string("train_one: ") + what + " bag '" + b.id +
                          "' has label outside [0, num_classes)");
    }
    if (b.graph.num_nodes() != b.features.rows()) {
      throw ContractError("train_one: bag '" + b.id + "' graph does not match its features");
    }
  }
}

}  // namespace

TrainResult train_one(const std::vector<PreparedBag>& train, const std::vector<PreparedBag>& val,
                      const ModelConfig& model_cfg, const TrainConfig& cfg, std::uint64_t seed) {
  model_cfg.validate();
  cfg.validate();
  check_split(train, model_cfg, "training");
  check_split(val, model_cfg, "validation");

  Rng init_rng(derive_seed(seed, {0}));
  Rng order_rng(derive_seed(seed, {1}));
  ModelParams params = ModelParams::init(model_cfg, init_rng);
  AdamState adam = AdamState::init(params);

  TrainResult result;
  result.best = params;
  result.best_val_loss = std::numeric_limits<double>::infinity();

  Gradients grads = params.zeros_like();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    order_rng.shuffle(order);
    double train_loss = 0.0;
    for (std::size_t idx : order) {
      const PreparedBag& b = train[idx];
      const ForwardTrace trace = forward(b.features, b.graph, params);
      train_loss += trace_loss(trace, b.label);
      backward_into(trace, b.features, b.graph, params, b.label, grads);
      adam_step(params, grads, adam, cfg);
    }
    const double val_loss = mean_loss(params, val);
    train_loss /= static_cast<double>(train.size());
    if (!std::isfinite(val_loss) || !std::isfinite(train_loss)) {
      throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
    }
    result.history.push_back({epoch, train_loss, val_loss});
    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      result.best = params;
    }
  }
  return result;
}

std::vector<Prediction> predict(const ModelParams& params, const std::vector<PreparedBag>& bags) {
  std::vector<Prediction> out;
  out.reserve(bags.size());
  for (const PreparedBag& b : bags)
    out.push_back({forward(b.features, b.graph, params).positive_probability(), b.label});
  return out;
}

Metrics compute_metrics(std::span<const Prediction> preds) {
  if (preds.empty()) throw ContractError("compute_metrics: no predictions");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (const Prediction& p : preds) {
    const bool predicted = p.prob >= 0.5;
    if (p.label == 1) {
      predicted ? ++tp : ++fn;
    } else {
      predicted ? ++fp : ++tn;
    }
  }
  Metrics m;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(preds.size());
  m.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  m.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.f_score = m.precision + m.recall > 0.0
                  ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                  : 0.0;

  const std::size_t n_pos = tp + fn;
  const std::size_t n_neg = tn + fp;
  if (n_pos > 0 && n_neg > 0) {
    // Mann-Whitney U from average ranks.
    std::vector<std::size_t> idx(preds.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return preds[a].prob < preds[b].prob; });
    double pos_rank_sum = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j < idx.size() && preds[idx[j]].prob == preds[idx[i]].prob) ++j;
      const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
      for (std::size_t t = i; t < j; ++t)
        if (preds[idx[t]].label == 1) pos_rank_sum += avg_rank;
      i = j;
    }
    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(n_neg);
    m.auc = (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
  }
  return m;
}

std::vector<std::size_t> stratified_folds(std::span<const int> labels, std::size_t folds,
                                          Rng& rng) {
  if (folds < 2 || folds > labels.size()) {
    throw ConfigError("stratified_folds: need 2 <= folds <= " + std::to_string(labels.size()));
  }
  const int max_label = *std::max_element(labels.begin(), labels.end());
  std::vector<std::size_t> dealt;
  dealt.reserve(labels.size());
  for (int c = 0; c <= max_label; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) members.push_back(i);
    rng.shuffle(members);
    dealt.insert(dealt.end(), members.begin(), members.end());
  }
  // Dealing the class-grouped sequence round-robin keeps every class spread
  // evenly and fold sizes within one of each other.
  std::vector<std::size_t> assignment(labels.size());
  for (std::size_t pos = 0; pos < dealt.size(); ++pos) assignment[dealt[pos]] = pos % folds;
  return assignment;
}

void to_json(nlohmann::json& j, const FoldReport& r) {
  j = nlohmann::json{{"repeat", r.repeat},
                     {"fold", r.fold},
                     {"test_size", r.test_size},
                     {"accuracy", r.accuracy},
                     {"precision", r.precision},
                     {"recall", r.recall},
                     {"f_score", r.f_score},
                     {"auc", r.auc ? nlohmann::json(*r.auc) : nlohmann::json(nullptr)},
                     {"best_val_loss", r.best_val_loss},
                     {"best_epoch", r.best_epoch},
                     {"epochs_run", r.epochs_run}};
}

MeanStderr mean_stderr(std::span<const double> values) {
  MeanStderr s;
  s.n = values.size();
  if (s.n == 0) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  if (s.n > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    const double sd = std::sqrt(sq / static_cast<double>(s.n - 1));
    s.stderr_ = sd / std::sqrt(static_cast<double>(s.n));
  }
  return s;
}

namespace {

nlohmann::json summary_json(const MetricSummary& s) {
  auto one = [](const MeanStderr& m) {
    return nlohmann::json{{"mean", m.mean}, {"stderr", m.stderr_}, {"n", m.n}};
  };
  return {{"over_folds", one(s.over_folds)}, {"over_repeats", one(s.over_repeats)}};
}

MetricSummary summarize(const std::vector<FoldReport>& folds, std::size_t repeats,
                        const std::function<std::optional<double>(const FoldReport&)>& get) {
  std::vector<double> all;
  std::vector<std::vector<double>> per_repeat(repeats);
  for (const FoldReport& r : folds) {
    if (auto v = get(r)) {
      all.push_back(*v);
      per_repeat[r.repeat].push_back(*v);
    }
  }
  std::vector<double> repeat_means;
  for (const auto& vals : per_repeat)
    if (!vals.empty()) repeat_means.push_back(mean_stderr(vals).mean);
  return {mean_stderr(all), mean_stderr(repeat_means)};
}

}  // namespace

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(
    std::span<const int> labels, double fraction, Rng& rng) {
  if (labels.size() < 2) throw ContractError("stratified_holdout: need at least two items");
  const int max_label = *std::max_element(labels.begin(), labels.end());
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label) + 1);
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  std::vector<std::size_t> keep, held;
  for (auto& members : by_class) {
    rng.shuffle(members);
    auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    // Leave at least one item of the class on the training side.
    take = std::min(take, members.empty() ? 0 : members.size() - 1);
    held.insert(held.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    keep.insert(keep.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  if (held.empty()) {
    auto largest = std::max_element(by_class.begin(), by_class.end(),
                                    [](const auto& a, const auto& b) { return a.size() < b.size(); });
    const std::size_t moved = largest->back();
    held.push_back(moved);
    keep.erase(std::find(keep.begin(), keep.end(), moved));
  }
  std::sort(keep.begin(), keep.end());
  std::sort(held.begin(), held.end());
  return {keep, held};
}

void to_json(nlohmann::json& j, const CrossValidationResult& r) {
  j = nlohmann::json{{"folds", r.folds},
                     {"summary",
                      {{"accuracy", summary_json(r.accuracy)},
                       {"precision", summary_json(r.precision)},
                       {"recall", summary_json(r.recall)},
                       {"f_score", summary_json(r.f_score)},
                       {"auc", summary_json(r.auc)}}}};
}

FoldTrainer default_fold_trainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  return [model_cfg, train_cfg](const FoldData& fd) {
    TrainResult tr = train_one(*fd.train, *fd.val, model_cfg, train_cfg, fd.seed);
    FoldModel fm;
    fm.best_val_loss = tr.best_val_loss;
    fm.best_epoch = tr.best_epoch;
    fm.epochs_run = tr.history.size();
    fm.positive_probability = [params = std::move(tr.best)](const PreparedBag& b) {
      return forward(b.features, b.graph, params).positive_probability();
    };
    return fm;
  };
}

CrossValidationResult cross_validate(const std::vector<Bag>& bags, const ModelConfig& model_cfg,
                                     const TrainConfig& cfg, const GraphConfig& graph_cfg,
                                     const FoldTrainer& trainer_in) {
  cfg.validate();
  if (bags.empty()) throw ContractError("cross_validate: no bags");
  if (cfg.folds > bags.size()) {
    throw ConfigError("cross_validate: " + std::to_string(cfg.folds) + " folds for " +
                      std::to_string(bags.size()) + " bags");
  }
  std::vector<int> labels;
  for (const Bag& b : bags) {
    if (b.label != 0 && b.label != 1) {
      throw ContractError("cross_validate: bag '" + b.id + "' is not binary-labeled");
    }
    labels.push_back(b.label);
  }
  const FoldTrainer trainer = trainer_in ? trainer_in : default_fold_trainer(model_cfg, cfg);

  // Fold assignments for every repeat are drawn up front, serially.
  std::vector<std::vector<std::size_t>> assignments;
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    Rng rng(derive_seed(cfg.seed, {r, 0xF01D}));
    assignments.push_back(stratified_folds(labels, cfg.folds, rng));
  }

  const std::size_t tasks = cfg.repeats * cfg.folds;
  std::vector<FoldReport> reports(tasks);
  std::vector<std::exception_ptr> errors(tasks);

#ifdef _OPENMP
  const int threads = cfg.threads > 0 ? cfg.threads : omp_get_max_threads();
#endif
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (std::ptrdiff_t ti = 0; ti < static_cast<std::ptrdiff_t>(tasks); ++ti) {
    const auto task = static_cast<std::size_t>(ti);
    const std::size_t r = task / cfg.folds;
    const std::size_t f = task % cfg.folds;
    try {
      std::vector<std::size_t> pool, test;
      for (std::size_t i = 0; i < bags.size(); ++i)
        (assignments[r][i] == f ? test : pool).push_back(i);
      bool has0 = false, has1 = false;
      for (std::size_t i : pool) (bags[i].label == 1 ? has1 : has0) = true;
      if (!has0 || !has1) {
        throw StratificationError("repeat " + std::to_string(r) + " fold " + std::to_string(f) +
                                  ": training portion contains a single class");
      }
      Rng split_rng(derive_seed(cfg.seed, {r, f, 0x5A11}));
      std::vector<int> pool_labels;
      for (std::size_t i : pool) pool_labels.push_back(bags[i].label);
      auto [keep, held] = stratified_holdout(pool_labels, cfg.val_fraction, split_rng);
      std::vector<std::size_t> train_idx, val_idx;
      for (std::size_t i : keep) train_idx.push_back(pool[i]);
      for (std::size_t i : held) val_idx.push_back(pool[i]);
      has0 = has1 = false;
      for (std::size_t i : train_idx) (bags[i].label == 1 ? has1 : has0) = true;
      if (!has0 || !has1) {
        throw StratificationError("repeat " + std::to_string(r) + " fold " + std::to_string(f) +
                                  ": training split contains a single class");
      }

      auto pick = [&](const std::vector<std::size_t>& idx) {
        std::vector<Bag> out;
        out.reserve(idx.size());
        for (std::size_t i : idx) out.push_back(bags[i]);
        return out;
      };
      std::vector<Bag> train_bags = pick(train_idx);
      std::vector<Bag> val_bags = pick(val_idx);
      std::vector<Bag> test_bags = pick(test);
      if (cfg.standardize) {
        const Standardizer z = Standardizer::fit(train_bags);
        train_bags = z.apply(train_bags);
        val_bags = z.apply(val_bags);
        test_bags = z.apply(test_bags);
      }
      const auto train_p = prepare_bags(train_bags, graph_cfg);
      const auto val_p = prepare_bags(val_bags, graph_cfg);
      const auto test_p = prepare_bags(test_bags, graph_cfg);

      FoldData fd{r, f, derive_seed(cfg.seed, {r, f, 0x7EA1}), &train_p, &val_p};
      const FoldModel model = trainer(fd);

      std::vector<Prediction> preds;
      for (const PreparedBag& b : test_p) preds.push_back({model.positive_probability(b), b.label});
      const Metrics m = compute_metrics(preds);
      FoldReport& rep = reports[task];
      rep.repeat = r;
      rep.fold = f;
      rep.test_size = test_p.size();
      rep.accuracy = m.accuracy;
      rep.precision = m.precision;
      rep.recall = m.recall;
      rep.f_score = m.f_score;
      rep.auc = m.auc;
      rep.best_val_loss = model.best_val_loss;
      rep.best_epoch = model.best_epoch;
      rep.epochs_run = model.epochs_run;
    } catch (...) {
      errors[task] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  CrossValidationResult res;
  res.folds = std::move(reports);
  res.accuracy = summarize(res.folds, cfg.repeats, [](const FoldReport& r) { return std::optional(r.accuracy); });
  res.precision = summarize(res.folds, cfg.repeats, [](const FoldReport& r) { return std::optional(r.precision); });
  res.recall = summarize(res.folds, cfg.repeats, [](const FoldReport& r) { return std::optional(r.recall); });
  res.f_score = summarize(res.folds, cfg.repeats, [](const FoldReport& r) { return std::optional(r.f_score); });
  res.auc = summarize(res.folds, cfg.repeats, [](const FoldReport& r) { return r.auc; });
  return res;
}

}  // namespace gmil
