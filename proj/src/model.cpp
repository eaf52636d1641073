#include "gmil/model.hpp"

#include <algorithm>
#include <cmath>

#include "gmil/errors.hpp"
#include "gmil/kernels.hpp"

namespace gmil {

std::string to_string(ConvMode m) { return m == ConvMode::kGraph ? "graph" : "dense"; }
std::string to_string(AttentionMode m) { return m == AttentionMode::kGraph ? "graph" : "plain"; }

ConvMode parse_conv_mode(const std::string& s) {
  if (s == "graph") return ConvMode::kGraph;
  if (s == "dense") return ConvMode::kDense;
  throw ConfigError("unknown conv mode '" + s + "' (expected graph|dense)");
}

AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "graph") return AttentionMode::kGraph;
  if (s == "plain") return AttentionMode::kPlain;
  throw ConfigError("unknown attention mode '" + s + "' (expected graph|plain)");
}

void ModelConfig::validate() const {
  if (input_dim == 0) throw ConfigError("model: input_dim must be >= 1");
  if (conv_dims.empty()) throw ConfigError("model: at least one conv layer is required");
  auto positive = [](std::size_t d) { return d >= 1; };
  if (!std::all_of(conv_dims.begin(), conv_dims.end(), positive) ||
      !std::all_of(encoder_dims.begin(), encoder_dims.end(), positive)) {
    throw ConfigError("model: layer widths must be >= 1");
  }
  if (attention_dim == 0) throw ConfigError("model: attention_dim must be >= 1");
  if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
}

std::size_t ModelConfig::encoded_dim() const {
  return encoder_dims.empty() ? input_dim : encoder_dims.back();
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"input_dim", c.input_dim},
                     {"encoder_dims", c.encoder_dims},
                     {"conv_dims", c.conv_dims},
                     {"attention_dim", c.attention_dim},
                     {"num_classes", c.num_classes},
                     {"conv_mode", to_string(c.conv_mode)},
                     {"attention_mode", to_string(c.attention_mode)}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.input_dim = j.value("input_dim", c.input_dim);
  c.encoder_dims = j.value("encoder_dims", c.encoder_dims);
  c.conv_dims = j.value("conv_dims", c.conv_dims);
  c.attention_dim = j.value("attention_dim", c.attention_dim);
  c.num_classes = j.value("num_classes", c.num_classes);
  if (j.contains("conv_mode")) c.conv_mode = parse_conv_mode(j.at("conv_mode").get<std::string>());
  if (j.contains("attention_mode"))
    c.attention_mode = parse_attention_mode(j.at("attention_mode").get<std::string>());
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet z = *this;
  z.for_each_tensor([](const std::string&, std::span<double> s) {
    std::fill(s.begin(), s.end(), 0.0);
  });
  return z;
}

std::size_t ParameterSet::num_values() const {
  std::size_t n = 0;
  for_each_tensor([&](const std::string&, std::span<const double> s) { n += s.size(); });
  return n;
}

ModelParams ModelParams::init(const ModelConfig& config, Rng& rng) {
  config.validate();
  ModelParams p;
  p.config = config;
  std::size_t in = config.input_dim;
  for (std::size_t out : config.encoder_dims) {
    p.encoder.push_back({xavier_init(in, out, rng), Vector(out, 0.0)});
    in = out;
  }
  for (std::size_t out : config.conv_dims) {
    p.conv.push_back(xavier_init(in, out, rng));
    in = out;
  }
  const std::size_t f2 = config.embedding_dim();
  // u is an L x 1 matrix; initialize it as such.
  p.att_u = xavier_init(config.attention_dim, 1, rng).values();
  p.att_v = xavier_init(config.attention_dim, f2, rng);
  p.head_w = xavier_init(config.head_outputs(), f2, rng);
  p.head_b.assign(config.head_outputs(), 0.0);
  return p;
}

void ModelParams::check_shapes() const {
  config.validate();
  auto fail = [](const std::string& what) { throw ShapeError("parameters: " + what); };
  if (encoder.size() != config.encoder_dims.size()) fail("encoder depth differs from config");
  if (conv.size() != config.conv_dims.size()) fail("conv depth differs from config");
  std::size_t in = config.input_dim;
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    const std::size_t out = config.encoder_dims[i];
    if (encoder[i].weight.rows() != in || encoder[i].weight.cols() != out ||
        encoder[i].bias.size() != out)
      fail("encoder." + std::to_string(i) + " is " + encoder[i].weight.shape_str());
    in = out;
  }
  for (std::size_t i = 0; i < conv.size(); ++i) {
    const std::size_t out = config.conv_dims[i];
    if (conv[i].rows() != in || conv[i].cols() != out)
      fail("conv." + std::to_string(i) + " is " + conv[i].shape_str());
    in = out;
  }
  const std::size_t l = config.attention_dim;
  if (att_u.size() != l || att_v.rows() != l || att_v.cols() != in) fail("attention shapes");
  if (head_w.rows() != config.head_outputs() || head_w.cols() != in ||
      head_b.size() != config.head_outputs())
    fail("head shapes");
}

int ForwardTrace::predicted_class() const {
  if (probs.size() == 2) return probs[1] >= 0.5 ? 1 : 0;
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

namespace {

void add_bias_rows(Matrix& m, const Vector& b) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) row[c] += b[c];
  }
}

Matrix relu_of(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.data()) v = relu(v);
  return out;
}

// dX *= 1[pre > 0]
void mask_relu(Matrix& grad, const Matrix& pre) {
  auto g = grad.data();
  auto p = pre.data();
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(p[i] > 0.0)) g[i] = 0.0;
}

void add_into(Matrix& dst, const Matrix& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

const NeighborLists* conv_graph(const ModelConfig& c, const BagGraph& g) {
  return c.conv_mode == ConvMode::kGraph ? &g.lists : nullptr;
}

const NeighborLists* attention_graph(const ModelConfig& c, const BagGraph& g) {
  return c.attention_mode == AttentionMode::kGraph ? &g.lists : nullptr;
}

Matrix maybe_aggregate(const NeighborLists* g, Matrix x) {
  return g ? kernels::aggregate(*g, x) : x;
}

Matrix maybe_aggregate_t(const NeighborLists* g, Matrix x) {
  return g ? kernels::aggregate_transposed(*g, x) : x;
}

struct AttentionState {
  Matrix hidden;
  Vector scores;
  Vector alpha;
  Vector pooled;
};

AttentionState attend(const Matrix& z, const NeighborLists* g, std::span<const double> u,
                      const Matrix& v) {
  if (v.cols() != z.cols() || u.size() != v.rows()) {
    throw ShapeError("graph_attention_pool: z is " + z.shape_str() + ", V is " + v.shape_str() +
                     ", u has " + std::to_string(u.size()) + " entries");
  }
  AttentionState s;
  s.hidden = maybe_aggregate(g, kernels::matmul_nt(z, v));
  for (double& x : s.hidden.data()) x = tanh_act(x);
  const std::size_t k = z.rows();
  s.scores.assign(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) s.scores[i] = dot(s.hidden.row(i), u);
  s.alpha = softmax(s.scores);
  s.pooled.assign(z.cols(), 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    auto zr = z.row(i);
    for (std::size_t c = 0; c < z.cols(); ++c) s.pooled[c] += s.alpha[i] * zr[c];
  }
  return s;
}

void check_graph(const BagGraph& graph, std::size_t k) {
  if (graph.num_nodes() != k) {
    throw ShapeError("graph has " + std::to_string(graph.num_nodes()) + " nodes but bag has " +
                     std::to_string(k) + " instances");
  }
}

}  // namespace

Matrix graph_conv(const Matrix& features, const BagGraph& graph, const Matrix& weight) {
  if (features.cols() != weight.rows()) {
    throw ShapeError("graph_conv: features " + features.shape_str() + " vs weight " +
                     weight.shape_str());
  }
  check_graph(graph, features.rows());
  return kernels::aggregate(graph.lists, kernels::matmul(features, weight));
}

AttentionPool graph_attention_pool(const Matrix& z, const BagGraph& graph, std::span<const double> u,
                                   const Matrix& v) {
  check_graph(graph, z.rows());
  AttentionState s = attend(z, &graph.lists, u, v);
  return {std::move(s.scores), std::move(s.alpha), std::move(s.pooled)};
}

ForwardTrace forward(const Bag& bag, const BagGraph& graph, const ModelParams& params) {
  return forward(bag.feature_matrix(), graph, params);
}

ForwardTrace forward(const Matrix& features, const BagGraph& graph, const ModelParams& params) {
  const ModelConfig& cfg = params.config;
  if (features.cols() != cfg.input_dim) {
    throw ShapeError("forward: bag has " + std::to_string(features.cols()) +
                     " features, model expects " + std::to_string(cfg.input_dim));
  }
  if (features.rows() == 0) throw ShapeError("forward: empty bag");
  check_graph(graph, features.rows());

  ForwardTrace t;
  t.num_instances = features.rows();

  Matrix h = features;
  for (const DenseLayer& layer : params.encoder) {
    Matrix pre = kernels::matmul(h, layer.weight);
    add_bias_rows(pre, layer.bias);
    h = relu_of(pre);
    t.encoder_pre.push_back(std::move(pre));
    t.encoder_out.push_back(h);
  }

  const NeighborLists* gc = conv_graph(cfg, graph);
  for (std::size_t l = 0; l < params.conv.size(); ++l) {
    const Matrix& w = params.conv[l];
    const bool agg_first = gc != nullptr && w.rows() <= w.cols();
    Matrix partial;
    Matrix pre;
    if (agg_first) {
      partial = kernels::aggregate(*gc, h);
      pre = kernels::matmul(partial, w);
    } else if (gc != nullptr) {
      partial = kernels::matmul(h, w);
      pre = kernels::aggregate(*gc, partial);
    } else {
      pre = kernels::matmul(h, w);
    }
    t.conv_input.push_back(std::move(h));
    t.conv_partial.push_back(std::move(partial));
    t.conv_aggregated_first.push_back(agg_first);
    if (l + 1 < params.conv.size()) h = relu_of(pre);
    t.conv_pre.push_back(std::move(pre));
  }

  AttentionState att = attend(t.embeddings(), attention_graph(cfg, graph), params.att_u,
                              params.att_v);
  t.attention_hidden = std::move(att.hidden);
  t.attention_scores = std::move(att.scores);
  t.alpha = std::move(att.alpha);
  t.bag_embedding = std::move(att.pooled);

  const std::size_t outs = cfg.head_outputs();
  t.logits.assign(outs, 0.0);
  for (std::size_t o = 0; o < outs; ++o)
    t.logits[o] = dot(params.head_w.row(o), t.bag_embedding) + params.head_b[o];
  if (outs == 1) {
    const double p = stable_sigmoid(t.logits[0]);
    t.probs = {1.0 - p, p};
  } else {
    t.probs = softmax(t.logits);
  }
  return t;
}

Gradients backward(const ForwardTrace& trace, const Bag& bag, const BagGraph& graph,
                   const ModelParams& params, int label) {
  return backward(trace, bag.feature_matrix(), graph, params, label);
}

Gradients backward(const ForwardTrace& t, const Matrix& features, const BagGraph& graph,
                   const ModelParams& params, int label) {
  Gradients g = params.zeros_like();
  backward_into(t, features, graph, params, label, g);
  return g;
}

void backward_into(const ForwardTrace& t, const Matrix& features, const BagGraph& graph,
                   const ModelParams& params, int label, Gradients& g) {
  const ModelConfig& cfg = params.config;
  const std::size_t k = features.rows();
  if (t.num_instances != k || t.alpha.size() != k || graph.num_nodes() != k ||
      t.conv_pre.size() != params.conv.size() || t.encoder_pre.size() != params.encoder.size() ||
      t.bag_embedding.size() != cfg.embedding_dim() || t.probs.size() != cfg.num_classes) {
    throw ContractError("backward: trace does not match the given bag/parameters");
  }
  if (label < 0 || static_cast<std::size_t>(label) >= cfg.num_classes) {
    throw ContractError("backward: label " + std::to_string(label) + " out of range");
  }

  if (g.encoder.size() != params.encoder.size() || g.conv.size() != params.conv.size() ||
      g.num_values() != params.num_values()) {
    g = params.zeros_like();
  }
  // Tensors written by accumulation; the rest are overwritten below.
  std::fill(g.att_u.begin(), g.att_u.end(), 0.0);
  for (auto& layer : g.encoder) std::fill(layer.bias.begin(), layer.bias.end(), 0.0);

  const std::size_t outs = cfg.head_outputs();
  const std::size_t f2 = cfg.embedding_dim();

  // d loss / d logits for cross-entropy on sigmoid / softmax.
  Vector dlogits(outs);
  if (outs == 1) {
    dlogits[0] = t.probs[1] - static_cast<double>(label);
  } else {
    for (std::size_t o = 0; o < outs; ++o)
      dlogits[o] = t.probs[o] - (static_cast<int>(o) == label ? 1.0 : 0.0);
  }

  Vector dpooled(f2, 0.0);
  for (std::size_t o = 0; o < outs; ++o) {
    g.head_b[o] = dlogits[o];
    auto wrow = params.head_w.row(o);
    auto grow = g.head_w.row(o);
    for (std::size_t c = 0; c < f2; ++c) {
      grow[c] = dlogits[o] * t.bag_embedding[c];
      dpooled[c] += dlogits[o] * wrow[c];
    }
  }

  // Z = sum_k alpha_k z_k
  const Matrix& z = t.embeddings();
  Matrix dz(k, f2);
  Vector dalpha(k);
  for (std::size_t i = 0; i < k; ++i) {
    auto zr = z.row(i);
    auto dzr = dz.row(i);
    for (std::size_t c = 0; c < f2; ++c) dzr[c] = t.alpha[i] * dpooled[c];
    dalpha[i] = dot(zr, dpooled);
  }
  double mean_dalpha = 0.0;
  for (std::size_t i = 0; i < k; ++i) mean_dalpha += t.alpha[i] * dalpha[i];
  Vector dscore(k);
  for (std::size_t i = 0; i < k; ++i) dscore[i] = t.alpha[i] * (dalpha[i] - mean_dalpha);

  // score_k = u . T_k, T = tanh(Q), Q = G (z V^T)
  const std::size_t l_dim = cfg.attention_dim;
  Matrix dq(k, l_dim);
  for (std::size_t i = 0; i < k; ++i) {
    auto tr = t.attention_hidden.row(i);
    auto dqr = dq.row(i);
    for (std::size_t c = 0; c < l_dim; ++c) {
      g.att_u[c] += dscore[i] * tr[c];
      dqr[c] = dscore[i] * params.att_u[c] * (1.0 - tr[c] * tr[c]);
    }
  }
  const Matrix dm = maybe_aggregate_t(attention_graph(cfg, graph), std::move(dq));
  kernels::matmul_tn_into(dm, z, g.att_v);
  add_into(dz, kernels::matmul(dm, params.att_v));

  // Graph-conv stack, last layer first.
  const NeighborLists* gc = conv_graph(cfg, graph);
  const bool need_input_grad = !params.encoder.empty();
  Matrix dpre = std::move(dz);
  for (std::size_t l = params.conv.size(); l-- > 0;) {
    const Matrix& w = params.conv[l];
    const bool want_dh = l > 0 || need_input_grad;
    Matrix dh;
    if (t.conv_aggregated_first[l]) {
      kernels::matmul_tn_into(t.conv_partial[l], dpre, g.conv[l]);
      if (want_dh) dh = kernels::aggregate_transposed(*gc, kernels::matmul_nt(dpre, w));
    } else {
      const Matrix dhw = maybe_aggregate_t(gc, std::move(dpre));
      kernels::matmul_tn_into(t.conv_input[l], dhw, g.conv[l]);
      if (want_dh) dh = kernels::matmul_nt(dhw, w);
    }
    if (l > 0) {
      mask_relu(dh, t.conv_pre[l - 1]);
      dpre = std::move(dh);
    } else {
      dpre = std::move(dh);  // gradient w.r.t. f(x); empty when unused
    }
  }

  for (std::size_t e = params.encoder.size(); e-- > 0;) {
    Matrix dout = std::move(dpre);
    mask_relu(dout, t.encoder_pre[e]);
    const Matrix& input = e == 0 ? features : t.encoder_out[e - 1];
    kernels::matmul_tn_into(input, dout, g.encoder[e].weight);
    auto& db = g.encoder[e].bias;
    for (std::size_t r = 0; r < dout.rows(); ++r) {
      auto row = dout.row(r);
      for (std::size_t c = 0; c < dout.cols(); ++c) db[c] += row[c];
    }
    if (e > 0) dpre = kernels::matmul_nt(dout, params.encoder[e].weight);
  }
}

Bag permute_bag(const Bag& bag, std::span<const std::size_t> perm) {
  if (perm.size() != bag.size()) throw ContractError("permute_bag: permutation length mismatch");
  Bag out{bag.id, bag.label, {}};
  out.instances.reserve(bag.size());
  std::vector<bool> used(bag.size(), false);
  for (std::size_t p : perm) {
    if (p >= bag.size() || used[p]) throw ContractError("permute_bag: not a bijection");
    used[p] = true;
    out.instances.push_back(bag.instances[p]);
  }
  return out;
}

bool score_is_permutation_invariant(const Bag& bag, const ModelParams& params,
                                    std::span<const std::size_t> perm, GraphMode mode,
                                    double threshold, double tolerance) {
  const Bag permuted = permute_bag(bag, perm);
  const ForwardTrace a = forward(bag, build_graph(bag, mode, threshold), params);
  const ForwardTrace b = forward(permuted, build_graph(permuted, mode, threshold), params);
  for (std::size_t c = 0; c < a.probs.size(); ++c)
    if (!(std::abs(a.probs[c] - b.probs[c]) <= tolerance)) return false;
  return true;
}

}  // namespace gmil
