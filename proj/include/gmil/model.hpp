#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmil/bag_graph.hpp"
#include "gmil/linalg.hpp"

namespace gmil {

/// How instance embeddings are mixed: degree-normalized graph convolution, or
/// a plain per-instance dense map (the graph is ignored).
enum class ConvMode { kGraph, kDense };
/// Whether attention scores average projected embeddings over N(k) or use
/// each instance alone.
enum class AttentionMode { kGraph, kPlain };

std::string to_string(ConvMode m);
std::string to_string(AttentionMode m);
ConvMode parse_conv_mode(const std::string& s);
AttentionMode parse_attention_mode(const std::string& s);

struct ModelConfig {
  std::size_t input_dim = 0;
  /// Optional instance encoder f: ReLU MLP widths. Empty means identity.
  std::vector<std::size_t> encoder_dims;
  std::vector<std::size_t> conv_dims{256, 128, 64};
  std::size_t attention_dim = 64;
  std::size_t num_classes = 2;
  ConvMode conv_mode = ConvMode::kGraph;
  AttentionMode attention_mode = AttentionMode::kGraph;

  /// Throws ConfigError on a zero dimension or fewer than two classes.
  void validate() const;
  std::size_t encoded_dim() const;
  std::size_t embedding_dim() const { return conv_dims.back(); }
  /// One logit for the binary case, one per class otherwise.
  std::size_t head_outputs() const { return num_classes == 2 ? 1 : num_classes; }

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct DenseLayer {
  Matrix weight;  // in x out
  Vector bias;
  bool operator==(const DenseLayer&) const = default;
};

/// Every trainable tensor. Also used for gradients and optimizer moments.
struct ParameterSet {
  std::vector<DenseLayer> encoder;
  std::vector<Matrix> conv;  // W_l: in x out, no bias
  Vector att_u;              // L
  Matrix att_v;              // L x F2
  Matrix head_w;             // outputs x F2
  Vector head_b;

  /// Zero tensors with the same shapes.
  ParameterSet zeros_like() const;
  std::size_t num_values() const;

  /// Calls fn(name, span) for every tensor in a fixed order.
  template <class Fn>
  void for_each_tensor(Fn&& fn) {
    for (std::size_t i = 0; i < encoder.size(); ++i) {
      fn("encoder." + std::to_string(i) + ".weight", encoder[i].weight.data());
      fn("encoder." + std::to_string(i) + ".bias", std::span<double>(encoder[i].bias));
    }
    for (std::size_t i = 0; i < conv.size(); ++i)
      fn("conv." + std::to_string(i) + ".weight", conv[i].data());
    fn(std::string("attention.u"), std::span<double>(att_u));
    fn(std::string("attention.V"), att_v.data());
    fn(std::string("head.weight"), head_w.data());
    fn(std::string("head.bias"), std::span<double>(head_b));
  }
  template <class Fn>
  void for_each_tensor(Fn&& fn) const {
    const_cast<ParameterSet*>(this)->for_each_tensor(
        [&](const std::string& name, std::span<double> s) {
          fn(name, std::span<const double>(s.data(), s.size()));
        });
  }

  bool operator==(const ParameterSet&) const = default;
};

using Gradients = ParameterSet;

struct ModelParams : ParameterSet {
  ModelConfig config;

  /// Xavier-uniform weights, zero biases.
  static ModelParams init(const ModelConfig& config, Rng& rng);
  /// Throws ShapeError if a tensor disagrees with the config.
  void check_shapes() const;

  bool operator==(const ModelParams&) const = default;
};

/// Intermediates of one forward pass, consumed by backward.
struct ForwardTrace {
  std::size_t num_instances = 0;
  std::vector<Matrix> encoder_pre;   // before ReLU
  std::vector<Matrix> encoder_out;   // after ReLU
  std::vector<Matrix> conv_input;    // H_l
  std::vector<Matrix> conv_partial;  // D^-1 A H_l or H_l W_l, whichever was formed
  std::vector<bool> conv_aggregated_first;
  std::vector<Matrix> conv_pre;  // P_l; ReLU(P_l) feeds layer l+1, P_last = z
  Matrix attention_hidden;       // tanh(D^-1 A z V^T), K x L
  Vector attention_scores;
  Vector alpha;
  Vector bag_embedding;  // Z
  Vector logits;
  /// Class probabilities (length num_classes; binary: [1-p, p]).
  Vector probs;

  const Matrix& embeddings() const { return conv_pre.back(); }
  double positive_probability() const { return probs.back(); }
  int predicted_class() const;
};

/// D^-1 A (features W).
Matrix graph_conv(const Matrix& features, const BagGraph& graph, const Matrix& weight);

struct AttentionPool {
  Vector scores;
  Vector alpha;
  Vector bag_embedding;
};

/// score_k = u . tanh(D^-1 A z V^T)_k, alpha = softmax(score), Z = sum alpha_k z_k.
AttentionPool graph_attention_pool(const Matrix& z, const BagGraph& graph, std::span<const double> u,
                                   const Matrix& v);

ForwardTrace forward(const Bag& bag, const BagGraph& graph, const ModelParams& params);
/// Same, with the stacked instance features supplied directly.
ForwardTrace forward(const Matrix& features, const BagGraph& graph, const ModelParams& params);

/// Gradient of the cross-entropy loss of `trace` against `label` with
/// respect to every parameter tensor.
Gradients backward(const ForwardTrace& trace, const Matrix& features, const BagGraph& graph,
                   const ModelParams& params, int label);
Gradients backward(const ForwardTrace& trace, const Bag& bag, const BagGraph& graph,
                   const ModelParams& params, int label);
/// Same as backward but reuses the storage of `out`.
void backward_into(const ForwardTrace& trace, const Matrix& features, const BagGraph& graph,
                   const ModelParams& params, int label, Gradients& out);

/// Rebuilds the graph on the permuted bag and compares scores (test support).
bool score_is_permutation_invariant(const Bag& bag, const ModelParams& params,
                                    std::span<const std::size_t> perm, GraphMode mode,
                                    double threshold = kDefaultSimilarityThreshold,
                                    double tolerance = 1e-9);

Bag permute_bag(const Bag& bag, std::span<const std::size_t> perm);

/// Model parameters plus caller-defined metadata, persisted as one file.
struct Checkpoint {
  ModelParams params;
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, Vector> extras;

  bool operator==(const Checkpoint&) const = default;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace gmil
