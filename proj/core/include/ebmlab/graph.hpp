#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ebmlab/tensor.hpp"

namespace ebmlab {

// Max-shifted log(sum(exp(v))). Throws on an empty vector.
double logsumexp(std::span<const double> v);
// logsumexp(logits) - logits[label].
double softmax_cross_entropy(std::span<const double> logits, std::size_t label);
std::vector<double> softmax(std::span<const double> logits);

using NodeId = std::size_t;

enum class Padding { kValid, kSame };

// A static reverse-mode computation graph. Nodes are appended in topological
// order; shapes are inferred and checked while the graph is built, so a
// malformed model fails at construction rather than mid-attack.
//
// Leading axis is the batch axis for every op except `sum`.
//
// evaluate() keeps pointers to the bound tensors; they must outlive the
// following backward() call. A graph is not safe to share across threads
// during a pass.
class Graph {
 public:
  using Bindings = std::map<std::string, const Tensor*, std::less<>>;

  NodeId input(std::string name, Shape shape, bool requires_grad = true);

  NodeId matmul(NodeId a, NodeId w);                    // [N,d] x [d,h] -> [N,h]
  NodeId conv2d(NodeId x, NodeId w, Padding padding);   // [N,C,H,W] * [O,C,k,k]
  NodeId bias_add(NodeId x, NodeId b);                  // b:[C] along axis 1
  NodeId relu(NodeId x);
  NodeId reshape(NodeId x, Shape shape);
  NodeId logsumexp(NodeId x);                           // [N,K] -> [N]
  NodeId softmax_cross_entropy(NodeId logits, std::vector<std::size_t> labels);  // [N,K] -> [N]
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId sum(NodeId a);                                 // -> [1]

  void set_output(NodeId id);
  NodeId output() const;

  const Shape& shape(NodeId id) const;
  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::string describe(NodeId id) const;

  const Tensor& evaluate(const Bindings& bindings);
  // Reverse pass seeded with d(output); populates gradients of every input
  // declared with requires_grad.
  void backward(const Tensor& seed);

  const Tensor& value(NodeId id) const;
  const Tensor& result() const { return value(output()); }
  std::span<const double> gradient(std::string_view input_name) const;

 private:
  enum class Op {
    kInput, kMatMul, kConv2d, kBiasAdd, kRelu, kReshape,
    kLogSumExp, kSoftmaxCrossEntropy, kAdd, kScale, kSum
  };

  struct Node {
    Op op;
    std::vector<NodeId> args;
    Shape shape;
    std::string name;  // inputs only
    bool requires_grad = false;
    Padding padding = Padding::kValid;
    double factor = 1.0;
    std::vector<std::size_t> labels;
  };

  NodeId append(Node node);
  void check_id(NodeId id) const;
  void forward_node(NodeId id);
  void backward_node(NodeId id);
  NodeId find_input(std::string_view name) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> values_;
  std::vector<const Tensor*> bound_;
  std::vector<std::vector<double>> grads_;
  NodeId output_ = static_cast<NodeId>(-1);
  bool evaluated_ = false;
  bool differentiated_ = false;
};

}  // namespace ebmlab
