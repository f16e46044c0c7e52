#pragma once

// Tape-based reverse-mode differentiation.
//
// A Graph owns every node recorded on it. Gradients produced by backward()
// are themselves nodes of the same graph; with create_graph enabled they carry
// their own history and can be differentiated again, which is what lets an
// attacker differentiate through simulated local SGD steps.

#include <cstdint>
#include <deque>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsim/tensor.hpp"

namespace fedsim::ad {

enum class Op : std::uint8_t {
  leaf,
  matmul,
  add,
  sub,
  mul,
  scalar_mul,
  relu,
  tanh,
  softmax,
  softmax_cross_entropy,
  sum_to,
  broadcast_to,
  index_select,
  index_add,
  transpose,
  reshape,
};

const char* op_name(Op op);

/// Raised when an op's output contains NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when operand shapes violate an op's shape rule.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Graph;

/// Lightweight handle to a node. Valid while its Graph is alive.
class Var {
 public:
  Var() = default;

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  std::uint32_t id() const { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Graph;
  friend std::vector<Var> backward(Var root, std::span<const Var> wrt, bool create_graph);
  Var(Graph* g, std::uint32_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

struct NodeAux {
  double scalar = 0.0;
  Shape shape;
  std::shared_ptr<const std::vector<std::size_t>> indices;
  std::shared_ptr<const std::vector<int>> labels;
};

struct Node {
  Op op = Op::leaf;
  std::uint32_t input0 = 0;
  std::uint32_t input1 = 0;
  std::uint8_t num_inputs = 0;
  bool requires_grad = false;
  Tensor value;
  NodeAux aux;
};

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::uint32_t id) const { return nodes_[id]; }

  bool grad_enabled() const { return grad_enabled_; }

  /// Disables history recording for its lifetime; new nodes become constants.
  class NoGradGuard {
   public:
    explicit NoGradGuard(Graph& g) : graph_(g), prev_(g.grad_enabled_) {
      g.grad_enabled_ = false;
    }
    ~NoGradGuard() { graph_.grad_enabled_ = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    Graph& graph_;
    bool prev_;
  };

  Var record(Op op, std::span<const Var> inputs, Tensor value, NodeAux aux = {});

 private:
  friend class Var;
  friend std::vector<Var> backward(Var root, std::span<const Var> wrt, bool create_graph);

  class GradModeGuard {
   public:
    GradModeGuard(Graph& g, bool enabled) : graph_(g), prev_(g.grad_enabled_) {
      g.grad_enabled_ = enabled;
    }
    ~GradModeGuard() { graph_.grad_enabled_ = prev_; }
    GradModeGuard(const GradModeGuard&) = delete;
    GradModeGuard& operator=(const GradModeGuard&) = delete;

   private:
    Graph& graph_;
    bool prev_;
  };

  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

// Forward ops. Binary elementwise ops require identical shapes; use
// broadcast_to for explicit broadcasting.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scalar_mul(Var a, double c);
Var relu(Var a);
Var tanh(Var a);
/// Row-wise softmax of a (rows, classes) matrix.
Var softmax(Var logits);
/// Mean cross-entropy of row-wise softmax(logits) against integer labels.
Var softmax_cross_entropy(Var logits, std::shared_ptr<const std::vector<int>> labels);
Var softmax_cross_entropy(Var logits, const std::vector<int>& labels);
/// Sums a into `shape`, which is () or the input rank with some dims reduced to 1.
Var sum_to(Var a, Shape shape);
/// Inverse of sum_to: replicates a along its size-1 (or scalar) dims.
Var broadcast_to(Var a, Shape shape);
Var sum(Var a);
Var mean(Var a);
/// Selects elements of a vector, or rows of a matrix.
Var index_select(Var a, std::shared_ptr<const std::vector<std::size_t>> indices);
/// Scatter-adds rows (or elements) of a into a zero tensor of `shape`.
Var index_add(Var a, std::shared_ptr<const std::vector<std::size_t>> indices, Shape shape);
Var transpose(Var a);
Var reshape(Var a, Shape shape);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var a) { return scalar_mul(a, c); }

/// Gradients of a scalar `root` with respect to each node in `wrt`.
///
/// Nodes in `wrt` that `root` does not depend on receive zero gradients. With
/// create_graph the returned nodes record their own history; otherwise they
/// are constants.
std::vector<Var> backward(Var root, std::span<const Var> wrt, bool create_graph = false);

/// Convenience wrapper returning plain tensors.
std::vector<Tensor> gradients(Var root, std::span<const Var> wrt);

}  // namespace fedsim::ad
