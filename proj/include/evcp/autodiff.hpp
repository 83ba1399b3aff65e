#pragma once

// Minimal tensor-level reverse-mode automatic differentiation.
//
// A Var is a shared handle to a node on a dynamically built tape. Each op
// computes its value eagerly and records a closure that scatters the output
// gradient into its parents. Calling backward() on a scalar Var walks the tape
// in reverse topological order. Leaves created with Var::parameter() accumulate
// gradients; Var::constant() leaves never do, and ops whose inputs are all
// constants do not record a closure at all.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace evcp::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

class Var {
 public:
  Var() = default;

  static Var constant(Shape shape, std::vector<double> values);
  static Var parameter(Shape shape, std::vector<double> values);
  static Var scalar(double v) { return constant({}, {v}); }

  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t last_dim() const { return node_->shape.empty() ? 1 : node_->shape.back(); }

  std::span<const double> value() const { return node_->value; }
  /// Accumulated gradient; zeros when backward never reached this node.
  std::vector<double> grad() const;
  double item() const;
  bool requires_grad() const { return node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

/// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
/// The root must hold exactly one element.
void backward(const Var& root);

/// Compressed adjacency: the members of segment s are
/// members[offsets[s] .. offsets[s+1]).
struct Segments {
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> members;

  std::size_t count() const { return offsets.size() - 1; }
  std::size_t nnz() const { return members.size(); }
  void push(std::span<const std::size_t> segment_members);
};

// Elementwise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_n(std::span<const Var> terms);
/// Multiplies by a fixed (non-differentiable) tensor of the same size.
Var mul_const(const Var& a, std::span<const double> factors);
Var elu(const Var& x);
Var sigmoid(const Var& x);
Var leaky_relu(const Var& x, double slope);

// Reductions.
Var sum(const Var& x);
Var mean(const Var& x);
/// Weighted sum of all elements with fixed weights.
Var dot_const(const Var& x, std::span<const double> weights);
Var mse(const Var& pred, std::span<const double> target);

// Last-axis operations.
/// x [..., in] * w [in, out] + b [out]; b may be undefined.
Var linear(const Var& x, const Var& w, const Var& b);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps);
/// softmax((x + noise) / temperature) over the last axis. noise is either
/// empty or the same size as x and is treated as a constant.
Var tempered_softmax(const Var& x, double temperature, std::span<const double> noise = {});
Var concat_last(std::span<const Var> parts);
/// Stacks k tensors of identical shape S into S + [k].
Var stack_last(std::span<const Var> parts);
Var weighted_sum_last(const Var& weights, const Var& x);
Var mean_last(const Var& x);

// Shape.
Var reshape(const Var& x, Shape shape);

// Batched matrices, G groups.
/// a [G, m, k], b [G, n, k] -> a * b^T [G, m, n]
Var matmul_nt(const Var& a, const Var& b);
/// a [G, m, n], b [G, n, k] -> [G, m, k]
Var batched_matmul(const Var& a, const Var& b);

// Set aggregation over rows of [B, rows, D] tensors.
/// Mean of member rows for each segment: x [B, M, D] -> [B, S, D].
Var segment_mean(const Var& x, const Segments& segments);

struct SegmentAttention {
  Var values;                   // [B, S, D], before the output activation
  std::vector<double> weights;  // [B, nnz], softmax within each segment
};

/// Concatenation soft attention: for segment s with center c_s and members
/// x_j, score_sj = LeakyReLU(w[:D]·c_s + w[D:]·x_j), weights = softmax over
/// the segment, value_s = sum_j weight_sj x_j.
SegmentAttention segment_attention(const Var& centers, const Var& members,
                                   const Segments& segments, const Var& score_weight,
                                   double slope);

}  // namespace evcp::ad
