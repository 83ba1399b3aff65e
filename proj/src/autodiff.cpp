#include "evcp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "evcp/error.hpp"

namespace evcp::ad {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_size(const Shape& shape, std::size_t n) {
  require(numel(shape) == n, ErrorKind::shape,
          "tensor of shape " + to_string(shape) + " cannot hold " + std::to_string(n) + " values");
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::shape,
          std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
              to_string(b.shape()));
}

// Builds a result node. The closure is dropped when no parent needs a gradient.
Var make(Shape shape, std::vector<double> value, std::vector<Var> parents,
         std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool any = false;
  for (const auto& p : parents) any = any || (p.defined() && p.requires_grad());
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward_fn);
  }
  return Var(std::move(node));
}

// Gradient buffer of parent i, or nullptr if it takes no gradient.
double* grad_of(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  if (p == nullptr || !p->requires_grad) return nullptr;
  p->ensure_grad();
  return p->grad.data();
}

const double* value_of(Node& self, std::size_t i) { return self.parents[i]->value.data(); }

std::size_t rows_of(const Var& x) { return x.size() / x.last_dim(); }

}  // namespace

Var Var::constant(Shape shape, std::vector<double> values) {
  check_size(shape, values.size());
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  return Var(std::move(node));
}

Var Var::parameter(Shape shape, std::vector<double> values) {
  Var v = constant(std::move(shape), std::move(values));
  v.node()->requires_grad = true;
  return v;
}

std::vector<double> Var::grad() const {
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

double Var::item() const {
  require(size() == 1, ErrorKind::shape, "item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

void backward(const Var& root) {
  require(root.size() == 1, ErrorKind::shape,
          "backward() needs a scalar root, got " + to_string(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad();
  root.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

void Segments::push(std::span<const std::size_t> segment_members) {
  members.insert(members.end(), segment_members.begin(), segment_members.end());
  offsets.push_back(members.size());
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (double* g = grad_of(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const double* av = value_of(self, 0);
    const double* bv = value_of(self, 1);
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

Var scale(const Var& a, double factor) {
  std::vector<double> out(a.value().begin(), a.value().end());
  for (double& v : out) v *= factor;
  return make(a.shape(), std::move(out), {a}, [factor](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Var add_n(std::span<const Var> terms) {
  require(!terms.empty(), ErrorKind::shape, "add_n: no terms");
  std::vector<double> out(terms[0].value().begin(), terms[0].value().end());
  for (std::size_t k = 1; k < terms.size(); ++k) {
    require_same_shape(terms[0], terms[k], "add_n");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += terms[k].value()[i];
  }
  std::vector<Var> parents(terms.begin(), terms.end());
  return make(terms[0].shape(), std::move(out), std::move(parents), [](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k)
      if (double* g = grad_of(self, k))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Var mul_const(const Var& a, std::span<const double> factors) {
  require(factors.size() == a.size(), ErrorKind::shape, "mul_const: size mismatch");
  std::vector<double> f(factors.begin(), factors.end());
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * f[i];
  return make(a.shape(), std::move(out), {a}, [f = std::move(f)](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * f[i];
  });
}

Var elu(const Var& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.value()[i];
    out[i] = v >= 0.0 ? v : std::expm1(v);
  }
  return make(x.shape(), std::move(out), {x}, [](Node& self) {
    const double* xv = value_of(self, 0);
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[i] += self.grad[i] * (xv[i] >= 0.0 ? 1.0 : self.value[i] + 1.0);
  });
}

Var sigmoid(const Var& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.value()[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return make(x.shape(), std::move(out), {x}, [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double s = self.value[i];
        g[i] += self.grad[i] * s * (1.0 - s);
      }
  });
}

Var leaky_relu(const Var& x, double slope) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.value()[i];
    out[i] = v >= 0.0 ? v : slope * v;
  }
  return make(x.shape(), std::move(out), {x}, [slope](Node& self) {
    const double* xv = value_of(self, 0);
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[i] += self.grad[i] * (xv[i] >= 0.0 ? 1.0 : slope);
  });
}

// ----------------------------------------------------------------- reductions

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value()) s += v;
  return make({}, {s}, {x}, [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Var dot_const(const Var& x, std::span<const double> weights) {
  require(weights.size() == x.size(), ErrorKind::shape, "dot_const: size mismatch");
  std::vector<double> w(weights.begin(), weights.end());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x.value()[i];
  return make({}, {s}, {x}, [w = std::move(w)](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < w.size(); ++i) g[i] += self.grad[0] * w[i];
  });
}

Var mse(const Var& pred, std::span<const double> target) {
  require(target.size() == pred.size(), ErrorKind::shape,
          "mse: prediction has " + std::to_string(pred.size()) + " elements, target " +
              std::to_string(target.size()));
  std::vector<double> diff(pred.size());
  double s = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] = pred.value()[i] - target[i];
    s += diff[i] * diff[i];
  }
  const double n = static_cast<double>(diff.size());
  return make({}, {s / n}, {pred}, [diff = std::move(diff), n](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < diff.size(); ++i) g[i] += self.grad[0] * 2.0 * diff[i] / n;
  });
}

// ----------------------------------------------------------------- last axis

Var linear(const Var& x, const Var& w, const Var& b) {
  require(w.rank() == 2, ErrorKind::shape, "linear: weight must be 2-D, got " + to_string(w.shape()));
  const std::size_t in = w.dim(0);
  const std::size_t out = w.dim(1);
  require(x.rank() >= 1 && x.last_dim() == in, ErrorKind::shape,
          "linear: input " + to_string(x.shape()) + " does not match weight " + to_string(w.shape()));
  if (b.defined())
    require(b.size() == out, ErrorKind::shape,
            "linear: bias " + to_string(b.shape()) + " does not match weight " + to_string(w.shape()));
  const std::size_t rows = rows_of(x);
  Shape shape = x.shape();
  shape.back() = out;
  std::vector<double> y(rows * out, 0.0);
  const double* xv = x.value().data();
  const double* wv = w.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    double* yr = y.data() + r * out;
    if (b.defined()) std::copy(b.value().begin(), b.value().end(), yr);
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xv[r * in + i];
      const double* wi = wv + i * out;
      for (std::size_t j = 0; j < out; ++j) yr[j] += xi * wi[j];
    }
  }
  std::vector<Var> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return make(std::move(shape), std::move(y), std::move(parents), [rows, in, out](Node& self) {
    const double* xv = value_of(self, 0);
    const double* wv = value_of(self, 1);
    const double* gy = self.grad.data();
    if (double* gx = grad_of(self, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < in; ++i) {
          const double* wi = wv + i * out;
          const double* gr = gy + r * out;
          double s = 0.0;
          for (std::size_t j = 0; j < out; ++j) s += gr[j] * wi[j];
          gx[r * in + i] += s;
        }
    if (double* gw = grad_of(self, 1))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < in; ++i) {
          const double xi = xv[r * in + i];
          double* gwi = gw + i * out;
          const double* gr = gy + r * out;
          for (std::size_t j = 0; j < out; ++j) gwi[j] += xi * gr[j];
        }
    if (self.parents.size() > 2)
      if (double* gb = grad_of(self, 2))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < out; ++j) gb[j] += gy[r * out + j];
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const std::size_t d = x.last_dim();
  require(gain.size() == d && bias.size() == d, ErrorKind::shape,
          "layer_norm: gain/offset width does not match input " + to_string(x.shape()));
  const std::size_t rows = rows_of(x);
  std::vector<double> y(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  const double* xv = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat[r * d + j] = h;
      y[r * d + j] = gain.value()[j] * h + bias.value()[j];
    }
  }
  return make(x.shape(), std::move(y), {x, gain, bias},
              [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                const double* gv = value_of(self, 1);
                const double* gy = self.grad.data();
                if (double* gx = grad_of(self, 0)) {
                  std::vector<double> dh(d);
                  for (std::size_t r = 0; r < rows; ++r) {
                    double m1 = 0.0;
                    double m2 = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      dh[j] = gy[r * d + j] * gv[j];
                      m1 += dh[j];
                      m2 += dh[j] * xhat[r * d + j];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j)
                      gx[r * d + j] += inv_std[r] * (dh[j] - m1 - xhat[r * d + j] * m2);
                  }
                }
                if (double* gg = grad_of(self, 1))
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) gg[j] += gy[r * d + j] * xhat[r * d + j];
                if (double* gb = grad_of(self, 2))
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += gy[r * d + j];
              });
}

Var tempered_softmax(const Var& x, double temperature, std::span<const double> noise) {
  require(temperature > 0.0, ErrorKind::domain, "softmax temperature must be positive");
  require(noise.empty() || noise.size() == x.size(), ErrorKind::shape,
          "softmax noise size does not match scores");
  const std::size_t d = x.last_dim();
  const std::size_t rows = rows_of(x);
  std::vector<double> y(x.size());
  std::vector<double> z(d);
  for (std::size_t r = 0; r < rows; ++r) {
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t k = r * d + j;
      z[j] = (x.value()[k] + (noise.empty() ? 0.0 : noise[k])) / temperature;
      zmax = std::max(zmax, z[j]);
    }
    double total = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      z[j] = std::exp(z[j] - zmax);
      total += z[j];
    }
    for (std::size_t j = 0; j < d; ++j) y[r * d + j] = z[j] / total;
  }
  return make(x.shape(), std::move(y), {x}, [rows, d, temperature](Node& self) {
    if (double* gx = grad_of(self, 0))
      for (std::size_t r = 0; r < rows; ++r) {
        const double* yr = self.value.data() + r * d;
        const double* gr = self.grad.data() + r * d;
        double dotv = 0.0;
        for (std::size_t j = 0; j < d; ++j) dotv += yr[j] * gr[j];
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += yr[j] * (gr[j] - dotv) / temperature;
      }
  });
}

Var concat_last(std::span<const Var> parts) {
  require(!parts.empty(), ErrorKind::shape, "concat_last: no parts");
  const std::size_t rows = rows_of(parts[0]);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require(p.rank() == parts[0].rank() && rows_of(p) == rows, ErrorKind::shape,
            "concat_last: incompatible shapes " + to_string(parts[0].shape()) + " and " +
                to_string(p.shape()));
    widths.push_back(p.last_dim());
    total += p.last_dim();
  }
  Shape shape = parts[0].shape();
  shape.back() = total;
  std::vector<double> y(rows * total);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      std::copy_n(parts[k].value().data() + r * widths[k], widths[k], y.data() + r * total + off);
      off += widths[k];
    }
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make(std::move(shape), std::move(y), std::move(parents),
              [rows, total, widths = std::move(widths)](Node& self) {
                std::size_t off = 0;
                for (std::size_t k = 0; k < widths.size(); ++k) {
                  if (double* g = grad_of(self, k))
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < widths[k]; ++j)
                        g[r * widths[k] + j] += self.grad[r * total + off + j];
                  off += widths[k];
                }
              });
}

Var stack_last(std::span<const Var> parts) {
  require(!parts.empty(), ErrorKind::shape, "stack_last: no parts");
  for (const Var& p : parts) require_same_shape(parts[0], p, "stack_last");
  const std::size_t n = parts[0].size();
  const std::size_t k = parts.size();
  Shape shape = parts[0].shape();
  shape.push_back(k);
  std::vector<double> y(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < k; ++f) y[i * k + f] = parts[f].value()[i];
  std::vector<Var> parents(parts.begin(), parts.end());
  return make(std::move(shape), std::move(y), std::move(parents), [n, k](Node& self) {
    for (std::size_t f = 0; f < k; ++f)
      if (double* g = grad_of(self, f))
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i * k + f];
  });
}

Var weighted_sum_last(const Var& weights, const Var& x) {
  require_same_shape(weights, x, "weighted_sum_last");
  const std::size_t d = x.last_dim();
  const std::size_t rows = rows_of(x);
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  std::vector<double> y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) y[r] += weights.value()[r * d + j] * x.value()[r * d + j];
  return make(std::move(shape), std::move(y), {weights, x}, [rows, d](Node& self) {
    const double* wv = value_of(self, 0);
    const double* xv = value_of(self, 1);
    if (double* g = grad_of(self, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[r] * xv[r * d + j];
    if (double* g = grad_of(self, 1))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[r] * wv[r * d + j];
  });
}

Var mean_last(const Var& x) {
  const std::size_t d = x.last_dim();
  const std::size_t rows = rows_of(x);
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  std::vector<double> y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) y[r] += x.value()[r * d + j];
    y[r] /= static_cast<double>(d);
  }
  return make(std::move(shape), std::move(y), {x}, [rows, d](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[r] / static_cast<double>(d);
  });
}

Var reshape(const Var& x, Shape shape) {
  check_size(shape, x.size());
  std::vector<double> y(x.value().begin(), x.value().end());
  return make(std::move(shape), std::move(y), {x}, [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

// ----------------------------------------------------------------- matrices

Var matmul_nt(const Var& a, const Var& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2),
          ErrorKind::shape,
          "matmul_nt: incompatible " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const std::size_t groups = a.dim(0), m = a.dim(1), n = b.dim(1), k = a.dim(2);
  std::vector<double> y(groups * m * n, 0.0);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double* ar = a.value().data() + (g * m + i) * k;
        const double* br = b.value().data() + (g * n + j) * k;
        double s = 0.0;
        for (std::size_t t = 0; t < k; ++t) s += ar[t] * br[t];
        y[(g * m + i) * n + j] = s;
      }
  return make({groups, m, n}, std::move(y), {a, b}, [groups, m, n, k](Node& self) {
    const double* av = value_of(self, 0);
    const double* bv = value_of(self, 1);
    double* ga = grad_of(self, 0);
    double* gb = grad_of(self, 1);
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gy = self.grad[(g * m + i) * n + j];
          if (gy == 0.0) continue;
          const std::size_t ai = (g * m + i) * k;
          const std::size_t bj = (g * n + j) * k;
          if (ga)
            for (std::size_t t = 0; t < k; ++t) ga[ai + t] += gy * bv[bj + t];
          if (gb)
            for (std::size_t t = 0; t < k; ++t) gb[bj + t] += gy * av[ai + t];
        }
  });
}

Var batched_matmul(const Var& a, const Var& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
          ErrorKind::shape,
          "batched_matmul: incompatible " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const std::size_t groups = a.dim(0), m = a.dim(1), n = a.dim(2), k = b.dim(2);
  std::vector<double> y(groups * m * k, 0.0);
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < m; ++i) {
      double* yr = y.data() + (g * m + i) * k;
      for (std::size_t j = 0; j < n; ++j) {
        const double aij = a.value()[(g * m + i) * n + j];
        const double* br = b.value().data() + (g * n + j) * k;
        for (std::size_t t = 0; t < k; ++t) yr[t] += aij * br[t];
      }
    }
  return make({groups, m, k}, std::move(y), {a, b}, [groups, m, n, k](Node& self) {
    const double* av = value_of(self, 0);
    const double* bv = value_of(self, 1);
    double* ga = grad_of(self, 0);
    double* gb = grad_of(self, 1);
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t i = 0; i < m; ++i) {
        const double* gy = self.grad.data() + (g * m + i) * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double* br = bv + (g * n + j) * k;
          if (ga) {
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t) s += gy[t] * br[t];
            ga[(g * m + i) * n + j] += s;
          }
          if (gb) {
            const double aij = av[(g * m + i) * n + j];
            double* gbr = gb + (g * n + j) * k;
            for (std::size_t t = 0; t < k; ++t) gbr[t] += aij * gy[t];
          }
        }
      }
  });
}

// ----------------------------------------------------------------- segments

Var segment_mean(const Var& x, const Segments& segments) {
  require(x.rank() == 3, ErrorKind::shape, "segment_mean: expected [B, M, D], got " + to_string(x.shape()));
  const std::size_t batch = x.dim(0), rows = x.dim(1), d = x.dim(2), segs = segments.count();
  for (std::size_t s = 0; s < segs; ++s)
    require(segments.offsets[s + 1] > segments.offsets[s], ErrorKind::structure,
            "segment_mean: segment " + std::to_string(s) + " is empty");
  for (std::size_t m : segments.members)
    require(m < rows, ErrorKind::reference, "segment_mean: member index out of range");
  std::vector<double> y(batch * segs * d, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < segs; ++s) {
      double* ys = y.data() + (b * segs + s) * d;
      const std::size_t lo = segments.offsets[s], hi = segments.offsets[s + 1];
      for (std::size_t e = lo; e < hi; ++e) {
        const double* xr = x.value().data() + (b * rows + segments.members[e]) * d;
        for (std::size_t j = 0; j < d; ++j) ys[j] += xr[j];
      }
      const double inv = 1.0 / static_cast<double>(hi - lo);
      for (std::size_t j = 0; j < d; ++j) ys[j] *= inv;
    }
  return make({batch, segs, d}, std::move(y), {x}, [batch, rows, d, segments](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    const std::size_t segs = segments.count();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < segs; ++s) {
        const std::size_t lo = segments.offsets[s], hi = segments.offsets[s + 1];
        const double inv = 1.0 / static_cast<double>(hi - lo);
        const double* gs = self.grad.data() + (b * segs + s) * d;
        for (std::size_t e = lo; e < hi; ++e) {
          double* gr = gx + (b * rows + segments.members[e]) * d;
          for (std::size_t j = 0; j < d; ++j) gr[j] += inv * gs[j];
        }
      }
  });
}

SegmentAttention segment_attention(const Var& centers, const Var& members, const Segments& segments,
                                   const Var& score_weight, double slope) {
  require(centers.rank() == 3 && members.rank() == 3 && centers.dim(0) == members.dim(0) &&
              centers.dim(2) == members.dim(2),
          ErrorKind::shape,
          "segment_attention: incompatible centers " + to_string(centers.shape()) + " and members " +
              to_string(members.shape()));
  const std::size_t batch = centers.dim(0), segs = centers.dim(1), rows = members.dim(1),
                    d = centers.dim(2);
  require(segments.count() == segs, ErrorKind::structure,
          "segment_attention: " + std::to_string(segments.count()) + " segments for " +
              std::to_string(segs) + " centers");
  require(score_weight.size() == 2 * d, ErrorKind::shape,
          "segment_attention: score weight must have " + std::to_string(2 * d) + " entries");
  for (std::size_t s = 0; s < segs; ++s)
    require(segments.offsets[s + 1] > segments.offsets[s], ErrorKind::structure,
            "segment_attention: empty neighborhood for center " + std::to_string(s));
  for (std::size_t m : segments.members)
    require(m < rows, ErrorKind::reference, "segment_attention: member index out of range");

  const std::size_t nnz = segments.nnz();
  const double* w = score_weight.value().data();
  const double* cv = centers.value().data();
  const double* mv = members.value().data();

  // Per-member score contribution is shared across all segments it appears in.
  std::vector<double> center_part(batch * segs), member_part(batch * rows);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t s = 0; s < segs; ++s) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += w[j] * cv[(b * segs + s) * d + j];
      center_part[b * segs + s] = acc;
    }
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += w[d + j] * mv[(b * rows + r) * d + j];
      member_part[b * rows + r] = acc;
    }
  }

  std::vector<double> pre(batch * nnz), attn(batch * nnz);
  std::vector<double> y(batch * segs * d, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < segs; ++s) {
      const std::size_t lo = segments.offsets[s], hi = segments.offsets[s + 1];
      double zmax = -std::numeric_limits<double>::infinity();
      for (std::size_t e = lo; e < hi; ++e) {
        const double raw = center_part[b * segs + s] + member_part[b * rows + segments.members[e]];
        pre[b * nnz + e] = raw;
        const double score = raw >= 0.0 ? raw : slope * raw;
        attn[b * nnz + e] = score;
        zmax = std::max(zmax, score);
      }
      double total = 0.0;
      for (std::size_t e = lo; e < hi; ++e) {
        attn[b * nnz + e] = std::exp(attn[b * nnz + e] - zmax);
        total += attn[b * nnz + e];
      }
      double* ys = y.data() + (b * segs + s) * d;
      for (std::size_t e = lo; e < hi; ++e) {
        attn[b * nnz + e] /= total;
        const double a = attn[b * nnz + e];
        const double* xr = mv + (b * rows + segments.members[e]) * d;
        for (std::size_t j = 0; j < d; ++j) ys[j] += a * xr[j];
      }
    }

  SegmentAttention result;
  result.weights = attn;
  result.values = make(
      {batch, segs, d}, std::move(y), {centers, members, score_weight},
      [batch, segs, rows, d, slope, segments, pre = std::move(pre), attn = std::move(attn)](Node& self) {
        const std::size_t nnz = segments.nnz();
        const double* cv = value_of(self, 0);
        const double* mv = value_of(self, 1);
        const double* w = value_of(self, 2);
        double* gc = grad_of(self, 0);
        double* gm = grad_of(self, 1);
        double* gw = grad_of(self, 2);
        std::vector<double> dattn;
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t s = 0; s < segs; ++s) {
            const std::size_t lo = segments.offsets[s], hi = segments.offsets[s + 1];
            const double* gy = self.grad.data() + (b * segs + s) * d;
            dattn.assign(hi - lo, 0.0);
            double weighted = 0.0;
            for (std::size_t e = lo; e < hi; ++e) {
              const double* xr = mv + (b * rows + segments.members[e]) * d;
              double acc = 0.0;
              for (std::size_t j = 0; j < d; ++j) acc += gy[j] * xr[j];
              dattn[e - lo] = acc;
              weighted += attn[b * nnz + e] * acc;
            }
            const double* cr = cv + (b * segs + s) * d;
            for (std::size_t e = lo; e < hi; ++e) {
              const double a = attn[b * nnz + e];
              const std::size_t r = segments.members[e];
              const double* xr = mv + (b * rows + r) * d;
              const double dscore = a * (dattn[e - lo] - weighted);
              const double draw = dscore * (pre[b * nnz + e] >= 0.0 ? 1.0 : slope);
              if (gm) {
                double* gr = gm + (b * rows + r) * d;
                for (std::size_t j = 0; j < d; ++j) gr[j] += a * gy[j] + draw * w[d + j];
              }
              if (gc) {
                double* gcr = gc + (b * segs + s) * d;
                for (std::size_t j = 0; j < d; ++j) gcr[j] += draw * w[j];
              }
              if (gw)
                for (std::size_t j = 0; j < d; ++j) {
                  gw[j] += draw * cr[j];
                  gw[d + j] += draw * xr[j];
                }
            }
          }
      });
  return result;
}

}  // namespace evcp::ad
