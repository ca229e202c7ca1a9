#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "pretram/errors.hpp"
#include "pretram/rng.hpp"

namespace pretram {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("tensor extent must be positive");
    n *= static_cast<size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

template <class Real>
class Tensor;

// One tape node per op result: the parent tensors and a closure that routes
// the result's gradient into the parents' grad buffers.
template <class Real>
struct Node {
  std::vector<Tensor<Real>> parents;
  std::function<void(const Tensor<Real>&)> backward;
};

// Dense row-major tensor with a shared data buffer. Copies are shallow:
// two Tensor values referring to the same storage see each other's writes,
// which is what lets tape nodes hold their parents by value.
template <class Real>
class Tensor {
 public:
  Shape shape;
  std::shared_ptr<std::vector<Real>> data;
  std::shared_ptr<std::vector<Real>> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::shared_ptr<Node<Real>> node;  // null for leaves

  Tensor() = default;

  static Tensor zeros(const Shape& s, bool requires_grad = false) {
    Tensor t;
    t.shape = s;
    t.data = std::make_shared<std::vector<Real>>(shape_numel(s), Real(0));
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<Real>>(t.data->size(), Real(0));
    return t;
  }

  static Tensor full(const Shape& s, Real v, bool requires_grad = false) {
    Tensor t = zeros(s, requires_grad);
    for (Real& x : *t.data) x = v;
    return t;
  }

  static Tensor from_values(const Shape& s, std::vector<Real> values, bool requires_grad = false) {
    if (values.size() != shape_numel(s))
      throw ShapeError("from_values: " + std::to_string(values.size()) + " values for shape " + shape_str(s));
    Tensor t;
    t.shape = s;
    t.data = std::make_shared<std::vector<Real>>(std::move(values));
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<Real>>(t.data->size(), Real(0));
    return t;
  }

  static Tensor scalar(Real v, bool requires_grad = false) { return full({1}, v, requires_grad); }

  static Tensor uniform(const Shape& s, Rng& rng, double lo, double hi, bool requires_grad = false) {
    Tensor t = zeros(s, requires_grad);
    for (Real& x : *t.data) x = static_cast<Real>(rng.uniform(lo, hi));
    return t;
  }

  size_t numel() const { return data ? data->size() : 0; }
  int rank() const { return static_cast<int>(shape.size()); }
  bool defined() const { return static_cast<bool>(data); }

  Real* ptr() { return data->data(); }
  const Real* ptr() const { return data->data(); }
  Real* gptr() { return grad->data(); }
  const Real* gptr() const { return grad->data(); }

  Real& at(size_t i) { return (*data)[i]; }
  Real at(size_t i) const { return (*data)[i]; }
  Real& at(int i, int j) {
    return (*data)[static_cast<size_t>(i) * static_cast<size_t>(shape[1]) + static_cast<size_t>(j)];
  }
  Real at(int i, int j) const {
    return (*data)[static_cast<size_t>(i) * static_cast<size_t>(shape[1]) + static_cast<size_t>(j)];
  }

  Real value() const {
    if (numel() != 1) throw ShapeError("value(): tensor has " + std::to_string(numel()) + " elements");
    return (*data)[0];
  }

  void ensure_grad() {
    requires_grad = true;
    if (!grad) grad = std::make_shared<std::vector<Real>>(data->size(), Real(0));
  }

  void zero_grad() {
    if (grad)
      for (Real& g : *grad) g = Real(0);
  }

  bool all_finite() const {
    for (Real v : *data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

// Reverse pass over the tape reachable from `loss`. Seeds d(loss)/d(loss) = 1
// and visits nodes in reverse topological order; gradient accumulation order
// is fixed by graph construction order, independent of anything else.
template <class Real>
void backward(Tensor<Real>& loss) {
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar");
  if (!loss.requires_grad) return;
  loss.ensure_grad();
  (*loss.grad)[0] = Real(1);

  std::vector<Tensor<Real>> order;
  std::unordered_set<const Node<Real>*> seen;
  // iterative post-order DFS over tape nodes
  struct Frame {
    Tensor<Real> t;
    size_t next_parent = 0;
  };
  std::vector<Frame> stack;
  if (loss.node && seen.insert(loss.node.get()).second) stack.push_back({loss, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    auto& parents = f.t.node->parents;
    if (f.next_parent < parents.size()) {
      Tensor<Real> p = parents[f.next_parent++];
      if (p.node && seen.insert(p.node.get()).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.t);
      stack.pop_back();
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (it->node->backward) it->node->backward(*it);
  }
}

template <class Real>
void check_finite(const Tensor<Real>& t, const char* what) {
  const auto& v = *t.data;
  for (size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(static_cast<double>(v[i])))
      throw NumericalError(std::string(what) + ": non-finite value at index " + std::to_string(i));
  }
}

}  // namespace pretram
