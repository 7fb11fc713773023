#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "mabr/types.hpp"

namespace mabr::ad {

class Tape;

// Handle to a node owned by a Tape. Cheap to copy; valid as long as the tape
// lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  double scalar() const;  // value of a 1x1 node

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape over dense double matrices. Nodes are appended in
// topological order (every node after its parents); backward() walks the
// tape in reverse, pulling each node's gradient into its parents. A tape
// serves one forward/backward pass and is confined to one thread.
class Tape {
 public:
  using PullFn = std::function<void(Tape&, int self)>;

  Var leaf(Matrix value);
  Var emplace(Matrix value, std::vector<int> parents, PullFn pull);

  // Seeds root (must be 1x1) with gradient 1 and accumulates d(root)/d(node)
  // into every node reachable from it; all other gradients are reset to zero.
  void backward(const Var& root);

  Index size() const { return static_cast<Index>(nodes_.size()); }
  const Matrix& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Matrix& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
  Matrix& grad_mut(int id) { return nodes_[static_cast<size_t>(id)].grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> parents;
    PullFn pull;  // null for leaves and detached nodes
  };
  std::deque<Node> nodes_;
};

// ---- forward op suite ------------------------------------------------------
// Shape mismatches and domain violations throw std::invalid_argument naming
// both shapes (or the offending index).

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var matmul(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1xC row across the rows of a
Var relu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);  // output clamped strictly inside (0,1)
Var softmax_rows(Var x);
Var log_softmax_rows(Var x);
Var log(Var x);  // requires strictly positive entries
Var mean_axis(Var x, int axis);  // axis 0: 1xC column means; axis 1: Rx1 row means
Var sum_all(Var x);              // 1x1
Var scale(Var x, double c);
Var one_minus(Var x);                 // 1 - x elementwise
Var cmul(Var x, const Matrix& c);     // elementwise product with a constant
Var select_cols(Var x, const std::vector<int>& col_per_row);  // Rx1 gather

// Identity forward; backward multiplies the incoming gradient by -lambda.
Var grad_reverse(Var x, double lambda);
// Identity forward; no gradient flows to x or its ancestors.
Var detach(Var x);

// Gather-and-average embedding: row i of the result is the mean over t of
// table.row(tokens(i,t)) + offsets.row(t). Rejects out-of-range ids naming
// sample, position and id.
Var embed_pool(Var table, const IntMatrix& tokens, const Matrix& offsets);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// Max over coordinates of |autodiff grad - central difference| /
// max(1, |central difference|). f must build a scalar node from its input and
// be evaluable at every x +- eps probe.
double grad_check(const std::function<Var(Tape&, Var)>& f, const Matrix& x, double eps);

}  // namespace mabr::ad
