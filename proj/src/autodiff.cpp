#include "mabr/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mabr::ad {
namespace {

// Sigmoid outputs are pinned strictly inside (0,1) so that downstream logs
// stay finite; saturation would otherwise round to exactly 0 or 1 in double.
constexpr double kProbFloor = 1e-12;

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void check_same_tape(const Var& a, const Var& b, const char* op) {
  require(a.valid() && b.valid() && a.tape() == b.tape(),
          std::string(op) + ": operands must live on the same tape");
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  require(v.rows() == 1 && v.cols() == 1, "scalar(): node has shape " + shape_str(v));
  return v(0, 0);
}

Var Tape::leaf(Matrix value) { return emplace(std::move(value), {}, nullptr); }

Var Tape::emplace(Matrix value, std::vector<int> parents, PullFn pull) {
  Node n;
  n.grad = Matrix::Zero(value.rows(), value.cols());
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.pull = std::move(pull);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(const Var& root) {
  require(root.valid() && root.tape() == this, "backward: root not on this tape");
  const Matrix& rv = root.value();
  require(rv.rows() == 1 && rv.cols() == 1,
          "backward: root must be scalar, got " + shape_str(rv));

  for (Node& n : nodes_) n.grad.setZero();

  // Mark nodes reachable from the root; everything else keeps zero gradient.
  std::vector<char> reachable(nodes_.size(), 0);
  std::vector<int> stack = {root.id()};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    if (reachable[static_cast<size_t>(id)]) continue;
    reachable[static_cast<size_t>(id)] = 1;
    for (int p : nodes_[static_cast<size_t>(id)].parents) stack.push_back(p);
  }

  grad_mut(root.id())(0, 0) = 1.0;
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (reachable[static_cast<size_t>(id)] && n.pull) n.pull(*this, id);
  }
}

Var add(Var a, Var b) {
  check_same_tape(a, b, "add");
  check_same_shape(a.value(), b.value(), "add");
  Tape& t = *a.tape();
  const int pa = a.id(), pb = b.id();
  return t.emplace(a.value() + b.value(), {pa, pb}, [pa, pb](Tape& t, int self) {
    t.grad_mut(pa) += t.grad(self);
    t.grad_mut(pb) += t.grad(self);
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b, "sub");
  check_same_shape(a.value(), b.value(), "sub");
  Tape& t = *a.tape();
  const int pa = a.id(), pb = b.id();
  return t.emplace(a.value() - b.value(), {pa, pb}, [pa, pb](Tape& t, int self) {
    t.grad_mut(pa) += t.grad(self);
    t.grad_mut(pb) -= t.grad(self);
  });
}

Var mul(Var a, Var b) {
  check_same_tape(a, b, "mul");
  check_same_shape(a.value(), b.value(), "mul");
  Tape& t = *a.tape();
  const int pa = a.id(), pb = b.id();
  return t.emplace(a.value().cwiseProduct(b.value()), {pa, pb}, [pa, pb](Tape& t, int self) {
    t.grad_mut(pa) += t.grad(self).cwiseProduct(t.value(pb));
    t.grad_mut(pb) += t.grad(self).cwiseProduct(t.value(pa));
  });
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b, "matmul");
  require(a.value().cols() == b.value().rows(),
          "matmul: shape mismatch " + shape_str(a.value()) + " vs " + shape_str(b.value()));
  Tape& t = *a.tape();
  const int pa = a.id(), pb = b.id();
  return t.emplace(a.value() * b.value(), {pa, pb}, [pa, pb](Tape& t, int self) {
    t.grad_mut(pa).noalias() += t.grad(self) * t.value(pb).transpose();
    t.grad_mut(pb).noalias() += t.value(pa).transpose() * t.grad(self);
  });
}

Var add_row(Var a, Var row) {
  check_same_tape(a, row, "add_row");
  require(row.value().rows() == 1 && row.value().cols() == a.value().cols(),
          "add_row: shape mismatch " + shape_str(a.value()) + " vs " + shape_str(row.value()));
  Tape& t = *a.tape();
  const int pa = a.id(), pr = row.id();
  Matrix y = a.value();
  y.rowwise() += row.value().row(0);
  return t.emplace(std::move(y), {pa, pr}, [pa, pr](Tape& t, int self) {
    t.grad_mut(pa) += t.grad(self);
    t.grad_mut(pr) += t.grad(self).colwise().sum();
  });
}

Var relu(Var x) {
  Tape& t = *x.tape();
  const int px = x.id();
  return t.emplace(x.value().cwiseMax(0.0), {px}, [px](Tape& t, int self) {
    t.grad_mut(px).array() +=
        (t.value(px).array() > 0.0).cast<double>() * t.grad(self).array();
  });
}

Var tanh(Var x) {
  Tape& t = *x.tape();
  const int px = x.id();
  return t.emplace(x.value().array().tanh().matrix(), {px}, [px](Tape& t, int self) {
    t.grad_mut(px).array() +=
        (1.0 - t.value(self).array().square()) * t.grad(self).array();
  });
}

Var sigmoid(Var x) {
  Tape& t = *x.tape();
  const int px = x.id();
  Matrix y = x.value().unaryExpr([](double v) { return stable_sigmoid(v); });
  y = y.cwiseMax(kProbFloor).cwiseMin(1.0 - kProbFloor);
  return t.emplace(std::move(y), {px}, [px](Tape& t, int self) {
    const auto& p = t.value(self).array();
    t.grad_mut(px).array() += p * (1.0 - p) * t.grad(self).array();
  });
}

Var softmax_rows(Var x) {
  Tape& t = *x.tape();
  const int px = x.id();
  const Matrix& v = x.value();
  Matrix y(v.rows(), v.cols());
  for (Index i = 0; i < v.rows(); ++i) {
    const Vector e = (v.row(i).array() - v.row(i).maxCoeff()).exp();
    y.row(i) = e.transpose() / e.sum();
  }
  return t.emplace(std::move(y), {px}, [px](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad_mut(px);
    for (Index i = 0; i < y.rows(); ++i) {
      const double dot = g.row(i).dot(y.row(i));
      gx.row(i).array() += y.row(i).array() * (g.row(i).array() - dot);
    }
  });
}

Var log_softmax_rows(Var x) {
  Tape& t = *x.tape();
  const int px = x.id();
  const Matrix& v = x.value();
  Matrix y(v.rows(), v.cols());
  for (Index i = 0; i < v.rows(); ++i) {
    const double m = v.row(i).maxCoeff();
    const double lse = std::log((v.row(i).array() - m).exp().sum());
    y.row(i) = v.row(i).array() - m - lse;
  }
  return t.emplace(std::move(y), {px}, [px](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad_mut(px);
    for (Index i = 0; i < y.rows(); ++i) {
      const double gsum = g.row(i).sum();
      gx.row(i).array() += g.row(i).array() - y.row(i).array().exp() * gsum;
    }
  });
}

Var log(Var x) {
  require((x.value().array() > 0.0).all(),
          "log: input must be strictly positive, min " +
              std::to_string(x.value().minCoeff()));
  Tape& t = *x.tape();
  const int px = x.id();
  return t.emplace(x.value().array().log().matrix(), {px}, [px](Tape& t, int self) {
    t.grad_mut(px).array() += t.grad(self).array() / t.value(px).array();
  });
}

Var mean_axis(Var x, int axis) {
  require(axis == 0 || axis == 1, "mean_axis: axis must be 0 or 1");
  Tape& t = *x.tape();
  const int px = x.id();
  const Matrix& v = x.value();
  require(v.size() > 0, "mean_axis: empty input");
  if (axis == 0) {
    const double n = static_cast<double>(v.rows());
    return t.emplace(v.colwise().mean(), {px}, [px, n](Tape& t, int self) {
      t.grad_mut(px) += t.grad(self).replicate(static_cast<Index>(n), 1) / n;
    });
  }
  const double n = static_cast<double>(v.cols());
  return t.emplace(v.rowwise().mean(), {px}, [px, n](Tape& t, int self) {
    t.grad_mut(px) += t.grad(self).replicate(1, static_cast<Index>(n)) / n;
  });
}

Var sum_all(Var x) {
  Tape& t = *x.tape();
  const int px = x.id();
  Matrix y(1, 1);
  y(0, 0) = x.value().sum();
  return t.emplace(std::move(y), {px}, [px](Tape& t, int self) {
    t.grad_mut(px).array() += t.grad(self)(0, 0);
  });
}

Var scale(Var x, double c) {
  Tape& t = *x.tape();
  const int px = x.id();
  return t.emplace(x.value() * c, {px}, [px, c](Tape& t, int self) {
    t.grad_mut(px) += c * t.grad(self);
  });
}

Var one_minus(Var x) {
  Tape& t = *x.tape();
  const int px = x.id();
  return t.emplace((1.0 - x.value().array()).matrix(), {px}, [px](Tape& t, int self) {
    t.grad_mut(px) -= t.grad(self);
  });
}

Var cmul(Var x, const Matrix& c) {
  check_same_shape(x.value(), c, "cmul");
  Tape& t = *x.tape();
  const int px = x.id();
  return t.emplace(x.value().cwiseProduct(c), {px}, [px, c](Tape& t, int self) {
    t.grad_mut(px) += t.grad(self).cwiseProduct(c);
  });
}

Var select_cols(Var x, const std::vector<int>& col_per_row) {
  Tape& t = *x.tape();
  const int px = x.id();
  const Matrix& v = x.value();
  require(static_cast<Index>(col_per_row.size()) == v.rows(),
          "select_cols: " + std::to_string(col_per_row.size()) + " indices for " +
              std::to_string(v.rows()) + " rows");
  Matrix y(v.rows(), 1);
  for (Index i = 0; i < v.rows(); ++i) {
    const int c = col_per_row[static_cast<size_t>(i)];
    require(c >= 0 && c < v.cols(),
            "select_cols: index " + std::to_string(c) + " out of range at row " +
                std::to_string(i) + " (cols " + std::to_string(v.cols()) + ")");
    y(i, 0) = v(i, c);
  }
  return t.emplace(std::move(y), {px}, [px, col_per_row](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& gx = t.grad_mut(px);
    for (Index i = 0; i < g.rows(); ++i) gx(i, col_per_row[static_cast<size_t>(i)]) += g(i, 0);
  });
}

Var grad_reverse(Var x, double lambda) {
  require(lambda > 0.0, "grad_reverse: lambda must be positive");
  Tape& t = *x.tape();
  const int px = x.id();
  return t.emplace(x.value(), {px}, [px, lambda](Tape& t, int self) {
    t.grad_mut(px) -= lambda * t.grad(self);
  });
}

Var detach(Var x) {
  Tape& t = *x.tape();
  return t.emplace(x.value(), {}, nullptr);
}

Var embed_pool(Var table, const IntMatrix& tokens, const Matrix& offsets) {
  Tape& t = *table.tape();
  const int pt = table.id();
  const Matrix& tab = table.value();
  require(tokens.rows() > 0 && tokens.cols() > 0, "embed_pool: empty token batch");
  require(offsets.rows() == tokens.cols() && offsets.cols() == tab.cols(),
          "embed_pool: offsets shape " + shape_str(offsets) + " incompatible with " +
              std::to_string(tokens.cols()) + " positions x " +
              std::to_string(tab.cols()) + " dims");
  const Index n = tokens.rows(), len = tokens.cols();
  for (Index i = 0; i < n; ++i)
    for (Index p = 0; p < len; ++p)
      require(tokens(i, p) >= 0 && tokens(i, p) < tab.rows(),
              "embed_pool: token id " + std::to_string(tokens(i, p)) +
                  " out of range at sample " + std::to_string(i) + " position " +
                  std::to_string(p) + " (vocab " + std::to_string(tab.rows()) + ")");

  Matrix y = Matrix::Zero(n, tab.cols());
  for (Index i = 0; i < n; ++i) {
    for (Index p = 0; p < len; ++p) y.row(i) += tab.row(tokens(i, p)) + offsets.row(p);
    y.row(i) /= static_cast<double>(len);
  }
  return t.emplace(std::move(y), {pt}, [pt, tokens](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& gt = t.grad_mut(pt);
    const double inv = 1.0 / static_cast<double>(tokens.cols());
    for (Index i = 0; i < tokens.rows(); ++i)
      for (Index p = 0; p < tokens.cols(); ++p)
        gt.row(tokens(i, p)) += g.row(i) * inv;
  });
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Matrix& x, double eps) {
  require(eps > 0.0, "grad_check: eps must be positive");

  Tape tape;
  Var vx = tape.leaf(x);
  Var y = f(tape, vx);
  tape.backward(y);
  const Matrix analytic = vx.grad();

  const auto eval = [&f](const Matrix& p) {
    Tape t;
    const double v = f(t, t.leaf(p)).scalar();
    if (!std::isfinite(v)) throw std::invalid_argument("grad_check: non-finite value at probe point");
    return v;
  };

  double max_err = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      Matrix xp = x, xm = x;
      xp(i, j) += eps;
      xm(i, j) -= eps;
      const double cd = (eval(xp) - eval(xm)) / (2.0 * eps);
      const double err = std::abs(analytic(i, j) - cd) / std::max(1.0, std::abs(cd));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace mabr::ad
