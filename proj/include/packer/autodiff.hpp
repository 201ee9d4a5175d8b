#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. A Tape owns every intermediate of one forward pass; backward()
// walks it in reverse creation order, which is a valid topological order.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

namespace packer::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // No gradient flows into constants.
  Var constant(Matrix value);
  // Differentiable input; its gradient is readable through grad() after backward().
  Var leaf(Matrix value);
  // Borrowed parameter. `value` must outlive the tape; gradients are added to
  // `*sink` (shape of value) during backward().
  Var param(const Matrix& value, Matrix* sink);

  // Records a new node computed from `inputs`; `backward` receives the output
  // gradient and calls accumulate() on the inputs.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);

  // Seeds d(root)/d(root) = 1; root must be 1 x 1.
  void backward(Var root);

  const Matrix& value(int id) const;
  const Matrix& grad(Var v) const;
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  void accumulate(int id, const Matrix& g);
  template <typename Expr>
  void accumulate_expr(int id, const Expr& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.sink) {  // parameters sum straight into their sink
      n.sink->noalias() += g;
      return;
    }
    ensure_grad(n);
    n.grad.noalias() += g;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* borrowed = nullptr;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Matrix* sink = nullptr;
    Backward backward;
  };
  void ensure_grad(Node& n);

  std::vector<Node> nodes_;
};

// y = x W + b, with W (in x out) and b (1 x out).
Var linear(Var x, Var w, Var b);
Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
// Adds a 1 x n row to every row of a.
Var add_row(Var a, Var row);
Var scale(Var a, double s);
Var leaky_relu(Var a, double slope);
// Row-wise layer normalization with 1 x n gain and offset.
Var layer_norm(Var x, Var gamma, Var beta, double eps);
// Row-wise softmax; columns with col_valid[j] == 0 get probability 0.
// Throws std::domain_error if no column is valid.
Var softmax_rows(Var a, const std::vector<std::uint8_t>* col_valid = nullptr);
// 1 x n mean over rows.
Var mean_rows(Var a);
Var hconcat(Var a, Var b);
Var col_block(Var a, Eigen::Index start, Eigen::Index n);
Var sum_all(Var a);
Var mul_elem(Var a, Var b);

// Packed-batch ops. An offsets vector of size S + 1 assigns rows
// [off[s], off[s + 1]) to sample s.
using Offsets = std::vector<int>;

// Per sample: softmax(Q_s K_s^T * scale) V_s. Every key segment must be non-empty.
Var segment_attention(Var q, Var k, Var v, const Offsets& q_off, const Offsets& k_off, double scale);
// Per sample: A_s B_s^T flattened row-major, all samples concatenated into one row.
Var segment_scores(Var a, Var b, const Offsets& a_off, const Offsets& b_off);
// S x n matrix of per-sample row means.
Var segment_mean(Var a, const Offsets& off);

}  // namespace packer::ad
