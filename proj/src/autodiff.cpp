#include "packer/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace packer::ad {

const Matrix& Var::value() const { return tape->value(id); }

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::leaf(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(const Matrix& value, Matrix* sink) {
  Node n;
  n.borrowed = &value;
  n.sink = sink;
  n.requires_grad = sink != nullptr;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (v.tape != this) throw std::invalid_argument("autodiff: mixing tapes");
    n.requires_grad = n.requires_grad || requires_grad(v.id);
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

const Matrix& Tape::value(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.borrowed ? *n.borrowed : n.value;
}

void Tape::ensure_grad(Node& n) {
  if (n.has_grad) return;
  const Matrix& v = n.borrowed ? *n.borrowed : n.value;
  n.grad = Matrix::Zero(v.rows(), v.cols());
  n.has_grad = true;
}

void Tape::accumulate(int id, const Matrix& g) { accumulate_expr(id, g); }

const Matrix& Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.has_grad) throw std::logic_error("autodiff: no gradient recorded for this node");
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw std::invalid_argument("autodiff: root from another tape");
  if (root.rows() != 1 || root.cols() != 1) throw std::invalid_argument("autodiff: backward needs a scalar root");
  Node& r = nodes_[static_cast<std::size_t>(root.id)];
  if (!r.requires_grad) return;
  ensure_grad(r);
  r.grad(0, 0) += 1.0;
  for (auto i = static_cast<std::ptrdiff_t>(root.id); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad) continue;
    // Callbacks only touch earlier nodes and never append, so `n` stays put.
    if (n.backward) n.backward(*this, n.grad);
  }
}

Var linear(Var x, Var w, Var b) {
  Tape& t = *x.tape;
  Matrix y = x.value() * w.value();
  y.rowwise() += b.value().row(0);
  return t.record(std::move(y), {x, w, b}, [x, w, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(x.id)) t.accumulate_expr(x.id, g * t.value(w.id).transpose());
    if (t.requires_grad(w.id)) t.accumulate_expr(w.id, t.value(x.id).transpose() * g);
    if (t.requires_grad(b.id)) t.accumulate_expr(b.id, g.colwise().sum());
  });
}

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  return t.record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a.id)) t.accumulate_expr(a.id, g * t.value(b.id).transpose());
    if (t.requires_grad(b.id)) t.accumulate_expr(b.id, t.value(a.id).transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape;
  return t.record(a.value() * b.value().transpose(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a.id)) t.accumulate_expr(a.id, g * t.value(b.id));
    if (t.requires_grad(b.id)) t.accumulate_expr(b.id, g.transpose() * t.value(a.id));
  });
}

Var add(Var a, Var b) {
  Tape& t = *a.tape;
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("add: shape mismatch");
  return t.record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate_expr(a.id, g);
    t.accumulate_expr(b.id, g);
  });
}

Var add_row(Var a, Var row) {
  Tape& t = *a.tape;
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  Matrix y = a.value();
  y.rowwise() += row.value().row(0);
  return t.record(std::move(y), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate_expr(a.id, g);
    if (t.requires_grad(row.id)) t.accumulate_expr(row.id, g.colwise().sum());
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  return t.record(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g) { t.accumulate_expr(a.id, g * s); });
}

Var leaky_relu(Var a, double slope) {
  Tape& t = *a.tape;
  Matrix y = a.value().unaryExpr([slope](double v) { return v > 0 ? v : slope * v; });
  return t.record(std::move(y), {a}, [a, slope](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(a.id);
    t.accumulate_expr(a.id, g.cwiseProduct(x.unaryExpr([slope](double v) { return v > 0 ? 1.0 : slope; })));
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.cols();
  if (gamma.cols() != n || beta.cols() != n) throw std::invalid_argument("layer_norm: shape mismatch");
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * inv_std(r);
  }
  Matrix y = xhat.array().rowwise() * gamma.value().row(0).array();
  y.rowwise() += beta.value().row(0);
  return t.record(std::move(y), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Matrix& g) {
                    if (t.requires_grad(gamma.id)) t.accumulate_expr(gamma.id, g.cwiseProduct(xhat).colwise().sum());
                    if (t.requires_grad(beta.id)) t.accumulate_expr(beta.id, g.colwise().sum());
                    if (!t.requires_grad(x.id)) return;
                    const Matrix gx = g.array().rowwise() * t.value(gamma.id).row(0).array();
                    Matrix dx(gx.rows(), gx.cols());
                    for (Eigen::Index r = 0; r < gx.rows(); ++r) {
                      const double m1 = gx.row(r).mean();
                      const double m2 = gx.row(r).dot(xhat.row(r)) / static_cast<double>(gx.cols());
                      dx.row(r) = (gx.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
                    }
                    t.accumulate_expr(x.id, dx);
                  });
}

Var softmax_rows(Var a, const std::vector<std::uint8_t>* col_valid) {
  Tape& t = *a.tape;
  const Matrix& s = a.value();
  if (col_valid && static_cast<Eigen::Index>(col_valid->size()) != s.cols())
    throw std::invalid_argument("softmax_rows: mask size mismatch");
  auto ok = [col_valid](Eigen::Index j) { return !col_valid || (*col_valid)[static_cast<std::size_t>(j)]; };
  bool any = false;
  for (Eigen::Index j = 0; j < s.cols(); ++j) any = any || ok(j);
  if (!any) throw std::domain_error("softmax_rows: every key is masked");
  Matrix p = Matrix::Zero(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < s.cols(); ++j)
      if (ok(j)) m = std::max(m, s(r, j));
    double z = 0.0;
    for (Eigen::Index j = 0; j < s.cols(); ++j)
      if (ok(j)) z += (p(r, j) = std::exp(s(r, j) - m));
    p.row(r) /= z;
  }
  Matrix pv = p;
  return t.record(std::move(p), {a}, [a, pv = std::move(pv)](Tape& t, const Matrix& g) {
    const Eigen::VectorXd dot = g.cwiseProduct(pv).rowwise().sum();
    t.accumulate_expr(a.id, pv.cwiseProduct(g - dot.replicate(1, g.cols())));
  });
}

Var mean_rows(Var a) {
  Tape& t = *a.tape;
  const auto rows = a.rows();
  if (rows == 0) throw std::domain_error("mean_rows: empty input");
  return t.record(a.value().colwise().mean(), {a}, [a, rows](Tape& t, const Matrix& g) {
    t.accumulate_expr(a.id, g.replicate(rows, 1) / static_cast<double>(rows));
  });
}

Var hconcat(Var a, Var b) {
  Tape& t = *a.tape;
  if (a.rows() != b.rows()) throw std::invalid_argument("hconcat: row mismatch");
  Matrix y(a.rows(), a.cols() + b.cols());
  y << a.value(), b.value();
  const auto na = a.cols(), nb = b.cols();
  return t.record(std::move(y), {a, b}, [a, b, na, nb](Tape& t, const Matrix& g) {
    t.accumulate_expr(a.id, g.leftCols(na));
    t.accumulate_expr(b.id, g.rightCols(nb));
  });
}

Var col_block(Var a, Eigen::Index start, Eigen::Index n) {
  Tape& t = *a.tape;
  if (start < 0 || start + n > a.cols()) throw std::invalid_argument("col_block: out of range");
  return t.record(a.value().middleCols(start, n), {a}, [a, start, n](Tape& t, const Matrix& g) {
    if (!t.requires_grad(a.id)) return;
    const Matrix& v = t.value(a.id);
    Matrix full = Matrix::Zero(v.rows(), v.cols());
    full.middleCols(start, n) = g;
    t.accumulate_expr(a.id, full);
  });
}

Var sum_all(Var a) {
  Tape& t = *a.tape;
  Matrix y(1, 1);
  y(0, 0) = a.value().sum();
  return t.record(std::move(y), {a}, [a](Tape& t, const Matrix& g) {
    const Matrix& v = t.value(a.id);
    t.accumulate_expr(a.id, Matrix::Constant(v.rows(), v.cols(), g(0, 0)));
  });
}

Var mul_elem(Var a, Var b) {
  Tape& t = *a.tape;
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("mul_elem: shape mismatch");
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a.id)) t.accumulate_expr(a.id, g.cwiseProduct(t.value(b.id)));
    if (t.requires_grad(b.id)) t.accumulate_expr(b.id, g.cwiseProduct(t.value(a.id)));
  });
}

}  // namespace packer::ad

namespace packer::ad {

namespace {

void check_offsets(const Offsets& off, Eigen::Index rows, const char* what) {
  if (off.size() < 2 || off.front() != 0 || off.back() != rows)
    throw std::invalid_argument(std::string(what) + ": offsets do not cover the rows");
  for (std::size_t s = 1; s < off.size(); ++s)
    if (off[s] < off[s - 1]) throw std::invalid_argument(std::string(what) + ": offsets decrease");
}

}  // namespace

Var segment_attention(Var q, Var k, Var v, const Offsets& q_off, const Offsets& k_off, double scale) {
  Tape& t = *q.tape;
  check_offsets(q_off, q.rows(), "segment_attention");
  check_offsets(k_off, k.rows(), "segment_attention");
  if (q_off.size() != k_off.size() || k.rows() != v.rows() || q.cols() != k.cols())
    throw std::invalid_argument("segment_attention: shape mismatch");
  const std::size_t n = q_off.size() - 1;
  std::vector<Matrix> probs(n);
  Matrix out(q.rows(), v.cols());
  {
    const Matrix& qv = q.value();
    const Matrix& kv = k.value();
    const Matrix& vv = v.value();
    for (std::size_t s = 0; s < n; ++s) {
      const int q0 = q_off[s], nq = q_off[s + 1] - q0, k0 = k_off[s], nk = k_off[s + 1] - k0;
      if (nq == 0) continue;
      if (nk == 0) throw std::domain_error("segment_attention: every key is masked");
      Matrix p = (qv.middleRows(q0, nq) * kv.middleRows(k0, nk).transpose()) * scale;
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        p.row(r).array() = (p.row(r).array() - p.row(r).maxCoeff()).exp();
        p.row(r) /= p.row(r).sum();
      }
      out.middleRows(q0, nq).noalias() = p * vv.middleRows(k0, nk);
      probs[s] = std::move(p);
    }
  }
  return t.record(std::move(out), {q, k, v},
                  [q, k, v, q_off, k_off, scale, probs = std::move(probs)](Tape& t, const Matrix& g) {
                    const Matrix& qv = t.value(q.id);
                    const Matrix& kv = t.value(k.id);
                    const Matrix& vv = t.value(v.id);
                    Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
                    Matrix dk = Matrix::Zero(kv.rows(), kv.cols());
                    Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
                    for (std::size_t s = 0; s + 1 < q_off.size(); ++s) {
                      const int q0 = q_off[s], nq = q_off[s + 1] - q0, k0 = k_off[s], nk = k_off[s + 1] - k0;
                      if (nq == 0) continue;
                      const Matrix& p = probs[s];
                      const auto go = g.middleRows(q0, nq);
                      dv.middleRows(k0, nk).noalias() += p.transpose() * go;
                      Matrix dp = go * vv.middleRows(k0, nk).transpose();
                      const Eigen::VectorXd dot = dp.cwiseProduct(p).rowwise().sum();
                      Matrix ds = p.cwiseProduct(dp - dot.replicate(1, nk)) * scale;
                      dq.middleRows(q0, nq).noalias() += ds * kv.middleRows(k0, nk);
                      dk.middleRows(k0, nk).noalias() += ds.transpose() * qv.middleRows(q0, nq);
                    }
                    t.accumulate_expr(q.id, dq);
                    t.accumulate_expr(k.id, dk);
                    t.accumulate_expr(v.id, dv);
                  });
}

Var segment_scores(Var a, Var b, const Offsets& a_off, const Offsets& b_off) {
  Tape& t = *a.tape;
  check_offsets(a_off, a.rows(), "segment_scores");
  check_offsets(b_off, b.rows(), "segment_scores");
  if (a_off.size() != b_off.size() || a.cols() != b.cols()) throw std::invalid_argument("segment_scores: shape mismatch");
  const std::size_t n = a_off.size() - 1;
  std::vector<int> out_off(n + 1, 0);
  for (std::size_t s = 0; s < n; ++s)
    out_off[s + 1] = out_off[s] + (a_off[s + 1] - a_off[s]) * (b_off[s + 1] - b_off[s]);
  Matrix out(1, out_off.back());
  {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    for (std::size_t s = 0; s < n; ++s) {
      const int a0 = a_off[s], na = a_off[s + 1] - a0, b0 = b_off[s], nb = b_off[s + 1] - b0;
      Eigen::Map<Matrix> block(out.data() + out_off[s], na, nb);
      block.noalias() = av.middleRows(a0, na) * bv.middleRows(b0, nb).transpose();
    }
  }
  return t.record(std::move(out), {a, b}, [a, b, a_off, b_off, out_off](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a.id);
    const Matrix& bv = t.value(b.id);
    Matrix da = Matrix::Zero(av.rows(), av.cols());
    Matrix db = Matrix::Zero(bv.rows(), bv.cols());
    for (std::size_t s = 0; s + 1 < a_off.size(); ++s) {
      const int a0 = a_off[s], na = a_off[s + 1] - a0, b0 = b_off[s], nb = b_off[s + 1] - b0;
      Eigen::Map<const Matrix> gs(g.data() + out_off[s], na, nb);
      da.middleRows(a0, na).noalias() += gs * bv.middleRows(b0, nb);
      db.middleRows(b0, nb).noalias() += gs.transpose() * av.middleRows(a0, na);
    }
    t.accumulate_expr(a.id, da);
    t.accumulate_expr(b.id, db);
  });
}

Var segment_mean(Var a, const Offsets& off) {
  Tape& t = *a.tape;
  check_offsets(off, a.rows(), "segment_mean");
  const std::size_t n = off.size() - 1;
  Matrix out(static_cast<Eigen::Index>(n), a.cols());
  {
    const Matrix& av = a.value();
    for (std::size_t s = 0; s < n; ++s) {
      const int r0 = off[s], nr = off[s + 1] - r0;
      if (nr == 0) throw std::domain_error("segment_mean: empty segment");
      out.row(static_cast<Eigen::Index>(s)) = av.middleRows(r0, nr).colwise().mean();
    }
  }
  return t.record(std::move(out), {a}, [a, off](Tape& t, const Matrix& g) {
    const Matrix& av = t.value(a.id);
    Matrix da(av.rows(), av.cols());
    for (std::size_t s = 0; s + 1 < off.size(); ++s) {
      const int r0 = off[s], nr = off[s + 1] - r0;
      da.middleRows(r0, nr) = (g.row(static_cast<Eigen::Index>(s)) / static_cast<double>(nr)).replicate(nr, 1);
    }
    t.accumulate_expr(a.id, da);
  });
}

}  // namespace packer::ad
