#include "packer/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace packer::nn {

const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::NoPt: return "no_pt";
    case Ablation::MlpMixer: return "mlp_mixer";
  }
  return "?";
}

Ablation ablation_from_string(const std::string& s) {
  if (s == "full") return Ablation::Full;
  if (s == "no_pt") return Ablation::NoPt;
  if (s == "mlp_mixer") return Ablation::MlpMixer;
  throw std::invalid_argument("unknown ablation mode: " + s);
}

namespace {

enum class Init { Orthogonal, Zero, One };

struct Slot {
  std::string name;
  int rows, cols;
  Init init;
  double gain;
};

const double kSqrt2 = std::sqrt(2.0);

void add_linear(std::vector<Slot>& out, const std::string& prefix, int in, int outd, double gain) {
  out.push_back({prefix + ".w", in, outd, Init::Orthogonal, gain});
  out.push_back({prefix + ".b", 1, outd, Init::Zero, 0.0});
}

void add_mlp(std::vector<Slot>& out, const std::string& prefix, int in, int hidden, int outd, double out_gain) {
  add_linear(out, prefix + ".0", in, hidden, kSqrt2);
  add_linear(out, prefix + ".1", hidden, outd, out_gain);
}

void add_norm(std::vector<Slot>& out, const std::string& prefix, int d) {
  out.push_back({prefix + ".g", 1, d, Init::One, 0.0});
  out.push_back({prefix + ".b", 1, d, Init::Zero, 0.0});
}

void add_mixer(std::vector<Slot>& out, const std::string& prefix, const PolicyConfig& c) {
  const int d = c.embed_dim;
  if (c.ablation == Ablation::MlpMixer) {
    add_mlp(out, prefix, d, d, d, kSqrt2);
  } else {
    for (const char* p : {".q", ".k", ".v", ".o"}) add_linear(out, prefix + p, d, d, 1.0);
  }
  add_norm(out, prefix + ".ln", d);
}

std::vector<Slot> layout(const PolicyConfig& c) {
  if (c.embed_dim < 1 || c.blocks < 0 || c.heads < 1 || c.embed_dim % c.heads != 0)
    throw std::invalid_argument("invalid policy config");
  const int d = c.embed_dim;
  std::vector<Slot> s;
  add_mlp(s, "ems_enc", 6, d, d, kSqrt2);
  add_mlp(s, "item_enc", 3, d, d, kSqrt2);
  if (c.ablation != Ablation::NoPt) {
    for (int b = 0; b < c.blocks; ++b) {
      const std::string p = "blk" + std::to_string(b) + ".";
      for (const char* side : {"ems", "item"}) {
        add_mixer(s, p + side + "_self", c);
        add_mlp(s, p + side + "_mlp1", d, d, d, kSqrt2);
        add_norm(s, p + side + "_mlp1.ln", d);
      }
      for (const char* side : {"ems", "item"}) {
        add_mixer(s, p + side + "_cross", c);
        add_mlp(s, p + side + "_mlp2", d, d, d, kSqrt2);
        add_norm(s, p + side + "_mlp2.ln", d);
      }
    }
  }
  add_mlp(s, "actor.item", d, d, d, 1.0);
  add_mlp(s, "actor.ems", d, d, d, 0.01);
  add_mlp(s, "critic", 2 * d, d, 1, 1.0);
  return s;
}

Matrix orthogonal(int rows, int cols, double gain, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const int big = std::max(rows, cols), small = std::min(rows, cols);
  Eigen::MatrixXd a(big, small);
  for (int i = 0; i < big; ++i)
    for (int j = 0; j < small; ++j) a(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (int j = 0; j < small; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  Matrix out = rows >= cols ? Matrix(q) : Matrix(q.transpose());
  return out * gain;
}

}  // namespace

PolicyParams PolicyParams::initialize(const PolicyConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> names;
  std::vector<Matrix> tensors;
  for (const Slot& s : layout(config)) {
    names.push_back(s.name);
    switch (s.init) {
      case Init::Orthogonal: tensors.push_back(orthogonal(s.rows, s.cols, s.gain, rng)); break;
      case Init::Zero: tensors.push_back(Matrix::Zero(s.rows, s.cols)); break;
      case Init::One: tensors.push_back(Matrix::Ones(s.rows, s.cols)); break;
    }
  }
  return PolicyParams(config, std::move(names), std::move(tensors));
}

PolicyParams::PolicyParams(PolicyConfig config, std::vector<std::string> names, std::vector<Matrix> tensors)
    : config_(config), names_(std::move(names)), tensors_(std::move(tensors)) {
  const auto slots = layout(config_);
  if (slots.size() != names_.size() || names_.size() != tensors_.size())
    throw std::invalid_argument("parameter set does not match the config layout");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].name != names_[i] || slots[i].rows != tensors_[i].rows() || slots[i].cols != tensors_[i].cols())
      throw std::invalid_argument("parameter '" + names_[i] + "' does not match the config layout");
    lookup_[names_[i]] = i;
  }
}

std::size_t PolicyParams::index(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::size_t PolicyParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
  return n;
}

void PolicyParams::assign(std::size_t i, Matrix m) {
  if (m.rows() != tensors_.at(i).rows() || m.cols() != tensors_[i].cols())
    throw std::invalid_argument("shape mismatch for " + names_[i]);
  tensors_[i] = std::move(m);
}

bool operator==(const PolicyParams& a, const PolicyParams& b) {
  if (!(a.config_ == b.config_) || a.names_ != b.names_) return false;
  for (std::size_t i = 0; i < a.tensors_.size(); ++i)
    if (a.tensors_[i] != b.tensors_[i]) return false;
  return true;
}

Gradients zero_gradients(const PolicyParams& p) {
  Gradients g;
  g.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) g.push_back(Matrix::Zero(p.tensor(i).rows(), p.tensor(i).cols()));
  return g;
}

Network::Network(ad::Tape& tape, const PolicyParams& params, Gradients* sinks)
    : tape_(tape), params_(params), sinks_(sinks), bound_(params.size(), -1) {
  if (sinks && sinks->size() != params.size()) throw std::invalid_argument("gradient buffer size mismatch");
}

ad::Var Network::param(const std::string& name) {
  const std::size_t i = params_.index(name);
  if (bound_[i] < 0) bound_[i] = tape_.param(params_.tensor(i), sinks_ ? &(*sinks_)[i] : nullptr).id;
  return {&tape_, bound_[i]};
}

ad::Var Network::mlp(const std::string& prefix, ad::Var x) {
  ad::Var h = ad::linear(x, param(prefix + ".0.w"), param(prefix + ".0.b"));
  h = ad::leaky_relu(h, config().leaky_slope);
  return ad::linear(h, param(prefix + ".1.w"), param(prefix + ".1.b"));
}

ad::Var attention(ad::Var q, ad::Var k, ad::Var v, const std::vector<std::uint8_t>* key_valid, int heads) {
  const auto d = q.cols();
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) throw std::invalid_argument("attention: shape mismatch");
  if (heads < 1 || d % heads != 0) throw std::invalid_argument("attention: heads must divide the width");
  const auto dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  auto one_head = [&](ad::Var qh, ad::Var kh, ad::Var vh) {
    ad::Var w = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), scale), key_valid);
    return ad::matmul(w, vh);
  };
  if (heads == 1) return one_head(q, k, v);
  ad::Var out = one_head(ad::col_block(q, 0, dk), ad::col_block(k, 0, dk), ad::col_block(v, 0, dk));
  for (int h = 1; h < heads; ++h)
    out = ad::hconcat(out, one_head(ad::col_block(q, h * dk, dk), ad::col_block(k, h * dk, dk),
                                    ad::col_block(v, h * dk, dk)));
  return out;
}

ad::Var attention(ad::Var q, ad::Var k, ad::Var v, const ad::Offsets& q_off, const ad::Offsets& k_off, int heads) {
  const auto d = q.cols();
  if (k.cols() != d || v.cols() != d) throw std::invalid_argument("attention: shape mismatch");
  if (heads < 1 || d % heads != 0) throw std::invalid_argument("attention: heads must divide the width");
  const auto dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  if (heads == 1) return ad::segment_attention(q, k, v, q_off, k_off, scale);
  auto head = [&](int h) {
    return ad::segment_attention(ad::col_block(q, h * dk, dk), ad::col_block(k, h * dk, dk),
                                 ad::col_block(v, h * dk, dk), q_off, k_off, scale);
  };
  ad::Var out = head(0);
  for (int h = 1; h < heads; ++h) out = ad::hconcat(out, head(h));
  return out;
}

ad::Var Network::attention_layer(const std::string& prefix, ad::Var queries, ad::Var keys, const ad::Offsets& q_off,
                                 const ad::Offsets& k_off) {
  if (config().ablation == Ablation::MlpMixer) return mlp(prefix, queries);
  ad::Var q = ad::linear(queries, param(prefix + ".q.w"), param(prefix + ".q.b"));
  ad::Var k = ad::linear(keys, param(prefix + ".k.w"), param(prefix + ".k.b"));
  ad::Var v = ad::linear(keys, param(prefix + ".v.w"), param(prefix + ".v.b"));
  ad::Var a = attention(q, k, v, q_off, k_off, config().heads);
  return ad::linear(a, param(prefix + ".o.w"), param(prefix + ".o.b"));
}

ad::Var Network::residual_norm(const std::string& prefix, ad::Var x, ad::Var sub) {
  return ad::layer_norm(ad::add(x, sub), param(prefix + ".g"), param(prefix + ".b"), config().ln_eps);
}

std::pair<ad::Var, ad::Var> Network::encode(ad::Var ems_rows, ad::Var item_rows) {
  if (ems_rows.cols() != 6 || item_rows.cols() != 3)
    throw std::domain_error("encode: expected 6-wide EMS rows and 3-wide item rows");
  return {mlp("ems_enc", ems_rows), mlp("item_enc", item_rows)};
}

std::pair<ad::Var, ad::Var> Network::transformer(ad::Var e, ad::Var i, const Segments& seg) {
  if (config().ablation == Ablation::NoPt) return {e, i};
  for (int b = 0; b < config().blocks; ++b) {
    const std::string p = "blk" + std::to_string(b) + ".";
    e = residual_norm(p + "ems_self.ln", e, attention_layer(p + "ems_self", e, e, seg.ems, seg.ems));
    e = residual_norm(p + "ems_mlp1.ln", e, mlp(p + "ems_mlp1", e));
    i = residual_norm(p + "item_self.ln", i, attention_layer(p + "item_self", i, i, seg.item, seg.item));
    i = residual_norm(p + "item_mlp1.ln", i, mlp(p + "item_mlp1", i));
    // Both cross directions read the pre-cross states.
    ad::Var e2 = residual_norm(p + "ems_cross.ln", e, attention_layer(p + "ems_cross", e, i, seg.ems, seg.item));
    ad::Var i2 = residual_norm(p + "item_cross.ln", i, attention_layer(p + "item_cross", i, e, seg.item, seg.ems));
    e = residual_norm(p + "ems_mlp2.ln", e2, mlp(p + "ems_mlp2", e2));
    i = residual_norm(p + "item_mlp2.ln", i2, mlp(p + "item_mlp2", i2));
  }
  return {e, i};
}

ad::Var Network::actor_scores(ad::Var ems_feat, ad::Var item_feat, const Segments& seg) {
  return ad::segment_scores(mlp("actor.item", item_feat), mlp("actor.ems", ems_feat), seg.item, seg.ems);
}

ad::Var Network::critic_value(ad::Var ems_feat, ad::Var item_feat, const Segments& seg) {
  return mlp("critic", ad::hconcat(ad::segment_mean(ems_feat, seg.ems), ad::segment_mean(item_feat, seg.item)));
}

int Batch::score_index(int s, int action) const {
  const int cap = capacity[static_cast<std::size_t>(s)];
  if (action < 0 || action >= 2 * cap) return -1;
  const auto& cols = columns[static_cast<std::size_t>(s)];
  auto it = std::lower_bound(cols.begin(), cols.end(), action % cap);
  if (it == cols.end() || *it != action % cap) return -1;
  return score_off[static_cast<std::size_t>(s)] + (action / cap) * kept(s) + static_cast<int>(it - cols.begin());
}

int Batch::action_of(int s, int flat) const {
  const int local = flat - score_off[static_cast<std::size_t>(s)], k = kept(s);
  return (local / k) * capacity[static_cast<std::size_t>(s)] + columns[static_cast<std::size_t>(s)][local % k];
}

Batch make_batch(const std::vector<const PackState*>& states) {
  Batch b;
  const auto n = states.size();
  b.seg.ems.assign(1, 0);
  b.seg.item.assign(1, 0);
  b.score_off.assign(1, 0);
  int rows = 0;
  for (const PackState* st : states) {
    const auto& v = st->ems().valid;
    std::vector<int> cols;
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i]) cols.push_back(static_cast<int>(i));
    if (cols.empty()) throw std::domain_error("policy forward: no valid EMS");
    rows += static_cast<int>(cols.size());
    b.seg.ems.push_back(rows);
    b.seg.item.push_back(b.seg.item.back() + 2);
    b.score_off.push_back(b.score_off.back() + 2 * static_cast<int>(cols.size()));
    b.capacity.push_back(st->mask().capacity());
    b.columns.push_back(std::move(cols));
  }
  b.ems_rows.resize(rows, 6);
  b.item_rows.resize(2 * static_cast<Eigen::Index>(n), 3);
  b.mask.resize(static_cast<std::size_t>(b.score_off.back()));
  for (std::size_t s = 0; s < n; ++s) {
    const PackState& st = *states[s];
    const auto& cols = b.columns[s];
    const int k = static_cast<int>(cols.size());
    for (int c = 0; c < k; ++c) {
      b.ems_rows.row(b.seg.ems[s] + c) = st.ems().rows.row(cols[static_cast<std::size_t>(c)]);
      for (int o = 0; o < 2; ++o)
        b.mask[static_cast<std::size_t>(b.score_off[s] + o * k + c)] = st.mask()(o, cols[static_cast<std::size_t>(c)]);
    }
    b.item_rows.middleRows(2 * static_cast<Eigen::Index>(s), 2) = st.item_obs;
  }
  return b;
}

Batch make_batch(const PackState& state) { return make_batch(std::vector<const PackState*>{&state}); }

BatchForward forward(Network& net, const Batch& batch) {
  ad::Tape& t = net.tape();
  auto [e, i] = net.encode(t.constant(batch.ems_rows), t.constant(batch.item_rows));
  std::tie(e, i) = net.transformer(e, i, batch.seg);
  return {net.actor_scores(e, i, batch.seg), net.critic_value(e, i, batch.seg)};
}

Eigen::VectorXd full_logits(const Batch& batch, const Matrix& scores, int s) {
  const int cap = batch.capacity[static_cast<std::size_t>(s)];
  Eigen::VectorXd out = Eigen::VectorXd::Constant(2 * cap, kMaskedLogit);
  const int k = batch.kept(s), base = batch.score_off[static_cast<std::size_t>(s)];
  for (int f = base; f < base + 2 * k; ++f)
    if (batch.mask[static_cast<std::size_t>(f)]) out(batch.action_of(s, f)) = scores(0, f);
  return out;
}

Eigen::VectorXd masked_softmax(const Eigen::VectorXd& logits, const ActionMask& mask) {
  if (logits.size() != mask.size()) throw std::invalid_argument("masked_softmax: size mismatch");
  double m = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < mask.size(); ++a)
    if (mask.at(a)) m = std::max(m, logits(a));
  Eigen::VectorXd p = Eigen::VectorXd::Zero(logits.size());
  if (!std::isfinite(m)) return p;
  double z = 0.0;
  for (int a = 0; a < mask.size(); ++a)
    if (mask.at(a)) z += (p(a) = std::exp(logits(a) - m));
  return p / z;
}

namespace {

std::vector<int> valid_rows(const std::vector<std::uint8_t>& valid) {
  std::vector<int> out;
  for (std::size_t i = 0; i < valid.size(); ++i)
    if (valid[i]) out.push_back(static_cast<int>(i));
  return out;
}

Matrix gather_rows(const Matrix& m, const std::vector<int>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(rows[r]);
  return out;
}

Matrix scatter_rows(const Matrix& m, const std::vector<int>& rows, Eigen::Index total) {
  Matrix out = Matrix::Zero(total, m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(rows[r]) = m.row(static_cast<Eigen::Index>(r));
  return out;
}

Segments single(Eigen::Index ems_rows, Eigen::Index item_rows) {
  return {{0, static_cast<int>(ems_rows)}, {0, static_cast<int>(item_rows)}};
}

}  // namespace

std::pair<Matrix, Matrix> encode(const PackState& state, const PolicyParams& params) {
  ad::Tape t;
  Network net(t, params);
  auto [e, i] = net.encode(t.constant(state.ems().rows), t.constant(Matrix(state.item_obs)));
  return {e.value(), i.value()};
}

std::pair<Matrix, Matrix> packing_transformer(const Matrix& ems_emb, const Matrix& item_emb,
                                              const std::vector<std::uint8_t>& valid, const PolicyParams& params) {
  if (static_cast<Eigen::Index>(valid.size()) != ems_emb.rows())
    throw std::invalid_argument("packing_transformer: valid flags do not match rows");
  const auto rows = valid_rows(valid);
  if (rows.empty()) throw std::domain_error("packing_transformer: no valid EMS");
  ad::Tape t;
  Network net(t, params);
  auto [e, i] = net.transformer(t.constant(gather_rows(ems_emb, rows)), t.constant(item_emb),
                                single(static_cast<Eigen::Index>(rows.size()), item_emb.rows()));
  return {scatter_rows(e.value(), rows, ems_emb.rows()), i.value()};
}

Eigen::VectorXd actor(const Matrix& ems_feat, const Matrix& item_feat, const ActionMask& mask,
                      const PolicyParams& params) {
  const int cap = mask.capacity();
  if (cap != ems_feat.rows() || item_feat.rows() != 2) throw std::invalid_argument("actor: shape mismatch");
  ad::Tape t;
  Network net(t, params);
  const Matrix s = net.actor_scores(t.constant(ems_feat), t.constant(item_feat), single(cap, 2)).value();
  Eigen::VectorXd out(mask.size());
  for (int a = 0; a < mask.size(); ++a) out(a) = mask.at(a) ? s(0, a) : kMaskedLogit;
  return out;
}

double critic(const Matrix& ems_feat, const Matrix& item_feat, const std::vector<std::uint8_t>& valid,
              const PolicyParams& params) {
  const auto rows = valid_rows(valid);
  if (rows.empty()) throw std::domain_error("critic: no valid EMS");
  ad::Tape t;
  Network net(t, params);
  return net
      .critic_value(t.constant(gather_rows(ems_feat, rows)), t.constant(item_feat),
                    single(static_cast<Eigen::Index>(rows.size()), item_feat.rows()))
      .scalar();
}

std::vector<PolicyOutput> evaluate(const std::vector<const PackState*>& states, const PolicyParams& params) {
  if (states.empty()) return {};
  const Batch b = make_batch(states);
  ad::Tape t;
  Network net(t, params);
  const BatchForward f = forward(net, b);
  const Matrix scores = f.scores.value();
  const Matrix values = f.values.value();
  std::vector<PolicyOutput> out(states.size());
  for (std::size_t s = 0; s < states.size(); ++s) {
    out[s].logits = full_logits(b, scores, static_cast<int>(s));
    out[s].probs = masked_softmax(out[s].logits, states[s]->mask());
    out[s].value = values(static_cast<Eigen::Index>(s), 0);
  }
  return out;
}

PolicyOutput evaluate(const PackState& state, const PolicyParams& params) {
  return std::move(evaluate(std::vector<const PackState*>{&state}, params).front());
}

ActResult choose_action(const PolicyOutput& out, const ActionMask& m, ActMode mode, Rng& rng) {
  if (!m.any()) throw std::domain_error("act: every action is masked");
  ActResult r;
  r.value = out.value;
  if (mode == ActMode::Greedy) {
    for (int a = 0; a < m.size(); ++a)
      if (m.at(a) && (r.action < 0 || out.probs(a) > out.probs(r.action))) r.action = a;
  } else {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double target = u(rng);
    double acc = 0.0;
    for (int a = 0; a < m.size(); ++a) {
      if (!m.at(a)) continue;
      r.action = a;  // last valid entry absorbs rounding
      acc += out.probs(a);
      if (target < acc) break;
    }
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < m.size(); ++a)
    if (m.at(a)) mx = std::max(mx, out.logits(a));
  double z = 0.0;
  for (int a = 0; a < m.size(); ++a)
    if (m.at(a)) z += std::exp(out.logits(a) - mx);
  r.log_prob = out.logits(r.action) - mx - std::log(z);
  return r;
}

ActResult act(const PackState& state, const PolicyParams& params, ActMode mode, Rng& rng) {
  if (!state.mask().any()) throw std::domain_error("act: every action is masked");
  return choose_action(evaluate(state, params), state.mask(), mode, rng);
}

Placement NeuralPolicy::choose(const PackState& state, const Heightmap&, Rng& rng) const {
  if (!state.mask().any()) throw NoFeasibleAction();
  const ActResult r = act(state, params_, ActMode::Greedy, rng);
  return action_to_placement(r.action, state.bin, state.item);
}

}  // namespace packer::nn
