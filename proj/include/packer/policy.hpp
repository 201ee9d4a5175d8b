#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "packer/autodiff.hpp"
#include "packer/heuristics.hpp"
#include "packer/pack_env.hpp"

namespace packer::nn {

using ad::Matrix;

enum class Ablation {
  Full,      // encoders -> packing transformer -> heads
  NoPt,      // transformer bypassed, heads read the embeddings
  MlpMixer,  // every attention sublayer replaced by a row-wise MLP
};

const char* to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

struct PolicyConfig {
  int embed_dim = 128;
  int blocks = 3;
  int heads = 1;
  Ablation ablation = Ablation::Full;
  double leaky_slope = 0.01;
  double ln_eps = 1e-5;

  friend bool operator==(const PolicyConfig&, const PolicyConfig&) = default;
};

// Named parameter tensors. Names and shapes depend only on the config.
class PolicyParams {
 public:
  PolicyParams() = default;
  // Orthogonal weights (gain sqrt(2) for hidden MLP layers, 1 for attention
  // projections and the critic output, 0.01 for the actor's EMS-side output),
  // zero biases, unit layer-norm gains.
  static PolicyParams initialize(const PolicyConfig& config, std::uint64_t seed);

  const PolicyConfig& config() const { return config_; }
  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Matrix& tensor(std::size_t i) const { return tensors_[i]; }
  Matrix& tensor(std::size_t i) { return tensors_[i]; }
  std::size_t index(const std::string& name) const;
  const Matrix& operator[](const std::string& name) const { return tensors_[index(name)]; }
  std::size_t parameter_count() const;

  // Used by the checkpoint loader; shapes must match a fresh layout.
  void assign(std::size_t i, Matrix m);
  PolicyParams(PolicyConfig config, std::vector<std::string> names, std::vector<Matrix> tensors);

  friend bool operator==(const PolicyParams& a, const PolicyParams& b);

 private:
  PolicyConfig config_;
  std::vector<std::string> names_;
  std::vector<Matrix> tensors_;
  std::map<std::string, std::size_t> lookup_;
};

// One gradient buffer per parameter tensor.
using Gradients = std::vector<Matrix>;
Gradients zero_gradients(const PolicyParams& p);

// Several states packed for one forward pass. Only valid EMS rows are kept;
// sample s owns EMS rows [seg.ems[s], seg.ems[s + 1]) and item rows
// [seg.item[s], seg.item[s + 1]) (always two).
struct Segments {
  ad::Offsets ems;
  ad::Offsets item;
  int size() const { return static_cast<int>(ems.size()) - 1; }
};

struct Batch {
  Matrix ems_rows;   // sum of k_s rows x 6
  Matrix item_rows;  // 2S x 3
  Segments seg;
  std::vector<std::vector<int>> columns;  // EMS index of each kept row, per sample
  // Sample s has 2 * k_s scores starting at score_off[s], orientation major;
  // mask holds their feasibility in the same layout.
  ad::Offsets score_off;
  std::vector<std::uint8_t> mask;
  std::vector<int> capacity;

  int size() const { return seg.size(); }
  int kept(int s) const { return seg.ems[s + 1] - seg.ems[s]; }
  // Flat score index of a full-layout action, or -1 if its EMS row was dropped.
  int score_index(int s, int action) const;
  // Full-layout action of a flat score index.
  int action_of(int s, int flat) const;
};

// Throws std::domain_error if some state has no valid EMS.
Batch make_batch(const std::vector<const PackState*>& states);
Batch make_batch(const PackState& state);

// Binds parameters to a tape. With `sinks`, parameter gradients are summed
// into them on backward().
class Network {
 public:
  Network(ad::Tape& tape, const PolicyParams& params, Gradients* sinks = nullptr);

  ad::Tape& tape() { return tape_; }
  const PolicyConfig& config() const { return params_.config(); }
  ad::Var param(const std::string& name);

  ad::Var mlp(const std::string& prefix, ad::Var x);
  // Projected multi-head attention of each sample's queries over its own keys.
  ad::Var attention_layer(const std::string& prefix, ad::Var queries, ad::Var keys, const ad::Offsets& q_off,
                          const ad::Offsets& k_off);
  // Residual + layer norm around a sublayer output.
  ad::Var residual_norm(const std::string& prefix, ad::Var x, ad::Var sub);

  std::pair<ad::Var, ad::Var> encode(ad::Var ems_rows, ad::Var item_rows);
  std::pair<ad::Var, ad::Var> transformer(ad::Var ems, ad::Var item, const Segments& seg);
  // 1 x sum(2 k_s) flat scores, orientation major within each sample.
  ad::Var actor_scores(ad::Var ems_feat, ad::Var item_feat, const Segments& seg);
  // S x 1 values.
  ad::Var critic_value(ad::Var ems_feat, ad::Var item_feat, const Segments& seg);

 private:
  ad::Tape& tape_;
  const PolicyParams& params_;
  Gradients* sinks_;
  std::vector<int> bound_;
};

// Scaled dot-product attention softmax(Q K^T / sqrt(d_k)) V, split into
// `heads` column groups. Keys with key_valid[j] == 0 are excluded.
ad::Var attention(ad::Var q, ad::Var k, ad::Var v, const std::vector<std::uint8_t>* key_valid, int heads = 1);
// The same per sample of a packed batch.
ad::Var attention(ad::Var q, ad::Var k, ad::Var v, const ad::Offsets& q_off, const ad::Offsets& k_off, int heads);

inline constexpr double kMaskedLogit = -1e9;

struct BatchForward {
  ad::Var scores;  // 1 x sum(2 k_s)
  ad::Var values;  // S x 1
};
BatchForward forward(Network& net, const Batch& batch);

// Expands sample s's scores to the 2N action layout with masked entries at kMaskedLogit.
Eigen::VectorXd full_logits(const Batch& batch, const Matrix& scores, int s);

struct PolicyOutput {
  Eigen::VectorXd logits;  // 2N, orientation major
  Eigen::VectorXd probs;   // 2N, zero where masked
  double value = 0.0;
};

// Module-level entry points over full N-row inputs. Padded rows are dropped
// before the transformer and come back as zero feature rows.
std::pair<Matrix, Matrix> encode(const PackState& state, const PolicyParams& params);
std::pair<Matrix, Matrix> packing_transformer(const Matrix& ems_emb, const Matrix& item_emb,
                                              const std::vector<std::uint8_t>& valid, const PolicyParams& params);
Eigen::VectorXd actor(const Matrix& ems_feat, const Matrix& item_feat, const ActionMask& mask,
                      const PolicyParams& params);
double critic(const Matrix& ems_feat, const Matrix& item_feat, const std::vector<std::uint8_t>& valid,
              const PolicyParams& params);

PolicyOutput evaluate(const PackState& state, const PolicyParams& params);
std::vector<PolicyOutput> evaluate(const std::vector<const PackState*>& states, const PolicyParams& params);

// Softmax over mask-true entries; masked entries get probability 0.
Eigen::VectorXd masked_softmax(const Eigen::VectorXd& logits, const ActionMask& mask);

enum class ActMode { Sample, Greedy };

struct ActResult {
  int action = -1;
  double log_prob = 0.0;
  double value = 0.0;
};

// Throws std::domain_error when the mask has no true entry.
ActResult act(const PackState& state, const PolicyParams& params, ActMode mode, Rng& rng);
// Picks an action from an already evaluated output.
ActResult choose_action(const PolicyOutput& out, const ActionMask& mask, ActMode mode, Rng& rng);

// Greedy network policy behind the common Policy interface.
class NeuralPolicy final : public Policy {
 public:
  explicit NeuralPolicy(PolicyParams params, std::string label = "gopt")
      : params_(std::move(params)), label_(std::move(label)) {}
  std::string name() const override { return label_; }
  Placement choose(const PackState& state, const Heightmap& hm, Rng& rng) const override;
  const PolicyParams& params() const { return params_; }

 private:
  PolicyParams params_;
  std::string label_;
};

}  // namespace packer::nn
