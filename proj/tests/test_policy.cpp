#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "fd_check.hpp"
#include "packer/policy.hpp"
#include "test_support.hpp"

using namespace packer;
using namespace packer::nn;
using ad::Matrix;
using ad::Tape;
using testsupport::tiny_config;
using testsupport::visited_states;

namespace {

// sum(w . scores) + sum(u . values) with fixed weights.
double probe_loss(const PolicyParams& p, const Batch& batch, Gradients* sinks) {
  Tape t;
  Network net(t, p, sinks);
  BatchForward f = forward(net, batch);
  std::mt19937_64 rng(11);
  ad::Var w = t.constant(fdcheck::random_matrix(rng, 1, static_cast<int>(f.scores.cols())));
  ad::Var u = t.constant(fdcheck::random_matrix(rng, static_cast<int>(f.values.rows()), 1));
  ad::Var loss = ad::add(ad::sum_all(ad::mul_elem(f.scores, w)), ad::sum_all(ad::mul_elem(f.values, u)));
  if (sinks) t.backward(loss);
  return loss.scalar();
}

double network_grad_error(const PolicyParams& params, const Batch& batch) {
  std::string worst;
  const double err = fdcheck::param_rel_error(
      params, [&](const PolicyParams& p, Gradients* g) { return probe_loss(p, batch, g); }, 1e-6, &worst);
  if (err > 1e-4) MESSAGE(worst << " rel err " << err);
  return err;
}

// Random non-trivial values everywhere so zero-initialised biases and gains are exercised too.
PolicyParams perturbed(const PolicyConfig& c, std::uint64_t seed) {
  PolicyParams p = PolicyParams::initialize(c, seed);
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < p.size(); ++k)
    p.tensor(k) += fdcheck::random_matrix(rng, static_cast<int>(p.tensor(k).rows()),
                                          static_cast<int>(p.tensor(k).cols()), 0.3);
  return p;
}

}  // namespace

TEST_CASE("network gradients match central differences for every variant") {
  const auto states = visited_states(3, 12);
  const Batch batch = make_batch({&states[2], &states[7], &states[11]});
  for (Ablation a : {Ablation::Full, Ablation::NoPt, Ablation::MlpMixer}) {
    const std::string variant = to_string(a);
    CAPTURE(variant);
    CHECK(network_grad_error(perturbed(tiny_config(a), 5), batch) < 1e-4);
  }
}

TEST_CASE("parameter layout") {
  const PolicyParams full = PolicyParams::initialize(PolicyConfig{}, 1);
  CHECK(full.config().embed_dim == 128);
  CHECK(full["ems_enc.0.w"].rows() == 6);
  CHECK(full["item_enc.0.w"].rows() == 3);
  CHECK(full["critic.0.w"].rows() == 256);
  CHECK(full["critic.1.w"].cols() == 1);
  CHECK_NOTHROW(full.index("blk2.item_cross.q.w"));
  CHECK_THROWS(full.index("blk3.item_cross.q.w"));
  const PolicyParams nopt = PolicyParams::initialize(tiny_config(Ablation::NoPt), 1);
  for (std::size_t i = 0; i < nopt.size(); ++i) CHECK(nopt.name(i).rfind("blk", 0) != 0);
  CHECK(PolicyParams::initialize(PolicyConfig{}, 1) == full);
  CHECK_FALSE(PolicyParams::initialize(PolicyConfig{}, 2) == full);
}

TEST_CASE("orthogonal initialisation") {
  const PolicyParams p = PolicyParams::initialize(PolicyConfig{}, 9);
  const Matrix& w = p["blk0.ems_mlp1.0.w"];  // square hidden layer, gain sqrt(2)
  const Matrix gram = w.transpose() * w;
  CHECK((gram - 2.0 * Matrix::Identity(w.cols(), w.cols())).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(p["critic.0.b"].cwiseAbs().maxCoeff() == 0.0);
  CHECK((p["blk0.ems_self.ln.g"].array() == 1.0).all());
}

TEST_CASE("batched evaluation equals one-state evaluation") {
  const auto states = visited_states(4, 9);
  const PolicyParams p = perturbed(tiny_config(), 2);
  std::vector<const PackState*> ptrs;
  for (const auto& s : states) ptrs.push_back(&s);
  const auto batched = evaluate(ptrs, p);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const PolicyOutput one = evaluate(states[i], p);
    CHECK((one.logits - batched[i].logits).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(one.value == doctest::Approx(batched[i].value).epsilon(1e-12));
  }
}

TEST_CASE("module pipeline equals the batched forward") {
  const auto states = visited_states(5, 6);
  const PolicyParams p = perturbed(tiny_config(), 3);
  for (const auto& s : states) {
    auto [ems, item] = encode(s, p);
    auto [ef, itf] = packing_transformer(ems, item, s.ems().valid, p);
    const Eigen::VectorXd logits = actor(ef, itf, s.mask(), p);
    const double v = critic(ef, itf, s.ems().valid, p);
    const PolicyOutput out = evaluate(s, p);
    CHECK((logits - out.logits).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(v == doctest::Approx(out.value).epsilon(1e-12));
    for (int a = 0; a < s.mask().size(); ++a)
      if (!s.mask().at(a)) CHECK(out.logits[a] == kMaskedLogit);
  }
}

TEST_CASE("padded rows do not influence valid rows") {
  const auto states = visited_states(6, 20);
  const PackState& s = states.back();
  const PolicyParams p = perturbed(tiny_config(), 4);
  auto [ems, item] = encode(s, p);
  Matrix junk = ems;
  for (int i = 0; i < junk.rows(); ++i)
    if (!s.ems().valid[static_cast<std::size_t>(i)]) junk.row(i).setConstant(123.0);
  const auto a = packing_transformer(ems, item, s.ems().valid, p);
  const auto b = packing_transformer(junk, item, s.ems().valid, p);
  CHECK((a.first - b.first).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.second - b.second).cwiseAbs().maxCoeff() == 0.0);
  CHECK(critic(a.first, a.second, s.ems().valid, p) == critic(b.first, b.second, s.ems().valid, p));
}

TEST_CASE("transformer is permutation equivariant over EMS rows") {
  const auto states = visited_states(7, 30);
  const PackState& s = states.back();
  const PolicyParams p = perturbed(tiny_config(), 6);
  auto [ems, item] = encode(s, p);
  const int n = static_cast<int>(ems.rows());
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
  Matrix shuffled(n, ems.cols());
  std::vector<std::uint8_t> valid(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    shuffled.row(i) = ems.row(perm[static_cast<std::size_t>(i)]);
    valid[static_cast<std::size_t>(i)] = s.ems().valid[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  const auto a = packing_transformer(ems, item, s.ems().valid, p);
  const auto b = packing_transformer(shuffled, item, valid, p);
  for (int i = 0; i < n; ++i)
    CHECK((b.first.row(i) - a.first.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((a.second - b.second).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(critic(a.first, a.second, s.ems().valid, p) ==
        doctest::Approx(critic(b.first, b.second, valid, p)).epsilon(1e-12));
}

TEST_CASE("outputs are invariant to scaling bin and items together") {
  // Same item stream replayed in a 10-bin and a 20-bin with doubled dimensions.
  const PolicyParams p = perturbed(tiny_config(), 7);
  Rng rng(12);
  std::vector<ItemDims> seq;
  for (int i = 0; i < 30; ++i) seq.push_back(sample_item(rng, {10, 10, 10}));
  std::vector<ItemDims> doubled;
  for (auto d : seq) doubled.push_back({2 * d.l, 2 * d.w, 2 * d.h});
  EpisodeConfig small, big;
  small.sequence = seq;
  big.bin = {20, 20, 20};
  big.sequence = doubled;
  PackEnv es(small), eb(big);
  es.reset();
  eb.reset();
  int steps = 0;
  while (!es.done() && !eb.done()) {
    REQUIRE(es.state().mask() == eb.state().mask());
    const PolicyOutput a = evaluate(es.state(), p), b = evaluate(eb.state(), p);
    CHECK((a.logits - b.logits).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(a.value == doctest::Approx(b.value).epsilon(1e-10));
    const int act = static_cast<int>(std::max_element(a.probs.data(), a.probs.data() + a.probs.size()) - a.probs.data());
    es.step(act);
    eb.step(act);
    ++steps;
  }
  CHECK(es.done() == eb.done());
  CHECK(steps > 3);
}

TEST_CASE("masked softmax and action choice") {
  ActionMask mask(3);
  mask.set(0, 1, true);
  mask.set(1, 0, true);
  mask.set(1, 2, true);
  Eigen::VectorXd logits(6);
  logits << 5.0, 0.5, 9.0, 0.5, -2.0, 0.2;
  const Eigen::VectorXd p = masked_softmax(logits, mask);
  CHECK(p.sum() == doctest::Approx(1.0));
  CHECK(p[0] == 0.0);
  CHECK(p[2] == 0.0);
  CHECK(p[4] == 0.0);
  PolicyOutput out{logits, p, 0.0};
  Rng rng(0);
  SUBCASE("greedy ties go to the lowest index") {
    const ActResult r = choose_action(out, mask, ActMode::Greedy, rng);
    CHECK(r.action == 1);
    CHECK(r.log_prob == doctest::Approx(std::log(p[1])));
  }
  SUBCASE("an empty mask throws") {
    CHECK_THROWS_AS(choose_action(out, ActionMask(3), ActMode::Sample, rng), std::domain_error);
  }
  SUBCASE("sampling frequencies follow the probabilities") {
    std::vector<int> hits(6, 0);
    const int n = 20000;
    for (int i = 0; i < n; ++i) ++hits[static_cast<std::size_t>(choose_action(out, mask, ActMode::Sample, rng).action)];
    for (int a = 0; a < 6; ++a) CHECK(hits[static_cast<std::size_t>(a)] / double(n) == doctest::Approx(p[a]).epsilon(0.03));
  }
}

TEST_CASE("sampled actions are always mask valid") {
  const PolicyParams p = PolicyParams::initialize(tiny_config(), 8);
  EpisodeConfig cfg;
  cfg.seed = 21;
  PackEnv env(cfg);
  env.reset();
  Rng rng(5);
  int invalid = 0;
  for (int i = 0; i < 100000; ++i) {
    const ActResult r = act(env.state(), p, ActMode::Sample, rng);
    if (!env.state().mask().at(r.action)) ++invalid;
    if (env.step(r.action).done) env.reset();
  }
  CHECK(invalid == 0);
}

TEST_CASE("neural policy returns a placement that can be applied") {
  const auto states = visited_states(9, 1);
  EpisodeConfig cfg;
  cfg.seed = 9;
  PackEnv env(cfg);
  env.reset();
  NeuralPolicy policy(PolicyParams::initialize(tiny_config(), 1));
  Rng rng(0);
  while (!env.done()) CHECK_NOTHROW(env.step(policy.choose(env.state(), env.heightmap(), rng)));
  CHECK(policy.name() == "gopt");
}

TEST_CASE("ablation names round-trip") {
  for (Ablation a : {Ablation::Full, Ablation::NoPt, Ablation::MlpMixer}) CHECK(ablation_from_string(to_string(a)) == a);
  CHECK_THROWS_AS(ablation_from_string("bogus"), std::invalid_argument);
}
