#include <doctest.h>

#include "evod/agent.hpp"
#include "evod/checkpoint.hpp"
#include "evod/tppsim.hpp"
#include "gradcheck.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace evod;
using namespace evod::agent;
using namespace evod::grad;

namespace {

GeneratorConfig small_config(bool attention = true) {
  GeneratorConfig c;
  c.hidden = 8;
  c.head_hidden = 8;
  c.attention = attention;
  return c;
}

EventSequence random_sequence(RngStream& rng, double rate = 1.5, double horizon = 10.0) {
  return EventSequence(tpp::draw_homogeneous(rate, horizon, rng), horizon);
}

// Gives the final actor layer non-zero weights so the policy is not uniform.
void perturb_actor(Generator& gen, RngStream& rng, double scale = 0.5) {
  ParamList actor = gen.actor_params();
  for (Param* p : actor)
    for (double& v : p->value.values()) v += rng.uniform(-scale, scale);
}

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "evod_test_agent";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("discounted returns of a terminal reward") {
  const std::vector<double> r{0.0, 0.0, 1.0};
  const auto g = discounted_returns(r, 0.99);
  CHECK(g[0] == doctest::Approx(0.9801).epsilon(1e-14));
  CHECK(g[1] == doctest::Approx(0.99).epsilon(1e-14));
  CHECK(g[2] == 1.0);
}

TEST_CASE("removal semantics") {
  const EventSequence s({1.0, 2.0, 3.0}, 10.0);
  CHECK(remove_events(s, std::vector<int>{0, 1, 0}).times() == std::vector<double>{1.0, 3.0});
  CHECK(remove_events(s, std::vector<int>{1, 1, 1}).empty());
  CHECK(remove_events(s, std::vector<int>{0, 0, 0}) == s);
  CHECK_THROWS_AS(remove_events(s, std::vector<int>{0, 1}), std::invalid_argument);
}

TEST_CASE("untrained generator is uniform") {
  Generator gen(GeneratorConfig{}, 1);
  RngStream rng(2);
  const EventSequence s = random_sequence(rng);
  for (double p : gen.outlier_scores(s)) CHECK(p == 0.5);

  Tape t(false);
  const auto h = gen.heads(t, gen.encode(t, s));
  for (std::size_t n = 0; n < s.size(); ++n) CHECK(h.probs.value()(n, 0) + h.probs.value()(n, 1) == 1.0);

  // A uniform policy has maximal entropy ln 2.
  std::vector<int> actions(s.size(), 0);
  std::vector<double> zeros(s.size(), 0.0), old(s.size(), std::log(0.5));
  const PpoTerms terms = ppo_objective(h.log_probs, h.values, actions, old, zeros, zeros, PpoConfig{});
  CHECK(terms.entropy_sum / static_cast<double>(s.size()) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("encode edge cases and determinism") {
  Generator gen(small_config(), 3);
  Tape t(false);
  CHECK_FALSE(gen.encode(t, EventSequence({}, 10.0)).valid());
  const Var one = gen.encode(t, EventSequence({4.0}, 10.0));
  CHECK(one.rows() == 1);
  CHECK(one.value().all_finite());
  const EventSequence s({0.5, 1.5, 1.6, 7.0}, 10.0);
  const Mat first = gen.encode(t, s).value();
  const Mat second = gen.encode(t, s).value();
  CHECK(first == second);
  CHECK(gen.outlier_scores(EventSequence({}, 10.0)).empty());
}

TEST_CASE("property: scores are online and corrected sequences are subsequences") {
  RngStream rng(4);
  for (bool attention : {true, false}) {
    Generator gen(small_config(attention), 5);
    perturb_actor(gen, rng);
    for (int trial = 0; trial < 25; ++trial) {
      const EventSequence s = random_sequence(rng);
      const auto full = gen.outlier_scores(s);
      for (std::size_t n = 0; n < s.size(); ++n) {
        const auto pre = gen.outlier_scores(s.prefix(n + 1));
        CHECK(pre[n] == full[n]);
      }
      const auto ro = rollout(gen, s, rng, RolloutMode::sample);
      // Order-preserving subset: every kept time appears in the input, strictly increasing.
      const std::set<double> source(s.times().begin(), s.times().end());
      for (std::size_t k = 0; k < ro.corrected.size(); ++k) {
        CHECK(source.count(ro.corrected[k]) == 1);
        if (k > 0) CHECK(ro.corrected[k] > ro.corrected[k - 1]);
      }
      std::size_t kept = 0;
      for (int a : ro.traj.actions) kept += a == 0;
      CHECK(kept == ro.corrected.size());
    }
  }
}

TEST_CASE("rollout modes") {
  Generator gen(small_config(), 6);
  RngStream rng(7);
  const EventSequence s = random_sequence(rng);
  // p = 0.5 exactly: greedy keeps every event.
  const auto greedy = rollout(gen, s, rng, RolloutMode::greedy);
  CHECK(greedy.corrected == s);
  RngStream a(8), b(8);
  const auto r1 = rollout(gen, s, a, RolloutMode::sample);
  const auto r2 = rollout(gen, s, b, RolloutMode::sample);
  CHECK(r1.traj.actions == r2.traj.actions);
  for (double r : r1.traj.rewards) CHECK(r == 0.0);
  CHECK_FALSE(r1.traj.reward_set);
}

TEST_CASE("first PPO epoch has ratio exactly one") {
  RngStream rng(9);
  Generator gen(small_config(), 10);
  perturb_actor(gen, rng);
  PpoLearner learner(gen, PpoConfig{});
  std::vector<Trajectory> batch;
  for (int i = 0; i < 10; ++i) {
    auto ro = rollout(gen, random_sequence(rng), rng, RolloutMode::sample);
    ro.traj.set_terminal_reward(rng.uniform());
    batch.push_back(std::move(ro.traj));
  }
  const PpoStats stats = learner.update(batch);
  CHECK(stats.first_epoch_max_ratio_dev == 0.0);
  CHECK(stats.events > 0);
}

TEST_CASE("ppo update preconditions") {
  Generator gen(small_config(), 11);
  PpoLearner learner(gen, PpoConfig{});
  CHECK_THROWS_AS(learner.update({}), std::invalid_argument);
  RngStream rng(12);
  auto ro = rollout(gen, EventSequence({1.0, 2.0}, 10.0), rng, RolloutMode::sample);
  std::vector<Trajectory> batch{ro.traj};
  CHECK_THROWS_AS(learner.update(batch), std::invalid_argument);
}

TEST_CASE("first-epoch PPO gradient equals the exact policy gradient") {
  // Two-armed bandit with softmax logits theta. Feeding both arms once with
  // advantage pi_a * r_a makes the surrogate gradient at rho = 1 equal to
  // grad E[r] = sum_a pi_a r_a (e_a - pi).
  Param theta("theta", Mat(1, 2, {0.3, -0.4}));
  const double r0 = 1.0, r1 = 0.25;
  const double z0 = std::exp(0.3), z1 = std::exp(-0.4);
  const double p0 = z0 / (z0 + z1), p1 = z1 / (z0 + z1);
  const double exact0 = p0 * r0 * (1 - p0) + p1 * r1 * (0 - p0);

  PpoConfig cfg;
  cfg.value_coef = 0.0;
  cfg.entropy_coef = 0.0;
  theta.zero_grad();
  Tape t;
  Var lp = log_softmax_rows(concat_rows(std::vector<Var>{t.param(theta), t.param(theta)}));
  const std::vector<int> actions{0, 1};
  const std::vector<double> old{std::log(p0), std::log(p1)}, ret{0.0, 0.0}, adv{p0 * r0, p1 * r1};
  const PpoTerms terms = ppo_objective(lp, t.constant(Mat(2, 1)), actions, old, ret, adv, cfg);
  t.backward(terms.objective);
  CHECK(theta.grad[0] == doctest::Approx(exact0).epsilon(1e-12));
  CHECK(theta.grad[1] == doctest::Approx(-exact0).epsilon(1e-12));
}

TEST_CASE("PPO on a two-armed bandit prefers the rewarded arm") {
  Param theta("theta", Mat(1, 2));
  Adam opt({&theta}, {0.01});
  PpoConfig cfg;
  RngStream rng(13);
  for (int update = 0; update < 200; ++update) {
    // Sample 10 pulls from the current policy.
    const double p0 = 1.0 / (1.0 + std::exp(theta.value[1] - theta.value[0]));
    std::vector<int> actions(10);
    std::vector<double> old(10), ret(10), adv(10);
    for (int i = 0; i < 10; ++i) {
      actions[i] = rng.uniform() < p0 ? 0 : 1;
      old[i] = std::log(actions[i] == 0 ? p0 : 1.0 - p0);
      ret[i] = actions[i] == 0 ? 1.0 : 0.0;
      adv[i] = ret[i] - 0.5;
    }
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      opt.zero_grad();
      Tape t;
      std::vector<Var> rows(10, t.param(theta));
      Var lp = log_softmax_rows(concat_rows(rows));
      const PpoTerms terms = ppo_objective(lp, t.constant(Mat(10, 1, 0.5)), actions, old, ret, adv, cfg);
      t.backward(scale(terms.objective, -0.1));
      opt.step();
    }
  }
  const double p0 = 1.0 / (1.0 + std::exp(theta.value[1] - theta.value[0]));
  CHECK(p0 > 0.9);
}

TEST_CASE("PPO objective through the generator passes finite differences") {
  RngStream rng(14);
  for (bool attention : {true, false}) {
    Generator gen(small_config(attention), 15);
    perturb_actor(gen, rng);
    const EventSequence s = random_sequence(rng, 0.6);
    REQUIRE(s.size() > 1);
    auto ro = rollout(gen, s, rng, RolloutMode::sample);
    ro.traj.set_terminal_reward(0.7);
    const auto ret = discounted_returns(ro.traj.rewards, 0.99);
    std::vector<double> adv(s.size()), old = ro.traj.log_probs;
    for (std::size_t i = 0; i < s.size(); ++i) {
      adv[i] = ret[i] - ro.traj.values[i] + (i % 2 ? 0.3 : -0.3);
      // Shift the old log-probabilities so ratios land both inside and
      // outside the clip window, away from the kinks.
      old[i] += i % 3 == 0 ? 0.05 : (i % 3 == 1 ? -0.5 : 0.5);
    }
    const PpoConfig cfg;
    auto loss = [&](Tape& t) {
      const auto h = gen.heads(t, gen.encode(t, s));
      return neg(ppo_objective(h.log_probs, h.values, ro.traj.actions, old, ret, adv, cfg).objective);
    };
    const auto res = testing::check_gradients(gen.trainable_params(), loss);
    INFO(res.worst);
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("generator checkpoints") {
  RngStream rng(16);
  Generator gen(small_config(), 17);
  perturb_actor(gen, rng);
  const EventSequence probe = random_sequence(rng);
  const auto manifest = temp_dir() / "gen.json";
  gen.save(manifest, {{"episode", 3}});

  SUBCASE("round trip gives identical scores") {
    auto back = Generator::from_checkpoint(manifest);
    CHECK(back->outlier_scores(probe) == gen.outlier_scores(probe));
    Generator other(small_config(), 99);
    CHECK(other.load(manifest).at("episode") == 3);
    CHECK(other.outlier_scores(probe) == gen.outlier_scores(probe));
  }
  SUBCASE("manifest lists each parameter array once") {
    std::ifstream in(manifest);
    nlohmann::json m;
    in >> m;
    std::set<std::string> names;
    for (const auto& a : m.at("arrays")) CHECK(names.insert(a.at("name").get<std::string>()).second);
    CHECK(names.size() == gen.checkpoint_params().size());
  }
  SUBCASE("truncated blob") {
    const auto blob = temp_dir() / "gen.bin";
    std::filesystem::resize_file(blob, std::filesystem::file_size(blob) / 2);
    CHECK_THROWS_AS(Generator::from_checkpoint(manifest), CheckpointError);
  }
  SUBCASE("version mismatch") {
    std::ifstream in(manifest);
    nlohmann::json m;
    in >> m;
    in.close();
    m["version"] = kCheckpointVersion + 1;
    std::ofstream(manifest) << m.dump();
    CHECK_THROWS_AS(Generator::from_checkpoint(manifest), CheckpointError);
  }
  SUBCASE("architecture mismatch") {
    Generator plain(small_config(false), 1);
    CHECK_THROWS_AS(plain.load(manifest), CheckpointError);
  }
}

TEST_CASE("frozen cLSTM receives no updates") {
  RngStream rng(18);
  Generator gen(small_config(), 19);
  gen.freeze_clstm();
  ParamList cell;
  gen.clstm().collect(cell);
  std::vector<Mat> before;
  for (auto* p : cell) before.push_back(p->value);
  PpoConfig cfg;
  cfg.epochs = 2;
  PpoLearner learner(gen, cfg);
  std::vector<Trajectory> batch;
  for (int i = 0; i < 3; ++i) {
    auto ro = rollout(gen, random_sequence(rng), rng, RolloutMode::sample);
    ro.traj.set_terminal_reward(1.0);
    batch.push_back(std::move(ro.traj));
  }
  learner.update(batch);
  for (std::size_t i = 0; i < cell.size(); ++i) CHECK(cell[i]->value == before[i]);
}
