#include "evod/agent.hpp"

#include "evod/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace evod::agent {

using nlohmann::json;
using namespace evod::grad;

namespace {

constexpr std::uint32_t kInitStream = 0x67656e;  // "gen"

}  // namespace

// ---------------------------------------------------------------- configs

void GeneratorConfig::validate() const {
  if (hidden == 0 || head_hidden == 0) throw ValidationError("generator widths must be positive");
  if (critic_outputs == 0) throw ValidationError("critic_outputs must be at least 1");
}

json GeneratorConfig::to_json() const {
  return {{"hidden", hidden},
          {"head_hidden", head_hidden},
          {"attention", attention},
          {"residual", residual},
          {"critic_outputs", critic_outputs}};
}

GeneratorConfig GeneratorConfig::from_json(const json& j) {
  GeneratorConfig c;
  c.hidden = j.at("hidden").get<std::size_t>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.attention = j.at("attention").get<bool>();
  c.residual = j.at("residual").get<bool>();
  c.critic_outputs = j.at("critic_outputs").get<std::size_t>();
  return c;
}

void PpoConfig::validate() const {
  if (!(clip > 0.0)) throw ValidationError("ppo clip must be > 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("ppo gamma must lie in (0, 1]");
  if (epochs < 1) throw ValidationError("ppo epochs must be >= 1");
  if (batch < 1) throw ValidationError("ppo batch must be >= 1");
  if (!(actor_lr > 0.0 && critic_lr > 0.0 && encoder_lr > 0.0)) throw ValidationError("learning rates must be > 0");
  if (!(max_grad_norm > 0.0)) throw ValidationError("max_grad_norm must be > 0");
}

json PpoConfig::to_json() const {
  return {{"clip", clip},           {"value_coef", value_coef}, {"entropy_coef", entropy_coef},
          {"gamma", gamma},         {"epochs", epochs},         {"batch", batch},
          {"actor_lr", actor_lr},   {"critic_lr", critic_lr},   {"encoder_lr", encoder_lr},
          {"max_grad_norm", max_grad_norm}};
}

// ---------------------------------------------------------------- Generator

Generator::Generator(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  RngStream rng(seed, kInitStream);
  clstm_ = nn::Clstm("gen.clstm", cfg_.hidden, rng);
  attention_ = nn::CausalAttention("gen.attn", cfg_.hidden, rng, cfg_.residual);
  actor_ = nn::Mlp("gen.actor", cfg_.hidden, cfg_.head_hidden, 2, rng);
  critic_ = nn::Mlp("gen.critic", cfg_.hidden, cfg_.head_hidden, cfg_.critic_outputs, rng);
  actor_.last().zero_init();
}

Var Generator::encode(Tape& t, const EventSequence& seq) {
  if (seq.empty()) return {};
  const auto run = clstm_.run(t, seq);
  Var x = concat_rows(run.hidden);
  if (cfg_.attention) x = attention_.forward(t, x);
  return x;
}

Generator::Heads Generator::heads(Tape& t, Var phi) {
  Var logits = actor_.forward(t, phi);
  Heads h;
  h.log_probs = log_softmax_rows(logits);
  h.probs = softmax_rows(logits);
  h.values = slice_cols(critic_.forward(t, phi), 0, 1);
  return h;
}

std::vector<double> Generator::outlier_scores(const EventSequence& seq) {
  if (seq.empty()) return {};
  Tape t(false);
  const Mat p = heads(t, encode(t, seq)).probs.value();
  std::vector<double> out(p.rows());
  for (std::size_t n = 0; n < p.rows(); ++n) out[n] = p(n, 1);
  return out;
}

void Generator::freeze_clstm() { clstm_.frozen = true; }

ParamList Generator::encoder_params() {
  ParamList out;
  if (!clstm_.frozen) clstm_.collect(out);
  if (cfg_.attention) attention_.collect(out);
  return out;
}

ParamList Generator::actor_params() {
  ParamList out;
  actor_.collect(out);
  return out;
}

ParamList Generator::critic_params() {
  ParamList out;
  critic_.collect(out);
  return out;
}

ParamList Generator::trainable_params() {
  ParamList out = encoder_params();
  for (auto* p : actor_params()) out.push_back(p);
  for (auto* p : critic_params()) out.push_back(p);
  return out;
}

ParamList Generator::checkpoint_params() {
  ParamList out;
  clstm_.collect(out);
  if (cfg_.attention) attention_.collect(out);
  actor_.collect(out);
  critic_.collect(out);
  return out;
}

void Generator::save(const std::filesystem::path& manifest, const json& extra) {
  json meta = extra;
  meta["kind"] = "generator";
  meta["config"] = cfg_.to_json();
  meta["clstm_frozen"] = clstm_.frozen;
  save_params(checkpoint_params(), manifest, meta);
}

json Generator::load(const std::filesystem::path& manifest) {
  const json extra = read_checkpoint_extra(manifest);
  if (extra.value("kind", "") != "generator") {
    throw CheckpointError(manifest.string() + ": not a generator checkpoint");
  }
  if (GeneratorConfig::from_json(extra.at("config")) != cfg_) {
    throw CheckpointError(manifest.string() + ": generator architecture differs from the checkpoint");
  }
  load_params(checkpoint_params(), manifest);
  clstm_.frozen = extra.value("clstm_frozen", false);
  return extra;
}

std::unique_ptr<Generator> Generator::from_checkpoint(const std::filesystem::path& manifest) {
  const json extra = read_checkpoint_extra(manifest);
  if (extra.value("kind", "") != "generator") {
    throw CheckpointError(manifest.string() + ": not a generator checkpoint");
  }
  auto gen = std::make_unique<Generator>(GeneratorConfig::from_json(extra.at("config")), 0);
  gen->load(manifest);
  return gen;
}

// ---------------------------------------------------------------- rollout

void Trajectory::set_terminal_reward(double r) {
  if (!rewards.empty()) rewards.back() = r;
  reward_set = true;
}

EventSequence remove_events(const EventSequence& seq, std::span<const int> actions) {
  if (actions.size() != seq.size()) {
    throw std::invalid_argument("remove_events: " + std::to_string(actions.size()) + " actions for " +
                                std::to_string(seq.size()) + " events");
  }
  std::vector<double> kept;
  kept.reserve(seq.size());
  for (std::size_t n = 0; n < seq.size(); ++n)
    if (actions[n] == 0) kept.push_back(seq[n]);
  return EventSequence(std::move(kept), seq.horizon());
}

Rollout rollout(Generator& gen, const EventSequence& seq, RngStream& rng, RolloutMode mode) {
  Rollout out{Trajectory{seq, {}, {}, {}, {}, {}, false}, EventSequence({}, seq.horizon())};
  if (seq.empty()) return out;
  Tape t(false);
  const auto h = gen.heads(t, gen.encode(t, seq));
  const Mat& lp = h.log_probs.value();
  const Mat& p = h.probs.value();
  const Mat& v = h.values.value();
  Trajectory& tr = out.traj;
  const std::size_t n = seq.size();
  tr.actions.resize(n);
  tr.log_probs.resize(n);
  tr.values.resize(n);
  tr.rewards.assign(n, 0.0);
  tr.scores.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p_remove = p(i, 1);
    const int a = mode == RolloutMode::sample ? (rng.uniform() < p_remove ? 1 : 0) : (p_remove > 0.5 ? 1 : 0);
    tr.actions[i] = a;
    tr.log_probs[i] = lp(i, static_cast<std::size_t>(a));
    tr.values[i] = v(i, 0);
    tr.scores[i] = p_remove;
  }
  out.corrected = remove_events(seq, tr.actions);
  return out;
}

std::vector<double> discounted_returns(std::span<const double> rewards, double gamma) {
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    g[i] = acc;
  }
  return g;
}

// ---------------------------------------------------------------- PPO

PpoTerms ppo_objective(Var log_probs, Var values, std::span<const int> actions, std::span<const double> old_log_probs,
                       std::span<const double> returns, std::span<const double> advantages, const PpoConfig& cfg) {
  Tape& t = log_probs.tape();
  const std::size_t n = actions.size();
  if (log_probs.rows() != n || log_probs.cols() != 2 || values.rows() != n || old_log_probs.size() != n ||
      returns.size() != n || advantages.size() != n) {
    throw ShapeError("ppo_objective: inconsistent trajectory lengths");
  }
  Mat onehot(n, 2);
  for (std::size_t i = 0; i < n; ++i) onehot(i, static_cast<std::size_t>(actions[i])) = 1.0;

  Var logp_a = row_sum(mul(log_probs, t.constant(std::move(onehot))));
  Var ratio = exp(sub(logp_a, t.constant(Mat::column(old_log_probs))));
  Var adv = t.constant(Mat::column(advantages));
  Var surrogate = minimum(mul(ratio, adv), mul(clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), adv));
  Var value_err = square(sub(values, t.constant(Mat::column(returns))));
  Var entropy = neg(row_sum(mul(exp(log_probs), log_probs)));

  PpoTerms out;
  out.objective = sum(add(sub(surrogate, scale(value_err, cfg.value_coef)), scale(entropy, cfg.entropy_coef)));
  for (double r : ratio.value().values()) out.max_ratio_dev = std::max(out.max_ratio_dev, std::abs(r - 1.0));
  for (double x : surrogate.value().values()) out.policy_sum += x;
  for (double x : value_err.value().values()) out.value_sum += x;
  for (double x : entropy.value().values()) out.entropy_sum += x;
  return out;
}

PpoLearner::PpoLearner(Generator& gen, const PpoConfig& cfg)
    : gen_(gen),
      cfg_(cfg),
      actor_opt_(gen.actor_params(), {cfg.actor_lr}),
      critic_opt_(gen.critic_params(), {cfg.critic_lr}),
      encoder_opt_(gen.encoder_params(), {cfg.encoder_lr}) {
  cfg_.validate();
}

PpoStats PpoLearner::update(std::span<const Trajectory> batch) {
  if (batch.empty()) throw std::invalid_argument("ppo update: empty batch");
  std::vector<std::vector<double>> returns, advantages;
  std::size_t events = 0;
  for (const Trajectory& tr : batch) {
    if (!tr.reward_set) throw std::invalid_argument("ppo update: trajectory without terminal reward");
    returns.push_back(discounted_returns(tr.rewards, cfg_.gamma));
    std::vector<double> adv(tr.size());
    for (std::size_t i = 0; i < tr.size(); ++i) adv[i] = returns.back()[i] - tr.values[i];
    advantages.push_back(std::move(adv));
    events += tr.size();
  }
  PpoStats stats;
  stats.events = events;
  if (events == 0) return stats;

  const ParamList params = gen_.trainable_params();
  const double norm = 1.0 / static_cast<double>(events);
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    zero_grads(params);
    double pol = 0.0, val = 0.0, ent = 0.0, dev = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Trajectory& tr = batch[b];
      if (tr.size() == 0) continue;
      Tape t;
      const auto h = gen_.heads(t, gen_.encode(t, tr.seq));
      const PpoTerms terms =
          ppo_objective(h.log_probs, h.values, tr.actions, tr.log_probs, returns[b], advantages[b], cfg_);
      t.backward(scale(terms.objective, -norm));
      pol += terms.policy_sum;
      val += terms.value_sum;
      ent += terms.entropy_sum;
      dev = std::max(dev, terms.max_ratio_dev);
    }
    if (epoch == 0) stats.first_epoch_max_ratio_dev = dev;
    stats.grad_norm = clip_grad_norm(params, cfg_.max_grad_norm);
    actor_opt_.step();
    critic_opt_.step();
    encoder_opt_.step();
    stats.policy = pol * norm;
    stats.value = val * norm;
    stats.entropy = ent * norm;
    stats.loss = -(pol - cfg_.value_coef * val + cfg_.entropy_coef * ent) * norm;
  }
  return stats;
}

}  // namespace evod::agent
