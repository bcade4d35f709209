#pragma once

// The generator: an encoder (cLSTM, then causal attention and layer norm)
// feeding an actor that decides keep (0) or remove (1) for every event and a
// critic that estimates the return. Trained with PPO-clip.

#include "evod/gradcore.hpp"
#include "evod/neural.hpp"
#include "evod/optim.hpp"
#include "evod/rng.hpp"
#include "evod/seqdata.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <span>
#include <vector>

namespace evod::agent {

using grad::Mat;
using grad::ParamList;
using grad::Tape;
using grad::Var;

struct GeneratorConfig {
  std::size_t hidden = 64;
  std::size_t head_hidden = 64;
  bool attention = true;
  bool residual = true;
  /// Width of the critic's output layer. Only column 0 is used as the value.
  std::size_t critic_outputs = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
  bool operator==(const GeneratorConfig&) const = default;
};

struct PpoConfig {
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double gamma = 0.99;
  int epochs = 10;
  std::size_t batch = 10;
  double actor_lr = 1e-5;
  double critic_lr = 1e-5;
  double encoder_lr = 1e-3;
  double max_grad_norm = 5.0;

  void validate() const;
  nlohmann::json to_json() const;
};

class Generator {
 public:
  Generator(const GeneratorConfig& cfg, std::uint64_t seed);
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  const GeneratorConfig& config() const { return cfg_; }

  /// N x H encodings; row n depends only on t_1..t_n. Invalid Var if empty.
  Var encode(Tape& t, const EventSequence& seq);

  struct Heads {
    Var log_probs;  // N x 2
    Var probs;      // N x 2
    Var values;     // N x 1
  };
  Heads heads(Tape& t, Var phi);

  /// pi(remove | phi_n) for every event, evaluated without gradients.
  std::vector<double> outlier_scores(const EventSequence& seq);

  nn::Clstm& clstm() { return clstm_; }
  /// Stops gradient flow into the cLSTM and drops it from encoder_params().
  void freeze_clstm();
  bool clstm_frozen() const { return clstm_.frozen; }

  ParamList encoder_params();
  ParamList actor_params();
  ParamList critic_params();
  ParamList trainable_params();
  /// Every array persisted in a checkpoint, frozen ones included.
  ParamList checkpoint_params();

  void save(const std::filesystem::path& manifest, const nlohmann::json& extra = nlohmann::json::object());
  /// Loads weights; the checkpoint must come from the same architecture.
  nlohmann::json load(const std::filesystem::path& manifest);
  /// Builds a generator with the architecture recorded in the manifest.
  static std::unique_ptr<Generator> from_checkpoint(const std::filesystem::path& manifest);

 private:
  GeneratorConfig cfg_;
  nn::Clstm clstm_;
  nn::CausalAttention attention_;
  nn::Mlp actor_;
  nn::Mlp critic_;
};

struct Trajectory {
  EventSequence seq;
  std::vector<int> actions;
  std::vector<double> log_probs;  // log pi(a_n | phi_n) at rollout time
  std::vector<double> values;     // critic estimate at rollout time
  std::vector<double> rewards;    // zero except possibly the last
  std::vector<double> scores;     // pi(remove | phi_n)
  bool reward_set = false;

  std::size_t size() const { return actions.size(); }
  void set_terminal_reward(double r);
};

enum class RolloutMode { sample, greedy };

struct Rollout {
  Trajectory traj;
  EventSequence corrected;
};

Rollout rollout(Generator& gen, const EventSequence& seq, RngStream& rng, RolloutMode mode);

/// Keeps the events whose action is 0, in their original order.
EventSequence remove_events(const EventSequence& seq, std::span<const int> actions);

/// G_n = r_n + gamma * G_{n+1}.
std::vector<double> discounted_returns(std::span<const double> rewards, double gamma);

struct PpoTerms {
  Var objective;  // summed over rows; maximise
  double max_ratio_dev = 0.0;  // max |rho_n - 1|
  double policy_sum = 0.0;
  double value_sum = 0.0;
  double entropy_sum = 0.0;
};

/// Clipped surrogate for one trajectory given fresh log-probabilities
/// (N x 2) and values (N x 1):
///   sum_n min(rho A, clip(rho) A) - c1 (G - v)^2 + c2 H(pi).
PpoTerms ppo_objective(Var log_probs, Var values, std::span<const int> actions, std::span<const double> old_log_probs,
                       std::span<const double> returns, std::span<const double> advantages, const PpoConfig& cfg);

struct PpoStats {
  double policy = 0.0;   // mean surrogate, last epoch
  double value = 0.0;    // mean squared value error, last epoch
  double entropy = 0.0;  // mean entropy, last epoch
  double loss = 0.0;     // negated objective per event, last epoch
  double first_epoch_max_ratio_dev = 0.0;
  double grad_norm = 0.0;  // pre-clip, last epoch
  std::size_t events = 0;
};

/// Adam groups for actor, critic and encoder with their own learning rates.
class PpoLearner {
 public:
  PpoLearner(Generator& gen, const PpoConfig& cfg);
  PpoStats update(std::span<const Trajectory> batch);
  const PpoConfig& config() const { return cfg_; }

 private:
  Generator& gen_;
  PpoConfig cfg_;
  grad::Adam actor_opt_;
  grad::Adam critic_opt_;
  grad::Adam encoder_opt_;
};

}  // namespace evod::agent
