#pragma once

// The discriminator: its own cLSTM (no attention, no layer norm, no weights
// shared with the generator) and a spectral-normalized two-layer head that
// outputs the probability a sequence is real.

#include "evod/gradcore.hpp"
#include "evod/neural.hpp"
#include "evod/optim.hpp"
#include "evod/seqdata.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <span>

namespace evod::critic {

using grad::ParamList;
using grad::Tape;
using grad::Var;

struct DiscriminatorConfig {
  std::size_t hidden = 64;
  std::size_t head_hidden = 64;
  /// Read out at the horizon T instead of at the last event.
  bool horizon_readout = false;
  double lr = 1e-3;
  double max_grad_norm = 5.0;
  /// Power iteration after every update runs until u moves by less than
  /// power_tol, capped at max_power_iterations steps.
  double power_tol = 1e-10;
  int max_power_iterations = 2000;

  void validate() const;
  nlohmann::json to_json() const;
  static DiscriminatorConfig from_json(const nlohmann::json& j);
  bool operator==(const DiscriminatorConfig&) const = default;
};

class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;

  const DiscriminatorConfig& config() const { return cfg_; }

  /// Pre-sigmoid output (1 x 1). Empty sequences read the initial state.
  Var logit(Tape& t, const EventSequence& seq);
  /// Probability that `seq` is real; u, v stay frozen.
  double score(const EventSequence& seq);

  /// -mean log D(real) - mean log(1 - D(fake)). Either list may be empty,
  /// in which case its term is dropped.
  Var bce_loss(Tape& t, std::span<const EventSequence> reals, std::span<const EventSequence> fakes);
  /// One clipped Adam step, then power iteration on both head layers.
  double bce_update(std::span<const EventSequence> reals, std::span<const EventSequence> fakes);

  nn::Clstm& clstm() { return clstm_; }
  nn::SpectralLinear& head1() { return head1_; }
  nn::SpectralLinear& head2() { return head2_; }

  /// Freezing must happen before the first update.
  void freeze_clstm();

  ParamList trainable_params();
  ParamList checkpoint_params();

  void save(const std::filesystem::path& manifest, const nlohmann::json& extra = nlohmann::json::object());
  nlohmann::json load(const std::filesystem::path& manifest);
  static std::unique_ptr<Discriminator> from_checkpoint(const std::filesystem::path& manifest);

 private:
  void rebuild_optimizer();

  DiscriminatorConfig cfg_;
  nn::Clstm clstm_;
  nn::SpectralLinear head1_;
  nn::SpectralLinear head2_;
  grad::Adam opt_;
};

}  // namespace evod::critic
