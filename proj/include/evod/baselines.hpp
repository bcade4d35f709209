#pragma once

// Comparison detectors: random scores (RND), preceding-gap length (LEN) and
// an intensity model trained by maximum likelihood (PPOD).

#include "evod/gradcore.hpp"
#include "evod/neural.hpp"
#include "evod/rng.hpp"
#include "evod/seqdata.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <vector>

namespace evod::baselines {

using grad::Tape;
using grad::Var;

/// I.i.d. uniform(0, 1) scores.
std::vector<double> rnd_scores(const EventSequence& seq, RngStream& rng);

/// score_n = -(t_n - t_{n-1}), t_0 = 0: shorter preceding gaps rank higher.
std::vector<double> len_scores(const EventSequence& seq);

struct PpodConfig {
  std::size_t hidden = 64;
  int epochs = 10;
  double lr = 1e-3;
  std::size_t batch = 10;       // sequences per Adam step
  std::size_t mc_samples = 20;  // per inter-event interval
  double max_grad_norm = 5.0;

  void validate() const;
  nlohmann::json to_json() const;
  static PpodConfig from_json(const nlohmann::json& j);
};

/// cLSTM with an intensity head lambda(t) = softplus(h(t) w + b).
class PpodModel {
 public:
  PpodModel(const PpodConfig& cfg, std::uint64_t seed);
  PpodModel(const PpodModel&) = delete;
  PpodModel& operator=(const PpodModel&) = delete;

  const PpodConfig& config() const { return cfg_; }

  /// -sum_n log lambda(t_n) + Monte Carlo compensator over (0, T].
  Var nll(Tape& t, const EventSequence& seq, RngStream& mc_rng);

  /// lambda just before each event, given the events strictly before it.
  std::vector<double> event_intensities(const EventSequence& seq);
  /// lambda on a grid of times (sorted, within (0, T]) for one sequence.
  std::vector<double> intensity_path(const EventSequence& seq, std::span<const double> times);

  /// score_n = -log lambda(t_n | t_1..t_{n-1}).
  std::vector<double> scores(const EventSequence& seq);

  nn::Clstm& clstm() { return clstm_; }
  nn::Linear& head() { return head_; }
  grad::ParamList params();

  void save(const std::filesystem::path& manifest, const nlohmann::json& extra = nlohmann::json::object());
  static std::unique_ptr<PpodModel> from_checkpoint(const std::filesystem::path& manifest);

 private:
  Var intensity(Tape& t, Var h);

  PpodConfig cfg_;
  nn::Clstm clstm_;
  nn::Linear head_;
};

struct PpodTrainLog {
  /// Mean per-sequence NLL over the training set after each epoch, with a
  /// fixed Monte Carlo stream so epochs are comparable.
  std::vector<double> epoch_nll;
};

/// Shuffles every epoch with `rng`; one Adam step per batch of sequences.
PpodTrainLog ppod_train(PpodModel& model, const Dataset& data, RngStream& rng, bool track_nll = false);

}  // namespace evod::baselines
