#pragma once

// Adversarial training loop. Episodes alternate between blocks of F/2
// discriminator episodes and F/2 generator episodes; the generator always
// rolls out, but only learns during its own block.

#include "evod/agent.hpp"
#include "evod/baselines.hpp"
#include "evod/critic_d.hpp"
#include "evod/seqdata.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace evod::ganrl {

struct TrainConfig {
  std::size_t episodes = 10000;
  std::size_t update_frequency = 1000;
  std::size_t disc_batch = 50;
  std::uint64_t seed = 0;
  std::string dataset;  // informational; train() takes the data directly

  agent::GeneratorConfig generator;
  agent::PpoConfig ppo;
  critic::DiscriminatorConfig discriminator;
  /// Only used by the frozen_encoder ablation.
  baselines::PpodConfig pretrain;

  bool no_attention = false;
  bool wd_reward = false;
  bool frozen_encoder = false;

  std::size_t auroc_window = 100;
  /// Score a fixed slice of the training data instead of each episode's own
  /// sequence; refreshed every auroc_window episodes.
  bool eval_slice_auroc = false;
  std::size_t eval_slice_size = 100;
  std::size_t checkpoint_every = 1000;

  /// Throws ValidationError on broken invariants (F even, F <= K, ...).
  void validate() const;
  nlohmann::json to_json() const;
};

/// Sets one option by its "section.key" name. Throws ValidationError for
/// unknown keys or unparsable values.
void set_option(TrainConfig& cfg, const std::string& key, const std::string& value);
/// Every recognised "section.key" name.
std::vector<std::string> option_names();

/// Reads an INI file ([train], [ppo], [generator], [discriminator],
/// [pretrain], [ablation], [logging]) over the defaults.
TrainConfig load_train_config(const std::filesystem::path& path);
void apply_ini(TrainConfig& cfg, const std::filesystem::path& path);

enum class Phase { disc, gen };
const char* phase_name(Phase p);

/// k mod F < F/2 selects the discriminator.
Phase phase_of(std::size_t episode, std::size_t update_frequency);

struct EpisodeMetrics {
  std::size_t episode = 0;
  Phase phase = Phase::disc;
  std::optional<double> auroc;        // running mean over the window
  std::optional<double> d_real;       // D on this episode's real sample
  std::optional<double> d_fake;       // D on this episode's generated sequence
  std::optional<double> reward_mean;  // running mean of generator rewards
  std::optional<double> gen_loss;     // set on episodes that ran a PPO update
  std::optional<double> disc_loss;    // set on episodes that ran a D update
};

inline constexpr const char* kMetricsHeader = "episode,phase,auroc,d_real,d_fake,reward_mean,gen_loss,disc_loss";
std::string metrics_row(const EpisodeMetrics& m);

struct TrainResult {
  std::unique_ptr<agent::Generator> generator;
  std::unique_ptr<critic::Discriminator> discriminator;
  std::vector<EpisodeMetrics> metrics;
};

struct TrainHooks {
  /// Writes metrics.csv, periodic checkpoints and final weights here.
  std::optional<std::filesystem::path> out_dir;
  /// Called after every episode.
  std::function<void(const EpisodeMetrics&, agent::Generator&, critic::Discriminator&)> on_episode;
};

TrainResult train(const TrainConfig& cfg, const Dataset& data, const TrainHooks& hooks = {});

/// Mean of the running training AUROC over the last `fraction` of episodes.
std::optional<double> tail_mean(const std::vector<EpisodeMetrics>& metrics,
                                std::optional<double> EpisodeMetrics::*field, double fraction = 0.1);

/// Reads a metrics CSV written by train().
std::vector<EpisodeMetrics> read_metrics_csv(const std::filesystem::path& path);

}  // namespace evod::ganrl
