#include "evod/ganrl.hpp"

#include "evod/metrics.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>

namespace evod::ganrl {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (episodes == 0) throw ValidationError("train.episodes must be >= 1");
  if (update_frequency < 2 || update_frequency % 2 != 0) {
    throw ValidationError("train.update_frequency must be even and >= 2, got " + std::to_string(update_frequency));
  }
  if (update_frequency > episodes) {
    throw ValidationError("train.update_frequency (" + std::to_string(update_frequency) +
                          ") must not exceed train.episodes (" + std::to_string(episodes) + ")");
  }
  if (disc_batch == 0) throw ValidationError("train.disc_batch must be >= 1");
  if (auroc_window == 0) throw ValidationError("logging.auroc_window must be >= 1");
  if (eval_slice_auroc && eval_slice_size == 0) throw ValidationError("logging.eval_slice_size must be >= 1");
  generator.validate();
  ppo.validate();
  discriminator.validate();
  pretrain.validate();
}

json TrainConfig::to_json() const {
  return {{"train",
           {{"episodes", episodes},
            {"update_frequency", update_frequency},
            {"disc_batch", disc_batch},
            {"seed", seed},
            {"dataset", dataset}}},
          {"generator", generator.to_json()},
          {"ppo", ppo.to_json()},
          {"discriminator", discriminator.to_json()},
          {"pretrain", pretrain.to_json()},
          {"ablation", {{"no_attention", no_attention}, {"wd_reward", wd_reward}, {"frozen_encoder", frozen_encoder}}},
          {"logging",
           {{"auroc_window", auroc_window},
            {"eval_slice_auroc", eval_slice_auroc},
            {"eval_slice_size", eval_slice_size},
            {"checkpoint_every", checkpoint_every}}}};
}

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T out{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) throw ValidationError("option " + key + ": cannot parse '" + text + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& text) {
  // from_chars for double is not available on every standard library we build with.
  std::istringstream in(text);
  double v = 0.0;
  in >> v;
  if (in.fail() || !in.eof() || !std::isfinite(v)) {
    throw ValidationError("option " + key + ": cannot parse '" + text + "' as a number");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ValidationError("option " + key + ": expected true/false, got '" + text + "'");
}

using Setter = std::function<void(TrainConfig&, const std::string& key, const std::string& value)>;

template <class T>
Setter size_setter(T TrainConfig::*field) {
  return [field](TrainConfig& c, const std::string& k, const std::string& v) { c.*field = parse_number<T>(k, v); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> m;
    auto sz = [](std::size_t& dst, const std::string& k, const std::string& v) {
      dst = parse_number<std::size_t>(k, v);
    };
    auto dbl = [](double& dst, const std::string& k, const std::string& v) { dst = parse_double(k, v); };
    auto bl = [](bool& dst, const std::string& k, const std::string& v) { dst = parse_bool(k, v); };
    auto in = [](int& dst, const std::string& k, const std::string& v) { dst = parse_number<int>(k, v); };

    m["train.episodes"] = size_setter(&TrainConfig::episodes);
    m["train.update_frequency"] = size_setter(&TrainConfig::update_frequency);
    m["train.disc_batch"] = size_setter(&TrainConfig::disc_batch);
    m["train.seed"] = size_setter(&TrainConfig::seed);
    m["train.dataset"] = [](TrainConfig& c, const std::string&, const std::string& v) { c.dataset = v; };

    m["generator.hidden"] = [=](TrainConfig& c, auto& k, auto& v) { sz(c.generator.hidden, k, v); };
    m["generator.head_hidden"] = [=](TrainConfig& c, auto& k, auto& v) { sz(c.generator.head_hidden, k, v); };
    m["generator.attention"] = [=](TrainConfig& c, auto& k, auto& v) { bl(c.generator.attention, k, v); };
    m["generator.residual"] = [=](TrainConfig& c, auto& k, auto& v) { bl(c.generator.residual, k, v); };
    m["generator.critic_outputs"] = [=](TrainConfig& c, auto& k, auto& v) { sz(c.generator.critic_outputs, k, v); };

    m["ppo.clip"] = [=](TrainConfig& c, auto& k, auto& v) { dbl(c.ppo.clip, k, v); };
    m["ppo.value_coef"] = [=](TrainConfig& c, auto& k, auto& v) { dbl(c.ppo.value_coef, k, v); };
    m["ppo.entropy_coef"] = [=](TrainConfig& c, auto& k, auto& v) { dbl(c.ppo.entropy_coef, k, v); };
    m["ppo.gamma"] = [=](TrainConfig& c, auto& k, auto& v) { dbl(c.ppo.gamma, k, v); };
    m["ppo.epochs"] = [=](TrainConfig& c, auto& k, auto& v) { in(c.ppo.epochs, k, v); };
    m["ppo.batch"] = [=](TrainConfig& c, auto& k, auto& v) { sz(c.ppo.batch, k, v); };
    m["ppo.actor_lr"] = [=](TrainConfig& c, auto& k, auto& v) { dbl(c.ppo.actor_lr, k, v); };
    m["ppo.critic_lr"] = [=](TrainConfig& c, auto& k, auto& v) { dbl(c.ppo.critic_lr, k, v); };
    m["ppo.encoder_lr"] = [=](TrainConfig& c, auto& k, auto& v) { dbl(c.ppo.encoder_lr, k, v); };
    m["ppo.max_grad_norm"] = [=](TrainConfig& c, auto& k, auto& v) { dbl(c.ppo.max_grad_norm, k, v); };

    m["discriminator.hidden"] = [=](TrainConfig& c, auto& k, auto& v) { sz(c.discriminator.hidden, k, v); };
    m["discriminator.head_hidden"] = [=](TrainConfig& c, auto& k, auto& v) { sz(c.discriminator.head_hidden, k, v); };
    m["discriminator.horizon_readout"] = [=](TrainConfig& c, auto& k, auto& v) {
      bl(c.discriminator.horizon_readout, k, v);
    };
    m["discriminator.lr"] = [=](TrainConfig& c, auto& k, auto& v) { dbl(c.discriminator.lr, k, v); };
    m["discriminator.max_grad_norm"] = [=](TrainConfig& c, auto& k, auto& v) {
      dbl(c.discriminator.max_grad_norm, k, v);
    };
    m["discriminator.power_tol"] = [=](TrainConfig& c, auto& k, auto& v) { dbl(c.discriminator.power_tol, k, v); };
    m["discriminator.max_power_iterations"] = [=](TrainConfig& c, auto& k, auto& v) {
      in(c.discriminator.max_power_iterations, k, v);
    };

    m["pretrain.hidden"] = [=](TrainConfig& c, auto& k, auto& v) { sz(c.pretrain.hidden, k, v); };
    m["pretrain.epochs"] = [=](TrainConfig& c, auto& k, auto& v) { in(c.pretrain.epochs, k, v); };
    m["pretrain.lr"] = [=](TrainConfig& c, auto& k, auto& v) { dbl(c.pretrain.lr, k, v); };
    m["pretrain.batch"] = [=](TrainConfig& c, auto& k, auto& v) { sz(c.pretrain.batch, k, v); };
    m["pretrain.mc_samples"] = [=](TrainConfig& c, auto& k, auto& v) { sz(c.pretrain.mc_samples, k, v); };

    m["ablation.no_attention"] = [=](TrainConfig& c, auto& k, auto& v) { bl(c.no_attention, k, v); };
    m["ablation.wd_reward"] = [=](TrainConfig& c, auto& k, auto& v) { bl(c.wd_reward, k, v); };
    m["ablation.frozen_encoder"] = [=](TrainConfig& c, auto& k, auto& v) { bl(c.frozen_encoder, k, v); };

    m["logging.auroc_window"] = size_setter(&TrainConfig::auroc_window);
    m["logging.eval_slice_auroc"] = [=](TrainConfig& c, auto& k, auto& v) { bl(c.eval_slice_auroc, k, v); };
    m["logging.eval_slice_size"] = size_setter(&TrainConfig::eval_slice_size);
    m["logging.checkpoint_every"] = size_setter(&TrainConfig::checkpoint_every);
    return m;
  }();
  return table;
}

}  // namespace

void set_option(TrainConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ValidationError("unknown option '" + key + "'");
  it->second(cfg, key, value);
}

std::vector<std::string> option_names() {
  std::vector<std::string> out;
  for (const auto& [k, _] : setters()) out.push_back(k);
  return out;
}

void apply_ini(TrainConfig& cfg, const fs::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ValidationError("config " + path.string() + ": key '" + section + "' outside a section");
    for (const auto& [key, value] : body) set_option(cfg, section + "." + key, value.get_value<std::string>());
  }
}

TrainConfig load_train_config(const fs::path& path) {
  TrainConfig cfg;
  apply_ini(cfg, path);
  return cfg;
}

// ---------------------------------------------------------------- schedule & metrics

const char* phase_name(Phase p) { return p == Phase::disc ? "disc" : "gen"; }

Phase phase_of(std::size_t episode, std::size_t update_frequency) {
  return episode % update_frequency < update_frequency / 2 ? Phase::disc : Phase::gen;
}

namespace {

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", *v);
  return buf;
}

class RunningMean {
 public:
  explicit RunningMean(std::size_t window) : window_(window) {}
  void push(double v) {
    values_.push_back(v);
    sum_ += v;
    if (values_.size() > window_) {
      sum_ -= values_.front();
      values_.pop_front();
    }
  }
  std::optional<double> value() const {
    if (values_.empty()) return std::nullopt;
    // Recompute instead of using sum_ so drift cannot accumulate.
    double s = 0.0;
    for (double v : values_) s += v;
    return s / static_cast<double>(values_.size());
  }

 private:
  std::size_t window_;
  std::deque<double> values_;
  double sum_ = 0.0;
};

}  // namespace

std::string metrics_row(const EpisodeMetrics& m) {
  return std::to_string(m.episode) + "," + phase_name(m.phase) + "," + fmt(m.auroc) + "," + fmt(m.d_real) + "," +
         fmt(m.d_fake) + "," + fmt(m.reward_mean) + "," + fmt(m.gen_loss) + "," + fmt(m.disc_loss);
}

std::optional<double> tail_mean(const std::vector<EpisodeMetrics>& metrics,
                                std::optional<double> EpisodeMetrics::*field, double fraction) {
  if (metrics.empty()) return std::nullopt;
  const auto count = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(metrics.size())));
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = metrics.size() - std::min(count, metrics.size()); i < metrics.size(); ++i) {
    if (const auto& v = metrics[i].*field) {
      s += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

std::vector<EpisodeMetrics> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetIoError("cannot open metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DatasetIoError(path.string() + ": empty metrics file");
  if (line != kMetricsHeader) throw DatasetIoError(path.string() + ": unexpected header '" + line + "'");
  std::vector<EpisodeMetrics> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 8) {
      throw DatasetIoError(path.string() + ":" + std::to_string(lineno) + ": expected 8 columns, found " +
                           std::to_string(cells.size()));
    }
    EpisodeMetrics m;
    try {
      m.episode = std::stoul(cells[0]);
      if (cells[1] != "disc" && cells[1] != "gen") throw std::invalid_argument("phase");
      m.phase = cells[1] == "disc" ? Phase::disc : Phase::gen;
      std::optional<double>* fields[] = {&m.auroc, &m.d_real, &m.d_fake, &m.reward_mean, &m.gen_loss, &m.disc_loss};
      for (std::size_t c = 0; c < 6; ++c)
        if (!cells[c + 2].empty()) *fields[c] = std::stod(cells[c + 2]);
    } catch (const std::exception&) {
      throw DatasetIoError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    out.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------- training loop

namespace {

enum Stream : std::uint32_t { kEpisodes = 1, kActions = 2, kReals = 3, kPretrain = 4 };

}  // namespace

TrainResult train(const TrainConfig& cfg_in, const Dataset& data, const TrainHooks& hooks) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  if (data.sequences.empty()) throw ValidationError("training dataset is empty");
  if (cfg.no_attention) cfg.generator.attention = false;

  TrainResult res;
  res.generator = std::make_unique<agent::Generator>(cfg.generator, cfg.seed);
  res.discriminator = std::make_unique<critic::Discriminator>(cfg.discriminator, cfg.seed);
  agent::Generator& gen = *res.generator;
  critic::Discriminator& disc = *res.discriminator;

  if (cfg.frozen_encoder) {
    baselines::PpodConfig pc = cfg.pretrain;
    pc.hidden = cfg.generator.hidden;
    if (cfg.discriminator.hidden != pc.hidden) {
      throw ValidationError("frozen_encoder needs generator.hidden == discriminator.hidden");
    }
    baselines::PpodModel encoder(pc, cfg.seed);
    RngStream pre_rng(cfg.seed, kPretrain);
    baselines::ppod_train(encoder, data, pre_rng);
    gen.clstm().copy_weights_from(encoder.clstm());
    disc.clstm().copy_weights_from(encoder.clstm());
    gen.freeze_clstm();
    disc.freeze_clstm();
  }
  agent::PpoLearner learner(gen, cfg.ppo);

  std::ofstream csv;
  if (hooks.out_dir) {
    fs::create_directories(*hooks.out_dir / "checkpoints");
    csv.open(*hooks.out_dir / "metrics.csv");
    if (!csv) throw DatasetIoError("cannot write " + (*hooks.out_dir / "metrics.csv").string());
    csv << kMetricsHeader << '\n';
  }

  RngStream episode_rng(cfg.seed, kEpisodes);
  RngStream action_rng(cfg.seed, kActions);
  RngStream real_rng(cfg.seed, kReals);
  const std::size_t n_data = data.sequences.size();

  RunningMean auroc_window(cfg.auroc_window);
  RunningMean reward_window(cfg.auroc_window);
  std::optional<double> slice_auroc;
  std::vector<EventSequence> pending_reals, pending_fakes;
  std::vector<agent::Trajectory> pending_traj;

  auto slice_auc = [&] {
    std::vector<double> scores;
    std::vector<int> labels;
    const std::size_t m = std::min(cfg.eval_slice_size, n_data);
    for (std::size_t i = 0; i < m; ++i) {
      const auto s = gen.outlier_scores(data.sequences[i].seq);
      scores.insert(scores.end(), s.begin(), s.end());
      labels.insert(labels.end(), data.sequences[i].labels.begin(), data.sequences[i].labels.end());
    }
    return auroc(scores, labels);
  };

  res.metrics.reserve(cfg.episodes);
  for (std::size_t k = 0; k < cfg.episodes; ++k) {
    const Phase phase = phase_of(k, cfg.update_frequency);
    EpisodeMetrics em;
    em.episode = k;
    em.phase = phase;

    const LabeledSequence& sj = data.sequences[episode_rng.uniform_int(n_data)];
    agent::Rollout ro = agent::rollout(gen, sj.seq, action_rng, agent::RolloutMode::sample);
    const EventSequence& si = data.sequences[real_rng.uniform_int(n_data)].seq;

    if (cfg.eval_slice_auroc) {
      if (k % cfg.auroc_window == 0) slice_auroc = slice_auc();
      em.auroc = slice_auroc;
    } else {
      if (const auto a = auroc(ro.traj.scores, sj.labels)) auroc_window.push(*a);
      em.auroc = auroc_window.value();
    }

    em.d_real = disc.score(si);
    const double d_fake = disc.score(ro.corrected);
    em.d_fake = d_fake;

    if (phase == Phase::disc) {
      if (!cfg.wd_reward) {
        pending_reals.push_back(si);
        pending_fakes.push_back(ro.corrected);
      }
    } else {
      const double reward = cfg.wd_reward ? -wasserstein_seq_distance(ro.corrected, si) : d_fake;
      reward_window.push(reward);
      em.reward_mean = reward_window.value();
      ro.traj.set_terminal_reward(reward);
      pending_traj.push_back(std::move(ro.traj));
    }

    // Update when a batch is full, or flush a partial batch when the phase ends.
    const bool phase_ends = k + 1 == cfg.episodes || phase_of(k + 1, cfg.update_frequency) != phase;
    if (!pending_reals.empty() && (pending_reals.size() >= cfg.disc_batch || phase_ends)) {
      em.disc_loss = disc.bce_update(pending_reals, pending_fakes);
      pending_reals.clear();
      pending_fakes.clear();
    }
    if (!pending_traj.empty() && (pending_traj.size() >= cfg.ppo.batch || phase_ends)) {
      em.gen_loss = learner.update(pending_traj).loss;
      pending_traj.clear();
    }

    if (csv.is_open()) {
      csv << metrics_row(em) << '\n';
      if ((k + 1) % 100 == 0) csv.flush();
    }
    if (hooks.out_dir && cfg.checkpoint_every > 0 && (k + 1) % cfg.checkpoint_every == 0) {
      const std::string tag = std::to_string(k + 1);
      const json extra{{"episode", k + 1}, {"seed", cfg.seed}};
      gen.save(*hooks.out_dir / "checkpoints" / ("generator_ep" + tag + ".json"), extra);
      disc.save(*hooks.out_dir / "checkpoints" / ("discriminator_ep" + tag + ".json"), extra);
    }
    res.metrics.push_back(em);
    if (hooks.on_episode) hooks.on_episode(em, gen, disc);
  }

  if (hooks.out_dir) {
    const json extra{{"episode", cfg.episodes}, {"seed", cfg.seed}, {"config", cfg.to_json()}};
    gen.save(*hooks.out_dir / "generator.json", extra);
    disc.save(*hooks.out_dir / "discriminator.json", extra);
  }
  return res;
}

}  // namespace evod::ganrl
