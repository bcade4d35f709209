#pragma once

// Experiment layer: test-set evaluation, multi-seed reports, beta /
// hyper-parameter sweeps, ablations and SVG curve emission.

#include "evod/baselines.hpp"
#include "evod/ganrl.hpp"
#include "evod/metrics.hpp"
#include "evod/tppsim.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace evod::eval {

/// Per-event scorer; higher means more likely an outlier.
using Scorer = std::function<std::vector<double>(const EventSequence&)>;

enum class Pooling {
  events,         // one AUROC over all events of all sequences
  sequence_mean,  // mean of per-sequence AUROCs (sequences with one class skipped)
};

Pooling parse_pooling(const std::string& name);

/// Absent when the pooled labels contain a single class.
std::optional<double> evaluate_test(const Scorer& scorer, const Dataset& test, Pooling pooling = Pooling::events);

/// Same, over precomputed scores aligned with `test`.
std::optional<double> evaluate_scores(const std::vector<std::vector<double>>& scores, const Dataset& test,
                                      Pooling pooling = Pooling::events);

struct ReportEntry {
  std::string method;
  std::string metric;
  std::vector<std::uint64_t> seeds;
  std::vector<double> values;

  MeanSe summary() const { return mean_se(values); }
};

class EvalReport {
 public:
  EvalReport() = default;
  explicit EvalReport(std::string fingerprint) : fingerprint_(std::move(fingerprint)) {}

  void add(const std::string& method, const std::string& metric, std::uint64_t seed, double value);
  const ReportEntry* find(const std::string& method, const std::string& metric) const;
  const std::vector<ReportEntry>& entries() const { return entries_; }
  const std::string& fingerprint() const { return fingerprint_; }

  nlohmann::json to_json() const;
  /// method,metric,seed,value rows followed by nothing else; summaries are
  /// recomputable from these.
  std::string to_csv() const;
  /// method  metric  mean +- se  (n)
  std::string to_text() const;

 private:
  std::string fingerprint_;
  std::vector<ReportEntry> entries_;
};

/// Hex SHA-256 of a string.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);
/// SHA-256 of the compact JSON dump, truncated to 16 hex digits.
std::string fingerprint(const nlohmann::json& j);

/// Data protocol shared by all experiments: a training set per seed and one
/// fixed test set.
struct Protocol {
  tpp::ProcessSpec process = tpp::PoissonSpec{};
  double alpha = 0.5;
  double beta = 0.8;
  std::size_t train_size = 1000;
  std::size_t test_size = 100;
  std::uint64_t test_seed = 1000;

  nlohmann::json to_json() const;
};

std::string process_name(const tpp::ProcessSpec& p);
tpp::ProcessSpec parse_process(const std::string& name);

Dataset make_train_set(const Protocol& p, std::uint64_t seed);
Dataset make_test_set(const Protocol& p);

struct GanOutcome {
  std::optional<double> test_auroc;
  std::optional<double> train_auroc_tail;  // mean running AUROC over the last 10%
  std::optional<double> d_real_tail;
  std::optional<double> d_fake_tail;
  std::vector<ganrl::EpisodeMetrics> metrics;
};

/// Trains on make_train_set(p, seed) with cfg.seed = seed and scores the
/// test set. With `out_dir` the trainer artifacts land there.
GanOutcome run_gan(ganrl::TrainConfig cfg, const Protocol& p, std::uint64_t seed, const Dataset& test,
                   const std::optional<std::filesystem::path>& out_dir = std::nullopt);

enum class Baseline { rnd, len, ppod };
Baseline parse_baseline(const std::string& name);
const char* baseline_name(Baseline b);

/// Scores every test sequence with a baseline fitted (PPOD) on `train`.
std::vector<std::vector<double>> baseline_scores(Baseline b, const Dataset& train, const Dataset& test,
                                                 std::uint64_t seed,
                                                 const baselines::PpodConfig& ppod = baselines::PpodConfig{});

/// GAN-RL and all baselines over the given seeds. LEN additionally reports
/// 1 - AUROC under metric "test_auroc_flipped".
EvalReport compare_methods(const ganrl::TrainConfig& cfg, const Protocol& p, const std::vector<std::uint64_t>& seeds,
                           const std::optional<std::filesystem::path>& out_dir = std::nullopt);

struct SweepCell {
  std::string param;
  std::string value;
  std::uint64_t seed = 0;
  GanOutcome outcome;
};

/// One GAN-RL run per beta per seed; the test set uses the same beta.
std::vector<SweepCell> beta_sweep(const ganrl::TrainConfig& cfg, const Protocol& p, const std::vector<double>& betas,
                                  const std::vector<std::uint64_t>& seeds,
                                  const std::optional<std::filesystem::path>& out_dir = std::nullopt);

enum class SweepParam { update_frequency, disc_lr, gen_lr };
SweepParam parse_sweep_param(const std::string& name);
const char* sweep_param_name(SweepParam p);
/// gen_lr sets both the actor and the critic learning rate.
void apply_sweep_value(ganrl::TrainConfig& cfg, SweepParam param, double value);

std::vector<SweepCell> sensitivity_sweep(SweepParam param, const std::vector<double>& values,
                                         const ganrl::TrainConfig& cfg, const Protocol& p,
                                         const std::vector<std::uint64_t>& seeds,
                                         const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Writes sweep.csv (param,value,seed,test_auroc,train_auroc_tail) and returns it.
std::string sweep_table(const std::vector<SweepCell>& cells);

enum class AblationKind { no_attention, wd_reward, frozen_encoder };
AblationKind parse_ablation(const std::string& name);
const char* ablation_name(AblationKind k);
void apply_ablation(ganrl::TrainConfig& cfg, AblationKind k);

/// Full model ("gan_rl") against the ablated one, both with metrics
/// test_auroc and train_auroc_tail.
EvalReport ablation_run(AblationKind kind, const ganrl::TrainConfig& cfg, const Protocol& p,
                        const std::vector<std::uint64_t>& seeds,
                        const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// ---------------------------------------------------------------- plots

/// Numeric CSV with a header row; empty cells read as NaN.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  /// Throws DatasetIoError naming the file when a column is missing.
  std::size_t column(const std::string& name, const std::filesystem::path& origin) const;
};

/// Throws DatasetIoError naming the file when it is empty or malformed.
CsvTable read_csv_table(const std::filesystem::path& path);

struct Band {
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> se;  // 0 where only one file has a value
};

/// Mean and standard error of `metric` across tables, aligned on `x_column`.
Band aggregate(const std::vector<CsvTable>& tables, const std::vector<std::filesystem::path>& origins,
               const std::string& x_column, const std::string& metric);

std::string render_svg(const std::vector<std::pair<std::string, Band>>& panels, const std::string& x_label);

/// Every metrics.csv under `in` (recursive), one panel per metric column.
/// Throws DatasetIoError when nothing is found.
void emit_plots(const std::filesystem::path& in, const std::filesystem::path& out_svg,
                const std::vector<std::string>& metrics = {"auroc", "d_real", "d_fake", "reward_mean"});
void emit_plots(const std::vector<std::filesystem::path>& csvs, const std::filesystem::path& out_svg,
                const std::vector<std::string>& metrics);

}  // namespace evod::eval
