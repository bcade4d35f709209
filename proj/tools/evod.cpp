// evod: simulate data, train the adversarial detector, score, evaluate,
// run baselines, sweeps and ablations, and plot training curves.
//
// Exit codes: 0 success, 1 usage, 2 validation, 3 runtime.

#include "evod/checkpoint.hpp"
#include "evod/evalkit.hpp"
#include "evod/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace evod;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kValidation = 2, kRuntime = 3 };

class Manifest {
 public:
  Manifest(std::string command, int argc, char** argv) : command_(std::move(command)) {
    for (int i = 0; i < argc; ++i) argv_.emplace_back(argv[i]);
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    started_ = buf;
  }

  void config(json c) { config_ = std::move(c); }
  void seed(std::uint64_t s) { seed_ = s; }
  void artifact(const fs::path& p) { artifacts_.push_back(p); }

  /// Hashes every artifact and writes the manifest to `path`.
  void write(const fs::path& path) const {
    json arts = json::object();
    for (const auto& a : artifacts_)
      if (fs::is_regular_file(a)) arts[a.lexically_relative(path.parent_path().empty() ? "." : path.parent_path()).generic_string()] = eval::sha256_file(a);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    const json m{{"command", command_},   {"argv", argv_},     {"version", kVersion},
                 {"config", config_},     {"seed", seed_},     {"artifacts", arts},
                 {"started_at", started_}, {"wall_clock_seconds", wall}, {"hash", "sha256"}};
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DatasetIoError("cannot write " + path.string());
    out << m.dump(2) << '\n';
  }

 private:
  std::string command_;
  std::vector<std::string> argv_;
  std::string started_;
  json config_ = json::object();
  json seed_ = nullptr;
  std::vector<fs::path> artifacts_;
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

fs::path manifest_for_file(const fs::path& out) {
  fs::path m = out;
  m += ".manifest.json";
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DatasetIoError("cannot write " + path.string());
  out << text;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<double> parse_doubles(const std::string& s, const std::string& what) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ValidationError(what + ": '" + item + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError(what + ": empty list");
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const double v : parse_doubles(s, "--seeds")) {
    if (v < 0 || v != static_cast<double>(static_cast<std::uint64_t>(v))) {
      throw ValidationError("--seeds: entries must be non-negative integers");
    }
    out.push_back(static_cast<std::uint64_t>(v));
  }
  return out;
}

// ---------------------------------------------------------------- config

struct ConfigOptions {
  std::string config_path;
  std::vector<std::string> overrides;  // section.key=value

  void add_to(CLI::App* app) {
    app->add_option("--config", config_path, "INI file over the built-in defaults")->check(CLI::ExistingFile);
    app->add_option("--set", overrides, "Override one option, e.g. --set ppo.actor_lr=3e-5")->take_all();
  }

  ganrl::TrainConfig resolve() const {
    ganrl::TrainConfig cfg;
    if (!config_path.empty()) ganrl::apply_ini(cfg, config_path);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ValidationError("--set expects section.key=value, got '" + o + "'");
      ganrl::set_option(cfg, o.substr(0, eq), o.substr(eq + 1));
    }
    return cfg;
  }
};

struct ProtocolOptions {
  std::string process = "poisson";
  std::size_t n = 1000;
  std::size_t test_n = 100;
  double beta = 0.8;
  double alpha = 0.5;
  std::uint64_t test_seed = 1000;
  std::string seeds = "100,101,102,103,104";

  void add_to(CLI::App* app) {
    app->add_option("--process", process, "poisson|hawkes")->capture_default_str();
    app->add_option("--n", n, "Training sequences per seed")->capture_default_str();
    app->add_option("--test-n", test_n, "Test sequences")->capture_default_str();
    app->add_option("--beta", beta, "Fraction of clean sequences")->capture_default_str();
    app->add_option("--alpha", alpha, "Outlier rate")->capture_default_str();
    app->add_option("--test-seed", test_seed)->capture_default_str();
    app->add_option("--seeds", seeds, "Comma-separated training seeds")->capture_default_str();
  }

  eval::Protocol resolve() const {
    eval::Protocol p;
    p.process = eval::parse_process(process);
    p.train_size = n;
    p.test_size = test_n;
    p.beta = beta;
    p.alpha = alpha;
    p.test_seed = test_seed;
    return p;
  }
};

// ---------------------------------------------------------------- scores csv

void write_scores(const fs::path& path, const Dataset& data, const std::vector<std::vector<double>>& scores,
                  bool with_labels) {
  std::ostringstream os;
  os << "seq_id,event_idx,time,score" << (with_labels ? ",label" : "") << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ls = data.sequences[i];
    for (std::size_t n = 0; n < ls.seq.size(); ++n) {
      os << i << ',' << n << ',' << ls.seq[n] << ',' << scores[i][n];
      if (with_labels) os << ',' << ls.labels[n];
      os << '\n';
    }
  }
  write_text(path, os.str());
}

// ---------------------------------------------------------------- commands

int cmd_simulate(const std::string& process, const fs::path& out, std::size_t n, double beta, double alpha,
                 std::uint64_t seed, double horizon, Manifest& manifest) {
  tpp::ProcessSpec spec = eval::parse_process(process);
  std::visit([&](auto& s) { s.horizon = horizon; }, spec);
  RngStream rng(seed);
  Dataset ds = tpp::build_dataset(spec, tpp::OutlierSpec{alpha}, n, beta, rng);
  ds.meta["process"] = process;
  ds.meta["seed"] = std::to_string(seed);
  ds.meta["alpha"] = std::to_string(alpha);
  write_dataset(ds, out);
  manifest.config({{"process", process}, {"n", n}, {"beta", beta}, {"alpha", alpha}, {"horizon", horizon}});
  manifest.seed(seed);
  manifest.artifact(out);
  manifest.write(manifest_for_file(out));
  std::cout << "wrote " << ds.size() << " sequences (" << ds.clean_count() << " clean) to " << out.string() << '\n';
  return kOk;
}

int cmd_train(const ConfigOptions& co, const std::string& data_flag, const fs::path& out_dir, Manifest& manifest) {
  ganrl::TrainConfig cfg = co.resolve();
  if (!data_flag.empty()) cfg.dataset = data_flag;
  if (cfg.dataset.empty()) throw ValidationError("train needs --data or train.dataset in the config");
  cfg.validate();
  const Dataset data = read_dataset(cfg.dataset);
  ganrl::TrainHooks hooks;
  hooks.out_dir = out_dir;
  const auto t0 = std::chrono::steady_clock::now();
  hooks.on_episode = [&](const ganrl::EpisodeMetrics& m, agent::Generator&, critic::Discriminator&) {
    if ((m.episode + 1) % 1000 != 0) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "episode " << m.episode + 1 << "/" << cfg.episodes << "  auroc "
              << (m.auroc ? std::to_string(*m.auroc) : "-") << "  " << std::fixed << std::setprecision(1) << s
              << "s\n";
  };
  const ganrl::TrainResult r = ganrl::train(cfg, data, hooks);

  manifest.config(cfg.to_json());
  manifest.seed(cfg.seed);
  manifest.artifact(cfg.dataset);
  for (const auto& e : fs::recursive_directory_iterator(out_dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") manifest.artifact(e.path());
  manifest.write(out_dir / "manifest.json");
  const auto tail = ganrl::tail_mean(r.metrics, &ganrl::EpisodeMetrics::auroc);
  std::cout << "trained " << cfg.episodes << " episodes; final-10% training auroc "
            << (tail ? std::to_string(*tail) : "n/a") << "; artifacts in " << out_dir.string() << '\n';
  return kOk;
}

int cmd_detect(const fs::path& model, const fs::path& data_path, const fs::path& out, bool no_labels,
               Manifest& manifest) {
  const Dataset data = read_dataset(data_path);
  const std::string kind = read_checkpoint_extra(model).value("kind", "");
  std::vector<std::vector<double>> scores;
  if (kind == "generator") {
    auto gen = agent::Generator::from_checkpoint(model);
    for (const auto& ls : data.sequences) scores.push_back(gen->outlier_scores(ls.seq));
  } else if (kind == "ppod") {
    auto m = baselines::PpodModel::from_checkpoint(model);
    for (const auto& ls : data.sequences) scores.push_back(m->scores(ls.seq));
  } else {
    throw CheckpointError(model.string() + ": cannot score with a '" + kind + "' checkpoint");
  }
  write_scores(out, data, scores, !no_labels);
  manifest.config({{"model", model.string()}, {"data", data_path.string()}, {"kind", kind}});
  manifest.artifact(model);
  manifest.artifact(data_path);
  manifest.artifact(out);
  manifest.write(manifest_for_file(out));
  std::cout << "scored " << data.size() << " sequences into " << out.string() << '\n';
  return kOk;
}

int cmd_evaluate(const fs::path& scores_path, const std::string& pooling, const std::string& out,
                 const std::string& method, Manifest& manifest) {
  const eval::CsvTable t = eval::read_csv_table(scores_path);
  const std::size_t c_seq = t.column("seq_id", scores_path);
  const std::size_t c_idx = t.column("event_idx", scores_path);
  const std::size_t c_score = t.column("score", scores_path);
  const std::size_t c_label = t.column("label", scores_path);
  std::map<std::size_t, std::vector<std::pair<double, int>>> by_seq;
  for (const auto& row : t.rows) {
    if (std::isnan(row[c_seq]) || std::isnan(row[c_score]) || std::isnan(row[c_label]) || std::isnan(row[c_idx])) {
      throw ValidationError(scores_path.string() + ": non-numeric cell");
    }
    by_seq[static_cast<std::size_t>(row[c_seq])].emplace_back(row[c_score], static_cast<int>(row[c_label]));
  }
  // Rebuild a dataset shell carrying only labels; times are irrelevant to the metric.
  Dataset shell;
  std::vector<std::vector<double>> scores;
  for (const auto& [id, items] : by_seq) {
    std::vector<double> times, s;
    std::vector<int> labels;
    for (std::size_t i = 0; i < items.size(); ++i) {
      times.push_back(static_cast<double>(i + 1));
      s.push_back(items[i].first);
      labels.push_back(items[i].second);
    }
    shell.sequences.emplace_back(EventSequence(times, static_cast<double>(items.size())), labels);
    scores.push_back(std::move(s));
  }
  const auto a = eval::evaluate_scores(scores, shell, eval::parse_pooling(pooling));
  if (!a) throw ValidationError(scores_path.string() + ": labels contain a single class; AUROC undefined");

  eval::EvalReport rep(eval::sha256_file(scores_path).substr(0, 16));
  rep.add(method, "auroc", 0, *a);
  rep.add(method, "auroc_flipped", 0, 1.0 - *a);
  std::cout << std::fixed << std::setprecision(4) << "auroc " << *a << "  (1 - auroc " << 1.0 - *a << ", pooling "
            << pooling << ", " << by_seq.size() << " sequences)\n";
  fs::path report = out;
  if (report.empty()) report = fs::path(scores_path.string() + ".report.csv");
  write_text(report, rep.to_csv());
  manifest.config({{"scores", scores_path.string()}, {"pooling", pooling}, {"method", method}});
  manifest.artifact(scores_path);
  manifest.artifact(report);
  manifest.write(manifest_for_file(report));
  return kOk;
}

int cmd_baseline(const std::string& method, const fs::path& data_path, const std::string& train_path,
                 const fs::path& out, std::uint64_t seed, const baselines::PpodConfig& pc, const std::string& save,
                 Manifest& manifest) {
  const eval::Baseline b = eval::parse_baseline(method);
  const Dataset data = read_dataset(data_path);
  const Dataset train = train_path.empty() ? data : read_dataset(train_path);
  std::vector<std::vector<double>> scores;
  json cfg{{"method", method}, {"data", data_path.string()}, {"train", train_path}};
  if (b == eval::Baseline::ppod) {
    pc.validate();
    cfg["ppod"] = pc.to_json();
    baselines::PpodModel model(pc, seed);
    RngStream rng(seed, 5);
    baselines::ppod_train(model, train, rng);
    for (const auto& ls : data.sequences) scores.push_back(model.scores(ls.seq));
    if (!save.empty()) {
      model.save(save);
      manifest.artifact(save);
    }
  } else {
    scores = eval::baseline_scores(b, train, data, seed);
  }
  write_scores(out, data, scores, true);
  manifest.config(cfg);
  manifest.seed(seed);
  manifest.artifact(data_path);
  manifest.artifact(out);
  manifest.write(manifest_for_file(out));
  if (const auto a = eval::evaluate_scores(scores, data)) {
    std::cout << std::fixed << std::setprecision(4) << method << " auroc " << *a << '\n';
  }
  return kOk;
}

void plot_cells(const fs::path& root) {
  if (!fs::exists(root)) return;
  for (const auto& e : fs::directory_iterator(root)) {
    if (!e.is_directory()) continue;
    bool any = false;
    for (const auto& f : fs::recursive_directory_iterator(e.path()))
      any = any || f.path().filename() == "metrics.csv";
    if (any) eval::emit_plots(e.path(), e.path() / "curves.svg");
  }
}

int cmd_sweep(const std::string& param, const std::string& values, const ConfigOptions& co,
              const ProtocolOptions& po, const fs::path& out_dir, Manifest& manifest) {
  const ganrl::TrainConfig cfg = co.resolve();
  cfg.validate();
  const eval::Protocol p = po.resolve();
  const auto seeds = parse_seeds(po.seeds);
  const auto vals = parse_doubles(values, "--values");
  std::vector<eval::SweepCell> cells;
  if (param == "beta") {
    cells = eval::beta_sweep(cfg, p, vals, seeds, out_dir);
  } else {
    cells = eval::sensitivity_sweep(eval::parse_sweep_param(param), vals, cfg, p, seeds, out_dir);
  }
  const std::string table = eval::sweep_table(cells);
  write_text(out_dir / "sweep.csv", table);
  plot_cells(out_dir);
  std::cout << table;
  manifest.config({{"train", cfg.to_json()}, {"protocol", p.to_json()}, {"param", param}, {"values", vals},
                   {"seeds", seeds}});
  for (const auto& e : fs::recursive_directory_iterator(out_dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") manifest.artifact(e.path());
  manifest.write(out_dir / "manifest.json");
  return kOk;
}

int cmd_ablate(const std::string& kind, const ConfigOptions& co, const ProtocolOptions& po, const fs::path& out_dir,
               Manifest& manifest) {
  const ganrl::TrainConfig cfg = co.resolve();
  cfg.validate();
  const eval::Protocol p = po.resolve();
  const auto seeds = parse_seeds(po.seeds);
  const eval::EvalReport rep = eval::ablation_run(eval::parse_ablation(kind), cfg, p, seeds, out_dir);
  write_text(out_dir / "report.json", rep.to_json().dump(2) + "\n");
  write_text(out_dir / "report.csv", rep.to_csv());
  plot_cells(out_dir);
  std::cout << rep.to_text();
  manifest.config({{"train", cfg.to_json()}, {"protocol", p.to_json()}, {"kind", kind}, {"seeds", seeds}});
  for (const auto& e : fs::recursive_directory_iterator(out_dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") manifest.artifact(e.path());
  manifest.write(out_dir / "manifest.json");
  return kOk;
}

int cmd_plot(const fs::path& in, const fs::path& out, const std::string& metrics, Manifest& manifest) {
  eval::emit_plots(in, out, split_list(metrics));
  manifest.config({{"in", in.string()}, {"metrics", metrics}});
  manifest.artifact(out);
  manifest.write(manifest_for_file(out));
  std::cout << "wrote " << out.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-sequence outlier detection with an adversarially trained deletion policy"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Simulate a labeled dataset");
  std::string sim_process = "poisson";
  std::string sim_out;
  std::size_t sim_n = 1000;
  double sim_beta = 0.8, sim_alpha = 0.5, sim_horizon = 10.0;
  std::uint64_t sim_seed = 100;
  sim->add_option("--process", sim_process, "poisson|hawkes")->capture_default_str();
  sim->add_option("--out", sim_out, "Dataset file (JSON lines)")->required();
  sim->add_option("--n", sim_n)->capture_default_str();
  sim->add_option("--beta", sim_beta, "Fraction of clean sequences")->capture_default_str();
  sim->add_option("--alpha", sim_alpha, "Outlier rate")->capture_default_str();
  sim->add_option("--horizon", sim_horizon)->capture_default_str();
  sim->add_option("--seed", sim_seed)->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train the generator and discriminator");
  ConfigOptions tr_cfg;
  tr_cfg.add_to(tr);
  std::string tr_data, tr_out;
  tr->add_option("--data", tr_data, "Training dataset (overrides train.dataset)");
  tr->add_option("--out-dir", tr_out, "Checkpoints, metrics.csv and manifest")->required();

  // detect
  auto* det = app.add_subcommand("detect", "Score every event of a dataset");
  std::string det_model, det_data, det_out;
  bool det_no_labels = false;
  det->add_option("--model", det_model, "Generator or PPOD checkpoint")->required()->check(CLI::ExistingFile);
  det->add_option("--data", det_data)->required()->check(CLI::ExistingFile);
  det->add_option("--out", det_out, "Scores CSV")->required();
  det->add_flag("--no-labels", det_no_labels, "Omit the label column");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "AUROC of a scores CSV against its labels");
  std::string ev_scores, ev_pooling = "events", ev_out, ev_method = "model";
  ev->add_option("--scores", ev_scores)->required()->check(CLI::ExistingFile);
  ev->add_option("--pooling", ev_pooling, "events|sequence_mean")->capture_default_str();
  ev->add_option("--out", ev_out, "Report CSV (default: <scores>.report.csv)");
  ev->add_option("--method", ev_method, "Method name in the report")->capture_default_str();

  // baseline
  auto* bl = app.add_subcommand("baseline", "Score a dataset with RND, LEN or PPOD");
  std::string bl_method, bl_data, bl_train, bl_out, bl_save;
  std::uint64_t bl_seed = 100;
  baselines::PpodConfig bl_pc;
  bl->add_option("--method", bl_method, "rnd|len|ppod")->required();
  bl->add_option("--data", bl_data, "Dataset to score")->required()->check(CLI::ExistingFile);
  bl->add_option("--train", bl_train, "PPOD training data (default: --data)")->check(CLI::ExistingFile);
  bl->add_option("--out", bl_out, "Scores CSV")->required();
  bl->add_option("--seed", bl_seed)->capture_default_str();
  bl->add_option("--epochs", bl_pc.epochs)->capture_default_str();
  bl->add_option("--hidden", bl_pc.hidden)->capture_default_str();
  bl->add_option("--lr", bl_pc.lr)->capture_default_str();
  bl->add_option("--save-model", bl_save, "Write the fitted PPOD checkpoint here");

  // sweep
  auto* sw = app.add_subcommand("sweep", "One training run per value and seed");
  std::string sw_param, sw_values, sw_out;
  ConfigOptions sw_cfg;
  ProtocolOptions sw_proto;
  sw->add_option("--param", sw_param, "beta|update_freq|disc_lr|gen_lr")->required();
  sw->add_option("--values", sw_values, "Comma-separated values")->required();
  sw->add_option("--out-dir", sw_out)->required();
  sw_cfg.add_to(sw);
  sw_proto.add_to(sw);

  // ablate
  auto* ab = app.add_subcommand("ablate", "Full model against one ablation");
  std::string ab_kind, ab_out;
  ConfigOptions ab_cfg;
  ProtocolOptions ab_proto;
  ab->add_option("--kind", ab_kind, "no_attention|wd_reward|frozen_encoder")->required();
  ab->add_option("--out-dir", ab_out)->required();
  ab_cfg.add_to(ab);
  ab_proto.add_to(ab);

  // plot
  auto* pl = app.add_subcommand("plot", "SVG curves (mean and standard-error band) from metrics CSVs");
  std::string pl_in, pl_out, pl_metrics = "auroc,d_real,d_fake,reward_mean";
  pl->add_option("--in", pl_in, "Directory searched for metrics.csv, or one CSV")->required();
  pl->add_option("--out", pl_out, "SVG file")->required();
  pl->add_option("--metrics", pl_metrics)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    Manifest manifest(sub->get_name(), argc, argv);
    if (sub == sim) return cmd_simulate(sim_process, sim_out, sim_n, sim_beta, sim_alpha, sim_seed, sim_horizon, manifest);
    if (sub == tr) return cmd_train(tr_cfg, tr_data, tr_out, manifest);
    if (sub == det) return cmd_detect(det_model, det_data, det_out, det_no_labels, manifest);
    if (sub == ev) return cmd_evaluate(ev_scores, ev_pooling, ev_out, ev_method, manifest);
    if (sub == bl) return cmd_baseline(bl_method, bl_data, bl_train, bl_out, bl_seed, bl_pc, bl_save, manifest);
    if (sub == sw) return cmd_sweep(sw_param, sw_values, sw_cfg, sw_proto, sw_out, manifest);
    if (sub == ab) return cmd_ablate(ab_kind, ab_cfg, ab_proto, ab_out, manifest);
    if (sub == pl) return cmd_plot(pl_in, pl_out, pl_metrics, manifest);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
