#include "evod/evalkit.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace evod::eval {

namespace fs = std::filesystem;
using json = nlohmann::json;

Pooling parse_pooling(const std::string& name) {
  if (name == "events") return Pooling::events;
  if (name == "sequence_mean") return Pooling::sequence_mean;
  throw ValidationError("unknown pooling '" + name + "' (events|sequence_mean)");
}

std::optional<double> evaluate_scores(const std::vector<std::vector<double>>& scores, const Dataset& test,
                                      Pooling pooling) {
  if (scores.size() != test.size()) {
    throw ValidationError("evaluate: " + std::to_string(scores.size()) + " score lists for " +
                          std::to_string(test.size()) + " sequences");
  }
  if (pooling == Pooling::events) {
    std::vector<double> all;
    std::vector<int> labels;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const auto& ls = test.sequences[i];
      if (scores[i].size() != ls.labels.size()) throw ValidationError("evaluate: score count mismatch in sequence " + std::to_string(i));
      all.insert(all.end(), scores[i].begin(), scores[i].end());
      labels.insert(labels.end(), ls.labels.begin(), ls.labels.end());
    }
    return auroc(all, labels);
  }
  std::vector<double> per_seq;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != test.sequences[i].labels.size()) throw ValidationError("evaluate: score count mismatch in sequence " + std::to_string(i));
    if (const auto a = auroc(scores[i], test.sequences[i].labels)) per_seq.push_back(*a);
  }
  if (per_seq.empty()) return std::nullopt;
  return mean_se(per_seq).mean;
}

std::optional<double> evaluate_test(const Scorer& scorer, const Dataset& test, Pooling pooling) {
  std::vector<std::vector<double>> scores;
  scores.reserve(test.size());
  for (const auto& ls : test.sequences) scores.push_back(scorer(ls.seq));
  return evaluate_scores(scores, test, pooling);
}

// ---------------------------------------------------------------- report

void EvalReport::add(const std::string& method, const std::string& metric, std::uint64_t seed, double value) {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const ReportEntry& e) { return e.method == method && e.metric == metric; });
  if (it == entries_.end()) {
    entries_.push_back(ReportEntry{method, metric, {}, {}});
    it = entries_.end() - 1;
  }
  it->seeds.push_back(seed);
  it->values.push_back(value);
}

const ReportEntry* EvalReport::find(const std::string& method, const std::string& metric) const {
  for (const auto& e : entries_)
    if (e.method == method && e.metric == metric) return &e;
  return nullptr;
}

json EvalReport::to_json() const {
  json entries = json::array();
  for (const auto& e : entries_) {
    const MeanSe s = e.summary();
    entries.push_back({{"method", e.method},
                       {"metric", e.metric},
                       {"mean", s.mean},
                       {"se", s.se},
                       {"n", s.n},
                       {"seeds", e.seeds},
                       {"values", e.values}});
  }
  return {{"fingerprint", fingerprint_}, {"entries", entries}};
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "method,metric,seed,value\n" << std::setprecision(17);
  for (const auto& e : entries_)
    for (std::size_t i = 0; i < e.values.size(); ++i)
      os << e.method << ',' << e.metric << ',' << e.seeds[i] << ',' << e.values[i] << '\n';
  return os.str();
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  for (const auto& e : entries_) {
    const MeanSe s = e.summary();
    os << std::left << std::setw(16) << e.method << std::setw(20) << e.metric << s.mean << " +- " << s.se << "  (n="
       << s.n << ")\n";
  }
  return os.str();
}

// ---------------------------------------------------------------- hashing

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetIoError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

std::string fingerprint(const json& j) { return sha256_hex(j.dump()).substr(0, 16); }

// ---------------------------------------------------------------- protocol

std::string process_name(const tpp::ProcessSpec& p) {
  return std::holds_alternative<tpp::PoissonSpec>(p) ? "poisson" : "hawkes";
}

tpp::ProcessSpec parse_process(const std::string& name) {
  if (name == "poisson") return tpp::PoissonSpec{};
  if (name == "hawkes") return tpp::HawkesSpec{};
  throw ValidationError("unknown process '" + name + "' (poisson|hawkes)");
}

json Protocol::to_json() const {
  return {{"process", process_name(process)}, {"alpha", alpha},         {"beta", beta},
          {"train_size", train_size},         {"test_size", test_size}, {"test_seed", test_seed}};
}

Dataset make_train_set(const Protocol& p, std::uint64_t seed) {
  RngStream rng(seed);
  return tpp::build_dataset(p.process, tpp::OutlierSpec{p.alpha}, p.train_size, p.beta, rng);
}

Dataset make_test_set(const Protocol& p) {
  RngStream rng(p.test_seed);
  return tpp::build_dataset(p.process, tpp::OutlierSpec{p.alpha}, p.test_size, p.beta, rng);
}

// ---------------------------------------------------------------- runs

GanOutcome run_gan(ganrl::TrainConfig cfg, const Protocol& p, std::uint64_t seed, const Dataset& test,
                   const std::optional<fs::path>& out_dir) {
  cfg.seed = seed;
  const Dataset train = make_train_set(p, seed);
  ganrl::TrainHooks hooks;
  hooks.out_dir = out_dir;
  ganrl::TrainResult r = ganrl::train(cfg, train, hooks);
  GanOutcome out;
  agent::Generator& gen = *r.generator;
  out.test_auroc = evaluate_test([&](const EventSequence& s) { return gen.outlier_scores(s); }, test);
  out.train_auroc_tail = ganrl::tail_mean(r.metrics, &ganrl::EpisodeMetrics::auroc);
  out.d_real_tail = ganrl::tail_mean(r.metrics, &ganrl::EpisodeMetrics::d_real);
  out.d_fake_tail = ganrl::tail_mean(r.metrics, &ganrl::EpisodeMetrics::d_fake);
  out.metrics = std::move(r.metrics);
  return out;
}

Baseline parse_baseline(const std::string& name) {
  if (name == "rnd") return Baseline::rnd;
  if (name == "len") return Baseline::len;
  if (name == "ppod") return Baseline::ppod;
  throw ValidationError("unknown baseline '" + name + "' (rnd|len|ppod)");
}

const char* baseline_name(Baseline b) {
  switch (b) {
    case Baseline::rnd: return "rnd";
    case Baseline::len: return "len";
    case Baseline::ppod: return "ppod";
  }
  return "?";
}

namespace {
enum Stream : std::uint32_t { kPpodTrain = 5, kRnd = 6 };
}

std::vector<std::vector<double>> baseline_scores(Baseline b, const Dataset& train, const Dataset& test,
                                                 std::uint64_t seed, const baselines::PpodConfig& ppod) {
  std::vector<std::vector<double>> out;
  out.reserve(test.size());
  switch (b) {
    case Baseline::rnd: {
      RngStream rng(seed, kRnd);
      for (const auto& ls : test.sequences) out.push_back(baselines::rnd_scores(ls.seq, rng));
      break;
    }
    case Baseline::len:
      for (const auto& ls : test.sequences) out.push_back(baselines::len_scores(ls.seq));
      break;
    case Baseline::ppod: {
      baselines::PpodModel model(ppod, seed);
      RngStream rng(seed, kPpodTrain);
      baselines::ppod_train(model, train, rng);
      for (const auto& ls : test.sequences) out.push_back(model.scores(ls.seq));
      break;
    }
  }
  return out;
}

namespace {

std::optional<fs::path> cell_dir(const std::optional<fs::path>& root, const std::string& name, std::uint64_t seed) {
  if (!root) return std::nullopt;
  return *root / name / ("seed_" + std::to_string(seed));
}

void add_outcome(EvalReport& rep, const std::string& method, std::uint64_t seed, const GanOutcome& o) {
  if (o.test_auroc) rep.add(method, "test_auroc", seed, *o.test_auroc);
  if (o.train_auroc_tail) rep.add(method, "train_auroc_tail", seed, *o.train_auroc_tail);
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

EvalReport compare_methods(const ganrl::TrainConfig& cfg, const Protocol& p, const std::vector<std::uint64_t>& seeds,
                           const std::optional<fs::path>& out_dir) {
  EvalReport rep(fingerprint({{"config", cfg.to_json()}, {"protocol", p.to_json()}, {"seeds", seeds}}));
  const Dataset test = make_test_set(p);
  for (const std::uint64_t seed : seeds) {
    add_outcome(rep, "gan_rl", seed, run_gan(cfg, p, seed, test, cell_dir(out_dir, "gan_rl", seed)));
    const Dataset train = make_train_set(p, seed);
    for (const Baseline b : {Baseline::ppod, Baseline::rnd, Baseline::len}) {
      const auto a = evaluate_scores(baseline_scores(b, train, test, seed), test);
      if (!a) continue;
      rep.add(baseline_name(b), "test_auroc", seed, *a);
      if (b == Baseline::len) rep.add("len", "test_auroc_flipped", seed, 1.0 - *a);
    }
  }
  return rep;
}

std::vector<SweepCell> beta_sweep(const ganrl::TrainConfig& cfg, const Protocol& p, const std::vector<double>& betas,
                                  const std::vector<std::uint64_t>& seeds, const std::optional<fs::path>& out_dir) {
  std::vector<SweepCell> cells;
  for (const double beta : betas) {
    Protocol pb = p;
    pb.beta = beta;
    const Dataset test = make_test_set(pb);
    for (const std::uint64_t seed : seeds) {
      const std::string v = format_value(beta);
      cells.push_back({"beta", v, seed, run_gan(cfg, pb, seed, test, cell_dir(out_dir, "beta_" + v, seed))});
    }
  }
  return cells;
}

SweepParam parse_sweep_param(const std::string& name) {
  if (name == "update_freq" || name == "update_frequency") return SweepParam::update_frequency;
  if (name == "disc_lr") return SweepParam::disc_lr;
  if (name == "gen_lr") return SweepParam::gen_lr;
  throw ValidationError("unknown sweep parameter '" + name + "' (update_freq|disc_lr|gen_lr)");
}

const char* sweep_param_name(SweepParam p) {
  switch (p) {
    case SweepParam::update_frequency: return "update_freq";
    case SweepParam::disc_lr: return "disc_lr";
    case SweepParam::gen_lr: return "gen_lr";
  }
  return "?";
}

void apply_sweep_value(ganrl::TrainConfig& cfg, SweepParam param, double value) {
  switch (param) {
    case SweepParam::update_frequency:
      if (!(value >= 1.0) || value != std::floor(value)) {
        throw ValidationError("update_freq values must be positive integers, got " + format_value(value));
      }
      cfg.update_frequency = static_cast<std::size_t>(value);
      break;
    case SweepParam::disc_lr:
      cfg.discriminator.lr = value;
      break;
    case SweepParam::gen_lr:
      cfg.ppo.actor_lr = value;
      cfg.ppo.critic_lr = value;
      break;
  }
  cfg.validate();
}

std::vector<SweepCell> sensitivity_sweep(SweepParam param, const std::vector<double>& values,
                                         const ganrl::TrainConfig& cfg, const Protocol& p,
                                         const std::vector<std::uint64_t>& seeds,
                                         const std::optional<fs::path>& out_dir) {
  if (values.empty()) throw ValidationError("sweep needs at least one value");
  std::vector<ganrl::TrainConfig> configs;
  for (const double v : values) {
    configs.push_back(cfg);
    apply_sweep_value(configs.back(), param, v);
  }
  const Dataset test = make_test_set(p);
  std::vector<SweepCell> cells;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::string v = format_value(values[i]);
    const std::string name = std::string(sweep_param_name(param)) + "_" + v;
    for (const std::uint64_t seed : seeds)
      cells.push_back({sweep_param_name(param), v, seed, run_gan(configs[i], p, seed, test, cell_dir(out_dir, name, seed))});
  }
  return cells;
}

std::string sweep_table(const std::vector<SweepCell>& cells) {
  std::ostringstream os;
  os << "param,value,seed,test_auroc,train_auroc_tail\n" << std::setprecision(10);
  for (const auto& c : cells) {
    os << c.param << ',' << c.value << ',' << c.seed << ',';
    if (c.outcome.test_auroc) os << *c.outcome.test_auroc;
    os << ',';
    if (c.outcome.train_auroc_tail) os << *c.outcome.train_auroc_tail;
    os << '\n';
  }
  return os.str();
}

AblationKind parse_ablation(const std::string& name) {
  if (name == "no_attention") return AblationKind::no_attention;
  if (name == "wd_reward") return AblationKind::wd_reward;
  if (name == "frozen_encoder") return AblationKind::frozen_encoder;
  throw ValidationError("unknown ablation '" + name + "' (no_attention|wd_reward|frozen_encoder)");
}

const char* ablation_name(AblationKind k) {
  switch (k) {
    case AblationKind::no_attention: return "no_attention";
    case AblationKind::wd_reward: return "wd_reward";
    case AblationKind::frozen_encoder: return "frozen_encoder";
  }
  return "?";
}

void apply_ablation(ganrl::TrainConfig& cfg, AblationKind k) {
  switch (k) {
    case AblationKind::no_attention: cfg.no_attention = true; break;
    case AblationKind::wd_reward: cfg.wd_reward = true; break;
    case AblationKind::frozen_encoder: cfg.frozen_encoder = true; break;
  }
}

EvalReport ablation_run(AblationKind kind, const ganrl::TrainConfig& cfg, const Protocol& p,
                        const std::vector<std::uint64_t>& seeds, const std::optional<fs::path>& out_dir) {
  ganrl::TrainConfig ablated = cfg;
  apply_ablation(ablated, kind);
  EvalReport rep(fingerprint({{"config", cfg.to_json()}, {"ablation", ablation_name(kind)}, {"protocol", p.to_json()},
                              {"seeds", seeds}}));
  const Dataset test = make_test_set(p);
  for (const std::uint64_t seed : seeds) {
    add_outcome(rep, "gan_rl", seed, run_gan(cfg, p, seed, test, cell_dir(out_dir, "gan_rl", seed)));
    add_outcome(rep, ablation_name(kind), seed,
                run_gan(ablated, p, seed, test, cell_dir(out_dir, ablation_name(kind), seed)));
  }
  return rep;
}

// ---------------------------------------------------------------- csv + plots

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::size_t CsvTable::column(const std::string& name, const fs::path& origin) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw DatasetIoError(origin.string() + ": missing column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

CsvTable read_csv_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetIoError("cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw DatasetIoError(path.string() + ": empty CSV");
  if (line.back() == '\r') line.pop_back();
  t.columns = split_csv(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != t.columns.size()) {
      throw DatasetIoError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                           std::to_string(t.columns.size()) + " cells, got " + std::to_string(cells.size()));
    }
    std::vector<double> row(cells.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].empty()) continue;
      char* end = nullptr;
      const double v = std::strtod(cells[i].c_str(), &end);
      if (end == cells[i].c_str() + cells[i].size()) row[i] = v;
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

Band aggregate(const std::vector<CsvTable>& tables, const std::vector<fs::path>& origins, const std::string& x_column,
               const std::string& metric) {
  std::map<double, std::vector<double>> by_x;
  for (std::size_t f = 0; f < tables.size(); ++f) {
    const std::size_t xc = tables[f].column(x_column, origins[f]);
    const std::size_t mc = tables[f].column(metric, origins[f]);
    for (const auto& row : tables[f].rows)
      if (!std::isnan(row[xc]) && !std::isnan(row[mc])) by_x[row[xc]].push_back(row[mc]);
  }
  Band b;
  for (const auto& [x, vals] : by_x) {
    const MeanSe s = mean_se(vals);
    b.x.push_back(x);
    b.mean.push_back(s.mean);
    b.se.push_back(s.se);
  }
  return b;
}

namespace {

constexpr double kPanelW = 720, kPanelH = 220, kLeft = 70, kRight = 20, kTop = 30, kBottom = 40;
constexpr std::size_t kMaxPoints = 1000;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_svg(const std::vector<std::pair<std::string, Band>>& panels, const std::string& x_label) {
  const double height = kPanelH * static_cast<double>(std::max<std::size_t>(panels.size(), 1));
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kPanelW << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t pi = 0; pi < panels.size(); ++pi) {
    const auto& [title, band] = panels[pi];
    const double y0 = kPanelH * static_cast<double>(pi);
    const double pw = kPanelW - kLeft - kRight, ph = kPanelH - kTop - kBottom;
    os << "<g transform=\"translate(0," << num(y0) << ")\">\n";
    os << "<text x=\"" << kLeft << "\" y=\"18\" font-weight=\"bold\">" << xml_escape(title) << "</text>\n";
    os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    if (band.x.empty()) {
      os << "<text x=\"" << kLeft + 10 << "\" y=\"" << kTop + 20 << "\">no data</text>\n</g>\n";
      continue;
    }
    const std::size_t stride = (band.x.size() + kMaxPoints - 1) / kMaxPoints;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < band.x.size(); i += stride) idx.push_back(i);
    if (idx.back() != band.x.size() - 1) idx.push_back(band.x.size() - 1);

    double xmin = band.x.front(), xmax = band.x.back();
    double ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
    for (const std::size_t i : idx) {
      ymin = std::min(ymin, band.mean[i] - band.se[i]);
      ymax = std::max(ymax, band.mean[i] + band.se[i]);
    }
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) {
      ymin -= 0.5;
      ymax += 0.5;
    }
    const auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
    const auto py = [&](double y) { return kTop + (ymax - y) / (ymax - ymin) * ph; };

    os << "<polygon fill=\"#1f77b4\" fill-opacity=\"0.25\" stroke=\"none\" points=\"";
    for (const std::size_t i : idx) os << num(px(band.x[i])) << ',' << num(py(band.mean[i] + band.se[i])) << ' ';
    for (auto it = idx.rbegin(); it != idx.rend(); ++it)
      os << num(px(band.x[*it])) << ',' << num(py(band.mean[*it] - band.se[*it])) << ' ';
    os << "\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.2\" points=\"";
    for (const std::size_t i : idx) os << num(px(band.x[i])) << ',' << num(py(band.mean[i])) << ' ';
    os << "\"/>\n";

    os << "<text x=\"" << kLeft - 5 << "\" y=\"" << num(kTop + 4) << "\" text-anchor=\"end\">" << label(ymax)
       << "</text>\n";
    os << "<text x=\"" << kLeft - 5 << "\" y=\"" << num(kTop + ph) << "\" text-anchor=\"end\">" << label(ymin)
       << "</text>\n";
    os << "<text x=\"" << kLeft << "\" y=\"" << num(kTop + ph + 15) << "\" text-anchor=\"middle\">" << label(xmin)
       << "</text>\n";
    os << "<text x=\"" << kLeft + pw << "\" y=\"" << num(kTop + ph + 15) << "\" text-anchor=\"middle\">"
       << label(xmax) << "</text>\n";
    os << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kTop + ph + 30) << "\" text-anchor=\"middle\">"
       << xml_escape(x_label) << "</text>\n";
    os << "</g>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void emit_plots(const std::vector<fs::path>& csvs, const fs::path& out_svg, const std::vector<std::string>& metrics) {
  if (csvs.empty()) throw DatasetIoError("no metrics CSVs to plot");
  std::vector<CsvTable> tables;
  for (const auto& p : csvs) tables.push_back(read_csv_table(p));
  std::vector<std::pair<std::string, Band>> panels;
  for (const auto& m : metrics) {
    const std::string title = m + " (mean +- se, " + std::to_string(csvs.size()) + " runs)";
    panels.emplace_back(title, aggregate(tables, csvs, "episode", m));
  }
  if (out_svg.has_parent_path()) fs::create_directories(out_svg.parent_path());
  std::ofstream out(out_svg);
  if (!out) throw DatasetIoError("cannot write " + out_svg.string());
  out << render_svg(panels, "episode");
}

void emit_plots(const fs::path& in, const fs::path& out_svg, const std::vector<std::string>& metrics) {
  std::vector<fs::path> csvs;
  if (fs::is_regular_file(in)) {
    csvs.push_back(in);
  } else if (fs::is_directory(in)) {
    for (const auto& e : fs::recursive_directory_iterator(in))
      if (e.is_regular_file() && e.path().filename() == "metrics.csv") csvs.push_back(e.path());
    std::sort(csvs.begin(), csvs.end());
  } else {
    throw DatasetIoError("cannot read " + in.string());
  }
  if (csvs.empty()) throw DatasetIoError("no metrics.csv found under " + in.string());
  emit_plots(csvs, out_svg, metrics);
}

}  // namespace evod::eval
