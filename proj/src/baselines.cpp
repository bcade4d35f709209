#include "evod/baselines.hpp"

#include "evod/checkpoint.hpp"
#include "evod/optim.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace evod::baselines {

using nlohmann::json;
using namespace evod::grad;

namespace {

constexpr std::uint32_t kInitStream = 0x707064;  // "ppd"

}  // namespace

std::vector<double> rnd_scores(const EventSequence& seq, RngStream& rng) {
  std::vector<double> out(seq.size());
  for (double& s : out) s = rng.uniform();
  return out;
}

std::vector<double> len_scores(const EventSequence& seq) {
  std::vector<double> out(seq.size());
  double prev = 0.0;
  for (std::size_t n = 0; n < seq.size(); ++n) {
    out[n] = -(seq[n] - prev);
    prev = seq[n];
  }
  return out;
}

void PpodConfig::validate() const {
  if (hidden == 0) throw ValidationError("ppod hidden must be positive");
  if (epochs < 0) throw ValidationError("ppod epochs must be >= 0");
  if (!(lr > 0.0)) throw ValidationError("ppod lr must be > 0");
  if (batch == 0 || mc_samples == 0) throw ValidationError("ppod batch and mc_samples must be positive");
}

json PpodConfig::to_json() const {
  return {{"hidden", hidden},         {"epochs", epochs},   {"lr", lr}, {"batch", batch},
          {"mc_samples", mc_samples}, {"max_grad_norm", max_grad_norm}};
}

PpodConfig PpodConfig::from_json(const json& j) {
  PpodConfig c;
  c.hidden = j.at("hidden").get<std::size_t>();
  c.epochs = j.at("epochs").get<int>();
  c.lr = j.at("lr").get<double>();
  c.batch = j.at("batch").get<std::size_t>();
  c.mc_samples = j.at("mc_samples").get<std::size_t>();
  c.max_grad_norm = j.at("max_grad_norm").get<double>();
  return c;
}

PpodModel::PpodModel(const PpodConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  RngStream rng(seed, kInitStream);
  clstm_ = nn::Clstm("ppod.clstm", cfg_.hidden, rng);
  head_ = nn::Linear("ppod.head", cfg_.hidden, 1, rng);
}

Var PpodModel::intensity(Tape& t, Var h) { return softplus(head_.forward(t, h)); }

Var PpodModel::nll(Tape& t, const EventSequence& seq, RngStream& mc_rng) {
  const auto run = clstm_.run(t, seq);
  const std::size_t k = cfg_.mc_samples;
  std::vector<Var> terms;
  terms.reserve(2 * seq.size() + 1);
  std::vector<double> samples(k);
  for (std::size_t n = 0; n <= seq.size(); ++n) {
    // Interval n runs from the previous event (or 0) to t_n (or T).
    const nn::ClstmState s0 = n == 0 ? clstm_.initial_state(t) : run.states[n - 1];
    const double lo = s0.time;
    const double hi = n < seq.size() ? seq[n] : seq.horizon();
    if (n < seq.size()) terms.push_back(neg(log(intensity(t, clstm_.decay(t, s0, hi).h))));
    const double width = hi - lo;
    if (width <= 0.0) continue;
    for (double& s : samples) s = lo + width * mc_rng.uniform_pos();
    Var lam = intensity(t, clstm_.decay_many(t, s0, samples).h);  // k x 1
    terms.push_back(scale(sum(lam), width / static_cast<double>(k)));
  }
  Var total = t.constant(0.0);
  for (const Var& v : terms) total = add(total, v);
  return total;
}

std::vector<double> PpodModel::event_intensities(const EventSequence& seq) {
  Tape t(false);
  const auto run = clstm_.run(t, seq);
  std::vector<double> out(seq.size());
  for (std::size_t n = 0; n < seq.size(); ++n) {
    const nn::ClstmState s = n == 0 ? clstm_.initial_state(t) : run.states[n - 1];
    out[n] = intensity(t, clstm_.decay(t, s, seq[n]).h).item();
  }
  return out;
}

std::vector<double> PpodModel::intensity_path(const EventSequence& seq, std::span<const double> times) {
  Tape t(false);
  const auto run = clstm_.run(t, seq);
  std::vector<double> out;
  out.reserve(times.size());
  std::size_t idx = 0;  // number of events strictly before the query time
  for (double q : times) {
    while (idx < seq.size() && seq[idx] < q) ++idx;
    const nn::ClstmState s = idx == 0 ? clstm_.initial_state(t) : run.states[idx - 1];
    out.push_back(intensity(t, clstm_.decay(t, s, q).h).item());
  }
  return out;
}

std::vector<double> PpodModel::scores(const EventSequence& seq) {
  std::vector<double> lam = event_intensities(seq);
  for (double& v : lam) v = -std::log(v);
  return lam;
}

grad::ParamList PpodModel::params() {
  ParamList out;
  clstm_.collect(out);
  head_.collect(out);
  return out;
}

void PpodModel::save(const std::filesystem::path& manifest, const json& extra) {
  json meta = extra;
  meta["kind"] = "ppod";
  meta["config"] = cfg_.to_json();
  save_params(params(), manifest, meta);
}

std::unique_ptr<PpodModel> PpodModel::from_checkpoint(const std::filesystem::path& manifest) {
  const json extra = read_checkpoint_extra(manifest);
  if (extra.value("kind", "") != "ppod") throw CheckpointError(manifest.string() + ": not a PPOD checkpoint");
  auto m = std::make_unique<PpodModel>(PpodConfig::from_json(extra.at("config")), 0);
  load_params(m->params(), manifest);
  return m;
}

PpodTrainLog ppod_train(PpodModel& model, const Dataset& data, RngStream& rng, bool track_nll) {
  if (data.sequences.empty()) throw std::invalid_argument("ppod_train: empty dataset");
  const PpodConfig& cfg = model.config();
  const ParamList params = model.params();
  Adam opt(params, {cfg.lr});
  RngStream mc = rng.derive(rng.stream() + 1);
  PpodTrainLog log;
  std::vector<std::size_t> order(data.sequences.size());
  std::iota(order.begin(), order.end(), 0);

  auto mean_nll = [&] {
    RngStream fixed(rng.seed(), 0x6e6c6c);  // "nll"
    double s = 0.0;
    for (const auto& ls : data.sequences) {
      Tape t(false);
      s += model.nll(t, ls.seq, fixed).item();
    }
    return s / static_cast<double>(data.sequences.size());
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      opt.zero_grad();
      const double w = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        Tape t;
        t.backward(scale(model.nll(t, data.sequences[order[i]].seq, mc), w));
      }
      clip_grad_norm(params, cfg.max_grad_norm);
      opt.step();
    }
    if (track_nll) log.epoch_nll.push_back(mean_nll());
  }
  return log;
}

}  // namespace evod::baselines
