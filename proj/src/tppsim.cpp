#include "evod/tppsim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace evod::tpp {

namespace {

constexpr double kTieNudge = 1e-9;

std::string join(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void PoissonSpec::validate() const {
  if (!(std::isfinite(horizon) && horizon >= 0.0)) throw ValidationError("poisson: horizon must be >= 0");
  if (!std::isfinite(amplitude) || !std::isfinite(frequency) || !std::isfinite(offset)) {
    throw ValidationError("poisson: parameters must be finite");
  }
  if (offset < std::abs(amplitude)) {
    throw ValidationError("poisson: offset must be >= |amplitude| so the intensity stays non-negative");
  }
}

double PoissonSpec::intensity(double t) const { return offset + amplitude * std::sin(frequency * t); }

double PoissonSpec::upper_bound() const { return offset + std::abs(amplitude); }

void HawkesSpec::validate() const {
  if (!(std::isfinite(horizon) && horizon >= 0.0)) throw ValidationError("hawkes: horizon must be >= 0");
  if (!(std::isfinite(mu) && mu >= 0.0)) throw ValidationError("hawkes: baseline mu must be >= 0");
  if (alpha.size() != decay.size()) throw ValidationError("hawkes: alpha and decay lengths differ");
  for (double a : alpha)
    if (!(std::isfinite(a) && a >= 0.0)) throw ValidationError("hawkes: alpha entries must be >= 0");
  for (double b : decay)
    if (!(std::isfinite(b) && b > 0.0)) throw ValidationError("hawkes: decay entries must be > 0");
  if (branching_ratio() >= 1.0) {
    throw ValidationError("hawkes: unstable, sum of alpha is " + num(branching_ratio()) + " (must be < 1)");
  }
}

double HawkesSpec::branching_ratio() const { return std::accumulate(alpha.begin(), alpha.end(), 0.0); }

void OutlierSpec::validate() const {
  if (!(std::isfinite(alpha) && alpha >= 0.0)) throw ValidationError("outlier alpha must be >= 0");
}

double horizon_of(const ProcessSpec& spec) {
  return std::visit([](const auto& s) { return s.horizon; }, spec);
}

EventSequence simulate_poisson(const PoissonSpec& spec, RngStream& rng) {
  spec.validate();
  const double bound = spec.upper_bound();
  std::vector<double> times;
  if (bound <= 0.0 || spec.horizon <= 0.0) return EventSequence(std::move(times), spec.horizon);
  double t = 0.0;
  for (;;) {
    t += rng.exponential(bound);
    if (t > spec.horizon) break;
    if (rng.uniform() * bound <= spec.intensity(t)) times.push_back(t);
  }
  return EventSequence(std::move(times), spec.horizon);
}

EventSequence simulate_hawkes(const HawkesSpec& spec, RngStream& rng) {
  spec.validate();
  const std::size_t kernels = spec.alpha.size();
  // Per-kernel excitation at the current time t.
  std::vector<double> excitation(kernels, 0.0);
  std::vector<double> times;
  double t = 0.0;
  for (;;) {
    // Between events the intensity only decays, so its current value bounds
    // it until the next accepted point.
    const double bound = spec.mu + std::accumulate(excitation.begin(), excitation.end(), 0.0);
    if (!(bound > 0.0)) break;
    const double step = rng.exponential(bound);
    if (t + step > spec.horizon) break;
    t += step;
    double current = spec.mu;
    for (std::size_t u = 0; u < kernels; ++u) {
      excitation[u] *= std::exp(-spec.decay[u] * step);
      current += excitation[u];
    }
    if (rng.uniform() * bound <= current) {
      times.push_back(t);
      for (std::size_t u = 0; u < kernels; ++u) excitation[u] += spec.alpha[u] * spec.decay[u];
    }
  }
  return EventSequence(std::move(times), spec.horizon);
}

EventSequence simulate(const ProcessSpec& spec, RngStream& rng) {
  return std::visit(
      [&rng](const auto& s) -> EventSequence {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, PoissonSpec>)
          return simulate_poisson(s, rng);
        else
          return simulate_hawkes(s, rng);
      },
      spec);
}

double hawkes_intensity(const HawkesSpec& spec, std::span<const double> history, double t) {
  double lambda = spec.mu;
  for (double tn : history) {
    if (!(tn < t)) break;
    for (std::size_t u = 0; u < spec.alpha.size(); ++u)
      lambda += spec.alpha[u] * spec.decay[u] * std::exp(-spec.decay[u] * (t - tn));
  }
  return lambda;
}

std::vector<double> draw_homogeneous(double rate, double horizon, RngStream& rng) {
  std::vector<double> out;
  if (!(rate > 0.0) || !(horizon > 0.0)) return out;
  double t = 0.0;
  for (;;) {
    t += rng.exponential(rate);
    if (t > horizon) break;
    out.push_back(t);
  }
  return out;
}

LabeledSequence merge_outliers(const EventSequence& clean, std::span<const double> injected) {
  std::set<double> occupied(clean.times().begin(), clean.times().end());
  std::vector<double> extra(injected.begin(), injected.end());
  std::sort(extra.begin(), extra.end());
  std::vector<std::pair<double, int>> events;
  events.reserve(clean.size() + extra.size());
  for (double t : clean.times()) events.emplace_back(t, 0);
  for (double t : extra) {
    while (occupied.count(t) != 0) t += kTieNudge;
    if (t > clean.horizon()) continue;
    occupied.insert(t);
    events.emplace_back(t, 1);
  }
  std::sort(events.begin(), events.end());
  std::vector<double> times;
  std::vector<int> labels;
  times.reserve(events.size());
  labels.reserve(events.size());
  for (const auto& [t, label] : events) {
    times.push_back(t);
    labels.push_back(label);
  }
  return LabeledSequence(EventSequence(std::move(times), clean.horizon()), std::move(labels));
}

LabeledSequence inject_outliers(const EventSequence& clean, const OutlierSpec& spec, RngStream& rng) {
  spec.validate();
  const std::vector<double> injected = draw_homogeneous(spec.alpha, clean.horizon(), rng);
  return merge_outliers(clean, injected);
}

Dataset build_dataset(const ProcessSpec& process, const OutlierSpec& outliers, std::size_t count, double beta,
                      RngStream& rng) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ValidationError("beta must lie in [0, 1]");
  std::visit([](const auto& s) { s.validate(); }, process);
  outliers.validate();

  const auto clean_total = static_cast<std::size_t>(std::llround(beta * static_cast<double>(count)));
  // One independent engine per sequence, seeded up front.
  std::vector<std::uint64_t> seeds(count);
  for (auto& s : seeds) s = rng.next_u64();

  Dataset ds;
  ds.beta = beta;
  ds.sequences.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    RngStream local(seeds[i]);
    EventSequence clean = simulate(process, local);
    if (i < clean_total)
      ds.sequences.push_back(LabeledSequence::clean(std::move(clean)));
    else
      ds.sequences.push_back(inject_outliers(clean, outliers, local));
  }
  for (std::size_t i = ds.sequences.size(); i > 1; --i) {
    std::swap(ds.sequences[i - 1], ds.sequences[rng.uniform_int(i)]);
  }

  ds.meta["count"] = std::to_string(count);
  ds.meta["beta"] = num(beta);
  ds.meta["outlier_alpha"] = num(outliers.alpha);
  ds.meta["seed"] = std::to_string(rng.seed());
  ds.meta["stream"] = std::to_string(rng.stream());
  std::visit(
      [&ds](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        ds.meta["horizon"] = num(s.horizon);
        if constexpr (std::is_same_v<T, PoissonSpec>) {
          ds.meta["process"] = "poisson";
          ds.meta["amplitude"] = num(s.amplitude);
          ds.meta["frequency"] = num(s.frequency);
          ds.meta["offset"] = num(s.offset);
        } else {
          ds.meta["process"] = "hawkes";
          ds.meta["mu"] = num(s.mu);
          ds.meta["alpha"] = join(s.alpha);
          ds.meta["decay"] = join(s.decay);
        }
      },
      process);
  return ds;
}

}  // namespace evod::tpp
