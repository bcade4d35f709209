#pragma once

// Clean point-process simulation by thinning, constant-rate outlier injection
// and labeled dataset assembly.

#include "evod/rng.hpp"
#include "evod/seqdata.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace evod::tpp {

/// lambda(t) = offset + amplitude * sin(frequency * t)
struct PoissonSpec {
  double horizon = 10.0;
  double amplitude = 1.0;
  double frequency = 2.0;
  double offset = 1.0;

  void validate() const;
  double intensity(double t) const;
  double upper_bound() const;
};

/// lambda(t) = mu + sum_{t_n < t} sum_u alpha_u * decay_u * exp(-decay_u * (t - t_n))
struct HawkesSpec {
  double mu = 1.0;
  std::vector<double> alpha{0.01, 0.02, 0.01};
  std::vector<double> decay{1.0, 3.0, 7.0};
  double horizon = 10.0;

  void validate() const;
  double branching_ratio() const;
};

/// Constant-intensity outlier process.
struct OutlierSpec {
  double alpha = 0.5;
  void validate() const;
};

using ProcessSpec = std::variant<PoissonSpec, HawkesSpec>;

double horizon_of(const ProcessSpec& spec);

EventSequence simulate_poisson(const PoissonSpec& spec, RngStream& rng);
EventSequence simulate_hawkes(const HawkesSpec& spec, RngStream& rng);
EventSequence simulate(const ProcessSpec& spec, RngStream& rng);

/// Conditional intensity at time t given the events of `history` strictly before t.
double hawkes_intensity(const HawkesSpec& spec, std::span<const double> history, double t);

/// Homogeneous Poisson points on (0, horizon] at the given rate.
std::vector<double> draw_homogeneous(double rate, double horizon, RngStream& rng);

/// Sorted merge of clean and injected times; injected points are labeled 1.
/// An injected point colliding with an existing time is moved by +1e-9 until
/// it is unique (and dropped if that pushes it past the horizon).
LabeledSequence merge_outliers(const EventSequence& clean, std::span<const double> injected);

LabeledSequence inject_outliers(const EventSequence& clean, const OutlierSpec& spec, RngStream& rng);

/// round(beta * count) clean sequences, the rest corrupted; order shuffled.
Dataset build_dataset(const ProcessSpec& process, const OutlierSpec& outliers, std::size_t count, double beta,
                      RngStream& rng);

}  // namespace evod::tpp
