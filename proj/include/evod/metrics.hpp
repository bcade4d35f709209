#pragma once

// Scoring metrics shared by training, evaluation and the baselines.

#include "evod/seqdata.hpp"

#include <optional>
#include <span>
#include <vector>

namespace evod {

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Absent when either class is missing.
std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels);

/// Pads the shorter sequence with T and sums |a_i - b_i| over the padded
/// sorted pair. Throws ValidationError when the horizons differ.
double wasserstein_seq_distance(const EventSequence& a, const EventSequence& b);

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;  // sample std / sqrt(n); 0 for n < 2
  std::size_t n = 0;
};

MeanSe mean_se(std::span<const double> values);

}  // namespace evod
