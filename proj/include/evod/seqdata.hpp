#pragma once

// Event sequences, labeled sequences and datasets, plus the line-delimited
// JSON dataset file format.
//
// File layout: the first line is a header object
//   {"format":"evod-dataset","version":1,"beta":0.8,"count":I,"meta":{...}}
// followed by one record per line
//   {"horizon":10.0,"times":[...],"labels":[...]}
// Reals are written with 17 significant digits, so a write/read cycle is
// bit-exact.

#include "evod/rng.hpp"

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace evod {

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DatasetIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Strictly increasing event times in (0, horizon].
class EventSequence {
 public:
  EventSequence() = default;
  EventSequence(std::vector<double> times, double horizon);

  /// Throws ValidationError if the arguments would violate the invariants.
  static void validate(std::span<const double> times, double horizon);

  const std::vector<double>& times() const noexcept { return times_; }
  double horizon() const noexcept { return horizon_; }
  std::size_t size() const noexcept { return times_.size(); }
  bool empty() const noexcept { return times_.empty(); }
  double operator[](std::size_t i) const { return times_[i]; }

  /// First n events, same horizon.
  EventSequence prefix(std::size_t n) const;

  bool operator==(const EventSequence&) const = default;

 private:
  std::vector<double> times_;
  double horizon_ = 0.0;
};

/// Event sequence with one 0/1 label per event (1 = injected outlier).
struct LabeledSequence {
  EventSequence seq;
  std::vector<int> labels;

  LabeledSequence() = default;
  LabeledSequence(EventSequence s, std::vector<int> l);
  /// All events labeled 0.
  static LabeledSequence clean(EventSequence s);

  bool is_clean() const noexcept;
  std::size_t outlier_count() const noexcept;

  bool operator==(const LabeledSequence&) const = default;
};

struct Dataset {
  std::vector<LabeledSequence> sequences;
  double beta = 1.0;
  std::map<std::string, std::string> meta;

  std::size_t size() const noexcept { return sequences.size(); }
  std::size_t clean_count() const noexcept;

  bool operator==(const Dataset&) const = default;
};

void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// Deterministic disjoint partition: a shuffled prefix of train_count
/// sequences and the remainder.
std::pair<Dataset, Dataset> split(const Dataset& ds, std::size_t train_count, RngStream& rng);

}  // namespace evod
