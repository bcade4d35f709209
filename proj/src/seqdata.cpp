#include "evod/seqdata.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace evod {

using nlohmann::json;

EventSequence::EventSequence(std::vector<double> times, double horizon)
    : times_(std::move(times)), horizon_(horizon) {
  validate(times_, horizon_);
}

void EventSequence::validate(std::span<const double> times, double horizon) {
  if (!std::isfinite(horizon) || horizon < 0.0) {
    throw ValidationError("horizon must be finite and non-negative, got " + std::to_string(horizon));
  }
  double prev = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = times[i];
    if (!std::isfinite(t)) throw ValidationError("event " + std::to_string(i) + " has a non-finite time");
    if (!(t > prev)) {
      throw ValidationError(i == 0 ? "event times must be > 0, got " + std::to_string(t)
                                   : "event times must be strictly increasing (event " +
                                         std::to_string(i) + ")");
    }
    if (t > horizon) {
      throw ValidationError("event " + std::to_string(i) + " at " + std::to_string(t) +
                            " lies beyond the horizon " + std::to_string(horizon));
    }
    prev = t;
  }
}

EventSequence EventSequence::prefix(std::size_t n) const {
  EventSequence out;
  out.times_.assign(times_.begin(), times_.begin() + static_cast<std::ptrdiff_t>(std::min(n, times_.size())));
  out.horizon_ = horizon_;
  return out;
}

LabeledSequence::LabeledSequence(EventSequence s, std::vector<int> l) : seq(std::move(s)), labels(std::move(l)) {
  if (labels.size() != seq.size()) {
    throw ValidationError("label count " + std::to_string(labels.size()) + " differs from event count " +
                          std::to_string(seq.size()));
  }
  for (int v : labels) {
    if (v != 0 && v != 1) throw ValidationError("labels must be 0 or 1, got " + std::to_string(v));
  }
}

LabeledSequence LabeledSequence::clean(EventSequence s) {
  std::vector<int> l(s.size(), 0);
  return LabeledSequence(std::move(s), std::move(l));
}

bool LabeledSequence::is_clean() const noexcept {
  return std::all_of(labels.begin(), labels.end(), [](int v) { return v == 0; });
}

std::size_t LabeledSequence::outlier_count() const noexcept {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

std::size_t Dataset::clean_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(sequences.begin(), sequences.end(), [](const LabeledSequence& s) { return s.is_clean(); }));
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  if (!std::isfinite(ds.beta) || ds.beta < 0.0 || ds.beta > 1.0) {
    throw ValidationError("beta must lie in [0, 1], got " + std::to_string(ds.beta));
  }
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    const LabeledSequence& s = ds.sequences[i];
    try {
      EventSequence::validate(s.seq.times(), s.seq.horizon());
      if (s.labels.size() != s.seq.size()) throw ValidationError("label count differs from event count");
    } catch (const ValidationError& e) {
      throw ValidationError("sequence " + std::to_string(i) + ": " + e.what());
    }
  }
  std::ofstream out(path);
  if (!out) throw DatasetIoError("cannot open " + path.string() + " for writing");
  json header = {{"format", "evod-dataset"}, {"version", 1}, {"beta", ds.beta}, {"count", ds.sequences.size()}};
  header["meta"] = ds.meta;
  out << header.dump() << '\n';
  for (const LabeledSequence& s : ds.sequences) {
    json rec = {{"horizon", s.seq.horizon()}, {"times", s.seq.times()}, {"labels", s.labels}};
    out << rec.dump() << '\n';
  }
  out.flush();
  if (!out) throw DatasetIoError("write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetIoError("cannot open " + path.string());
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  auto parse = [&](const std::string& text) {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      throw DatasetIoError(path.string() + ":" + std::to_string(line_no) + ": parse error: " + e.what());
    }
  };
  if (!std::getline(in, line)) throw DatasetIoError(path.string() + ": empty file, missing header");
  ++line_no;
  const json header = parse(line);
  std::size_t expected = 0;
  try {
    if (header.at("format").get<std::string>() != "evod-dataset") throw DatasetIoError("unknown format");
    if (header.at("version").get<int>() != 1) throw DatasetIoError("unsupported version");
    ds.beta = header.at("beta").get<double>();
    expected = header.at("count").get<std::size_t>();
    if (header.contains("meta")) ds.meta = header.at("meta").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw DatasetIoError(path.string() + ":1: bad header: " + e.what());
  } catch (const DatasetIoError& e) {
    throw DatasetIoError(path.string() + ":1: bad header: " + e.what());
  }
  if (!(ds.beta >= 0.0 && ds.beta <= 1.0)) throw ValidationError(path.string() + ": beta outside [0, 1]");

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json rec = parse(line);
    std::vector<double> times;
    std::vector<int> labels;
    double horizon = 0.0;
    try {
      horizon = rec.at("horizon").get<double>();
      times = rec.at("times").get<std::vector<double>>();
      labels = rec.at("labels").get<std::vector<int>>();
    } catch (const json::exception& e) {
      throw DatasetIoError(path.string() + ":" + std::to_string(line_no) + ": bad record: " + e.what());
    }
    const std::size_t index = ds.sequences.size();
    try {
      ds.sequences.emplace_back(EventSequence(std::move(times), horizon), std::move(labels));
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ": sequence " + std::to_string(index) + " (line " +
                            std::to_string(line_no) + "): " + e.what());
    }
  }
  if (ds.sequences.size() != expected) {
    throw DatasetIoError(path.string() + ": header announces " + std::to_string(expected) + " sequences, found " +
                         std::to_string(ds.sequences.size()));
  }
  return ds;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, std::size_t train_count, RngStream& rng) {
  if (train_count > ds.size()) {
    throw std::invalid_argument("split: train_count " + std::to_string(train_count) + " exceeds dataset size " +
                                std::to_string(ds.size()));
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.uniform_int(i)]);
  }
  Dataset train, test;
  train.beta = test.beta = ds.beta;
  train.meta = test.meta = ds.meta;
  train.meta["split"] = "train";
  test.meta["split"] = "test";
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < train_count ? train : test).sequences.push_back(ds.sequences[order[k]]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace evod
