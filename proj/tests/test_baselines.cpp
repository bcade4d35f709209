#include <doctest.h>

#include "evod/baselines.hpp"
#include "evod/metrics.hpp"
#include "evod/tppsim.hpp"
#include "gradcheck.hpp"

#include <cmath>

using namespace evod;
using namespace evod::baselines;

namespace {

Dataset constant_rate(double rate, std::size_t count, std::uint64_t seed) {
  RngStream rng(seed);
  Dataset ds;
  ds.beta = 1.0;
  for (std::size_t i = 0; i < count; ++i) {
    EventSequence s(tpp::draw_homogeneous(rate, 10.0, rng), 10.0);
    ds.sequences.push_back(LabeledSequence::clean(std::move(s)));
  }
  return ds;
}

}  // namespace

TEST_CASE("rnd scores") {
  const EventSequence s({1.0, 2.0, 3.0, 4.0}, 10.0);
  RngStream a(1), b(1);
  const auto x = rnd_scores(s, a);
  CHECK(x == rnd_scores(s, b));
  for (double v : x) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  RngStream data_rng(2), score_rng(3);
  const Dataset ds = tpp::build_dataset(tpp::PoissonSpec{}, tpp::OutlierSpec{0.5}, 300, 0.8, data_rng);
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& ls : ds.sequences) {
    for (double v : rnd_scores(ls.seq, score_rng)) scores.push_back(v);
    labels.insert(labels.end(), ls.labels.begin(), ls.labels.end());
  }
  CHECK(std::abs(*auroc(scores, labels) - 0.5) < 0.05);
}

TEST_CASE("len scores") {
  const auto s = len_scores(EventSequence({1.0, 1.1, 5.0}, 10.0));
  CHECK(s[0] == doctest::Approx(-1.0));
  CHECK(s[1] == doctest::Approx(-0.1));
  CHECK(s[2] == doctest::Approx(-3.9));
  CHECK(std::max_element(s.begin(), s.end()) - s.begin() == 1);
  CHECK(len_scores(EventSequence({}, 10.0)).empty());
}

TEST_CASE("ppod NLL passes finite differences") {
  PpodConfig cfg;
  cfg.hidden = 4;
  cfg.mc_samples = 5;
  PpodModel model(cfg, 4);
  const EventSequence s({0.7, 1.9, 2.0, 4.4}, 6.0);
  const auto res = testing::check_gradients(model.params(), [&](grad::Tape& t) {
    RngStream mc(5);  // same samples for every evaluation
    return model.nll(t, s, mc);
  });
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("ppod recovers a constant rate") {
  // Maximum-likelihood constant rate: total events / (sequences * T).
  const Dataset ds = constant_rate(0.5, 200, 6);
  double events = 0.0;
  for (const auto& ls : ds.sequences) events += static_cast<double>(ls.seq.size());
  const double mle = events / (200.0 * 10.0);
  CHECK(mle == doctest::Approx(0.5).epsilon(0.1));

  PpodModel model(PpodConfig{}, 7);
  RngStream rng(8);
  ppod_train(model, ds, rng);
  std::vector<double> grid;
  for (int i = 1; i <= 100; ++i) grid.push_back(0.1 * i);
  double total = 0.0;
  for (std::size_t i = 0; i < 20; ++i) {
    for (double v : model.intensity_path(ds.sequences[i].seq, grid)) total += v;
  }
  const double mean_lambda = total / (20.0 * 100.0);
  CHECK(mean_lambda > 0.4);
  CHECK(mean_lambda < 0.6);
}

TEST_CASE("ppod NLL falls over the first epochs") {
  RngStream gen(9);
  const Dataset ds = tpp::build_dataset(tpp::PoissonSpec{}, tpp::OutlierSpec{0.5}, 40, 0.8, gen);
  PpodModel model(PpodConfig{}, 10);
  RngStream rng(11);
  const auto log = ppod_train(model, ds, rng, true);
  REQUIRE(log.epoch_nll.size() == 10);
  int rises = 0;
  for (std::size_t i = 1; i < log.epoch_nll.size(); ++i) rises += log.epoch_nll[i] > log.epoch_nll[i - 1];
  CHECK(rises <= 1);
  CHECK(log.epoch_nll.back() < log.epoch_nll.front());
}

TEST_CASE("ppod scores") {
  PpodConfig cfg;
  cfg.hidden = 8;
  PpodModel model(cfg, 12);
  const EventSequence s({0.3, 1.0, 1.2, 4.0, 8.5}, 10.0);
  SUBCASE("online") {
    const auto full = model.scores(s);
    for (std::size_t n = 0; n < s.size(); ++n) CHECK(model.scores(s.prefix(n + 1))[n] == full[n]);
  }
  SUBCASE("constant intensity gives tied scores") {
    model.head().weight.value.fill(0.0);
    const auto sc = model.scores(s);
    for (double v : sc) CHECK(v == sc[0]);
    CHECK(*auroc(sc, std::vector<int>{1, 0, 0, 1, 0}) == 0.5);
  }
  SUBCASE("higher intensity lowers the score") {
    const auto lam = model.event_intensities(s);
    const auto sc = model.scores(s);
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = 0; j < s.size(); ++j)
        if (lam[i] > lam[j]) CHECK(sc[i] < sc[j]);
  }
}
