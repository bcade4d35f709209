#include <doctest.h>

#include "evod/tppsim.hpp"

#include <cmath>
#include <numeric>

using namespace evod;
using namespace evod::tpp;

namespace {

struct Moments {
  double mean = 0.0;
  double stderr_ = 0.0;
};

template <class F>
Moments count_moments(int runs, F&& draw) {
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < runs; ++i) {
    const double n = static_cast<double>(draw());
    s += n;
    s2 += n * n;
  }
  const double m = s / runs;
  const double var = (s2 - runs * m * m) / (runs - 1);
  return {m, std::sqrt(var / runs)};
}

// Composite Simpson rule; independent of the thinning sampler.
template <class F>
double simpson(F&& f, double a, double b, int n = 20000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// Cluster (branching) representation of the Hawkes process: immigrants at rate
// mu, each event has Poisson(sum alpha) children whose delays follow the
// normalized kernel mixture. Shares nothing with the thinning sampler.
std::size_t branching_hawkes_count(const HawkesSpec& spec, RngStream& rng) {
  const double ratio = spec.branching_ratio();
  std::vector<double> pending = draw_homogeneous(spec.mu, spec.horizon, rng);
  std::size_t total = 0;
  while (!pending.empty()) {
    const double parent = pending.back();
    pending.pop_back();
    ++total;
    // Poisson(ratio) via inversion.
    int children = 0;
    double p = std::exp(-ratio), cdf = p;
    const double u = rng.uniform();
    while (u > cdf) {
      ++children;
      p *= ratio / children;
      cdf += p;
    }
    for (int c = 0; c < children; ++c) {
      double pick = rng.uniform() * ratio;
      std::size_t k = 0;
      while (k + 1 < spec.alpha.size() && pick >= spec.alpha[k]) pick -= spec.alpha[k++];
      const double child = parent + rng.exponential(spec.decay[k]);
      if (child <= spec.horizon) pending.push_back(child);
    }
  }
  return total;
}

}  // namespace

TEST_CASE("homogeneous poisson mean count") {
  RngStream rng(11);
  PoissonSpec spec{10.0, 0.0, 2.0, 0.5};
  const Moments m = count_moments(10000, [&] { return simulate_poisson(spec, rng).size(); });
  CHECK(std::abs(m.mean - 5.0) < 3.0 * m.stderr_);
}

TEST_CASE("sinusoidal poisson mean count matches quadrature") {
  PoissonSpec spec;  // 1 + sin(2t) on (0, 10]
  const double expected = simpson([&](double t) { return spec.intensity(t); }, 0.0, 10.0);
  CHECK(expected == doctest::Approx(10.2960).epsilon(1e-5));
  RngStream rng(12);
  const Moments m = count_moments(10000, [&] { return simulate_poisson(spec, rng).size(); });
  CHECK(std::abs(m.mean - expected) < 3.0 * m.stderr_);
}

TEST_CASE("zero horizon gives an empty sequence") {
  RngStream rng(1);
  PoissonSpec spec;
  spec.horizon = 0.0;
  CHECK(simulate_poisson(spec, rng).empty());
}

TEST_CASE("poisson spec validation") {
  PoissonSpec bad;
  bad.offset = 0.5;  // amplitude 1 would allow negative intensity
  RngStream rng(1);
  CHECK_THROWS_AS(simulate_poisson(bad, rng), ValidationError);
}

TEST_CASE("hawkes without excitation is homogeneous poisson") {
  HawkesSpec spec;
  spec.alpha = {0.0, 0.0, 0.0};
  RngStream rng(13);
  const Moments m = count_moments(10000, [&] { return simulate_hawkes(spec, rng).size(); });
  CHECK(std::abs(m.mean - 10.0) < 3.0 * m.stderr_);
}

TEST_CASE("hawkes defaults agree with the branching oracle") {
  HawkesSpec spec;
  RngStream a(14), b(15);
  const Moments thin = count_moments(10000, [&] { return simulate_hawkes(spec, a).size(); });
  const Moments oracle = count_moments(20000, [&] { return branching_hawkes_count(spec, b); });
  // Stationary mean 10 / (1 - 0.04) = 10.417 minus edge effects near t = 0.
  CHECK(oracle.mean == doctest::Approx(10.0 / 0.96).epsilon(0.01));
  CHECK(std::abs(thin.mean - oracle.mean) / oracle.mean < 0.02);
}

TEST_CASE("hawkes conditional intensity after a single event") {
  HawkesSpec spec;
  spec.mu = 1.0;
  spec.alpha = {0.5};
  spec.decay = {1.0};
  const std::vector<double> history{1e-12};
  CHECK(hawkes_intensity(spec, history, 1.0) ==
        doctest::Approx(1.0 + 0.5 * 1.0 * std::exp(-1.0)).epsilon(1e-10));
}

TEST_CASE("unstable hawkes is rejected") {
  HawkesSpec spec;
  spec.alpha = {0.5, 0.6};
  spec.decay = {1.0, 2.0};
  RngStream rng(1);
  CHECK_THROWS_AS(simulate_hawkes(spec, rng), ValidationError);
}

TEST_CASE("outlier injection") {
  SUBCASE("alpha zero leaves the sequence alone") {
    RngStream rng(3);
    const EventSequence clean({1.0, 2.0, 3.5}, 10.0);
    const LabeledSequence out = inject_outliers(clean, OutlierSpec{0.0}, rng);
    CHECK(out.seq == clean);
    CHECK(out.is_clean());
  }
  SUBCASE("mean injected count is alpha * T") {
    RngStream rng(4);
    const EventSequence clean({}, 10.0);
    const Moments m =
        count_moments(10000, [&] { return inject_outliers(clean, OutlierSpec{0.5}, rng).outlier_count(); });
    CHECK(std::abs(m.mean - 5.0) < 3.0 * m.stderr_);
  }
  SUBCASE("merge order") {
    const std::vector<double> injected{2.0};
    const LabeledSequence out = merge_outliers(EventSequence({1.0, 3.0}, 10.0), injected);
    CHECK(out.seq.times() == std::vector<double>{1.0, 2.0, 3.0});
    CHECK(out.labels == std::vector<int>{0, 1, 0});
  }
  SUBCASE("ties are nudged forward") {
    const std::vector<double> injected{3.0, 3.0};
    const LabeledSequence out = merge_outliers(EventSequence({1.0, 3.0}, 10.0), injected);
    REQUIRE(out.seq.size() == 4);
    CHECK(out.seq[1] == 3.0);
    CHECK(out.labels[1] == 0);
    CHECK(out.seq[2] == 3.0 + 1e-9);
    CHECK(out.seq[3] == 3.0 + 2e-9);
    CHECK(out.labels[3] == 1);
  }
}

TEST_CASE("build_dataset clean fraction") {
  RngStream rng(100);
  const Dataset ds = build_dataset(PoissonSpec{}, OutlierSpec{0.5}, 1000, 0.8, rng);
  CHECK(ds.size() == 1000);
  CHECK(ds.clean_count() == 800);
  CHECK(ds.meta.at("process") == "poisson");

  RngStream all_clean(101);
  const Dataset pure = build_dataset(HawkesSpec{}, OutlierSpec{0.5}, 50, 1.0, all_clean);
  for (const auto& s : pure.sequences) CHECK(s.is_clean());

  RngStream corrupt(102);
  const Dataset dirty = build_dataset(PoissonSpec{}, OutlierSpec{0.5}, 200, 0.0, corrupt);
  std::size_t total_outliers = 0;
  for (const auto& s : dirty.sequences) total_outliers += s.outlier_count();
  // Every sequence went through injection: about 5 outliers each.
  CHECK(total_outliers > 800);
  CHECK(dirty.clean_count() < 5);
}

TEST_CASE("build_dataset is deterministic") {
  RngStream a(9), b(9);
  CHECK(build_dataset(HawkesSpec{}, OutlierSpec{0.5}, 100, 0.8, a) ==
        build_dataset(HawkesSpec{}, OutlierSpec{0.5}, 100, 0.8, b));
}

TEST_CASE("property: simulated sequences satisfy the sequence invariants") {
  RngStream rng(77);
  for (int i = 0; i < 500; ++i) {
    PoissonSpec p;
    p.horizon = rng.uniform(0.0, 20.0);
    p.offset = rng.uniform(0.0, 3.0);
    p.amplitude = rng.uniform(-p.offset, p.offset);
    HawkesSpec h;
    h.horizon = rng.uniform(0.0, 20.0);
    h.alpha = {rng.uniform(0.0, 0.45), rng.uniform(0.0, 0.45)};
    h.decay = {rng.uniform(0.1, 5.0), rng.uniform(0.1, 5.0)};
    for (const EventSequence& s : {simulate_poisson(p, rng), simulate_hawkes(h, rng)}) {
      CHECK_NOTHROW(EventSequence::validate(s.times(), s.horizon()));
    }
  }
}
