#include "property_suite.hpp"

#include "evod/agent.hpp"
#include "evod/baselines.hpp"
#include "evod/critic_d.hpp"
#include "evod/metrics.hpp"
#include "evod/rng.hpp"
#include "evod/seqdata.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <sstream>

namespace evod::testing {

namespace {

EventSequence random_sequence(RngStream& rng, std::size_t max_len = 14, double horizon = 10.0) {
  const std::size_t n = rng.uniform_int(max_len + 1);
  std::vector<double> t;
  while (t.size() < n) {
    const double x = rng.uniform(1e-3, horizon);
    if (std::find(t.begin(), t.end(), x) == t.end()) t.push_back(x);
  }
  std::sort(t.begin(), t.end());
  return EventSequence(std::move(t), horizon);
}

LabeledSequence random_labeled(RngStream& rng) {
  EventSequence s = random_sequence(rng);
  std::vector<int> labels(s.size());
  for (auto& l : labels) l = rng.bernoulli(0.3) ? 1 : 0;
  return LabeledSequence(std::move(s), std::move(labels));
}

std::string show(const EventSequence& s) {
  std::ostringstream os;
  os.precision(17);
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << "] T=" << s.horizon();
  return os.str();
}

double top_singular_value(const grad::Mat& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m(r, c);
  return Eigen::JacobiSVD<Eigen::MatrixXd>(e).singularValues()(0);
}

agent::GeneratorConfig small_generator(bool attention) {
  agent::GeneratorConfig g;
  g.hidden = 8;
  g.head_hidden = 8;
  g.attention = attention;
  return g;
}

/// Runs `check` on `cases` instances; it returns an empty string on success
/// or a counterexample description.
PropertyResult property(const std::string& name, std::size_t cases,
                        const std::function<std::string(std::size_t)>& check) {
  PropertyResult r{name, true, cases, ""};
  for (std::size_t i = 0; i < cases; ++i) {
    std::string failure = check(i);
    if (!failure.empty()) {
      r.passed = false;
      r.detail = "case " + std::to_string(i) + ": " + failure;
      return r;
    }
  }
  return r;
}

}  // namespace

std::vector<PropertyResult> run_property_suite(const PropertyOptions& opts) {
  std::vector<PropertyResult> out;
  const std::size_t n = opts.cases;

  {
    RngStream rng(opts.seed, 1);
    agent::Generator with(small_generator(true), opts.seed);
    agent::Generator without(small_generator(false), opts.seed + 1);
    out.push_back(property("causality (perturbing event m leaves scores before m unchanged)", n, [&](std::size_t i) {
      agent::Generator& gen = i % 2 ? with : without;
      EventSequence s = random_sequence(rng);
      if (s.size() < 2) return std::string();
      const std::size_t m = 1 + rng.uniform_int(s.size() - 1);
      std::vector<double> t = s.times();
      const double lo = t[m - 1], hi = m + 1 < t.size() ? t[m + 1] : s.horizon();
      t[m] = rng.uniform(lo, hi);
      if (t[m] <= lo || (m + 1 < t.size() && t[m] >= hi) || t[m] > s.horizon()) return std::string();
      const EventSequence p(t, s.horizon());
      const auto a = gen.outlier_scores(s), b = gen.outlier_scores(p);
      for (std::size_t k = 0; k < m; ++k)
        if (a[k] != b[k]) return "score " + std::to_string(k) + " moved when event " + std::to_string(m) + " did";
      return std::string();
    }));
  }
  {
    RngStream rng(opts.seed, 2);
    agent::Generator with(small_generator(true), opts.seed);
    agent::Generator without(small_generator(false), opts.seed + 1);
    baselines::PpodConfig pc;
    pc.hidden = 6;
    baselines::PpodModel ppod(pc, opts.seed);
    out.push_back(property("online prefix (generator, LEN and PPOD scores)", n, [&](std::size_t i) {
      agent::Generator& gen = i % 2 ? with : without;
      const EventSequence s = random_sequence(rng);
      const auto full = gen.outlier_scores(s);
      const auto len = baselines::len_scores(s);
      const auto pp = ppod.scores(s);
      for (std::size_t k = 0; k < s.size(); ++k) {
        const EventSequence pre = s.prefix(k + 1);
        if (gen.outlier_scores(pre)[k] != full[k]) return "generator differs at " + std::to_string(k) + " on " + show(s);
        if (baselines::len_scores(pre)[k] != len[k]) return "LEN differs at " + std::to_string(k);
        if (ppod.scores(pre)[k] != pp[k]) return "PPOD differs at " + std::to_string(k) + " on " + show(s);
      }
      return std::string();
    }));
  }
  {
    RngStream rng(opts.seed, 3);
    agent::Generator gen(small_generator(true), opts.seed);
    out.push_back(property("corrected sequence is an order-preserving subsequence", n, [&](std::size_t) {
      const EventSequence s = random_sequence(rng);
      const auto ro = agent::rollout(gen, s, rng, agent::RolloutMode::sample);
      const auto& c = ro.corrected.times();
      std::size_t j = 0;
      for (std::size_t k = 0; k < s.size() && j < c.size(); ++k)
        if (s[k] == c[j]) ++j;
      if (j != c.size() || ro.corrected.horizon() != s.horizon()) return "not a subsequence of " + show(s);
      std::size_t kept = 0;
      for (int a : ro.traj.actions) kept += a == 0;
      if (kept != c.size()) return std::string("kept count disagrees with actions");
      return std::string();
    }));
  }
  {
    RngStream rng(opts.seed, 4);
    const std::size_t updates = std::max<std::size_t>(n / 20, 3);
    agent::Generator gen(small_generator(true), opts.seed);
    agent::PpoConfig pc;
    pc.actor_lr = 1e-2;
    pc.critic_lr = 1e-2;
    pc.epochs = 3;
    agent::PpoLearner learner(gen, pc);
    out.push_back(property("PPO ratio is exactly 1 in the first epoch", updates, [&](std::size_t) {
      std::vector<agent::Trajectory> batch;
      for (int b = 0; b < 5; ++b) {
        auto ro = agent::rollout(gen, random_sequence(rng), rng, agent::RolloutMode::sample);
        ro.traj.set_terminal_reward(rng.uniform(-1.0, 1.0));
        batch.push_back(std::move(ro.traj));
      }
      if (std::all_of(batch.begin(), batch.end(), [](const auto& t) { return t.size() == 0; })) return std::string();
      const auto stats = learner.update(batch);
      if (stats.first_epoch_max_ratio_dev != 0.0) {
        return "max |rho - 1| = " + std::to_string(stats.first_epoch_max_ratio_dev);
      }
      return std::string();
    }));
  }
  {
    RngStream rng(opts.seed, 5);
    critic::Discriminator disc(critic::DiscriminatorConfig{}, opts.seed);
    double worst = 0.0;
    auto r = property("spectral bound: sigma_max(W / sigma_hat) <= 1.01 throughout training", opts.spectral_updates,
                      [&](std::size_t) {
                        std::vector<EventSequence> reals, fakes;
                        for (int b = 0; b < 8; ++b) {
                          reals.push_back(random_sequence(rng));
                          fakes.push_back(random_sequence(rng, 4));
                        }
                        disc.bce_update(reals, fakes);
                        for (const nn::SpectralLinear* layer : {&disc.head1(), &disc.head2()}) {
                          const double s = top_singular_value(layer->effective_weight());
                          worst = std::max(worst, s);
                          if (s > 1.01) return "sigma_max " + std::to_string(s);
                        }
                        return std::string();
                      });
    if (r.passed) r.detail = "worst sigma_max " + std::to_string(worst);
    out.push_back(r);
  }
  {
    RngStream rng(opts.seed, 6);
    out.push_back(property("AUROC equals brute-force pair counting (1e-12); complement for tie-free scores", n,
                           [&](std::size_t i) {
                             const std::size_t m = 2 + rng.uniform_int(40);
                             std::vector<double> s(m);
                             std::vector<int> l(m);
                             const bool ties = i % 2 == 0;
                             for (std::size_t k = 0; k < m; ++k) {
                               s[k] = ties ? static_cast<double>(rng.uniform_int(5)) : rng.uniform();
                               l[k] = rng.bernoulli(0.4) ? 1 : 0;
                             }
                             double wins = 0.0, pairs = 0.0;
                             for (std::size_t a = 0; a < m; ++a)
                               for (std::size_t b = 0; b < m; ++b)
                                 if (l[a] == 1 && l[b] == 0) {
                                   pairs += 1.0;
                                   wins += s[a] > s[b] ? 1.0 : s[a] == s[b] ? 0.5 : 0.0;
                                 }
                             const auto got = auroc(s, l);
                             if (pairs == 0.0) return got ? std::string("expected absent value") : std::string();
                             if (!got || std::abs(*got - wins / pairs) > 1e-12) return std::string("mismatch");
                             if (!ties) {
                               std::vector<double> neg(s);
                               for (auto& v : neg) v = -v;
                               if (std::abs(*got + *auroc(neg, l) - 1.0) > 1e-12) return std::string("complement");
                             }
                             return std::string();
                           }));
  }
  {
    RngStream rng(opts.seed, 7);
    out.push_back(property("Wasserstein distance is a metric on random triples", n, [&](std::size_t) {
      const EventSequence a = random_sequence(rng), b = random_sequence(rng), c = random_sequence(rng);
      const double ab = wasserstein_seq_distance(a, b), ba = wasserstein_seq_distance(b, a);
      const double bc = wasserstein_seq_distance(b, c), ac = wasserstein_seq_distance(a, c);
      if (ab != ba) return std::string("asymmetric");
      if (ab < 0.0) return std::string("negative");
      if (wasserstein_seq_distance(a, a) != 0.0) return std::string("d(a, a) != 0");
      if ((ab == 0.0) != (a == b)) return std::string("zero iff equal violated");
      if (ac > ab + bc + 1e-12) return "triangle: " + show(a) + " " + show(b) + " " + show(c);
      return std::string();
    }));
  }
  {
    RngStream rng(opts.seed, 8);
    const auto path = std::filesystem::temp_directory_path() / ("evod_property_roundtrip_" + std::to_string(opts.seed) + ".jsonl");
    const std::size_t files = std::max<std::size_t>(n / 10, 5);
    out.push_back(property("dataset write/read round trip is the identity", files, [&](std::size_t) {
      Dataset d;
      d.beta = rng.uniform();
      d.meta["process"] = "poisson";
      const std::size_t count = 1 + rng.uniform_int(20);
      for (std::size_t k = 0; k < count; ++k) d.sequences.push_back(random_labeled(rng));
      write_dataset(d, path);
      const Dataset back = read_dataset(path);
      if (!(back == d)) return std::string("round trip changed the dataset");
      for (const auto& ls : back.sequences)
        for (std::size_t k = 1; k < ls.seq.size(); ++k)
          if (!(ls.seq[k - 1] < ls.seq[k])) return std::string("non-monotone sequence");
      return std::string();
    }));
    std::filesystem::remove(path);
  }
  return out;
}

}  // namespace evod::testing
