#include <doctest.h>

#include "evod/checkpoint.hpp"
#include "evod/neural.hpp"
#include "gradcheck.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace evod;
using namespace evod::grad;
using namespace evod::nn;

namespace {

double largest_singular_value(const Mat& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  return Eigen::JacobiSVD<Eigen::MatrixXd>(e).singularValues()(0);
}

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "evod_test_neural";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("clstm decay closed form") {
  RngStream rng(1);
  Clstm cell("c", 1, rng);
  Tape t;
  ClstmState s;
  s.c = t.constant(Mat(1, 1, 2.0));
  s.c_bar = t.constant(Mat(1, 1, 0.0));
  s.delta = t.constant(Mat(1, 1, std::log(2.0)));
  s.o = t.constant(Mat(1, 1, 1.0));
  s.time = 0.0;
  const Decayed d = cell.decay(t, s, 1.0);
  CHECK(d.c.item() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(d.h.item() == doctest::Approx(std::tanh(1.0)).epsilon(1e-12));

  // No elapsed time returns the stored cell exactly.
  CHECK(cell.decay(t, s, 0.0).c.item() == 2.0);
  CHECK_THROWS_AS(cell.decay(t, s, -0.5), std::invalid_argument);

  const std::vector<double> times{0.0, 1.0, 2.0};
  const Decayed many = cell.decay_many(t, s, times);
  CHECK(many.c.value()(0, 0) == doctest::Approx(2.0));
  CHECK(many.c.value()(1, 0) == doctest::Approx(1.0));
  CHECK(many.c.value()(2, 0) == doctest::Approx(0.5));
}

TEST_CASE("clstm state stays finite with positive decay rates") {
  RngStream rng(2);
  Clstm cell("c", 8, rng);
  const EventSequence seq({0.1, 0.5, 0.51, 3.0, 9.9}, 10.0);
  Tape t(false);
  const auto run = cell.run(t, seq);
  REQUIRE(run.hidden.size() == 5);
  for (const auto& st : run.states) {
    for (double d : st.delta.value().values()) CHECK(d > 0.0);
    CHECK(st.c.value().all_finite());
  }
  for (const Var& h : run.hidden)
    for (double v : h.value().values()) CHECK(std::abs(v) < 1.0);
}

TEST_CASE("clstm and heads pass finite differences") {
  RngStream rng(3);
  Clstm cell("c", 4, rng);
  CausalAttention attn("a", 4, rng);
  Mlp head("m", 4, 5, 2, rng);
  SpectralLinear sl("s", 4, 3, rng);
  // Move the layer-norm affine away from identity so its gradient matters.
  for (double& v : attn.norm.gamma.value.values()) v = rng.uniform(0.5, 1.5);
  for (double& v : attn.norm.beta.value.values()) v = rng.uniform(-0.5, 0.5);
  const EventSequence seq({0.3, 0.9, 1.0, 2.2}, 4.0);
  ParamList params;
  cell.collect(params);
  attn.collect(params);
  head.collect(params);
  sl.collect(params);
  auto loss = [&](Tape& t) {
    const auto run = cell.run(t, seq);
    Var x = concat_rows(run.hidden);
    Var phi = attn.forward(t, x);
    Var lp = log_softmax_rows(head.forward(t, phi));
    Var s = sl.forward(t, phi);
    const std::vector<double> probe{2.5, 3.0, 4.0};
    Var tail = cell.decay_many(t, run.final_state, probe).h;
    return add(add(mean(lp), sum(square(s))), sum(tail));
  };
  const auto res = testing::check_gradients(params, loss);
  INFO(res.worst);
  CHECK(res.checked > 300);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("attention is causal") {
  RngStream rng(4);
  Clstm cell("c", 6, rng);
  CausalAttention attn("a", 6, rng);
  const EventSequence full({0.5, 1.0, 2.0, 2.5, 4.0, 7.0}, 10.0);
  const EventSequence altered({0.5, 1.0, 2.0, 3.1, 3.2, 9.0}, 10.0);
  Tape t(false);
  const Mat a = attn.forward(t, concat_rows(cell.run(t, full).hidden)).value();
  const Mat b = attn.forward(t, concat_rows(cell.run(t, altered).hidden)).value();
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t k = 0; k < 6; ++k) CHECK(a(n, k) == b(n, k));
  bool later_differs = false;
  for (std::size_t k = 0; k < 6; ++k) later_differs |= a(3, k) != b(3, k);
  CHECK(later_differs);

  // Prefix runs agree bit for bit with the corresponding rows of the full run.
  const Mat p = attn.forward(t, concat_rows(cell.run(t, full.prefix(4)).hidden)).value();
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t k = 0; k < 6; ++k) CHECK(p(n, k) == a(n, k));
}

TEST_CASE("identical keys give uniform causal weights") {
  RngStream rng(5);
  CausalAttention attn("a", 3, rng);
  attn.wk.value.fill(0.0);
  Tape t(false);
  Mat x(4, 3);
  for (double& v : x.values()) v = rng.uniform(-1.0, 1.0);
  attn.forward(t, t.constant(x));
  const Mat& w = attn.last_weights();
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      if (j <= i) {
        CHECK(w(i, j) == doctest::Approx(1.0 / static_cast<double>(i + 1)).epsilon(1e-12));
      } else {
        CHECK(w(i, j) == 0.0);
      }
    }
  }
}

TEST_CASE("spectral normalization") {
  RngStream rng(6);
  SUBCASE("diagonal weight") {
    SpectralLinear sl("s", 2, 2, rng);
    sl.weight.value = Mat(2, 2, {3.0, 0.0, 0.0, 1.0});
    sl.power_iteration(50);
    const Mat w = sl.effective_weight();
    CHECK(w(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(w(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
  }
  SUBCASE("orthogonal weight is unchanged") {
    SpectralLinear sl("s", 2, 2, rng);
    const double c = std::cos(0.7), s = std::sin(0.7);
    sl.weight.value = Mat(2, 2, {c, -s, s, c});
    sl.power_iteration(5);
    const Mat w = sl.effective_weight();
    for (std::size_t i = 0; i < 4; ++i) CHECK(w[i] == doctest::Approx(sl.weight.value[i]).epsilon(1e-9));
  }
  SUBCASE("zero input yields the bias") {
    SpectralLinear sl("s", 5, 3, rng);
    sl.bias.value = Mat(1, 3, {0.1, -0.2, 0.3});
    Tape t(false);
    CHECK(sl.forward(t, t.constant(Mat(2, 5))).value() == Mat(2, 3, {0.1, -0.2, 0.3, 0.1, -0.2, 0.3}));
  }
  SUBCASE("warm start bounds the largest singular value against an SVD oracle") {
    for (int trial = 0; trial < 20; ++trial) {
      SpectralLinear sl("s", 64, 64, rng);
      const double top = largest_singular_value(sl.effective_weight());
      CHECK(top <= 1.01);
      CHECK(top >= 0.95);
    }
  }
}

TEST_CASE("zero-initialised linear layer outputs zeros") {
  RngStream rng(7);
  Mlp m("m", 3, 4, 2, rng);
  m.last().zero_init();
  Tape t(false);
  Mat x(5, 3);
  for (double& v : x.values()) v = rng.uniform(-3.0, 3.0);
  const Mat p = softmax_rows(m.forward(t, t.constant(x))).value();
  for (double v : p.values()) CHECK(v == 0.5);
}

TEST_CASE("parameter checkpoints") {
  RngStream rng(8);
  Clstm a("c", 5, rng);
  Clstm b("c", 5, rng);
  ParamList pa, pb;
  a.collect(pa);
  b.collect(pb);
  const auto manifest = temp_dir() / "clstm.json";
  save_params(pa, manifest, {{"episode", 7}});

  SUBCASE("round trip is exact") {
    const auto extra = load_params(pb, manifest);
    CHECK(extra.at("episode") == 7);
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
  }
  SUBCASE("truncated blob") {
    const auto blob = temp_dir() / "clstm.bin";
    std::filesystem::resize_file(blob, std::filesystem::file_size(blob) - 8);
    CHECK_THROWS_AS(load_params(pb, manifest), CheckpointError);
  }
  SUBCASE("version mismatch") {
    std::ifstream in(manifest);
    nlohmann::json m;
    in >> m;
    m["version"] = 99;
    std::ofstream(manifest) << m.dump();
    try {
      load_params(pb, manifest);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(std::string(e.what()).find("version 99") != std::string::npos);
    }
  }
  SUBCASE("shape mismatch leaves the model untouched") {
    Clstm wide("c", 6, rng);
    ParamList pw;
    wide.collect(pw);
    const Mat before = pw[0]->value;
    CHECK_THROWS_AS(load_params(pw, manifest), CheckpointError);
    CHECK(pw[0]->value == before);
  }
}
