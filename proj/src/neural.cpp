#include "evod/neural.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace evod::nn {

using namespace evod::grad;

Mat uniform_init(RngStream& rng, std::size_t rows, std::size_t cols, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
  Mat m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return m;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, RngStream& rng)
    : weight(name + ".weight", uniform_init(rng, in, out, in)), bias(name + ".bias", Mat(1, out)) {}

Var Linear::forward(Tape& t, Var x) { return add(matmul(x, t.param(weight)), t.param(bias)); }

void Linear::zero_init() {
  weight.value.fill(0.0);
  bias.value.fill(0.0);
}

void Linear::collect(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Mlp::Mlp(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, RngStream& rng)
    : l1_(name + ".l1", in, hidden, rng), l2_(name + ".l2", hidden, hidden, rng), l3_(name + ".l3", hidden, out, rng) {}

Var Mlp::forward(Tape& t, Var x) {
  Var h = tanh(l1_.forward(t, x));
  h = tanh(l2_.forward(t, h));
  return l3_.forward(t, h);
}

void Mlp::collect(ParamList& out) {
  l1_.collect(out);
  l2_.collect(out);
  l3_.collect(out);
}

// ---------------------------------------------------------------- SpectralLinear

namespace {

constexpr double kSigmaFloor = 1e-12;

void normalize(Mat& m) {
  const double n = frobenius_norm(m);
  const double d = n > kSigmaFloor ? n : kSigmaFloor;
  for (double& v : m.values()) v /= d;
}

}  // namespace

SpectralLinear::SpectralLinear(const std::string& name, std::size_t in, std::size_t out, RngStream& rng,
                               int warmup_iterations)
    : weight(name + ".weight", uniform_init(rng, in, out, in)),
      bias(name + ".bias", Mat(1, out)),
      u(name + ".u", Mat(1, in)),
      v(name + ".v", Mat(1, out)) {
  for (double& x : u.value.values()) x = rng.uniform(-1.0, 1.0);
  normalize(u.value);
  refine(1e-10, warmup_iterations);
}

int SpectralLinear::refine(double tol, int max_steps) {
  for (int s = 0; s < max_steps; ++s) {
    const Mat prev = u.value;
    power_iteration(1);
    double d2 = 0.0;
    for (std::size_t i = 0; i < prev.size(); ++i) d2 += (u.value[i] - prev[i]) * (u.value[i] - prev[i]);
    if (std::sqrt(d2) < tol) return s + 1;
  }
  return max_steps;
}

void SpectralLinear::power_iteration(int steps) {
  for (int s = 0; s < steps; ++s) {
    v.value = matmul(u.value, weight.value);  // 1 x out
    normalize(v.value);
    u.value = matmul(v.value, weight.value.transposed());  // 1 x in
    normalize(u.value);
  }
}

double SpectralLinear::sigma_estimate() const {
  const Mat uw = matmul(u.value, weight.value);
  double s = 0.0;
  for (std::size_t j = 0; j < uw.cols(); ++j) s += uw[j] * v.value[j];
  return s;
}

Mat SpectralLinear::effective_weight() const {
  const double sigma = std::max(sigma_estimate(), kSigmaFloor);
  Mat w = weight.value;
  for (double& x : w.values()) x /= sigma;
  return w;
}

Var SpectralLinear::forward(Tape& t, Var x) {
  Var w = t.param(weight);
  Var sigma = sum(mul(matmul(t.constant(u.value), w), t.constant(v.value)));
  Var w_eff = div(w, clamp(sigma, kSigmaFloor, std::numeric_limits<double>::infinity()));
  return add(matmul(x, w_eff), t.param(bias));
}

void SpectralLinear::collect(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

void SpectralLinear::collect_buffers(ParamList& out) {
  out.push_back(&u);
  out.push_back(&v);
}

// ---------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(const std::string& name, std::size_t width, double e)
    : gamma(name + ".gamma", Mat(1, width, 1.0)), beta(name + ".beta", Mat(1, width)), eps(e) {}

Var LayerNorm::forward(Tape& t, Var x) {
  return add(mul(layer_norm_rows(x, eps), t.param(gamma)), t.param(beta));
}

void LayerNorm::collect(ParamList& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

// ---------------------------------------------------------------- Clstm

Clstm::Clstm(const std::string& name, std::size_t hidden, RngStream& rng)
    : embedding(name + ".embedding", Mat(1, hidden)),
      w_input(name + ".w_input", uniform_init(rng, hidden, 7 * hidden, hidden)),
      w_hidden(name + ".w_hidden", uniform_init(rng, hidden, 7 * hidden, hidden)),
      bias(name + ".bias", Mat(1, 7 * hidden)) {
  for (double& v : embedding.value.values()) v = rng.uniform(-1.0, 1.0);
}

ClstmState Clstm::initial_state(Tape& t) const {
  const std::size_t h = hidden();
  ClstmState s;
  s.c = t.constant(Mat(1, h));
  s.c_bar = t.constant(Mat(1, h));
  s.delta = t.constant(Mat(1, h, 1.0));
  s.o = t.constant(Mat(1, h));
  s.time = 0.0;
  return s;
}

namespace {

Var use(Tape& t, Param& p, bool frozen) { return frozen ? t.constant(p.value) : t.param(p); }

}  // namespace

Var Clstm::input_preactivation(Tape& t) {
  return add(matmul(use(t, embedding, frozen), use(t, w_input, frozen)), use(t, bias, frozen));
}

Decayed Clstm::decay(Tape& t, const ClstmState& s, double time) const {
  (void)t;
  const double dt = time - s.time;
  if (!(dt >= 0.0)) {
    throw std::invalid_argument("Clstm::decay: time " + std::to_string(time) + " precedes state time " +
                                std::to_string(s.time));
  }
  if (dt == 0.0) return {s.c, mul(s.o, tanh(s.c))};
  Var gap = sub(s.c, s.c_bar);
  Var c = add(s.c_bar, mul(gap, exp(scale(s.delta, -dt))));
  return {c, mul(s.o, tanh(c))};
}

Decayed Clstm::decay_many(Tape& t, const ClstmState& s, std::span<const double> times) const {
  Mat dt(times.size(), 1);
  for (std::size_t k = 0; k < times.size(); ++k) {
    dt[k] = times[k] - s.time;
    if (!(dt[k] >= 0.0)) {
      throw std::invalid_argument("Clstm::decay_many: time " + std::to_string(times[k]) +
                                  " precedes state time " + std::to_string(s.time));
    }
  }
  Var e = exp(neg(matmul(t.constant(std::move(dt)), s.delta)));  // K x H
  Var c = add(s.c_bar, mul(e, sub(s.c, s.c_bar)));
  return {c, mul(s.o, tanh(c))};
}

Clstm::Step Clstm::step(Tape& t, const ClstmState& s, double event_time, Var input_pre) {
  const std::size_t h = hidden();
  const Decayed d = decay(t, s, event_time);
  Var pre = add(input_pre, matmul(d.h, use(t, w_hidden, frozen)));
  Var gi = sigmoid(slice_cols(pre, 0, h));
  Var gf = sigmoid(slice_cols(pre, h, h));
  Var gz = tanh(slice_cols(pre, 2 * h, h));
  Var go = sigmoid(slice_cols(pre, 3 * h, h));
  Var gib = sigmoid(slice_cols(pre, 4 * h, h));
  Var gfb = sigmoid(slice_cols(pre, 5 * h, h));
  Var gd = softplus(slice_cols(pre, 6 * h, h));

  ClstmState next;
  next.c = add(mul(gf, d.c), mul(gi, gz));
  next.c_bar = add(mul(gfb, s.c_bar), mul(gib, gz));
  next.delta = gd;
  next.o = go;
  next.time = event_time;
  Var out = mul(go, tanh(next.c));
  return {next, out};
}

Clstm::Run Clstm::run(Tape& t, const EventSequence& seq) {
  Run r;
  r.final_state = initial_state(t);
  if (seq.empty()) return r;
  Var pre = input_preactivation(t);
  r.hidden.reserve(seq.size());
  r.states.reserve(seq.size());
  for (std::size_t n = 0; n < seq.size(); ++n) {
    Step st = step(t, r.final_state, seq[n], pre);
    r.final_state = st.state;
    r.states.push_back(st.state);
    r.hidden.push_back(st.h);
  }
  return r;
}

void Clstm::collect(ParamList& out) {
  out.push_back(&embedding);
  out.push_back(&w_input);
  out.push_back(&w_hidden);
  out.push_back(&bias);
}

void Clstm::copy_weights_from(const Clstm& other) {
  embedding.value = other.embedding.value;
  w_input.value = other.w_input.value;
  w_hidden.value = other.w_hidden.value;
  bias.value = other.bias.value;
}

// ---------------------------------------------------------------- attention

Mat causal_mask(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m(i, j) = 1.0;
  return m;
}

CausalAttention::CausalAttention(const std::string& name, std::size_t width, RngStream& rng, bool residual)
    : wq(name + ".wq", uniform_init(rng, width, width, width)),
      wk(name + ".wk", uniform_init(rng, width, width, width)),
      wv(name + ".wv", uniform_init(rng, width, width, width)),
      norm(name + ".norm", width),
      residual_(residual) {}

Var CausalAttention::forward(Tape& t, Var x) {
  const std::size_t n = x.rows();
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  Var q = matmul(x, t.param(wq));
  Var k = matmul(x, t.param(wk));
  Var v = matmul(x, t.param(wv));
  Var scores = scale(matmul(q, transpose(k)), scale_factor);
  Var weights = softmax_rows(masked_fill(scores, causal_mask(n), -1e30));
  last_weights_ = weights.value();
  Var mixed = matmul(weights, v);
  if (residual_) mixed = add(mixed, x);
  return norm.forward(t, mixed);
}

void CausalAttention::collect(ParamList& out) {
  out.push_back(&wq);
  out.push_back(&wk);
  out.push_back(&wv);
  norm.collect(out);
}

void copy_values(const ParamList& from, const ParamList& to) {
  if (from.size() != to.size()) throw std::invalid_argument("copy_values: parameter count mismatch");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (!from[i]->value.same_shape(to[i]->value)) {
      throw ShapeError("copy_values: " + from[i]->name + " " + from[i]->value.shape_str() + " vs " +
                       to[i]->name + " " + to[i]->value.shape_str());
    }
    to[i]->value = from[i]->value;
  }
}

}  // namespace evod::nn
