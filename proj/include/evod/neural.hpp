#pragma once

// Layers built on the tape: linear/MLP heads, spectral-normalized linear
// layers, the continuous-time LSTM cell, causal self-attention and layer
// normalization. Activations are row vectors; a batch of N positions is an
// N x features matrix.

#include "evod/gradcore.hpp"
#include "evod/rng.hpp"
#include "evod/seqdata.hpp"

#include <span>
#include <string>
#include <vector>

namespace evod::nn {

using grad::Mat;
using grad::Param;
using grad::ParamList;
using grad::Tape;
using grad::Var;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
Mat uniform_init(RngStream& rng, std::size_t rows, std::size_t cols, std::size_t fan_in);

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, RngStream& rng);

  Var forward(Tape& t, Var x);
  void zero_init();
  void collect(ParamList& out);

  Param weight;  // in x out
  Param bias;    // 1 x out
};

/// Linear -> tanh -> Linear -> tanh -> Linear. The output is left raw
/// (logits or values); callers apply softmax where needed.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, RngStream& rng);

  Var forward(Tape& t, Var x);
  void collect(ParamList& out);
  Linear& last() { return l3_; }

 private:
  Linear l1_, l2_, l3_;
};

/// y = x (W / sigma) + b, sigma = u^T W v estimated by power iteration.
///
/// forward() never moves u and v. Training code refines them after every
/// weight update; evaluation leaves them frozen so repeated scoring is
/// deterministic.
class SpectralLinear {
 public:
  SpectralLinear() = default;
  SpectralLinear(const std::string& name, std::size_t in, std::size_t out, RngStream& rng,
                 int warmup_iterations = 2000);

  Var forward(Tape& t, Var x);
  void power_iteration(int steps = 1);
  /// Iterates until u moves by less than `tol` (2-norm) or `max_steps` is
  /// reached. Returns the number of steps taken.
  int refine(double tol, int max_steps);
  double sigma_estimate() const;
  Mat effective_weight() const;

  void collect(ParamList& out);
  /// Power-iteration vectors (persisted with checkpoints, never trained).
  void collect_buffers(ParamList& out);

  Param weight;  // in x out
  Param bias;    // 1 x out
  Param u;       // 1 x in
  Param v;       // 1 x out
};

struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t width, double eps = 1e-5);

  Var forward(Tape& t, Var x);
  void collect(ParamList& out);

  Param gamma;
  Param beta;
  double eps = 1e-5;
};

/// Continuous-time cell state. Between events the cell decays from c toward
/// c_bar at rate delta; the hidden read-out is o * tanh(c(t)).
struct ClstmState {
  Var c;
  Var c_bar;
  Var delta;
  Var o;
  double time = 0.0;
};

struct Decayed {
  Var c;
  Var h;
};

/// Continuous-time LSTM over unmarked events. Every event is represented by
/// the same learned embedding vector; timing enters only through the decay.
///
/// Gate pre-activations are [embedding, h(t)] -> 7H laid out as
/// input, forget, candidate, output, target-input, target-forget, decay.
class Clstm {
 public:
  Clstm() = default;
  Clstm(const std::string& name, std::size_t hidden, RngStream& rng);

  std::size_t hidden() const { return embedding.value.cols(); }

  ClstmState initial_state(Tape& t) const;
  /// Embedding contribution to the gate pre-activations (constant per tape).
  Var input_preactivation(Tape& t);

  Decayed decay(Tape& t, const ClstmState& s, double time) const;
  /// Decay to several times at once; returns K x H matrices.
  Decayed decay_many(Tape& t, const ClstmState& s, std::span<const double> times) const;

  struct Step {
    ClstmState state;
    Var h;
  };
  Step step(Tape& t, const ClstmState& s, double event_time, Var input_pre);

  struct Run {
    std::vector<Var> hidden;  // h_n right after each event
    std::vector<ClstmState> states;  // state after each event
    ClstmState final_state;
  };
  Run run(Tape& t, const EventSequence& seq);

  void collect(ParamList& out);
  void copy_weights_from(const Clstm& other);

  /// A frozen cell enters tapes as constants: no gradient is computed for it.
  bool frozen = false;

  Param embedding;  // 1 x H
  Param w_input;    // H x 7H
  Param w_hidden;   // H x 7H
  Param bias;       // 1 x 7H
};

/// Single-head scaled dot-product self-attention with a causal mask, an
/// optional residual connection and a trailing layer normalization.
class CausalAttention {
 public:
  CausalAttention() = default;
  CausalAttention(const std::string& name, std::size_t width, RngStream& rng, bool residual = true);

  Var forward(Tape& t, Var x);
  /// Row-stochastic attention matrix of the most recent forward call.
  const Mat& last_weights() const { return last_weights_; }

  void collect(ParamList& out);
  bool residual() const { return residual_; }

  Param wq, wk, wv;
  LayerNorm norm;

 private:
  bool residual_ = true;
  Mat last_weights_;
};

/// Upper-triangular (j > i) mask of size n x n.
Mat causal_mask(std::size_t n);

/// Copies values of equally shaped parameter lists.
void copy_values(const ParamList& from, const ParamList& to);

}  // namespace evod::nn
