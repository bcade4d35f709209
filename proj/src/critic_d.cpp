#include "evod/critic_d.hpp"

#include "evod/checkpoint.hpp"

#include <stdexcept>

namespace evod::critic {

using nlohmann::json;
using namespace evod::grad;

namespace {

constexpr std::uint32_t kInitStream = 0x646973;  // "dis"

}  // namespace

void DiscriminatorConfig::validate() const {
  if (hidden == 0 || head_hidden == 0) throw ValidationError("discriminator widths must be positive");
  if (!(lr > 0.0)) throw ValidationError("discriminator lr must be > 0");
  if (!(max_grad_norm > 0.0)) throw ValidationError("max_grad_norm must be > 0");
  if (!(power_tol > 0.0)) throw ValidationError("power_tol must be > 0");
  if (max_power_iterations < 1) throw ValidationError("max_power_iterations must be >= 1");
}

json DiscriminatorConfig::to_json() const {
  return {{"hidden", hidden},
          {"head_hidden", head_hidden},
          {"horizon_readout", horizon_readout},
          {"lr", lr},
          {"max_grad_norm", max_grad_norm},
          {"power_tol", power_tol},
          {"max_power_iterations", max_power_iterations}};
}

DiscriminatorConfig DiscriminatorConfig::from_json(const json& j) {
  DiscriminatorConfig c;
  c.hidden = j.at("hidden").get<std::size_t>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.horizon_readout = j.at("horizon_readout").get<bool>();
  c.lr = j.at("lr").get<double>();
  c.max_grad_norm = j.at("max_grad_norm").get<double>();
  c.power_tol = j.at("power_tol").get<double>();
  c.max_power_iterations = j.at("max_power_iterations").get<int>();
  return c;
}

Discriminator::Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  RngStream rng(seed, kInitStream);
  clstm_ = nn::Clstm("disc.clstm", cfg_.hidden, rng);
  head1_ = nn::SpectralLinear("disc.head1", cfg_.hidden, cfg_.head_hidden, rng, cfg_.max_power_iterations);
  head2_ = nn::SpectralLinear("disc.head2", cfg_.head_hidden, 1, rng, cfg_.max_power_iterations);
  rebuild_optimizer();
}

void Discriminator::rebuild_optimizer() { opt_ = Adam(trainable_params(), {cfg_.lr}); }

Var Discriminator::logit(Tape& t, const EventSequence& seq) {
  const auto run = clstm_.run(t, seq);
  Var h;
  if (cfg_.horizon_readout) {
    h = clstm_.decay(t, run.final_state, seq.horizon()).h;
  } else if (run.hidden.empty()) {
    h = clstm_.decay(t, run.final_state, 0.0).h;
  } else {
    h = run.hidden.back();
  }
  return head2_.forward(t, tanh(head1_.forward(t, h)));
}

double Discriminator::score(const EventSequence& seq) {
  Tape t(false);
  return sigmoid(logit(t, seq)).item();
}

Var Discriminator::bce_loss(Tape& t, std::span<const EventSequence> reals, std::span<const EventSequence> fakes) {
  if (reals.empty() && fakes.empty()) throw std::invalid_argument("bce_loss: no sequences");
  auto term = [&](std::span<const EventSequence> seqs, bool real) {
    std::vector<Var> logits;
    logits.reserve(seqs.size());
    for (const auto& s : seqs) logits.push_back(logit(t, s));
    Var z = concat_rows(logits);
    // -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z)
    return mean(softplus(real ? neg(z) : z));
  };
  if (fakes.empty()) return term(reals, true);
  if (reals.empty()) return term(fakes, false);
  return add(term(reals, true), term(fakes, false));
}

double Discriminator::bce_update(std::span<const EventSequence> reals, std::span<const EventSequence> fakes) {
  opt_.zero_grad();
  Tape t;
  Var loss = bce_loss(t, reals, fakes);
  t.backward(loss);
  clip_grad_norm(opt_.params(), cfg_.max_grad_norm);
  opt_.step();
  // Refresh u, v against the weights every later forward will see.
  head1_.refine(cfg_.power_tol, cfg_.max_power_iterations);
  head2_.refine(cfg_.power_tol, cfg_.max_power_iterations);
  return loss.item();
}

void Discriminator::freeze_clstm() {
  clstm_.frozen = true;
  rebuild_optimizer();
}

ParamList Discriminator::trainable_params() {
  ParamList out;
  if (!clstm_.frozen) clstm_.collect(out);
  head1_.collect(out);
  head2_.collect(out);
  return out;
}

ParamList Discriminator::checkpoint_params() {
  ParamList out;
  clstm_.collect(out);
  head1_.collect(out);
  head1_.collect_buffers(out);
  head2_.collect(out);
  head2_.collect_buffers(out);
  return out;
}

void Discriminator::save(const std::filesystem::path& manifest, const json& extra) {
  json meta = extra;
  meta["kind"] = "discriminator";
  meta["config"] = cfg_.to_json();
  meta["clstm_frozen"] = clstm_.frozen;
  save_params(checkpoint_params(), manifest, meta);
}

json Discriminator::load(const std::filesystem::path& manifest) {
  const json extra = read_checkpoint_extra(manifest);
  if (extra.value("kind", "") != "discriminator") {
    throw CheckpointError(manifest.string() + ": not a discriminator checkpoint");
  }
  if (DiscriminatorConfig::from_json(extra.at("config")) != cfg_) {
    throw CheckpointError(manifest.string() + ": discriminator architecture differs from the checkpoint");
  }
  load_params(checkpoint_params(), manifest);
  if (extra.value("clstm_frozen", false) != clstm_.frozen) {
    clstm_.frozen = extra.value("clstm_frozen", false);
    rebuild_optimizer();
  }
  return extra;
}

std::unique_ptr<Discriminator> Discriminator::from_checkpoint(const std::filesystem::path& manifest) {
  const json extra = read_checkpoint_extra(manifest);
  if (extra.value("kind", "") != "discriminator") {
    throw CheckpointError(manifest.string() + ": not a discriminator checkpoint");
  }
  auto d = std::make_unique<Discriminator>(DiscriminatorConfig::from_json(extra.at("config")), 0);
  d->load(manifest);
  return d;
}

}  // namespace evod::critic
