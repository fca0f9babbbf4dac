#pragma once

#include <functional>

#include <torch/torch.h>

namespace cropsim::gan {

// A network as seen by the loss functions: the forward map plus (optionally)
// the module owning its parameters, so the losses can freeze it.
struct NetRef {
  std::function<torch::Tensor(const torch::Tensor&)> fn;
  torch::nn::Module* module = nullptr;

  torch::Tensor operator()(const torch::Tensor& x) const { return fn(x); }

  template <typename Holder>
  static NetRef of(Holder& h) {
    return {[h](const torch::Tensor& x) mutable { return h->forward(x); }, h.get()};
  }
};

struct LossWeights {
  double gan = 1;
  double cyc = 5;
  double identity = 2;
  double detector = 10;

  void validate() const;
};

struct LossBreakdown {
  double gan_s = 0, gan_r = 0, cyc = 0, identity = 0, dt_mars = 0, total = 0;
};

// Least-squares adversarial objective with real label 1 and fake label 0.
torch::Tensor lsgan_generator_term(const torch::Tensor& d_fake);
torch::Tensor lsgan_discriminator_term(const torch::Tensor& d_real, const torch::Tensor& d_fake);

struct AdversarialTerms {
  torch::Tensor generator_term;      // mean (D(G(src)) - 1)^2, D frozen
  torch::Tensor discriminator_term;  // 0.5 [mean (D(tgt) - 1)^2 + mean D(G(src))^2], G detached
};

// One direction of the adversarial game: G maps the source domain into the
// target domain judged by D.
AdversarialTerms adversarial_loss(const NetRef& G, const NetRef& D,
                                  const torch::Tensor& source_batch,
                                  const torch::Tensor& target_batch);

// mean |G_s(G_r(x_s)) - x_s| + mean |G_r(G_s(x_r)) - x_r|
torch::Tensor cycle_loss(const NetRef& G_r, const NetRef& G_s,
                         const torch::Tensor& sim_batch, const torch::Tensor& real_batch);

// mean |G_s(x_s) - x_s| + mean |G_r(x_r) - x_r|
torch::Tensor identity_loss(const NetRef& G_r, const NetRef& G_s,
                            const torch::Tensor& sim_batch, const torch::Tensor& real_batch);

// Detector-consistency term over dense detector maps:
//   mean |Det(G_r(x_s)) - Det(x_s)| + mean |Det(G_s(x_r)) - Det(x_r)|
// The detector is frozen and the untranslated side is a constant, so
// gradients reach the generators only.
torch::Tensor dtmars_loss(const NetRef& G_r, const NetRef& G_s, const NetRef& detector,
                          const torch::Tensor& sim_batch, const torch::Tensor& real_batch);

// Generator-side objective, every term as a graph-connected tensor.
// dt_mars is zero when no detector is supplied. total is accumulated in
// double precision.
struct GeneratorLosses {
  torch::Tensor gan_s, gan_r, cyc, identity, dt_mars, total;
  // Cached translations, reused by the discriminator and detector steps.
  torch::Tensor fake_real, fake_sim;

  LossBreakdown values() const;
};

GeneratorLosses total_loss(const NetRef& G_r, const NetRef& G_s, const NetRef& D_r,
                           const NetRef& D_s, const NetRef* detector,
                           const LossWeights& weights, const torch::Tensor& sim_batch,
                           const torch::Tensor& real_batch);

}  // namespace cropsim::gan
