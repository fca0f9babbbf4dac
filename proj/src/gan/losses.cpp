#include "cropsim/gan/losses.hpp"

#include "cropsim/error.hpp"
#include "cropsim/nn/freeze.hpp"

namespace cropsim::gan {
namespace {

void check_batches(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.dim() != 4 || b.dim() != 4 || a.size(0) == 0 || b.size(0) == 0)
    throw ValidationError("GAN losses expect non-empty [B,C,H,W] batches");
  if (a.sizes().slice(1) != b.sizes().slice(1))
    throw ValidationError("GAN losses expect batches with matching image dimensions");
}

torch::Tensor l1(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).abs().mean(); }

torch::Tensor consistency(const NetRef& det, const torch::Tensor& translated,
                          const torch::Tensor& original) {
  torch::Tensor reference;
  {
    torch::NoGradGuard g;
    reference = det(original);
  }
  return l1(det(translated), reference);
}

}  // namespace

void LossWeights::validate() const {
  if (gan < 0 || cyc < 0 || identity < 0 || detector < 0)
    throw ValidationError("loss weights must be >= 0");
}

torch::Tensor lsgan_generator_term(const torch::Tensor& d_fake) {
  return (d_fake - 1).pow(2).mean();
}

torch::Tensor lsgan_discriminator_term(const torch::Tensor& d_real, const torch::Tensor& d_fake) {
  return 0.5 * ((d_real - 1).pow(2).mean() + d_fake.pow(2).mean());
}

AdversarialTerms adversarial_loss(const NetRef& G, const NetRef& D,
                                  const torch::Tensor& source_batch,
                                  const torch::Tensor& target_batch) {
  check_batches(source_batch, target_batch);
  auto fake = G(source_batch);
  AdversarialTerms t;
  {
    nn::FreezeParams frozen(D.module);
    t.generator_term = lsgan_generator_term(D(fake));
  }
  t.discriminator_term = lsgan_discriminator_term(D(target_batch), D(fake.detach()));
  return t;
}

torch::Tensor cycle_loss(const NetRef& G_r, const NetRef& G_s,
                         const torch::Tensor& sim_batch, const torch::Tensor& real_batch) {
  check_batches(sim_batch, real_batch);
  return l1(G_s(G_r(sim_batch)), sim_batch) + l1(G_r(G_s(real_batch)), real_batch);
}

torch::Tensor identity_loss(const NetRef& G_r, const NetRef& G_s,
                            const torch::Tensor& sim_batch, const torch::Tensor& real_batch) {
  check_batches(sim_batch, real_batch);
  return l1(G_s(sim_batch), sim_batch) + l1(G_r(real_batch), real_batch);
}

torch::Tensor dtmars_loss(const NetRef& G_r, const NetRef& G_s, const NetRef& detector,
                          const torch::Tensor& sim_batch, const torch::Tensor& real_batch) {
  check_batches(sim_batch, real_batch);
  nn::FreezeParams frozen(detector.module);
  return consistency(detector, G_r(sim_batch), sim_batch) +
         consistency(detector, G_s(real_batch), real_batch);
}

LossBreakdown GeneratorLosses::values() const {
  return {gan_s.item<double>(), gan_r.item<double>(),    cyc.item<double>(),
          identity.item<double>(), dt_mars.item<double>(), total.item<double>()};
}

GeneratorLosses total_loss(const NetRef& G_r, const NetRef& G_s, const NetRef& D_r,
                           const NetRef& D_s, const NetRef* detector,
                           const LossWeights& weights, const torch::Tensor& sim_batch,
                           const torch::Tensor& real_batch) {
  check_batches(sim_batch, real_batch);
  weights.validate();
  GeneratorLosses L;
  L.fake_real = G_r(sim_batch);
  L.fake_sim = G_s(real_batch);
  {
    nn::FreezeParams fr(D_r.module), fs(D_s.module);
    L.gan_r = lsgan_generator_term(D_r(L.fake_real));
    L.gan_s = lsgan_generator_term(D_s(L.fake_sim));
  }
  L.cyc = l1(G_s(L.fake_real), sim_batch) + l1(G_r(L.fake_sim), real_batch);
  L.identity = l1(G_s(sim_batch), sim_batch) + l1(G_r(real_batch), real_batch);
  if (detector) {
    nn::FreezeParams fd(detector->module);
    L.dt_mars = consistency(*detector, L.fake_real, sim_batch) +
                consistency(*detector, L.fake_sim, real_batch);
  } else {
    L.dt_mars = torch::zeros({}, sim_batch.options());
  }
  auto d = [](const torch::Tensor& t) { return t.to(torch::kFloat64); };
  L.total = weights.gan * (d(L.gan_s) + d(L.gan_r)) + weights.cyc * d(L.cyc) +
            weights.identity * d(L.identity) + weights.detector * d(L.dt_mars);
  return L;
}

}  // namespace cropsim::gan
