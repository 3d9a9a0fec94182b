#include "vpa/training.hpp"

#include <cmath>

namespace vpa {

Tensor info_nce(const Tensor& video_feats, const Tensor& text_feats,
                double tau) {
  if (tau <= 0.0) throw ConfigError("info_nce: tau must be > 0");
  const int n = video_feats.rows();
  if (text_feats.rows() != n || text_feats.cols() != video_feats.cols())
    throw ShapeError("info_nce: feature shapes disagree " +
                     shape_str(video_feats.shape()) + " vs " +
                     shape_str(text_feats.shape()));
  Tensor sims = scale(matmul(video_feats, transpose(text_feats)), 1.0 / tau);
  Tensor pos = diagonal(sims);                       // [n]
  Tensor lse_v2t = logsumexp_rows(sims);             // [n]
  Tensor lse_t2v = logsumexp_rows(transpose(sims));  // [n]
  Tensor per_item = sub(add(lse_v2t, lse_t2v), scale(pos, 2.0));
  return scale(sum_all(per_item), 1.0 / static_cast<double>(n));
}

Tensor total_loss(const Tensor& contrastive, const Tensor* syn, double lambda) {
  if (!syn) return contrastive;
  return add(contrastive, scale(*syn, lambda));
}

double gamma_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch > cfg.epochs)
    throw ConfigError("gamma_at: epoch outside [0, epochs]");
  if (cfg.epochs == 0) return 1.0;
  const double ramp = cfg.ramp_fraction * cfg.epochs;
  if (ramp <= 0.0) return 1.0;
  const double g = static_cast<double>(epoch) / ramp;
  return g < 0.0 ? 0.0 : (g > 1.0 ? 1.0 : g);
}

AdamW::AdamW(double lr, double beta1, double beta2, double eps,
             double weight_decay)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      weight_decay_(weight_decay) {}

void AdamW::step(const std::vector<Tensor>& params,
                 const std::vector<bool>& no_decay) {
  if (no_decay.size() != params.size())
    throw ConfigError("AdamW: no_decay mask size mismatch");
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    auto& slot = state_[p.id()];
    if (slot.m.size() != p.numel()) {
      slot.m.assign(p.numel(), 0.0);
      slot.v.assign(p.numel(), 0.0);
      slot.t = 0;
    }
    ++slot.t;
    const double bc1 = 1.0 - std::pow(beta1_, slot.t);
    const double bc2 = 1.0 - std::pow(beta2_, slot.t);
    auto& vals = p.values();
    const auto& g = p.grad();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g[i];
      slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      vals[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_));
      if (weight_decay_ > 0.0 && !no_decay[pi])
        vals[i] -= lr_ * weight_decay_ * vals[i];
    }
  }
}

}  // namespace vpa
