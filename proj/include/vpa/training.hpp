#pragma once

#include <unordered_map>
#include <vector>

#include "vpa/config.hpp"
#include "vpa/ops.hpp"
#include "vpa/tensor.hpp"

namespace vpa {

// symmetric InfoNCE over L2-normalized feature rows
Tensor info_nce(const Tensor& video_feats, const Tensor& text_feats,
                double tau);

// L = L_cl + lambda * L_syn (syn term optional)
Tensor total_loss(const Tensor& contrastive, const Tensor* syn, double lambda);

// linear gamma ramp: 0 at epoch 0, 1 from ramp_fraction * epochs onward
double gamma_at(int epoch, const TrainConfig& cfg);

// decoupled-weight-decay Adam; state keyed by parameter storage identity
class AdamW {
 public:
  explicit AdamW(double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8, double weight_decay = 0.0);

  // applies one update to every tensor in params from its accumulated grad;
  // no_decay entries skip weight decay (biases, basis rows)
  void step(const std::vector<Tensor>& params,
            const std::vector<bool>& no_decay);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  struct Slot {
    std::vector<double> m, v;
    long t = 0;
  };
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  std::unordered_map<const void*, Slot> state_;
};

}  // namespace vpa
