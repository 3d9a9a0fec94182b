#pragma once

#include <map>
#include <string>
#include <vector>

#include "vpa/config.hpp"
#include "vpa/encoders.hpp"
#include "vpa/ops.hpp"
#include "vpa/rng.hpp"
#include "vpa/tensor.hpp"

namespace vpa {

// B x d_f matrix of basis prompts with per-row selection tallies
class PromptBasis {
 public:
  PromptBasis() = default;
  // rows drawn from a spherical Gaussian, then Gram-Schmidt orthonormalized
  PromptBasis(int basis_size, int d_f, Rng& rng, ParamStore& store,
              const std::string& name = "basis.F");

  Tensor& matrix() { return F_; }
  const Tensor& matrix() const { return F_; }
  int size() const { return B_; }
  int dim() const { return d_f_; }

  std::vector<long>& counts() { return counts_; }
  const std::vector<long>& counts() const { return counts_; }
  void reset_counts() { counts_.assign(B_, 0); }

  // rescale every row of F back to unit norm (values only, after a step)
  void renormalize_rows();
  // largest |f_i . f_j|, i != j
  double gram_offdiag_max() const;

 private:
  Tensor F_;
  int B_ = 0;
  int d_f_ = 0;
  std::vector<long> counts_;
};

// single-linear-layer encoder/decoder pair between a modality's feature
// space and the prompt latent space (no biases)
struct ModalityAdapter {
  Tensor h_weight;  // [d_in x d_f]
  Tensor g_weight;  // [d_f x d_out]
  std::string modality;

  static ModalityAdapter create(const std::string& modality, int d_io, int d_f,
                                Rng& rng, ParamStore& store);
};

struct SubspaceSelection {
  std::vector<int> indices;    // S, in selection order, |S| = k
  std::vector<double> alpha;   // h(z)^T f_{S_i}
  double query_norm = 0.0;     // ||h(z)||
  // one-hot selection matrix A [B x k], column i encodes indices[i]
  std::vector<double> one_hot(int basis_size) const;
};

struct SamplerState {
  double gamma = 0.0;
  Rng rng;
};

// h(z) followed by L2 normalization; z is [d_in] or [1 x d_in]
Tensor project(const Tensor& z, const ModalityAdapter& adapter);

// top-k dot products h(z)^T f_i, ties broken by lowest index;
// increments selection counts when training is true
SubspaceSelection select_topk(const std::vector<double>& hz, PromptBasis& basis,
                              int k, bool training = false);

// draw k distinct indices from pi_m = gamma*pi_sim + (1-gamma)*pi_invf by
// iterative renormalized sampling; counts are updated
SubspaceSelection select_sampled(const std::vector<double>& hz,
                                 PromptBasis& basis, int k,
                                 SamplerState& sampler);

// the mixture distribution itself (exposed for the statistical checks)
std::vector<double> selection_distribution(const std::vector<double>& hz,
                                           const PromptBasis& basis,
                                           double gamma);

// g applied row-wise to the selected basis rows: [k x d_out]
Tensor synthesize(const SubspaceSelection& sel, const PromptBasis& basis,
                  const ModalityAdapter& adapter);

// || sum_{i in S} alpha_i f_i - hz ||_2 with alpha recomputed on-graph
Tensor recon_loss(const Tensor& hz, const SubspaceSelection& sel,
                  const PromptBasis& basis);

// sum_{i != j} f_i^T f_j; the squared variant penalizes misalignment of
// either sign and is the default
Tensor orth_penalty(const PromptBasis& basis,
                    OrthVariant variant = OrthVariant::kSquared);

// L_syn for one batch: per-item frame and text reconstruction terms averaged
// over the batch, plus the orthogonality term
struct SynItemTerms {
  std::vector<Tensor> video_hz;             // one per frame
  std::vector<SubspaceSelection> video_sel;
  Tensor text_hz;                           // undefined when video-only
  SubspaceSelection text_sel;
};
Tensor syn_loss(const std::vector<SynItemTerms>& items, const PromptBasis& basis,
                OrthVariant variant, bool include_orth);

// bi-directional single-layer LSTM over frame contexts with frame-specific
// linear heads; hidden width d_vid per direction
struct CmmParams {
  Tensor wx_f, wh_f, b_f;  // forward direction, gates packed [i f g o]
  Tensor wx_b, wh_b, b_b;  // backward direction
  std::vector<Tensor> head_w;  // per frame [2*d_vid x M_v*d_vid]
  std::vector<Tensor> head_b;  // per frame [M_v*d_vid]

  static CmmParams create(int d_vid, int frames, int video_prompts, Rng& rng,
                          ParamStore& store);
};

// returns [T*M_v x d_vid] frame-major; linear_activation replaces the gate
// nonlinearities with identity (used by the symmetry checks)
Tensor cmm_generate(const Tensor& frame_ctx, const CmmParams& params,
                    int video_prompts, bool linear_activation = false);

// parameter accounting
struct ParamBreakdown {
  std::vector<std::pair<std::string, std::size_t>> groups;
  std::size_t trainable = 0;
  std::size_t frozen = 0;
  double fraction = 0.0;  // trainable / (trainable + frozen)

  std::size_t group(const std::string& name) const;
};
ParamBreakdown count_params(const ModelConfig& cfg, Method method);

// closed-form pieces from the parameter-count formulas
std::size_t ego_vpa_video_weights(int d_f, int basis_size, int d_vid);
std::size_t cmm_weights(int video_prompts, int frames, int d_vid);

}  // namespace vpa
