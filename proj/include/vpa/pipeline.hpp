#pragma once

#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "vpa/checkpoint.hpp"
#include "vpa/config.hpp"
#include "vpa/encoders.hpp"
#include "vpa/metrics.hpp"
#include "vpa/prompting.hpp"
#include "vpa/synthdata.hpp"
#include "vpa/training.hpp"

namespace vpa {

// dual encoder plus the method-specific prompt modules, all registered in
// one ParamStore so checkpoints and the optimizer see a flat name space
struct Model {
  ModelConfig cfg;
  ParamStore store;
  std::unique_ptr<TextEncoder> text;
  std::unique_ptr<VideoEncoder> video;

  Tensor tpt_prompts;               // [M_t x d_txt]
  std::vector<Tensor> vpt_prompts;  // per layer [M_v x d_vid]
  CmmParams cmm;
  bool has_cmm = false;
  PromptBasis basis;
  ModalityAdapter vid_adapter, txt_adapter;
  bool has_basis = false;
  bool has_txt_adapter = false;

  Method method() const { return cfg.train.method; }
};

Model build_model(const ModelConfig& cfg);

// the method's tunable parameters, in store order
std::vector<Tensor> trainable_params(const Model& m,
                                     std::vector<std::string>* names = nullptr);

struct ItemForward {
  Tensor video_feat;  // [1 x embed_dim]
  Tensor text_feat;
  SynItemTerms syn;
  bool has_syn = false;
};
// sampler may be null (top-k selection, used at evaluation time)
ItemForward forward_item(Model& m, const PairedItem& item, bool training,
                         SamplerState* sampler);

struct BatchForward {
  Tensor video_feats;  // [n x embed_dim]
  Tensor text_feats;
  std::vector<SynItemTerms> syn;
};
BatchForward forward_batch(Model& m, const Dataset& ds,
                           const std::vector<int>& idx, bool training,
                           SamplerState* sampler);

// video feature of one item / class-template text features, eval mode
Tensor encode_video_eval(Model& m, const PairedItem& item);
Tensor encode_text_eval(Model& m, const std::vector<int>& tokens);

struct EvalResult {
  double map = 0.0;  // multi-label mAP over class templates
  double top1 = 0.0;
  double mean_class = 0.0;
  BiRetrievalResult retrieval;  // pairwise item retrieval
};
EvalResult evaluate(Model& m, const Dataset& ds, Split split);

struct EpochStats {
  int epoch = 0;
  double loss_cl = 0.0;
  double loss_syn = 0.0;
  double gamma = 0.0;
  double gram_offdiag_max = 0.0;
  EvalResult val;
};

struct RunOptions {
  std::ostream* log = nullptr;   // JSONL, one record per epoch
  double data_fraction = 1.0;    // leading fraction of the training split
  bool eval_each_epoch = true;
};

// contrastive training of the whole backbone on the pretrain split
std::vector<EpochStats> run_pretraining(Model& m, const Dataset& ds,
                                        const TrainConfig& tc,
                                        const RunOptions& opt = {});

// method-specific adaptation on adapt-train; zero-shot trains nothing
std::vector<EpochStats> run_adaptation(Model& m, const Dataset& ds,
                                       const RunOptions& opt = {});

// epoch record with the fixed field names; ego-vpa additionally carries
// loss_syn, gram_offdiag_max and the selection histogram
std::string epoch_record(const Model& m, const EpochStats& s,
                         const std::string& phase);

}  // namespace vpa
