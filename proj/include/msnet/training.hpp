#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "msnet/checkpoint.hpp"
#include "msnet/dataset.hpp"
#include "msnet/losses.hpp"
#include "msnet/networks.hpp"

namespace msnet {

struct TrainConfig {
  LossWeights weights;
  int k_max = 5;        // stage 1: reproduction distance sampled from [0, k_max]
  int batch_size = 16;
  int steps = 50000;    // optimization steps for the stage being run
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int log_every = 10;
  int checkpoint_every = 500;
  int k = 10;  // stage 2: given frames per sequence
  int T = 20;  // stage 2: sequence length; predictions are learned for frames k+1..T
  bool use_content_disc = true;  // cleared by the --no-cd ablation
  bool use_motion_disc = true;   // cleared by the --no-md ablation

  void validate() const;
};

nlohmann::json network_config_to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Rebuilds a model from a checkpoint: network shape from the stored config,
/// parameter values loaded by name (strict: every model parameter must be
/// present with a matching shape).
Model<float> model_from_checkpoint(const Checkpoint& ck);
void load_model_params(Model<float>& model, const Checkpoint& ck);

/// Adaptive moment estimation over one parameter group. Moments live in
/// float32 and the update arithmetic stays in float32 so that a checkpointed
/// optimizer resumes bit-exactly.
class Adam {
 public:
  Adam(std::vector<ad::VarPtr<float>> params, double lr, double beta1, double beta2, double eps);

  void zero_grad();
  void step();

  std::int64_t updates() const { return t_; }
  void set_updates(std::int64_t t);
  int size() const { return static_cast<int>(params_.size()); }
  const Tensor<float>& first_moment(int i) const { return m_[static_cast<std::size_t>(i)]; }
  const Tensor<float>& second_moment(int i) const { return v_[static_cast<std::size_t>(i)]; }
  void set_moments(int i, Tensor<float> m, Tensor<float> v);

 private:
  std::vector<ad::VarPtr<float>> params_;
  std::vector<Tensor<float>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

/// One sampled stage-1 step: the reproduction triples plus the frame pairs
/// the two feature discriminators score. All frame tensors are [N,C,H,W].
struct StageOneBatch {
  Tensor<float> x_t, x_t1, x_tk;
  std::vector<int> ks;  // reproduction distance drawn per sample
  Tensor<float> same_first_a, same_first_b;    // two adjacent pairs from one clip
  Tensor<float> same_second_a, same_second_b;
  Tensor<float> cross_first_a, cross_first_b;  // adjacent pairs from two clips
  Tensor<float> cross_second_a, cross_second_b;
  Tensor<float> seq_a, seq_b;        // b = a+1
  Tensor<float> nonseq_a, nonseq_b;  // |a-b| >= 2
};

/// Stage 1: alternating optimization of the reproduction objective. Each step
/// first updates the discriminators on the combined discriminator loss with
/// encoder/generator outputs held constant, then updates the encoders and
/// generator on the weighted reproduction objective with the discriminators
/// held constant.
class ReproductionTrainer {
 public:
  ReproductionTrainer(const NetworkConfig& net, const TrainConfig& cfg);
  explicit ReproductionTrainer(const Checkpoint& ck);  // resume; requires stage 1

  StageOneBatch assemble_batch(const std::vector<VideoClip>& clips, Rng& rng) const;
  LossReport discriminator_update(const StageOneBatch& batch);
  LossReport encoder_generator_update(const StageOneBatch& batch);

  /// One full alternating step on a freshly sampled batch; the sampling
  /// stream is derived from (seed, step index), so a resumed run draws the
  /// same batches as an uninterrupted one.
  LossReport train_step(const std::vector<VideoClip>& clips);

  /// Steps until `config().steps`, writing one JSON line per `log_every`
  /// steps to `log` (if non-null) and a checkpoint per `checkpoint_every`
  /// steps and at completion to `ckpt_path` (if non-empty).
  void run(const std::vector<VideoClip>& clips, std::ostream* log, const std::string& ckpt_path);

  Checkpoint snapshot() const;
  std::int64_t completed_steps() const { return completed_; }
  Model<float>& model() { return model_; }
  const Model<float>& model() const { return model_; }
  TrainConfig& config() { return cfg_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  TrainConfig cfg_;
  Model<float> model_;
  std::vector<std::string> eg_names_, d_names_;
  Adam opt_eg_, opt_d_;
  std::int64_t completed_ = 0;
};

/// Stage 2: trains the convolutional LSTM to roll motion features forward in
/// time while every other network stays frozen at its stage-1 values.
class PredictorTrainer {
 public:
  PredictorTrainer(const Checkpoint& stage1, const TrainConfig& cfg);
  explicit PredictorTrainer(const Checkpoint& ck);  // resume; requires stage 2

  LossReport train_step(const std::vector<VideoClip>& clips);
  void run(const std::vector<VideoClip>& clips, std::ostream* log, const std::string& ckpt_path);

  Checkpoint snapshot() const;
  std::int64_t completed_steps() const { return completed_; }
  Model<float>& model() { return model_; }
  const Model<float>& model() const { return model_; }
  TrainConfig& config() { return cfg_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  TrainConfig cfg_;
  Model<float> model_;
  std::vector<std::string> clstm_names_;
  Adam opt_clstm_;
  std::int64_t completed_ = 0;
};

}  // namespace msnet
