#include "msnet/training.hpp"

#include <cmath>
#include <iostream>
#include <sstream>
#include <tuple>

using nlohmann::json;

namespace msnet {

namespace {

// Sampling streams for the two stages are kept disjoint even under the same
// seed: stage 1 derives from the plain step index, stage 2 from the index
// with the top bit set.
std::uint64_t stage1_stream(std::int64_t step) { return static_cast<std::uint64_t>(step); }
std::uint64_t stage2_stream(std::int64_t step) {
  return (1ull << 63) | static_cast<std::uint64_t>(step);
}

Tensor<float> stack_frames(const std::vector<Tensor<float>>& frames) {
  require(!frames.empty(), Errc::invalid_argument, "cannot stack an empty frame list");
  const Tensor<float>& first = frames.front();
  require(first.rank() == 3, Errc::shape_mismatch, "stack_frames expects [C,H,W] frames");
  Tensor<float> out({static_cast<int>(frames.size()), first.shape(0), first.shape(1), first.shape(2)});
  std::int64_t per = first.size();
  for (std::size_t n = 0; n < frames.size(); ++n) {
    require(frames[n].same_shape(first), Errc::heterogeneous_shapes, "stack_frames: mixed frame shapes");
    std::copy(frames[n].data(), frames[n].data() + per, out.data() + static_cast<std::int64_t>(n) * per);
  }
  return out;
}

std::vector<std::pair<std::string, ad::VarPtr<float>>> params_with_prefixes(
    const Model<float>& model, std::initializer_list<const char*> prefixes) {
  std::vector<std::pair<std::string, ad::VarPtr<float>>> out;
  for (const auto& [name, p] : model.named_params())
    for (const char* prefix : prefixes)
      if (name.rfind(prefix, 0) == 0) {
        out.emplace_back(name, p);
        break;
      }
  return out;
}

std::vector<std::string> names_of(const std::vector<std::pair<std::string, ad::VarPtr<float>>>& named) {
  std::vector<std::string> out;
  for (const auto& [name, p] : named) out.push_back(name);
  return out;
}

std::vector<ad::VarPtr<float>> vars_of(const std::vector<std::pair<std::string, ad::VarPtr<float>>>& named) {
  std::vector<ad::VarPtr<float>> out;
  for (const auto& [name, p] : named) out.push_back(p);
  return out;
}

void check_finite(double value, const char* label, std::int64_t step) {
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << label << " is " << value << " at step " << step + 1;
    fail(Errc::non_finite_loss, msg.str());
  }
}

void require_clips_usable(const std::vector<VideoClip>& clips, const NetworkConfig& net) {
  require(!clips.empty(), Errc::dataset_too_small, "no clips to train on");
  for (const auto& c : clips)
    for (const auto& f : c.frames)
      require(f.rank() == 3 && f.shape(0) == net.image_shape[0] && f.shape(1) == net.image_shape[1] &&
                  f.shape(2) == net.image_shape[2],
              Errc::shape_mismatch, "clip " + c.clip_id + " frame shape " + shape_string(f) +
                                        " does not match the configured image shape");
}

void write_moments(Checkpoint& ck, const std::string& group, const std::vector<std::string>& names,
                   const Adam& opt) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    ck.tensors.emplace("opt." + group + ".m." + names[i], opt.first_moment(static_cast<int>(i)));
    ck.tensors.emplace("opt." + group + ".v." + names[i], opt.second_moment(static_cast<int>(i)));
  }
}

void read_moments(const Checkpoint& ck, const std::string& group, const std::vector<std::string>& names,
                  Adam& opt) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto m = ck.tensors.find("opt." + group + ".m." + names[i]);
    auto v = ck.tensors.find("opt." + group + ".v." + names[i]);
    require(m != ck.tensors.end() && v != ck.tensors.end(), Errc::checkpoint_corrupt,
            "checkpoint lacks optimizer state for " + names[i]);
    opt.set_moments(static_cast<int>(i), m->second, v->second);
  }
}

json loss_report_to_json(const LossReport& r, std::int64_t step) {
  nlohmann::ordered_json line;
  line["step"] = step;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) line[key] = *v;
  };
  put("L_rec", r.rec);
  put("L_rev", r.rev);
  put("L_advF", r.advF);
  put("L_advC", r.advC);
  put("L_advM", r.advM);
  put("L_DF", r.df);
  put("L_DC", r.dc);
  put("L_DM", r.dm);
  put("L_1", r.l1);
  put("L_2", r.l2);
  put("L_lstm", r.lstm);
  return line;
}

}  // namespace

void TrainConfig::validate() const {
  weights.validate();
  require(k_max >= 0, Errc::invalid_config, "k_max must be >= 0");
  require(batch_size >= 1, Errc::invalid_config, "batch_size must be >= 1");
  require(steps >= 1, Errc::invalid_config, "steps must be >= 1");
  require(lr > 0 && std::isfinite(lr), Errc::invalid_config, "learning rate must be positive");
  require(beta1 >= 0 && beta1 < 1, Errc::invalid_config, "beta1 must be in [0,1)");
  require(beta2 >= 0 && beta2 < 1, Errc::invalid_config, "beta2 must be in [0,1)");
  require(adam_eps > 0, Errc::invalid_config, "adam_eps must be positive");
  require(log_every >= 1, Errc::invalid_config, "log_every must be >= 1");
  require(checkpoint_every >= 1, Errc::invalid_config, "checkpoint_every must be >= 1");
  require(k >= 2, Errc::invalid_config, "k must be >= 2 (content needs the pair x_{k-1}, x_k)");
  require(T > k, Errc::invalid_config, "T must exceed k");
}

json network_config_to_json(const NetworkConfig& cfg) {
  return {{"image_shape", cfg.image_shape},
          {"num_blocks", cfg.num_blocks},
          {"base_channels", cfg.base_channels},
          {"motion_channels", cfg.motion_channels},
          {"content_channels", cfg.content_channels},
          {"clstm_layers", cfg.clstm_layers},
          {"clstm_hidden", cfg.clstm_hidden}};
}

NetworkConfig network_config_from_json(const json& j) {
  NetworkConfig cfg;
  auto shape = j.at("image_shape").get<std::vector<int>>();
  require(shape.size() == 3, Errc::invalid_config, "image_shape must have 3 entries");
  cfg.image_shape = {shape[0], shape[1], shape[2]};
  cfg.num_blocks = j.at("num_blocks").get<int>();
  cfg.base_channels = j.at("base_channels").get<int>();
  cfg.motion_channels = j.at("motion_channels").get<int>();
  cfg.content_channels = j.at("content_channels").get<int>();
  cfg.clstm_layers = j.at("clstm_layers").get<int>();
  cfg.clstm_hidden = j.at("clstm_hidden").get<int>();
  cfg.validate();
  return cfg;
}

json train_config_to_json(const TrainConfig& cfg) {
  return {{"alpha", cfg.weights.alpha},
          {"beta", cfg.weights.beta},
          {"k_max", cfg.k_max},
          {"batch_size", cfg.batch_size},
          {"steps", cfg.steps},
          {"lr", cfg.lr},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"adam_eps", cfg.adam_eps},
          {"seed", cfg.seed},
          {"log_every", cfg.log_every},
          {"checkpoint_every", cfg.checkpoint_every},
          {"k", cfg.k},
          {"T", cfg.T},
          {"use_content_disc", cfg.use_content_disc},
          {"use_motion_disc", cfg.use_motion_disc}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  cfg.weights.alpha = j.at("alpha").get<double>();
  cfg.weights.beta = j.at("beta").get<double>();
  cfg.k_max = j.at("k_max").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.steps = j.at("steps").get<int>();
  cfg.lr = j.at("lr").get<double>();
  cfg.beta1 = j.at("beta1").get<double>();
  cfg.beta2 = j.at("beta2").get<double>();
  cfg.adam_eps = j.at("adam_eps").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.log_every = j.at("log_every").get<int>();
  cfg.checkpoint_every = j.at("checkpoint_every").get<int>();
  cfg.k = j.at("k").get<int>();
  cfg.T = j.at("T").get<int>();
  cfg.use_content_disc = j.at("use_content_disc").get<bool>();
  cfg.use_motion_disc = j.at("use_motion_disc").get<bool>();
  cfg.validate();
  return cfg;
}

void load_model_params(Model<float>& model, const Checkpoint& ck) {
  for (const auto& [name, p] : model.named_params()) {
    auto it = ck.tensors.find(name);
    require(it != ck.tensors.end(), Errc::checkpoint_corrupt, "checkpoint lacks parameter " + name);
    require(it->second.same_shape(p->value), Errc::checkpoint_corrupt,
            "checkpoint parameter " + name + " has shape " + shape_string(it->second) + ", model expects " +
                shape_string(p->value));
    p->value = it->second;
  }
}

Model<float> model_from_checkpoint(const Checkpoint& ck) {
  NetworkConfig net;
  try {
    net = network_config_from_json(ck.config.at("network"));
  } catch (const json::exception& e) {
    fail(Errc::checkpoint_corrupt, std::string("checkpoint network config: ") + e.what());
  }
  Model<float> model(net, 0);
  load_model_params(model, ck);
  return model;
}

// -- Adam ---------------------------------------------------------------------

Adam::Adam(std::vector<ad::VarPtr<float>> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  require(!params_.empty(), Errc::invalid_argument, "optimizer needs at least one parameter");
  for (const auto& p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0f);
}

void Adam::step() {
  t_ += 1;
  const float b1 = static_cast<float>(beta1_);
  const float b2 = static_cast<float>(beta2_);
  const float c1 = static_cast<float>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
  const float c2 = static_cast<float>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
  const float lr = static_cast<float>(lr_);
  const float eps = static_cast<float>(eps_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<float>& value = params_[i]->value;
    const Tensor<float>& grad = params_[i]->grad;
    Tensor<float>& m = m_[i];
    Tensor<float>& v = v_[i];
    for (std::int64_t j = 0; j < value.size(); ++j) {
      float g = grad[j];
      m[j] = b1 * m[j] + (1.0f - b1) * g;
      v[j] = b2 * v[j] + (1.0f - b2) * g * g;
      value[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
  }
}

void Adam::set_updates(std::int64_t t) {
  require(t >= 0, Errc::invalid_argument, "update count must be >= 0");
  t_ = t;
}

void Adam::set_moments(int i, Tensor<float> m, Tensor<float> v) {
  require(i >= 0 && i < size(), Errc::invalid_argument, "moment index out of range");
  auto idx = static_cast<std::size_t>(i);
  require(m.same_shape(params_[idx]->value) && v.same_shape(params_[idx]->value), Errc::shape_mismatch,
          "moment tensors must match the parameter shape");
  m_[idx] = std::move(m);
  v_[idx] = std::move(v);
}

// -- stage 1 --------------------------------------------------------------------

ReproductionTrainer::ReproductionTrainer(const NetworkConfig& net, const TrainConfig& cfg)
    : cfg_((cfg.validate(), net.validate(), cfg)),
      model_(net, cfg.seed),
      eg_names_(names_of(params_with_prefixes(model_, {"E_c.", "E_m.", "G."}))),
      d_names_(names_of(params_with_prefixes(model_, {"D_f.", "D_c.", "D_m."}))),
      opt_eg_(vars_of(params_with_prefixes(model_, {"E_c.", "E_m.", "G."})), cfg.lr, cfg.beta1, cfg.beta2,
              cfg.adam_eps),
      opt_d_(vars_of(params_with_prefixes(model_, {"D_f.", "D_c.", "D_m."})), cfg.lr, cfg.beta1, cfg.beta2,
             cfg.adam_eps) {}

ReproductionTrainer::ReproductionTrainer(const Checkpoint& ck)
    : ReproductionTrainer(
          [&] {
            require(ck.stage == 1, Errc::invalid_argument,
                    "cannot resume reproduction training from a stage-" + std::to_string(ck.stage) +
                        " checkpoint");
            try {
              return network_config_from_json(ck.config.at("network"));
            } catch (const json::exception& e) {
              fail(Errc::checkpoint_corrupt, std::string("checkpoint network config: ") + e.what());
            }
          }(),
          [&] {
            try {
              return train_config_from_json(ck.config.at("train"));
            } catch (const json::exception& e) {
              fail(Errc::checkpoint_corrupt, std::string("checkpoint train config: ") + e.what());
            }
          }()) {
  load_model_params(model_, ck);
  read_moments(ck, "eg", eg_names_, opt_eg_);
  read_moments(ck, "d", d_names_, opt_d_);
  opt_eg_.set_updates(ck.step);
  opt_d_.set_updates(ck.step);
  completed_ = ck.step;
}

StageOneBatch ReproductionTrainer::assemble_batch(const std::vector<VideoClip>& clips, Rng& rng) const {
  require(clips.size() >= 2, Errc::dataset_too_small, "stage-1 sampling needs at least two clips");
  int n = static_cast<int>(clips.size());

  StageOneBatch batch;
  std::vector<Tensor<float>> xt, xt1, xtk;
  for (int i = 0; i < cfg_.batch_size; ++i) {
    const VideoClip& clip = clips[static_cast<std::size_t>(rng.uniform_int(n))];
    TripleSample s = sample_reproduction_triple(clip, cfg_.k_max, rng);
    xt.push_back(std::move(s.x_t));
    xt1.push_back(std::move(s.x_t1));
    xtk.push_back(std::move(s.x_tk));
    batch.ks.push_back(s.k);
  }
  batch.x_t = stack_frames(xt);
  batch.x_t1 = stack_frames(xt1);
  batch.x_tk = stack_frames(xtk);

  DiscriminatorBatches disc = sample_discriminator_batches(clips, cfg_.batch_size, rng);
  auto stack_pairs = [](const std::vector<MotionPairSample>& pairs, bool first, bool a) {
    std::vector<Tensor<float>> frames;
    for (const auto& p : pairs) {
      const FramePair& fp = first ? p.first : p.second;
      frames.push_back(a ? fp.a : fp.b);
    }
    return stack_frames(frames);
  };
  batch.same_first_a = stack_pairs(disc.same_video, true, true);
  batch.same_first_b = stack_pairs(disc.same_video, true, false);
  batch.same_second_a = stack_pairs(disc.same_video, false, true);
  batch.same_second_b = stack_pairs(disc.same_video, false, false);
  batch.cross_first_a = stack_pairs(disc.cross_video, true, true);
  batch.cross_first_b = stack_pairs(disc.cross_video, true, false);
  batch.cross_second_a = stack_pairs(disc.cross_video, false, true);
  batch.cross_second_b = stack_pairs(disc.cross_video, false, false);
  auto stack_side = [](const std::vector<FramePair>& pairs, bool a) {
    std::vector<Tensor<float>> frames;
    for (const auto& p : pairs) frames.push_back(a ? p.a : p.b);
    return stack_frames(frames);
  };
  batch.seq_a = stack_side(disc.sequential, true);
  batch.seq_b = stack_side(disc.sequential, false);
  batch.nonseq_a = stack_side(disc.non_sequential, true);
  batch.nonseq_b = stack_side(disc.non_sequential, false);
  return batch;
}

LossReport ReproductionTrainer::discriminator_update(const StageOneBatch& batch) {
  ad::Tape<float> tape;
  auto x_t = tape.constant(batch.x_t);
  auto x_t1 = tape.constant(batch.x_t1);
  auto x_tk = tape.constant(batch.x_tk);

  // Everything the encoders and generator produce enters this phase as a
  // constant, so the discriminator loss cannot move their parameters.
  ad::VarPtr<float> x_hat;
  FeatureMap<float> m_same_1, m_same_2, m_cross_1, m_cross_2, c_seq, c_nonseq;
  {
    ad::Tape<float>::NoGradGuard guard(tape);
    auto [content, skips] = model_.content_encode(tape, x_t, x_t1);
    FeatureMap<float> motion = model_.motion_encode(tape, x_t1, x_tk);
    x_hat = model_.generate(tape, content, skips, motion);
    if (cfg_.use_content_disc) {
      m_same_1 = model_.motion_encode(tape, tape.constant(batch.same_first_a), tape.constant(batch.same_first_b));
      m_same_2 =
          model_.motion_encode(tape, tape.constant(batch.same_second_a), tape.constant(batch.same_second_b));
      m_cross_1 =
          model_.motion_encode(tape, tape.constant(batch.cross_first_a), tape.constant(batch.cross_first_b));
      m_cross_2 =
          model_.motion_encode(tape, tape.constant(batch.cross_second_a), tape.constant(batch.cross_second_b));
    }
    if (cfg_.use_motion_disc) {
      c_seq = model_.content_encode(tape, tape.constant(batch.seq_a), tape.constant(batch.seq_b)).first;
      c_nonseq = model_.content_encode(tape, tape.constant(batch.nonseq_a), tape.constant(batch.nonseq_b)).first;
    }
  }

  auto d_real = model_.frame_discriminate(tape, x_t, x_tk);
  auto d_fake = model_.frame_discriminate(tape, x_t, x_hat);
  auto df = frame_gan_losses(tape, d_real, d_fake).first;
  auto l2 = df;

  LossReport report;
  report.df = ad::scalar_value(df);
  if (cfg_.use_content_disc) {
    auto d_same = model_.content_discriminate(tape, m_same_1, m_same_2);
    auto d_cross = model_.content_discriminate(tape, m_cross_1, m_cross_2);
    auto dc = content_gan_losses(tape, d_same, d_cross).first;
    report.dc = ad::scalar_value(dc);
    l2 = ad::add(tape, l2, dc);
  }
  if (cfg_.use_motion_disc) {
    auto d_seq = model_.motion_discriminate(tape, c_seq);
    auto d_nonseq = model_.motion_discriminate(tape, c_nonseq);
    auto dm = motion_gan_losses(tape, d_seq, d_nonseq).first;
    report.dm = ad::scalar_value(dm);
    l2 = ad::add(tape, l2, dm);
  }
  report.l2 = ad::scalar_value(l2);
  check_finite(*report.l2, "L_2", completed_);

  opt_d_.zero_grad();
  tape.backward(l2);
  opt_d_.step();
  return report;
}

LossReport ReproductionTrainer::encoder_generator_update(const StageOneBatch& batch) {
  ad::Tape<float> tape;
  auto x_t = tape.constant(batch.x_t);
  auto x_t1 = tape.constant(batch.x_t1);
  auto x_tk = tape.constant(batch.x_tk);

  auto [content, skips] = model_.content_encode(tape, x_t, x_t1);
  FeatureMap<float> motion = model_.motion_encode(tape, x_t1, x_tk);
  auto x_hat = model_.generate(tape, content, skips, motion);

  auto rec = loss_rec(tape, x_hat, x_tk);
  auto rev = loss_rev(tape, model_, x_t, x_t1);
  auto d_fake = model_.frame_discriminate(tape, x_t, x_hat);
  auto advF = mean_neg_log(tape, d_fake);

  LossReport report;
  report.rec = ad::scalar_value(rec);
  report.rev = ad::scalar_value(rev);
  report.advF = ad::scalar_value(advF);

  ad::VarPtr<float> advC, advM;
  if (cfg_.use_content_disc) {
    FeatureMap<float> m_1 =
        model_.motion_encode(tape, tape.constant(batch.same_first_a), tape.constant(batch.same_first_b));
    FeatureMap<float> m_2 =
        model_.motion_encode(tape, tape.constant(batch.same_second_a), tape.constant(batch.same_second_b));
    auto d_same = model_.content_discriminate(tape, m_1, m_2);
    advC = ad::add(tape, mean_neg_log(tape, d_same), mean_neg_log1m(tape, d_same));
    report.advC = ad::scalar_value(advC);
  }
  if (cfg_.use_motion_disc) {
    FeatureMap<float> c_seq =
        model_.content_encode(tape, tape.constant(batch.seq_a), tape.constant(batch.seq_b)).first;
    auto d_seq = model_.motion_discriminate(tape, c_seq);
    advM = ad::add(tape, mean_neg_log(tape, d_seq), mean_neg_log1m(tape, d_seq));
    report.advM = ad::scalar_value(advM);
  }

  ad::VarPtr<float> l1;
  if (advC && advM) {
    l1 = total_encoder_loss(tape, rec, rev, advC, advM, advF, cfg_.weights);
  } else {
    auto adv = advF;
    if (advC) adv = ad::add(tape, adv, advC);
    if (advM) adv = ad::add(tape, adv, advM);
    l1 = ad::add(tape, ad::add(tape, rec, ad::scale(tape, rev, static_cast<float>(cfg_.weights.alpha))),
                 ad::scale(tape, adv, static_cast<float>(cfg_.weights.beta)));
  }
  report.l1 = ad::scalar_value(l1);
  check_finite(*report.l1, "L_1", completed_);

  opt_eg_.zero_grad();
  tape.backward(l1);
  opt_eg_.step();
  return report;
}

LossReport ReproductionTrainer::train_step(const std::vector<VideoClip>& clips) {
  Rng rng(derive_seed(cfg_.seed, stage1_stream(completed_ + 1)));
  StageOneBatch batch = assemble_batch(clips, rng);
  LossReport d_report = discriminator_update(batch);
  LossReport report = encoder_generator_update(batch);
  report.df = d_report.df;
  report.dc = d_report.dc;
  report.dm = d_report.dm;
  report.l2 = d_report.l2;
  completed_ += 1;
  return report;
}

void ReproductionTrainer::run(const std::vector<VideoClip>& clips, std::ostream* log,
                              const std::string& ckpt_path) {
  require_clips_usable(clips, model_.config());
  while (completed_ < cfg_.steps) {
    LossReport report = train_step(clips);
    if (log && completed_ % cfg_.log_every == 0)
      *log << loss_report_to_json(report, completed_).dump() << "\n" << std::flush;
    if (!ckpt_path.empty() && (completed_ % cfg_.checkpoint_every == 0 || completed_ == cfg_.steps))
      save_checkpoint(ckpt_path, snapshot());
  }
}

Checkpoint ReproductionTrainer::snapshot() const {
  Checkpoint ck;
  ck.stage = 1;
  ck.step = completed_;
  ck.config = {{"network", network_config_to_json(model_.config())}, {"train", train_config_to_json(cfg_)}};
  for (const auto& [name, p] : model_.named_params()) ck.tensors.emplace(name, p->value);
  write_moments(ck, "eg", eg_names_, opt_eg_);
  write_moments(ck, "d", d_names_, opt_d_);
  return ck;
}

// -- stage 2 --------------------------------------------------------------------

PredictorTrainer::PredictorTrainer(const Checkpoint& stage1, const TrainConfig& cfg)
    : cfg_((cfg.validate(), cfg)),
      model_([&] {
        require(stage1.stage == 1, Errc::invalid_argument,
                "predictor training starts from a stage-1 checkpoint");
        return model_from_checkpoint(stage1);
      }()),
      clstm_names_(names_of(params_with_prefixes(model_, {"cLSTM."}))),
      opt_clstm_(model_.clstm_params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps) {}

PredictorTrainer::PredictorTrainer(const Checkpoint& ck)
    : PredictorTrainer(
          [&] {
            require(ck.stage == 2, Errc::invalid_argument,
                    "cannot resume predictor training from a stage-" + std::to_string(ck.stage) +
                        " checkpoint");
            Checkpoint as_stage1 = ck;
            as_stage1.stage = 1;
            return as_stage1;
          }(),
          [&] {
            try {
              return train_config_from_json(ck.config.at("train"));
            } catch (const json::exception& e) {
              fail(Errc::checkpoint_corrupt, std::string("checkpoint train config: ") + e.what());
            }
          }()) {
  read_moments(ck, "clstm", clstm_names_, opt_clstm_);
  opt_clstm_.set_updates(ck.step);
  completed_ = ck.step;
}

LossReport PredictorTrainer::train_step(const std::vector<VideoClip>& clips) {
  require(!clips.empty(), Errc::dataset_too_small, "no clips long enough for predictor training");
  for (const auto& c : clips)
    require(static_cast<int>(c.frames.size()) >= cfg_.T, Errc::invalid_argument,
            "clip " + c.clip_id + " is shorter than T");

  Rng rng(derive_seed(cfg_.seed, stage2_stream(completed_ + 1)));
  int n = static_cast<int>(clips.size());
  // Frame t (1-based, t = 1..T) across the batch.
  std::vector<Tensor<float>> frames_at(static_cast<std::size_t>(cfg_.T));
  {
    std::vector<std::vector<Tensor<float>>> columns(static_cast<std::size_t>(cfg_.T));
    for (int i = 0; i < cfg_.batch_size; ++i) {
      const VideoClip& clip = clips[static_cast<std::size_t>(rng.uniform_int(n))];
      for (int t = 0; t < cfg_.T; ++t) columns[static_cast<std::size_t>(t)].push_back(clip.frames[static_cast<std::size_t>(t)]);
    }
    for (int t = 0; t < cfg_.T; ++t) frames_at[static_cast<std::size_t>(t)] = stack_frames(columns[static_cast<std::size_t>(t)]);
  }

  ad::Tape<float> tape;
  // Motion targets m_t = E_m(x_k, x_t), t = 1..T, with the first pair element
  // pinned to the last given frame. The encoders stay frozen, so the targets
  // are plain constants on the tape.
  std::vector<FeatureMap<float>> targets;
  {
    ad::Tape<float>::NoGradGuard guard(tape);
    auto x_k = tape.constant(frames_at[static_cast<std::size_t>(cfg_.k - 1)]);
    for (int t = 0; t < cfg_.T; ++t)
      targets.push_back(model_.motion_encode(tape, x_k, tape.constant(frames_at[static_cast<std::size_t>(t)])));
  }

  // Warm-up: run the ground-truth features through the cLSTM for state; only
  // the output of the final warm-up step (which predicts m_{k+1}) is scored.
  PredictorState<float> state = model_.initial_state(tape, cfg_.batch_size);
  FeatureMap<float> out;
  for (int t = 0; t < cfg_.k; ++t)
    std::tie(state, out) = model_.clstm_step(tape, state, targets[static_cast<std::size_t>(t)]);
  auto teacher = ad::mse(tape, out.values, targets[static_cast<std::size_t>(cfg_.k)].values);

  // Rollout: each prediction is fed back as the next input.
  std::vector<ad::VarPtr<float>> autoregressive;
  for (int t = cfg_.k + 1; t <= cfg_.T - 1; ++t) {
    std::tie(state, out) = model_.clstm_step(tape, state, out);
    autoregressive.push_back(ad::mse(tape, out.values, targets[static_cast<std::size_t>(t)].values));
  }

  auto total = loss_lstm(tape, teacher, autoregressive);
  LossReport report;
  report.lstm = ad::scalar_value(total);
  check_finite(*report.lstm, "L_lstm", completed_);

  opt_clstm_.zero_grad();
  tape.backward(total);
  opt_clstm_.step();
  completed_ += 1;
  return report;
}

void PredictorTrainer::run(const std::vector<VideoClip>& clips, std::ostream* log,
                           const std::string& ckpt_path) {
  require_clips_usable(clips, model_.config());
  std::vector<VideoClip> usable;
  for (const auto& c : clips) {
    if (static_cast<int>(c.frames.size()) >= cfg_.T) {
      usable.push_back(c);
    } else {
      std::cerr << "warning: skipping clip " << c.clip_id << " with " << c.frames.size()
                << " frames (predictor training needs " << cfg_.T << ")\n";
    }
  }
  require(!usable.empty(), Errc::dataset_too_small, "no clips long enough for predictor training");
  while (completed_ < cfg_.steps) {
    LossReport report = train_step(usable);
    if (log && completed_ % cfg_.log_every == 0)
      *log << loss_report_to_json(report, completed_).dump() << "\n" << std::flush;
    if (!ckpt_path.empty() && (completed_ % cfg_.checkpoint_every == 0 || completed_ == cfg_.steps))
      save_checkpoint(ckpt_path, snapshot());
  }
}

Checkpoint PredictorTrainer::snapshot() const {
  Checkpoint ck;
  ck.stage = 2;
  ck.step = completed_;
  ck.config = {{"network", network_config_to_json(model_.config())}, {"train", train_config_to_json(cfg_)}};
  for (const auto& [name, p] : model_.named_params()) ck.tensors.emplace(name, p->value);
  write_moments(ck, "clstm", clstm_names_, opt_clstm_);
  return ck;
}

}  // namespace msnet
