#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "msnet/autodiff.hpp"
#include "msnet/rng.hpp"
#include "msnet/tensor.hpp"

namespace msnet {

enum class FeatureKind { content, motion, predicted_motion, skip };

/// Batched feature map [N,c,h,w] tagged with its role and downsampling level
/// (level 0 = input resolution, level num_blocks = bottleneck).
template <typename S>
struct FeatureMap {
  ad::VarPtr<S> values;
  FeatureKind kind = FeatureKind::content;
  int level = 0;
};

struct NetworkConfig {
  std::array<int, 3> image_shape{1, 64, 64};  // C,H,W
  int num_blocks = 4;
  int base_channels = 32;
  int motion_channels = 4;
  int content_channels = 8;
  int clstm_layers = 2;
  int clstm_hidden = 32;

  void validate() const {
    require(num_blocks >= 1 && base_channels >= 1 && motion_channels >= 1 && content_channels >= 1 &&
                clstm_layers >= 1 && clstm_hidden >= 1,
            Errc::invalid_config, "network sizes must be positive");
    int div = 1 << num_blocks;
    require(image_shape[0] >= 1 && image_shape[1] % div == 0 && image_shape[2] % div == 0,
            Errc::invalid_config, "image size must be divisible by 2^num_blocks");
  }

  int bottleneck_h() const { return image_shape[1] >> num_blocks; }
  int bottleneck_w() const { return image_shape[2] >> num_blocks; }

  /// Channel width of the encoder feature at downsampling level 1..num_blocks
  /// (level 0 is the decoder's final pre-output width).
  int channels_at(int level) const {
    return level <= 0 ? base_channels : base_channels << (level - 1);
  }
};

/// Per-layer (hidden, cell) pairs of the recurrent predictor.
template <typename S>
using PredictorState = std::vector<std::pair<ad::VarPtr<S>, ad::VarPtr<S>>>;

template <typename S>
struct ConvLayer {
  ad::VarPtr<S> weight, bias;
};

template <typename S>
struct NormLayer {
  ad::VarPtr<S> gamma, beta;
};

template <typename S>
struct LinearLayer {
  ad::VarPtr<S> weight, bias;
};

/// The six networks plus the recurrent predictor, owning all parameters.
/// Forward methods build onto a caller-provided tape; they are pure with
/// respect to the parameters.
template <typename S>
class Model {
 public:
  static constexpr double kProbEps = 1e-7;

  Model(NetworkConfig config, std::uint64_t seed) : cfg_(config) {
    cfg_.validate();
    Rng rng(seed);
    int nb = cfg_.num_blocks;
    int c_in = cfg_.image_shape[0];

    auto build_encoder = [&](Encoder& e, int out_channels) {
      int ci = 2 * c_in;
      for (int i = 0; i < nb; ++i) {
        int co = cfg_.channels_at(i + 1);
        e.blocks.push_back({make_conv(rng, co, ci, 3), make_norm(co)});
        ci = co;
      }
      e.head = make_conv(rng, out_channels, ci, 1);
    };
    build_encoder(ec_, cfg_.content_channels);
    build_encoder(em_, cfg_.motion_channels);

    int cz = cfg_.channels_at(nb);
    g_.bottleneck = make_conv(rng, cz, cfg_.content_channels + cfg_.motion_channels, 1);
    g_.bottleneck_norm = make_norm(cz);
    for (int level = nb; level >= 1; --level) {
      int ci = cfg_.channels_at(level);
      int co = cfg_.channels_at(level - 1);
      GeneratorBlock blk;
      blk.mgc = make_conv(rng, ci, ci + cfg_.motion_channels, 1);
      blk.conv = make_conv(rng, co, ci, 3);
      blk.norm = make_norm(co);
      g_.blocks.push_back(std::move(blk));
    }
    g_.out = make_conv(rng, c_in, cfg_.channels_at(0), 1);

    {
      int ci = 2 * c_in;
      for (int i = 0; i < 4; ++i) {
        int co = cfg_.base_channels << i;
        df_.blocks.push_back(make_conv(rng, co, ci, 3));
        ci = co;
      }
      df_.head = make_linear(rng, 1, ci);
    }
    dc_.conv0 = make_conv(rng, 2 * cfg_.base_channels, 2 * cfg_.motion_channels, 3);
    dc_.conv1 = make_conv(rng, 2 * cfg_.base_channels, 2 * cfg_.base_channels, 3);
    dc_.head = make_linear(rng, 1, 2 * cfg_.base_channels);
    dm_.conv0 = make_conv(rng, 2 * cfg_.base_channels, cfg_.content_channels, 3);
    dm_.conv1 = make_conv(rng, 2 * cfg_.base_channels, 2 * cfg_.base_channels, 3);
    dm_.head = make_linear(rng, 1, 2 * cfg_.base_channels);

    {
      int ci = cfg_.motion_channels;
      for (int l = 0; l < cfg_.clstm_layers; ++l) {
        ClstmLayer layer;
        layer.wx = make_conv(rng, 4 * cfg_.clstm_hidden, ci, 3);
        layer.wh = ad::parameter(fan_in_uniform(rng, {4 * cfg_.clstm_hidden, cfg_.clstm_hidden, 3, 3},
                                                cfg_.clstm_hidden * 9));
        lstm_.layers.push_back(std::move(layer));
        ci = cfg_.clstm_hidden;
      }
      lstm_.proj = make_conv(rng, cfg_.motion_channels, cfg_.clstm_hidden, 1);
    }
  }

  const NetworkConfig& config() const { return cfg_; }

  // -- encoders -------------------------------------------------------------

  std::pair<FeatureMap<S>, std::vector<FeatureMap<S>>> content_encode(ad::Tape<S>& tape,
                                                                      const ad::VarPtr<S>& frame_a,
                                                                      const ad::VarPtr<S>& frame_b) const {
    check_frame(frame_a, "content_encode");
    check_frame(frame_b, "content_encode");
    auto x = ad::concat_channels(tape, frame_a, frame_b);
    std::vector<FeatureMap<S>> skips;
    for (int i = 0; i < cfg_.num_blocks; ++i) {
      const auto& blk = ec_.blocks[static_cast<std::size_t>(i)];
      x = ad::leaky_relu(tape, norm(tape, ad::conv2d(tape, x, blk.conv.weight, blk.conv.bias, 2, 1), blk.norm),
                         S(kLeakySlope));
      skips.push_back({x, FeatureKind::skip, i + 1});
    }
    auto content = ad::conv2d(tape, x, ec_.head.weight, ec_.head.bias, 1, 0);
    return {{content, FeatureKind::content, cfg_.num_blocks}, std::move(skips)};
  }

  FeatureMap<S> motion_encode(ad::Tape<S>& tape, const ad::VarPtr<S>& frame_a, const ad::VarPtr<S>& frame_b) const {
    check_frame(frame_a, "motion_encode");
    check_frame(frame_b, "motion_encode");
    auto x = ad::concat_channels(tape, frame_a, frame_b);
    for (int i = 0; i < cfg_.num_blocks; ++i) {
      const auto& blk = em_.blocks[static_cast<std::size_t>(i)];
      x = ad::leaky_relu(tape, norm(tape, ad::conv2d(tape, x, blk.conv.weight, blk.conv.bias, 2, 1), blk.norm),
                         S(kLeakySlope));
    }
    return {ad::conv2d(tape, x, em_.head.weight, em_.head.bias, 1, 0), FeatureKind::motion, cfg_.num_blocks};
  }

  // -- generator ------------------------------------------------------------

  /// Injects motion into one encoder skip: the motion map is bilinearly
  /// upscaled to the skip's resolution, concatenated, squeezed back to the
  /// skip's width by a 1x1 convolution and added residually.
  FeatureMap<S> motion_guided_connect(ad::Tape<S>& tape, const FeatureMap<S>& block_feature,
                                      const FeatureMap<S>& motion) const {
    require(block_feature.kind == FeatureKind::skip, Errc::invalid_argument,
            "motion_guided_connect expects a skip feature");
    check_motion(motion, "motion_guided_connect");
    int j = cfg_.num_blocks - block_feature.level;
    require(j >= 0 && j < cfg_.num_blocks, Errc::invalid_argument, "motion_guided_connect: bad skip level");
    const auto& sh = block_feature.values->value.shape();
    const auto& blk = g_.blocks[static_cast<std::size_t>(j)];
    auto up = ad::bilinear_resize(tape, motion.values, sh[2], sh[3]);
    auto mixed = ad::conv2d(tape, ad::concat_channels(tape, block_feature.values, up), blk.mgc.weight,
                            blk.mgc.bias, 1, 0);
    return {ad::add(tape, block_feature.values, mixed), FeatureKind::skip, block_feature.level};
  }

  ad::VarPtr<S> generate(ad::Tape<S>& tape, const FeatureMap<S>& content,
                         const std::vector<FeatureMap<S>>& skips, const FeatureMap<S>& motion) const {
    require(content.kind == FeatureKind::content, Errc::invalid_argument, "generate expects a content feature");
    check_motion(motion, "generate");
    require(static_cast<int>(skips.size()) == cfg_.num_blocks, Errc::invalid_argument,
            "generate: skip count must equal num_blocks");
    auto z = ad::concat_channels(tape, content.values, motion.values);
    z = ad::leaky_relu(
        tape, norm(tape, ad::conv2d(tape, z, g_.bottleneck.weight, g_.bottleneck.bias, 1, 0), g_.bottleneck_norm),
        S(kLeakySlope));
    for (int level = cfg_.num_blocks; level >= 1; --level) {
      const auto& blk = g_.blocks[static_cast<std::size_t>(cfg_.num_blocks - level)];
      const auto& skip = skips[static_cast<std::size_t>(level - 1)];
      require(skip.level == level, Errc::invalid_argument, "generate: skips out of order");
      z = ad::add(tape, z, motion_guided_connect(tape, skip, motion).values);
      z = ad::upsample_nearest2(tape, z);
      z = ad::leaky_relu(tape, norm(tape, ad::conv2d(tape, z, blk.conv.weight, blk.conv.bias, 1, 1), blk.norm),
                         S(kLeakySlope));
    }
    return ad::sigmoid(tape, ad::conv2d(tape, z, g_.out.weight, g_.out.bias, 1, 0));
  }

  // -- discriminators (each returns per-sample probabilities [N,1]) ---------

  ad::VarPtr<S> frame_discriminate(ad::Tape<S>& tape, const ad::VarPtr<S>& frame_a,
                                   const ad::VarPtr<S>& frame_b) const {
    check_frame(frame_a, "frame_discriminate");
    check_frame(frame_b, "frame_discriminate");
    auto x = ad::concat_channels(tape, frame_a, frame_b);
    for (const auto& blk : df_.blocks)
      x = ad::leaky_relu(tape, ad::conv2d(tape, x, blk.weight, blk.bias, 2, 1), S(kLeakySlope));
    return probability_head(tape, x, df_.head);
  }

  ad::VarPtr<S> content_discriminate(ad::Tape<S>& tape, const FeatureMap<S>& motion_1,
                                     const FeatureMap<S>& motion_2) const {
    check_motion(motion_1, "content_discriminate");
    check_motion(motion_2, "content_discriminate");
    auto x = ad::concat_channels(tape, motion_1.values, motion_2.values);
    x = ad::leaky_relu(tape, ad::conv2d(tape, x, dc_.conv0.weight, dc_.conv0.bias, 1, 1), S(kLeakySlope));
    x = ad::leaky_relu(tape, ad::conv2d(tape, x, dc_.conv1.weight, dc_.conv1.bias, 1, 1), S(kLeakySlope));
    return probability_head(tape, x, dc_.head);
  }

  ad::VarPtr<S> motion_discriminate(ad::Tape<S>& tape, const FeatureMap<S>& content) const {
    require(content.kind == FeatureKind::content, Errc::invalid_argument,
            "motion_discriminate expects a content feature");
    auto x = ad::leaky_relu(tape, ad::conv2d(tape, content.values, dm_.conv0.weight, dm_.conv0.bias, 1, 1),
                            S(kLeakySlope));
    x = ad::leaky_relu(tape, ad::conv2d(tape, x, dm_.conv1.weight, dm_.conv1.bias, 1, 1), S(kLeakySlope));
    return probability_head(tape, x, dm_.head);
  }

  // -- recurrent predictor ---------------------------------------------------

  PredictorState<S> initial_state(ad::Tape<S>& tape, int batch) const {
    PredictorState<S> state;
    for (int l = 0; l < cfg_.clstm_layers; ++l) {
      Tensor<S> zeros({batch, cfg_.clstm_hidden, cfg_.bottleneck_h(), cfg_.bottleneck_w()});
      state.emplace_back(tape.constant(zeros), tape.constant(zeros));
    }
    return state;
  }

  std::pair<PredictorState<S>, FeatureMap<S>> clstm_step(ad::Tape<S>& tape, const PredictorState<S>& state,
                                                         const FeatureMap<S>& motion_in) const {
    check_motion(motion_in, "clstm_step");
    require(static_cast<int>(state.size()) == cfg_.clstm_layers, Errc::invalid_argument,
            "clstm_step: state layer count mismatch");
    PredictorState<S> next;
    auto x = motion_in.values;
    int hc = cfg_.clstm_hidden;
    for (int l = 0; l < cfg_.clstm_layers; ++l) {
      const auto& layer = lstm_.layers[static_cast<std::size_t>(l)];
      const auto& [h, c] = state[static_cast<std::size_t>(l)];
      require(h->value.shape(0) == x->value.shape(0) && h->value.shape(2) == x->value.shape(2) &&
                  h->value.shape(3) == x->value.shape(3),
              Errc::shape_mismatch, "clstm_step: state shape mismatch");
      auto gates = ad::add(tape, ad::conv2d(tape, x, layer.wx.weight, layer.wx.bias, 1, 1),
                           ad::conv2d(tape, h, layer.wh, ad::VarPtr<S>{}, 1, 1));
      auto gi = ad::sigmoid(tape, ad::slice_channels(tape, gates, 0, hc));
      auto gf = ad::sigmoid(tape, ad::slice_channels(tape, gates, hc, 2 * hc));
      auto gg = ad::tanh_op(tape, ad::slice_channels(tape, gates, 2 * hc, 3 * hc));
      auto go = ad::sigmoid(tape, ad::slice_channels(tape, gates, 3 * hc, 4 * hc));
      auto c_next = ad::add(tape, ad::mul(tape, gf, c), ad::mul(tape, gi, gg));
      auto h_next = ad::mul(tape, go, ad::tanh_op(tape, c_next));
      next.emplace_back(h_next, c_next);
      x = h_next;
    }
    auto out = ad::conv2d(tape, x, lstm_.proj.weight, lstm_.proj.bias, 1, 0);
    return {std::move(next), FeatureMap<S>{out, FeatureKind::predicted_motion, cfg_.num_blocks}};
  }

  // -- parameter access -------------------------------------------------------

  std::vector<std::pair<std::string, ad::VarPtr<S>>> named_params() const {
    std::vector<std::pair<std::string, ad::VarPtr<S>>> out;
    auto enc = [&](const char* name, const Encoder& e) {
      for (std::size_t i = 0; i < e.blocks.size(); ++i) {
        std::string p = std::string(name) + ".block" + std::to_string(i);
        out.emplace_back(p + ".conv.weight", e.blocks[i].conv.weight);
        out.emplace_back(p + ".conv.bias", e.blocks[i].conv.bias);
        out.emplace_back(p + ".norm.gamma", e.blocks[i].norm.gamma);
        out.emplace_back(p + ".norm.beta", e.blocks[i].norm.beta);
      }
      out.emplace_back(std::string(name) + ".head.weight", e.head.weight);
      out.emplace_back(std::string(name) + ".head.bias", e.head.bias);
    };
    enc("E_c", ec_);
    enc("E_m", em_);
    out.emplace_back("G.bottleneck.weight", g_.bottleneck.weight);
    out.emplace_back("G.bottleneck.bias", g_.bottleneck.bias);
    out.emplace_back("G.bottleneck_norm.gamma", g_.bottleneck_norm.gamma);
    out.emplace_back("G.bottleneck_norm.beta", g_.bottleneck_norm.beta);
    for (std::size_t j = 0; j < g_.blocks.size(); ++j) {
      std::string p = "G.block" + std::to_string(j);
      out.emplace_back(p + ".mgc.weight", g_.blocks[j].mgc.weight);
      out.emplace_back(p + ".mgc.bias", g_.blocks[j].mgc.bias);
      out.emplace_back(p + ".conv.weight", g_.blocks[j].conv.weight);
      out.emplace_back(p + ".conv.bias", g_.blocks[j].conv.bias);
      out.emplace_back(p + ".norm.gamma", g_.blocks[j].norm.gamma);
      out.emplace_back(p + ".norm.beta", g_.blocks[j].norm.beta);
    }
    out.emplace_back("G.out.weight", g_.out.weight);
    out.emplace_back("G.out.bias", g_.out.bias);
    for (std::size_t i = 0; i < df_.blocks.size(); ++i) {
      std::string p = "D_f.block" + std::to_string(i);
      out.emplace_back(p + ".conv.weight", df_.blocks[i].weight);
      out.emplace_back(p + ".conv.bias", df_.blocks[i].bias);
    }
    out.emplace_back("D_f.head.weight", df_.head.weight);
    out.emplace_back("D_f.head.bias", df_.head.bias);
    auto fdisc = [&](const char* name, const FeatureDisc& d) {
      out.emplace_back(std::string(name) + ".conv0.weight", d.conv0.weight);
      out.emplace_back(std::string(name) + ".conv0.bias", d.conv0.bias);
      out.emplace_back(std::string(name) + ".conv1.weight", d.conv1.weight);
      out.emplace_back(std::string(name) + ".conv1.bias", d.conv1.bias);
      out.emplace_back(std::string(name) + ".head.weight", d.head.weight);
      out.emplace_back(std::string(name) + ".head.bias", d.head.bias);
    };
    fdisc("D_c", dc_);
    fdisc("D_m", dm_);
    for (std::size_t l = 0; l < lstm_.layers.size(); ++l) {
      std::string p = "cLSTM.layer" + std::to_string(l);
      out.emplace_back(p + ".wx.weight", lstm_.layers[l].wx.weight);
      out.emplace_back(p + ".wx.bias", lstm_.layers[l].wx.bias);
      out.emplace_back(p + ".wh.weight", lstm_.layers[l].wh);
    }
    out.emplace_back("cLSTM.proj.weight", lstm_.proj.weight);
    out.emplace_back("cLSTM.proj.bias", lstm_.proj.bias);
    return out;
  }

  /// Encoder + generator group (stage-1 "generation side" of the alternation).
  std::vector<ad::VarPtr<S>> eg_params() const { return collect_prefix({"E_c.", "E_m.", "G."}); }
  /// The three discriminators (stage-1 "discrimination side").
  std::vector<ad::VarPtr<S>> d_params() const { return collect_prefix({"D_f.", "D_c.", "D_m."}); }
  /// Recurrent predictor only (stage-2 freezes everything else).
  std::vector<ad::VarPtr<S>> clstm_params() const { return collect_prefix({"cLSTM."}); }

 private:
  static constexpr double kLeakySlope = 0.2;

  struct EncoderBlock {
    ConvLayer<S> conv;
    NormLayer<S> norm;
  };
  struct Encoder {
    std::vector<EncoderBlock> blocks;
    ConvLayer<S> head;
  };
  struct GeneratorBlock {
    ConvLayer<S> mgc;
    ConvLayer<S> conv;
    NormLayer<S> norm;
  };
  struct Generator {
    ConvLayer<S> bottleneck;
    NormLayer<S> bottleneck_norm;
    std::vector<GeneratorBlock> blocks;
    ConvLayer<S> out;
  };
  struct FrameDisc {
    std::vector<ConvLayer<S>> blocks;
    LinearLayer<S> head;
  };
  struct FeatureDisc {
    ConvLayer<S> conv0, conv1;
    LinearLayer<S> head;
  };
  struct ClstmLayer {
    ConvLayer<S> wx;
    ad::VarPtr<S> wh;  // hidden-to-gates kernel; no bias
  };
  struct Clstm {
    std::vector<ClstmLayer> layers;
    ConvLayer<S> proj;
  };

  static Tensor<S> fan_in_uniform(Rng& rng, std::vector<int> shape, int fan_in) {
    Tensor<S> t(std::move(shape));
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.uniform(-bound, bound));
    return t;
  }

  static ConvLayer<S> make_conv(Rng& rng, int co, int ci, int k) {
    return {ad::parameter(fan_in_uniform(rng, {co, ci, k, k}, ci * k * k)),
            ad::parameter(Tensor<S>({co}))};
  }

  static LinearLayer<S> make_linear(Rng& rng, int o, int f) {
    return {ad::parameter(fan_in_uniform(rng, {o, f}, f)), ad::parameter(Tensor<S>({o}))};
  }

  static NormLayer<S> make_norm(int c) {
    return {ad::parameter(Tensor<S>({c}, S(1))), ad::parameter(Tensor<S>({c}))};
  }

  ad::VarPtr<S> norm(ad::Tape<S>& tape, const ad::VarPtr<S>& x, const NormLayer<S>& n) const {
    return ad::instance_norm(tape, x, n.gamma, n.beta, S(1e-5));
  }

  ad::VarPtr<S> probability_head(ad::Tape<S>& tape, const ad::VarPtr<S>& x, const LinearLayer<S>& head) const {
    auto logits = ad::linear(tape, ad::global_avg_pool(tape, x), head.weight, head.bias);
    return ad::clamp(tape, ad::sigmoid(tape, logits), S(kProbEps), S(1) - S(kProbEps));
  }

  void check_frame(const ad::VarPtr<S>& f, const char* op) const {
    const auto& s = f->value.shape();
    require(s.size() == 4 && s[1] == cfg_.image_shape[0] && s[2] == cfg_.image_shape[1] &&
                s[3] == cfg_.image_shape[2],
            Errc::shape_mismatch, std::string(op) + ": frame shape " + shape_string(f->value));
  }

  void check_motion(const FeatureMap<S>& m, const char* op) const {
    require(m.kind == FeatureKind::motion || m.kind == FeatureKind::predicted_motion, Errc::invalid_argument,
            std::string(op) + " expects a motion feature");
  }

  std::vector<ad::VarPtr<S>> collect_prefix(std::initializer_list<const char*> prefixes) const {
    std::vector<ad::VarPtr<S>> out;
    for (const auto& [name, p] : named_params())
      for (const char* prefix : prefixes)
        if (name.rfind(prefix, 0) == 0) {
          out.push_back(p);
          break;
        }
    return out;
  }

  NetworkConfig cfg_;
  Encoder ec_, em_;
  Generator g_;
  FrameDisc df_;
  FeatureDisc dc_, dm_;
  Clstm lstm_;
};

}  // namespace msnet
