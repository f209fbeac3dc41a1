#pragma once

#include <string>
#include <vector>

#include "msnet/networks.hpp"
#include "msnet/tensor.hpp"

namespace msnet {

struct PredictionRequest {
  std::vector<Tensor<float>> given;  // x_1..x_k, each [C,H,W]
  int horizon = 1;                   // frames to predict

  void validate() const;  // k >= 2, horizon >= 1
};

/// Reproduces a single frame from disentangled features:
/// G(E_c(x_t, x_{t+1}), skips, E_m(x_{t+1}, x_{t+k})). Takes and returns
/// [C,H,W] frames; output values lie in (0,1).
Tensor<float> reproduce_frame(const Model<float>& model, const Tensor<float>& x_t,
                              const Tensor<float>& x_t1, const Tensor<float>& x_tk);

/// Multi-step prediction. Content features and skips come from the last two
/// given frames and are computed exactly once; the motion stream is warmed up
/// on E_m(x_k, x_t) for t = 1..k and then rolled forward horizon-1 times with
/// each predicted feature fed back unmodified. Every predicted feature is
/// decoded against the fixed content, yielding exactly `horizon` frames.
std::vector<Tensor<float>> predict_sequence(const Model<float>& model, const PredictionRequest& request);

/// Writes given_NNNN.png / pred_NNNN.png frames and a metadata.json sidecar
/// into `out_dir`; with `gif` set, also writes prediction.gif animating the
/// given frames followed by the predicted ones.
void write_prediction(const std::string& out_dir, const std::vector<Tensor<float>>& given,
                      const std::vector<Tensor<float>>& predicted, bool gif);

}  // namespace msnet
