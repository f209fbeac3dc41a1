#include "msnet/prediction.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <tuple>
#include <utility>

#include <json.hpp>

#include "msnet/common.hpp"
#include "msnet/gif.hpp"
#include "msnet/png_io.hpp"

namespace fs = std::filesystem;

namespace msnet {
namespace {

// Wraps a [C,H,W] frame as a batch-of-one constant on the tape.
ad::VarPtr<float> batch_of_one(ad::Tape<float>& tape, const Tensor<float>& frame,
                               const std::array<int, 3>& image_shape) {
  require(frame.rank() == 3, Errc::shape_mismatch, "prediction expects [C,H,W] frames");
  require(frame.shape(0) == image_shape[0] && frame.shape(1) == image_shape[1] && frame.shape(2) == image_shape[2],
          Errc::shape_mismatch, "frame shape does not match the model's image shape");
  Tensor<float> batched({1, frame.shape(0), frame.shape(1), frame.shape(2)});
  std::copy(frame.data(), frame.data() + frame.size(), batched.data());
  return tape.constant(std::move(batched));
}

// Drops the leading batch dimension of a [1,C,H,W] tensor.
Tensor<float> first_of_batch(const Tensor<float>& batched) {
  Tensor<float> frame({batched.shape(1), batched.shape(2), batched.shape(3)});
  std::copy(batched.data(), batched.data() + frame.size(), frame.data());
  return frame;
}

std::string frame_name(const char* stem, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%04d.png", stem, index);
  return buf;
}

}  // namespace

void PredictionRequest::validate() const {
  require(static_cast<int>(given.size()) >= 2, Errc::invalid_argument,
          "prediction needs at least two given frames for the content pair");
  require(horizon >= 1, Errc::invalid_argument, "prediction horizon must be at least 1");
}

Tensor<float> reproduce_frame(const Model<float>& model, const Tensor<float>& x_t, const Tensor<float>& x_t1,
                              const Tensor<float>& x_tk) {
  ad::Tape<float> tape;
  ad::Tape<float>::NoGradGuard guard(tape);
  const auto& shape = model.config().image_shape;
  auto a = batch_of_one(tape, x_t, shape);
  auto b = batch_of_one(tape, x_t1, shape);
  auto c = batch_of_one(tape, x_tk, shape);
  auto [content, skips] = model.content_encode(tape, a, b);
  auto x_hat = model.generate(tape, content, skips, model.motion_encode(tape, b, c));
  return first_of_batch(x_hat->value);
}

std::vector<Tensor<float>> predict_sequence(const Model<float>& model, const PredictionRequest& request) {
  request.validate();
  ad::Tape<float> tape;
  ad::Tape<float>::NoGradGuard guard(tape);
  const auto& shape = model.config().image_shape;
  const int k = static_cast<int>(request.given.size());

  // Content features and skips are pinned to the last two given frames and
  // reused for every decoded step.
  auto x_last = batch_of_one(tape, request.given[static_cast<std::size_t>(k - 1)], shape);
  auto [content, skips] =
      model.content_encode(tape, batch_of_one(tape, request.given[static_cast<std::size_t>(k - 2)], shape), x_last);

  // Warm-up: feed the motion between the last given frame and each given
  // frame in order. The output after the final warm-up step is the first
  // predicted motion feature.
  PredictorState<float> state = model.initial_state(tape, 1);
  FeatureMap<float> motion;
  for (int t = 0; t < k; ++t) {
    auto x_t = batch_of_one(tape, request.given[static_cast<std::size_t>(t)], shape);
    std::tie(state, motion) = model.clstm_step(tape, state, model.motion_encode(tape, x_last, x_t));
  }

  std::vector<Tensor<float>> frames;
  frames.reserve(static_cast<std::size_t>(request.horizon));
  for (int i = 0; i < request.horizon; ++i) {
    if (i > 0) std::tie(state, motion) = model.clstm_step(tape, state, motion);
    auto frame = model.generate(tape, content, skips, motion);
    frames.push_back(first_of_batch(frame->value));
  }
  return frames;
}

void write_prediction(const std::string& out_dir, const std::vector<Tensor<float>>& given,
                      const std::vector<Tensor<float>>& predicted, bool gif) {
  require(!predicted.empty(), Errc::invalid_argument, "write_prediction: no predicted frames");
  fs::create_directories(out_dir);

  nlohmann::ordered_json meta;
  meta["given_frames"] = given.size();
  meta["predicted_frames"] = predicted.size();
  const Tensor<float>& probe = given.empty() ? predicted.front() : given.front();
  meta["image_shape"] = std::vector<int>{probe.shape(0), probe.shape(1), probe.shape(2)};

  std::vector<std::string> given_files, predicted_files;
  for (std::size_t i = 0; i < given.size(); ++i) {
    given_files.push_back(frame_name("given", static_cast<int>(i) + 1));
    write_png((fs::path(out_dir) / given_files.back()).string(), given[i]);
  }
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    predicted_files.push_back(frame_name("pred", static_cast<int>(i) + 1));
    write_png((fs::path(out_dir) / predicted_files.back()).string(), predicted[i]);
  }
  meta["given"] = given_files;
  meta["predicted"] = predicted_files;

  if (gif) {
    std::vector<Tensor<float>> all(given);
    all.insert(all.end(), predicted.begin(), predicted.end());
    write_gif((fs::path(out_dir) / "prediction.gif").string(), all);
    meta["gif"] = "prediction.gif";
  }

  std::ofstream out(fs::path(out_dir) / "metadata.json");
  require(out.good(), Errc::io_error, "cannot write prediction metadata");
  out << meta.dump(2) << "\n";
  require(out.good(), Errc::io_error, "failed writing prediction metadata");
}

}  // namespace msnet
