#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "msnet/dataset.hpp"
#include "msnet/networks.hpp"
#include "msnet/tensor.hpp"

namespace msnet {

/// Peak signal-to-noise ratio in decibels for frames with unit dynamic
/// range: 10*log10(1/MSE), capped at 100 dB once the mean squared error
/// drops below 1e-10. Symmetric in its arguments.
double psnr(const Tensor<float>& x, const Tensor<float>& y);

/// Structural similarity over an 11x11 Gaussian window (sigma 1.5) with
/// K1=0.01, K2=0.03 and unit dynamic range, averaged over valid window
/// positions only. Multi-channel frames are averaged to a single plane
/// first; all arithmetic runs in double precision.
double ssim(const Tensor<float>& x, const Tensor<float>& y);

/// Per-offset statistics of one metric over a test set. Entry i describes
/// prediction offset i+1; std is the population standard deviation.
struct MetricCurve {
  std::string metric;  // "ssim" or "psnr"
  std::vector<double> mean;
  std::vector<double> std_dev;
  int num_sequences = 0;
};

std::string curve_to_csv(const MetricCurve& curve);
nlohmann::ordered_json curve_to_json(const MetricCurve& curve);

/// Model curves next to the copy-last-frame baseline, which repeats the
/// final given frame for every offset.
struct EvaluationReport {
  MetricCurve model_ssim, model_psnr;
  MetricCurve baseline_ssim, baseline_psnr;
};

/// Predicts `t_out` frames from the first `k` of each clip and scores them
/// against the ground truth at each offset. Clips shorter than k + t_out are
/// skipped with a warning; failing every clip is an error.
EvaluationReport evaluate_prediction(const Model<float>& model, const std::vector<VideoClip>& clips, int k,
                                     int t_out);

/// One flattened feature vector extracted from a pair of frames of one clip,
/// tagged with the clip's labels.
struct FeatureRecord {
  std::string clip_id;
  int frame_a = 0, frame_b = 0;
  FeatureKind kind = FeatureKind::motion;
  std::vector<float> vec;
  std::string motion_label, content_label;
};

/// Extracts features for every adjacent frame pair (x_a, x_{a+1}) of every
/// clip: E_m for the motion kind, E_c for the content kind. Records arrive
/// in clip order, then frame order; clips without labels produce records
/// with empty label strings and a warning on stderr.
std::vector<FeatureRecord> compute_features(const Model<float>& model, const std::vector<VideoClip>& clips,
                                            FeatureKind kind);

/// Writes records as CSV with header
/// clip_id,frame_a,frame_b,kind,motion_label,content_label,v0..vN.
void write_features_csv(const std::string& path, const std::vector<FeatureRecord>& records);

struct RankedMatch {
  FeatureRecord record;
  double distance = 0.0;
};

/// Ranks candidates by ascending Euclidean distance to the query vector,
/// breaking ties by clip_id, then frame_a, then frame_b. Query and all
/// candidates must be of the requested kind and share one vector length.
std::vector<RankedMatch> retrieve_nearest(const FeatureRecord& query, const std::vector<FeatureRecord>& candidates,
                                          FeatureKind kind);

enum class LabelField { motion, content };

/// Mean silhouette coefficient s(i) = (b(i)-a(i))/max(a(i),b(i)) under
/// Euclidean distance, grouping records by the chosen label. a(i) is the
/// mean distance to the record's own group excluding itself; b(i) is the
/// smallest mean distance to any other group. Records in singleton groups
/// score 0, as does the a = b = 0 degenerate case. Needs at least two
/// distinct labels.
double silhouette_probe(const std::vector<FeatureRecord>& records, LabelField field);

}  // namespace msnet
