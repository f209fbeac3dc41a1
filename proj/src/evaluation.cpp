#include "msnet/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>

#include "msnet/common.hpp"
#include "msnet/prediction.hpp"

namespace msnet {
namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2 with L = 1
constexpr double kC2 = 0.03 * 0.03;  // (K2 * L)^2

const std::array<double, kWindow * kWindow>& gaussian_window() {
  static const auto window = [] {
    std::array<double, kWindow * kWindow> w{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i)
      for (int j = 0; j < kWindow; ++j) {
        double dy = i - kWindow / 2, dx = j - kWindow / 2;
        w[static_cast<std::size_t>(i * kWindow + j)] = std::exp(-(dy * dy + dx * dx) / (2.0 * kSigma * kSigma));
        sum += w[static_cast<std::size_t>(i * kWindow + j)];
      }
    for (double& v : w) v /= sum;
    return w;
  }();
  return window;
}

// Channel-averaged double-precision plane of a [C,H,W] frame.
std::vector<double> to_gray(const Tensor<float>& t) {
  int channels = t.shape(0);
  std::int64_t pixels = static_cast<std::int64_t>(t.shape(1)) * t.shape(2);
  std::vector<double> gray(static_cast<std::size_t>(pixels), 0.0);
  for (int c = 0; c < channels; ++c)
    for (std::int64_t p = 0; p < pixels; ++p)
      gray[static_cast<std::size_t>(p)] += t.data()[static_cast<std::int64_t>(c) * pixels + p];
  for (double& v : gray) v /= channels;
  return gray;
}

void check_frame_pair(const Tensor<float>& x, const Tensor<float>& y, const char* op) {
  require(x.rank() == 3 && y.rank() == 3, Errc::shape_mismatch, std::string(op) + " expects [C,H,W] frames");
  require(x.same_shape(y), Errc::shape_mismatch, std::string(op) + ": frame shapes differ");
}

double population_std(const std::vector<double>& samples, double mean) {
  double acc = 0.0;
  for (double s : samples) acc += (s - mean) * (s - mean);
  return std::sqrt(acc / static_cast<double>(samples.size()));
}

MetricCurve curve_from_samples(const std::string& metric, const std::vector<std::vector<double>>& per_offset) {
  MetricCurve curve;
  curve.metric = metric;
  curve.num_sequences = per_offset.empty() ? 0 : static_cast<int>(per_offset.front().size());
  for (const auto& samples : per_offset) {
    double mean = 0.0;
    for (double s : samples) mean += s;
    mean /= static_cast<double>(samples.size());
    curve.mean.push_back(mean);
    curve.std_dev.push_back(population_std(samples, mean));
  }
  return curve;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string format_float(float v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

const char* kind_name(FeatureKind kind) {
  return kind == FeatureKind::motion ? "motion" : "content";
}

double euclidean(const std::vector<float>& a, const std::vector<float>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace

double psnr(const Tensor<float>& x, const Tensor<float>& y) {
  check_frame_pair(x, y, "psnr");
  double mse = 0.0;
  for (std::int64_t i = 0; i < x.size(); ++i) {
    double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(x.size());
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Tensor<float>& x, const Tensor<float>& y) {
  check_frame_pair(x, y, "ssim");
  int h = x.shape(1), w = x.shape(2);
  require(h >= kWindow && w >= kWindow, Errc::invalid_argument, "ssim: image smaller than the 11x11 window");
  const auto& win = gaussian_window();
  std::vector<double> gx = to_gray(x), gy = to_gray(y);
  // Evaluate in a canonical argument order so the result is bitwise
  // symmetric even where the compiler fuses multiply-adds asymmetrically.
  if (gy < gx) std::swap(gx, gy);

  double total = 0.0;
  int count = 0;
  for (int y0 = 0; y0 + kWindow <= h; ++y0)
    for (int x0 = 0; x0 + kWindow <= w; ++x0) {
      double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
      for (int i = 0; i < kWindow; ++i)
        for (int j = 0; j < kWindow; ++j) {
          double wv = win[static_cast<std::size_t>(i * kWindow + j)];
          double a = gx[static_cast<std::size_t>((y0 + i) * w + (x0 + j))];
          double b = gy[static_cast<std::size_t>((y0 + i) * w + (x0 + j))];
          mx += wv * a;
          my += wv * b;
          mxx += wv * a * a;
          myy += wv * b * b;
          mxy += wv * a * b;
        }
      double sx = mxx - mx * mx, sy = myy - my * my, sxy = mxy - mx * my;
      total += ((2.0 * mx * my + kC1) * (2.0 * sxy + kC2)) / ((mx * mx + my * my + kC1) * (sx + sy + kC2));
      ++count;
    }
  return total / count;
}

std::string curve_to_csv(const MetricCurve& curve) {
  std::ostringstream out;
  out << "offset,mean,std\n";
  for (std::size_t i = 0; i < curve.mean.size(); ++i)
    out << (i + 1) << "," << format_double(curve.mean[i]) << "," << format_double(curve.std_dev[i]) << "\n";
  return out.str();
}

nlohmann::ordered_json curve_to_json(const MetricCurve& curve) {
  nlohmann::ordered_json j;
  j["metric"] = curve.metric;
  j["num_sequences"] = curve.num_sequences;
  j["mean"] = curve.mean;
  j["std"] = curve.std_dev;
  return j;
}

EvaluationReport evaluate_prediction(const Model<float>& model, const std::vector<VideoClip>& clips, int k,
                                     int t_out) {
  require(k >= 2, Errc::invalid_argument, "evaluation needs k >= 2 given frames");
  require(t_out >= 1, Errc::invalid_argument, "evaluation needs a horizon of at least 1");
  require(!clips.empty(), Errc::dataset_too_small, "evaluation needs a non-empty test set");

  std::size_t offsets = static_cast<std::size_t>(t_out);
  std::vector<std::vector<double>> m_ssim(offsets), m_psnr(offsets), b_ssim(offsets), b_psnr(offsets);
  for (const VideoClip& clip : clips) {
    if (static_cast<int>(clip.frames.size()) < k + t_out) {
      std::cerr << "warning: skipping clip " << clip.clip_id << " with " << clip.frames.size()
                << " frames (evaluation needs " << k + t_out << ")\n";
      continue;
    }
    PredictionRequest req;
    req.given.assign(clip.frames.begin(), clip.frames.begin() + k);
    req.horizon = t_out;
    std::vector<Tensor<float>> predicted = predict_sequence(model, req);
    const Tensor<float>& last_given = clip.frames[static_cast<std::size_t>(k - 1)];
    for (int i = 0; i < t_out; ++i) {
      const Tensor<float>& target = clip.frames[static_cast<std::size_t>(k + i)];
      m_ssim[static_cast<std::size_t>(i)].push_back(ssim(predicted[static_cast<std::size_t>(i)], target));
      m_psnr[static_cast<std::size_t>(i)].push_back(psnr(predicted[static_cast<std::size_t>(i)], target));
      b_ssim[static_cast<std::size_t>(i)].push_back(ssim(last_given, target));
      b_psnr[static_cast<std::size_t>(i)].push_back(psnr(last_given, target));
    }
  }
  require(!m_ssim.front().empty(), Errc::dataset_too_small, "no test clip is long enough for k + horizon");

  EvaluationReport report;
  report.model_ssim = curve_from_samples("ssim", m_ssim);
  report.model_psnr = curve_from_samples("psnr", m_psnr);
  report.baseline_ssim = curve_from_samples("ssim", b_ssim);
  report.baseline_psnr = curve_from_samples("psnr", b_psnr);
  return report;
}

std::vector<FeatureRecord> compute_features(const Model<float>& model, const std::vector<VideoClip>& clips,
                                            FeatureKind kind) {
  require(kind == FeatureKind::motion || kind == FeatureKind::content, Errc::invalid_argument,
          "feature export covers motion and content kinds only");
  const auto& shape = model.config().image_shape;
  std::vector<FeatureRecord> records;
  bool warned = false;
  for (const VideoClip& clip : clips) {
    if (!warned && (clip.motion_label.empty() || clip.content_label.empty())) {
      std::cerr << "warning: clip " << clip.clip_id << " has empty labels; emitting them as empty strings\n";
      warned = true;
    }
    ad::Tape<float> tape;
    ad::Tape<float>::NoGradGuard guard(tape);
    for (std::size_t a = 0; a + 1 < clip.frames.size(); ++a) {
      const Tensor<float>& fa = clip.frames[a];
      const Tensor<float>& fb = clip.frames[a + 1];
      require(fa.rank() == 3 && fa.shape(0) == shape[0] && fa.shape(1) == shape[1] && fa.shape(2) == shape[2],
              Errc::shape_mismatch, "clip frame shape does not match the model's image shape");
      Tensor<float> pair_a({1, shape[0], shape[1], shape[2]});
      Tensor<float> pair_b({1, shape[0], shape[1], shape[2]});
      std::copy(fa.data(), fa.data() + fa.size(), pair_a.data());
      std::copy(fb.data(), fb.data() + fb.size(), pair_b.data());
      auto va = tape.constant(std::move(pair_a));
      auto vb = tape.constant(std::move(pair_b));
      ad::VarPtr<float> feat = kind == FeatureKind::motion ? model.motion_encode(tape, va, vb).values
                                                           : model.content_encode(tape, va, vb).first.values;
      FeatureRecord rec;
      rec.clip_id = clip.clip_id;
      rec.frame_a = static_cast<int>(a);
      rec.frame_b = static_cast<int>(a) + 1;
      rec.kind = kind;
      rec.vec.assign(feat->value.data(), feat->value.data() + feat->value.size());
      rec.motion_label = clip.motion_label;
      rec.content_label = clip.content_label;
      records.push_back(std::move(rec));
    }
  }
  return records;
}

void write_features_csv(const std::string& path, const std::vector<FeatureRecord>& records) {
  require(!records.empty(), Errc::invalid_argument, "no feature records to write");
  std::size_t dim = records.front().vec.size();
  std::ofstream out(path);
  require(out.good(), Errc::io_error, "cannot open feature csv for writing: " + path);
  out << "clip_id,frame_a,frame_b,kind,motion_label,content_label";
  for (std::size_t i = 0; i < dim; ++i) out << ",v" << i;
  out << "\n";
  for (const FeatureRecord& rec : records) {
    require(rec.vec.size() == dim, Errc::shape_mismatch, "feature records have mixed vector lengths");
    out << rec.clip_id << "," << rec.frame_a << "," << rec.frame_b << "," << kind_name(rec.kind) << ","
        << rec.motion_label << "," << rec.content_label;
    for (float v : rec.vec) out << "," << format_float(v);
    out << "\n";
  }
  require(out.good(), Errc::io_error, "failed writing feature csv: " + path);
}

std::vector<RankedMatch> retrieve_nearest(const FeatureRecord& query, const std::vector<FeatureRecord>& candidates,
                                          FeatureKind kind) {
  require(!candidates.empty(), Errc::invalid_argument, "retrieval needs at least one candidate");
  require(query.kind == kind, Errc::invalid_argument, "query feature kind mismatch");
  std::vector<RankedMatch> ranked;
  ranked.reserve(candidates.size());
  for (const FeatureRecord& c : candidates) {
    require(c.kind == kind, Errc::invalid_argument, "candidate feature kind mismatch");
    require(c.vec.size() == query.vec.size(), Errc::shape_mismatch, "candidate vector length mismatch");
    ranked.push_back({c, euclidean(query.vec, c.vec)});
  }
  std::sort(ranked.begin(), ranked.end(), [](const RankedMatch& a, const RankedMatch& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    if (a.record.clip_id != b.record.clip_id) return a.record.clip_id < b.record.clip_id;
    if (a.record.frame_a != b.record.frame_a) return a.record.frame_a < b.record.frame_a;
    return a.record.frame_b < b.record.frame_b;
  });
  return ranked;
}

double silhouette_probe(const std::vector<FeatureRecord>& records, LabelField field) {
  require(!records.empty(), Errc::invalid_argument, "silhouette needs records");
  auto label_of = [&](const FeatureRecord& r) -> const std::string& {
    return field == LabelField::motion ? r.motion_label : r.content_label;
  };
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) {
    require(records[i].vec.size() == records.front().vec.size(), Errc::shape_mismatch,
            "silhouette records have mixed vector lengths");
    groups[label_of(records[i])].push_back(i);
  }
  require(groups.size() >= 2, Errc::invalid_argument, "silhouette needs at least two distinct labels");

  double total = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string& own = label_of(records[i]);
    if (groups.at(own).size() < 2) continue;  // singleton group scores 0

    double a = 0.0;
    for (std::size_t j : groups.at(own))
      if (j != i) a += euclidean(records[i].vec, records[j].vec);
    a /= static_cast<double>(groups.at(own).size() - 1);

    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, members] : groups) {
      if (label == own) continue;
      double mean = 0.0;
      for (std::size_t j : members) mean += euclidean(records[i].vec, records[j].vec);
      b = std::min(b, mean / static_cast<double>(members.size()));
    }

    double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(records.size());
}

}  // namespace msnet
