#pragma once

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "msnet/autodiff.hpp"
#include "msnet/networks.hpp"

namespace msnet {

struct LossWeights {
  double alpha = 1.0;
  double beta = 3.3e-5;

  void validate() const {
    require(std::isfinite(alpha) && std::isfinite(beta) && alpha >= 0.0 && beta >= 0.0,
            Errc::invalid_config, "loss weights must be finite and non-negative");
  }
};

/// Scalar values of one training step, by phase. Absent fields were not
/// computed (e.g. ablated terms, or stage-2 reports which carry only lstm).
struct LossReport {
  std::optional<double> rec, rev, advF, advC, advM;
  std::optional<double> df, dc, dm;
  std::optional<double> l1, l2;
  std::optional<double> lstm;
};

// ---------------------------------------------------------------------------
// Differentiable losses (batch-mean reduction throughout)
// ---------------------------------------------------------------------------

/// Mean squared reproduction error between the generated and true frame.
template <typename S>
ad::VarPtr<S> loss_rec(ad::Tape<S>& tape, const ad::VarPtr<S>& x_hat, const ad::VarPtr<S>& x) {
  return ad::mse(tape, x_hat, x);
}

/// Time-reversal sensitivity of the content encoder: the content of (a,b)
/// should equal the content of (b,a).
template <typename S>
ad::VarPtr<S> loss_rev(ad::Tape<S>& tape, const Model<S>& model, const ad::VarPtr<S>& frame_a,
                       const ad::VarPtr<S>& frame_b) {
  auto forward = model.content_encode(tape, frame_a, frame_b).first;
  auto reversed = model.content_encode(tape, frame_b, frame_a).first;
  return ad::mse(tape, forward.values, reversed.values);
}

/// Batch-mean -log p over a column of probabilities: the building block every
/// adversarial term is assembled from.
template <typename S>
ad::VarPtr<S> mean_neg_log(ad::Tape<S>& tape, const ad::VarPtr<S>& p) {
  return ad::neg(tape, ad::mean_all(tape, ad::log_op(tape, p)));
}

/// Batch-mean -log(1 - p).
template <typename S>
ad::VarPtr<S> mean_neg_log1m(ad::Tape<S>& tape, const ad::VarPtr<S>& p) {
  return ad::neg(tape, ad::mean_all(tape, ad::log_op(tape, ad::affine(tape, p, S(-1), S(1)))));
}

/// (L_DF, L_advF): the frame discriminator scores a real pair against a
/// reproduced pair; the generator is rewarded for fooling it.
template <typename S>
std::pair<ad::VarPtr<S>, ad::VarPtr<S>> frame_gan_losses(ad::Tape<S>& tape, const ad::VarPtr<S>& d_real,
                                                         const ad::VarPtr<S>& d_fake) {
  auto d = ad::add(tape, mean_neg_log(tape, d_real), mean_neg_log1m(tape, d_fake));
  auto adv = mean_neg_log(tape, d_fake);
  return {d, adv};
}

/// (L_DC, L_advC): the content discriminator tells same-video motion pairs
/// from cross-video pairs; the motion encoder is pushed toward the entropy
/// maximum where the score is uninformative (minimum at 1/2).
template <typename S>
std::pair<ad::VarPtr<S>, ad::VarPtr<S>> content_gan_losses(ad::Tape<S>& tape, const ad::VarPtr<S>& d_same,
                                                           const ad::VarPtr<S>& d_diff) {
  auto d = ad::add(tape, mean_neg_log(tape, d_same), mean_neg_log1m(tape, d_diff));
  auto adv = ad::add(tape, mean_neg_log(tape, d_same), mean_neg_log1m(tape, d_same));
  return {d, adv};
}

/// (L_DM, L_advM): the motion discriminator tells sequential content features
/// from non-sequential ones; the content encoder is pushed to the entropy
/// maximum, both terms scored on the sequential feature.
template <typename S>
std::pair<ad::VarPtr<S>, ad::VarPtr<S>> motion_gan_losses(ad::Tape<S>& tape, const ad::VarPtr<S>& d_seq,
                                                          const ad::VarPtr<S>& d_nonseq) {
  auto d = ad::add(tape, mean_neg_log(tape, d_seq), mean_neg_log1m(tape, d_nonseq));
  auto adv = ad::add(tape, mean_neg_log(tape, d_seq), mean_neg_log1m(tape, d_seq));
  return {d, adv};
}

/// L_1 = L_rec + alpha * L_rev + beta * (L_advC + L_advM + L_advF).
template <typename S>
ad::VarPtr<S> total_encoder_loss(ad::Tape<S>& tape, const ad::VarPtr<S>& rec, const ad::VarPtr<S>& rev,
                                 const ad::VarPtr<S>& advC, const ad::VarPtr<S>& advM,
                                 const ad::VarPtr<S>& advF, const LossWeights& weights) {
  require(rec && rev && advC && advM && advF, Errc::invalid_argument, "total_encoder_loss: missing component");
  weights.validate();
  auto adv = ad::add(tape, ad::add(tape, advC, advM), advF);
  return ad::add(tape, ad::add(tape, rec, ad::scale(tape, rev, S(weights.alpha))),
                 ad::scale(tape, adv, S(weights.beta)));
}

/// L_2 = L_DF + L_DC + L_DM.
template <typename S>
ad::VarPtr<S> total_discriminator_loss(ad::Tape<S>& tape, const ad::VarPtr<S>& df, const ad::VarPtr<S>& dc,
                                       const ad::VarPtr<S>& dm) {
  require(df && dc && dm, Errc::invalid_argument, "total_discriminator_loss: missing component");
  return ad::add(tape, ad::add(tape, df, dc), dm);
}

/// Sum of the teacher-forced first-step error and all autoregressive errors.
template <typename S>
ad::VarPtr<S> loss_lstm(ad::Tape<S>& tape, const ad::VarPtr<S>& teacher_step_error,
                        const std::vector<ad::VarPtr<S>>& autoregressive_errors) {
  require(static_cast<bool>(teacher_step_error), Errc::invalid_argument, "loss_lstm: missing teacher term");
  auto total = teacher_step_error;
  for (const auto& e : autoregressive_errors) total = ad::add(tape, total, e);
  return total;
}

// ---------------------------------------------------------------------------
// Analytic forms on plain scalars (reporting, tests)
// ---------------------------------------------------------------------------

inline std::pair<double, double> frame_gan_values(double d_real, double d_fake) {
  return {-std::log(d_real) - std::log(1.0 - d_fake), -std::log(d_fake)};
}

inline std::pair<double, double> content_gan_values(double d_same, double d_diff) {
  return {-std::log(d_same) - std::log(1.0 - d_diff), -std::log(d_same) - std::log(1.0 - d_same)};
}

inline std::pair<double, double> motion_gan_values(double d_seq, double d_nonseq) {
  return {-std::log(d_seq) - std::log(1.0 - d_nonseq), -std::log(d_seq) - std::log(1.0 - d_seq)};
}

inline double total_encoder_value(double rec, double rev, double advC, double advM, double advF,
                                  const LossWeights& weights) {
  weights.validate();
  return rec + weights.alpha * rev + weights.beta * (advC + advM + advF);
}

inline double total_discriminator_value(double df, double dc, double dm) { return df + dc + dm; }

inline double loss_lstm_value(double teacher, const std::vector<double>& autoregressive) {
  double total = teacher;
  for (double e : autoregressive) total += e;
  return total;
}

}  // namespace msnet
