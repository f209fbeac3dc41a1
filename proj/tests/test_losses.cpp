#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "msnet/losses.hpp"
#include "test_util.hpp"

using namespace msnet;
using namespace msnet::testing;
using ad::Tape;
using ad::VarPtr;

namespace {

constexpr double kTwoLn2 = 1.3862943611198906;

VarPtr<double> probs(Tape<double>& tape, std::vector<double> v) {
  int n = static_cast<int>(v.size());
  return tape.constant(Tensor<double>::from({n, 1}, std::move(v)));
}

NetworkConfig tiny_config() {
  NetworkConfig cfg;
  cfg.image_shape = {1, 8, 8};
  cfg.num_blocks = 2;
  cfg.base_channels = 2;
  cfg.motion_channels = 2;
  cfg.content_channels = 2;
  cfg.clstm_layers = 1;
  cfg.clstm_hidden = 2;
  return cfg;
}

}  // namespace

TEST_CASE("reproduction loss is the elementwise mean squared error") {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>::from({1, 1, 2, 2}, {0.1, 0.2, 0.3, 0.4}));
  CHECK(ad::scalar_value(loss_rec(tape, x, x)) == 0.0);

  auto zeros = tape.constant(Tensor<double>({2, 1, 2, 2}, 0.0));
  auto ones = tape.constant(Tensor<double>({2, 1, 2, 2}, 1.0));
  CHECK(ad::scalar_value(loss_rec(tape, zeros, ones)) == doctest::Approx(1.0).epsilon(1e-12));

  Rng rng(3);
  auto a = tape.constant(random_tensor({2, 1, 3, 3}, rng, 0.0, 1.0));
  auto b = tape.constant(random_tensor({2, 1, 3, 3}, rng, 0.0, 1.0));
  double oracle = 0.0;
  for (std::int64_t i = 0; i < a->value.size(); ++i) {
    double d = a->value[i] - b->value[i];
    oracle += d * d;
  }
  oracle /= static_cast<double>(a->value.size());
  CHECK(std::abs(ad::scalar_value(loss_rec(tape, a, b)) - oracle) < 1e-12);
}

TEST_CASE("time-reversal loss vanishes on identical frames and is symmetric") {
  auto cfg = tiny_config();
  Model<double> m(cfg, 77);
  Tape<double> tape;
  Rng rng(5);
  auto fa = tape.constant(random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0));
  auto fb = tape.constant(random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0));
  CHECK(ad::scalar_value(loss_rev(tape, m, fa, fa)) == 0.0);
  CHECK(ad::scalar_value(loss_rev(tape, m, fa, fb)) == ad::scalar_value(loss_rev(tape, m, fb, fa)));

  // Oracle: two explicit encoder calls and a hand-rolled MSE.
  Tape<double>::NoGradGuard guard(tape);
  auto c_ab = m.content_encode(tape, fa, fb).first.values->value;
  auto c_ba = m.content_encode(tape, fb, fa).first.values->value;
  double oracle = 0.0;
  for (std::int64_t i = 0; i < c_ab.size(); ++i) {
    double d = c_ab[i] - c_ba[i];
    oracle += d * d;
  }
  oracle /= static_cast<double>(c_ab.size());
  CHECK(std::abs(ad::scalar_value(loss_rev(tape, m, fa, fb)) - oracle) < 1e-12);
}

TEST_CASE("frame adversarial pair takes its documented values") {
  auto [df_half, advf_half] = frame_gan_values(0.5, 0.5);
  CHECK(std::abs(df_half - kTwoLn2) < 1e-12);
  CHECK(std::abs(advf_half - 0.6931471805599453) < 1e-12);

  auto [df_sharp, advf_sharp] = frame_gan_values(1.0 - 1e-12, 1e-12);
  CHECK(df_sharp < 1e-10);  // perfect discriminator limit

  auto [df, advf] = frame_gan_values(0.9, 0.2);
  CHECK(std::abs(df - 0.32850406697203604) < 1e-12);
  CHECK(std::abs(advf - 1.6094379124341003) < 1e-12);

  // Tape form on a batch equals the mean of per-sample analytic values.
  Tape<double> tape;
  auto d_real = probs(tape, {0.9, 0.7, 0.6});
  auto d_fake = probs(tape, {0.2, 0.4, 0.3});
  auto [l_df, l_advf] = frame_gan_losses(tape, d_real, d_fake);
  double exp_df = 0.0, exp_advf = 0.0;
  for (int i = 0; i < 3; ++i) {
    auto [a, b] = frame_gan_values(d_real->value[i], d_fake->value[i]);
    exp_df += a / 3.0;
    exp_advf += b / 3.0;
  }
  CHECK(std::abs(ad::scalar_value(l_df) - exp_df) < 1e-12);
  CHECK(std::abs(ad::scalar_value(l_advf) - exp_advf) < 1e-12);
}

TEST_CASE("content adversarial pair: entropy form, documented values, symmetry") {
  auto [dc, advc] = content_gan_values(0.9, 0.1);
  CHECK(std::abs(dc - 0.21072103131565256) < 1e-12);

  CHECK(std::abs(content_gan_values(0.5, 0.5).second - kTwoLn2) < 1e-15);
  for (double d : {0.1, 0.25, 0.37, 0.8}) {
    CHECK(content_gan_values(d, 0.5).second ==
          doctest::Approx(content_gan_values(1.0 - d, 0.5).second).epsilon(1e-14));
  }
}

TEST_CASE("motion adversarial pair mirrors the content form on its own scores") {
  auto [dm, advm] = motion_gan_values(0.99, 0.01);
  CHECK(std::abs(dm - 0.020100671707002890) < 1e-12);
  CHECK(std::abs(advm - (-std::log(0.99) - std::log(0.01))) < 1e-12);
  CHECK(std::abs(motion_gan_values(0.5, 0.9).second - kTwoLn2) < 1e-15);
  // L_DM approaches zero only in the corner (d_seq -> 1, d_nonseq -> 0).
  CHECK(motion_gan_values(1.0 - 1e-9, 1e-9).first < 1e-8);
  CHECK(motion_gan_values(0.9, 1e-9).first > 0.1);
  CHECK(motion_gan_values(1.0 - 1e-9, 0.1).first > 0.1);
}

TEST_CASE("entropy losses attain their unique minimum two-ln-two at one half") {
  int argmin = -1;
  double best = 1e300;
  for (int i = 1; i <= 99; ++i) {
    double d = i / 100.0;
    double v = content_gan_values(d, 0.5).second;
    CHECK(v >= kTwoLn2);
    CHECK(std::isfinite(v));
    if (v < best) {
      best = v;
      argmin = i;
    }
    CHECK(motion_gan_values(d, 0.5).second == v);  // identical analytic form
  }
  CHECK(argmin == 50);
  CHECK(best == kTwoLn2);
}

TEST_CASE("adversarial losses stay finite and non-negative at the clamp boundary") {
  constexpr double eps = Model<double>::kProbEps;
  for (double p : {eps, 0.5, 1.0 - eps}) {
    for (double q : {eps, 0.5, 1.0 - eps}) {
      for (auto [d, adv] : {frame_gan_values(p, q), content_gan_values(p, q), motion_gan_values(p, q)}) {
        CHECK(std::isfinite(d));
        CHECK(std::isfinite(adv));
        CHECK(d >= 0.0);
        CHECK(adv >= 0.0);
      }
    }
  }
}

TEST_CASE("stage-1 totals are the documented weighted sums") {
  LossWeights w{1.0, 3.3e-5};
  double l1 = total_encoder_value(0.5, 0.2, kTwoLn2, kTwoLn2, kTwoLn2, w);
  CHECK(std::abs(l1 - 0.70013724314175087) < 1e-9);

  LossWeights no_adv{0.7, 0.0};
  CHECK(total_encoder_value(0.5, 0.2, 9.0, 9.0, 9.0, no_adv) == 0.5 + 0.7 * 0.2);
  CHECK(total_encoder_value(0, 0, 0, 0, 0, w) == 0.0);

  CHECK(total_discriminator_value(1, 1, 1) == 3.0);
  CHECK(std::abs(total_discriminator_value(kTwoLn2, kTwoLn2, kTwoLn2) - 4.1588830833596715) < 1e-12);
  Rng rng(7);
  double a = rng.uniform01(), b = rng.uniform01(), c = rng.uniform01();
  CHECK(total_discriminator_value(a, b, c) == a + b + c);

  LossWeights bad{-1.0, 0.0};
  CHECK_THROWS_AS(total_encoder_value(0, 0, 0, 0, 0, bad), Error);

  // Tape forms agree with the analytic forms.
  Tape<double> tape;
  auto s = [&](double v) { return tape.constant(Tensor<double>::from({1}, {v})); };
  CHECK(std::abs(ad::scalar_value(total_encoder_loss(tape, s(0.5), s(0.2), s(kTwoLn2), s(kTwoLn2),
                                                     s(kTwoLn2), w)) -
                 0.70013724314175087) < 1e-9);
  CHECK(ad::scalar_value(total_discriminator_loss(tape, s(1.0), s(1.0), s(1.0))) == 3.0);
  CHECK_THROWS_AS(total_encoder_loss(tape, s(0.5), VarPtr<double>{}, s(1), s(1), s(1), w), Error);
  CHECK_THROWS_AS(total_discriminator_loss(tape, s(1), s(1), VarPtr<double>{}), Error);
}

TEST_CASE("predictor loss sums the teacher term and the autoregressive tail") {
  CHECK(loss_lstm_value(0.0, {}) == 0.0);
  CHECK(loss_lstm_value(0.1, {0.2, 0.3}) == doctest::Approx(0.6).epsilon(1e-12));

  Tape<double> tape;
  auto s = [&](double v) { return tape.constant(Tensor<double>::from({1}, {v})); };
  CHECK(ad::scalar_value(loss_lstm(tape, s(0.1), {s(0.2), s(0.3)})) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(ad::scalar_value(loss_lstm(tape, s(0.25), {})) == 0.25);
  CHECK_THROWS_AS(loss_lstm(tape, VarPtr<double>{}, {}), Error);

  Rng rng(9);
  std::vector<double> errs;
  double teacher = rng.uniform01(), oracle = teacher;
  for (int i = 0; i < 5; ++i) {
    errs.push_back(rng.uniform01());
    oracle += errs.back();
  }
  CHECK(std::abs(loss_lstm_value(teacher, errs) - oracle) < 1e-12);
}

TEST_CASE("gradients: adversarial losses differentiate through their probabilities") {
  Rng rng(13);
  auto d_real = ad::parameter(random_tensor({3, 1}, rng, 0.15, 0.85));
  auto d_fake = ad::parameter(random_tensor({3, 1}, rng, 0.15, 0.85));
  auto make_frame = [&](Tape<double>& t) {
    auto [d, adv] = frame_gan_losses(t, d_real, d_fake);
    return ad::add(t, d, adv);
  };
  CHECK(check_gradients(make_frame, {d_real, d_fake}).max_rel_err < 1e-3);

  auto make_entropy = [&](Tape<double>& t) {
    auto [d, adv] = content_gan_losses(t, d_real, d_fake);
    auto [dm, advm] = motion_gan_losses(t, d_fake, d_real);
    return ad::add(t, ad::add(t, d, adv), ad::add(t, dm, advm));
  };
  CHECK(check_gradients(make_entropy, {d_real, d_fake}).max_rel_err < 1e-3);
}
