#include <doctest.h>

#include "tafcal/stylecal.hpp"
#include "test_util.hpp"

using namespace tafcal;

namespace {

template <typename T>
AmplitudeMap<T> amp_of(const Tensor4<T>& z) {
  return decompose(dft2d(z)).first;
}

StyleDecisions passthrough_decisions() { return StyleDecisions{}; }

}  // namespace

TEST_SUITE("stylecal") {

TEST_CASE("bank: single map, two-point mean, streaming vs one-shot") {
  SUBCASE("one map") {
    PrototypeBank<double> bank;
    AmplitudeMap<double> a{Tensor4<double>(1, 1, 1, 1)};
    a.values[0] = 4.5;
    bank.update(a);
    CHECK(bank.count() == 1);
    const AmplitudeMap<double> proto = bank.finalize(0);
    CHECK(proto.values[0] == 4.5);
  }
  SUBCASE("two single-bin maps 1.0 and 3.0 -> 2.0") {
    PrototypeBank<double> bank;
    AmplitudeMap<double> a{Tensor4<double>(1, 1, 1, 1)};
    a.values[0] = 1.0;
    bank.update(a);
    a.values[0] = 3.0;
    bank.update(a);
    CHECK(bank.finalize(0).values[0] == doctest::Approx(2.0));
  }
  SUBCASE("50 maps streamed in uneven batches equal the brute-force mean") {
    Rng rng(7);
    std::vector<Tensor4<float>> maps;
    for (int i = 0; i < 50; ++i)
      maps.push_back(testutil::random_tensor<float>({1, 2, 3, 3}, rng, 0.0, 2.0));

    Tensor4<double> brute(1, 2, 3, 3);
    for (const auto& m : maps)
      for (std::size_t i = 0; i < m.size(); ++i) brute[i] += static_cast<double>(m[i]) / 50.0;

    PrototypeBank<float> bank;
    std::size_t at = 0;
    for (const int batch : {7, 7, 7, 7, 7, 7, 7, 1}) {
      Tensor4<float> stacked(batch, 2, 3, 3);
      for (int b = 0; b < batch; ++b)
        std::copy(maps[at + b].data(), maps[at + b].data() + maps[at + b].size(),
                  stacked.data() + static_cast<std::size_t>(b) * maps[at + b].size());
      at += static_cast<std::size_t>(batch);
      bank.update(AmplitudeMap<float>{stacked});
    }
    CHECK(at == 50);
    const AmplitudeMap<float> proto = bank.finalize(3);
    CHECK(max_abs_diff(proto.values.cast<double>(), brute) < 1e-6);
    CHECK(bank.prototype_epoch() == 3);
  }
  SUBCASE("permuting update order leaves the prototype unchanged") {
    Rng rng(11);
    std::vector<Tensor4<float>> maps;
    for (int i = 0; i < 9; ++i)
      maps.push_back(testutil::random_tensor<float>({1, 1, 2, 2}, rng, 0.0, 1.0));
    auto run = [&](const std::vector<int>& order) {
      PrototypeBank<float> bank;
      for (const int i : order) bank.update(AmplitudeMap<float>{maps[static_cast<std::size_t>(i)]});
      return bank.finalize(0).values;
    };
    const Tensor4<float> a = run({0, 1, 2, 3, 4, 5, 6, 7, 8});
    const Tensor4<float> b = run({8, 3, 5, 0, 7, 1, 4, 6, 2});
    CHECK(max_abs_diff(a, b) < 1e-6);
  }
  SUBCASE("finalize resets; callers keep the previous epoch's prototype") {
    PrototypeBank<double> bank;
    AmplitudeMap<double> a{Tensor4<double>(1, 1, 1, 1)};
    a.values[0] = 2.0;
    bank.update(a);
    bank.finalize(4);
    CHECK(bank.count() == 0);
    a.values[0] = 100.0;
    bank.update(a);  // epoch 5 accumulating
    CHECK(bank.prototype()[0] == 2.0);
    CHECK(bank.prototype_epoch() == 4);
  }
  SUBCASE("finalize with no statistics is rejected") {
    PrototypeBank<float> bank;
    CHECK_THROWS_AS(bank.finalize(0), Error);
  }
  SUBCASE("shape mismatch is rejected") {
    PrototypeBank<float> bank;
    bank.update(AmplitudeMap<float>{Tensor4<float>(1, 2, 3, 3)});
    CHECK_THROWS_AS(bank.update(AmplitudeMap<float>{Tensor4<float>(1, 2, 4, 4)}), Error);
  }
}

TEST_CASE("calibrate: endpoints, midpoint, composition, convexity") {
  Rng rng(13);
  AmplitudeMap<float> amp{testutil::random_tensor<float>({3, 2, 4, 4}, rng, 0.0, 3.0)};
  AmplitudeMap<float> proto{testutil::random_tensor<float>({1, 2, 4, 4}, rng, 0.0, 3.0)};

  SUBCASE("strength 0 is the exact identity") {
    CHECK(calibrate(amp, proto, 0.0).values == amp.values);
  }
  SUBCASE("strength 1 copies the prototype into every row") {
    const AmplitudeMap<float> out = calibrate(amp, proto, 1.0);
    for (int n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < proto.values.size(); ++i)
        CHECK(out.values.plane(n, 0)[i] == proto.values[i]);
  }
  SUBCASE("midpoint: amp 2.0, proto 4.0 -> 3.0") {
    AmplitudeMap<double> a{Tensor4<double>(1, 1, 1, 1)};
    AmplitudeMap<double> p{Tensor4<double>(1, 1, 1, 1)};
    a.values[0] = 2.0;
    p.values[0] = 4.0;
    CHECK(calibrate(a, p, 0.5).values[0] == doctest::Approx(3.0));
  }
  SUBCASE("idempotence at the prototype endpoint") {
    const AmplitudeMap<float> once = calibrate(amp, proto, 1.0);
    const AmplitudeMap<float> twice = calibrate(once, proto, 1.0);
    CHECK(once.values == twice.values);
  }
  SUBCASE("composition: s1 then s2 equals s1 + s2 - s1*s2") {
    const double s1 = 0.3, s2 = 0.45;
    const AmplitudeMap<float> composed = calibrate(calibrate(amp, proto, s1), proto, s2);
    const AmplitudeMap<float> direct = calibrate(amp, proto, s1 + s2 - s1 * s2);
    CHECK(max_abs_diff(composed.values, direct.values) < 1e-6);
  }
  SUBCASE("every output bin lies between amp and proto") {
    const AmplitudeMap<float> out = calibrate(amp, proto, 0.37);
    for (int n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < proto.values.size(); ++i) {
        const float a = amp.values.plane(n, 0)[i];
        const float p = proto.values[i];
        const float o = out.values.plane(n, 0)[i];
        CHECK(o >= std::min(a, p) - 1e-6f);
        CHECK(o <= std::max(a, p) + 1e-6f);
      }
  }
  SUBCASE("strength outside [0,1] is rejected") {
    CHECK_THROWS_AS(calibrate(amp, proto, -0.01), Error);
    CHECK_THROWS_AS(calibrate(amp, proto, 1.01), Error);
  }
}

TEST_CASE("aaf_mix: swap and mix endpoints, convexity") {
  Rng rng(17);
  AmplitudeMap<float> a{testutil::random_tensor<float>({2, 1, 3, 3}, rng, 0.0, 2.0)};
  AmplitudeMap<float> b{testutil::random_tensor<float>({2, 1, 3, 3}, rng, 0.0, 2.0)};
  CHECK(aaf_mix(a, b, 0.0).values == b.values);  // swap
  CHECK(aaf_mix(a, b, 1.0).values == a.values);
  AmplitudeMap<double> x{Tensor4<double>(1, 1, 1, 1)}, y{Tensor4<double>(1, 1, 1, 1)};
  x.values[0] = 1.0;
  y.values[0] = 3.0;
  CHECK(aaf_mix(x, y, 0.5).values[0] == doctest::Approx(2.0));
  const AmplitudeMap<float> mid = aaf_mix(a, b, 0.31);
  for (std::size_t i = 0; i < mid.values.size(); ++i) {
    CHECK(mid.values[i] >= std::min(a.values[i], b.values[i]) - 1e-6f);
    CHECK(mid.values[i] <= std::max(a.values[i], b.values[i]) + 1e-6f);
  }
  CHECK_THROWS_AS(aaf_mix(a, AmplitudeMap<float>{Tensor4<float>(2, 1, 4, 4)}, 0.5), Error);
}

TEST_CASE("beta draws stay in [0,1] with the right mean") {
  Rng rng(123);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double d = rng.beta(0.2, 0.2);
    REQUIRE(d >= 0.0);
    REQUIRE(d <= 1.0);
    sum += d;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.01);
}

TEST_CASE("style layer: pass-through, prototype endpoint, phase preservation") {
  Rng rng(19);
  const Tensor4<float> z = testutil::random_tensor<float>({4, 3, 8, 8}, rng, -1.0, 1.0);
  const Var<float> zv = Var<float>::constant(z);

  SUBCASE("test mode, tau = 0: transform roundtrip only") {
    PrototypeBank<float> bank;
    CalibrationConfig cal;
    cal.tau = 0.0;
    AafConfig aaf;
    Rng coins(1);
    const Var<float> out = style_layer(zv, StyleMode::test, cal, aaf, bank, coins,
                                       EpochContext{0, 10});
    CHECK(max_abs_diff(out.value(), z) < 1e-5);
  }
  SUBCASE("train mode with all branches off: roundtrip only") {
    PrototypeBank<float> bank;
    CalibrationConfig cal;
    cal.p_cal = 0.0;
    AafConfig aaf;
    aaf.p_aaf = 0.0;
    Rng coins(1);
    const Var<float> out = style_layer(zv, StyleMode::train, cal, aaf, bank, coins,
                                       EpochContext{0, 10});
    CHECK(max_abs_diff(out.value(), z) < 1e-5);
    CHECK(bank.count() == 4);  // amplitudes recorded for the prototype
  }
  SUBCASE("test mode, tau = 1: output amplitude equals the prototype") {
    PrototypeBank<float> bank;
    bank.update(amp_of(z));
    bank.finalize(0);
    CalibrationConfig cal;
    cal.tau = 1.0;
    AafConfig aaf;
    Rng coins(1);
    const Var<float> out = style_layer(zv, StyleMode::test, cal, aaf, bank, coins,
                                       EpochContext{0, 10});
    const auto [amp_out, phase_out] = decompose(dft2d(out.value()));
    const auto [amp_in, phase_in] = decompose(dft2d(z));
    for (int n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < bank.prototype().size(); ++i)
        CHECK(std::abs(amp_out.values.plane(n, 0)[i] - bank.prototype()[i]) < 1e-4);
    // semantics: phase is untouched wherever the bin carries signal
    for (std::size_t i = 0; i < phase_out.values.size(); ++i)
      if (amp_out.values[i] > 1e-3 && amp_in.values[i] > 1e-3) {
        const double diff = std::remainder(
            static_cast<double>(phase_out.values[i]) - static_cast<double>(phase_in.values[i]),
            2.0 * M_PI);
        CHECK(std::abs(diff) < 1e-4);
      }
  }
  SUBCASE("test mode without a prototype is an uncalibrated-model error") {
    PrototypeBank<float> bank;
    CalibrationConfig cal;
    cal.tau = 0.5;
    AafConfig aaf;
    Rng coins(1);
    CHECK_THROWS_WITH_AS(
        style_layer(zv, StyleMode::test, cal, aaf, bank, coins, EpochContext{0, 10}),
        doctest::Contains("uncalibrated model"), Error);
  }
  SUBCASE("phase preserved under AAF + calibration together") {
    PrototypeBank<float> bank;
    bank.update(amp_of(z));
    bank.finalize(0);
    StyleDecisions d;
    d.apply_aaf = true;
    d.delta = 0.3;
    d.pairing = {2, 0, 3, 1};
    d.apply_cal = true;
    d.strength = 0.5;
    const Var<float> out =
        style_layer_apply(zv, StyleMode::train, d, nullptr, &bank.prototype(), StyleLayerOptions{});
    const auto [amp_out, phase_out] = decompose(dft2d(out.value()));
    const auto [amp_in, phase_in] = decompose(dft2d(z));
    for (std::size_t i = 0; i < phase_out.values.size(); ++i)
      if (amp_out.values[i] > 1e-3 && amp_in.values[i] > 1e-3) {
        const double diff = std::remainder(
            static_cast<double>(phase_out.values[i]) - static_cast<double>(phase_in.values[i]),
            2.0 * M_PI);
        CHECK(std::abs(diff) < 1e-4);
      }
  }
}

TEST_CASE("single-sample sufficiency: batch calibration equals per-sample") {
  Rng rng(23);
  const Tensor4<float> z = testutil::random_tensor<float>({3, 2, 4, 4}, rng);
  PrototypeBank<float> bank;
  bank.update(amp_of(testutil::random_tensor<float>({2, 2, 4, 4}, rng)));
  bank.finalize(0);
  StyleDecisions d;
  d.apply_cal = true;
  d.strength = 0.5;

  const Var<float> batch_out = style_layer_apply(Var<float>::constant(z), StyleMode::test, d,
                                                 nullptr, &bank.prototype(), StyleLayerOptions{});
  for (int n = 0; n < 3; ++n) {
    Tensor4<float> one(1, 2, 4, 4);
    std::copy(z.plane(n, 0), z.plane(n, 0) + one.size(), one.data());
    const Var<float> single = style_layer_apply(Var<float>::constant(one), StyleMode::test, d,
                                                nullptr, &bank.prototype(), StyleLayerOptions{});
    for (std::size_t i = 0; i < one.size(); ++i)
      CHECK(std::abs(single.value()[i] - batch_out.value().plane(n, 0)[i]) < 1e-6);
  }
}

TEST_CASE("bank snapshot: recording happens before AAF by default, after with the switch") {
  Rng rng(29);
  const Tensor4<float> z = testutil::random_tensor<float>({2, 1, 4, 4}, rng);
  StyleDecisions d;
  d.apply_aaf = true;
  d.delta = 0.0;  // swap
  d.pairing = {1, 0};

  PrototypeBank<float> pre_bank;
  StyleLayerOptions pre_opts;
  style_layer_apply(Var<float>::constant(z), StyleMode::train, d, &pre_bank, nullptr, pre_opts);
  PrototypeBank<float> post_bank;
  StyleLayerOptions post_opts;
  post_opts.bank_pre_aaf = false;
  style_layer_apply(Var<float>::constant(z), StyleMode::train, d, &post_bank, nullptr, post_opts);

  // swap permutes rows, so the batch MEAN is unchanged; compare per-position
  // sums of the recorded batches via the finalized prototypes instead.
  const Tensor4<float> pre = pre_bank.finalize(0).values;
  const Tensor4<float> post = post_bank.finalize(0).values;
  CHECK(max_abs_diff(pre, post) < 1e-6);  // mean invariant under permutation

  // a non-trivial delta does change the recorded maps when collected post-AAF
  d.delta = 0.25;
  PrototypeBank<float> pre2, post2;
  style_layer_apply(Var<float>::constant(z), StyleMode::train, d, &pre2, nullptr, pre_opts);
  style_layer_apply(Var<float>::constant(z), StyleMode::train, d, &post2, nullptr, post_opts);
  const auto amp = amp_of(z);
  const Tensor4<float> clean = pre2.finalize(0).values;
  // pre-AAF collection sees the untouched source amplitudes
  Tensor4<double> mean_amp(1, 1, 4, 4);
  for (int n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < mean_amp.size(); ++i)
      mean_amp[i] += static_cast<double>(amp.values.plane(n, 0)[i]) / 2.0;
  CHECK(max_abs_diff(clean.cast<double>(), mean_amp) < 1e-6);
}

TEST_CASE("style layer gradients match finite differences (frozen coins)") {
  Rng rng(31);
  std::vector<ParamRef<double>> params;
  params.push_back({"z", ParamGroup::extractor,
                    Var<double>::parameter(testutil::random_tensor<double>({2, 2, 4, 4}, rng))});
  const Tensor4<double> weights = testutil::random_tensor<double>({2, 2, 4, 4}, rng);
  PrototypeBank<double> bank;
  bank.update(amp_of(testutil::random_tensor<double>({2, 2, 4, 4}, rng, 0.2, 1.2)));
  bank.finalize(0);

  StyleDecisions d;
  d.apply_aaf = true;
  d.delta = 0.3;
  d.pairing = {1, 0};
  d.apply_cal = true;
  d.strength = 0.5;
  StyleLayerOptions opts;
  opts.residual_tol = 1e-8;

  auto loss_fn = [&]() {
    const Var<double> out = style_layer_apply(params[0].var, StyleMode::train, d, nullptr,
                                              &bank.prototype(), opts);
    return sum(mul(out, Var<double>::constant(weights)));
  };
  const auto report = testutil::finite_difference_check(params, loss_fn);
  INFO(report.worst);
  CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("random prototype control: nonnegative, deterministic, right scale") {
  Rng rng(37);
  Tensor4<float> proto = testutil::random_tensor<float>({1, 2, 4, 4}, rng, 0.0, 10.0);
  Rng draw1(42), draw2(42);
  const Tensor4<float> r1 = random_prototype_like(proto, draw1);
  const Tensor4<float> r2 = random_prototype_like(proto, draw2);
  CHECK(r1 == r2);
  for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] >= 0.0f);
  CHECK(r1.shape() == proto.shape());
}

TEST_CASE("exclusive flag keeps at most one mechanism per batch") {
  PrototypeBank<float> bank;
  bank.set_prototype(Tensor4<float>(1, 1, 2, 2), 0);
  CalibrationConfig cal;
  cal.p_cal = 1.0;
  AafConfig aaf;
  aaf.p_aaf = 1.0;
  Rng coins(7);
  const StyleDecisions d = draw_style_decisions(StyleMode::train, cal, aaf, bank,
                                                EpochContext{9, 10}, 4, coins, true);
  CHECK(d.apply_cal);
  CHECK_FALSE(d.apply_aaf);
}

}  // TEST_SUITE
