#include <doctest.h>

#include <filesystem>

#include "tafcal/model.hpp"
#include "tafcal/stylecal.hpp"
#include "test_util.hpp"

using namespace tafcal;

namespace {

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p.string();
}

template <typename T>
bool params_equal(const Model<T>& a, const Model<T>& b) {
  if (a.params().size() != b.params().size()) return false;
  for (std::size_t i = 0; i < a.params().size(); ++i)
    if (!(a.params()[i].var.value() == b.params()[i].var.value())) return false;
  return true;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("same seed builds bitwise-identical parameters") {
  const NetworkSpec spec = NetworkSpec::default_spec(1, 32, 32, 4);
  Model<float> a(spec, 5), b(spec, 5), c(spec, 6);
  CHECK(params_equal(a, b));
  CHECK_FALSE(params_equal(a, c));
}

TEST_CASE("logits shape follows the class count") {
  const NetworkSpec spec = NetworkSpec::default_spec(3, 32, 32, 7);
  Model<float> model(spec, 0);
  Rng rng(1);
  const Tensor4<float> x = testutil::random_tensor<float>({5, 3, 32, 32}, rng);
  const Var<float> logits = model.forward(x);
  CHECK(logits.value().shape() == Shape4{5, 7, 1, 1});
}

TEST_CASE("parameter count equals the closed-form sum over descriptors") {
  const NetworkSpec spec = NetworkSpec::default_spec(1, 32, 32, 4);
  // independent arithmetic: conv(out*in*k*k + out) per block, then the head
  long expect = 0;
  expect += 16L * 1 * 3 * 3 + 16;
  expect += 32L * 16 * 3 * 3 + 32;
  expect += 32L * 32 * 3 * 3 + 32;
  expect += 64L * 32 * 3 * 3 + 64;
  // after four pools 32x32 -> 2x2, so 64*2*2 flat features
  expect += 4L * (64 * 2 * 2) + 4;
  CHECK(spec.parameter_count() == expect);

  Model<double> model(spec, 0);
  long actual = 0;
  for (const auto& p : model.params()) actual += static_cast<long>(p.var.value().size());
  CHECK(actual == expect);
}

TEST_CASE("no style context vs tau=0 test-mode hook: roundtrip noise only") {
  const NetworkSpec spec = NetworkSpec::default_spec(1, 16, 16, 4);
  Model<float> model(spec, 3);
  Rng rng(9);
  const Tensor4<float> x = testutil::random_tensor<float>({3, 1, 16, 16}, rng);
  const Var<float> plain = model.forward(x);
  typename Model<float>::StyleHook hook = [](const Var<float>& v) {
    return style_layer_apply(v, StyleMode::test, StyleDecisions{}, nullptr, nullptr,
                             StyleLayerOptions{});
  };
  const Var<float> styled = model.forward(x, hook);
  CHECK(max_abs_diff(plain.value(), styled.value()) < 1e-4);
}

TEST_CASE("zero-weight head silences the logits regardless of the style branch") {
  const NetworkSpec spec = NetworkSpec::default_spec(1, 16, 16, 3);
  Model<float> model(spec, 3);
  for (auto& p : model.params())
    if (p.group == ParamGroup::head) p.var.mutable_value().fill(0.0f);
  Rng rng(2);
  const Tensor4<float> x = testutil::random_tensor<float>({2, 1, 16, 16}, rng);
  CHECK(model.forward(x).value().max_abs() == 0.0);
  typename Model<float>::StyleHook hook = [](const Var<float>& v) {
    return style_layer_apply(v, StyleMode::test, StyleDecisions{}, nullptr, nullptr,
                             StyleLayerOptions{});
  };
  CHECK(model.forward(x, hook).value().max_abs() == 0.0);
}

TEST_CASE("every legal insertion index keeps shapes consistent") {
  for (int at = 1; at <= 4; ++at) {
    NetworkSpec spec = NetworkSpec::default_spec(1, 32, 32, 4);
    spec.insertion_after_block = at;
    spec.validate();
    Model<float> model(spec, 1);
    Rng rng(4);
    const Tensor4<float> x = testutil::random_tensor<float>({2, 1, 32, 32}, rng);
    typename Model<float>::ForwardCapture cap;
    typename Model<float>::StyleHook hook = [](const Var<float>& v) {
      return style_layer_apply(v, StyleMode::test, StyleDecisions{}, nullptr, nullptr,
                               StyleLayerOptions{});
    };
    const Var<float> logits = model.forward(x, hook, &cap);
    CHECK(logits.value().shape() == Shape4{2, 4, 1, 1});
    CHECK(cap.pre_style->shape() == spec.shape_after_block(at, 2));
    CHECK(cap.post_style->shape() == cap.pre_style->shape());
  }
  NetworkSpec bad = NetworkSpec::default_spec();
  bad.insertion_after_block = 5;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.insertion_after_block = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("fixed coins make the style branch bitwise reproducible") {
  const NetworkSpec spec = NetworkSpec::default_spec(1, 16, 16, 4);
  Model<float> model(spec, 11);
  Rng rng(12);
  const Tensor4<float> x = testutil::random_tensor<float>({4, 1, 16, 16}, rng);
  PrototypeBank<float> bank;
  {
    typename Model<float>::ForwardCapture cap;
    model.forward(x, {}, &cap);
    bank.update(decompose(dft2d(*cap.pre_style)).first);
    bank.finalize(0);
  }
  StyleDecisions d;
  d.apply_aaf = true;
  d.delta = 0.3;
  d.pairing = {1, 3, 0, 2};
  d.apply_cal = true;
  d.strength = 0.5;
  typename Model<float>::StyleHook hook = [&](const Var<float>& v) {
    return style_layer_apply(v, StyleMode::train, d, nullptr, &bank.prototype(),
                             StyleLayerOptions{});
  };
  const Var<float> run1 = model.forward(x, hook);
  const Var<float> run2 = model.forward(x, hook);
  CHECK(run1.value() == run2.value());
}

TEST_CASE("checkpoint save/load roundtrip is bitwise") {
  const std::string dir = temp_dir("tafcal_test_ckpt");
  const NetworkSpec spec = NetworkSpec::default_spec(1, 16, 16, 4);
  Model<float> model(spec, 21);
  Rng rng(22);
  const Tensor4<float> proto_src = testutil::random_tensor<float>({4, 2, 4, 4}, rng);

  SUBCASE("with a prototype") {
    PrototypeBank<float> bank;
    bank.update(decompose(dft2d(proto_src)).first);
    const Tensor4<float> proto = bank.finalize(7).values;
    nlohmann::json extra{{"seed", 21}};
    save_checkpoint<float>(dir, model, proto, 7, extra);

    Checkpoint<float> loaded = load_checkpoint<float>(dir);
    CHECK(params_equal(loaded.model, model));
    REQUIRE(loaded.prototype.has_value());
    CHECK(*loaded.prototype == proto);
    CHECK(loaded.prototype_epoch == 7);

    const Tensor4<float> x = testutil::random_tensor<float>({2, 1, 16, 16}, rng);
    CHECK(loaded.model.forward(x).value() == model.forward(x).value());
  }
  SUBCASE("without a prototype") {
    save_checkpoint<float>(dir, model, std::nullopt, -1, nlohmann::json{{"seed", 21}});
    const Checkpoint<float> loaded = load_checkpoint<float>(dir);
    CHECK_FALSE(loaded.prototype.has_value());
  }
  SUBCASE("manifest naming a missing prototype file fails with io") {
    PrototypeBank<float> bank;
    bank.update(decompose(dft2d(proto_src)).first);
    save_checkpoint<float>(dir, model, bank.finalize(3).values, 3, nlohmann::json{{"seed", 21}});
    std::filesystem::remove(dir + "/prototype.tfc");
    CHECK_THROWS_AS(load_checkpoint<float>(dir), Error);
  }
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
