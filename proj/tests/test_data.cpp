#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "tafcal/data.hpp"
#include "tafcal/spectral.hpp"
#include "test_util.hpp"

using namespace tafcal;

namespace {

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p.string();
}

SyntheticSpec small_spec() {
  SyntheticSpec spec = SyntheticSpec::preset_amplitude();
  spec.per_cell = 3;
  spec.height = 16;
  spec.width = 16;
  return spec;
}

template <typename T>
bool datasets_equal(const DomainDataset<T>& a, const DomainDataset<T>& b) {
  if (a.samples.size() != b.samples.size()) return false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    if (!(a.samples[i].image == b.samples[i].image)) return false;
    if (a.samples[i].label != b.samples[i].label) return false;
    if (a.samples[i].domain != b.samples[i].domain) return false;
  }
  return a.class_names == b.class_names && a.domain_names == b.domain_names;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("generation: counts and determinism") {
  SyntheticSpec spec = SyntheticSpec::preset_amplitude();
  spec.per_cell = 25;
  const DomainDataset<float> ds = generate<float>(spec);
  CHECK(ds.samples.size() == 400);  // 4 classes * 4 domains * 25
  std::map<std::pair<int, int>, int> cells;
  for (const auto& s : ds.samples) cells[{s.label, s.domain}] += 1;
  for (const auto& [key, count] : cells) CHECK(count == 25);
  CHECK(cells.size() == 16);

  const DomainDataset<float> again = generate<float>(spec);
  CHECK(datasets_equal(ds, again));
}

TEST_CASE("pixel range: clamped generation stays in [0,1]") {
  const DomainDataset<float> ds = generate<float>(small_spec());
  for (const auto& s : ds.samples)
    for (std::size_t i = 0; i < s.image.size(); ++i) {
      CHECK(s.image[i] >= 0.0f);
      CHECK(s.image[i] <= 1.0f);
    }
}

TEST_CASE("gain-only domain pair: amplitude doubles, phase identical") {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.domains = 2;
  spec.per_cell = 2;
  spec.height = 16;
  spec.width = 16;
  spec.clamp = false;  // scaling law checked clamp-free
  spec.styles = {DomainStyle{1.0}, DomainStyle{2.0}};
  const DomainDataset<float> ds = generate<float>(spec);

  for (int k = 0; k < 2; ++k)
    for (int i = 0; i < 2; ++i) {
      const Sample<float>* g1 = nullptr;
      const Sample<float>* g2 = nullptr;
      int seen1 = 0, seen2 = 0;
      for (const auto& s : ds.samples) {
        if (s.label != k) continue;
        if (s.domain == 0 && seen1++ == i) g1 = &s;
        if (s.domain == 1 && seen2++ == i) g2 = &s;
      }
      REQUIRE(g1 != nullptr);
      REQUIRE(g2 != nullptr);
      const auto [amp1, phase1] = decompose(dft2d(g1->image));
      const auto [amp2, phase2] = decompose(dft2d(g2->image));
      for (std::size_t j = 0; j < amp1.values.size(); ++j) {
        CHECK(std::abs(amp2.values[j] - 2.0f * amp1.values[j]) < 1e-3);
        if (amp1.values[j] > 1e-3) {
          const double diff = std::remainder(
              static_cast<double>(phase2.values[j]) - static_cast<double>(phase1.values[j]),
              2.0 * M_PI);
          CHECK(std::abs(diff) < 1e-4);
        }
      }
    }
}

TEST_CASE("class masks are domain-independent (neutral styles)") {
  SyntheticSpec spec = small_spec();
  const DomainStyle neutral{1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, 0};
  spec.styles = {neutral, neutral, neutral, neutral};
  const DomainDataset<float> ds = generate<float>(spec);
  // with identical styles, sample i of class k must be identical in every domain
  const int per_domain = spec.classes * spec.per_cell;
  for (int d = 1; d < spec.domains; ++d)
    for (int j = 0; j < per_domain; ++j)
      CHECK(ds.samples[static_cast<std::size_t>(j)].image ==
            ds.samples[static_cast<std::size_t>(d * per_domain + j)].image);
}

TEST_CASE("phase-adversarial preset: amplitude spectra equal across domains") {
  SyntheticSpec spec = SyntheticSpec::preset_phase_adversarial();
  spec.per_cell = 2;
  for (auto& st : spec.styles) st.noise_std = 0.0;
  const DomainDataset<float> ds = generate<float>(spec);
  const int per_domain = spec.classes * spec.per_cell;
  for (int d = 1; d < spec.domains; ++d)
    for (int j = 0; j < per_domain; ++j) {
      const auto amp0 = decompose(dft2d(ds.samples[static_cast<std::size_t>(j)].image)).first;
      const auto ampd =
          decompose(dft2d(ds.samples[static_cast<std::size_t>(d * per_domain + j)].image)).first;
      CHECK(max_abs_diff(amp0.values, ampd.values) < 1e-3);
    }
}

TEST_CASE("split_ldo: target isolation, val fraction, stratification") {
  SyntheticSpec spec = SyntheticSpec::preset_amplitude();
  spec.per_cell = 30;  // 480 samples; source 360 after holding one domain out
  const DomainDataset<float> ds = generate<float>(spec);

  SUBCASE("test split is exactly the target domain") {
    const LdoSplit split = split_ldo(ds, 0, 0.1, 7);
    CHECK(split.test.size() == 120);
    for (const int i : split.test) CHECK(ds.samples[static_cast<std::size_t>(i)].domain == 0);
    for (const int i : split.train) CHECK(ds.samples[static_cast<std::size_t>(i)].domain != 0);
    for (const int i : split.val) CHECK(ds.samples[static_cast<std::size_t>(i)].domain != 0);
  }
  SUBCASE("val fraction 0 leaves validation empty") {
    const LdoSplit split = split_ldo(ds, 1, 0.0, 7);
    CHECK(split.val.empty());
    CHECK(split.train.size() == 360);
  }
  SUBCASE("val fraction 0.1 on 360 source samples picks 36, stratified") {
    const LdoSplit split = split_ldo(ds, 0, 0.1, 7);
    CHECK(split.val.size() == 36);
    CHECK(split.train.size() == 324);
    std::map<int, int> per_class;
    for (const int i : split.val) per_class[ds.samples[static_cast<std::size_t>(i)].label] += 1;
    for (const auto& [cls, count] : per_class) CHECK(std::abs(count - 9) <= 1);
    // no sample appears twice
    std::set<int> all(split.train.begin(), split.train.end());
    all.insert(split.val.begin(), split.val.end());
    all.insert(split.test.begin(), split.test.end());
    CHECK(all.size() == ds.samples.size());
  }
  SUBCASE("unknown domain is rejected") {
    CHECK_THROWS_AS(split_ldo(ds, 9, 0.1, 7), Error);
    CHECK_THROWS_AS(ds.domain_index("nope"), Error);
    CHECK(ds.domain_index("dom2") == 2);
    CHECK(ds.domain_index("3") == 3);
  }
}

TEST_CASE("save/load roundtrip is bitwise (packed and per-sample)") {
  const DomainDataset<float> ds = generate<float>(small_spec());
  for (const bool packed : {true, false}) {
    const std::string dir = temp_dir("tafcal_test_ds");
    save_dataset(dir, ds, packed);
    const DomainDataset<float> loaded = load_dataset<float>(dir);
    CHECK(datasets_equal(ds, loaded));
    CHECK(dataset_precision(dir) == Precision::f32);
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("manifest schema: hand-built two-sample dataset") {
  DomainDataset<float> ds;
  ds.class_names = {"disc", "ring"};
  ds.domain_names = {"dom0", "dom1"};
  Tensor4<float> img(1, 1, 2, 2);
  img[0] = 0.5f;
  ds.samples.push_back({img, 0, 0});
  img[3] = 0.25f;
  ds.samples.push_back({img, 1, 1});

  const std::string dir = temp_dir("tafcal_test_manifest");
  save_dataset(dir, ds, /*packed=*/false);
  std::ifstream is(dir + "/manifest.json");
  nlohmann::json manifest;
  is >> manifest;
  CHECK(manifest.at("version") == 1);
  CHECK(manifest.at("classes") == nlohmann::json::array({"disc", "ring"}));
  CHECK(manifest.at("domains") == nlohmann::json::array({"dom0", "dom1"}));
  REQUIRE(manifest.at("samples").size() == 2);
  CHECK(manifest.at("samples")[0].at("file") == "sample_00000.tfc");
  CHECK(manifest.at("samples")[0].at("class") == 0);
  CHECK(manifest.at("samples")[0].at("domain") == 0);
  CHECK(manifest.at("samples")[1].at("file") == "sample_00001.tfc");
  CHECK(manifest.at("samples")[1].at("class") == 1);
  CHECK(manifest.at("samples")[1].at("domain") == 1);
  std::filesystem::remove_all(dir);
}

TEST_CASE("manifest referencing a missing tensor file fails naming it") {
  const DomainDataset<float> ds = generate<float>(small_spec());
  const std::string dir = temp_dir("tafcal_test_missing");
  save_dataset(dir, ds, true);
  std::filesystem::remove(dir + "/domain_dom2.tfc");
  CHECK_THROWS_WITH_AS(load_dataset<float>(dir), doctest::Contains("domain_dom2.tfc"), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("invalid specs are rejected") {
  SyntheticSpec spec = SyntheticSpec::preset_amplitude();
  spec.classes = 1;
  CHECK_THROWS_AS(generate<float>(spec), Error);
  spec = SyntheticSpec::preset_amplitude();
  spec.classes = 9;
  CHECK_THROWS_AS(generate<float>(spec), Error);
  spec = SyntheticSpec::preset_amplitude();
  spec.styles.pop_back();
  CHECK_THROWS_AS(generate<float>(spec), Error);
  spec = SyntheticSpec::preset_amplitude();
  spec.styles[0].gain = 0.0;
  CHECK_THROWS_AS(generate<float>(spec), Error);
}

}  // TEST_SUITE
