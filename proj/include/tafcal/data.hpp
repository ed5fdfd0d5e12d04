#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tafcal/errors.hpp"
#include "tafcal/io.hpp"
#include "tafcal/rng.hpp"
#include "tafcal/tensor.hpp"

// Synthetic multi-domain classification data. Class content is a geometric
// mask rendered at a jittered position (phase-carrying structure); domains
// differ only in style: intensity gain, an additive low-frequency pattern, a
// multiplicative texture, noise level, and (for the negative control) a
// circular spatial shift. Masks never depend on the domain and style never
// depends on the class.

namespace tafcal {

struct DomainStyle {
  double gain = 1.0;
  double lowfreq_h = 0.0;       // amplitude of cos over rows
  double lowfreq_h_phase = 0.0;
  double lowfreq_w = 0.0;       // amplitude of cos over columns
  double lowfreq_w_phase = 0.0;
  double offset = 0.0;
  double texture_freq = 0.0;    // 0 disables the texture
  double noise_std = 0.0;
  int shift_h = 0;              // circular shift (phase-only perturbation)
  int shift_w = 0;
};

struct SyntheticSpec {
  int classes = 4;
  int domains = 4;
  int per_cell = 25;  // samples per (class, domain)
  int channels = 1;
  int height = 32;
  int width = 32;
  double mask_value = 0.6;
  double texture_depth = 0.25;
  int jitter = 2;
  bool clamp = true;
  std::uint64_t seed = 0;
  Precision precision = Precision::f32;
  std::vector<DomainStyle> styles;  // one per domain

  static SyntheticSpec preset_amplitude();
  static SyntheticSpec preset_phase_adversarial();
};

template <typename T>
struct Sample {
  Tensor4<T> image;  // (1, C, H, W)
  int label = 0;
  int domain = 0;  // harness-only metadata; the method never sees it
};

template <typename T>
struct DomainDataset {
  std::vector<Sample<T>> samples;
  std::vector<std::string> class_names;
  std::vector<std::string> domain_names;

  int class_count() const { return static_cast<int>(class_names.size()); }
  int domain_count() const { return static_cast<int>(domain_names.size()); }

  int domain_index(const std::string& name_or_index) const {
    for (std::size_t i = 0; i < domain_names.size(); ++i)
      if (domain_names[i] == name_or_index) return static_cast<int>(i);
    try {
      std::size_t pos = 0;
      const int idx = std::stoi(name_or_index, &pos);
      if (pos == name_or_index.size() && idx >= 0 && idx < domain_count()) return idx;
    } catch (...) {
    }
    fail(ErrorCategory::invalid_argument, "unknown domain \"" + name_or_index + "\"");
  }
};

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace data_detail {

inline const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> names = {"disc",   "ring",    "cross", "bars",
                                                 "square", "diamond", "posts", "saltire"};
  return names;
}

// Binary mask for one class at a jittered center.
inline bool mask_at(int cls, double dh, double dw, int h, int w) {
  const double m = static_cast<double>(std::min(h, w));
  const double ah = std::abs(dh), aw = std::abs(dw);
  switch (cls) {
    case 0:  // disc
      return dh * dh + dw * dw <= (0.19 * m) * (0.19 * m);
    case 1: {  // ring
      const double r2 = dh * dh + dw * dw;
      return r2 >= (0.13 * m) * (0.13 * m) && r2 <= (0.235 * m) * (0.235 * m);
    }
    case 2:  // cross
      return (ah <= 0.065 * m && aw <= 0.26 * m) || (aw <= 0.065 * m && ah <= 0.26 * m);
    case 3:  // two horizontal bars
      return aw <= 0.26 * m && (std::abs(dh - 0.14 * m) <= 0.055 * m ||
                                std::abs(dh + 0.14 * m) <= 0.055 * m);
    case 4: {  // square outline
      const double r = std::max(ah, aw);
      return r >= 0.14 * m && r <= 0.22 * m;
    }
    case 5:  // diamond
      return ah + aw <= 0.24 * m;
    case 6:  // two vertical posts
      return ah <= 0.26 * m && (std::abs(dw - 0.14 * m) <= 0.055 * m ||
                                std::abs(dw + 0.14 * m) <= 0.055 * m);
    case 7:  // saltire
      return std::abs(ah - aw) <= 0.07 * m && std::max(ah, aw) <= 0.26 * m;
    default:
      return false;
  }
}

}  // namespace data_detail

inline void validate(const SyntheticSpec& spec) {
  if (spec.classes < 2 || spec.domains < 2 || spec.per_cell < 1)
    fail(ErrorCategory::invalid_argument,
         "synthetic spec: need classes >= 2, domains >= 2, per_cell >= 1");
  if (spec.classes > 8)
    fail(ErrorCategory::invalid_argument,
         "synthetic spec: at most 8 classes are available (got " +
             std::to_string(spec.classes) + ")");
  if (spec.channels < 1 || spec.height < 2 || spec.width < 2)
    fail(ErrorCategory::invalid_argument, "synthetic spec: bad image dims");
  if (static_cast<int>(spec.styles.size()) != spec.domains)
    fail(ErrorCategory::invalid_argument,
         "synthetic spec: " + std::to_string(spec.styles.size()) + " styles for " +
             std::to_string(spec.domains) + " domains");
  for (const DomainStyle& st : spec.styles)
    if (st.gain <= 0.0)
      fail(ErrorCategory::invalid_argument, "synthetic spec: gain must be > 0");
}

template <typename T>
DomainDataset<T> generate(const SyntheticSpec& spec) {
  validate(spec);
  const int h = spec.height, w = spec.width;
  const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);

  // Per-(class, sample) content: jittered mask and a unit noise field. Keyed
  // independently of the domain so that two domains differing only in style
  // share identical content sample-for-sample.
  struct Content {
    std::vector<double> mask;
    std::vector<double> noise;
  };
  std::vector<Content> content(static_cast<std::size_t>(spec.classes) *
                               static_cast<std::size_t>(spec.per_cell));
  for (int k = 0; k < spec.classes; ++k) {
    for (int i = 0; i < spec.per_cell; ++i) {
      Content& ct = content[static_cast<std::size_t>(k) * spec.per_cell + i];
      Rng jrng = derive_rng(spec.seed, stream_id("content", static_cast<std::uint64_t>(k),
                                                 static_cast<std::uint64_t>(i)));
      const double cy = 0.5 * (h - 1) + jrng.range_int(-spec.jitter, spec.jitter);
      const double cx = 0.5 * (w - 1) + jrng.range_int(-spec.jitter, spec.jitter);
      ct.mask.resize(plane);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          ct.mask[static_cast<std::size_t>(y) * w + x] =
              data_detail::mask_at(k, y - cy, x - cx, h, w) ? 1.0 : 0.0;
      Rng nrng = derive_rng(spec.seed, stream_id("noise", static_cast<std::uint64_t>(k),
                                                 static_cast<std::uint64_t>(i)));
      ct.noise.resize(plane);
      for (std::size_t p = 0; p < plane; ++p) ct.noise[p] = nrng.normal();
    }
  }

  DomainDataset<T> ds;
  for (int k = 0; k < spec.classes; ++k)
    ds.class_names.push_back(data_detail::shape_names()[static_cast<std::size_t>(k)]);
  for (int d = 0; d < spec.domains; ++d) ds.domain_names.push_back("dom" + std::to_string(d));

  std::vector<double> tex(plane), lowfreq(plane);
  for (int d = 0; d < spec.domains; ++d) {
    const DomainStyle& st = spec.styles[static_cast<std::size_t>(d)];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        tex[p] = st.texture_freq == 0.0
                     ? 1.0
                     : 1.0 + spec.texture_depth *
                                 std::sin(2.0 * M_PI * st.texture_freq * y / h) *
                                 std::sin(2.0 * M_PI * st.texture_freq * x / w);
        lowfreq[p] = st.lowfreq_h * std::cos(2.0 * M_PI * y / h + st.lowfreq_h_phase) +
                     st.lowfreq_w * std::cos(2.0 * M_PI * x / w + st.lowfreq_w_phase) +
                     st.offset;
      }
    for (int k = 0; k < spec.classes; ++k) {
      for (int i = 0; i < spec.per_cell; ++i) {
        const Content& ct = content[static_cast<std::size_t>(k) * spec.per_cell + i];
        Sample<T> sample;
        sample.label = k;
        sample.domain = d;
        sample.image = Tensor4<T>(1, spec.channels, h, w);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            // circular shift moves the styled content; pure phase change
            const int sy = ((y - st.shift_h) % h + h) % h;
            const int sx = ((x - st.shift_w) % w + w) % w;
            const std::size_t src = static_cast<std::size_t>(sy) * w + sx;
            double v = st.gain * spec.mask_value * ct.mask[src] * tex[src] + lowfreq[src];
            v += st.noise_std * ct.noise[static_cast<std::size_t>(y) * w + x];
            if (spec.clamp) v = std::min(1.0, std::max(0.0, v));
            for (int c = 0; c < spec.channels; ++c)
              sample.image.at(0, c, y, x) = static_cast<T>(v);
          }
        ds.samples.push_back(std::move(sample));
      }
    }
  }
  return ds;
}

inline SyntheticSpec SyntheticSpec::preset_amplitude() {
  SyntheticSpec s;
  s.styles = {
      DomainStyle{0.55, 0.00, 0.0, 0.00, 0.0, 0.02, 0.0, 0.02, 0, 0},
      DomainStyle{0.85, 0.10, 0.6, 0.00, 0.0, 0.08, 2.0, 0.02, 0, 0},
      DomainStyle{1.20, 0.00, 0.0, 0.12, 1.2, 0.14, 3.0, 0.02, 0, 0},
      DomainStyle{1.60, 0.14, 2.1, 0.14, 3.6, 0.20, 5.0, 0.02, 0, 0},
  };
  return s;
}

inline SyntheticSpec SyntheticSpec::preset_phase_adversarial() {
  SyntheticSpec s;
  const DomainStyle base{1.0, 0.0, 0.0, 0.0, 0.0, 0.05, 0.0, 0.02, 0, 0};
  s.styles = {base, base, base, base};
  s.styles[1].shift_h = 10;
  s.styles[2].shift_w = 10;
  s.styles[3].shift_h = 10;
  s.styles[3].shift_w = 10;
  return s;
}

// ---------------------------------------------------------------------------
// Leave-one-domain-out split
// ---------------------------------------------------------------------------

struct LdoSplit {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
};

// Test = every target-domain sample. The remaining samples are split
// per-class (stratified) into train/val with a seeded shuffle.
template <typename T>
LdoSplit split_ldo(const DomainDataset<T>& ds, int target_domain, double val_fraction,
                   std::uint64_t seed) {
  if (target_domain < 0 || target_domain >= ds.domain_count())
    fail(ErrorCategory::invalid_argument,
         "split_ldo: unknown domain index " + std::to_string(target_domain));
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    fail(ErrorCategory::invalid_argument, "split_ldo: val_fraction must be in [0, 1)");

  LdoSplit split;
  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample<T>& s = ds.samples[i];
    if (s.domain == target_domain)
      split.test.push_back(static_cast<int>(i));
    else
      by_class[s.label].push_back(static_cast<int>(i));
  }
  for (auto& [cls, indices] : by_class) {
    Rng rng = derive_rng(seed, stream_id("split", static_cast<std::uint64_t>(cls)));
    rng.shuffle(indices);
    const std::size_t n_val =
        static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(indices.size())));
    for (std::size_t i = 0; i < indices.size(); ++i)
      (i < n_val ? split.val : split.train).push_back(indices[i]);
  }
  return split;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------
// Directory layout: manifest.json {version, classes[], domains[],
// samples[{file, class, domain}]} plus either one TFC1 file per sample or
// one packed TFC1 tensor per domain (sample order inside a packed file is
// the manifest order of the samples referencing it).

template <typename T>
void save_dataset(const std::string& dir, const DomainDataset<T>& ds, bool packed = true) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCategory::io, "cannot create dataset directory " + dir);

  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["classes"] = ds.class_names;
  manifest["domains"] = ds.domain_names;
  nlohmann::json samples = nlohmann::json::array();

  if (packed) {
    for (int d = 0; d < ds.domain_count(); ++d) {
      std::vector<const Sample<T>*> members;
      for (const Sample<T>& s : ds.samples)
        if (s.domain == d) members.push_back(&s);
      if (members.empty()) continue;
      const Shape4 is = members[0]->image.shape();
      Tensor4<T> pack(static_cast<int>(members.size()), is.c, is.h, is.w);
      for (std::size_t i = 0; i < members.size(); ++i)
        std::copy(members[i]->image.data(), members[i]->image.data() + members[i]->image.size(),
                  pack.data() + i * members[i]->image.size());
      const std::string file = "domain_" + ds.domain_names[static_cast<std::size_t>(d)] + ".tfc";
      write_tensor(dir + "/" + file, pack);
    }
    for (const Sample<T>& s : ds.samples)
      samples.push_back({{"file", "domain_" + ds.domain_names[static_cast<std::size_t>(s.domain)] + ".tfc"},
                         {"class", s.label},
                         {"domain", s.domain}});
  } else {
    char name[32];
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      std::snprintf(name, sizeof(name), "sample_%05zu.tfc", i);
      write_tensor(dir + "/" + name, ds.samples[i].image);
      samples.push_back({{"file", name}, {"class", ds.samples[i].label}, {"domain", ds.samples[i].domain}});
    }
  }
  manifest["samples"] = samples;
  std::ofstream os(dir + "/manifest.json");
  if (!os) fail(ErrorCategory::io, "cannot write " + dir + "/manifest.json");
  os << manifest.dump(2) << "\n";
}

template <typename T>
DomainDataset<T> load_dataset(const std::string& dir) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) fail(ErrorCategory::io, "cannot open dataset manifest " + dir + "/manifest.json");
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::io, dir + "/manifest.json: " + e.what());
  }
  if (manifest.value("version", 0) != 1)
    fail(ErrorCategory::io, dir + "/manifest.json: unsupported version");

  DomainDataset<T> ds;
  ds.class_names = manifest.at("classes").get<std::vector<std::string>>();
  ds.domain_names = manifest.at("domains").get<std::vector<std::string>>();

  std::map<std::string, Tensor4<T>> files;
  std::map<std::string, int> cursor;  // next row to hand out per packed file
  for (const auto& entry : manifest.at("samples")) {
    const std::string file = entry.at("file").get<std::string>();
    auto it = files.find(file);
    if (it == files.end()) {
      if (!std::filesystem::exists(dir + "/" + file))
        fail(ErrorCategory::io, dir + "/manifest.json references missing tensor file " + file);
      it = files.emplace(file, read_tensor<T>(dir + "/" + file)).first;
      cursor[file] = 0;
    }
    const Tensor4<T>& pack = it->second;
    const int row = cursor[file]++;
    if (row >= pack.n())
      fail(ErrorCategory::io,
           dir + "/" + file + ": manifest references more samples than stored rows");
    Sample<T> s;
    s.label = entry.at("class").get<int>();
    s.domain = entry.at("domain").get<int>();
    s.image = Tensor4<T>(1, pack.c(), pack.h(), pack.w());
    std::copy(pack.data() + static_cast<std::size_t>(row) * s.image.size(),
              pack.data() + static_cast<std::size_t>(row + 1) * s.image.size(), s.image.data());
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline Precision dataset_precision(const std::string& dir) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) fail(ErrorCategory::io, "cannot open dataset manifest " + dir + "/manifest.json");
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::io, dir + "/manifest.json: " + e.what());
  }
  const auto& samples = manifest.at("samples");
  if (samples.empty()) fail(ErrorCategory::io, dir + ": empty dataset");
  const std::string file = samples.at(0).at("file").get<std::string>();
  AnyTensor t = read_tensor_any(dir + "/" + file);
  return std::holds_alternative<Tensor4<float>>(t) ? Precision::f32 : Precision::f64;
}

}  // namespace tafcal
