#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tafcal/data.hpp"
#include "tafcal/model.hpp"
#include "tafcal/stylecal.hpp"

// Two-stage training loop, leave-one-domain-out evaluation, the component
// ablation grid, and the strength/layer sensitivity sweeps.

namespace tafcal {

struct TrainConfig {
  Precision precision = Precision::f32;
  std::uint64_t seed = 0;
  std::string dataset_dir;
  std::string target_domain = "0";
  int epochs = 40;
  int batch_size = 32;
  double val_fraction = 0.1;
  SgdState sgd{0.05, 0.05, 5e-4, 0.1, 0.8};
  std::vector<int> block_channels = {16, 32, 32, 64};
  int insertion_after_block = 2;
  bool style_enabled = true;
  CalibrationConfig cal{};
  AafConfig aaf{};
  bool bank_pre_aaf = true;
  bool exclusive_aaf_cal = false;
  bool random_prototype = false;
  nlohmann::json echo;  // effective config as parsed; carried into artifacts
};

struct EpochStats {
  double train_loss = 0.0;
  double val_accuracy = -1.0;  // -1 when the validation split is empty
};

struct EvalResult {
  double accuracy = 0.0;
  int total = 0;
  std::map<std::string, double> per_domain;
  std::vector<int> predictions;
};

struct RunReport {
  nlohmann::json config_echo;
  std::uint64_t seed = 0;
  std::vector<EpochStats> epochs;
  double target_accuracy_uncalibrated = 0.0;
  double target_accuracy_calibrated = -1.0;  // -1 when no prototype exists
  int prototype_epoch = -1;
  double wall_seconds = 0.0;

  nlohmann::json to_json(bool include_timing = true) const {
    nlohmann::json epochs_json = nlohmann::json::array();
    for (std::size_t i = 0; i < epochs.size(); ++i) {
      nlohmann::json e{{"epoch", i}, {"train_loss", epochs[i].train_loss}};
      if (epochs[i].val_accuracy >= 0.0) e["val_accuracy"] = epochs[i].val_accuracy;
      epochs_json.push_back(e);
    }
    nlohmann::json j{{"version", 1},
                     {"config", config_echo},
                     {"seed", seed},
                     {"epochs", epochs_json},
                     {"final",
                      {{"target_accuracy_uncalibrated", target_accuracy_uncalibrated},
                       {"prototype_epoch", prototype_epoch}}}};
    if (target_accuracy_calibrated >= 0.0)
      j["final"]["target_accuracy_calibrated"] = target_accuracy_calibrated;
    if (include_timing) j["timing"] = {{"wall_seconds", wall_seconds}};
    return j;
  }
};

namespace trainer_detail {

template <typename T>
Tensor4<T> gather_batch(const DomainDataset<T>& ds, const std::vector<int>& indices,
                        std::size_t begin, std::size_t end, std::vector<int>* labels) {
  const Shape4 is = ds.samples[static_cast<std::size_t>(indices[begin])].image.shape();
  Tensor4<T> x(static_cast<int>(end - begin), is.c, is.h, is.w);
  for (std::size_t i = begin; i < end; ++i) {
    const Sample<T>& s = ds.samples[static_cast<std::size_t>(indices[i])];
    std::copy(s.image.data(), s.image.data() + s.image.size(),
              x.data() + (i - begin) * s.image.size());
    if (labels) labels->push_back(s.label);
  }
  return x;
}

}  // namespace trainer_detail

// Scalar mean/std standardization fitted on the training split only.
struct Standardizer {
  double mean = 0.0;
  double stdev = 1.0;
};

template <typename T>
Standardizer fit_standardizer(const DomainDataset<T>& ds, const std::vector<int>& train_indices) {
  double sum = 0.0, sum2 = 0.0;
  std::size_t count = 0;
  for (const int idx : train_indices) {
    const Tensor4<T>& img = ds.samples[static_cast<std::size_t>(idx)].image;
    for (std::size_t i = 0; i < img.size(); ++i) {
      const double v = static_cast<double>(img[i]);
      sum += v;
      sum2 += v * v;
    }
    count += ds.samples[static_cast<std::size_t>(idx)].image.size();
  }
  Standardizer st;
  st.mean = sum / static_cast<double>(count);
  const double var = sum2 / static_cast<double>(count) - st.mean * st.mean;
  st.stdev = var > 1e-12 ? std::sqrt(var) : 1.0;
  return st;
}

template <typename T>
void standardize_in_place(DomainDataset<T>& ds, const Standardizer& st) {
  const T mean = static_cast<T>(st.mean);
  const T inv = static_cast<T>(1.0 / st.stdev);
  for (Sample<T>& s : ds.samples)
    for (std::size_t i = 0; i < s.image.size(); ++i) s.image[i] = (s.image[i] - mean) * inv;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// Accuracy over `indices`. calibrated=true routes the features through the
// test-mode style layer (probability 1, strength tau); it requires a
// prototype unless tau = 0.
template <typename T>
EvalResult evaluate_split(const Model<T>& model, const DomainDataset<T>& ds,
                          const std::vector<int>& indices, bool calibrated, double tau,
                          const std::type_identity_t<std::optional<Tensor4<T>>>& prototype,
                          int batch_size = 64,
                          double residual_tol = default_reconstruct_tolerance<T>()) {
  if (calibrated && tau > 0.0 && !prototype)
    fail(ErrorCategory::state,
         "uncalibrated model: no persisted prototype; evaluate uncalibrated or set tau=0");
  EvalResult res;
  res.total = static_cast<int>(indices.size());
  std::map<std::string, std::pair<int, int>> domain_counts;  // correct, total
  typename Model<T>::StyleHook hook;
  if (calibrated) {
    StyleDecisions d;
    d.apply_cal = tau > 0.0;
    d.strength = tau;
    const Tensor4<T>* proto = prototype ? &*prototype : nullptr;
    StyleLayerOptions opts;
    opts.residual_tol = residual_tol;
    hook = [d, proto, opts](const Var<T>& v) {
      return style_layer_apply(v, StyleMode::test, d, nullptr, proto, opts);
    };
  }
  int correct = 0;
  for (std::size_t begin = 0; begin < indices.size();) {
    const std::size_t end = std::min(indices.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<int> labels;
    Tensor4<T> x = trainer_detail::gather_batch(ds, indices, begin, end, &labels);
    const Var<T> logits = model.forward(x, hook);
    const std::vector<int> pred = argmax_rows(logits.value());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const Sample<T>& s = ds.samples[static_cast<std::size_t>(indices[begin + i])];
      auto& dc = domain_counts[ds.domain_names[static_cast<std::size_t>(s.domain)]];
      dc.second += 1;
      if (pred[i] == labels[i]) {
        correct += 1;
        dc.first += 1;
      }
      res.predictions.push_back(pred[i]);
    }
    begin = end;
  }
  res.accuracy = res.total > 0 ? static_cast<double>(correct) / res.total : 0.0;
  for (const auto& [name, counts] : domain_counts)
    res.per_domain[name] = static_cast<double>(counts.first) / counts.second;
  return res;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

template <typename T>
struct TrainOutput {
  Model<T> model;
  std::optional<Tensor4<T>> prototype;
  int prototype_epoch = -1;
  Standardizer standardizer;
  LdoSplit split;
  RunReport report;
};

// Full run on an already-loaded dataset (raw [0,1] pixels; standardization
// is fitted here on the train split). AAF coins are drawn every epoch;
// TF-Cal coins only once the stage epoch is reached and a finalized
// prototype exists. The bank finalizes at every epoch end and the final
// epoch's prototype is the one persisted for test time.
template <typename T>
TrainOutput<T> train_run(const TrainConfig& cfg, const DomainDataset<T>& raw) {
  const auto t0 = std::chrono::steady_clock::now();
  if (cfg.epochs < 1 || cfg.batch_size < 1)
    fail(ErrorCategory::invalid_argument, "train: epochs and batch_size must be >= 1");
  if (raw.samples.empty()) fail(ErrorCategory::invalid_argument, "train: empty dataset");

  const int target = raw.domain_index(cfg.target_domain);
  LdoSplit split = split_ldo(raw, target, cfg.val_fraction, cfg.seed);
  if (split.train.empty()) fail(ErrorCategory::invalid_argument, "train: empty training split");

  DomainDataset<T> ds = raw;  // standardized copy
  const Standardizer st = fit_standardizer(ds, split.train);
  standardize_in_place(ds, st);

  const Shape4 is = ds.samples[0].image.shape();
  NetworkSpec spec = NetworkSpec::default_spec(is.c, is.h, is.w, raw.class_count());
  spec.blocks.clear();
  for (const int ch : cfg.block_channels) spec.blocks.push_back(BlockSpec{ConvSpec{ch}, true, true});
  spec.insertion_after_block = cfg.insertion_after_block;
  Model<T> model(spec, cfg.seed);

  PrototypeBank<T> bank;
  StyleLayerOptions style_opts;
  style_opts.bank_pre_aaf = cfg.bank_pre_aaf;
  style_opts.exclusive_aaf_cal = cfg.exclusive_aaf_cal;
  style_opts.residual_tol = default_reconstruct_tolerance<T>();

  Rng shuffle_rng = derive_rng(cfg.seed, stream_id("shuffle"));
  Rng style_rng = derive_rng(cfg.seed, stream_id("style"));

  RunReport report;
  report.config_echo = cfg.echo;
  report.seed = cfg.seed;

  std::vector<int> order = split.train;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < order.size();) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      std::vector<int> labels;
      Tensor4<T> x = trainer_detail::gather_batch(ds, order, begin, end, &labels);

      typename Model<T>::StyleHook hook;
      if (cfg.style_enabled) {
        hook = [&](const Var<T>& v) {
          return style_layer(v, StyleMode::train, cfg.cal, cfg.aaf, bank, style_rng,
                             EpochContext{epoch, cfg.epochs}, style_opts);
        };
      }
      const Var<T> logits = model.forward(x, hook);
      const Var<T> loss = cross_entropy(logits, labels);
      const double loss_v = static_cast<double>(loss.value()[0]);
      if (!std::isfinite(loss_v))
        fail(ErrorCategory::numeric,
             "divergence: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                 std::to_string(begin / cfg.batch_size));
      model.zero_grad();
      backward(loss);
      sgd_step(model.params(), cfg.sgd, epoch, cfg.epochs);

      loss_sum += loss_v * static_cast<double>(end - begin);
      seen += end - begin;
      begin = end;
    }

    if (cfg.style_enabled && bank.count() > 0) {
      AmplitudeMap<T> proto = bank.finalize(epoch);
      if (cfg.random_prototype) {
        Rng prng = derive_rng(cfg.seed, stream_id("random-proto", static_cast<std::uint64_t>(epoch)));
        bank.set_prototype(random_prototype_like(proto.values, prng), epoch);
      }
    }

    EpochStats es;
    es.train_loss = loss_sum / static_cast<double>(seen);
    if (!split.val.empty())
      es.val_accuracy =
          evaluate_split(model, ds, split.val, /*calibrated=*/false, 0.0, std::nullopt).accuracy;
    report.epochs.push_back(es);
  }

  TrainOutput<T> out{std::move(model), std::nullopt, -1, st, std::move(split), std::move(report)};
  if (cfg.style_enabled && bank.has_prototype()) {
    out.prototype = bank.prototype();
    out.prototype_epoch = bank.prototype_epoch();
  }
  out.report.prototype_epoch = out.prototype_epoch;

  out.report.target_accuracy_uncalibrated =
      evaluate_split(out.model, ds, out.split.test, false, 0.0, std::nullopt).accuracy;
  if (out.prototype)
    out.report.target_accuracy_calibrated =
        evaluate_split(out.model, ds, out.split.test, true, cfg.cal.tau, out.prototype).accuracy;

  out.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---------------------------------------------------------------------------
// Ablation grid (component toggles) and sensitivity sweeps
// ---------------------------------------------------------------------------

struct GridCell {
  std::string name;
  TrainConfig cfg;
  bool eval_calibrated = false;
};

struct GridCellResult {
  std::string name;
  std::uint64_t seed = 0;
  double target_accuracy = 0.0;
  double axis_value = 0.0;  // sweeps only
};

struct GridReport {
  std::string kind;  // "ablate" | "sweep-strength" | "sweep-layer"
  std::vector<GridCellResult> cells;
  nlohmann::json config_echo;

  double mean_for(const std::string& name) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& c : cells)
      if (c.name == name) {
        sum += c.target_accuracy;
        ++n;
      }
    return n > 0 ? sum / n : 0.0;
  }

  double std_for(const std::string& name) const {
    const double mean = mean_for(name);
    double acc = 0.0;
    int n = 0;
    for (const auto& c : cells)
      if (c.name == name) {
        acc += (c.target_accuracy - mean) * (c.target_accuracy - mean);
        ++n;
      }
    return n > 0 ? std::sqrt(acc / n) : 0.0;
  }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    std::vector<std::string> seen;
    for (const auto& c : cells) {
      if (std::find(seen.begin(), seen.end(), c.name) != seen.end()) continue;
      seen.push_back(c.name);
      nlohmann::json per_seed = nlohmann::json::array();
      for (const auto& other : cells)
        if (other.name == c.name)
          per_seed.push_back({{"seed", other.seed},
                              {"target_accuracy", other.target_accuracy},
                              {"axis_value", other.axis_value}});
      rows.push_back({{"name", c.name},
                      {"axis_value", c.axis_value},
                      {"mean", mean_for(c.name)},
                      {"std", std_for(c.name)},
                      {"runs", per_seed}});
    }
    return {{"version", 1}, {"kind", kind}, {"config", config_echo}, {"rows", rows}};
  }

  std::string to_csv() const {
    std::string out = "cell,seed,axis_value,target_accuracy\n";
    for (const auto& c : cells)
      out += c.name + "," + std::to_string(c.seed) + "," + std::to_string(c.axis_value) + "," +
             std::to_string(c.target_accuracy) + "\n";
    return out;
  }
};

// Runs independent cells on a small thread pool; every run owns isolated
// generators, so the schedule cannot change results.
template <typename T>
GridReport run_grid(const std::string& kind, const std::vector<GridCell>& cells,
                    const std::vector<double>& axis_values, const DomainDataset<T>& ds,
                    int jobs) {
  GridReport report;
  report.kind = kind;
  report.cells.resize(cells.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string first_error;
  std::mutex error_mutex;

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size() || failed.load()) return;
      try {
        TrainOutput<T> out = train_run(cells[i].cfg, ds);
        GridCellResult r;
        r.name = cells[i].name;
        r.seed = cells[i].cfg.seed;
        r.axis_value = axis_values.empty() ? 0.0 : axis_values[i];
        r.target_accuracy = cells[i].eval_calibrated ? out.report.target_accuracy_calibrated
                                                     : out.report.target_accuracy_uncalibrated;
        report.cells[i] = std::move(r);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!failed.exchange(true)) first_error = e.what();
        return;
      }
    }
  };

  const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(cells.size())));
  std::vector<std::thread> pool;
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (failed.load()) fail(ErrorCategory::numeric, "grid run failed: " + first_error);
  return report;
}

inline const std::vector<double>& strength_grid() {
  static const std::vector<double> g = {0.1, 0.3, 0.5, 0.75, 1.0};
  return g;
}

// The six component rows (AAF, TF-Cal train, TF-Cal test) plus the
// random-prototype control.
template <typename T>
GridReport ablate(const TrainConfig& base, const std::vector<std::uint64_t>& seeds,
                  const DomainDataset<T>& ds, int jobs) {
  struct RowDef {
    const char* name;
    bool aaf, cal_train, cal_test, random_proto;
  };
  static constexpr RowDef rows[] = {
      {"baseline", false, false, false, false},
      {"aaf", true, false, false, false},
      {"tfcal_train", false, true, false, false},
      {"aaf+tfcal_train", true, true, false, false},
      {"tfcal_train+test", false, true, true, false},
      {"taf_cal", true, true, true, false},
      {"random_prototype", false, true, true, true},
  };
  std::vector<GridCell> cells;
  for (const RowDef& row : rows) {
    for (const std::uint64_t seed : seeds) {
      GridCell cell;
      cell.name = row.name;
      cell.cfg = base;
      cell.cfg.seed = seed;
      cell.cfg.style_enabled = row.aaf || row.cal_train;  // baseline elides the layer
      cell.cfg.aaf.p_aaf = row.aaf ? base.aaf.p_aaf : 0.0;
      cell.cfg.cal.p_cal = row.cal_train ? base.cal.p_cal : 0.0;
      cell.cfg.random_prototype = row.random_proto;
      cell.eval_calibrated = row.cal_test;
      cells.push_back(std::move(cell));
    }
  }
  GridReport report = run_grid<T>("ablate", cells, {}, ds, jobs);
  report.config_echo = base.echo;
  return report;
}

enum class SweepAxis { strength, layer };

template <typename T>
GridReport sweep(const TrainConfig& base, SweepAxis axis, const std::vector<std::uint64_t>& seeds,
                 const DomainDataset<T>& ds, int jobs) {
  std::vector<GridCell> cells;
  std::vector<double> axis_values;
  if (axis == SweepAxis::strength) {
    for (const double s : strength_grid()) {
      for (const std::uint64_t seed : seeds) {
        GridCell cell;
        cell.cfg = base;
        cell.cfg.seed = seed;
        cell.cfg.cal.eta = s;
        cell.cfg.cal.tau = s;
        cell.eval_calibrated = true;
        cell.name = "strength=" + std::to_string(s);
        cells.push_back(std::move(cell));
        axis_values.push_back(s);
      }
    }
  } else {
    const int n_blocks = static_cast<int>(base.block_channels.size());
    for (int layer = 1; layer <= n_blocks; ++layer) {
      for (const std::uint64_t seed : seeds) {
        GridCell cell;
        cell.cfg = base;
        cell.cfg.seed = seed;
        cell.cfg.insertion_after_block = layer;
        cell.cfg.cal.insertion_after_block = layer;
        cell.eval_calibrated = true;
        cell.name = "layer=" + std::to_string(layer);
        cells.push_back(std::move(cell));
        axis_values.push_back(layer);
      }
    }
  }
  GridReport report =
      run_grid<T>(axis == SweepAxis::strength ? "sweep-strength" : "sweep-layer", cells,
                  axis_values, ds, jobs);
  report.config_echo = base.echo;
  return report;
}

// ---------------------------------------------------------------------------
// Embedding export
// ---------------------------------------------------------------------------

enum class EmbeddingStage { pre_style, post_style };

struct EmbeddingExport {
  std::vector<std::vector<double>> features;  // one row per sample
  std::vector<int> labels;
  std::vector<int> domains;

  std::string to_csv() const {
    std::string out;
    if (features.empty()) return "class,domain\n";
    const std::size_t m = features[0].size();
    for (std::size_t j = 0; j < m; ++j) out += "f" + std::to_string(j) + ",";
    out += "class,domain\n";
    for (std::size_t i = 0; i < features.size(); ++i) {
      char buf[32];
      for (std::size_t j = 0; j < m; ++j) {
        std::snprintf(buf, sizeof(buf), "%.9g,", features[i][j]);
        out += buf;
      }
      out += std::to_string(labels[i]) + "," + std::to_string(domains[i]) + "\n";
    }
    return out;
  }
};

// One row per dataset sample: flattened insertion-layer features (pre- or
// post-style), class, domain. Post-style uses the test-mode layer with the
// given tau; without a prototype it degenerates to the tau=0 roundtrip.
template <typename T>
EmbeddingExport export_embeddings(const Model<T>& model, const DomainDataset<T>& ds,
                                  EmbeddingStage stage,
                                  const std::type_identity_t<std::optional<Tensor4<T>>>& prototype,
                                  double tau, int batch_size = 64) {
  EmbeddingExport out;
  typename Model<T>::StyleHook hook;
  StyleDecisions d;
  d.apply_cal = prototype.has_value() && tau > 0.0;
  d.strength = tau;
  const Tensor4<T>* proto = prototype ? &*prototype : nullptr;
  hook = [d, proto](const Var<T>& v) {
    return style_layer_apply(v, StyleMode::test, d, nullptr, proto, StyleLayerOptions{});
  };

  std::vector<int> indices(ds.samples.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<int>(i);
  for (std::size_t begin = 0; begin < indices.size();) {
    const std::size_t end = std::min(indices.size(), begin + static_cast<std::size_t>(batch_size));
    Tensor4<T> x = trainer_detail::gather_batch(ds, indices, begin, end, nullptr);
    typename Model<T>::ForwardCapture cap;
    model.forward(x, hook, &cap);
    const Tensor4<T>& feats =
        stage == EmbeddingStage::pre_style ? *cap.pre_style : *cap.post_style;
    const std::size_t row = feats.size() / static_cast<std::size_t>(feats.n());
    for (std::size_t i = 0; i < end - begin; ++i) {
      std::vector<double> r(row);
      for (std::size_t j = 0; j < row; ++j)
        r[j] = static_cast<double>(feats[i * row + j]);
      out.features.push_back(std::move(r));
      const Sample<T>& s = ds.samples[begin + i];
      out.labels.push_back(s.label);
      out.domains.push_back(s.domain);
    }
    begin = end;
  }
  return out;
}

}  // namespace tafcal
