#include "tafcal/harness.hpp"

#include <filesystem>
#include <fstream>

#include "tafcal/config.hpp"
#include "tafcal/model.hpp"
#include "tafcal/trainer.hpp"

namespace tafcal::harness {

namespace {

namespace fs = std::filesystem;

void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream os(path);
  if (!os) fail(ErrorCategory::io, "cannot write " + path);
  os << text;
  if (!os) fail(ErrorCategory::io, "write failed: " + path);
}

nlohmann::json parse_with_overrides(const std::string& text,
                                    const std::vector<std::string>& overrides,
                                    const std::string& what) {
  nlohmann::json j = parse_json_text(text, what);
  for (const std::string& o : overrides) apply_override(j, o);
  return j;
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  if (csv.empty()) return {0, 1, 2};
  std::vector<std::uint64_t> seeds;
  std::size_t begin = 0;
  while (begin <= csv.size()) {
    const std::size_t comma = csv.find(',', begin);
    const std::string tok = csv.substr(begin, comma == std::string::npos ? comma : comma - begin);
    try {
      std::size_t pos = 0;
      seeds.push_back(std::stoull(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument(tok);
    } catch (...) {
      fail(ErrorCategory::config, "bad seed list \"" + csv + "\"");
    }
    if (comma == std::string::npos) break;
    begin = comma + 1;
  }
  return seeds;
}

template <typename T>
nlohmann::json gen_data_impl(const SyntheticSpec& spec, const nlohmann::json& eff,
                             const std::string& out_dir, bool packed) {
  DomainDataset<T> ds = generate<T>(spec);
  save_dataset(out_dir, ds, packed);
  write_text(out_dir + "/config.json", eff.dump(2) + "\n");
  return {{"samples", ds.samples.size()},
          {"classes", ds.class_names},
          {"domains", ds.domain_names},
          {"out", out_dir},
          {"config_digest", config_digest(eff)}};
}

template <typename T>
nlohmann::json train_impl(const TrainConfig& cfg, const nlohmann::json& eff,
                          const std::string& out_dir) {
  DomainDataset<T> ds = load_dataset<T>(cfg.dataset_dir);
  TrainOutput<T> out = train_run(cfg, ds);

  nlohmann::json extra;
  extra["seed"] = cfg.seed;
  extra["dataset"] = cfg.dataset_dir;
  extra["target_domain"] = ds.domain_names[static_cast<std::size_t>(
      ds.domain_index(cfg.target_domain))];
  extra["val_fraction"] = cfg.val_fraction;
  extra["standardize"] = {{"mean", out.standardizer.mean}, {"std", out.standardizer.stdev}};
  extra["config"] = eff;
  extra["config_digest"] = config_digest(eff);
  std::optional<Tensor4<T>> proto = out.prototype;
  save_checkpoint(out_dir, out.model, proto, out.prototype_epoch, extra);
  write_text(out_dir + "/report.json", out.report.to_json().dump(2) + "\n");
  return out.report.to_json();
}

struct LoadedCheckpoint {
  nlohmann::json manifest;
  Precision precision = Precision::f32;
};

LoadedCheckpoint peek_checkpoint(const std::string& ckpt_dir) {
  LoadedCheckpoint lc;
  lc.manifest = read_checkpoint_manifest(ckpt_dir);
  lc.precision = parse_precision(lc.manifest.at("precision").get<std::string>());
  return lc;
}

template <typename T>
struct EvalContext {
  Checkpoint<T> ckpt;
  DomainDataset<T> ds;
  LdoSplit split;
};

template <typename T>
EvalContext<T> load_eval_context(const std::string& ckpt_dir, const std::string& dataset_dir) {
  EvalContext<T> ctx{load_checkpoint<T>(ckpt_dir), {}, {}};
  const nlohmann::json& manifest = ctx.ckpt.manifest;
  const std::string ds_dir =
      dataset_dir.empty() ? manifest.at("dataset").get<std::string>() : dataset_dir;
  ctx.ds = load_dataset<T>(ds_dir);
  const int target = ctx.ds.domain_index(manifest.at("target_domain").get<std::string>());
  ctx.split = split_ldo(ctx.ds, target, manifest.at("val_fraction").get<double>(),
                        manifest.at("seed").get<std::uint64_t>());
  Standardizer st;
  st.mean = manifest.at("standardize").at("mean").get<double>();
  st.stdev = manifest.at("standardize").at("std").get<double>();
  standardize_in_place(ctx.ds, st);
  return ctx;
}

template <typename T>
nlohmann::json evaluate_impl(const std::string& ckpt_dir, const std::string& dataset_dir,
                             const std::string& split_name, bool calibrated, double tau,
                             const std::string& out_dir) {
  EvalContext<T> ctx = load_eval_context<T>(ckpt_dir, dataset_dir);
  std::vector<int> indices;
  if (split_name == "target" || split_name == "test") {
    indices = ctx.split.test;
  } else if (split_name == "train") {
    indices = ctx.split.train;
  } else if (split_name == "val") {
    indices = ctx.split.val;
  } else if (split_name == "all") {
    indices.resize(ctx.ds.samples.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<int>(i);
  } else {
    fail(ErrorCategory::invalid_argument,
         "eval: split must be target|train|val|all, got \"" + split_name + "\"");
  }
  const EvalResult res =
      evaluate_split(ctx.ckpt.model, ctx.ds, indices, calibrated, tau, ctx.ckpt.prototype);
  nlohmann::json j{{"split", split_name},
                   {"calibrated", calibrated},
                   {"tau", tau},
                   {"accuracy", res.accuracy},
                   {"samples", res.total},
                   {"per_domain", res.per_domain},
                   {"checkpoint", ckpt_dir},
                   {"config_digest", ctx.ckpt.manifest.value("config_digest", "")}};
  const std::string dir = out_dir.empty() ? ckpt_dir : out_dir;
  write_text(dir + "/eval.json", j.dump(2) + "\n");
  return j;
}

template <typename T>
nlohmann::json grid_impl(const TrainConfig& base, const nlohmann::json& eff, bool is_ablate,
                         const std::string& axis, const std::vector<std::uint64_t>& seeds,
                         int jobs, const std::string& out_dir) {
  DomainDataset<T> ds = load_dataset<T>(base.dataset_dir);
  GridReport report;
  if (is_ablate) {
    report = tafcal::ablate(base, seeds, ds, jobs);
  } else {
    SweepAxis ax;
    if (axis == "strength")
      ax = SweepAxis::strength;
    else if (axis == "layer")
      ax = SweepAxis::layer;
    else
      fail(ErrorCategory::invalid_argument, "sweep: axis must be strength|layer, got \"" + axis + "\"");
    report = tafcal::sweep(base, ax, seeds, ds, jobs);
  }
  report.config_echo = eff;
  write_text(out_dir + "/report.json", report.to_json().dump(2) + "\n");
  write_text(out_dir + "/report.csv", report.to_csv());
  return report.to_json();
}

template <typename T>
nlohmann::json export_impl(const std::string& ckpt_dir, const std::string& dataset_dir,
                           const std::string& stage, double tau, const std::string& csv_path) {
  EvalContext<T> ctx = load_eval_context<T>(ckpt_dir, dataset_dir);
  EmbeddingStage st;
  if (stage == "pre" || stage == "pre-style")
    st = EmbeddingStage::pre_style;
  else if (stage == "post" || stage == "post-style")
    st = EmbeddingStage::post_style;
  else
    fail(ErrorCategory::invalid_argument, "export: stage must be pre|post, got \"" + stage + "\"");
  const EmbeddingExport exp =
      export_embeddings(ctx.ckpt.model, ctx.ds, st, ctx.ckpt.prototype, tau);
  write_text(csv_path, exp.to_csv());
  return {{"rows", exp.labels.size()},
          {"columns", exp.features.empty() ? 0 : exp.features[0].size() + 2},
          {"stage", stage},
          {"out", csv_path}};
}

}  // namespace

nlohmann::json gen_data(const std::string& config_text, const std::vector<std::string>& overrides,
                        const std::string& out_dir, bool packed) {
  const nlohmann::json eff =
      effective_synthetic_config(parse_with_overrides(config_text, overrides, "synthetic config"));
  const SyntheticSpec spec = synthetic_spec_from_effective(eff);
  if (spec.precision == Precision::f32) return gen_data_impl<float>(spec, eff, out_dir, packed);
  return gen_data_impl<double>(spec, eff, out_dir, packed);
}

nlohmann::json train(const std::string& config_text, const std::vector<std::string>& overrides,
                     const std::string& out_dir) {
  const nlohmann::json eff =
      effective_train_config(parse_with_overrides(config_text, overrides, "train config"));
  const TrainConfig cfg = train_config_from_effective(eff);
  if (cfg.precision == Precision::f32) return train_impl<float>(cfg, eff, out_dir);
  return train_impl<double>(cfg, eff, out_dir);
}

nlohmann::json evaluate(const std::string& ckpt_dir, const std::string& dataset_dir,
                        const std::string& split, bool calibrated, double tau,
                        const std::string& out_dir) {
  const LoadedCheckpoint lc = peek_checkpoint(ckpt_dir);
  if (lc.precision == Precision::f32)
    return evaluate_impl<float>(ckpt_dir, dataset_dir, split, calibrated, tau, out_dir);
  return evaluate_impl<double>(ckpt_dir, dataset_dir, split, calibrated, tau, out_dir);
}

nlohmann::json ablate(const std::string& config_text, const std::vector<std::string>& overrides,
                      const std::string& seeds_csv, int jobs, const std::string& out_dir) {
  const nlohmann::json eff =
      effective_train_config(parse_with_overrides(config_text, overrides, "train config"));
  const TrainConfig cfg = train_config_from_effective(eff);
  const std::vector<std::uint64_t> seeds = parse_seeds(seeds_csv);
  if (cfg.precision == Precision::f32)
    return grid_impl<float>(cfg, eff, true, "", seeds, jobs, out_dir);
  return grid_impl<double>(cfg, eff, true, "", seeds, jobs, out_dir);
}

nlohmann::json sweep(const std::string& config_text, const std::vector<std::string>& overrides,
                     const std::string& axis, const std::string& seeds_csv, int jobs,
                     const std::string& out_dir) {
  const nlohmann::json eff =
      effective_train_config(parse_with_overrides(config_text, overrides, "train config"));
  const TrainConfig cfg = train_config_from_effective(eff);
  const std::vector<std::uint64_t> seeds = parse_seeds(seeds_csv);
  if (cfg.precision == Precision::f32)
    return grid_impl<float>(cfg, eff, false, axis, seeds, jobs, out_dir);
  return grid_impl<double>(cfg, eff, false, axis, seeds, jobs, out_dir);
}

nlohmann::json export_embeddings(const std::string& ckpt_dir, const std::string& dataset_dir,
                                 const std::string& stage, double tau,
                                 const std::string& csv_path) {
  const LoadedCheckpoint lc = peek_checkpoint(ckpt_dir);
  if (lc.precision == Precision::f32)
    return export_impl<float>(ckpt_dir, dataset_dir, stage, tau, csv_path);
  return export_impl<double>(ckpt_dir, dataset_dir, stage, tau, csv_path);
}

nlohmann::json inspect(const std::string& ckpt_dir) {
  const nlohmann::json manifest = read_checkpoint_manifest(ckpt_dir);
  nlohmann::json j{{"checkpoint", ckpt_dir},
                   {"precision", manifest.at("precision")},
                   {"seed", manifest.at("seed")},
                   {"config_digest", manifest.value("config_digest", "")},
                   {"network", manifest.at("network")}};
  if (manifest.at("prototype").is_null()) {
    j["prototype"] = nullptr;
  } else {
    const std::string file =
        ckpt_dir + "/" + manifest.at("prototype").at("file").get<std::string>();
    AnyTensor any = read_tensor_any(file);
    nlohmann::json pj;
    std::visit(
        [&](const auto& t) {
          double lo = 0.0, hi = 0.0, mean = 0.0;
          if (t.size() > 0) {
            lo = hi = static_cast<double>(t[0]);
            for (std::size_t i = 0; i < t.size(); ++i) {
              const double v = static_cast<double>(t[i]);
              lo = std::min(lo, v);
              hi = std::max(hi, v);
              mean += v;
            }
            mean /= static_cast<double>(t.size());
          }
          pj = {{"shape", t.shape().str()},
                {"epoch", manifest.at("prototype").at("epoch")},
                {"min", lo},
                {"mean", mean},
                {"max", hi}};
        },
        any);
    j["prototype"] = pj;
  }
  return j;
}

}  // namespace tafcal::harness
