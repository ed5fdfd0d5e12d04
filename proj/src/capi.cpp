#include "tafcal.h"

#include <cstdlib>
#include <cstring>
#include <string>
#include <variant>
#include <vector>

#include "tafcal/config.hpp"
#include "tafcal/data.hpp"
#include "tafcal/harness.hpp"
#include "tafcal/model.hpp"

using tafcal::DomainDataset;
using tafcal::Error;
using tafcal::ErrorCategory;
using tafcal::Precision;

struct tfc_dataset {
  std::variant<DomainDataset<float>, DomainDataset<double>> ds;
};

struct tfc_checkpoint {
  std::string dir;
  nlohmann::json manifest;
};

struct tfc_report {
  std::string json;
};

namespace {

thread_local std::string g_last_error;

tfc_status status_of(ErrorCategory cat) {
  switch (cat) {
    case ErrorCategory::invalid_argument: return TFC_ERR_INVALID_ARGUMENT;
    case ErrorCategory::config: return TFC_ERR_CONFIG;
    case ErrorCategory::io: return TFC_ERR_IO;
    case ErrorCategory::state: return TFC_ERR_STATE;
    case ErrorCategory::numeric: return TFC_ERR_NUMERIC;
    case ErrorCategory::internal: return TFC_ERR_INTERNAL;
  }
  return TFC_ERR_INTERNAL;
}

template <typename Fn>
tfc_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return TFC_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.category());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return TFC_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return TFC_ERR_INTERNAL;
  }
}

std::vector<std::string> collect(const char* const* strings, size_t n) {
  std::vector<std::string> out;
  for (size_t i = 0; i < n; ++i) out.emplace_back(strings[i] ? strings[i] : "");
  return out;
}

tfc_report* make_report(const nlohmann::json& j) { return new tfc_report{j.dump(2)}; }

void require(bool cond, const char* msg) {
  if (!cond) tafcal::fail(ErrorCategory::invalid_argument, msg);
}

}  // namespace

extern "C" {

const char* tfc_version(void) { return "1.0.0"; }

const char* tfc_status_name(tfc_status status) {
  switch (status) {
    case TFC_OK: return "ok";
    case TFC_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case TFC_ERR_CONFIG: return "config";
    case TFC_ERR_IO: return "io";
    case TFC_ERR_STATE: return "state";
    case TFC_ERR_NUMERIC: return "numeric";
    case TFC_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* tfc_last_error(void) { return g_last_error.c_str(); }

tfc_status tfc_config_render(const char* json_text, const char* const* overrides,
                             size_t n_overrides, const char* kind, char** effective_json_out) {
  return guarded([&] {
    require(json_text && kind && effective_json_out, "tfc_config_render: null argument");
    nlohmann::json j = tafcal::parse_json_text(json_text, "config");
    for (const std::string& o : collect(overrides, n_overrides)) tafcal::apply_override(j, o);
    nlohmann::json eff;
    const std::string k = kind;
    if (k == "train")
      eff = tafcal::effective_train_config(j);
    else if (k == "synthetic")
      eff = tafcal::effective_synthetic_config(j);
    else
      tafcal::fail(ErrorCategory::invalid_argument,
                   "tfc_config_render: kind must be \"train\" or \"synthetic\"");
    const std::string text = eff.dump(2);
    char* out = static_cast<char*>(std::malloc(text.size() + 1));
    if (!out) tafcal::fail(ErrorCategory::internal, "out of memory");
    std::memcpy(out, text.c_str(), text.size() + 1);
    *effective_json_out = out;
  });
}

void tfc_string_free(char* s) { std::free(s); }

tfc_status tfc_dataset_generate(const char* config_json, tfc_dataset** out) {
  return guarded([&] {
    require(config_json && out, "tfc_dataset_generate: null argument");
    const nlohmann::json eff = tafcal::effective_synthetic_config(
        tafcal::parse_json_text(config_json, "synthetic config"));
    const tafcal::SyntheticSpec spec = tafcal::synthetic_spec_from_effective(eff);
    auto* handle = new tfc_dataset;
    if (spec.precision == Precision::f32)
      handle->ds = tafcal::generate<float>(spec);
    else
      handle->ds = tafcal::generate<double>(spec);
    *out = handle;
  });
}

tfc_status tfc_dataset_save(const tfc_dataset* ds, const char* dir, int packed) {
  return guarded([&] {
    require(ds && dir, "tfc_dataset_save: null argument");
    std::visit([&](const auto& d) { tafcal::save_dataset(dir, d, packed != 0); }, ds->ds);
  });
}

tfc_status tfc_dataset_load(const char* dir, tfc_dataset** out) {
  return guarded([&] {
    require(dir && out, "tfc_dataset_load: null argument");
    auto* handle = new tfc_dataset;
    if (tafcal::dataset_precision(dir) == Precision::f32)
      handle->ds = tafcal::load_dataset<float>(dir);
    else
      handle->ds = tafcal::load_dataset<double>(dir);
    *out = handle;
  });
}

size_t tfc_dataset_size(const tfc_dataset* ds) {
  if (!ds) return 0;
  return std::visit([](const auto& d) { return d.samples.size(); }, ds->ds);
}

void tfc_dataset_free(tfc_dataset* ds) { delete ds; }

tfc_status tfc_gen_data(const char* config_json, const char* const* overrides,
                        size_t n_overrides, const char* out_dir, int packed,
                        tfc_report** report_out) {
  return guarded([&] {
    require(config_json && out_dir, "tfc_gen_data: null argument");
    const nlohmann::json j = tafcal::harness::gen_data(
        config_json, collect(overrides, n_overrides), out_dir, packed != 0);
    if (report_out) *report_out = make_report(j);
  });
}

tfc_status tfc_train(const char* config_json, const char* const* overrides, size_t n_overrides,
                     const char* out_dir, tfc_report** report_out) {
  return guarded([&] {
    require(config_json && out_dir, "tfc_train: null argument");
    const nlohmann::json j =
        tafcal::harness::train(config_json, collect(overrides, n_overrides), out_dir);
    if (report_out) *report_out = make_report(j);
  });
}

tfc_status tfc_evaluate(const char* ckpt_dir, const char* dataset_dir, const char* split,
                        int calibrated, double tau, const char* out_dir,
                        tfc_report** report_out) {
  return guarded([&] {
    require(ckpt_dir && split, "tfc_evaluate: null argument");
    const nlohmann::json j =
        tafcal::harness::evaluate(ckpt_dir, dataset_dir ? dataset_dir : "", split,
                                  calibrated != 0, tau, out_dir ? out_dir : "");
    if (report_out) *report_out = make_report(j);
  });
}

tfc_status tfc_ablate(const char* config_json, const char* const* overrides, size_t n_overrides,
                      const char* seeds_csv, int jobs, const char* out_dir,
                      tfc_report** report_out) {
  return guarded([&] {
    require(config_json && out_dir, "tfc_ablate: null argument");
    const nlohmann::json j =
        tafcal::harness::ablate(config_json, collect(overrides, n_overrides),
                                seeds_csv ? seeds_csv : "", jobs, out_dir);
    if (report_out) *report_out = make_report(j);
  });
}

tfc_status tfc_sweep(const char* config_json, const char* const* overrides, size_t n_overrides,
                     const char* axis, const char* seeds_csv, int jobs, const char* out_dir,
                     tfc_report** report_out) {
  return guarded([&] {
    require(config_json && axis && out_dir, "tfc_sweep: null argument");
    const nlohmann::json j =
        tafcal::harness::sweep(config_json, collect(overrides, n_overrides), axis,
                               seeds_csv ? seeds_csv : "", jobs, out_dir);
    if (report_out) *report_out = make_report(j);
  });
}

tfc_status tfc_export_embeddings(const char* ckpt_dir, const char* dataset_dir,
                                 const char* stage, double tau, const char* csv_path,
                                 tfc_report** report_out) {
  return guarded([&] {
    require(ckpt_dir && stage && csv_path, "tfc_export_embeddings: null argument");
    const nlohmann::json j = tafcal::harness::export_embeddings(
        ckpt_dir, dataset_dir ? dataset_dir : "", stage, tau, csv_path);
    if (report_out) *report_out = make_report(j);
  });
}

tfc_status tfc_inspect(const char* ckpt_dir, tfc_report** report_out) {
  return guarded([&] {
    require(ckpt_dir, "tfc_inspect: null argument");
    const nlohmann::json j = tafcal::harness::inspect(ckpt_dir);
    if (report_out) *report_out = make_report(j);
  });
}

tfc_status tfc_checkpoint_open(const char* dir, tfc_checkpoint** out) {
  return guarded([&] {
    require(dir && out, "tfc_checkpoint_open: null argument");
    auto* handle = new tfc_checkpoint;
    handle->dir = dir;
    handle->manifest = tafcal::read_checkpoint_manifest(dir);
    *out = handle;
  });
}

const char* tfc_checkpoint_dir(const tfc_checkpoint* ckpt) {
  return ckpt ? ckpt->dir.c_str() : "";
}

void tfc_checkpoint_free(tfc_checkpoint* ckpt) { delete ckpt; }

const char* tfc_report_json(const tfc_report* report) {
  return report ? report->json.c_str() : "";
}

void tfc_report_free(tfc_report* report) { delete report; }

}  // extern "C"
