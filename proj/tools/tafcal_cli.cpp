// Command-line front end. Links only the shared-library C API (tafcal.h);
// all behavior lives behind it.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tafcal.h"

namespace {

constexpr const char* kExitCodeDoc =
    "Exit codes:\n"
    "  0  success\n"
    "  2  usage error (unknown command or flag)\n"
    "  3  invalid argument\n"
    "  4  configuration error (malformed config, unknown keys)\n"
    "  5  io error (missing or malformed files)\n"
    "  6  state error (e.g. calibrated eval without a prototype)\n"
    "  7  numeric error (divergence, integrity checks)\n"
    "  8  internal error\n";

int exit_code(tfc_status st) { return st == TFC_OK ? 0 : static_cast<int>(st) + 2; }

int report_failure(tfc_status st) {
  std::cerr << "error: " << tfc_status_name(st) << ": " << tfc_last_error() << std::endl;
  return exit_code(st);
}

bool read_file(const std::string& path, std::string* out) {
  std::ifstream is(path);
  if (!is) return false;
  std::ostringstream ss;
  ss << is.rdbuf();
  *out = ss.str();
  return true;
}

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
  std::vector<const char*> out;
  for (const std::string& s : v) out.push_back(s.c_str());
  return out;
}

int finish(tfc_status st, tfc_report* report) {
  if (st != TFC_OK) return report_failure(st);
  if (report) {
    std::cout << tfc_report_json(report) << std::endl;
    tfc_report_free(report);
  }
  return 0;
}

struct ConfigArgs {
  std::string config_file;
  std::string preset;
  std::vector<std::string> overrides;

  // Returns the config text: file content, or a minimal preset document.
  bool resolve(std::string* text, int* rc) const {
    if (!config_file.empty()) {
      if (!read_file(config_file, text)) {
        std::cerr << "error: io: cannot read config file " << config_file << std::endl;
        *rc = exit_code(TFC_ERR_IO);
        return false;
      }
      return true;
    }
    *text = std::string("{\"version\":1,\"preset\":\"") + preset + "\"}";
    return true;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TAF-Cal experiment toolkit: Fourier feature style calibration at desk scale"};
  app.footer(kExitCodeDoc);
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("tafcal ") + tfc_version());

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-domain dataset");
  ConfigArgs gen_cfg;
  std::string gen_out;
  bool gen_per_sample = false;
  auto* gen_cfg_opt = gen->add_option("--config", gen_cfg.config_file, "Synthetic config JSON file");
  gen->add_option("--preset", gen_cfg.preset, "Built-in config: amplitude | phase-adversarial")
      ->excludes(gen_cfg_opt);
  gen->add_option("--out", gen_out, "Output dataset directory")->required();
  gen->add_option("--set", gen_cfg.overrides, "Config override key=value (repeatable)");
  gen->add_flag("--per-sample", gen_per_sample, "One tensor file per sample instead of per domain");
  gen->callback([&]() {
    if (gen_cfg.config_file.empty() && gen_cfg.preset.empty())
      throw CLI::RequiredError("--config or --preset");
  });

  // train
  auto* train = app.add_subcommand("train", "Train a model per a train config");
  ConfigArgs train_cfg;
  std::string train_out;
  train->add_option("--config", train_cfg.config_file, "Train config JSON file")->required();
  train->add_option("--out", train_out, "Output run directory (checkpoint + report.json)")
      ->required();
  train->add_option("--set", train_cfg.overrides, "Config override key=value (repeatable)");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_split = "target", eval_out;
  bool eval_calibrated = false;
  double eval_tau = 0.5;
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint directory")->required();
  eval->add_option("--data", eval_data, "Dataset directory (default: the one in the checkpoint)");
  eval->add_option("--split", eval_split, "target | train | val | all (default target)");
  eval->add_flag("--calibrated", eval_calibrated, "Apply test-time calibration");
  eval->add_option("--tau", eval_tau, "Calibration strength (default 0.5)");
  eval->add_option("--out", eval_out, "Directory for eval.json (default: checkpoint dir)");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Run the component ablation grid");
  ConfigArgs ablate_cfg;
  std::string ablate_out, ablate_seeds;
  int ablate_jobs = 2;
  ablate->add_option("--config", ablate_cfg.config_file, "Base train config JSON file")->required();
  ablate->add_option("--out", ablate_out, "Output directory")->required();
  ablate->add_option("--seeds", ablate_seeds, "Comma-separated seeds (default 0,1,2)");
  ablate->add_option("--jobs", ablate_jobs, "Parallel runs (default 2)");
  ablate->add_option("--set", ablate_cfg.overrides, "Config override key=value (repeatable)");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Run a sensitivity sweep");
  ConfigArgs sweep_cfg;
  std::string sweep_out, sweep_seeds, sweep_axis;
  int sweep_jobs = 2;
  sweep->add_option("--config", sweep_cfg.config_file, "Base train config JSON file")->required();
  sweep->add_option("--axis", sweep_axis, "strength | layer")->required();
  sweep->add_option("--out", sweep_out, "Output directory")->required();
  sweep->add_option("--seeds", sweep_seeds, "Comma-separated seeds (default 0,1,2)");
  sweep->add_option("--jobs", sweep_jobs, "Parallel runs (default 2)");
  sweep->add_option("--set", sweep_cfg.overrides, "Config override key=value (repeatable)");

  // export
  auto* exp = app.add_subcommand("export", "Export insertion-layer embeddings to CSV");
  std::string exp_ckpt, exp_data, exp_stage = "post", exp_out;
  double exp_tau = 0.5;
  exp->add_option("--ckpt", exp_ckpt, "Checkpoint directory")->required();
  exp->add_option("--data", exp_data, "Dataset directory (default: the one in the checkpoint)");
  exp->add_option("--stage", exp_stage, "pre | post (default post)");
  exp->add_option("--tau", exp_tau, "Calibration strength for post-style export (default 0.5)");
  exp->add_option("--out", exp_out, "Output CSV path")->required();

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Print checkpoint and prototype details");
  std::string inspect_ckpt;
  inspect->add_option("--ckpt", inspect_ckpt, "Checkpoint directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  tfc_report* report = nullptr;
  int rc = 0;
  std::string text;

  if (gen->parsed()) {
    if (!gen_cfg.resolve(&text, &rc)) return rc;
    const auto ov = c_strings(gen_cfg.overrides);
    return finish(tfc_gen_data(text.c_str(), ov.data(), ov.size(), gen_out.c_str(),
                               gen_per_sample ? 0 : 1, &report),
                  report);
  }
  if (train->parsed()) {
    if (!train_cfg.resolve(&text, &rc)) return rc;
    const auto ov = c_strings(train_cfg.overrides);
    return finish(tfc_train(text.c_str(), ov.data(), ov.size(), train_out.c_str(), &report),
                  report);
  }
  if (eval->parsed()) {
    return finish(tfc_evaluate(eval_ckpt.c_str(), eval_data.empty() ? nullptr : eval_data.c_str(),
                               eval_split.c_str(), eval_calibrated ? 1 : 0, eval_tau,
                               eval_out.empty() ? nullptr : eval_out.c_str(), &report),
                  report);
  }
  if (ablate->parsed()) {
    if (!ablate_cfg.resolve(&text, &rc)) return rc;
    const auto ov = c_strings(ablate_cfg.overrides);
    return finish(tfc_ablate(text.c_str(), ov.data(), ov.size(),
                             ablate_seeds.empty() ? nullptr : ablate_seeds.c_str(), ablate_jobs,
                             ablate_out.c_str(), &report),
                  report);
  }
  if (sweep->parsed()) {
    if (!sweep_cfg.resolve(&text, &rc)) return rc;
    const auto ov = c_strings(sweep_cfg.overrides);
    return finish(tfc_sweep(text.c_str(), ov.data(), ov.size(), sweep_axis.c_str(),
                            sweep_seeds.empty() ? nullptr : sweep_seeds.c_str(), sweep_jobs,
                            sweep_out.c_str(), &report),
                  report);
  }
  if (exp->parsed()) {
    return finish(tfc_export_embeddings(exp_ckpt.c_str(),
                                        exp_data.empty() ? nullptr : exp_data.c_str(),
                                        exp_stage.c_str(), exp_tau, exp_out.c_str(), &report),
                  report);
  }
  if (inspect->parsed()) {
    return finish(tfc_inspect(inspect_ckpt.c_str(), &report), report);
  }
  return 2;
}
