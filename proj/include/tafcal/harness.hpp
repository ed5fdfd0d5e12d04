#pragma once

#include <string>
#include <vector>

#include <json.hpp>

// Command-level drivers behind the C API and the CLI: parse/validate config
// text, dispatch on precision, run the operation, write every artifact under
// the output directory, and return a summary document.

namespace tafcal::harness {

nlohmann::json gen_data(const std::string& config_text, const std::vector<std::string>& overrides,
                        const std::string& out_dir, bool packed);

nlohmann::json train(const std::string& config_text, const std::vector<std::string>& overrides,
                     const std::string& out_dir);

nlohmann::json evaluate(const std::string& ckpt_dir, const std::string& dataset_dir,
                        const std::string& split, bool calibrated, double tau,
                        const std::string& out_dir);

nlohmann::json ablate(const std::string& config_text, const std::vector<std::string>& overrides,
                      const std::string& seeds_csv, int jobs, const std::string& out_dir);

nlohmann::json sweep(const std::string& config_text, const std::vector<std::string>& overrides,
                     const std::string& axis, const std::string& seeds_csv, int jobs,
                     const std::string& out_dir);

nlohmann::json export_embeddings(const std::string& ckpt_dir, const std::string& dataset_dir,
                                 const std::string& stage, double tau,
                                 const std::string& csv_path);

nlohmann::json inspect(const std::string& ckpt_dir);

}  // namespace tafcal::harness
