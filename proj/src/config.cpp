#include "tafcal/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <set>

namespace tafcal {

namespace {

void require_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                  const std::string& where) {
  if (!obj.is_object())
    fail(ErrorCategory::config, where + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key()))
      fail(ErrorCategory::config, where + ": unknown key \"" + it.key() + "\"");
  }
}

void require_version(const nlohmann::json& j, const std::string& what) {
  if (!j.contains("version"))
    fail(ErrorCategory::config, what + ": missing \"version\" field");
  if (!j.at("version").is_number_integer() || j.at("version").get<int>() != 1)
    fail(ErrorCategory::config, what + ": unsupported version (expected 1)");
}

double get_number(const nlohmann::json& j, const std::string& key, const std::string& where) {
  if (!j.at(key).is_number())
    fail(ErrorCategory::config, where + "." + key + ": expected a number");
  return j.at(key).get<double>();
}

int get_int(const nlohmann::json& j, const std::string& key, const std::string& where) {
  if (!j.at(key).is_number_integer())
    fail(ErrorCategory::config, where + "." + key + ": expected an integer");
  return j.at(key).get<int>();
}

bool get_bool(const nlohmann::json& j, const std::string& key, const std::string& where) {
  if (!j.at(key).is_boolean())
    fail(ErrorCategory::config, where + "." + key + ": expected a boolean");
  return j.at(key).get<bool>();
}

void check_unit_interval(double v, const std::string& where) {
  if (!(v >= 0.0 && v <= 1.0))
    fail(ErrorCategory::config, where + ": " + std::to_string(v) + " outside [0, 1]");
}

Precision env_precision_or(Precision base) {
  const char* env = std::getenv("TFCAL_PRECISION");
  if (!env || !*env) return base;
  return parse_precision(env);
}

}  // namespace

Precision parse_precision(const std::string& s) {
  if (s == "single") return Precision::f32;
  if (s == "double") return Precision::f64;
  fail(ErrorCategory::config, "precision must be \"single\" or \"double\", got \"" + s + "\"");
}

nlohmann::json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::config, what + ": " + e.what());
  }
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    fail(ErrorCategory::config, "override \"" + assignment + "\" is not of the form key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string value_text = assignment.substr(eq + 1);

  nlohmann::json value;
  try {
    value = nlohmann::json::parse(value_text);
  } catch (const nlohmann::json::exception&) {
    value = value_text;  // bare strings are legal override values
  }

  nlohmann::json* cur = &j;
  std::size_t begin = 0;
  for (;;) {
    const std::size_t dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot == std::string::npos ? dot : dot - begin);
    if (key.empty())
      fail(ErrorCategory::config, "override \"" + assignment + "\" has an empty key segment");
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      return;
    }
    if (!cur->contains(key)) (*cur)[key] = nlohmann::json::object();
    cur = &(*cur)[key];
    begin = dot + 1;
  }
}

std::string config_digest(const nlohmann::json& j) {
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char ch : text) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Train config
// ---------------------------------------------------------------------------

nlohmann::json effective_train_config(nlohmann::json in) {
  require_version(in, "train config");
  require_keys(in, {"version", "precision", "seed", "dataset", "target_domain", "epochs",
                    "batch_size", "val_fraction", "optimizer", "model", "style"},
               "train config");

  nlohmann::json eff;
  eff["version"] = 1;
  eff["precision"] = in.value("precision", "single");
  parse_precision(eff["precision"].get<std::string>());  // validate
  if (const char* env = std::getenv("TFCAL_PRECISION"); env && *env) {
    parse_precision(env);
    eff["precision"] = std::string(env);
  }
  if (in.contains("seed") && (!in.at("seed").is_number_integer() || in.at("seed").get<long long>() < 0))
    fail(ErrorCategory::config, "train config.seed: expected a nonnegative integer");
  eff["seed"] = in.value("seed", 0ULL);
  if (!in.contains("dataset") || !in.at("dataset").is_string())
    fail(ErrorCategory::config, "train config: \"dataset\" (path) is required");
  eff["dataset"] = in.at("dataset");
  if (!in.contains("target_domain"))
    fail(ErrorCategory::config, "train config: \"target_domain\" is required");
  eff["target_domain"] = in.at("target_domain").is_string()
                             ? in.at("target_domain").get<std::string>()
                             : std::to_string(in.at("target_domain").get<int>());
  eff["epochs"] = in.contains("epochs") ? get_int(in, "epochs", "train config") : 40;
  eff["batch_size"] = in.contains("batch_size") ? get_int(in, "batch_size", "train config") : 32;
  if (eff["epochs"].get<int>() < 1 || eff["batch_size"].get<int>() < 1)
    fail(ErrorCategory::config, "train config: epochs and batch_size must be >= 1");
  const double vf = in.contains("val_fraction") ? get_number(in, "val_fraction", "train config") : 0.1;
  if (!(vf >= 0.0 && vf < 1.0))
    fail(ErrorCategory::config, "train config.val_fraction: must be in [0, 1)");
  eff["val_fraction"] = vf;

  nlohmann::json opt = in.value("optimizer", nlohmann::json::object());
  require_keys(opt, {"lr_extractor", "lr_head", "weight_decay", "decay_factor",
                     "decay_epoch_fraction"},
               "train config.optimizer");
  nlohmann::json eopt;
  eopt["lr_extractor"] = opt.contains("lr_extractor") ? get_number(opt, "lr_extractor", "optimizer") : 0.05;
  eopt["lr_head"] = opt.contains("lr_head") ? get_number(opt, "lr_head", "optimizer") : 0.05;
  eopt["weight_decay"] = opt.contains("weight_decay") ? get_number(opt, "weight_decay", "optimizer") : 5e-4;
  eopt["decay_factor"] = opt.contains("decay_factor") ? get_number(opt, "decay_factor", "optimizer") : 0.1;
  eopt["decay_epoch_fraction"] =
      opt.contains("decay_epoch_fraction") ? get_number(opt, "decay_epoch_fraction", "optimizer") : 0.8;
  if (eopt["lr_extractor"].get<double>() < 0.0 || eopt["lr_head"].get<double>() < 0.0 ||
      eopt["weight_decay"].get<double>() < 0.0)
    fail(ErrorCategory::config, "optimizer: learning rates and weight_decay must be >= 0");
  const double df = eopt["decay_factor"].get<double>();
  const double def = eopt["decay_epoch_fraction"].get<double>();
  if (!(df > 0.0 && df <= 1.0) || !(def > 0.0 && def <= 1.0))
    fail(ErrorCategory::config,
         "optimizer: decay_factor and decay_epoch_fraction must be in (0, 1]");
  eff["optimizer"] = eopt;

  nlohmann::json model = in.value("model", nlohmann::json::object());
  require_keys(model, {"blocks", "insertion_after_block"}, "train config.model");
  nlohmann::json emodel;
  emodel["blocks"] = model.value("blocks", nlohmann::json::array({16, 32, 32, 64}));
  if (!emodel["blocks"].is_array() || emodel["blocks"].empty())
    fail(ErrorCategory::config, "model.blocks: expected a nonempty array of channel counts");
  for (const auto& b : emodel["blocks"])
    if (!b.is_number_integer() || b.get<int>() < 1)
      fail(ErrorCategory::config, "model.blocks: entries must be positive integers");
  emodel["insertion_after_block"] =
      model.contains("insertion_after_block") ? get_int(model, "insertion_after_block", "model") : 2;
  const int ins = emodel["insertion_after_block"].get<int>();
  if (ins < 1 || ins > static_cast<int>(emodel["blocks"].size()))
    fail(ErrorCategory::config, "model.insertion_after_block: outside [1, block count]");
  eff["model"] = emodel;

  nlohmann::json style = in.value("style", nlohmann::json::object());
  require_keys(style, {"enabled", "eta", "tau", "p_cal", "stage_fraction", "aaf", "bank_pre_aaf",
                       "exclusive_aaf_cal", "random_prototype"},
               "train config.style");
  nlohmann::json estyle;
  estyle["enabled"] = style.contains("enabled") ? get_bool(style, "enabled", "style") : true;
  estyle["eta"] = style.contains("eta") ? get_number(style, "eta", "style") : 0.5;
  estyle["tau"] = style.contains("tau") ? get_number(style, "tau", "style") : 0.5;
  estyle["p_cal"] = style.contains("p_cal") ? get_number(style, "p_cal", "style") : 0.5;
  estyle["stage_fraction"] =
      style.contains("stage_fraction") ? get_number(style, "stage_fraction", "style") : 0.7;
  check_unit_interval(estyle["eta"].get<double>(), "style.eta");
  check_unit_interval(estyle["tau"].get<double>(), "style.tau");
  check_unit_interval(estyle["p_cal"].get<double>(), "style.p_cal");
  const double sf = estyle["stage_fraction"].get<double>();
  if (!(sf > 0.0 && sf <= 1.0))
    fail(ErrorCategory::config, "style.stage_fraction: must be in (0, 1]");

  nlohmann::json aaf = style.value("aaf", nlohmann::json::object());
  require_keys(aaf, {"alpha", "p_aaf", "mode"}, "train config.style.aaf");
  nlohmann::json eaaf;
  eaaf["alpha"] = aaf.contains("alpha") ? get_number(aaf, "alpha", "style.aaf") : 0.2;
  eaaf["p_aaf"] = aaf.contains("p_aaf") ? get_number(aaf, "p_aaf", "style.aaf") : 0.5;
  eaaf["mode"] = aaf.value("mode", "mix");
  if (eaaf["alpha"].get<double>() <= 0.0)
    fail(ErrorCategory::config, "style.aaf.alpha: must be > 0");
  check_unit_interval(eaaf["p_aaf"].get<double>(), "style.aaf.p_aaf");
  const std::string mode = eaaf["mode"].get<std::string>();
  if (mode != "mix" && mode != "swap")
    fail(ErrorCategory::config, "style.aaf.mode: must be \"mix\" or \"swap\"");
  estyle["aaf"] = eaaf;
  estyle["bank_pre_aaf"] =
      style.contains("bank_pre_aaf") ? get_bool(style, "bank_pre_aaf", "style") : true;
  estyle["exclusive_aaf_cal"] =
      style.contains("exclusive_aaf_cal") ? get_bool(style, "exclusive_aaf_cal", "style") : false;
  estyle["random_prototype"] =
      style.contains("random_prototype") ? get_bool(style, "random_prototype", "style") : false;
  eff["style"] = estyle;

  return eff;
}

TrainConfig train_config_from_effective(const nlohmann::json& eff) {
  TrainConfig cfg;
  cfg.precision = parse_precision(eff.at("precision").get<std::string>());
  cfg.seed = eff.at("seed").get<std::uint64_t>();
  cfg.dataset_dir = eff.at("dataset").get<std::string>();
  cfg.target_domain = eff.at("target_domain").get<std::string>();
  cfg.epochs = eff.at("epochs").get<int>();
  cfg.batch_size = eff.at("batch_size").get<int>();
  cfg.val_fraction = eff.at("val_fraction").get<double>();
  const auto& opt = eff.at("optimizer");
  cfg.sgd.lr_extractor = opt.at("lr_extractor").get<double>();
  cfg.sgd.lr_head = opt.at("lr_head").get<double>();
  cfg.sgd.weight_decay = opt.at("weight_decay").get<double>();
  cfg.sgd.decay_factor = opt.at("decay_factor").get<double>();
  cfg.sgd.decay_epoch_fraction = opt.at("decay_epoch_fraction").get<double>();
  const auto& model = eff.at("model");
  cfg.block_channels = model.at("blocks").get<std::vector<int>>();
  cfg.insertion_after_block = model.at("insertion_after_block").get<int>();
  const auto& style = eff.at("style");
  cfg.style_enabled = style.at("enabled").get<bool>();
  cfg.cal.eta = style.at("eta").get<double>();
  cfg.cal.tau = style.at("tau").get<double>();
  cfg.cal.p_cal = style.at("p_cal").get<double>();
  cfg.cal.stage_fraction = style.at("stage_fraction").get<double>();
  cfg.cal.insertion_after_block = cfg.insertion_after_block;
  const auto& aaf = style.at("aaf");
  cfg.aaf.alpha = aaf.at("alpha").get<double>();
  cfg.aaf.p_aaf = aaf.at("p_aaf").get<double>();
  cfg.aaf.mode = aaf.at("mode").get<std::string>() == "swap" ? AafConfig::Mode::swap
                                                             : AafConfig::Mode::mix;
  cfg.bank_pre_aaf = style.at("bank_pre_aaf").get<bool>();
  cfg.exclusive_aaf_cal = style.at("exclusive_aaf_cal").get<bool>();
  cfg.random_prototype = style.at("random_prototype").get<bool>();
  cfg.echo = eff;
  return cfg;
}

// ---------------------------------------------------------------------------
// Synthetic dataset config
// ---------------------------------------------------------------------------

namespace {

nlohmann::json style_to_json(const DomainStyle& st) {
  return {{"gain", st.gain},
          {"lowfreq_h", st.lowfreq_h},
          {"lowfreq_h_phase", st.lowfreq_h_phase},
          {"lowfreq_w", st.lowfreq_w},
          {"lowfreq_w_phase", st.lowfreq_w_phase},
          {"offset", st.offset},
          {"texture_freq", st.texture_freq},
          {"noise_std", st.noise_std},
          {"shift_h", st.shift_h},
          {"shift_w", st.shift_w}};
}

DomainStyle style_from_json(const nlohmann::json& j, const std::string& where) {
  require_keys(j, {"gain", "lowfreq_h", "lowfreq_h_phase", "lowfreq_w", "lowfreq_w_phase",
                   "offset", "texture_freq", "noise_std", "shift_h", "shift_w"},
               where);
  DomainStyle st;
  st.gain = j.value("gain", 1.0);
  st.lowfreq_h = j.value("lowfreq_h", 0.0);
  st.lowfreq_h_phase = j.value("lowfreq_h_phase", 0.0);
  st.lowfreq_w = j.value("lowfreq_w", 0.0);
  st.lowfreq_w_phase = j.value("lowfreq_w_phase", 0.0);
  st.offset = j.value("offset", 0.0);
  st.texture_freq = j.value("texture_freq", 0.0);
  st.noise_std = j.value("noise_std", 0.0);
  st.shift_h = j.value("shift_h", 0);
  st.shift_w = j.value("shift_w", 0);
  return st;
}

}  // namespace

nlohmann::json effective_synthetic_config(nlohmann::json in) {
  require_version(in, "synthetic config");
  require_keys(in, {"version", "preset", "classes", "domains", "per_cell", "channels", "height",
                    "width", "mask_value", "texture_depth", "jitter", "clamp", "seed",
                    "precision", "styles"},
               "synthetic config");

  SyntheticSpec base;
  if (in.contains("preset")) {
    const std::string preset = in.at("preset").get<std::string>();
    if (preset == "amplitude")
      base = SyntheticSpec::preset_amplitude();
    else if (preset == "phase-adversarial")
      base = SyntheticSpec::preset_phase_adversarial();
    else
      fail(ErrorCategory::config,
           "synthetic config.preset: unknown preset \"" + preset + "\"");
  } else if (!in.contains("styles")) {
    fail(ErrorCategory::config, "synthetic config: either \"preset\" or \"styles\" is required");
  }

  nlohmann::json eff;
  eff["version"] = 1;
  eff["classes"] = in.contains("classes") ? get_int(in, "classes", "synthetic config") : base.classes;
  eff["domains"] = in.contains("domains") ? get_int(in, "domains", "synthetic config") : base.domains;
  eff["per_cell"] = in.contains("per_cell") ? get_int(in, "per_cell", "synthetic config") : base.per_cell;
  eff["channels"] = in.contains("channels") ? get_int(in, "channels", "synthetic config") : base.channels;
  eff["height"] = in.contains("height") ? get_int(in, "height", "synthetic config") : base.height;
  eff["width"] = in.contains("width") ? get_int(in, "width", "synthetic config") : base.width;
  eff["mask_value"] =
      in.contains("mask_value") ? get_number(in, "mask_value", "synthetic config") : base.mask_value;
  eff["texture_depth"] = in.contains("texture_depth")
                             ? get_number(in, "texture_depth", "synthetic config")
                             : base.texture_depth;
  eff["jitter"] = in.contains("jitter") ? get_int(in, "jitter", "synthetic config") : base.jitter;
  eff["clamp"] = in.contains("clamp") ? get_bool(in, "clamp", "synthetic config") : base.clamp;
  eff["seed"] = in.value("seed", 0ULL);
  eff["precision"] = in.value("precision", "single");
  parse_precision(eff["precision"].get<std::string>());
  if (const char* env = std::getenv("TFCAL_PRECISION"); env && *env) {
    parse_precision(env);
    eff["precision"] = std::string(env);
  }

  nlohmann::json styles = nlohmann::json::array();
  if (in.contains("styles")) {
    if (!in.at("styles").is_array())
      fail(ErrorCategory::config, "synthetic config.styles: expected an array");
    int i = 0;
    for (const auto& sj : in.at("styles"))
      styles.push_back(style_to_json(style_from_json(sj, "synthetic config.styles[" +
                                                             std::to_string(i++) + "]")));
  } else {
    for (const DomainStyle& st : base.styles) styles.push_back(style_to_json(st));
  }
  if (static_cast<int>(styles.size()) != eff["domains"].get<int>())
    fail(ErrorCategory::config, "synthetic config: styles count " +
                                    std::to_string(styles.size()) + " does not match domains " +
                                    std::to_string(eff["domains"].get<int>()));
  eff["styles"] = styles;
  return eff;
}

SyntheticSpec synthetic_spec_from_effective(const nlohmann::json& eff) {
  SyntheticSpec spec;
  spec.classes = eff.at("classes").get<int>();
  spec.domains = eff.at("domains").get<int>();
  spec.per_cell = eff.at("per_cell").get<int>();
  spec.channels = eff.at("channels").get<int>();
  spec.height = eff.at("height").get<int>();
  spec.width = eff.at("width").get<int>();
  spec.mask_value = eff.at("mask_value").get<double>();
  spec.texture_depth = eff.at("texture_depth").get<double>();
  spec.jitter = eff.at("jitter").get<int>();
  spec.clamp = eff.at("clamp").get<bool>();
  spec.seed = eff.at("seed").get<std::uint64_t>();
  spec.precision = parse_precision(eff.at("precision").get<std::string>());
  spec.styles.clear();
  for (const auto& sj : eff.at("styles"))
    spec.styles.push_back(style_from_json(sj, "synthetic config.styles"));
  validate(spec);
  return spec;
}

}  // namespace tafcal
