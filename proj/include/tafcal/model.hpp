#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tafcal/autodiff.hpp"
#include "tafcal/io.hpp"
#include "tafcal/optim.hpp"
#include "tafcal/rng.hpp"

// Compact convolutional classifier with a configurable style-layer insertion
// point. Blocks are conv -> relu -> avgpool; the head is flatten -> dense.

namespace tafcal {

struct ConvSpec {
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
};

struct BlockSpec {
  ConvSpec conv;
  bool relu = true;
  bool pool = true;
};

struct NetworkSpec {
  int in_channels = 1;
  int in_h = 32;
  int in_w = 32;
  int classes = 4;
  std::vector<BlockSpec> blocks;
  int insertion_after_block = 2;  // 1-based block index

  static NetworkSpec default_spec(int in_c = 1, int in_h = 32, int in_w = 32, int classes = 4) {
    NetworkSpec s;
    s.in_channels = in_c;
    s.in_h = in_h;
    s.in_w = in_w;
    s.classes = classes;
    for (const int ch : {16, 32, 32, 64}) s.blocks.push_back(BlockSpec{ConvSpec{ch}, true, true});
    s.insertion_after_block = 2;
    return s;
  }

  int block_count() const { return static_cast<int>(blocks.size()); }

  // Output shape after block `b` (1-based; b = 0 is the input).
  Shape4 shape_after_block(int b, int batch = 1) const {
    int c = in_channels, h = in_h, w = in_w;
    for (int i = 0; i < b; ++i) {
      const BlockSpec& blk = blocks[static_cast<std::size_t>(i)];
      h = (h + 2 * blk.conv.pad - blk.conv.kernel) / blk.conv.stride + 1;
      w = (w + 2 * blk.conv.pad - blk.conv.kernel) / blk.conv.stride + 1;
      c = blk.conv.out_channels;
      if (blk.pool) {
        h /= 2;
        w /= 2;
      }
    }
    return Shape4{batch, c, h, w};
  }

  int flat_features() const {
    const Shape4 s = shape_after_block(block_count());
    return s.c * s.h * s.w;
  }

  long parameter_count() const {
    long total = 0;
    int cin = in_channels;
    for (const BlockSpec& b : blocks) {
      total += static_cast<long>(b.conv.out_channels) * cin * b.conv.kernel * b.conv.kernel +
               b.conv.out_channels;
      cin = b.conv.out_channels;
    }
    total += static_cast<long>(classes) * flat_features() + classes;
    return total;
  }

  void validate() const {
    if (blocks.empty()) fail(ErrorCategory::invalid_argument, "network: no blocks");
    if (in_channels <= 0 || in_h <= 0 || in_w <= 0 || classes <= 0)
      fail(ErrorCategory::invalid_argument, "network: dims and class count must be positive");
    if (insertion_after_block < 1 || insertion_after_block > block_count())
      fail(ErrorCategory::invalid_argument,
           "network: insertion_after_block " + std::to_string(insertion_after_block) +
               " outside [1, " + std::to_string(block_count()) + "]");
    int h = in_h, w = in_w;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const BlockSpec& b = blocks[i];
      if (b.conv.out_channels <= 0 || b.conv.kernel <= 0 || b.conv.stride <= 0 || b.conv.pad < 0)
        fail(ErrorCategory::invalid_argument,
             "network: bad conv spec in block " + std::to_string(i + 1));
      h = (h + 2 * b.conv.pad - b.conv.kernel) / b.conv.stride + 1;
      w = (w + 2 * b.conv.pad - b.conv.kernel) / b.conv.stride + 1;
      if (h <= 0 || w <= 0)
        fail(ErrorCategory::invalid_argument,
             "network: block " + std::to_string(i + 1) + " collapses the spatial dims");
      if (b.pool) {
        if (h % 2 != 0 || w % 2 != 0)
          fail(ErrorCategory::invalid_argument, "network: block " + std::to_string(i + 1) +
                                                    " pools an odd spatial extent (" +
                                                    std::to_string(h) + "x" + std::to_string(w) +
                                                    ")");
        h /= 2;
        w /= 2;
      }
    }
  }
};

inline nlohmann::json to_json(const NetworkSpec& s) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const BlockSpec& b : s.blocks)
    blocks.push_back({{"out_channels", b.conv.out_channels},
                      {"kernel", b.conv.kernel},
                      {"stride", b.conv.stride},
                      {"pad", b.conv.pad},
                      {"relu", b.relu},
                      {"pool", b.pool}});
  return {{"in_channels", s.in_channels}, {"in_h", s.in_h},         {"in_w", s.in_w},
          {"classes", s.classes},         {"blocks", blocks},       {"insertion_after_block", s.insertion_after_block}};
}

inline NetworkSpec network_spec_from_json(const nlohmann::json& j) {
  NetworkSpec s;
  s.in_channels = j.at("in_channels").get<int>();
  s.in_h = j.at("in_h").get<int>();
  s.in_w = j.at("in_w").get<int>();
  s.classes = j.at("classes").get<int>();
  s.insertion_after_block = j.at("insertion_after_block").get<int>();
  for (const auto& b : j.at("blocks")) {
    BlockSpec blk;
    blk.conv.out_channels = b.at("out_channels").get<int>();
    blk.conv.kernel = b.at("kernel").get<int>();
    blk.conv.stride = b.at("stride").get<int>();
    blk.conv.pad = b.at("pad").get<int>();
    blk.relu = b.at("relu").get<bool>();
    blk.pool = b.at("pool").get<bool>();
    s.blocks.push_back(blk);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <typename T>
class Model {
 public:
  using StyleHook = std::function<Var<T>(const Var<T>&)>;

  struct ForwardCapture {
    std::optional<Tensor4<T>> pre_style;
    std::optional<Tensor4<T>> post_style;
  };

  Model(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    spec_.validate();
    // fan-in scaled normal (std = sqrt(2 / fan_in)) for weights, zero biases
    int cin = spec_.in_channels;
    for (std::size_t i = 0; i < spec_.blocks.size(); ++i) {
      const ConvSpec& cs = spec_.blocks[i].conv;
      const std::string base = "block" + std::to_string(i + 1) + ".conv";
      Tensor4<T> w(cs.out_channels, cin, cs.kernel, cs.kernel);
      Rng rng = derive_rng(seed, stream_id("param", i));
      const double sd = std::sqrt(2.0 / (static_cast<double>(cin) * cs.kernel * cs.kernel));
      for (std::size_t k = 0; k < w.size(); ++k) w[k] = static_cast<T>(sd * rng.normal());
      params_.push_back({base + ".weight", ParamGroup::extractor, Var<T>::parameter(std::move(w))});
      params_.push_back({base + ".bias", ParamGroup::extractor,
                         Var<T>::parameter(Tensor4<T>(cs.out_channels, 1, 1, 1))});
      cin = cs.out_channels;
    }
    const int flat = spec_.flat_features();
    Tensor4<T> w(spec_.classes, flat, 1, 1);
    Rng rng = derive_rng(seed, stream_id("param", spec_.blocks.size()));
    const double sd = std::sqrt(2.0 / static_cast<double>(flat));
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = static_cast<T>(sd * rng.normal());
    params_.push_back({"head.weight", ParamGroup::head, Var<T>::parameter(std::move(w))});
    params_.push_back(
        {"head.bias", ParamGroup::head, Var<T>::parameter(Tensor4<T>(spec_.classes, 1, 1, 1))});
  }

  const NetworkSpec& spec() const { return spec_; }
  std::vector<ParamRef<T>>& params() { return params_; }
  const std::vector<ParamRef<T>>& params() const { return params_; }

  void zero_grad() { zero_grads(params_); }

  // Runs the blocks, applying `hook` to the features after the insertion
  // block when given. Without a hook this is the plain ERM network.
  Var<T> forward(const Tensor4<T>& x, const StyleHook& hook = {},
                 ForwardCapture* capture = nullptr) const {
    if (x.c() != spec_.in_channels || x.h() != spec_.in_h || x.w() != spec_.in_w)
      fail(ErrorCategory::invalid_argument,
           "model: input " + x.shape().str() + " does not match spec " +
               Shape4{x.n(), spec_.in_channels, spec_.in_h, spec_.in_w}.str());
    Var<T> cur = Var<T>::constant(x);
    for (std::size_t i = 0; i < spec_.blocks.size(); ++i) {
      const BlockSpec& b = spec_.blocks[i];
      cur = conv2d(cur, params_[2 * i].var, params_[2 * i + 1].var, b.conv.stride, b.conv.pad);
      if (b.relu) cur = relu(cur);
      if (b.pool) cur = avgpool2(cur);
      if (static_cast<int>(i + 1) == spec_.insertion_after_block) {
        if (capture) capture->pre_style = cur.value();
        if (hook) cur = hook(cur);
        if (capture) capture->post_style = cur.value();
      }
    }
    cur = flatten(cur);
    const std::size_t head = 2 * spec_.blocks.size();
    return dense(cur, params_[head].var, params_[head + 1].var);
  }

 private:
  NetworkSpec spec_;
  std::vector<ParamRef<T>> params_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

template <typename T>
struct Checkpoint {
  Model<T> model;
  std::optional<Tensor4<T>> prototype;
  int prototype_epoch = -1;
  nlohmann::json manifest;
};

inline std::string param_file_name(const std::string& param_name) {
  std::string out = param_name;
  for (char& ch : out)
    if (ch == '.') ch = '_';
  return out + ".tfc";
}

// Writes `dir/manifest.json`, one TFC1 file per parameter, and the prototype
// (when present). `extra` is merged into the manifest: the trainer records
// the dataset path, standardization constants and the config echo there.
template <typename T>
void save_checkpoint(const std::string& dir, const Model<T>& model,
                     const std::optional<Tensor4<T>>& prototype, int prototype_epoch,
                     const nlohmann::json& extra) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCategory::io, "cannot create checkpoint directory " + dir);

  nlohmann::json manifest = extra;
  manifest["version"] = 1;
  manifest["precision"] = to_string(precision_of<T>());
  manifest["network"] = to_json(model.spec());
  nlohmann::json plist = nlohmann::json::array();
  for (const auto& p : model.params()) {
    const std::string file = param_file_name(p.name);
    write_tensor(dir + "/" + file, p.var.value());
    plist.push_back({{"name", p.name},
                     {"file", file},
                     {"group", p.group == ParamGroup::extractor ? "extractor" : "head"}});
  }
  manifest["params"] = plist;
  if (prototype) {
    write_tensor(dir + "/prototype.tfc", *prototype);
    manifest["prototype"] = {{"file", "prototype.tfc"}, {"epoch", prototype_epoch}};
  } else {
    manifest["prototype"] = nullptr;
  }
  std::ofstream os(dir + "/manifest.json");
  if (!os) fail(ErrorCategory::io, "cannot write " + dir + "/manifest.json");
  os << manifest.dump(2) << "\n";
}

inline nlohmann::json read_checkpoint_manifest(const std::string& dir) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) fail(ErrorCategory::io, "cannot open checkpoint manifest " + dir + "/manifest.json");
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::io, dir + "/manifest.json: " + e.what());
  }
  return manifest;
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& dir) {
  nlohmann::json manifest = read_checkpoint_manifest(dir);
  NetworkSpec spec = network_spec_from_json(manifest.at("network"));
  const std::uint64_t seed = manifest.value("seed", 0ULL);
  Model<T> model(spec, seed);
  for (auto& p : model.params()) {
    const std::string file = dir + "/" + param_file_name(p.name);
    Tensor4<T> stored = read_tensor<T>(file);
    if (!stored.same_shape(p.var.value()))
      fail(ErrorCategory::io, file + ": stored shape " + stored.shape().str() +
                                  " does not match parameter " + p.var.value().shape().str());
    p.var.mutable_value() = std::move(stored);
  }
  Checkpoint<T> ckpt{std::move(model), std::nullopt, -1, manifest};
  if (!manifest.at("prototype").is_null()) {
    const std::string file = manifest.at("prototype").at("file").get<std::string>();
    ckpt.prototype = read_tensor<T>(dir + "/" + file);
    ckpt.prototype_epoch = manifest.at("prototype").at("epoch").get<int>();
  }
  return ckpt;
}

}  // namespace tafcal
