#include "fsnn/convert.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsnn/error.h"
#include "fsnn/io_util.h"

namespace fsnn {

namespace {

// An all-negative layer never fires, but its scale must still be a usable
// positive number so the derived thresholds stay finite.
constexpr double kMinAlpha = 1e-6;

bool uses_relu(const LayerSpec& layer) {
  return layer.activation == ActivationKind::kRelu;
}

}  // namespace

std::vector<double> calibrate_alpha(const NetworkSpec& net,
                                    const std::vector<ActivationLayerStats>& stats,
                                    const AlphaPolicy& policy) {
  std::vector<double> alpha(net.layers.size(),
                            std::numeric_limits<double>::quiet_NaN());
  if (policy.kind == AlphaPolicy::Kind::kGlobalFixed &&
      !(policy.value > 0.0 && std::isfinite(policy.value))) {
    throw ValidationError("fixed alpha must be a positive finite number");
  }
  if (policy.kind == AlphaPolicy::Kind::kPerLayerMax &&
      !(policy.safety > 0.0 && std::isfinite(policy.safety))) {
    throw ValidationError("alpha safety factor must be a positive finite number");
  }
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    if (!uses_relu(net.layers[li])) continue;
    if (policy.kind == AlphaPolicy::Kind::kGlobalFixed) {
      alpha[li] = policy.value;
      continue;
    }
    const ActivationLayerStats* st = nullptr;
    for (const ActivationLayerStats& s : stats) {
      if (s.layer == static_cast<int>(li)) {
        st = &s;
        break;
      }
    }
    if (st == nullptr) {
      throw ValidationError("no pre-activation statistics for layer " +
                            std::to_string(li) +
                            "; run a calibration batch through the network first");
    }
    alpha[li] = policy.safety * std::max(st->max, kMinAlpha);
  }
  return alpha;
}

SnnSpec convert(const NetworkSpec& net,
                const std::map<std::string, FsParams>& fs_table,
                const std::vector<double>& layer_alpha) {
  infer_shapes(net);
  if (layer_alpha.size() != net.layers.size()) {
    throw ValidationError("layer_alpha has " + std::to_string(layer_alpha.size()) +
                          " entries for " + std::to_string(net.layers.size()) +
                          " layers");
  }

  SnnSpec snn;
  snn.net = net;
  snn.layer_alpha = layer_alpha;

  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const LayerSpec& layer = net.layers[li];
    if (layer.kind == LayerKind::kBatchNorm) {
      throw ValidationError("layer " + std::to_string(li) +
                            ": batchnorm layers must be folded before conversion");
    }
    if (layer.activation == ActivationKind::kIdentity) continue;
    const std::string name = activation_name(layer.activation);
    auto it = fs_table.find(name);
    if (it == fs_table.end()) {
      throw ValidationError("no FS parameters for activation: " + name);
    }
    if (uses_relu(layer) &&
        !(layer_alpha[li] > 0.0 && std::isfinite(layer_alpha[li]))) {
      throw ValidationError("layer " + std::to_string(li) +
                            ": relu layers need a positive finite alpha, got " +
                            std::to_string(layer_alpha[li]));
    }
    if (snn.fs_table.count(name) == 0) {
      const FsParams& params = it->second;
      validate_params(params);
      if (params.activation != layer.activation) {
        throw ValidationError("fs_table entry \"" + name +
                              "\" is tagged for activation " +
                              activation_name(params.activation));
      }
      snn.fs_table[name] = params;
      snn.k_by_kind[name] = params.k;
    }
  }
  return snn;
}

NetworkSpec collapse_linear(const NetworkSpec& net, CollapseReport* report) {
  CollapseReport local;
  CollapseReport& rep = report ? *report : local;
  rep.fused = 0;
  rep.skipped.clear();

  NetworkSpec out;
  out.input_shape = net.input_shape;
  out.class_count = net.class_count;
  out.layers = net.layers;
  // Original index of each surviving layer; a fused pair keeps the consumer's.
  std::vector<int> origin(out.layers.size());
  for (std::size_t i = 0; i < origin.size(); ++i) origin[i] = static_cast<int>(i);

  bool changed = true;
  while (changed) {
    changed = false;
    std::set<int> referenced;
    for (const LayerSpec& layer : out.layers) {
      if (layer.kind == LayerKind::kResidualAdd && layer.source >= 0) {
        referenced.insert(layer.source);
      }
    }
    for (std::size_t i = 0; i + 1 < out.layers.size(); ++i) {
      const LayerSpec& a = out.layers[i];
      const LayerSpec& b = out.layers[i + 1];
      if (a.kind != LayerKind::kDense || b.kind != LayerKind::kDense) continue;
      if (a.activation != ActivationKind::kIdentity) continue;
      if (referenced.count(static_cast<int>(i))) continue;  // output is tapped

      const std::int64_t mid = a.weight.shape[0];
      const std::int64_t in = a.weight.shape[1];
      const std::int64_t rows = b.weight.shape[0];
      LayerSpec fused;
      fused.kind = LayerKind::kDense;
      fused.activation = b.activation;
      fused.weight = Tensor({rows, in});
      fused.bias = Tensor({rows});
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* wb = b.weight.data.data() + r * mid;
        double bias = b.bias.data[static_cast<std::size_t>(r)];
        for (std::int64_t m = 0; m < mid; ++m) {
          const double* wa = a.weight.data.data() + m * in;
          const double f = wb[m];
          if (f == 0.0) continue;
          for (std::int64_t c = 0; c < in; ++c) {
            fused.weight.data[static_cast<std::size_t>(r * in + c)] += f * wa[c];
          }
          bias += f * a.bias.data[static_cast<std::size_t>(m)];
        }
        fused.bias.data[static_cast<std::size_t>(r)] = bias;
      }

      out.layers[i + 1] = std::move(fused);
      out.layers.erase(out.layers.begin() + static_cast<std::ptrdiff_t>(i));
      origin.erase(origin.begin() + static_cast<std::ptrdiff_t>(i));
      for (LayerSpec& layer : out.layers) {
        if (layer.kind == LayerKind::kResidualAdd &&
            layer.source > static_cast<int>(i)) {
          --layer.source;
        }
      }
      ++rep.fused;
      changed = true;
      break;  // rescan with fresh residual references
    }
  }

  // Linear dense layers that could not be fused (a final logits layer is the
  // intended output and does not count).
  std::set<int> referenced;
  for (const LayerSpec& layer : out.layers) {
    if (layer.kind == LayerKind::kResidualAdd && layer.source >= 0) {
      referenced.insert(layer.source);
    }
  }
  for (std::size_t i = 0; i + 1 < out.layers.size(); ++i) {
    const LayerSpec& layer = out.layers[i];
    if (layer.kind == LayerKind::kDense &&
        layer.activation == ActivationKind::kIdentity &&
        (out.layers[i + 1].kind != LayerKind::kDense ||
         referenced.count(static_cast<int>(i)))) {
      rep.skipped.push_back(origin[i]);
    }
  }

  infer_shapes(out);
  return out;
}

FsParams effective_params(const SnnSpec& snn, int layer) {
  if (layer < 0 || layer >= static_cast<int>(snn.net.layers.size())) {
    throw ValidationError("layer index " + std::to_string(layer) +
                          " out of range");
  }
  const LayerSpec& spec = snn.net.layers[static_cast<std::size_t>(layer)];
  if (spec.activation == ActivationKind::kIdentity) {
    throw ValidationError("layer " + std::to_string(layer) +
                          " has no activation to emulate");
  }
  const std::string name = activation_name(spec.activation);
  auto it = snn.fs_table.find(name);
  if (it == snn.fs_table.end()) {
    throw ValidationError("no FS parameters for activation: " + name);
  }
  if (spec.activation == ActivationKind::kRelu) {
    return scaled_params(it->second,
                         snn.layer_alpha[static_cast<std::size_t>(layer)]);
  }
  return it->second;
}

void save_snn(const SnnSpec& snn, const std::string& dir) {
  namespace fs = std::filesystem;
  save_network(snn.net, dir);
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  nlohmann::json j = nlohmann::json::parse(read_file_text(manifest_path));
  j["format"] = "fsnn-snn";

  nlohmann::json table = nlohmann::json::object();
  for (const auto& [name, params] : snn.fs_table) {
    table[name] = nlohmann::json::parse(fs_params_to_json_text(params));
  }
  j["fs_table"] = table;

  nlohmann::json alpha = nlohmann::json::array();
  for (double a : snn.layer_alpha) {
    if (std::isfinite(a)) {
      alpha.push_back(a);
    } else {
      alpha.push_back(nullptr);
    }
  }
  j["alpha"] = alpha;
  j["k_by_kind"] = snn.k_by_kind;

  atomic_write_text(manifest_path, j.dump(2) + "\n");
}

SnnSpec load_snn(const std::string& dir) {
  namespace fs = std::filesystem;
  SnnSpec snn;
  snn.net = load_network(dir);

  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  nlohmann::json j = nlohmann::json::parse(read_file_text(manifest_path));
  for (const char* field : {"fs_table", "alpha"}) {
    if (!j.contains(field)) {
      throw ValidationError(manifest_path + ": missing field \"" +
                            std::string(field) + "\" (not a converted network)");
    }
  }
  try {
    for (const auto& [name, pj] : j.at("fs_table").items()) {
      FsParams params = fs_params_from_json_text(pj.dump());
      snn.fs_table[name] = params;
      snn.k_by_kind[name] = params.k;
    }
    const auto& alpha = j.at("alpha");
    if (alpha.size() != snn.net.layers.size()) {
      throw ValidationError(manifest_path + ": alpha has " +
                            std::to_string(alpha.size()) + " entries for " +
                            std::to_string(snn.net.layers.size()) + " layers");
    }
    for (const auto& a : alpha) {
      snn.layer_alpha.push_back(a.is_null()
                                    ? std::numeric_limits<double>::quiet_NaN()
                                    : a.get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(manifest_path + ": " + e.what());
  }

  // Re-run the conversion checks so a hand-edited manifest cannot smuggle in
  // a table that the simulator would trip over later.
  return convert(snn.net, snn.fs_table, snn.layer_alpha);
}

}  // namespace fsnn
