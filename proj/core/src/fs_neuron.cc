#include "fsnn/fs_neuron.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "fsnn/error.h"
#include "fsnn/io_util.h"

namespace fsnn {

namespace {

void require_finite(const std::vector<double>& values, const char* name) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw ValidationError(std::string("non-finite entry in parameter array \"") +
                            name + "\"");
    }
  }
}

}  // namespace

void validate_params(const FsParams& params) {
  if (params.k < 1) throw ValidationError("step count k must be >= 1");
  const auto k = static_cast<std::size_t>(params.k);
  if (params.threshold.size() != k || params.reset.size() != k ||
      params.out_weight.size() != k) {
    throw ValidationError("parameter arrays must all have length k=" +
                          std::to_string(params.k));
  }
  require_finite(params.threshold, "t");
  require_finite(params.reset, "h");
  require_finite(params.out_weight, "d");
}

FsParams make_relu_params(int k, double alpha) {
  if (k < 1) throw ValidationError("step count k must be >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw ValidationError("relu scale alpha must be positive and finite");
  }
  FsParams p;
  p.k = k;
  p.activation = ActivationKind::kRelu;
  p.threshold.resize(static_cast<std::size_t>(k));
  for (int t = 1; t <= k; ++t) {
    p.threshold[static_cast<std::size_t>(t - 1)] = alpha * std::ldexp(1.0, -t);
  }
  p.reset = p.threshold;
  p.out_weight = p.threshold;
  return p;
}

FsParams scaled_params(const FsParams& params, double factor) {
  FsParams p = params;
  for (double& v : p.threshold) v *= factor;
  for (double& v : p.reset) v *= factor;
  for (double& v : p.out_weight) v *= factor;
  return p;
}

FsStepResult fs_step(const FsNeuronState& state, const FsParams& params) {
  if (state.step < 1 || state.step > params.k) {
    throw ValidationError("neuron step " + std::to_string(state.step) +
                          " outside 1.." + std::to_string(params.k));
  }
  const std::size_t i = static_cast<std::size_t>(state.step - 1);
  FsStepResult result;
  // Boundary equality spikes: a potential sitting exactly on the threshold
  // is treated as reaching it, which is what makes grid-aligned inputs
  // decode exactly.
  result.spike = state.potential >= params.threshold[i];
  result.state.potential =
      result.spike ? state.potential - params.reset[i] : state.potential;
  result.state.step = state.step + 1;
  return result;
}

FsOutput fs_simulate(double x, const FsParams& params) {
  validate_params(params);
  FsOutput out;
  out.spikes.resize(static_cast<std::size_t>(params.k), 0);
  double v = x;
  double y = 0.0;
  for (int t = 0; t < params.k; ++t) {
    const std::size_t i = static_cast<std::size_t>(t);
    if (v >= params.threshold[i]) {
      out.spikes[i] = 1;
      ++out.spike_count;
      y += params.out_weight[i];
      v -= params.reset[i];
    }
  }
  out.value = y;
  return out;
}

double relu_closed_form(double x, int k, double alpha) {
  if (x <= 0.0) return 0.0;
  const double grid = alpha * std::ldexp(1.0, -k);  // alpha * 2^-k
  if (x >= alpha) return alpha - grid;              // saturation
  return grid * std::floor(x / grid);
}

double quantize_value(double value, const QuantizationSpec& spec) {
  if (spec.bits < 1) throw ValidationError("quantization bits must be >= 1");
  if (!(spec.range_low < spec.range_high)) {
    throw ValidationError("quantization range must satisfy low < high");
  }
  const std::int64_t levels = std::int64_t{1} << spec.bits;
  const double step = (spec.range_high - spec.range_low) /
                      static_cast<double>(levels - 1);
  // Nearest level with ties toward the lower one: the midpoint between
  // levels i and i+1 maps to i.
  double idx = std::ceil((value - spec.range_low) / step - 0.5);
  if (!(idx >= 0.0)) idx = 0.0;  // also catches NaN from overflow edge cases
  if (idx > static_cast<double>(levels - 1)) idx = static_cast<double>(levels - 1);
  const std::int64_t i = static_cast<std::int64_t>(idx);
  if (i == levels - 1) return spec.range_high;  // keep the top endpoint exact
  return spec.range_low + static_cast<double>(i) * step;
}

FsParams quantize_params(const FsParams& params, const QuantizationSpec& spec) {
  validate_params(params);
  FsParams q = params;
  for (double& v : q.threshold) v = quantize_value(v, spec);
  for (double& v : q.reset) v = quantize_value(v, spec);
  for (double& v : q.out_weight) v = quantize_value(v, spec);
  return q;
}

double approximation_mse(const FsParams& params, ActivationKind target,
                         double lo, double hi, int n_samples) {
  if (!(lo < hi)) throw ValidationError("interval must satisfy lo < hi");
  if (n_samples < 2) throw ValidationError("n_samples must be >= 2");
  validate_params(params);
  double sum = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) /
                              static_cast<double>(n_samples - 1);
    const double err = fs_simulate(x, params).value - eval_activation(target, x);
    sum += err * err;
  }
  return sum / static_cast<double>(n_samples);
}

std::vector<std::pair<double, int>> spike_count_profile(const FsParams& params,
                                                        double lo, double hi,
                                                        int n_samples) {
  if (!(lo < hi)) throw ValidationError("interval must satisfy lo < hi");
  if (n_samples < 2) throw ValidationError("n_samples must be >= 2");
  validate_params(params);
  std::vector<std::pair<double, int>> profile;
  profile.reserve(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) /
                              static_cast<double>(n_samples - 1);
    profile.emplace_back(x, fs_simulate(x, params).spike_count);
  }
  return profile;
}

std::string fs_params_to_json_text(const FsParams& params) {
  validate_params(params);
  nlohmann::json j;
  j["k"] = params.k;
  j["t"] = params.threshold;
  j["h"] = params.reset;
  j["d"] = params.out_weight;
  j["activation"] = activation_name(params.activation);
  return j.dump(2) + "\n";
}

FsParams fs_params_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid parameter JSON: ") + e.what());
  }
  for (const char* field : {"k", "t", "h", "d", "activation"}) {
    if (!j.contains(field)) {
      throw ValidationError(std::string("parameter JSON missing field \"") +
                            field + "\"");
    }
  }
  FsParams p;
  try {
    p.k = j.at("k").get<int>();
    p.threshold = j.at("t").get<std::vector<double>>();
    p.reset = j.at("h").get<std::vector<double>>();
    p.out_weight = j.at("d").get<std::vector<double>>();
    p.activation = parse_activation(j.at("activation").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid parameter JSON field: ") + e.what());
  }
  validate_params(p);  // enforces the length checks
  return p;
}

FsParams load_fs_params(const std::string& path) {
  try {
    return fs_params_from_json_text(read_file_text(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

void save_fs_params(const FsParams& params, const std::string& path) {
  atomic_write_text(path, fs_params_to_json_text(params));
}

}  // namespace fsnn
