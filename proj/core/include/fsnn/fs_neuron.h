#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fsnn/activation.h"

namespace fsnn {

// Parameter set of one few-spike (FS) neuron: over k internal time steps the
// neuron compares its potential against threshold[t], subtracts reset[t] on a
// spike, and contributes out_weight[t] per spike to its decoded output.
// One parameter set is shared by every neuron emulating the same activation.
struct FsParams {
  int k = 0;
  std::vector<double> threshold;   // T(t), t = 1..k
  std::vector<double> reset;       // h(t), subtracted from the potential on a spike
  std::vector<double> out_weight;  // d(t), added to the decoded output on a spike
  ActivationKind activation = ActivationKind::kIdentity;
};

// Mutable per-neuron state while stepping the dynamics by hand.
// `step` is 1-based and must stay in [1, k].
struct FsNeuronState {
  double potential = 0.0;
  int step = 1;
};

struct FsStepResult {
  FsNeuronState state;
  bool spike = false;
};

// One simulated neuron response: decoded value, the spike train over the k
// steps, and its population count.
struct FsOutput {
  double value = 0.0;
  std::vector<std::uint8_t> spikes;  // z(1..k), one entry per step
  int spike_count = 0;
};

struct QuantizationSpec {
  int bits = 8;           // 2^bits equally spaced levels
  double range_low = -8.0;
  double range_high = 8.0;
};

// Throws ValidationError unless k >= 1, all three arrays have length k, and
// every entry is finite.
void validate_params(const FsParams& params);

// Analytic construction emulating relu on [0, alpha): threshold, reset and
// output weight all equal alpha * 2^-t. Exact on multiples of alpha * 2^-k,
// within alpha * 2^-k everywhere below alpha, saturating at alpha * (1 - 2^-k).
FsParams make_relu_params(int k, double alpha);

// Returns a copy with threshold, reset and out_weight multiplied by `factor`.
// For the relu construction this rescales the represented input range
// linearly, i.e. scaled(make_relu_params(k, 1), a) == make_relu_params(k, a).
FsParams scaled_params(const FsParams& params, double factor);

// Advances one step: spikes iff potential >= threshold[step] (boundary
// equality counts as a spike), subtracting reset[step] if so.
FsStepResult fs_step(const FsNeuronState& state, const FsParams& params);

// Runs the full k-step dynamics from potential = x and decodes the output as
// the running sum of out_weight[t] over spike steps, accumulated in step
// order. Pure; safe to call concurrently.
FsOutput fs_simulate(double x, const FsParams& params);

// Closed form of what fs_simulate(x, make_relu_params(k, alpha)) decodes:
// 0 for x <= 0, the grid floor alpha*2^-k*floor(x*2^k/alpha) for 0 < x <
// alpha, and the saturation value alpha*(1 - 2^-k) for x >= alpha.
double relu_closed_form(double x, int k, double alpha);

// Nearest quantization level for one value; ties round toward the lower
// level, out-of-range values clamp to the endpoints. The level set is
// i -> range_low + i*step for i in [0, 2^bits - 1), plus range_high itself
// for the top index, so both endpoints are representable exactly.
double quantize_value(double value, const QuantizationSpec& spec);

// Entry-wise quantization of threshold, reset and out_weight. Idempotent.
FsParams quantize_params(const FsParams& params, const QuantizationSpec& spec);

// Mean squared error between the decoded neuron output and the target
// activation over n_samples evenly spaced points on [lo, hi], endpoints
// included.
double approximation_mse(const FsParams& params, ActivationKind target,
                         double lo, double hi, int n_samples);

// (x, spike count) pairs over an evenly spaced grid, ascending in x.
std::vector<std::pair<double, int>> spike_count_profile(const FsParams& params,
                                                        double lo, double hi,
                                                        int n_samples);

// JSON round-trip: {"k": int, "t": [...], "h": [...], "d": [...],
// "activation": string}; array lengths are checked against k on load.
std::string fs_params_to_json_text(const FsParams& params);
FsParams fs_params_from_json_text(const std::string& text);
FsParams load_fs_params(const std::string& path);
void save_fs_params(const FsParams& params, const std::string& path);

}  // namespace fsnn
