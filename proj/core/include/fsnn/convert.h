#pragma once

#include <map>
#include <string>
#include <vector>

#include "fsnn/fs_neuron.h"
#include "fsnn/network.h"

namespace fsnn {

// A converted network: the source topology and weights unchanged, plus one
// shared FS parameter set per activation kind and a per-layer input scale
// for relu layers. fs_table["relu"] is stored at unit scale; the effective
// parameters of relu layer i are scaled_params(fs_table["relu"],
// layer_alpha[i]), which equals make_relu_params(k, layer_alpha[i]). Other
// activation kinds use their table entry as-is (their layer_alpha is NaN).
struct SnnSpec {
  NetworkSpec net;
  std::map<std::string, FsParams> fs_table;
  std::vector<double> layer_alpha;        // aligned with net.layers
  std::map<std::string, int> k_by_kind;   // derived from fs_table
};

struct AlphaPolicy {
  enum class Kind { kGlobalFixed, kPerLayerMax } kind = Kind::kPerLayerMax;
  double value = 25.0;   // kGlobalFixed: the constant scale
  double safety = 1.1;   // kPerLayerMax: multiplier on the observed max
};

// Per-layer relu input scale (NaN for non-relu layers). kGlobalFixed ignores
// the stats; kPerLayerMax requires stats covering every relu layer and
// returns safety * observed max pre-activation (floored at a tiny positive
// value so an all-negative layer still gets a valid scale).
std::vector<double> calibrate_alpha(const NetworkSpec& net,
                                    const std::vector<ActivationLayerStats>& stats,
                                    const AlphaPolicy& policy);

// Binds FS parameters to every activation layer. Preconditions: the network
// holds no batchnorm layers (fold first) and fs_table covers every
// non-identity activation kind used; a missing entry is reported by kind.
// Neuron and connection counts are unchanged.
SnnSpec convert(const NetworkSpec& net,
                const std::map<std::string, FsParams>& fs_table,
                const std::vector<double>& layer_alpha);

struct CollapseReport {
  int fused = 0;                      // number of pairwise fusions applied
  std::vector<int> skipped;           // linear layers left intact (indices in
                                      // the input network)
};

// Fuses every dense layer with identity activation into the directly
// following dense layer (W2*W1, W2*b1 + b2), repeatedly, so maximal linear
// dense runs collapse into the next weighted sum. Runs that are not
// composable (followed by a non-dense layer, or referenced by a
// residual_add) are left intact and listed in the report.
NetworkSpec collapse_linear(const NetworkSpec& net,
                            CollapseReport* report = nullptr);

// The parameter set actually driving layer i's neurons (relu entries scaled
// by that layer's alpha). Layer must have a non-identity activation.
FsParams effective_params(const SnnSpec& snn, int layer);

// Directory container: the network manifest extended with "fs_table",
// "alpha" (per layer, null for non-relu) and "k_by_kind" keys, weights in
// weights.bin as for plain networks.
SnnSpec load_snn(const std::string& dir);
void save_snn(const SnnSpec& snn, const std::string& dir);

}  // namespace fsnn
