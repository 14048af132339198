#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsnn/activation.h"
#include "fsnn/tensor.h"

namespace fsnn {

enum class LayerKind {
  kDense,
  kConv2d,
  kAvgPool2d,
  kFlatten,
  kResidualAdd,
  kBatchNorm,
};

enum class Padding { kValid, kSame };

const char* layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

// One layer. A single struct covers all kinds; only the fields relevant to
// `kind` are meaningful (the loader and validator enforce this).
struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  ActivationKind activation = ActivationKind::kIdentity;

  // dense: weight [out, in], bias [out]
  // conv2d: weight [out_c, in_c, kh, kw], bias [out_c]
  Tensor weight;
  Tensor bias;

  int stride = 1;            // conv2d / avgpool2d
  Padding padding = Padding::kValid;  // conv2d
  int pool = 2;              // avgpool2d window edge; stride defaults to it

  int source = -1;           // residual_add: earlier layer index, -1 = input

  // batchnorm, all shaped [channels]
  Tensor bn_mean;
  Tensor bn_var;
  Tensor bn_scale;
  Tensor bn_shift;
  double bn_eps = 1e-5;
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  std::vector<std::int64_t> input_shape;
  int class_count = 0;
};

// Output shape of every layer in order, starting from input_shape. Throws
// ValidationError on any incompatibility (also the whole-network validator).
std::vector<std::vector<std::int64_t>> infer_shapes(const NetworkSpec& net);

// Reference forward pass: dense y = Wx + b, conv2d as cross-correlation with
// the declared stride/padding, avgpool2d the arithmetic window mean,
// residual_add the element-wise sum with the referenced layer's output,
// activations applied element-wise afterwards. If `preactivations` is given
// it receives one tensor per layer: for dense/conv2d/residual_add/batchnorm
// the values before the activation, empty tensors for the rest.
Tensor forward(const NetworkSpec& net, const Tensor& input,
               std::vector<Tensor>* preactivations = nullptr);

// Removes every batchnorm layer by rescaling the directly preceding dense or
// conv2d layer so forward outputs are unchanged. A batchnorm whose
// predecessor is missing, of another kind, or already activated is rejected.
NetworkSpec fold_batchnorm(const NetworkSpec& net);

// Pre-activation statistics for one activation layer (non-identity
// activation), over every scalar fed to that activation across the batch.
struct ActivationLayerStats {
  int layer = 0;
  std::int64_t count = 0;
  double mean = 0.0;
  double variance = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<double> bin_edges;       // histogram_bins + 1 edges
  std::vector<std::int64_t> bin_counts;
};

// `batch` is a tensor whose first dimension indexes samples, remaining
// dimensions matching the network input (a flat [n, numel(input_shape)]
// layout is also accepted). Histogram bins span [min, max] of the observed
// values.
std::vector<ActivationLayerStats> activation_stats(const NetworkSpec& net,
                                                   const Tensor& batch,
                                                   int histogram_bins = 64);

// Directory container: manifest.json describing layers/shapes/dtype plus
// weights.bin holding all tensors little-endian, row-major, concatenated at
// the byte offsets the manifest declares. Load validates shapes, offsets,
// finiteness and known enum values and reports the offending tensor by name.
NetworkSpec load_network(const std::string& dir);
void save_network(const NetworkSpec& net, const std::string& dir);

namespace detail {
// One layer's output before its activation. `outputs` holds the
// post-activation outputs of all earlier layers (for residual references);
// `input` is the network input. Shared by the reference forward pass and the
// spiking executor so both apply identical arithmetic in identical order.
Tensor layer_op(const LayerSpec& layer, const Tensor& cur, const Tensor& input,
                const std::vector<Tensor>& outputs, int layer_index);
}  // namespace detail

}  // namespace fsnn
