#pragma once

#include <cstdint>
#include <vector>

#include "fsnn/dataset.h"
#include "fsnn/network.h"

namespace fsnn {

// Dense-only MLP trainer: SGD with momentum on softmax cross-entropy
// (logistic loss when the final width is 1). Hidden layers use
// `hidden_activation` (relu or silu), the output layer is linear.
struct TrainConfig {
  std::vector<int> widths;  // e.g. {784, 128, 128, 10}, input width first
  ActivationKind hidden_activation = ActivationKind::kRelu;
  double learning_rate = 0.1;
  int epochs = 5;
  int batch_size = 64;
  std::uint64_t seed = 1;
  double momentum = 0.9;
};

struct TrainResult {
  NetworkSpec net;
  double train_accuracy = 0.0;
  double test_accuracy = -1.0;  // -1 when no test set was given
};

// Deterministic for a fixed config. `test` may be null. Images are flattened
// to the first width; a mismatch is a validation error. Divergence (non-
// finite loss) aborts with a diagnostic.
TrainResult train_mlp(const Dataset& train, const Dataset* test,
                      const TrainConfig& cfg);

// Fraction of samples whose argmax logit (or thresholded single logit)
// matches the label.
double evaluate_accuracy(const NetworkSpec& net, const Dataset& ds,
                         std::int64_t limit = -1);

}  // namespace fsnn
