#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsnn/fs_neuron.h"

namespace fsnn {

// One weighted interval of the training range. Lookup is first-match in
// declaration order; points outside every region get weight 1.
struct Region {
  double lo = 0.0;
  double hi = 0.0;
  double weight = 1.0;
};

struct RegionWeights {
  std::vector<Region> regions;

  double weight_at(double x) const {
    for (const Region& r : regions) {
      if (x >= r.lo && x <= r.hi) return r.weight;
    }
    return 1.0;
  }
};

// Full recipe for one fit. The seed fixes initialization and the sampling
// stream, so identical configs produce bit-identical parameters.
struct FitConfig {
  ActivationKind target = ActivationKind::kSilu;
  int k = 16;
  double lo = -8.0;           // training interval
  double hi = 12.0;
  int batch_size = 256;
  int iterations = 30000;
  double learning_rate = 0.01;
  double gamma = 1.0;         // initial pseudo-derivative half-width
  std::uint64_t seed = 1;
  RegionWeights region_weights;
};

// Gradients of the surrogate loss with respect to the three parameter arrays.
struct FsGrads {
  std::vector<double> threshold;
  std::vector<double> reset;
  std::vector<double> out_weight;
};

struct RegionMse {
  double lo = 0.0;
  double hi = 0.0;
  double mse = 0.0;
};

struct FitResult {
  FsParams params;                 // best validated parameters seen
  std::vector<RegionMse> region_mse;  // hard-dynamics MSE per region
  double weighted_mse = 0.0;       // region-weighted validation MSE of `params`
  double initial_weighted_mse = 0.0;
  int iterations = 0;
  std::uint64_t seed = 0;
  double final_gamma = 0.0;
};

// Triangle surrogate for the spike nonlinearity's derivative:
// max(0, 1 - |v - threshold| / width); apex 1 at v == threshold, support
// 2*width.
double pseudo_grad(double v, double threshold, double width);

// Weighted-MSE loss of the gamma-smoothed dynamics on one batch, plus exact
// gradients of that smoothed objective obtained by unrolling the k steps in
// reverse. The smoothing replaces the hard spike by the integral of the
// triangle surrogate, so the returned gradients are the true derivatives of
// the returned loss (finite-difference checkable). Throws DivergenceError if
// the loss or any gradient is non-finite.
double forward_backward(const std::vector<double>& x_batch,
                        const FsParams& params, ActivationKind target,
                        const RegionWeights& weights, double gamma,
                        FsGrads* grads);

// Gradient-descent fit of threshold/reset/out_weight to the target
// activation. Initialization follows the analytic relu construction scaled
// to the interval and output magnitudes plus small seeded noise; gamma is
// annealed from cfg.gamma toward a resolution-matched floor; selection uses
// hard-dynamics validation on per-region grids, keeping the best (including
// the initial) parameters. Throws DivergenceError if training loss exceeds
// 1000x its initial value.
FitResult fit(ActivationKind target, const FitConfig& cfg);

// One row of a sweep table; `label` is the swept quantity's value (k or q)
// and one row is emitted per (value, region) pair, regions in config order
// followed by a whole-interval row.
struct SweepRow {
  int value = 0;
  std::string region;
  double mse = 0.0;
};

// Refits per k (derived seed per row) and reports hard-dynamics region MSEs.
std::vector<SweepRow> sweep_k(ActivationKind target,
                              const std::vector<int>& k_values,
                              const FitConfig& base_cfg);

// Quantizes an already fitted parameter set per q and reports region MSEs
// over [lo, hi]; no refitting. Regions are taken from `regions`; an empty
// list yields only the whole-interval row.
std::vector<SweepRow> sweep_q(const FsParams& params, ActivationKind target,
                              const std::vector<int>& q_values,
                              const QuantizationSpec& range,
                              const std::vector<Region>& regions, double lo,
                              double hi);

// CSV with fixed header "<value_name>,region,mse".
std::string sweep_to_csv(const std::vector<SweepRow>& rows,
                         const std::string& value_name);

// Fit config JSON: {"activation": str, "k": int, "train_interval": [lo, hi],
// "batch_size": int, "iterations": int, "learning_rate": real,
// "gamma": real, "seed": int, "region_weights": [[lo, hi, weight], ...]}.
// Every field is mandatory; missing fields are reported by name.
FitConfig fit_config_from_json_text(const std::string& text);
std::string fit_config_to_json_text(const FitConfig& cfg);
FitConfig load_fit_config(const std::string& path);

}  // namespace fsnn
