#include "fsnn/fs_fit.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <nlohmann/json.hpp>

#include "fsnn/error.h"
#include "fsnn/io_util.h"
#include "fsnn/rng.h"

namespace fsnn {

namespace {

// Relaxed spike: the integral of the triangle surrogate, i.e. a C1 ramp from
// 0 at u = -g to 1 at u = +g. Its derivative in u is the triangle itself, so
// gradients of the relaxed dynamics are exactly finite-difference checkable.
double smooth_spike(double u, double g) {
  if (u <= -g) return 0.0;
  if (u <= 0.0) {
    const double s = u + g;
    return s * s / (2.0 * g * g);
  }
  if (u <= g) {
    const double s = g - u;
    return 1.0 - s * s / (2.0 * g * g);
  }
  return 1.0;
}

// d/du of smooth_spike: the unit-area triangle of half-width g.
double triangle(double u, double g) {
  const double t = 1.0 - std::abs(u) / g;
  return t > 0.0 ? t / g : 0.0;
}

void validate_regions(const RegionWeights& weights) {
  for (const Region& r : weights.regions) {
    if (!(r.lo < r.hi)) {
      throw ValidationError("region must satisfy lo < hi");
    }
    if (!(r.weight > 0.0)) {
      throw ValidationError("region weight must be positive");
    }
  }
}

void validate_config(const FitConfig& cfg) {
  if (cfg.k < 1) throw ValidationError("fit config: k must be >= 1");
  if (!(cfg.lo < cfg.hi)) {
    throw ValidationError("fit config: train_interval must satisfy lo < hi");
  }
  if (cfg.batch_size < 1) throw ValidationError("fit config: batch_size must be >= 1");
  if (cfg.iterations < 1) throw ValidationError("fit config: iterations must be >= 1");
  if (!(cfg.learning_rate > 0.0)) {
    throw ValidationError("fit config: learning_rate must be positive");
  }
  if (!(cfg.gamma > 0.0)) {
    throw ValidationError("fit config: gamma must be positive");
  }
  validate_regions(cfg.region_weights);
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> xs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    xs[static_cast<std::size_t>(i)] =
        lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return xs;
}

// Hard-dynamics decoded value; the fit selects on this, not on the smoothed
// surrogate, since the deployed neuron thresholds exactly.
double hard_value(double x, const std::vector<double>& threshold,
                  const std::vector<double>& reset,
                  const std::vector<double>& out_weight) {
  double v = x;
  double y = 0.0;
  for (std::size_t t = 0; t < threshold.size(); ++t) {
    if (v >= threshold[t]) {
      y += out_weight[t];
      v -= reset[t];
    }
  }
  return y;
}

struct ValidationGrids {
  std::vector<Region> regions;              // evaluation regions
  std::vector<std::vector<double>> xs;      // per region
  std::vector<std::vector<double>> targets; // per region
};

ValidationGrids make_validation_grids(ActivationKind target, const FitConfig& cfg) {
  constexpr int kGridPoints = 2048;
  ValidationGrids grids;
  grids.regions = cfg.region_weights.regions;
  if (grids.regions.empty()) {
    grids.regions.push_back({cfg.lo, cfg.hi, 1.0});
  }
  for (const Region& r : grids.regions) {
    grids.xs.push_back(linspace(r.lo, r.hi, kGridPoints));
    std::vector<double> f(grids.xs.back().size());
    for (std::size_t i = 0; i < f.size(); ++i) {
      f[i] = eval_activation(target, grids.xs.back()[i]);
    }
    grids.targets.push_back(std::move(f));
  }
  return grids;
}

// Region-weighted hard-dynamics MSE plus the per-region plain MSEs.
double weighted_validation_mse(const ValidationGrids& grids,
                               const std::vector<double>& threshold,
                               const std::vector<double>& reset,
                               const std::vector<double>& out_weight,
                               std::vector<double>* per_region) {
  double num = 0.0;
  double den = 0.0;
  if (per_region) per_region->clear();
  for (std::size_t r = 0; r < grids.regions.size(); ++r) {
    double sse = 0.0;
    const auto& xs = grids.xs[r];
    const auto& fs = grids.targets[r];
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double e = hard_value(xs[i], threshold, reset, out_weight) - fs[i];
      sse += e * e;
    }
    if (per_region) per_region->push_back(sse / static_cast<double>(xs.size()));
    num += grids.regions[r].weight * sse;
    den += grids.regions[r].weight * static_cast<double>(xs.size());
  }
  return num / den;
}

std::string format_interval(double lo, double hi) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g..%g", lo, hi);
  return buf;
}

}  // namespace

double pseudo_grad(double v, double threshold, double width) {
  if (!(width > 0.0)) throw ValidationError("pseudo-derivative width must be positive");
  const double t = 1.0 - std::abs(v - threshold) / width;
  return t > 0.0 ? t : 0.0;
}

double forward_backward(const std::vector<double>& x_batch,
                        const FsParams& params, ActivationKind target,
                        const RegionWeights& weights, double gamma,
                        FsGrads* grads) {
  if (x_batch.empty()) throw ValidationError("forward_backward: empty batch");
  if (!(gamma > 0.0)) throw ValidationError("forward_backward: gamma must be positive");
  validate_params(params);
  validate_regions(weights);

  const std::size_t n = x_batch.size();
  const std::size_t k = static_cast<std::size_t>(params.k);
  const auto& T = params.threshold;
  const auto& h = params.reset;
  const auto& d = params.out_weight;

  // Forward with the relaxed spike, keeping the per-step membrane offsets
  // u = v - T and relaxed spikes z for the reverse sweep.
  std::vector<double> us(n * k);
  std::vector<double> zs(n * k);
  std::vector<double> residual(n);
  std::vector<double> w(n);
  double weight_sum = 0.0;
  double loss_num = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = x_batch[i];
    double v = x;
    double y = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
      const double u = v - T[t];
      const double z = smooth_spike(u, gamma);
      us[i * k + t] = u;
      zs[i * k + t] = z;
      y += d[t] * z;
      v -= h[t] * z;
    }
    residual[i] = y - eval_activation(target, x);
    w[i] = weights.weight_at(x);
    weight_sum += w[i];
    loss_num += w[i] * residual[i] * residual[i];
  }
  const double loss = loss_num / weight_sum;
  if (!std::isfinite(loss)) {
    throw DivergenceError("surrogate loss is non-finite");
  }
  if (!grads) return loss;

  grads->threshold.assign(k, 0.0);
  grads->reset.assign(k, 0.0);
  grads->out_weight.assign(k, 0.0);
  // Reverse sweep. lambda carries dLoss/dv(t+1); each step's spike feeds the
  // output (weight d) and the potential update (weight -h), and the spike
  // itself differentiates into the triangle surrogate.
  for (std::size_t i = 0; i < n; ++i) {
    const double out_grad = 2.0 * w[i] * residual[i] / weight_sum;
    double lambda = 0.0;
    for (std::size_t t = k; t-- > 0;) {
      const double z = zs[i * k + t];
      const double dz = out_grad * d[t] - lambda * h[t];
      const double du = dz * triangle(us[i * k + t], gamma);
      grads->threshold[t] -= du;
      grads->out_weight[t] += out_grad * z;
      grads->reset[t] -= lambda * z;
      lambda += du;
    }
  }
  for (std::size_t t = 0; t < k; ++t) {
    if (!std::isfinite(grads->threshold[t]) || !std::isfinite(grads->reset[t]) ||
        !std::isfinite(grads->out_weight[t])) {
      throw DivergenceError("gradient is non-finite at step " + std::to_string(t + 1));
    }
  }
  return loss;
}

FitResult fit(ActivationKind target, const FitConfig& cfg) {
  validate_config(cfg);
  Rng rng(cfg.seed);
  const std::size_t k = static_cast<std::size_t>(cfg.k);

  // Initialize from the analytic halving ladder, with the threshold/reset
  // scale taken from the input interval and the output-weight scale from the
  // target's magnitude, so targets with small ranges (sigmoid) start close.
  const double s_in = std::max(std::abs(cfg.lo), std::abs(cfg.hi));
  double s_out = 1e-3;
  for (double x : linspace(cfg.lo, cfg.hi, 512)) {
    s_out = std::max(s_out, std::abs(eval_activation(target, x)));
  }
  constexpr double kInitNoise = 0.01;
  std::vector<double> T(k), h(k), d(k);
  for (std::size_t t = 0; t < k; ++t) {
    T[t] = s_in * std::ldexp(1.0, -static_cast<int>(t) - 1) *
           (1.0 + kInitNoise * rng.uniform(-1.0, 1.0));
  }
  for (std::size_t t = 0; t < k; ++t) {
    h[t] = s_in * std::ldexp(1.0, -static_cast<int>(t) - 1) *
           (1.0 + kInitNoise * rng.uniform(-1.0, 1.0));
  }
  for (std::size_t t = 0; t < k; ++t) {
    d[t] = s_out * std::ldexp(1.0, -static_cast<int>(t) - 1) *
           (1.0 + kInitNoise * rng.uniform(-1.0, 1.0));
  }

  // The pseudo-derivative width shrinks geometrically from cfg.gamma to the
  // coder's own resolution (quarter of the finest grid step, floored), so
  // late training refines individual thresholds instead of smearing them.
  const double gamma0 = cfg.gamma;
  const double gamma_end = std::min(
      gamma0, s_in * std::max(std::ldexp(1.0, -cfg.k) * 0.25, 2.5e-4));
  constexpr double kMomentum = 0.9;
  constexpr double kPolishFraction = 0.15;  // final fraction at 0.1x rate
  constexpr int kValidateEvery = 250;

  const ValidationGrids grids = make_validation_grids(target, cfg);

  std::vector<double> best_T = T, best_h = h, best_d = d;
  double best_weighted = weighted_validation_mse(grids, T, h, d, nullptr);
  const double initial_weighted = best_weighted;

  std::vector<double> vT(k, 0.0), vh(k, 0.0), vd(k, 0.0);
  std::vector<double> xs(static_cast<std::size_t>(cfg.batch_size));
  FsParams work;
  work.k = cfg.k;
  work.activation = target;
  FsGrads grads;
  double initial_loss = 0.0;
  double gamma = gamma0;

  for (int it = 0; it < cfg.iterations; ++it) {
    const double frac = static_cast<double>(it) /
                        static_cast<double>(std::max(cfg.iterations - 1, 1));
    gamma = gamma0 * std::pow(gamma_end / gamma0, frac);
    const double lr = (it >= static_cast<int>(cfg.iterations * (1.0 - kPolishFraction)))
                          ? cfg.learning_rate * 0.1
                          : cfg.learning_rate;

    // Stratified batch: one point per uniform cell of the interval, jittered,
    // so every iteration covers the whole range without grid aliasing.
    for (int i = 0; i < cfg.batch_size; ++i) {
      xs[static_cast<std::size_t>(i)] =
          cfg.lo + (static_cast<double>(i) + rng.uniform()) * (cfg.hi - cfg.lo) /
                       static_cast<double>(cfg.batch_size);
    }

    work.threshold = T;
    work.reset = h;
    work.out_weight = d;
    const double loss = forward_backward(xs, work, target, cfg.region_weights,
                                         gamma, &grads);
    if (it == 0) {
      initial_loss = loss;
    } else if (loss > initial_loss * 1e3) {
      throw DivergenceError(
          "fit diverged at iteration " + std::to_string(it) + ": loss " +
          std::to_string(loss) + " exceeds 1000x the initial " +
          std::to_string(initial_loss));
    }

    for (std::size_t t = 0; t < k; ++t) {
      vT[t] = kMomentum * vT[t] - lr * grads.threshold[t];
      vh[t] = kMomentum * vh[t] - lr * grads.reset[t];
      vd[t] = kMomentum * vd[t] - lr * grads.out_weight[t];
      T[t] += vT[t];
      h[t] += vh[t];
      d[t] += vd[t];
    }

    if ((it + 1) % kValidateEvery == 0) {
      const double wv = weighted_validation_mse(grids, T, h, d, nullptr);
      if (wv < best_weighted) {
        best_weighted = wv;
        best_T = T;
        best_h = h;
        best_d = d;
      }
    }
  }
  {
    const double wv = weighted_validation_mse(grids, T, h, d, nullptr);
    if (wv < best_weighted) {
      best_weighted = wv;
      best_T = T;
      best_h = h;
      best_d = d;
    }
  }

  FitResult result;
  result.params.k = cfg.k;
  result.params.activation = target;
  result.params.threshold = best_T;
  result.params.reset = best_h;
  result.params.out_weight = best_d;
  std::vector<double> per_region;
  result.weighted_mse =
      weighted_validation_mse(grids, best_T, best_h, best_d, &per_region);
  for (std::size_t r = 0; r < grids.regions.size(); ++r) {
    result.region_mse.push_back(
        {grids.regions[r].lo, grids.regions[r].hi, per_region[r]});
  }
  result.initial_weighted_mse = initial_weighted;
  result.iterations = cfg.iterations;
  result.seed = cfg.seed;
  result.final_gamma = gamma;
  return result;
}

std::vector<SweepRow> sweep_k(ActivationKind target,
                              const std::vector<int>& k_values,
                              const FitConfig& base_cfg) {
  if (k_values.empty()) throw ValidationError("sweep_k: empty k list");
  std::vector<SweepRow> rows;
  for (std::size_t row = 0; row < k_values.size(); ++row) {
    FitConfig cfg = base_cfg;
    cfg.k = k_values[row];
    cfg.seed = derive_seed(base_cfg.seed, row);
    const FitResult res = fit(target, cfg);
    for (const RegionMse& rm : res.region_mse) {
      rows.push_back({cfg.k, format_interval(rm.lo, rm.hi), rm.mse});
    }
    rows.push_back({cfg.k, "all",
                    approximation_mse(res.params, target, cfg.lo, cfg.hi, 2048)});
  }
  return rows;
}

std::vector<SweepRow> sweep_q(const FsParams& params, ActivationKind target,
                              const std::vector<int>& q_values,
                              const QuantizationSpec& range,
                              const std::vector<Region>& regions, double lo,
                              double hi) {
  if (q_values.empty()) throw ValidationError("sweep_q: empty q list");
  std::vector<SweepRow> rows;
  for (int q : q_values) {
    QuantizationSpec spec = range;
    spec.bits = q;
    const FsParams quantized = quantize_params(params, spec);
    for (const Region& r : regions) {
      rows.push_back({q, format_interval(r.lo, r.hi),
                      approximation_mse(quantized, target, r.lo, r.hi, 2048)});
    }
    rows.push_back({q, "all", approximation_mse(quantized, target, lo, hi, 2048)});
  }
  return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows,
                         const std::string& value_name) {
  std::string csv = value_name + ",region,mse\n";
  char buf[128];
  for (const SweepRow& row : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%.12g\n", row.value,
                  row.region.c_str(), row.mse);
    csv += buf;
  }
  return csv;
}

FitConfig fit_config_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid fit config JSON: ") + e.what());
  }
  // Every field is mandatory so a config file is a complete, reproducible
  // record of the run it describes.
  for (const char* field :
       {"activation", "k", "train_interval", "batch_size", "iterations",
        "learning_rate", "gamma", "seed", "region_weights"}) {
    if (!j.contains(field)) {
      throw ValidationError(std::string("fit config missing field \"") + field +
                            "\"");
    }
  }
  FitConfig cfg;
  try {
    cfg.target = parse_activation(j.at("activation").get<std::string>());
    cfg.k = j.at("k").get<int>();
    const auto interval = j.at("train_interval").get<std::vector<double>>();
    if (interval.size() != 2) {
      throw ValidationError("fit config: train_interval must be [lo, hi]");
    }
    cfg.lo = interval[0];
    cfg.hi = interval[1];
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.iterations = j.at("iterations").get<int>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.gamma = j.at("gamma").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& entry : j.at("region_weights")) {
      const auto triple = entry.get<std::vector<double>>();
      if (triple.size() != 3) {
        throw ValidationError(
            "fit config: region_weights entries must be [lo, hi, weight]");
      }
      cfg.region_weights.regions.push_back({triple[0], triple[1], triple[2]});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid fit config field: ") + e.what());
  }
  validate_config(cfg);
  return cfg;
}

std::string fit_config_to_json_text(const FitConfig& cfg) {
  nlohmann::json j;
  j["activation"] = activation_name(cfg.target);
  j["k"] = cfg.k;
  j["train_interval"] = {cfg.lo, cfg.hi};
  j["batch_size"] = cfg.batch_size;
  j["iterations"] = cfg.iterations;
  j["learning_rate"] = cfg.learning_rate;
  j["gamma"] = cfg.gamma;
  j["seed"] = cfg.seed;
  nlohmann::json regions = nlohmann::json::array();
  for (const Region& r : cfg.region_weights.regions) {
    regions.push_back({r.lo, r.hi, r.weight});
  }
  j["region_weights"] = regions;
  return j.dump(2) + "\n";
}

FitConfig load_fit_config(const std::string& path) {
  try {
    return fit_config_from_json_text(read_file_text(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

}  // namespace fsnn
