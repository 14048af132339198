#include "fsnn/train.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fsnn/error.h"
#include "fsnn/rng.h"

namespace fsnn {

namespace {

double activation_derivative(ActivationKind kind, double x) {
  switch (kind) {
    case ActivationKind::kRelu:
      return x > 0.0 ? 1.0 : 0.0;
    case ActivationKind::kSilu: {
      const double s = 1.0 / (1.0 + std::exp(-x));
      return s * (1.0 + x * (1.0 - s));
    }
    default:
      throw ValidationError("hidden activation must be relu or silu");
  }
}

struct DenseParams {
  std::vector<double> w;  // [out, in] row-major
  std::vector<double> b;  // [out]
  int in = 0;
  int out = 0;
};

}  // namespace

TrainResult train_mlp(const Dataset& train, const Dataset* test,
                      const TrainConfig& cfg) {
  if (cfg.widths.size() < 2) {
    throw ValidationError("widths must list at least input and output");
  }
  if (cfg.hidden_activation != ActivationKind::kRelu &&
      cfg.hidden_activation != ActivationKind::kSilu) {
    throw ValidationError("hidden activation must be relu or silu");
  }
  if (cfg.epochs < 0 || cfg.batch_size < 1) {
    throw ValidationError("epochs must be >= 0 and batch size >= 1");
  }
  const std::int64_t n = train.size();
  if (n < 1) throw ValidationError("empty training set");
  const std::int64_t dim = train.images.numel() / n;
  if (dim != cfg.widths.front()) {
    throw ValidationError("input width " + std::to_string(cfg.widths.front()) +
                          " does not match image size " + std::to_string(dim));
  }
  const int out_width = cfg.widths.back();
  const bool binary = out_width == 1;
  for (int label : train.labels) {
    if (label < 0 || label >= (binary ? 2 : out_width)) {
      throw ValidationError("label " + std::to_string(label) +
                            " outside the output range");
    }
  }

  Rng rng(cfg.seed);
  const std::size_t num_layers = cfg.widths.size() - 1;
  std::vector<DenseParams> layers(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) {
    layers[l].in = cfg.widths[l];
    layers[l].out = cfg.widths[l + 1];
    layers[l].w.resize(static_cast<std::size_t>(layers[l].in) * layers[l].out);
    layers[l].b.assign(static_cast<std::size_t>(layers[l].out), 0.0);
    const double scale = std::sqrt(2.0 / layers[l].in);
    for (double& w : layers[l].w) w = scale * rng.normal();
  }

  std::vector<std::vector<double>> vel_w(num_layers), vel_b(num_layers);
  std::vector<std::vector<double>> grad_w(num_layers), grad_b(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) {
    vel_w[l].assign(layers[l].w.size(), 0.0);
    vel_b[l].assign(layers[l].b.size(), 0.0);
    grad_w[l].resize(layers[l].w.size());
    grad_b[l].resize(layers[l].b.size());
  }

  // Per-sample forward scratch: pre-activations and activations per layer.
  std::vector<std::vector<double>> zs(num_layers), as(num_layers + 1);
  for (std::size_t l = 0; l < num_layers; ++l) {
    zs[l].resize(static_cast<std::size_t>(layers[l].out));
    as[l + 1].resize(static_cast<std::size_t>(layers[l].out));
  }
  as[0].resize(static_cast<std::size_t>(dim));

  auto forward_sample = [&](const double* x) {
    std::copy(x, x + dim, as[0].begin());
    for (std::size_t l = 0; l < num_layers; ++l) {
      const DenseParams& p = layers[l];
      for (int o = 0; o < p.out; ++o) {
        const double* wrow = p.w.data() + static_cast<std::size_t>(o) * p.in;
        double acc = p.b[static_cast<std::size_t>(o)];
        for (int i = 0; i < p.in; ++i) acc += wrow[i] * as[l][static_cast<std::size_t>(i)];
        zs[l][static_cast<std::size_t>(o)] = acc;
        as[l + 1][static_cast<std::size_t>(o)] =
            l + 1 < num_layers ? eval_activation(cfg.hidden_activation, acc) : acc;
      }
    }
  };

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> delta, next_delta;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates with our own stream, so shuffles are reproducible.
    for (std::int64_t i = n - 1; i > 0; --i) {
      const auto j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    for (std::int64_t start = 0; start < n; start += cfg.batch_size) {
      const std::int64_t end = std::min<std::int64_t>(start + cfg.batch_size, n);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (std::size_t l = 0; l < num_layers; ++l) {
        std::fill(grad_w[l].begin(), grad_w[l].end(), 0.0);
        std::fill(grad_b[l].begin(), grad_b[l].end(), 0.0);
      }
      double batch_loss = 0.0;
      for (std::int64_t s = start; s < end; ++s) {
        const std::int64_t idx = order[static_cast<std::size_t>(s)];
        forward_sample(train.images.data.data() + idx * dim);
        const int label = train.labels[static_cast<std::size_t>(idx)];

        // Output-layer error signal, already scaled by 1/batch.
        delta.assign(static_cast<std::size_t>(out_width), 0.0);
        const std::vector<double>& logits = as[num_layers];
        if (binary) {
          const double p = 1.0 / (1.0 + std::exp(-logits[0]));
          batch_loss -= label ? std::log(std::max(p, 1e-300))
                              : std::log(std::max(1.0 - p, 1e-300));
          delta[0] = (p - static_cast<double>(label)) * inv_batch;
        } else {
          double max_logit = logits[0];
          for (double v : logits) max_logit = std::max(max_logit, v);
          double denom = 0.0;
          for (double v : logits) denom += std::exp(v - max_logit);
          for (int o = 0; o < out_width; ++o) {
            const double p = std::exp(logits[static_cast<std::size_t>(o)] - max_logit) / denom;
            delta[static_cast<std::size_t>(o)] =
                (p - (o == label ? 1.0 : 0.0)) * inv_batch;
            if (o == label) batch_loss -= std::log(std::max(p, 1e-300));
          }
        }

        for (std::size_t l = num_layers; l-- > 0;) {
          const DenseParams& p = layers[l];
          for (int o = 0; o < p.out; ++o) {
            const double g = delta[static_cast<std::size_t>(o)];
            if (g == 0.0) continue;
            grad_b[l][static_cast<std::size_t>(o)] += g;
            double* grow = grad_w[l].data() + static_cast<std::size_t>(o) * p.in;
            const double* arow = as[l].data();
            for (int i = 0; i < p.in; ++i) grow[i] += g * arow[i];
          }
          if (l == 0) break;
          next_delta.assign(static_cast<std::size_t>(p.in), 0.0);
          for (int o = 0; o < p.out; ++o) {
            const double g = delta[static_cast<std::size_t>(o)];
            if (g == 0.0) continue;
            const double* wrow = p.w.data() + static_cast<std::size_t>(o) * p.in;
            for (int i = 0; i < p.in; ++i) {
              next_delta[static_cast<std::size_t>(i)] += g * wrow[i];
            }
          }
          for (int i = 0; i < layers[l].in; ++i) {
            next_delta[static_cast<std::size_t>(i)] *=
                activation_derivative(cfg.hidden_activation,
                                      zs[l - 1][static_cast<std::size_t>(i)]);
          }
          delta.swap(next_delta);
        }
      }
      if (!std::isfinite(batch_loss)) {
        throw DivergenceError("training loss became non-finite in epoch " +
                              std::to_string(epoch + 1));
      }
      for (std::size_t l = 0; l < num_layers; ++l) {
        for (std::size_t i = 0; i < layers[l].w.size(); ++i) {
          vel_w[l][i] = cfg.momentum * vel_w[l][i] - cfg.learning_rate * grad_w[l][i];
          layers[l].w[i] += vel_w[l][i];
        }
        for (std::size_t i = 0; i < layers[l].b.size(); ++i) {
          vel_b[l][i] = cfg.momentum * vel_b[l][i] - cfg.learning_rate * grad_b[l][i];
          layers[l].b[i] += vel_b[l][i];
        }
      }
    }
  }

  TrainResult result;
  result.net.input_shape = {dim};
  result.net.class_count = out_width;
  for (std::size_t l = 0; l < num_layers; ++l) {
    LayerSpec layer;
    layer.kind = LayerKind::kDense;
    layer.activation = l + 1 < num_layers ? cfg.hidden_activation
                                          : ActivationKind::kIdentity;
    layer.weight = Tensor({layers[l].out, layers[l].in}, layers[l].w);
    layer.bias = Tensor({layers[l].out}, layers[l].b);
    result.net.layers.push_back(std::move(layer));
  }
  result.train_accuracy = evaluate_accuracy(result.net, train);
  if (test) result.test_accuracy = evaluate_accuracy(result.net, *test);
  return result;
}

double evaluate_accuracy(const NetworkSpec& net, const Dataset& ds,
                         std::int64_t limit) {
  const std::int64_t total = ds.size();
  const std::int64_t count =
      limit > 0 ? std::min<std::int64_t>(limit, total) : total;
  if (count < 1) throw ValidationError("empty evaluation set");
  const std::int64_t dim = ds.images.numel() / total;
  std::int64_t correct = 0;
  Tensor sample(net.input_shape);
  if (sample.numel() != dim) {
    throw ValidationError("image size " + std::to_string(dim) +
                          " does not match network input " +
                          shape_to_string(net.input_shape));
  }
  for (std::int64_t s = 0; s < count; ++s) {
    std::copy(ds.images.data.begin() + s * dim,
              ds.images.data.begin() + (s + 1) * dim, sample.data.begin());
    const Tensor logits = forward(net, sample);
    int predicted = 0;
    if (logits.numel() == 1) {
      predicted = logits.data[0] > 0.0 ? 1 : 0;
    } else {
      for (std::int64_t o = 1; o < logits.numel(); ++o) {
        if (logits.data[static_cast<std::size_t>(o)] >
            logits.data[static_cast<std::size_t>(predicted)]) {
          predicted = static_cast<int>(o);
        }
      }
    }
    if (predicted == ds.labels[static_cast<std::size_t>(s)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(count);
}

}  // namespace fsnn
