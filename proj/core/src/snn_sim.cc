#include "fsnn/snn_sim.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsnn/error.h"

namespace fsnn {

void SpikeAccounting::merge(const SpikeAccounting& other) {
  total_spikes += other.total_spikes;
  if (per_layer.size() < other.per_layer.size()) {
    per_layer.resize(other.per_layer.size(), 0);
  }
  for (std::size_t i = 0; i < other.per_layer.size(); ++i) {
    per_layer[i] += other.per_layer[i];
  }
  neurons = std::max(neurons, other.neurons);
  images += other.images;
}

namespace {

// Per-layer bound parameters: the table entry scaled to the layer's alpha,
// resolved once so the inner loops touch no maps.
struct BoundLayer {
  bool active = false;
  FsParams params;
};

std::vector<BoundLayer> bind_params(const SnnSpec& snn) {
  std::vector<BoundLayer> bound(snn.net.layers.size());
  for (std::size_t li = 0; li < snn.net.layers.size(); ++li) {
    if (snn.net.layers[li].activation == ActivationKind::kIdentity) continue;
    bound[li].active = true;
    bound[li].params = effective_params(snn, static_cast<int>(li));
    validate_params(bound[li].params);
  }
  return bound;
}

std::int64_t activation_neuron_count(
    const std::vector<BoundLayer>& bound,
    const std::vector<std::vector<std::int64_t>>& shapes) {
  std::int64_t neurons = 0;
  for (std::size_t li = 0; li < bound.size(); ++li) {
    if (bound[li].active) neurons += Tensor::numel_of(shapes[li]);
  }
  return neurons;
}

void prepare_accounting(SpikeAccounting* acc, const NetworkSpec& net,
                        std::int64_t neurons) {
  if (!acc) return;
  if (acc->per_layer.size() != net.layers.size()) {
    acc->per_layer.assign(net.layers.size(), 0);
  }
  acc->neurons = neurons;
}

// Everything the audit mode records on top of the plain run.
struct AuditSink {
  std::vector<SpikeEvent>* events = nullptr;
  std::vector<TraceRow>* trace = nullptr;
  std::int64_t trace_limit = 0;
};

// One neuron's full k-step dynamics: start from the pre-activation, spike
// whenever the potential reaches the step threshold (boundary equality
// fires), subtract the step reset on a spike and accumulate the step output
// weight in ascending step order. This is the same statement as fs_simulate,
// repeated here so the audit hooks can observe each step without disturbing
// the arithmetic: both paths produce bit-identical decoded values.
double simulate_neuron(double x, const FsParams& p, int layer,
                       std::int64_t neuron, int stage, std::int64_t* spikes,
                       const AuditSink* audit) {
  double v = x;
  double y = 0.0;
  for (int t = 0; t < p.k; ++t) {
    const bool fire = v >= p.threshold[static_cast<std::size_t>(t)];
    if (audit && audit->trace &&
        static_cast<std::int64_t>(audit->trace->size()) < audit->trace_limit) {
      audit->trace->push_back(TraceRow{layer, neuron, t + 1, v,
                                       p.threshold[static_cast<std::size_t>(t)],
                                       fire ? 1 : 0});
    }
    if (fire) {
      v -= p.reset[static_cast<std::size_t>(t)];
      y += p.out_weight[static_cast<std::size_t>(t)];
      ++*spikes;
      if (audit && audit->events) {
        // Stage s of image 0 fires during the second half of its window:
        // global step 2k*s + k + (t-1) with t one-based.
        audit->events->push_back(
            SpikeEvent{layer, neuron, t + 1,
                       static_cast<std::int64_t>(2 * p.k) * stage + p.k + t});
      }
    }
  }
  return y;
}

// In-flight execution state of one input: the decoded outputs of every layer
// run so far (kept for residual references) plus the original input.
struct Flight {
  bool busy = false;
  std::int64_t image = -1;
  Tensor original;
  Tensor cur;
  std::vector<Tensor> outputs;
  int stage = 0;  // activation stages completed
};

// Runs layers [first, last] on one in-flight input. The layer loop matches
// the reference forward pass (same per-layer op, same accumulation order);
// activation layers replace the exact nonlinearity with the bound FS
// dynamics.
void execute_layers(const NetworkSpec& net, const std::vector<BoundLayer>& bound,
                    int first, int last, Flight* fl, SpikeAccounting* acc,
                    const AuditSink* audit) {
  for (int li = first; li <= last; ++li) {
    const LayerSpec& layer = net.layers[static_cast<std::size_t>(li)];
    Tensor out = detail::layer_op(layer, fl->cur, fl->original, fl->outputs, li);
    if (bound[static_cast<std::size_t>(li)].active) {
      const FsParams& p = bound[static_cast<std::size_t>(li)].params;
      std::int64_t spikes = 0;
      for (std::size_t j = 0; j < out.data.size(); ++j) {
        out.data[j] = simulate_neuron(out.data[j], p, li,
                                      static_cast<std::int64_t>(j), fl->stage,
                                      &spikes, audit);
      }
      if (acc) {
        acc->per_layer[static_cast<std::size_t>(li)] += spikes;
        acc->total_spikes += spikes;
      }
      ++fl->stage;
    }
    fl->outputs.push_back(out);
    fl->cur = fl->outputs.back();
  }
}

Flight start_flight(const NetworkSpec& net, const Tensor& input,
                    std::int64_t image) {
  if (input.shape != net.input_shape &&
      input.numel() != Tensor::numel_of(net.input_shape)) {
    throw ValidationError("input shape " + shape_to_string(input.shape) +
                          " does not match network input " +
                          shape_to_string(net.input_shape));
  }
  Flight fl;
  fl.busy = true;
  fl.image = image;
  fl.original = input;
  fl.original.shape = net.input_shape;
  fl.cur = fl.original;
  fl.outputs.reserve(net.layers.size());
  return fl;
}

Tensor run_one(const SnnSpec& snn, const std::vector<BoundLayer>& bound,
               const Tensor& input, SpikeAccounting* acc,
               std::vector<Tensor>* decoded, const AuditSink* audit) {
  Flight fl = start_flight(snn.net, input, 0);
  execute_layers(snn.net, bound, 0,
                 static_cast<int>(snn.net.layers.size()) - 1, &fl, acc, audit);
  if (acc) ++acc->images;
  if (decoded) *decoded = std::move(fl.outputs);
  return fl.cur;
}

}  // namespace

Tensor run_single(const SnnSpec& snn, const Tensor& input,
                  SpikeAccounting* accounting, std::vector<Tensor>* decoded) {
  const auto shapes = infer_shapes(snn.net);
  const auto bound = bind_params(snn);
  prepare_accounting(accounting, snn.net,
                     activation_neuron_count(bound, shapes));
  return run_one(snn, bound, input, accounting, decoded, nullptr);
}

Tensor run_single_audit(const SnnSpec& snn, const Tensor& input,
                        SpikeAccounting* accounting,
                        std::vector<SpikeEvent>* events,
                        std::vector<TraceRow>* trace,
                        std::int64_t trace_limit) {
  const auto shapes = infer_shapes(snn.net);
  const auto bound = bind_params(snn);
  prepare_accounting(accounting, snn.net,
                     activation_neuron_count(bound, shapes));
  AuditSink audit;
  audit.events = events;
  audit.trace = trace;
  audit.trace_limit = trace ? trace_limit : 0;
  return run_one(snn, bound, input, accounting, nullptr, &audit);
}

PipelineResult run_pipelined(const SnnSpec& snn,
                             const std::vector<Tensor>& inputs,
                             bool pad_mixed_k) {
  const NetworkSpec& net = snn.net;
  const auto shapes = infer_shapes(net);
  const auto bound = bind_params(snn);

  PipelineResult result;
  prepare_accounting(&result.accounting, net,
                     activation_neuron_count(bound, shapes));

  // Stage s covers the layers from the previous activation layer (exclusive)
  // through the s-th activation layer; anything after the last activation
  // layer is the output tail run at emergence.
  std::vector<int> stage_end;
  std::set<int> ks;
  for (std::size_t li = 0; li < bound.size(); ++li) {
    if (!bound[li].active) continue;
    stage_end.push_back(static_cast<int>(li));
    ks.insert(bound[li].params.k);
  }
  if (ks.size() > 1 && !pad_mixed_k) {
    std::string found;
    for (int k : ks) {
      if (!found.empty()) found += ", ";
      found += std::to_string(k);
    }
    throw ValidationError(
        "activation layers mix step counts {" + found +
        "}; enable padding to run every stage in a 2*k_max window");
  }
  const int stages = static_cast<int>(stage_end.size());
  const int k_max = ks.empty() ? 0 : *ks.rbegin();
  const int window = ks.empty() ? 1 : 2 * k_max;
  result.window = window;
  result.stages = stages;
  const std::int64_t n = static_cast<std::int64_t>(inputs.size());
  result.logits.resize(inputs.size());
  result.output_steps.resize(inputs.size(), 0);
  if (n == 0) return result;

  if (stages == 0) {
    // No spiking stages: each input passes straight through its window.
    for (std::int64_t i = 0; i < n; ++i) {
      Flight fl = start_flight(net, inputs[static_cast<std::size_t>(i)], i);
      execute_layers(net, bound, 0, static_cast<int>(net.layers.size()) - 1,
                     &fl, &result.accounting, nullptr);
      result.logits[static_cast<std::size_t>(i)] = fl.cur;
      result.output_steps[static_cast<std::size_t>(i)] = window * i;
    }
    result.accounting.images = n;
    result.total_steps = window * (n - 1);
    return result;
  }

  const int last_layer = static_cast<int>(net.layers.size()) - 1;
  // slots[s] holds the image about to run stage s; slots[stages] holds a
  // finished pipeline body waiting for the output tail.
  std::vector<Flight> slots(static_cast<std::size_t>(stages) + 1);
  result.total_steps = static_cast<std::int64_t>(window) * (n - 1 + stages);

  // The global clock advances in unit steps; all admissions, stage runs and
  // emissions happen on window boundaries.
  for (std::int64_t step = 0; step <= result.total_steps; ++step) {
    if (step % window != 0) continue;
    const std::int64_t w = step / window;

    // Emit the image that completed its last stage in the previous window.
    Flight& done = slots[static_cast<std::size_t>(stages)];
    if (done.busy) {
      if (stage_end.back() < last_layer) {
        execute_layers(net, bound, stage_end.back() + 1, last_layer, &done,
                       &result.accounting, nullptr);
      }
      result.logits[static_cast<std::size_t>(done.image)] = done.cur;
      result.output_steps[static_cast<std::size_t>(done.image)] = step;
      done = Flight{};
    }

    // Admit input w while earlier images advance one stage each; running the
    // deepest stage first frees each slot before its predecessor fills it.
    if (w < n) {
      slots[0] = start_flight(net, inputs[static_cast<std::size_t>(w)], w);
    }
    for (int s = stages - 1; s >= 0; --s) {
      Flight& fl = slots[static_cast<std::size_t>(s)];
      if (!fl.busy) continue;
      const int first = s == 0 ? 0 : stage_end[static_cast<std::size_t>(s - 1)] + 1;
      execute_layers(net, bound, first, stage_end[static_cast<std::size_t>(s)],
                     &fl, &result.accounting, nullptr);
      slots[static_cast<std::size_t>(s) + 1] = std::move(fl);
      fl = Flight{};
    }
  }
  result.accounting.images = n;
  return result;
}

ParityReport compare_with_ann(const NetworkSpec& net, const SnnSpec& snn,
                              const Dataset& ds, std::int64_t limit) {
  const auto shapes = infer_shapes(net);
  if (ds.size() == 0) throw ValidationError("dataset is empty");
  const std::int64_t n =
      limit < 0 ? ds.size() : std::min<std::int64_t>(limit, ds.size());
  const std::int64_t per = ds.images.numel() / ds.size();
  if (per != Tensor::numel_of(net.input_shape)) {
    throw ValidationError("dataset sample size " + std::to_string(per) +
                          " does not match network input " +
                          shape_to_string(net.input_shape));
  }

  ParityReport report;
  report.per_layer_max_delta.assign(net.layers.size(), 0.0);
  std::int64_t ann_hits = 0;
  std::int64_t snn_hits = 0;
  std::int64_t relu_values = 0;
  std::int64_t relu_saturated = 0;

  auto argmax = [](const Tensor& t) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < t.data.size(); ++i) {
      if (t.data[i] > t.data[best]) best = i;
    }
    return static_cast<int>(best);
  };

  std::vector<Tensor> preacts;
  std::vector<Tensor> decoded;
  for (std::int64_t s = 0; s < n; ++s) {
    Tensor sample(net.input_shape);
    std::copy(ds.images.data.begin() + s * per,
              ds.images.data.begin() + (s + 1) * per, sample.data.begin());

    const Tensor ann_logits = forward(net, sample, &preacts);
    const Tensor snn_logits = run_single(snn, sample, &report.accounting,
                                         &decoded);

    const int label = ds.labels[static_cast<std::size_t>(s)];
    if (argmax(ann_logits) == label) ++ann_hits;
    if (argmax(snn_logits) == label) ++snn_hits;

    for (std::size_t i = 0; i < ann_logits.data.size(); ++i) {
      report.max_logit_delta = std::max(
          report.max_logit_delta, std::abs(ann_logits.data[i] - snn_logits.data[i]));
    }

    for (std::size_t li = 0; li < net.layers.size(); ++li) {
      const ActivationKind act = net.layers[li].activation;
      const Tensor& pre = preacts[li];
      if (pre.data.empty()) continue;
      double worst = report.per_layer_max_delta[li];
      for (std::size_t i = 0; i < pre.data.size(); ++i) {
        const double exact = eval_activation(act, pre.data[i]);
        worst = std::max(worst, std::abs(exact - decoded[li].data[i]));
      }
      report.per_layer_max_delta[li] = worst;
      if (act == ActivationKind::kRelu) {
        const double alpha = snn.layer_alpha[li];
        relu_values += static_cast<std::int64_t>(pre.data.size());
        for (double v : pre.data) {
          if (v >= alpha) ++relu_saturated;
        }
      }
    }
  }

  report.images = n;
  report.ann_accuracy = static_cast<double>(ann_hits) / static_cast<double>(n);
  report.snn_accuracy = static_cast<double>(snn_hits) / static_cast<double>(n);
  report.saturation_rate =
      relu_values == 0 ? 0.0
                       : static_cast<double>(relu_saturated) /
                             static_cast<double>(relu_values);
  return report;
}

std::string parity_report_to_json_text(const ParityReport& report) {
  nlohmann::json j;
  j["images"] = report.images;
  j["ann_accuracy"] = report.ann_accuracy;
  j["snn_accuracy"] = report.snn_accuracy;
  j["accuracy_delta_pp"] =
      (report.ann_accuracy - report.snn_accuracy) * 100.0;
  j["max_logit_delta"] = report.max_logit_delta;
  j["per_layer_max_delta"] = report.per_layer_max_delta;
  j["saturation_rate"] = report.saturation_rate;
  j["spikes"]["total"] = report.accounting.total_spikes;
  j["spikes"]["per_layer"] = report.accounting.per_layer;
  j["spikes"]["neurons_per_image"] = report.accounting.neurons;
  j["spikes"]["per_neuron_per_image"] =
      report.accounting.spikes_per_neuron_per_image();
  return j.dump(2) + "\n";
}

std::string events_to_csv(const std::vector<SpikeEvent>& events) {
  std::string csv = "global_step,layer,neuron_index,spike\n";
  char line[96];
  for (const SpikeEvent& e : events) {
    std::snprintf(line, sizeof(line), "%lld,%d,%lld,1\n",
                  static_cast<long long>(e.global_step), e.layer,
                  static_cast<long long>(e.neuron));
    csv += line;
  }
  return csv;
}

std::string trace_to_csv(const std::vector<TraceRow>& rows) {
  std::string csv = "layer,neuron_index,step,potential,threshold,spike\n";
  char line[160];
  for (const TraceRow& r : rows) {
    std::snprintf(line, sizeof(line), "%d,%lld,%d,%.17g,%.17g,%d\n", r.layer,
                  static_cast<long long>(r.neuron), r.step, r.potential,
                  r.threshold, r.spike);
    csv += line;
  }
  return csv;
}

}  // namespace fsnn
