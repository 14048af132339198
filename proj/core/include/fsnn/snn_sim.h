#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsnn/convert.h"
#include "fsnn/dataset.h"

namespace fsnn {

// Spike totals over one or more executed inputs. Only activation-layer
// neurons spike; affine arithmetic is not counted. `per_layer` is aligned
// with the network layer list (zero for non-activation layers).
struct SpikeAccounting {
  std::int64_t total_spikes = 0;
  std::vector<std::int64_t> per_layer;
  std::int64_t neurons = 0;  // activation neurons per input
  std::int64_t images = 0;

  double spikes_per_neuron_per_image() const {
    if (neurons == 0 || images == 0) return 0.0;
    return static_cast<double>(total_spikes) /
           (static_cast<double>(neurons) * static_cast<double>(images));
  }
  void merge(const SpikeAccounting& other);
};

// One spike in the event-exact execution mode. `step` is the neuron's
// internal step t in 1..k; `global_step` places it on the pipeline clock
// (stage s of image i fires during the second half of its window, at
// 2k*(i+s) + k + (t-1)).
struct SpikeEvent {
  int layer = 0;
  std::int64_t neuron = 0;
  int step = 0;
  std::int64_t global_step = 0;
};

// Per-step membrane record of one neuron, for trace dumps.
struct TraceRow {
  int layer = 0;
  std::int64_t neuron = 0;
  int step = 0;          // t in 1..k
  double potential = 0.0;
  double threshold = 0.0;
  int spike = 0;
};

// Executes the converted network on one input, layer-synchronously: each
// activation layer runs every neuron's k-step dynamics on the affine
// pre-activation of decoded upstream values; downstream layers consume the
// decoded spike sums. Residual adds operate on decoded values. Logits are
// the final affine outputs. `decoded` (optional) receives each layer's
// post-activation output for parity diagnostics.
Tensor run_single(const SnnSpec& snn, const Tensor& input,
                  SpikeAccounting* accounting = nullptr,
                  std::vector<Tensor>* decoded = nullptr);

// Event-exact audit mode: identical arithmetic to run_single (bit-identical
// logits), but every neuron's spike list is materialized and each upstream
// decoded value is reconstructed from its own spike train before use.
// `events` and `trace` may be null; `trace_limit` caps TraceRow output
// (<= 0 means no rows).
Tensor run_single_audit(const SnnSpec& snn, const Tensor& input,
                        SpikeAccounting* accounting,
                        std::vector<SpikeEvent>* events,
                        std::vector<TraceRow>* trace = nullptr,
                        std::int64_t trace_limit = 0);

struct PipelineResult {
  std::vector<Tensor> logits;             // one per input, input order
  SpikeAccounting accounting;
  int window = 0;                         // 2k steps between admissions
  int stages = 0;                         // number of activation stages
  std::vector<std::int64_t> output_steps; // global step each output emerged
  std::int64_t total_steps = 0;
};

// Staged execution with a global unit-step clock: input i is admitted at
// step window*i, each activation stage occupies one full window (k collect +
// k fire steps), and input i's logits emerge at step window*(i + stages).
// Outputs are bit-identical to run_single per input; steady state emits one
// output per window. All activation layers must share one k unless
// `pad_mixed_k` is set, in which case shorter neurons idle for the rest of a
// window sized by the largest k.
PipelineResult run_pipelined(const SnnSpec& snn,
                             const std::vector<Tensor>& inputs,
                             bool pad_mixed_k = false);

struct ParityReport {
  double ann_accuracy = 0.0;
  double snn_accuracy = 0.0;
  double max_logit_delta = 0.0;
  std::vector<double> per_layer_max_delta;  // aligned with layers
  SpikeAccounting accounting;
  std::int64_t images = 0;
  double saturation_rate = 0.0;  // fraction of relu pre-activations >= alpha
};

// Evaluates the source network and its conversion on the same samples and
// reports accuracies, worst logit delta, per-layer worst decoded-vs-exact
// delta, spike statistics and the relu saturation rate.
ParityReport compare_with_ann(const NetworkSpec& net, const SnnSpec& snn,
                              const Dataset& ds, std::int64_t limit = -1);

std::string parity_report_to_json_text(const ParityReport& report);

// Event CSV: header global_step,layer,neuron_index,spike.
std::string events_to_csv(const std::vector<SpikeEvent>& events);

// Trace CSV: header layer,neuron_index,step,potential,threshold,spike.
std::string trace_to_csv(const std::vector<TraceRow>& rows);

}  // namespace fsnn
