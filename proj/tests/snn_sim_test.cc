#include "fsnn/snn_sim.h"

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "fsnn/convert.h"
#include "fsnn/error.h"
#include "fsnn/fs_neuron.h"
#include "fsnn/network.h"
#include "fsnn/rng.h"
#include "test_util.h"

using fsnn::ActivationKind;
using fsnn::Dataset;
using fsnn::FsParams;
using fsnn::LayerKind;
using fsnn::LayerSpec;
using fsnn::NetworkSpec;
using fsnn::PipelineResult;
using fsnn::Rng;
using fsnn::SnnSpec;
using fsnn::SpikeAccounting;
using fsnn::SpikeEvent;
using fsnn::Tensor;
using fsnn::TraceRow;
using fsnn::ValidationError;

namespace {

Tensor random_tensor(Rng* rng, std::vector<std::int64_t> shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng->uniform(-1.0, 1.0);
  return t;
}

LayerSpec dense_layer(Rng* rng, std::int64_t out, std::int64_t in,
                      ActivationKind act) {
  LayerSpec layer;
  layer.kind = LayerKind::kDense;
  layer.activation = act;
  layer.weight = random_tensor(rng, {out, in});
  layer.bias = random_tensor(rng, {out});
  return layer;
}

// relu MLP 4 -> 6 -> 5 -> 3 converted at a fixed scale.
SnnSpec converted_mlp(Rng* rng, int k, double alpha, NetworkSpec* net_out) {
  NetworkSpec net;
  net.input_shape = {4};
  net.layers.push_back(dense_layer(rng, 6, 4, ActivationKind::kRelu));
  net.layers.push_back(dense_layer(rng, 5, 6, ActivationKind::kRelu));
  net.layers.push_back(dense_layer(rng, 3, 5, ActivationKind::kIdentity));
  std::map<std::string, FsParams> table;
  table["relu"] = fsnn::make_relu_params(k, 1.0);
  const std::vector<double> alphas = {alpha, alpha, std::nan("")};
  if (net_out) *net_out = net;
  return fsnn::convert(net, table, alphas);
}

// Naive re-execution: affine layer then per-neuron spiking decode, both in
// the same arithmetic order the library documents.
Tensor naive_spiking_forward(const SnnSpec& snn, const Tensor& input) {
  Tensor cur = input;
  for (std::size_t li = 0; li < snn.net.layers.size(); ++li) {
    const LayerSpec& l = snn.net.layers[li];
    REQUIRE(l.kind == LayerKind::kDense);
    const std::int64_t rows = l.weight.shape[0];
    const std::int64_t cols = l.weight.shape[1];
    Tensor out({rows});
    for (std::int64_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::int64_t c = 0; c < cols; ++c) {
        acc += l.weight.data[static_cast<std::size_t>(r * cols + c)] *
               cur.data[static_cast<std::size_t>(c)];
      }
      out.data[static_cast<std::size_t>(r)] =
          acc + l.bias.data[static_cast<std::size_t>(r)];
    }
    if (l.activation != ActivationKind::kIdentity) {
      const FsParams p = fsnn::effective_params(snn, static_cast<int>(li));
      for (double& v : out.data) v = fsnn::fs_simulate(v, p).value;
    }
    cur = out;
  }
  return cur;
}

}  // namespace

TEST_CASE("a purely affine network runs through unchanged with zero spikes") {
  Rng rng(3);
  NetworkSpec net;
  net.input_shape = {5};
  net.layers.push_back(dense_layer(&rng, 4, 5, ActivationKind::kIdentity));
  net.layers.push_back(dense_layer(&rng, 3, 4, ActivationKind::kIdentity));
  const SnnSpec snn = fsnn::convert(net, {}, {std::nan(""), std::nan("")});

  const Tensor x = random_tensor(&rng, {5});
  SpikeAccounting acc;
  const Tensor logits = fsnn::run_single(snn, x, &acc);
  const Tensor reference = fsnn::forward(net, x);
  CHECK(logits.data == reference.data);
  CHECK(acc.total_spikes == 0);
  CHECK(acc.neurons == 0);
}

TEST_CASE("run_single equals a per-neuron decode done by hand") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    NetworkSpec net;
    const SnnSpec snn = converted_mlp(&rng, 8, 4.0, &net);
    const Tensor x = random_tensor(&rng, {4});
    const Tensor logits = fsnn::run_single(snn, x);
    const Tensor expected = naive_spiking_forward(snn, x);
    CHECK(logits.data == expected.data);  // same arithmetic, same bits
  }
}

TEST_CASE("decoded layer outputs quantize to the relu grid") {
  Rng rng(9);
  const SnnSpec snn = converted_mlp(&rng, 6, 2.0, nullptr);
  const Tensor x = random_tensor(&rng, {4});
  std::vector<Tensor> decoded;
  fsnn::run_single(snn, x, nullptr, &decoded);
  REQUIRE(decoded.size() == 3);
  const double grid = 2.0 * std::ldexp(1.0, -6);
  for (int li : {0, 1}) {
    for (double v : decoded[static_cast<std::size_t>(li)].data) {
      CHECK(v >= 0.0);
      const double steps = v / grid;
      CHECK(std::abs(steps - std::round(steps)) <= 1e-9);
    }
  }
}

TEST_CASE("audit mode is bit-identical and materializes every spike") {
  Rng rng(11);
  const SnnSpec snn = converted_mlp(&rng, 8, 4.0, nullptr);
  const Tensor x = random_tensor(&rng, {4});

  SpikeAccounting plain_acc, audit_acc;
  const Tensor plain = fsnn::run_single(snn, x, &plain_acc);
  std::vector<SpikeEvent> events;
  const Tensor audited = fsnn::run_single_audit(snn, x, &audit_acc, &events);

  CHECK(audited.data == plain.data);
  CHECK(audit_acc.total_spikes == plain_acc.total_spikes);
  CHECK(static_cast<std::int64_t>(events.size()) == plain_acc.total_spikes);

  // Event timestamps follow the staged clock: stage s of the one admitted
  // image fires at global step 2k*s + k + (t-1).
  const int k = 8;
  for (const SpikeEvent& ev : events) {
    CHECK(ev.step >= 1);
    CHECK(ev.step <= k);
    const int stage = ev.layer == 0 ? 0 : 1;
    CHECK(ev.global_step == 2 * k * stage + k + (ev.step - 1));
  }
}

TEST_CASE("audit events reconstruct each neuron's decoded output") {
  Rng rng(13);
  const SnnSpec snn = converted_mlp(&rng, 8, 4.0, nullptr);
  const Tensor x = random_tensor(&rng, {4});

  std::vector<Tensor> decoded;
  fsnn::run_single(snn, x, nullptr, &decoded);
  std::vector<SpikeEvent> events;
  fsnn::run_single_audit(snn, x, nullptr, &events);

  // Sum d(t) over each neuron's events and compare with the decoded tensor.
  std::map<std::pair<int, std::int64_t>, double> sums;
  for (const SpikeEvent& ev : events) {
    const FsParams p = fsnn::effective_params(snn, ev.layer);
    sums[{ev.layer, ev.neuron}] +=
        p.out_weight[static_cast<std::size_t>(ev.step - 1)];
  }
  for (int li : {0, 1}) {
    const Tensor& dec = decoded[static_cast<std::size_t>(li)];
    for (std::int64_t n = 0; n < dec.numel(); ++n) {
      const auto it = sums.find({li, n});
      const double from_events = it == sums.end() ? 0.0 : it->second;
      CHECK(from_events ==
            doctest::Approx(dec.data[static_cast<std::size_t>(n)])
                .epsilon(1e-12));
    }
  }
}

TEST_CASE("pipelined execution is bit-identical on streams of 1 to 16") {
  Rng rng(17);
  NetworkSpec net;
  const SnnSpec snn = converted_mlp(&rng, 10, 4.0, &net);

  for (int n : {1, 2, 3, 8, 16}) {
    std::vector<Tensor> inputs;
    for (int i = 0; i < n; ++i) inputs.push_back(random_tensor(&rng, {4}));
    const PipelineResult res = fsnn::run_pipelined(snn, inputs);

    REQUIRE(res.logits.size() == static_cast<std::size_t>(n));
    CHECK(res.window == 20);  // 2k
    CHECK(res.stages == 2);
    CHECK(res.total_steps == 20 * (n - 1 + 2));
    for (int i = 0; i < n; ++i) {
      const Tensor one = fsnn::run_single(snn, inputs[static_cast<std::size_t>(i)]);
      CHECK(res.logits[static_cast<std::size_t>(i)].data == one.data);
      // One output per window once the pipeline is full.
      CHECK(res.output_steps[static_cast<std::size_t>(i)] == 20 * (i + 2));
    }
  }
}

TEST_CASE("pipelined spike totals match sequential execution") {
  Rng rng(19);
  const SnnSpec snn = converted_mlp(&rng, 8, 4.0, nullptr);
  std::vector<Tensor> inputs;
  for (int i = 0; i < 5; ++i) inputs.push_back(random_tensor(&rng, {4}));

  SpikeAccounting sequential;
  for (const Tensor& x : inputs) {
    SpikeAccounting one;
    fsnn::run_single(snn, x, &one);
    sequential.merge(one);
  }
  const PipelineResult res = fsnn::run_pipelined(snn, inputs);
  CHECK(res.accounting.total_spikes == sequential.total_spikes);
  CHECK(res.accounting.per_layer == sequential.per_layer);
  CHECK(res.accounting.images == 5);
  CHECK(res.accounting.neurons == sequential.neurons);
}

TEST_CASE("mixed per-stage step counts need explicit padding") {
  Rng rng(23);
  NetworkSpec net;
  net.input_shape = {4};
  net.layers.push_back(dense_layer(&rng, 6, 4, ActivationKind::kRelu));
  net.layers.push_back(dense_layer(&rng, 5, 6, ActivationKind::kSilu));
  net.layers.push_back(dense_layer(&rng, 3, 5, ActivationKind::kIdentity));

  FsParams silu;
  silu.k = 4;
  silu.threshold = {1.0, 0.5, 0.25, 0.125};
  silu.reset = {1.0, 0.5, 0.25, 0.125};
  silu.out_weight = {1.0, 0.5, 0.25, 0.125};
  silu.activation = ActivationKind::kSilu;
  std::map<std::string, FsParams> table;
  table["relu"] = fsnn::make_relu_params(8, 1.0);
  table["silu"] = silu;
  const SnnSpec snn =
      fsnn::convert(net, table, {4.0, std::nan(""), std::nan("")});

  std::vector<Tensor> inputs = {random_tensor(&rng, {4}),
                                random_tensor(&rng, {4})};
  testutil::expect_error_containing<ValidationError>(
      [&] { fsnn::run_pipelined(snn, inputs); }, "mix step counts {4, 8}");

  const PipelineResult res = fsnn::run_pipelined(snn, inputs, true);
  CHECK(res.window == 16);  // 2 * k_max
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    CHECK(res.logits[i].data == fsnn::run_single(snn, inputs[i]).data);
  }
}

TEST_CASE("a network with no activation stages streams straight through") {
  Rng rng(29);
  NetworkSpec net;
  net.input_shape = {5};
  net.layers.push_back(dense_layer(&rng, 3, 5, ActivationKind::kIdentity));
  const SnnSpec snn = fsnn::convert(net, {}, {std::nan("")});

  std::vector<Tensor> inputs = {random_tensor(&rng, {5}),
                                random_tensor(&rng, {5}),
                                random_tensor(&rng, {5})};
  const PipelineResult res = fsnn::run_pipelined(snn, inputs);
  CHECK(res.stages == 0);
  CHECK(res.window == 1);
  REQUIRE(res.logits.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(res.logits[i].data == fsnn::forward(net, inputs[i]).data);
  }
}

TEST_CASE("trace rows expose the membrane recurrence of a known neuron") {
  // One relu neuron with unit weight: k = 3, alpha = 8 gives thresholds
  // 4, 2, 1. Input 5 spikes at t=1 (5 >= 4), skips t=2 (1 < 2), spikes at
  // t=3 (1 >= 1): train 101, decoded 4 + 1 = 5.
  NetworkSpec net;
  net.input_shape = {1};
  LayerSpec l;
  l.kind = LayerKind::kDense;
  l.activation = ActivationKind::kRelu;
  l.weight = Tensor({1, 1}, {1.0});
  l.bias = Tensor({1}, {0.0});
  net.layers.push_back(l);
  std::map<std::string, FsParams> table;
  table["relu"] = fsnn::make_relu_params(3, 1.0);
  const SnnSpec snn = fsnn::convert(net, table, {8.0});

  std::vector<SpikeEvent> events;
  std::vector<TraceRow> trace;
  const Tensor logits = fsnn::run_single_audit(snn, Tensor({1}, {5.0}),
                                               nullptr, &events, &trace, 100);
  CHECK(logits.data == std::vector<double>{5.0});

  REQUIRE(trace.size() == 3);
  CHECK(trace[0].potential == 5.0);
  CHECK(trace[0].threshold == 4.0);
  CHECK(trace[0].spike == 1);
  CHECK(trace[1].potential == 1.0);
  CHECK(trace[1].threshold == 2.0);
  CHECK(trace[1].spike == 0);
  CHECK(trace[2].potential == 1.0);
  CHECK(trace[2].threshold == 1.0);
  CHECK(trace[2].spike == 1);

  REQUIRE(events.size() == 2);
  CHECK(events[0].global_step == 3);  // k + (1-1) with k=3, stage 0
  CHECK(events[1].global_step == 5);  // k + (3-1)

  // trace_limit 0 suppresses row collection entirely.
  std::vector<TraceRow> none;
  fsnn::run_single_audit(snn, Tensor({1}, {5.0}), nullptr, nullptr, &none, 0);
  CHECK(none.empty());
}

TEST_CASE("spike event and trace CSV layouts are stable") {
  const std::vector<SpikeEvent> events = {{0, 7, 1, 10}, {1, 2, 3, 28}};
  const std::string csv = fsnn::events_to_csv(events);
  CHECK(csv ==
        "global_step,layer,neuron_index,spike\n"
        "10,0,7,1\n"
        "28,1,2,1\n");

  const std::vector<TraceRow> rows = {{0, 7, 1, 5.0, 4.0, 1}};
  const std::string tcsv = fsnn::trace_to_csv(rows);
  CHECK(tcsv.rfind("layer,neuron_index,step,potential,threshold,spike\n", 0) ==
        0);
  CHECK(tcsv.find("0,7,1,5,4,1") != std::string::npos);
}

TEST_CASE("accounting merges across runs") {
  SpikeAccounting a;
  a.total_spikes = 10;
  a.per_layer = {4, 6};
  a.neurons = 11;
  a.images = 1;
  SpikeAccounting b;
  b.total_spikes = 5;
  b.per_layer = {2, 3};
  b.neurons = 11;
  b.images = 2;
  a.merge(b);
  CHECK(a.total_spikes == 15);
  CHECK(a.per_layer == std::vector<std::int64_t>{6, 9});
  CHECK(a.images == 3);
  CHECK(a.spikes_per_neuron_per_image() == doctest::Approx(15.0 / 33.0));
}

TEST_CASE("parity comparison sees an exactly represented network as equal") {
  Rng rng(31);

  // Integer weights and grid-aligned inputs/biases keep every
  // pre-activation on the grid alpha * 2^-k (an integer combination of grid
  // points stays on the grid), so the spiking pass reproduces the float
  // pass exactly.
  NetworkSpec net;
  net.input_shape = {4};
  LayerSpec l1 = dense_layer(&rng, 6, 4, ActivationKind::kRelu);
  LayerSpec l2 = dense_layer(&rng, 3, 6, ActivationKind::kIdentity);
  const int k = 10;
  const double alpha = 16.0;
  const double grid = alpha * std::ldexp(1.0, -k);
  auto to_int = [](Tensor* t) {
    for (double& v : t->data) v = std::round(v * 2.0);
  };
  auto snap = [&](Tensor* t) {
    for (double& v : t->data) v = std::round(v / grid) * grid;
  };
  to_int(&l1.weight);
  snap(&l1.bias);
  to_int(&l2.weight);
  snap(&l2.bias);
  net.layers.push_back(l1);
  net.layers.push_back(l2);

  std::map<std::string, FsParams> table;
  table["relu"] = fsnn::make_relu_params(k, 1.0);
  const SnnSpec snn = fsnn::convert(net, table, {alpha, std::nan("")});

  Dataset ds;
  ds.name = "inline";
  ds.class_count = 3;
  ds.images = Tensor({6, 4});
  for (double& v : ds.images.data) {
    v = std::round(rng.uniform(0.0, 1.0) / grid) * grid;
  }
  ds.labels = {0, 1, 2, 0, 1, 2};

  const fsnn::ParityReport report = fsnn::compare_with_ann(net, snn, ds);
  CHECK(report.images == 6);
  CHECK(report.ann_accuracy == report.snn_accuracy);
  CHECK(report.saturation_rate == 0.0);
  REQUIRE(report.per_layer_max_delta.size() == 2);
  // Grid-aligned arithmetic: the decoded relu output is exact, so the only
  // deltas come from float rounding inside the dot products.
  CHECK(report.max_logit_delta <= 1e-9);

  const nlohmann::json j =
      nlohmann::json::parse(fsnn::parity_report_to_json_text(report));
  CHECK(j.contains("ann_accuracy"));
  CHECK(j.contains("snn_accuracy"));
  CHECK(j.contains("accuracy_delta_pp"));
  CHECK(j.contains("max_logit_delta"));
  CHECK(j.contains("per_layer_max_delta"));
  CHECK(j.contains("saturation_rate"));
  CHECK(j.contains("spikes"));
  CHECK(j["spikes"].contains("per_neuron_per_image"));
  CHECK(j["images"] == 6);

  testutil::expect_error_containing<ValidationError>(
      [&] {
        Dataset empty;
        empty.images = Tensor({0, 4});
        fsnn::compare_with_ann(net, snn, empty);
      },
      "dataset is empty");
}

TEST_CASE("run_single validates the input shape") {
  Rng rng(37);
  const SnnSpec snn = converted_mlp(&rng, 6, 4.0, nullptr);
  testutil::expect_error_containing<ValidationError>(
      [&] { fsnn::run_single(snn, Tensor({5})); }, "input shape");
}

TEST_CASE("saturation is counted when pre-activations exceed the scale") {
  Rng rng(41);
  NetworkSpec net;
  net.input_shape = {2};
  LayerSpec l;
  l.kind = LayerKind::kDense;
  l.activation = ActivationKind::kRelu;
  l.weight = Tensor({1, 2}, {1.0, 1.0});
  l.bias = Tensor({1}, {0.0});
  net.layers.push_back(l);
  LayerSpec out;
  out.kind = LayerKind::kDense;
  out.activation = ActivationKind::kIdentity;
  out.weight = Tensor({2, 1}, {1.0, -1.0});
  out.bias = Tensor({2}, {0.0, 0.0});
  net.layers.push_back(out);

  std::map<std::string, FsParams> table;
  table["relu"] = fsnn::make_relu_params(4, 1.0);
  // Scale of 1: inputs summing past 1 saturate the gate.
  const SnnSpec snn = fsnn::convert(net, table, {1.0, std::nan("")});

  Dataset ds;
  ds.class_count = 2;
  ds.images = Tensor({2, 2}, {0.9, 0.9, 0.1, 0.2});  // first sample saturates
  ds.labels = {0, 0};
  const fsnn::ParityReport report = fsnn::compare_with_ann(net, snn, ds);
  CHECK(report.saturation_rate == doctest::Approx(0.5));
}
