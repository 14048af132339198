// Command-line front end: fit FS parameters, convert trained networks, run
// and compare the spiking executor, sweep approximation quality, dump spike
// traces, train small MLPs and materialize synthetic datasets. Every command
// is deterministic given its flags; reports embed the resolved configuration
// and all file outputs are written atomically.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fsnn/convert.h"
#include "fsnn/dataset.h"
#include "fsnn/error.h"
#include "fsnn/fs_fit.h"
#include "fsnn/fs_neuron.h"
#include "fsnn/io_util.h"
#include "fsnn/network.h"
#include "fsnn/rng.h"
#include "fsnn/snn_sim.h"
#include "fsnn/train.h"

namespace {

using json = nlohmann::json;

class WallTimer {
 public:
  WallTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

std::vector<int> parse_int_list(const std::string& text, const char* what) {
  std::vector<int> values;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string item = text.substr(pos, comma - pos);
    try {
      std::size_t used = 0;
      values.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw fsnn::ValidationError(std::string(what) + ": \"" + item +
                                  "\" is not an integer");
    }
    pos = comma + 1;
  }
  if (values.empty()) {
    throw fsnn::ValidationError(std::string(what) + " must not be empty");
  }
  return values;
}

fsnn::Region parse_region(const std::string& text) {
  // lo:hi or lo:hi:weight
  std::vector<double> parts;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t colon = std::min(text.find(':', pos), text.size());
    try {
      parts.push_back(std::stod(text.substr(pos, colon - pos)));
    } catch (const std::exception&) {
      throw fsnn::ValidationError("region \"" + text +
                                  "\" must be lo:hi or lo:hi:weight");
    }
    pos = colon + 1;
  }
  if (parts.size() != 2 && parts.size() != 3) {
    throw fsnn::ValidationError("region \"" + text +
                                "\" must be lo:hi or lo:hi:weight");
  }
  fsnn::Region r;
  r.lo = parts[0];
  r.hi = parts[1];
  r.weight = parts.size() == 3 ? parts[2] : 1.0;
  if (!(r.lo < r.hi)) {
    throw fsnn::ValidationError("region \"" + text + "\" needs lo < hi");
  }
  return r;
}

fsnn::AlphaPolicy parse_alpha(const std::string& text) {
  fsnn::AlphaPolicy policy;
  if (text == "calibrate") {
    policy.kind = fsnn::AlphaPolicy::Kind::kPerLayerMax;
    return policy;
  }
  if (text.rfind("fixed:", 0) == 0) {
    policy.kind = fsnn::AlphaPolicy::Kind::kGlobalFixed;
    try {
      policy.value = std::stod(text.substr(6));
    } catch (const std::exception&) {
      throw fsnn::ValidationError("--alpha fixed:<value> needs a number, got \"" +
                                  text + "\"");
    }
    return policy;
  }
  throw fsnn::ValidationError("--alpha must be fixed:<value> or calibrate, got \"" +
                              text + "\"");
}

fsnn::Dataset subset(const fsnn::Dataset& ds, std::int64_t count) {
  if (count < 0 || count >= ds.size()) return ds;
  const std::int64_t per = ds.images.numel() / ds.size();
  fsnn::Dataset out;
  out.name = ds.name;
  out.normalization = ds.normalization;
  out.class_count = ds.class_count;
  std::vector<std::int64_t> shape = ds.images.shape;
  shape[0] = count;
  out.images = fsnn::Tensor(shape);
  std::copy(ds.images.data.begin(), ds.images.data.begin() + count * per,
            out.images.data.begin());
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + count);
  return out;
}

fsnn::Tensor sample_tensor(const fsnn::Dataset& ds, std::int64_t index,
                           const std::vector<std::int64_t>& input_shape) {
  if (index < 0 || index >= ds.size()) {
    throw fsnn::ValidationError("--index " + std::to_string(index) +
                                " out of range for " + std::to_string(ds.size()) +
                                " samples");
  }
  const std::int64_t per = ds.images.numel() / ds.size();
  if (per != fsnn::Tensor::numel_of(input_shape)) {
    throw fsnn::ValidationError("dataset sample size " + std::to_string(per) +
                                " does not match network input " +
                                fsnn::shape_to_string(input_shape));
  }
  fsnn::Tensor t(input_shape);
  std::copy(ds.images.data.begin() + index * per,
            ds.images.data.begin() + (index + 1) * per, t.data.begin());
  return t;
}

fsnn::Tensor batch_tensor(const fsnn::Dataset& ds, std::int64_t count) {
  const std::int64_t n = std::min<std::int64_t>(count, ds.size());
  const std::int64_t per = ds.images.numel() / ds.size();
  fsnn::Tensor batch({n, per});
  std::copy(ds.images.data.begin(), ds.images.data.begin() + n * per,
            batch.data.begin());
  return batch;
}

std::int64_t count_parameters(const fsnn::NetworkSpec& net) {
  std::int64_t total = 0;
  for (const fsnn::LayerSpec& layer : net.layers) {
    total += layer.weight.numel() + layer.bias.numel() + layer.bn_mean.numel() +
             layer.bn_var.numel() + layer.bn_scale.numel() +
             layer.bn_shift.numel();
  }
  return total;
}

std::int64_t count_activation_neurons(const fsnn::NetworkSpec& net) {
  const auto shapes = fsnn::infer_shapes(net);
  std::int64_t total = 0;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    if (net.layers[li].activation != fsnn::ActivationKind::kIdentity) {
      total += fsnn::Tensor::numel_of(shapes[li]);
    }
  }
  return total;
}

json accounting_json(const fsnn::SpikeAccounting& acc) {
  json j;
  j["total"] = acc.total_spikes;
  j["per_layer"] = acc.per_layer;
  j["neurons_per_image"] = acc.neurons;
  j["per_neuron_per_image"] = acc.spikes_per_neuron_per_image();
  return j;
}

void emit_report(const json& report, const std::string& out_path) {
  const std::string text = report.dump(2) + "\n";
  if (!out_path.empty()) {
    fsnn::atomic_write_text(out_path, text);
  }
  std::cout << text;
}

void emit_csv(const std::string& csv, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << csv;
  } else {
    fsnn::atomic_write_text(out_path, csv);
  }
}

int argmax_of(const fsnn::Tensor& t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.data.size(); ++i) {
    if (t.data[i] > t.data[best]) best = i;
  }
  return static_cast<int>(best);
}

// ---------------------------------------------------------------------------
// fit

struct FitOptions {
  std::string config;
  std::string out;
  std::int64_t seed = -1;  // < 0: use the seed from the config file
};

void cmd_fit(const FitOptions& opt) {
  fsnn::FitConfig cfg = fsnn::load_fit_config(opt.config);
  if (opt.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opt.seed);
  if (cfg.target == fsnn::ActivationKind::kRelu) {
    std::cerr << "warning: relu has an exact analytic construction "
                 "(make_relu_params / convert --k); a gradient fit is only "
                 "useful for experiments\n";
  }

  const WallTimer timer;
  const fsnn::FitResult result = fsnn::fit(cfg.target, cfg);
  fsnn::save_fs_params(result.params, opt.out);

  json report;
  report["config"] = json::parse(fsnn::fit_config_to_json_text(cfg));
  report["params_path"] = opt.out;
  report["weighted_mse"] = result.weighted_mse;
  report["initial_weighted_mse"] = result.initial_weighted_mse;
  json regions = json::array();
  for (const fsnn::RegionMse& r : result.region_mse) {
    regions.push_back({{"lo", r.lo}, {"hi", r.hi}, {"mse", r.mse}});
  }
  report["region_mse"] = regions;
  report["iterations"] = result.iterations;
  report["seed"] = result.seed;
  report["final_gamma"] = result.final_gamma;
  report["wall_seconds"] = timer.seconds();

  const std::filesystem::path out(opt.out);
  const std::filesystem::path report_path =
      out.parent_path() / (out.stem().string() + ".report.json");
  emit_report(report, report_path.string());
}

// ---------------------------------------------------------------------------
// convert

struct ConvertOptions {
  std::string net;
  std::string out;
  int k = 10;
  std::vector<std::string> fs_params;
  std::string alpha = "calibrate";
  std::string dataset;
  std::int64_t calib_count = 256;
  int q = 0;
  double q_lo = -8.0;
  double q_hi = 8.0;
  bool collapse = false;
};

void cmd_convert(const ConvertOptions& opt) {
  fsnn::NetworkSpec net = fsnn::load_network(opt.net);
  const std::int64_t ann_parameters = count_parameters(net);

  bool folded = false;
  for (const fsnn::LayerSpec& layer : net.layers) {
    if (layer.kind == fsnn::LayerKind::kBatchNorm) {
      folded = true;
      break;
    }
  }
  if (folded) net = fsnn::fold_batchnorm(net);

  fsnn::CollapseReport collapse_report;
  if (opt.collapse) net = fsnn::collapse_linear(net, &collapse_report);

  std::map<std::string, fsnn::FsParams> table;
  for (const std::string& path : opt.fs_params) {
    fsnn::FsParams params = fsnn::load_fs_params(path);
    table[fsnn::activation_name(params.activation)] = std::move(params);
  }
  bool uses_relu = false;
  for (const fsnn::LayerSpec& layer : net.layers) {
    if (layer.activation == fsnn::ActivationKind::kRelu) uses_relu = true;
  }
  if (uses_relu && table.count("relu") == 0) {
    table["relu"] = fsnn::make_relu_params(opt.k, 1.0);
  }
  if (opt.q > 0) {
    const fsnn::QuantizationSpec qspec{opt.q, opt.q_lo, opt.q_hi};
    for (auto& [name, params] : table) {
      params = fsnn::quantize_params(params, qspec);
    }
  }

  const fsnn::AlphaPolicy policy = parse_alpha(opt.alpha);
  std::vector<fsnn::ActivationLayerStats> stats;
  if (policy.kind == fsnn::AlphaPolicy::Kind::kPerLayerMax && uses_relu) {
    if (opt.dataset.empty()) {
      throw fsnn::ValidationError(
          "--alpha calibrate needs --dataset for a calibration batch");
    }
    const fsnn::Dataset calib =
        fsnn::load_dataset_spec(opt.dataset, /*train_split=*/true);
    stats = fsnn::activation_stats(net, batch_tensor(calib, opt.calib_count));
  }
  const std::vector<double> alpha = fsnn::calibrate_alpha(net, stats, policy);

  const fsnn::SnnSpec snn = fsnn::convert(net, table, alpha);
  fsnn::save_snn(snn, opt.out);

  json report;
  report["config"] = {{"net", opt.net},
                      {"out", opt.out},
                      {"k", opt.k},
                      {"fs_params", opt.fs_params},
                      {"alpha", opt.alpha},
                      {"dataset", opt.dataset},
                      {"calib_count", opt.calib_count},
                      {"q", opt.q},
                      {"q_range", {opt.q_lo, opt.q_hi}},
                      {"collapse", opt.collapse}};
  report["folded_batchnorm"] = folded;
  if (opt.collapse) {
    report["collapse"] = {{"fused", collapse_report.fused},
                          {"skipped", collapse_report.skipped}};
  }
  report["ann_parameters"] = ann_parameters;
  report["snn_parameters"] = count_parameters(snn.net);
  report["activation_neurons"] = count_activation_neurons(snn.net);
  report["k_by_kind"] = snn.k_by_kind;
  json alpha_json = json::array();
  for (double a : snn.layer_alpha) {
    if (std::isfinite(a)) {
      alpha_json.push_back(a);
    } else {
      alpha_json.push_back(nullptr);
    }
  }
  report["alpha_per_layer"] = alpha_json;
  emit_report(report,
              (std::filesystem::path(opt.out) / "convert_report.json").string());
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  std::string net;
  std::string snn;
  std::string dataset;
  std::string mode = "sequential";
  std::int64_t limit = -1;
  std::string out;
};

void cmd_eval(const EvalOptions& opt) {
  if (opt.net.empty() && opt.snn.empty()) {
    throw fsnn::ValidationError("eval needs --net, --snn or both");
  }
  if (opt.mode != "sequential" && opt.mode != "pipelined") {
    throw fsnn::ValidationError("--mode must be sequential or pipelined, got \"" +
                                opt.mode + "\"");
  }
  const fsnn::Dataset ds =
      fsnn::load_dataset_spec(opt.dataset, /*train_split=*/false);
  const std::int64_t n =
      opt.limit < 0 ? ds.size() : std::min<std::int64_t>(opt.limit, ds.size());

  const WallTimer timer;
  json report;
  report["config"] = {{"net", opt.net},
                      {"snn", opt.snn},
                      {"dataset", opt.dataset},
                      {"mode", opt.mode},
                      {"limit", opt.limit}};
  report["images"] = n;

  if (!opt.net.empty() && opt.snn.empty()) {
    const fsnn::NetworkSpec net = fsnn::load_network(opt.net);
    report["ann_accuracy"] = fsnn::evaluate_accuracy(net, ds, n);
    report["wall_seconds"] = timer.seconds();
    emit_report(report, opt.out);
    return;
  }

  const fsnn::SnnSpec snn = fsnn::load_snn(opt.snn);
  int stages = 0;
  int k_max = 0;
  for (std::size_t li = 0; li < snn.net.layers.size(); ++li) {
    if (snn.net.layers[li].activation == fsnn::ActivationKind::kIdentity) {
      continue;
    }
    ++stages;
    k_max = std::max(k_max, fsnn::effective_params(snn, static_cast<int>(li)).k);
  }
  const int window = k_max > 0 ? 2 * k_max : 1;

  if (!opt.net.empty()) {
    const fsnn::NetworkSpec net = fsnn::load_network(opt.net);
    const fsnn::ParityReport parity = fsnn::compare_with_ann(net, snn, ds, n);
    report.update(json::parse(fsnn::parity_report_to_json_text(parity)));
  } else {
    fsnn::SpikeAccounting acc;
    std::int64_t hits = 0;
    const std::int64_t per = ds.images.numel() / ds.size();
    (void)per;
    for (std::int64_t i = 0; i < n; ++i) {
      const fsnn::Tensor logits =
          fsnn::run_single(snn, sample_tensor(ds, i, snn.net.input_shape), &acc);
      if (argmax_of(logits) == ds.labels[static_cast<std::size_t>(i)]) ++hits;
    }
    report["snn_accuracy"] = static_cast<double>(hits) / static_cast<double>(n);
    report["spikes"] = accounting_json(acc);
  }

  if (opt.mode == "pipelined") {
    std::vector<fsnn::Tensor> inputs;
    inputs.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      inputs.push_back(sample_tensor(ds, i, snn.net.input_shape));
    }
    const fsnn::PipelineResult pipe = fsnn::run_pipelined(snn, inputs);
    std::int64_t hits = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      if (argmax_of(pipe.logits[static_cast<std::size_t>(i)]) ==
          ds.labels[static_cast<std::size_t>(i)]) {
        ++hits;
      }
    }
    report["pipeline"] = {
        {"window", pipe.window},
        {"stages", pipe.stages},
        {"total_steps", pipe.total_steps},
        {"cadence_steps_per_image", pipe.window},
        {"accuracy", static_cast<double>(hits) / static_cast<double>(n)}};
    report["throughput_images_per_window"] =
        n > 0 ? static_cast<double>(n) /
                    static_cast<double>(n - 1 + pipe.stages > 0
                                            ? n - 1 + pipe.stages
                                            : 1)
              : 0.0;
  } else {
    report["throughput_images_per_window"] =
        stages > 0 ? 1.0 / static_cast<double>(stages) : 1.0;
  }
  report["window"] = window;
  report["wall_seconds"] = timer.seconds();
  emit_report(report, opt.out);
}

// ---------------------------------------------------------------------------
// profile

struct ProfileOptions {
  std::string what;
  std::string fs_params;
  std::string config;
  std::string k_list = "2,4,6,8,10";
  std::string q_list = "2,3,4,5,6,7,8";
  double lo = -8.0;
  double hi = 12.0;
  std::int64_t samples = 1024;
  std::vector<std::string> regions;
  std::string net;
  std::string dataset;
  std::string alpha = "calibrate";
  std::int64_t calib_count = 256;
  std::int64_t limit = 2000;
  std::int64_t seed = -1;
  std::string out;
};

void cmd_profile(const ProfileOptions& opt) {
  if (opt.what == "spikes_vs_x") {
    if (opt.fs_params.empty()) {
      throw fsnn::ValidationError("spikes_vs_x needs --fs-params");
    }
    const fsnn::FsParams params = fsnn::load_fs_params(opt.fs_params);
    const auto profile = fsnn::spike_count_profile(
        params, opt.lo, opt.hi, static_cast<int>(opt.samples));
    std::string csv = "x,spike_count\n";
    char line[64];
    for (const auto& [x, count] : profile) {
      std::snprintf(line, sizeof(line), "%.12g,%d\n", x, count);
      csv += line;
    }
    emit_csv(csv, opt.out);
    return;
  }

  if (opt.what == "mse_vs_k") {
    if (opt.config.empty()) {
      throw fsnn::ValidationError("mse_vs_k needs --config (base fit recipe)");
    }
    fsnn::FitConfig cfg = fsnn::load_fit_config(opt.config);
    if (opt.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opt.seed);
    const std::vector<int> ks = parse_int_list(opt.k_list, "--k-list");
    const auto rows = fsnn::sweep_k(cfg.target, ks, cfg);
    emit_csv(fsnn::sweep_to_csv(rows, "k"), opt.out);
    return;
  }

  if (opt.what == "mse_vs_q") {
    if (opt.fs_params.empty()) {
      throw fsnn::ValidationError("mse_vs_q needs --fs-params");
    }
    const fsnn::FsParams params = fsnn::load_fs_params(opt.fs_params);
    const std::vector<int> qs = parse_int_list(opt.q_list, "--q-list");
    std::vector<fsnn::Region> regions;
    for (const std::string& r : opt.regions) regions.push_back(parse_region(r));
    const fsnn::QuantizationSpec range{8, opt.lo, opt.hi};
    const auto rows = fsnn::sweep_q(params, params.activation, qs, range,
                                    regions, opt.lo, opt.hi);
    emit_csv(fsnn::sweep_to_csv(rows, "q"), opt.out);
    return;
  }

  if (opt.what == "accuracy_vs_k") {
    if (opt.net.empty() || opt.dataset.empty()) {
      throw fsnn::ValidationError("accuracy_vs_k needs --net and --dataset");
    }
    const fsnn::NetworkSpec net = fsnn::load_network(opt.net);
    const fsnn::AlphaPolicy policy = parse_alpha(opt.alpha);
    std::vector<fsnn::ActivationLayerStats> stats;
    if (policy.kind == fsnn::AlphaPolicy::Kind::kPerLayerMax) {
      const fsnn::Dataset calib =
          fsnn::load_dataset_spec(opt.dataset, /*train_split=*/true);
      stats = fsnn::activation_stats(net, batch_tensor(calib, opt.calib_count));
    }
    const std::vector<double> alpha = fsnn::calibrate_alpha(net, stats, policy);
    const fsnn::Dataset test =
        fsnn::load_dataset_spec(opt.dataset, /*train_split=*/false);
    const std::int64_t n =
        opt.limit < 0 ? test.size() : std::min<std::int64_t>(opt.limit, test.size());

    std::string csv = "k,accuracy\n";
    char line[48];
    for (int k : parse_int_list(opt.k_list, "--k-list")) {
      std::map<std::string, fsnn::FsParams> table;
      table["relu"] = fsnn::make_relu_params(k, 1.0);
      const fsnn::SnnSpec snn = fsnn::convert(net, table, alpha);
      std::int64_t hits = 0;
      for (std::int64_t i = 0; i < n; ++i) {
        const fsnn::Tensor logits =
            fsnn::run_single(snn, sample_tensor(test, i, net.input_shape));
        if (argmax_of(logits) == test.labels[static_cast<std::size_t>(i)]) {
          ++hits;
        }
      }
      std::snprintf(line, sizeof(line), "%d,%.6f\n", k,
                    static_cast<double>(hits) / static_cast<double>(n));
      csv += line;
    }
    emit_csv(csv, opt.out);
    return;
  }

  throw fsnn::ValidationError(
      "--what must be one of spikes_vs_x, mse_vs_k, mse_vs_q, accuracy_vs_k; "
      "got \"" +
      opt.what + "\"");
}

// ---------------------------------------------------------------------------
// trace

struct TraceOptions {
  std::string snn;
  std::string dataset;
  std::int64_t index = 0;
  std::vector<double> x;
  std::string out;
  std::string potentials;
  std::int64_t limit = 100000;
  bool force = false;
};

void cmd_trace(const TraceOptions& opt) {
  const fsnn::SnnSpec snn = fsnn::load_snn(opt.snn);
  const auto shapes = fsnn::infer_shapes(snn.net);

  fsnn::Tensor input;
  if (!opt.x.empty()) {
    if (static_cast<std::int64_t>(opt.x.size()) !=
        fsnn::Tensor::numel_of(snn.net.input_shape)) {
      throw fsnn::ValidationError(
          "--x provided " + std::to_string(opt.x.size()) +
          " values but the network input is " +
          fsnn::shape_to_string(snn.net.input_shape));
    }
    input = fsnn::Tensor(snn.net.input_shape, opt.x);
  } else if (!opt.dataset.empty()) {
    const fsnn::Dataset ds =
        fsnn::load_dataset_spec(opt.dataset, /*train_split=*/false);
    input = sample_tensor(ds, opt.index, snn.net.input_shape);
  } else {
    throw fsnn::ValidationError("trace needs --dataset (with --index) or --x");
  }

  std::int64_t predicted_rows = 0;
  for (std::size_t li = 0; li < snn.net.layers.size(); ++li) {
    if (snn.net.layers[li].activation == fsnn::ActivationKind::kIdentity) {
      continue;
    }
    predicted_rows += fsnn::Tensor::numel_of(shapes[li]) *
                      fsnn::effective_params(snn, static_cast<int>(li)).k;
  }
  if (predicted_rows > opt.limit && !opt.force) {
    throw fsnn::ValidationError(
        "trace would write " + std::to_string(predicted_rows) +
        " per-step rows, above the limit of " + std::to_string(opt.limit) +
        "; rerun with --force (or raise --limit) for large networks");
  }

  fsnn::SpikeAccounting acc;
  std::vector<fsnn::SpikeEvent> events;
  std::vector<fsnn::TraceRow> rows;
  const fsnn::Tensor logits = fsnn::run_single_audit(
      snn, input, &acc, &events, opt.potentials.empty() ? nullptr : &rows,
      predicted_rows);

  fsnn::atomic_write_text(opt.out, fsnn::events_to_csv(events));
  if (!opt.potentials.empty()) {
    fsnn::atomic_write_text(opt.potentials, fsnn::trace_to_csv(rows));
  }

  json report;
  report["config"] = {{"snn", opt.snn},     {"dataset", opt.dataset},
                      {"index", opt.index}, {"x", opt.x},
                      {"out", opt.out},     {"potentials", opt.potentials},
                      {"limit", opt.limit}, {"force", opt.force}};
  report["events"] = events.size();
  report["trace_rows"] = rows.size();
  report["spikes"] = accounting_json(acc);
  report["logits"] = logits.data;
  std::cout << report.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string dataset;
  std::string widths;
  std::string activation = "relu";
  double learning_rate = 0.1;
  int epochs = 5;
  int batch_size = 64;
  double momentum = 0.9;
  std::int64_t seed = 1;
  std::int64_t train_limit = -1;
  std::string out;
};

fsnn::Dataset xor_dataset() {
  fsnn::Dataset ds;
  ds.name = "xor";
  ds.class_count = 2;
  ds.images = fsnn::Tensor({4, 2}, {0, 0, 0, 1, 1, 0, 1, 1});
  ds.labels = {0, 1, 1, 0};
  return ds;
}

void cmd_train(const TrainOptions& opt) {
  fsnn::Dataset train;
  fsnn::Dataset test;
  bool has_test = false;
  if (opt.dataset == "xor") {
    train = xor_dataset();
  } else {
    train = fsnn::load_dataset_spec(opt.dataset, /*train_split=*/true);
    test = fsnn::load_dataset_spec(opt.dataset, /*train_split=*/false);
    has_test = true;
  }
  if (opt.train_limit > 0) train = subset(train, opt.train_limit);

  fsnn::TrainConfig cfg;
  for (int w : parse_int_list(opt.widths, "--widths")) cfg.widths.push_back(w);
  cfg.hidden_activation = fsnn::parse_activation(opt.activation);
  cfg.learning_rate = opt.learning_rate;
  cfg.epochs = opt.epochs;
  cfg.batch_size = opt.batch_size;
  cfg.momentum = opt.momentum;
  cfg.seed = static_cast<std::uint64_t>(opt.seed);

  const WallTimer timer;
  const fsnn::TrainResult result =
      fsnn::train_mlp(train, has_test ? &test : nullptr, cfg);
  fsnn::save_network(result.net, opt.out);

  json report;
  report["config"] = {{"dataset", opt.dataset},
                      {"widths", cfg.widths},
                      {"activation", opt.activation},
                      {"learning_rate", cfg.learning_rate},
                      {"epochs", cfg.epochs},
                      {"batch_size", cfg.batch_size},
                      {"momentum", cfg.momentum},
                      {"seed", opt.seed},
                      {"train_limit", opt.train_limit},
                      {"out", opt.out}};
  report["train_accuracy"] = result.train_accuracy;
  if (has_test) report["test_accuracy"] = result.test_accuracy;
  report["train_samples"] = train.size();
  report["wall_seconds"] = timer.seconds();
  emit_report(report, (std::filesystem::path(opt.out) / "train_report.json").string());
}

// ---------------------------------------------------------------------------
// synth

struct SynthOptions {
  std::string kind;
  std::string out;
  std::int64_t train_count = 12000;
  std::int64_t test_count = 2000;
  std::int64_t seed = 1;
};

void cmd_synth(const SynthOptions& opt) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(opt.out, ec);
  const std::uint64_t seed = static_cast<std::uint64_t>(opt.seed);
  json files = json::array();

  if (opt.kind == "mnist") {
    const fsnn::Dataset train =
        fsnn::synth_digits(static_cast<int>(opt.train_count),
                           fsnn::derive_seed(seed, 0));
    const fsnn::Dataset test = fsnn::synth_digits(
        static_cast<int>(opt.test_count), fsnn::derive_seed(seed, 1));
    const fs::path dir(opt.out);
    fsnn::write_mnist(train, (dir / "train-images-idx3-ubyte").string(),
                      (dir / "train-labels-idx1-ubyte").string());
    fsnn::write_mnist(test, (dir / "t10k-images-idx3-ubyte").string(),
                      (dir / "t10k-labels-idx1-ubyte").string());
    files = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
             "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};
  } else if (opt.kind == "cifar10") {
    if (opt.train_count < 5) {
      throw fsnn::ValidationError("cifar10 needs --train-count >= 5 to fill "
                                  "the five train batch files");
    }
    const fsnn::Dataset train = fsnn::synth_color32(
        static_cast<int>(opt.train_count), fsnn::derive_seed(seed, 0));
    const fsnn::Dataset test = fsnn::synth_color32(
        static_cast<int>(opt.test_count), fsnn::derive_seed(seed, 1));
    const fs::path dir(opt.out);
    const std::int64_t per = train.images.numel() / train.size();
    std::int64_t start = 0;
    for (int b = 0; b < 5; ++b) {
      const std::int64_t count =
          opt.train_count / 5 + (b < opt.train_count % 5 ? 1 : 0);
      fsnn::Dataset part;
      part.class_count = train.class_count;
      std::vector<std::int64_t> shape = train.images.shape;
      shape[0] = count;
      part.images = fsnn::Tensor(shape);
      std::copy(train.images.data.begin() + start * per,
                train.images.data.begin() + (start + count) * per,
                part.images.data.begin());
      part.labels.assign(train.labels.begin() + start,
                         train.labels.begin() + start + count);
      const std::string name = "data_batch_" + std::to_string(b + 1) + ".bin";
      fsnn::write_cifar10(part, (dir / name).string());
      files.push_back(name);
      start += count;
    }
    fsnn::write_cifar10(test, (dir / "test_batch.bin").string());
    files.push_back("test_batch.bin");
  } else {
    throw fsnn::ValidationError("--kind must be mnist or cifar10, got \"" +
                                opt.kind + "\"");
  }

  json report;
  report["config"] = {{"kind", opt.kind},
                      {"out", opt.out},
                      {"train_count", opt.train_count},
                      {"test_count", opt.test_count},
                      {"seed", opt.seed}};
  report["files"] = files;
  std::cout << report.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"few-spike neuron toolkit: fit, convert, simulate, profile"};
  app.require_subcommand(1);

  FitOptions fit_opt;
  auto* fit = app.add_subcommand(
      "fit", "fit FS parameters to an activation from a config file");
  fit->add_option("--config", fit_opt.config, "FitConfig JSON path")
      ->required()
      ->check(CLI::ExistingFile);
  fit->add_option("--out", fit_opt.out, "output FsParams JSON path")->required();
  fit->add_option("--seed", fit_opt.seed, "override the config seed");
  fit->callback([&]() { cmd_fit(fit_opt); });

  ConvertOptions conv_opt;
  auto* conv = app.add_subcommand(
      "convert", "convert a trained network into a spiking network");
  conv->add_option("--net", conv_opt.net, "network directory")->required();
  conv->add_option("--out", conv_opt.out, "output directory")->required();
  conv->add_option("--k", conv_opt.k, "steps per relu neuron (analytic table)")
      ->default_val(10);
  conv->add_option("--fs-params", conv_opt.fs_params,
                   "fitted FsParams JSON, keyed by its activation (repeatable)")
      ->check(CLI::ExistingFile);
  conv->add_option("--alpha", conv_opt.alpha,
                   "relu input scale: fixed:<value> or calibrate")
      ->default_val("calibrate");
  conv->add_option("--dataset", conv_opt.dataset,
                   "mnist:<dir> or cifar10:<dir>, for calibration");
  conv->add_option("--calib-count", conv_opt.calib_count,
                   "samples in the calibration batch")
      ->default_val(256);
  conv->add_option("--q", conv_opt.q,
                   "quantize stored FS parameters to 2^q levels (0 = off)")
      ->default_val(0);
  conv->add_option("--q-lo", conv_opt.q_lo, "quantizer range low")
      ->default_val(-8.0);
  conv->add_option("--q-hi", conv_opt.q_hi, "quantizer range high")
      ->default_val(8.0);
  conv->add_flag("--collapse", conv_opt.collapse,
                 "fuse linear dense chains before conversion");
  conv->callback([&]() { cmd_convert(conv_opt); });

  EvalOptions eval_opt;
  auto* eval = app.add_subcommand(
      "eval", "evaluate a network, a converted network, or their parity");
  eval->add_option("--net", eval_opt.net, "network directory");
  eval->add_option("--snn", eval_opt.snn, "converted network directory");
  eval->add_option("--dataset", eval_opt.dataset, "mnist:<dir> or cifar10:<dir>")
      ->required();
  eval->add_option("--mode", eval_opt.mode, "sequential or pipelined")
      ->default_val("sequential");
  eval->add_option("--limit", eval_opt.limit, "max test samples (-1 = all)")
      ->default_val(-1);
  eval->add_option("--out", eval_opt.out, "write the JSON report here too");
  eval->callback([&]() { cmd_eval(eval_opt); });

  ProfileOptions prof_opt;
  auto* prof = app.add_subcommand(
      "profile", "emit CSV curves: spikes_vs_x, mse_vs_k, mse_vs_q, accuracy_vs_k");
  prof->add_option("--what", prof_opt.what, "which curve to emit")->required();
  prof->add_option("--fs-params", prof_opt.fs_params,
                   "FsParams JSON (spikes_vs_x, mse_vs_q)");
  prof->add_option("--config", prof_opt.config, "FitConfig JSON (mse_vs_k)");
  prof->add_option("--k-list", prof_opt.k_list, "comma-separated k values")
      ->default_val("2,4,6,8,10");
  prof->add_option("--q-list", prof_opt.q_list, "comma-separated q values")
      ->default_val("2,3,4,5,6,7,8");
  prof->add_option("--lo", prof_opt.lo, "interval low")->default_val(-8.0);
  prof->add_option("--hi", prof_opt.hi, "interval high")->default_val(12.0);
  prof->add_option("--samples", prof_opt.samples, "grid points (spikes_vs_x)")
      ->default_val(1024);
  prof->add_option("--region", prof_opt.regions,
                   "report region lo:hi[:weight] (repeatable, mse_vs_q)");
  prof->add_option("--net", prof_opt.net, "network directory (accuracy_vs_k)");
  prof->add_option("--dataset", prof_opt.dataset,
                   "dataset spec (accuracy_vs_k)");
  prof->add_option("--alpha", prof_opt.alpha,
                   "relu input scale policy (accuracy_vs_k)")
      ->default_val("calibrate");
  prof->add_option("--calib-count", prof_opt.calib_count,
                   "calibration batch size")
      ->default_val(256);
  prof->add_option("--limit", prof_opt.limit, "max eval samples")
      ->default_val(2000);
  prof->add_option("--seed", prof_opt.seed, "override config seed (mse_vs_k)");
  prof->add_option("--out", prof_opt.out, "CSV path (stdout when omitted)");
  prof->callback([&]() { cmd_profile(prof_opt); });

  TraceOptions trace_opt;
  auto* trace = app.add_subcommand(
      "trace", "event-exact spike dump for one input");
  trace->add_option("--snn", trace_opt.snn, "converted network directory")
      ->required();
  trace->add_option("--dataset", trace_opt.dataset, "dataset spec for the input");
  trace->add_option("--index", trace_opt.index, "sample index")->default_val(0);
  trace->add_option("--x", trace_opt.x,
                    "raw input values (alternative to --dataset)");
  trace->add_option("--out", trace_opt.out, "spike event CSV path")->required();
  trace->add_option("--potentials", trace_opt.potentials,
                    "also write the per-step membrane CSV here");
  trace->add_option("--limit", trace_opt.limit,
                    "largest per-step row count traced without --force")
      ->default_val(100000);
  trace->add_flag("--force", trace_opt.force, "trace regardless of size");
  trace->callback([&]() { cmd_trace(trace_opt); });

  TrainOptions train_opt;
  auto* train = app.add_subcommand("train", "train a dense MLP");
  train->add_option("--dataset", train_opt.dataset,
                    "mnist:<dir>, cifar10:<dir> or xor")
      ->required();
  train->add_option("--widths", train_opt.widths,
                    "layer widths, e.g. 784,128,128,10")
      ->required();
  train->add_option("--activation", train_opt.activation,
                    "hidden activation (relu or silu)")
      ->default_val("relu");
  train->add_option("--lr", train_opt.learning_rate, "learning rate")
      ->default_val(0.1);
  train->add_option("--epochs", train_opt.epochs, "training epochs")
      ->default_val(5);
  train->add_option("--batch-size", train_opt.batch_size, "minibatch size")
      ->default_val(64);
  train->add_option("--momentum", train_opt.momentum, "SGD momentum")
      ->default_val(0.9);
  train->add_option("--seed", train_opt.seed, "RNG seed")->default_val(1);
  train->add_option("--train-limit", train_opt.train_limit,
                    "cap on training samples (-1 = all)")
      ->default_val(-1);
  train->add_option("--out", train_opt.out, "output network directory")
      ->required();
  train->callback([&]() { cmd_train(train_opt); });

  SynthOptions synth_opt;
  auto* synth = app.add_subcommand(
      "synth", "materialize a synthetic dataset in the official binary layout");
  synth->add_option("--kind", synth_opt.kind, "mnist or cifar10")->required();
  synth->add_option("--out", synth_opt.out, "output directory")->required();
  synth->add_option("--train-count", synth_opt.train_count, "train images")
      ->default_val(12000);
  synth->add_option("--test-count", synth_opt.test_count, "test images")
      ->default_val(2000);
  synth->add_option("--seed", synth_opt.seed, "RNG seed")->default_val(1);
  synth->callback([&]() { cmd_synth(synth_opt); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const fsnn::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
