#include "fsnn/network.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include <nlohmann/json.hpp>

#include "fsnn/error.h"
#include "fsnn/io_util.h"

namespace fsnn {

namespace {

std::string layer_label(int index, LayerKind kind) {
  return "layer " + std::to_string(index) + " (" +
         std::string(layer_kind_name(kind)) + ")";
}

void apply_activation(ActivationKind kind, Tensor* t) {
  if (kind == ActivationKind::kIdentity) return;
  for (double& v : t->data) v = eval_activation(kind, v);
}

struct ConvGeometry {
  std::int64_t out_h = 0, out_w = 0;
  std::int64_t pad_top = 0, pad_left = 0;
};

ConvGeometry conv_geometry(std::int64_t in_h, std::int64_t in_w,
                           std::int64_t kh, std::int64_t kw, int stride,
                           Padding padding, int layer_index) {
  ConvGeometry g;
  if (padding == Padding::kValid) {
    if (in_h < kh || in_w < kw) {
      throw ValidationError("layer " + std::to_string(layer_index) +
                            " (conv2d): kernel larger than input under valid padding");
    }
    g.out_h = (in_h - kh) / stride + 1;
    g.out_w = (in_w - kw) / stride + 1;
  } else {
    g.out_h = (in_h + stride - 1) / stride;
    g.out_w = (in_w + stride - 1) / stride;
    const std::int64_t pad_h = std::max<std::int64_t>((g.out_h - 1) * stride + kh - in_h, 0);
    const std::int64_t pad_w = std::max<std::int64_t>((g.out_w - 1) * stride + kw - in_w, 0);
    g.pad_top = pad_h / 2;
    g.pad_left = pad_w / 2;
  }
  return g;
}

}  // namespace

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kAvgPool2d: return "avgpool2d";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kResidualAdd: return "residual_add";
    case LayerKind::kBatchNorm: return "batchnorm";
  }
  return "dense";  // unreachable
}

LayerKind parse_layer_kind(const std::string& name) {
  if (name == "dense") return LayerKind::kDense;
  if (name == "conv2d") return LayerKind::kConv2d;
  if (name == "avgpool2d") return LayerKind::kAvgPool2d;
  if (name == "flatten") return LayerKind::kFlatten;
  if (name == "residual_add") return LayerKind::kResidualAdd;
  if (name == "batchnorm") return LayerKind::kBatchNorm;
  throw ValidationError("unknown layer kind \"" + name +
                        "\"; supported: dense, conv2d, avgpool2d, flatten, "
                        "residual_add, batchnorm");
}

std::vector<std::vector<std::int64_t>> infer_shapes(const NetworkSpec& net) {
  if (net.input_shape.empty()) {
    throw ValidationError("network input_shape is empty");
  }
  std::vector<std::vector<std::int64_t>> shapes;
  std::vector<std::int64_t> cur = net.input_shape;
  for (int li = 0; li < static_cast<int>(net.layers.size()); ++li) {
    const LayerSpec& layer = net.layers[static_cast<std::size_t>(li)];
    switch (layer.kind) {
      case LayerKind::kDense: {
        if (cur.size() != 1) {
          throw ValidationError(layer_label(li, layer.kind) +
                                ": expects a flat input, got shape " +
                                shape_to_string(cur) + " (insert a flatten layer)");
        }
        if (layer.weight.shape.size() != 2) {
          throw ValidationError(layer_label(li, layer.kind) +
                                ": weight must be 2-d [out, in]");
        }
        if (layer.weight.shape[1] != cur[0]) {
          throw ValidationError(layer_label(li, layer.kind) + ": weight expects " +
                                std::to_string(layer.weight.shape[1]) +
                                " inputs but the layer receives " +
                                std::to_string(cur[0]));
        }
        if (layer.bias.shape != std::vector<std::int64_t>{layer.weight.shape[0]}) {
          throw ValidationError(layer_label(li, layer.kind) +
                                ": bias shape must be [out]");
        }
        cur = {layer.weight.shape[0]};
        break;
      }
      case LayerKind::kConv2d: {
        if (cur.size() != 3) {
          throw ValidationError(layer_label(li, layer.kind) +
                                ": expects [channels, height, width], got " +
                                shape_to_string(cur));
        }
        if (layer.weight.shape.size() != 4) {
          throw ValidationError(layer_label(li, layer.kind) +
                                ": weight must be 4-d [out_c, in_c, kh, kw]");
        }
        if (layer.weight.shape[1] != cur[0]) {
          throw ValidationError(layer_label(li, layer.kind) + ": weight expects " +
                                std::to_string(layer.weight.shape[1]) +
                                " input channels but the layer receives " +
                                std::to_string(cur[0]));
        }
        if (layer.bias.shape != std::vector<std::int64_t>{layer.weight.shape[0]}) {
          throw ValidationError(layer_label(li, layer.kind) +
                                ": bias shape must be [out_c]");
        }
        if (layer.stride < 1) {
          throw ValidationError(layer_label(li, layer.kind) + ": stride must be >= 1");
        }
        const ConvGeometry g =
            conv_geometry(cur[1], cur[2], layer.weight.shape[2],
                          layer.weight.shape[3], layer.stride, layer.padding, li);
        cur = {layer.weight.shape[0], g.out_h, g.out_w};
        break;
      }
      case LayerKind::kAvgPool2d: {
        if (cur.size() != 3) {
          throw ValidationError(layer_label(li, layer.kind) +
                                ": expects [channels, height, width], got " +
                                shape_to_string(cur));
        }
        if (layer.pool < 1 || layer.stride < 1) {
          throw ValidationError(layer_label(li, layer.kind) +
                                ": pool and stride must be >= 1");
        }
        if (cur[1] < layer.pool || cur[2] < layer.pool) {
          throw ValidationError(layer_label(li, layer.kind) +
                                ": pool window larger than input");
        }
        cur = {cur[0], (cur[1] - layer.pool) / layer.stride + 1,
               (cur[2] - layer.pool) / layer.stride + 1};
        break;
      }
      case LayerKind::kFlatten: {
        cur = {Tensor::numel_of(cur)};
        break;
      }
      case LayerKind::kResidualAdd: {
        if (layer.source < -1 || layer.source >= li) {
          throw ValidationError(layer_label(li, layer.kind) +
                                ": source must reference an earlier layer or -1");
        }
        const std::vector<std::int64_t>& ref =
            layer.source < 0 ? net.input_shape
                             : shapes[static_cast<std::size_t>(layer.source)];
        if (ref != cur) {
          throw ValidationError(layer_label(li, layer.kind) + ": source shape " +
                                shape_to_string(ref) + " does not match input shape " +
                                shape_to_string(cur));
        }
        break;
      }
      case LayerKind::kBatchNorm: {
        if (cur.empty()) {
          throw ValidationError(layer_label(li, layer.kind) + ": empty input shape");
        }
        const std::int64_t channels = cur[0];
        const std::vector<std::int64_t> want{channels};
        if (layer.bn_mean.shape != want || layer.bn_var.shape != want ||
            layer.bn_scale.shape != want || layer.bn_shift.shape != want) {
          throw ValidationError(layer_label(li, layer.kind) +
                                ": statistics must all have shape [channels=" +
                                std::to_string(channels) + "]");
        }
        break;
      }
    }
    shapes.push_back(cur);
  }
  if (net.class_count > 0 && !shapes.empty() &&
      Tensor::numel_of(shapes.back()) != net.class_count) {
    throw ValidationError("final layer produces " +
                          std::to_string(Tensor::numel_of(shapes.back())) +
                          " outputs but class_count is " +
                          std::to_string(net.class_count));
  }
  return shapes;
}

namespace detail {

Tensor layer_op(const LayerSpec& layer, const Tensor& cur, const Tensor& input,
                const std::vector<Tensor>& outputs, int li) {
  Tensor out;
  switch (layer.kind) {
    case LayerKind::kDense: {
      const std::int64_t rows = layer.weight.shape[0];
      const std::int64_t cols = layer.weight.shape[1];
      out = Tensor({rows});
      for (std::int64_t r = 0; r < rows; ++r) {
        const double* wrow = layer.weight.data.data() + r * cols;
        double acc = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) {
          acc += wrow[c] * cur.data[static_cast<std::size_t>(c)];
        }
        out.data[static_cast<std::size_t>(r)] =
            acc + layer.bias.data[static_cast<std::size_t>(r)];
      }
      break;
    }
    case LayerKind::kConv2d: {
      const std::int64_t in_c = cur.shape[0], in_h = cur.shape[1], in_w = cur.shape[2];
      const std::int64_t out_c = layer.weight.shape[0];
      const std::int64_t kh = layer.weight.shape[2], kw = layer.weight.shape[3];
      const ConvGeometry g = conv_geometry(in_h, in_w, kh, kw, layer.stride,
                                           layer.padding, li);
      out = Tensor({out_c, g.out_h, g.out_w});
      for (std::int64_t oc = 0; oc < out_c; ++oc) {
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            double acc = layer.bias.data[static_cast<std::size_t>(oc)];
            for (std::int64_t ic = 0; ic < in_c; ++ic) {
              for (std::int64_t ky = 0; ky < kh; ++ky) {
                const std::int64_t iy = oy * layer.stride - g.pad_top + ky;
                if (iy < 0 || iy >= in_h) continue;
                for (std::int64_t kx = 0; kx < kw; ++kx) {
                  const std::int64_t ix = ox * layer.stride - g.pad_left + kx;
                  if (ix < 0 || ix >= in_w) continue;
                  acc += layer.weight.data[static_cast<std::size_t>(
                             ((oc * in_c + ic) * kh + ky) * kw + kx)] *
                         cur.data[static_cast<std::size_t>((ic * in_h + iy) * in_w +
                                                           ix)];
                }
              }
            }
            out.data[static_cast<std::size_t>((oc * g.out_h + oy) * g.out_w + ox)] =
                acc;
          }
        }
      }
      break;
    }
    case LayerKind::kAvgPool2d: {
      const std::int64_t c = cur.shape[0], in_h = cur.shape[1], in_w = cur.shape[2];
      const std::int64_t out_h = (in_h - layer.pool) / layer.stride + 1;
      const std::int64_t out_w = (in_w - layer.pool) / layer.stride + 1;
      out = Tensor({c, out_h, out_w});
      const double inv = 1.0 / (static_cast<double>(layer.pool) *
                                static_cast<double>(layer.pool));
      for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
          for (std::int64_t ox = 0; ox < out_w; ++ox) {
            double acc = 0.0;
            for (std::int64_t py = 0; py < layer.pool; ++py) {
              for (std::int64_t px = 0; px < layer.pool; ++px) {
                acc += cur.data[static_cast<std::size_t>(
                    (ch * in_h + oy * layer.stride + py) * in_w +
                    ox * layer.stride + px)];
              }
            }
            out.data[static_cast<std::size_t>((ch * out_h + oy) * out_w + ox)] =
                acc * inv;
          }
        }
      }
      break;
    }
    case LayerKind::kFlatten: {
      out = cur;
      out.shape = {cur.numel()};
      break;
    }
    case LayerKind::kResidualAdd: {
      const Tensor& ref = layer.source < 0
                              ? input
                              : outputs[static_cast<std::size_t>(layer.source)];
      out = cur;
      for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] += ref.data[i];
      }
      break;
    }
    case LayerKind::kBatchNorm: {
      out = cur;
      const std::int64_t channels = cur.shape[0];
      const std::int64_t per = cur.numel() / channels;
      for (std::int64_t ch = 0; ch < channels; ++ch) {
        const std::size_t c = static_cast<std::size_t>(ch);
        const double inv_sigma =
            1.0 / std::sqrt(layer.bn_var.data[c] + layer.bn_eps);
        const double scale = layer.bn_scale.data[c] * inv_sigma;
        const double shift =
            layer.bn_shift.data[c] - layer.bn_mean.data[c] * scale;
        for (std::int64_t i = 0; i < per; ++i) {
          double& v = out.data[static_cast<std::size_t>(ch * per + i)];
          v = v * scale + shift;
        }
      }
      break;
    }
  }
  return out;
}

}  // namespace detail

namespace {

// A layer's raw output counts as a pre-activation whenever the layer is
// affine or carries a non-identity activation; identity reshapes and pools
// add nothing worth recording.
bool records_preactivation(const LayerSpec& layer) {
  if (layer.kind == LayerKind::kAvgPool2d || layer.kind == LayerKind::kFlatten) {
    return layer.activation != ActivationKind::kIdentity;
  }
  return true;
}

}  // namespace

Tensor forward(const NetworkSpec& net, const Tensor& input,
               std::vector<Tensor>* preactivations) {
  infer_shapes(net);
  if (input.shape != net.input_shape &&
      input.numel() != Tensor::numel_of(net.input_shape)) {
    throw ValidationError("input shape " + shape_to_string(input.shape) +
                          " does not match network input " +
                          shape_to_string(net.input_shape));
  }
  if (preactivations) {
    preactivations->assign(net.layers.size(), Tensor{});
  }

  std::vector<Tensor> outputs;  // kept for residual references
  outputs.reserve(net.layers.size());
  Tensor cur = input;
  cur.shape = net.input_shape;

  for (int li = 0; li < static_cast<int>(net.layers.size()); ++li) {
    const LayerSpec& layer = net.layers[static_cast<std::size_t>(li)];
    Tensor out = detail::layer_op(layer, cur, input, outputs, li);
    if (preactivations && records_preactivation(layer)) {
      (*preactivations)[static_cast<std::size_t>(li)] = out;
    }
    apply_activation(layer.activation, &out);
    outputs.push_back(out);
    cur = outputs.back();
  }
  return cur;
}

NetworkSpec fold_batchnorm(const NetworkSpec& net) {
  NetworkSpec folded;
  folded.input_shape = net.input_shape;
  folded.class_count = net.class_count;
  // Maps original layer indices to indices in the folded list, so residual
  // references stay valid. A batchnorm maps to the layer it was folded into.
  std::vector<int> remap(net.layers.size(), -1);

  for (int li = 0; li < static_cast<int>(net.layers.size()); ++li) {
    const LayerSpec& layer = net.layers[static_cast<std::size_t>(li)];
    if (layer.kind != LayerKind::kBatchNorm) {
      LayerSpec copy = layer;
      if (copy.kind == LayerKind::kResidualAdd && copy.source >= 0) {
        copy.source = remap[static_cast<std::size_t>(copy.source)];
      }
      folded.layers.push_back(std::move(copy));
      remap[static_cast<std::size_t>(li)] = static_cast<int>(folded.layers.size()) - 1;
      continue;
    }
    if (folded.layers.empty() || li == 0 ||
        remap[static_cast<std::size_t>(li - 1)] !=
            static_cast<int>(folded.layers.size()) - 1) {
      throw ValidationError(layer_label(li, layer.kind) +
                            ": must directly follow a dense or conv2d layer");
    }
    LayerSpec& prev = folded.layers.back();
    if ((prev.kind != LayerKind::kDense && prev.kind != LayerKind::kConv2d) ||
        prev.activation != ActivationKind::kIdentity) {
      throw ValidationError(layer_label(li, layer.kind) +
                            ": must directly follow the affine output of a dense "
                            "or conv2d layer (no activation in between)");
    }
    const std::int64_t channels = layer.bn_mean.shape.empty()
                                      ? 0
                                      : layer.bn_mean.shape[0];
    if (prev.weight.shape.empty() || prev.weight.shape[0] != channels) {
      throw ValidationError(layer_label(li, layer.kind) +
                            ": channel count does not match the preceding layer");
    }
    const std::int64_t per_channel = prev.weight.numel() / channels;
    for (std::int64_t ch = 0; ch < channels; ++ch) {
      const std::size_t c = static_cast<std::size_t>(ch);
      const double inv_sigma = 1.0 / std::sqrt(layer.bn_var.data[c] + layer.bn_eps);
      const double s = layer.bn_scale.data[c] * inv_sigma;
      for (std::int64_t i = 0; i < per_channel; ++i) {
        prev.weight.data[static_cast<std::size_t>(ch * per_channel + i)] *= s;
      }
      prev.bias.data[c] =
          s * (prev.bias.data[c] - layer.bn_mean.data[c]) + layer.bn_shift.data[c];
    }
    prev.activation = layer.activation;
    // The batchnorm output is now the predecessor's output.
    remap[static_cast<std::size_t>(li)] = static_cast<int>(folded.layers.size()) - 1;
  }
  infer_shapes(folded);
  return folded;
}

std::vector<ActivationLayerStats> activation_stats(const NetworkSpec& net,
                                                   const Tensor& batch,
                                                   int histogram_bins) {
  if (histogram_bins < 1) throw ValidationError("histogram_bins must be >= 1");
  if (batch.shape.empty() || batch.shape[0] < 1) {
    throw ValidationError("activation_stats: empty calibration batch");
  }
  const std::int64_t n = batch.shape[0];
  const std::int64_t per = batch.numel() / n;
  if (per != Tensor::numel_of(net.input_shape)) {
    throw ValidationError("calibration batch sample size " + std::to_string(per) +
                          " does not match network input " +
                          shape_to_string(net.input_shape));
  }

  // Gather every pre-activation scalar per activation layer.
  std::vector<std::vector<double>> collected(net.layers.size());
  std::vector<Tensor> preacts;
  for (std::int64_t s = 0; s < n; ++s) {
    Tensor sample(net.input_shape);
    std::copy(batch.data.begin() + s * per, batch.data.begin() + (s + 1) * per,
              sample.data.begin());
    forward(net, sample, &preacts);
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
      if (net.layers[li].activation == ActivationKind::kIdentity) continue;
      const Tensor& p = preacts[li];
      collected[li].insert(collected[li].end(), p.data.begin(), p.data.end());
    }
  }

  std::vector<ActivationLayerStats> stats;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    if (net.layers[li].activation == ActivationKind::kIdentity) continue;
    const std::vector<double>& values = collected[li];
    if (values.empty()) continue;
    ActivationLayerStats st;
    st.layer = static_cast<int>(li);
    st.count = static_cast<std::int64_t>(values.size());
    double sum = 0.0, sum_sq = 0.0;
    st.min = values[0];
    st.max = values[0];
    for (double v : values) {
      sum += v;
      sum_sq += v * v;
      st.min = std::min(st.min, v);
      st.max = std::max(st.max, v);
    }
    const double inv = 1.0 / static_cast<double>(st.count);
    st.mean = sum * inv;
    st.variance = std::max(0.0, sum_sq * inv - st.mean * st.mean);
    const double span = st.max > st.min ? st.max - st.min : 1.0;
    st.bin_edges.resize(static_cast<std::size_t>(histogram_bins) + 1);
    for (int b = 0; b <= histogram_bins; ++b) {
      st.bin_edges[static_cast<std::size_t>(b)] =
          st.min + span * static_cast<double>(b) / histogram_bins;
    }
    st.bin_counts.assign(static_cast<std::size_t>(histogram_bins), 0);
    for (double v : values) {
      auto b = static_cast<std::int64_t>((v - st.min) / span * histogram_bins);
      b = std::clamp<std::int64_t>(b, 0, histogram_bins - 1);
      ++st.bin_counts[static_cast<std::size_t>(b)];
    }
    stats.push_back(std::move(st));
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Serialization: manifest.json + weights.bin (little-endian, row-major).

namespace {

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kWeightsName = "weights.bin";

void append_f64_le(std::vector<std::uint8_t>* out, const std::vector<double>& values) {
  const std::size_t start = out->size();
  out->resize(start + values.size() * 8);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out->data() + start, values.data(), values.size() * 8);
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, &values[i], 8);
      for (int b = 0; b < 8; ++b) {
        (*out)[start + i * 8 + static_cast<std::size_t>(b)] =
            static_cast<std::uint8_t>(bits >> (8 * b));
      }
    }
  }
}

std::vector<double> read_reals_le(const std::vector<std::uint8_t>& blob,
                                  std::size_t offset, std::size_t count,
                                  bool f32, const std::string& what) {
  const std::size_t elem = f32 ? 4 : 8;
  if (offset + count * elem > blob.size()) {
    throw ValidationError("truncated tensor blob: " + what + " needs " +
                          std::to_string(count * elem) + " bytes at offset " +
                          std::to_string(offset) + " but weights.bin has " +
                          std::to_string(blob.size()));
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (f32) {
      std::uint32_t bits = 0;
      for (int b = 3; b >= 0; --b) {
        bits = (bits << 8) |
               blob[offset + i * 4 + static_cast<std::size_t>(b)];
      }
      float f;
      std::memcpy(&f, &bits, 4);
      values[i] = static_cast<double>(f);
    } else {
      std::uint64_t bits = 0;
      for (int b = 7; b >= 0; --b) {
        bits = (bits << 8) |
               blob[offset + i * 8 + static_cast<std::size_t>(b)];
      }
      double d;
      std::memcpy(&d, &bits, 8);
      values[i] = d;
    }
    if (!std::isfinite(values[i])) {
      throw ValidationError("non-finite value in " + what + " at element " +
                            std::to_string(i));
    }
  }
  return values;
}

nlohmann::json tensor_entry(const Tensor& t, std::size_t* offset) {
  nlohmann::json j;
  j["shape"] = t.shape;
  j["offset"] = *offset;
  *offset += t.data.size() * 8;
  return j;
}

Tensor load_tensor(const nlohmann::json& entry,
                   const std::vector<std::uint8_t>& blob, bool f32,
                   const std::string& what) {
  if (!entry.contains("shape") || !entry.contains("offset")) {
    throw ValidationError(what + ": tensor entry must have shape and offset");
  }
  const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
  const auto offset = entry.at("offset").get<std::size_t>();
  const std::int64_t count = Tensor::numel_of(shape);
  return Tensor(shape, read_reals_le(blob, offset,
                                     static_cast<std::size_t>(count), f32, what));
}

}  // namespace

NetworkSpec load_network(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string manifest_path = (fs::path(dir) / kManifestName).string();
  const std::string weights_path = (fs::path(dir) / kWeightsName).string();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_text(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(manifest_path + ": invalid JSON: " + e.what());
  }
  const std::vector<std::uint8_t> blob = read_file_bytes(weights_path);

  for (const char* field : {"dtype", "input_shape", "class_count", "layers"}) {
    if (!j.contains(field)) {
      throw ValidationError(manifest_path + ": missing field \"" +
                            std::string(field) + "\"");
    }
  }
  const std::string dtype = j.at("dtype").get<std::string>();
  if (dtype != "f32" && dtype != "f64") {
    throw ValidationError(manifest_path + ": dtype must be \"f32\" or \"f64\"");
  }
  const bool f32 = dtype == "f32";

  NetworkSpec net;
  try {
    net.input_shape = j.at("input_shape").get<std::vector<std::int64_t>>();
    net.class_count = j.at("class_count").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(manifest_path + ": " + e.what());
  }

  int index = 0;
  for (const auto& lj : j.at("layers")) {
    const std::string where = "layer " + std::to_string(index);
    if (!lj.contains("kind")) {
      throw ValidationError(manifest_path + ": " + where + " missing kind");
    }
    LayerSpec layer;
    layer.kind = parse_layer_kind(lj.at("kind").get<std::string>());
    if (lj.contains("activation")) {
      layer.activation = parse_activation(lj.at("activation").get<std::string>());
    }
    auto tensor_of = [&](const char* name) {
      if (!lj.contains("tensors") || !lj.at("tensors").contains(name)) {
        throw ValidationError(manifest_path + ": " + where + " missing tensor \"" +
                              name + "\"");
      }
      return load_tensor(lj.at("tensors").at(name), blob, f32,
                         where + " tensor \"" + name + "\"");
    };
    switch (layer.kind) {
      case LayerKind::kDense:
        layer.weight = tensor_of("weight");
        layer.bias = tensor_of("bias");
        break;
      case LayerKind::kConv2d:
        layer.weight = tensor_of("weight");
        layer.bias = tensor_of("bias");
        layer.stride = lj.value("stride", 1);
        layer.padding = lj.value("padding", std::string("valid")) == "same"
                            ? Padding::kSame
                            : Padding::kValid;
        break;
      case LayerKind::kAvgPool2d:
        layer.pool = lj.value("pool", 2);
        layer.stride = lj.value("stride", layer.pool);
        break;
      case LayerKind::kFlatten:
        break;
      case LayerKind::kResidualAdd:
        if (!lj.contains("source")) {
          throw ValidationError(manifest_path + ": " + where + " missing source");
        }
        layer.source = lj.at("source").get<int>();
        break;
      case LayerKind::kBatchNorm:
        layer.bn_mean = tensor_of("mean");
        layer.bn_var = tensor_of("var");
        layer.bn_scale = tensor_of("scale");
        layer.bn_shift = tensor_of("shift");
        layer.bn_eps = lj.value("eps", 1e-5);
        break;
    }
    net.layers.push_back(std::move(layer));
    ++index;
  }
  infer_shapes(net);  // full chain validation
  return net;
}

void save_network(const NetworkSpec& net, const std::string& dir) {
  namespace fs = std::filesystem;
  infer_shapes(net);
  std::error_code ec;
  fs::create_directories(dir, ec);

  nlohmann::json j;
  j["format"] = "fsnn-network";
  j["version"] = 1;
  j["dtype"] = "f64";
  j["input_shape"] = net.input_shape;
  j["class_count"] = net.class_count;

  std::vector<std::uint8_t> blob;
  std::size_t offset = 0;
  nlohmann::json layers = nlohmann::json::array();
  for (const LayerSpec& layer : net.layers) {
    nlohmann::json lj;
    lj["kind"] = layer_kind_name(layer.kind);
    lj["activation"] = activation_name(layer.activation);
    nlohmann::json tensors;
    switch (layer.kind) {
      case LayerKind::kDense:
        tensors["weight"] = tensor_entry(layer.weight, &offset);
        tensors["bias"] = tensor_entry(layer.bias, &offset);
        append_f64_le(&blob, layer.weight.data);
        append_f64_le(&blob, layer.bias.data);
        break;
      case LayerKind::kConv2d:
        lj["stride"] = layer.stride;
        lj["padding"] = layer.padding == Padding::kSame ? "same" : "valid";
        tensors["weight"] = tensor_entry(layer.weight, &offset);
        tensors["bias"] = tensor_entry(layer.bias, &offset);
        append_f64_le(&blob, layer.weight.data);
        append_f64_le(&blob, layer.bias.data);
        break;
      case LayerKind::kAvgPool2d:
        lj["pool"] = layer.pool;
        lj["stride"] = layer.stride;
        break;
      case LayerKind::kFlatten:
        break;
      case LayerKind::kResidualAdd:
        lj["source"] = layer.source;
        break;
      case LayerKind::kBatchNorm:
        lj["eps"] = layer.bn_eps;
        tensors["mean"] = tensor_entry(layer.bn_mean, &offset);
        tensors["var"] = tensor_entry(layer.bn_var, &offset);
        tensors["scale"] = tensor_entry(layer.bn_scale, &offset);
        tensors["shift"] = tensor_entry(layer.bn_shift, &offset);
        append_f64_le(&blob, layer.bn_mean.data);
        append_f64_le(&blob, layer.bn_var.data);
        append_f64_le(&blob, layer.bn_scale.data);
        append_f64_le(&blob, layer.bn_shift.data);
        break;
    }
    if (!tensors.is_null()) lj["tensors"] = tensors;
    layers.push_back(std::move(lj));
  }
  j["layers"] = layers;

  atomic_write_text((fs::path(dir) / kManifestName).string(), j.dump(2) + "\n");
  atomic_write_file((fs::path(dir) / kWeightsName).string(), blob.data(),
                    blob.size());
}

}  // namespace fsnn
