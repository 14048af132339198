#include "fsnn/dataset.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>

#include "fsnn/error.h"
#include "fsnn/io_util.h"
#include "fsnn/rng.h"

namespace fsnn {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_u32_be(const std::vector<std::uint8_t>& bytes,
                          std::size_t offset, const std::string& path) {
  if (offset + 4 > bytes.size()) {
    throw ValidationError(path + ": truncated header: need 4 bytes at byte offset " +
                          std::to_string(offset) + ", file has " +
                          std::to_string(bytes.size()));
  }
  return (static_cast<std::uint32_t>(bytes[offset]) << 24) |
         (static_cast<std::uint32_t>(bytes[offset + 1]) << 16) |
         (static_cast<std::uint32_t>(bytes[offset + 2]) << 8) |
         static_cast<std::uint32_t>(bytes[offset + 3]);
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

void append_u32_be(std::vector<std::uint8_t>* out, std::uint32_t v) {
  out->push_back(static_cast<std::uint8_t>(v >> 24));
  out->push_back(static_cast<std::uint8_t>(v >> 16));
  out->push_back(static_cast<std::uint8_t>(v >> 8));
  out->push_back(static_cast<std::uint8_t>(v));
}

std::uint8_t to_byte(double v) {
  const double scaled = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<std::uint8_t>(scaled);
}

}  // namespace

Dataset load_mnist(const std::string& images_path, const std::string& labels_path) {
  const auto image_bytes = read_file_bytes(images_path);
  const auto label_bytes = read_file_bytes(labels_path);

  const std::uint32_t image_magic = read_u32_be(image_bytes, 0, images_path);
  if (image_magic != kImageMagic) {
    throw ValidationError(images_path + ": expected image magic " +
                          hex32(kImageMagic) + ", got " + hex32(image_magic) +
                          " (byte offset 0)");
  }
  const std::uint32_t label_magic = read_u32_be(label_bytes, 0, labels_path);
  if (label_magic != kLabelMagic) {
    throw ValidationError(labels_path + ": expected label magic " +
                          hex32(kLabelMagic) + ", got " + hex32(label_magic) +
                          " (byte offset 0)");
  }

  const std::uint32_t image_count = read_u32_be(image_bytes, 4, images_path);
  const std::uint32_t rows = read_u32_be(image_bytes, 8, images_path);
  const std::uint32_t cols = read_u32_be(image_bytes, 12, images_path);
  const std::uint32_t label_count = read_u32_be(label_bytes, 4, labels_path);
  if (image_count != label_count) {
    throw ValidationError(images_path + ": image count " +
                          std::to_string(image_count) + " does not match label count " +
                          std::to_string(label_count) + " in " + labels_path);
  }

  const std::size_t pixel_bytes =
      static_cast<std::size_t>(image_count) * rows * cols;
  if (16 + pixel_bytes > image_bytes.size()) {
    throw ValidationError(images_path + ": truncated payload: expected " +
                          std::to_string(pixel_bytes) + " pixel bytes at byte offset 16, file has " +
                          std::to_string(image_bytes.size() - 16));
  }
  if (8 + static_cast<std::size_t>(label_count) > label_bytes.size()) {
    throw ValidationError(labels_path + ": truncated payload: expected " +
                          std::to_string(label_count) + " label bytes at byte offset 8, file has " +
                          std::to_string(label_bytes.size() - 8));
  }

  Dataset ds;
  ds.name = "mnist";
  ds.class_count = 10;
  ds.images = Tensor({static_cast<std::int64_t>(image_count),
                      static_cast<std::int64_t>(rows),
                      static_cast<std::int64_t>(cols)});
  for (std::size_t i = 0; i < pixel_bytes; ++i) {
    ds.images.data[i] = static_cast<double>(image_bytes[16 + i]) / 255.0;
  }
  ds.labels.resize(label_count);
  for (std::uint32_t i = 0; i < label_count; ++i) {
    const std::uint8_t label = label_bytes[8 + i];
    if (label > 9) {
      throw ValidationError(labels_path + ": label out of range 0..9: got " +
                            std::to_string(label) + " (byte offset " +
                            std::to_string(8 + i) + ")");
    }
    ds.labels[i] = label;
  }
  return ds;
}

Dataset load_cifar10(const std::vector<std::string>& bin_paths) {
  if (bin_paths.empty()) throw ValidationError("no record files given");
  constexpr std::size_t kRecord = 3073;  // 1 label byte + 3 x 32 x 32 pixels
  Dataset ds;
  ds.name = "cifar10";
  ds.class_count = 10;

  std::size_t total = 0;
  std::vector<std::vector<std::uint8_t>> files;
  for (const std::string& path : bin_paths) {
    files.push_back(read_file_bytes(path));
    if (files.back().empty() || files.back().size() % kRecord != 0) {
      throw ValidationError(path + ": file length " +
                            std::to_string(files.back().size()) +
                            " is not a positive multiple of the 3073-byte record size");
    }
    total += files.back().size() / kRecord;
  }

  ds.images = Tensor({static_cast<std::int64_t>(total), 3, 32, 32});
  ds.labels.resize(total);
  std::size_t image = 0;
  for (std::size_t f = 0; f < files.size(); ++f) {
    const auto& bytes = files[f];
    const std::size_t records = bytes.size() / kRecord;
    for (std::size_t r = 0; r < records; ++r, ++image) {
      const std::size_t base = r * kRecord;
      const std::uint8_t label = bytes[base];
      if (label > 9) {
        throw ValidationError(bin_paths[f] + ": label out of range 0..9: got " +
                              std::to_string(label) + " in record " +
                              std::to_string(r) + " (byte offset " +
                              std::to_string(base) + ")");
      }
      ds.labels[image] = label;
      double* out = ds.images.data.data() + static_cast<std::int64_t>(image) * 3072;
      for (std::size_t i = 0; i < 3072; ++i) {
        out[i] = static_cast<double>(bytes[base + 1 + i]) / 255.0;
      }
    }
  }
  return ds;
}

Dataset normalize(const Dataset& ds, const NormalizationScheme& scheme) {
  Dataset out = ds;
  if (scheme.kind == NormalizationScheme::Kind::kUnit) {
    out.normalization = "unit";
    return out;
  }
  if (scheme.mean.empty() || scheme.std.size() != scheme.mean.size()) {
    throw ValidationError("per-channel normalization needs matching mean/std lists");
  }
  for (double s : scheme.std) {
    if (s == 0.0) throw ValidationError("normalization std must be non-zero");
  }
  const std::size_t channels = scheme.mean.size();
  if (channels == 1) {
    for (double& v : out.images.data) {
      v = (v - scheme.mean[0]) / scheme.std[0];
    }
  } else {
    if (ds.images.shape.size() < 2 ||
        ds.images.shape[1] != static_cast<std::int64_t>(channels)) {
      throw ValidationError("per-channel normalization with " +
                            std::to_string(channels) +
                            " channels does not match image shape " +
                            shape_to_string(ds.images.shape));
    }
    const std::int64_t n = ds.images.shape[0];
    const std::int64_t per_image = ds.images.numel() / n;
    const std::int64_t per_channel = per_image / static_cast<std::int64_t>(channels);
    for (std::int64_t s = 0; s < n; ++s) {
      for (std::size_t c = 0; c < channels; ++c) {
        double* base = out.images.data.data() + s * per_image +
                       static_cast<std::int64_t>(c) * per_channel;
        for (std::int64_t i = 0; i < per_channel; ++i) {
          base[i] = (base[i] - scheme.mean[c]) / scheme.std[c];
        }
      }
    }
  }
  out.normalization = "per_channel";
  return out;
}

// ---------------------------------------------------------------------------
// Procedural digits.

namespace {

struct Point {
  double x, y;
};

// Stroke skeletons per digit in a unit box, y growing downward.
const std::vector<std::vector<std::vector<Point>>>& glyph_table() {
  static const std::vector<std::vector<std::vector<Point>>> glyphs = {
      /*0*/ {{{0.50, 0.12}, {0.70, 0.22}, {0.76, 0.50}, {0.70, 0.78},
              {0.50, 0.88}, {0.30, 0.78}, {0.24, 0.50}, {0.30, 0.22},
              {0.50, 0.12}}},
      /*1*/ {{{0.36, 0.30}, {0.54, 0.14}, {0.54, 0.86}}},
      /*2*/ {{{0.28, 0.30}, {0.38, 0.16}, {0.60, 0.14}, {0.72, 0.28},
              {0.66, 0.46}, {0.30, 0.84}, {0.74, 0.84}}},
      /*3*/ {{{0.30, 0.20}, {0.50, 0.13}, {0.68, 0.26}, {0.52, 0.44},
              {0.70, 0.62}, {0.52, 0.87}, {0.30, 0.80}}},
      /*4*/ {{{0.63, 0.86}, {0.63, 0.14}, {0.28, 0.62}, {0.78, 0.62}}},
      /*5*/ {{{0.70, 0.15}, {0.36, 0.15}, {0.33, 0.46}, {0.56, 0.42},
              {0.71, 0.58}, {0.58, 0.84}, {0.32, 0.80}}},
      /*6*/ {{{0.62, 0.12}, {0.44, 0.32}, {0.34, 0.58}, {0.38, 0.80},
              {0.56, 0.88}, {0.66, 0.72}, {0.62, 0.56}, {0.44, 0.54},
              {0.35, 0.64}}},
      /*7*/ {{{0.28, 0.15}, {0.73, 0.15}, {0.46, 0.86}}},
      /*8*/ {{{0.50, 0.13}, {0.66, 0.23}, {0.62, 0.42}, {0.50, 0.48},
              {0.38, 0.42}, {0.34, 0.23}, {0.50, 0.13}},
             {{0.50, 0.48}, {0.68, 0.58}, {0.70, 0.76}, {0.50, 0.88},
              {0.30, 0.76}, {0.32, 0.58}, {0.50, 0.48}}},
      /*9*/ {{{0.66, 0.42}, {0.50, 0.50}, {0.35, 0.40}, {0.33, 0.24},
              {0.48, 0.13}, {0.64, 0.20}, {0.66, 0.42}, {0.62, 0.86}}},
  };
  return glyphs;
}

void render_digit(int digit, Rng* rng, double* out28x28) {
  constexpr int kSize = 28;
  // Seeded affine jitter applied to the skeleton.
  const double angle = rng->uniform(-0.22, 0.22);
  const double sx = rng->uniform(0.78, 1.06);
  const double sy = rng->uniform(0.78, 1.06);
  const double shear = rng->uniform(-0.18, 0.18);
  const double tx = rng->uniform(-0.08, 0.08);
  const double ty = rng->uniform(-0.08, 0.08);
  const double cos_a = std::cos(angle);
  const double sin_a = std::sin(angle);
  auto transform = [&](Point p) {
    double x = p.x - 0.5, y = p.y - 0.5;
    x += shear * y;
    x *= sx;
    y *= sy;
    const double rx = cos_a * x - sin_a * y;
    const double ry = sin_a * x + cos_a * y;
    return Point{rx + 0.5 + tx, ry + 0.5 + ty};
  };

  std::vector<std::vector<Point>> strokes;
  for (const auto& stroke : glyph_table()[static_cast<std::size_t>(digit)]) {
    std::vector<Point> s;
    for (const Point& p : stroke) s.push_back(transform(p));
    strokes.push_back(std::move(s));
  }

  const double thickness = rng->uniform(0.035, 0.075);
  const double intensity = rng->uniform(0.65, 1.0);
  constexpr double kEdge = 0.025;  // anti-aliasing ramp width

  for (int py = 0; py < kSize; ++py) {
    for (int px = 0; px < kSize; ++px) {
      const double x = (px + 0.5) / kSize;
      const double y = (py + 0.5) / kSize;
      double dist = 1e9;
      for (const auto& stroke : strokes) {
        for (std::size_t i = 0; i + 1 < stroke.size(); ++i) {
          const Point a = stroke[i];
          const Point b = stroke[i + 1];
          const double vx = b.x - a.x, vy = b.y - a.y;
          const double len_sq = std::max(vx * vx + vy * vy, 1e-12);
          double t = ((x - a.x) * vx + (y - a.y) * vy) / len_sq;
          t = std::clamp(t, 0.0, 1.0);
          const double dx = x - (a.x + t * vx);
          const double dy = y - (a.y + t * vy);
          dist = std::min(dist, std::sqrt(dx * dx + dy * dy));
        }
      }
      const double ink =
          std::clamp((thickness - dist) / kEdge + 0.5, 0.0, 1.0);
      out28x28[py * kSize + px] = intensity * ink;
    }
  }
  for (int i = 0; i < kSize * kSize; ++i) {
    out28x28[i] = std::clamp(out28x28[i] + 0.02 * rng->normal(), 0.0, 1.0);
  }
}

}  // namespace

Dataset synth_digits(int count, std::uint64_t seed) {
  if (count < 1) throw ValidationError("digit count must be >= 1");
  Dataset ds;
  ds.name = "synthetic-digits";
  ds.class_count = 10;
  ds.images = Tensor({count, 28, 28});
  ds.labels.resize(static_cast<std::size_t>(count));
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    const int digit = static_cast<int>(rng.below(10));
    ds.labels[static_cast<std::size_t>(i)] = digit;
    render_digit(digit, &rng,
                 ds.images.data.data() + static_cast<std::int64_t>(i) * 784);
  }
  return ds;
}

Dataset synth_color32(int count, std::uint64_t seed) {
  if (count < 1) throw ValidationError("image count must be >= 1");
  Dataset ds;
  ds.name = "synthetic-color32";
  ds.class_count = 10;
  ds.images = Tensor({count, 3, 32, 32});
  ds.labels.resize(static_cast<std::size_t>(count));
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    ds.labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(10));
    double* img = ds.images.data.data() + static_cast<std::int64_t>(i) * 3072;
    for (int p = 0; p < 3072; ++p) {
      img[p] = static_cast<double>(rng.below(256)) / 255.0;
    }
  }
  return ds;
}

void write_mnist(const Dataset& ds, const std::string& images_path,
                 const std::string& labels_path) {
  if (ds.images.shape.size() != 3) {
    throw ValidationError("image writer expects [n, rows, cols] images");
  }
  const auto n = static_cast<std::uint32_t>(ds.images.shape[0]);
  const auto rows = static_cast<std::uint32_t>(ds.images.shape[1]);
  const auto cols = static_cast<std::uint32_t>(ds.images.shape[2]);

  std::vector<std::uint8_t> images;
  images.reserve(16 + ds.images.data.size());
  append_u32_be(&images, kImageMagic);
  append_u32_be(&images, n);
  append_u32_be(&images, rows);
  append_u32_be(&images, cols);
  for (double v : ds.images.data) images.push_back(to_byte(v));
  atomic_write_file(images_path, images.data(), images.size());

  std::vector<std::uint8_t> labels;
  labels.reserve(8 + ds.labels.size());
  append_u32_be(&labels, kLabelMagic);
  append_u32_be(&labels, n);
  for (int label : ds.labels) labels.push_back(static_cast<std::uint8_t>(label));
  atomic_write_file(labels_path, labels.data(), labels.size());
}

void write_cifar10(const Dataset& ds, const std::string& bin_path) {
  if (ds.images.shape.size() != 4 || ds.images.shape[1] != 3 ||
      ds.images.shape[2] != 32 || ds.images.shape[3] != 32) {
    throw ValidationError("record writer expects [n, 3, 32, 32] images");
  }
  const std::int64_t n = ds.images.shape[0];
  std::vector<std::uint8_t> bytes;
  bytes.reserve(static_cast<std::size_t>(n) * 3073);
  for (std::int64_t i = 0; i < n; ++i) {
    bytes.push_back(static_cast<std::uint8_t>(ds.labels[static_cast<std::size_t>(i)]));
    const double* img = ds.images.data.data() + i * 3072;
    for (int p = 0; p < 3072; ++p) bytes.push_back(to_byte(img[p]));
  }
  atomic_write_file(bin_path, bytes.data(), bytes.size());
}

Dataset load_dataset_spec(const std::string& spec, bool train_split) {
  namespace fs = std::filesystem;
  const auto colon = spec.find(':');
  if (colon == std::string::npos) {
    throw ValidationError("dataset spec must look like mnist:<dir> or cifar10:<dir>, got \"" +
                          spec + "\"");
  }
  const std::string kind = spec.substr(0, colon);
  const fs::path dir = spec.substr(colon + 1);
  if (kind == "mnist") {
    if (train_split) {
      return load_mnist((dir / "train-images-idx3-ubyte").string(),
                        (dir / "train-labels-idx1-ubyte").string());
    }
    return load_mnist((dir / "t10k-images-idx3-ubyte").string(),
                      (dir / "t10k-labels-idx1-ubyte").string());
  }
  if (kind == "cifar10") {
    if (train_split) {
      std::vector<std::string> paths;
      for (int b = 1; b <= 5; ++b) {
        paths.push_back((dir / ("data_batch_" + std::to_string(b) + ".bin")).string());
      }
      return load_cifar10(paths);
    }
    return load_cifar10({(dir / "test_batch.bin").string()});
  }
  throw ValidationError("unknown dataset kind \"" + kind +
                        "\"; supported: mnist, cifar10");
}

}  // namespace fsnn
