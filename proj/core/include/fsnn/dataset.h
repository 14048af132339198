#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fsnn/tensor.h"

namespace fsnn {

struct Dataset {
  Tensor images;               // [n, ...] with values in [0, 1] after loading
  std::vector<int> labels;     // one label per image
  std::string name;
  std::string normalization = "raw";
  int class_count = 10;

  std::int64_t size() const { return images.shape.empty() ? 0 : images.shape[0]; }
};

// IDX-format loader (big-endian headers): images file magic 0x00000803 with
// [count, rows, cols], labels file magic 0x00000801 with [count]. Pixels are
// unsigned bytes scaled to [0, 1]. Every failure names the file and the byte
// offset where the problem was detected.
Dataset load_mnist(const std::string& images_path, const std::string& labels_path);

// 3073-byte record format: 1 label byte (0..9) followed by 3072 channel-major
// pixels (3 x 32 x 32). Multiple files concatenate in argument order.
Dataset load_cifar10(const std::vector<std::string>& bin_paths);

struct NormalizationScheme {
  enum class Kind { kUnit, kPerChannel } kind = Kind::kUnit;
  std::vector<double> mean;  // per channel; size 1 broadcasts
  std::vector<double> std;
};

// unit: identity on already [0, 1] data. per_channel: (x - mean) / std per
// leading channel (images shaped [n, c, ...]) or over everything when a
// single mean/std is given. Zero std entries are rejected.
Dataset normalize(const Dataset& ds, const NormalizationScheme& scheme);

// Procedurally rendered digit images, 28x28 grayscale in [0, 1]: per-class
// stroke skeletons drawn with seeded affine jitter, stroke width, intensity
// and pixel noise. Used as a drop-in stand-in when no digit corpus is on
// disk; the same seed always yields the same images.
Dataset synth_digits(int count, std::uint64_t seed);

// Valid-format random color images for exercising the 3073-byte record path.
Dataset synth_color32(int count, std::uint64_t seed);

// Writers emitting the exact binary layouts the loaders parse; used to
// materialize synthetic corpora and loader test fixtures.
void write_mnist(const Dataset& ds, const std::string& images_path,
                 const std::string& labels_path);
void write_cifar10(const Dataset& ds, const std::string& bin_path);

// Resolves a --dataset style spec "mnist:<dir>" / "cifar10:<dir>" to the
// train or test split. For mnist the directory must hold the conventional
// train-images-idx3-ubyte / train-labels-idx1-ubyte and
// t10k-images-idx3-ubyte / t10k-labels-idx1-ubyte file pairs; for cifar10
// data_batch_1..5.bin (train) and test_batch.bin.
Dataset load_dataset_spec(const std::string& spec, bool train_split);

}  // namespace fsnn
