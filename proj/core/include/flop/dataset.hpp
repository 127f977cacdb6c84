#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "flop/rng.hpp"
#include "flop/tensor.hpp"

namespace flop {

enum class DatasetSource { kFashionMnist, kCifar10, kSynthetic };

std::string_view to_string(DatasetSource source);
DatasetSource parse_dataset_source(std::string_view name);

enum class DatasetSplit { kTrain, kTest };

/// Labelled images with pixel values in [0, 1].
struct Dataset {
  Tensor images;  // N x C x H x W
  std::vector<int> labels;
  std::vector<std::uint64_t> ids;
  std::size_t classes = 0;
  DatasetSource source = DatasetSource::kSynthetic;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::size_t image_size() const { return channels() * height() * width(); }

  /// Gathers the given rows into a B x C x H x W tensor.
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;

  std::vector<std::size_t> class_counts() const;

  /// Rows `indices`, in that order.
  Dataset subset(std::span<const std::size_t> indices) const;

  /// Keeps the first `per_class` rows of every class, original order kept.
  Dataset limit_per_class(std::size_t per_class) const;

  /// Throws FormatError unless sizes agree and labels lie in [0, classes).
  void validate() const;
};

// ---- IDX (MNIST-family) ----------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};

/// Reads an IDX image file, plain or gzip-compressed.
IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);

/// `dir` holds {train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]. The split
/// must contain exactly 60,000 (train) or 10,000 (test) 28x28 images.
Dataset load_fashion_mnist(const std::filesystem::path& dir, DatasetSplit split);

// ---- CIFAR-10 binary --------------------------------------------------------

inline constexpr std::size_t kCifarRecordBytes = 3073;

/// Parses one CIFAR-10 "bin" batch file of 3073-byte records.
Dataset read_cifar10_batch(const std::filesystem::path& path);

/// `dir` holds data_batch_{1..5}.bin and test_batch.bin. Train is 50,000
/// images, test 10,000.
Dataset load_cifar10(const std::filesystem::path& dir, DatasetSplit split);

// ---- synthetic ----------------------------------------------------------------

struct SyntheticSpec {
  std::vector<std::size_t> class_counts;  // one entry per class
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  /// Std of the Gaussian pixel noise added to each class prototype.
  double noise = 0.25;
};

/// Class-imbalance profile of a three-class chest X-ray corpus
/// (normal / pneumonia / COVID-19 = 7966 / 5471 / 517).
std::vector<double> covidx_profile();

/// Rounds profile * total / sum(profile) per class, every class at least 1.
std::vector<std::size_t> scaled_counts(std::span<const double> profile,
                                       std::size_t total);

/// Each class gets a random blocky prototype image; samples are the
/// prototype plus Gaussian noise, clipped to [0, 1], then shuffled.
Dataset gen_synthetic(const SyntheticSpec& spec, Rng& rng);

/// Binary container for any Dataset (see docs/file-formats.md).
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace flop
