#include "flop/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>

#include "flop/error.hpp"

namespace flop {

namespace fs = std::filesystem;

std::string_view to_string(DatasetSource source) {
  switch (source) {
    case DatasetSource::kFashionMnist: return "fashion-mnist";
    case DatasetSource::kCifar10: return "cifar10";
    case DatasetSource::kSynthetic: return "synthetic";
  }
  return "unknown";
}

DatasetSource parse_dataset_source(std::string_view name) {
  if (name == "fashion-mnist") return DatasetSource::kFashionMnist;
  if (name == "cifar10") return DatasetSource::kCifar10;
  if (name == "synthetic") return DatasetSource::kSynthetic;
  throw ConfigError("unknown dataset '" + std::string(name) + "'");
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t per = image_size();
  Tensor out({indices.size(), channels(), height(), width()});
  const double* src = images.data().data();
  double* dst = out.data().data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(src + indices[i] * per, per, dst + i * per);
  }
  return out;
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels[i]);
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(classes, 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.images = batch(indices);
  out.labels = batch_labels(indices);
  out.ids.reserve(indices.size());
  for (std::size_t i : indices) out.ids.push_back(ids[i]);
  out.classes = classes;
  out.source = source;
  return out;
}

Dataset Dataset::limit_per_class(std::size_t per_class) const {
  std::vector<std::size_t> taken(classes, 0);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < size(); ++i) {
    auto& t = taken[static_cast<std::size_t>(labels[i])];
    if (t < per_class) {
      ++t;
      keep.push_back(i);
    }
  }
  return subset(keep);
}

void Dataset::validate() const {
  if (images.rank() != 4 || images.dim(0) != labels.size() ||
      ids.size() != labels.size()) {
    throw FormatError("dataset: images " + shape_string(images.shape()) + ", " +
                          std::to_string(labels.size()) + " labels and " +
                          std::to_string(ids.size()) + " ids disagree",
                      0);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw FormatError("dataset: label " + std::to_string(labels[i]) +
                            " of sample " + std::to_string(i) +
                            " outside [0, " + std::to_string(classes) + ")",
                        0);
    }
  }
}

namespace {

/// Whole file, transparently gunzipped when compressed.
std::vector<std::uint8_t> read_file(const fs::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) {
    throw ConfigError("cannot open '" + path.string() + "'");
  }
  std::vector<std::uint8_t> bytes;
  std::uint8_t buf[1 << 16];
  for (;;) {
    const int n = gzread(f, buf, sizeof(buf));
    if (n < 0) {
      int errnum = 0;
      std::string msg = gzerror(f, &errnum);
      gzclose(f);
      throw FormatError("'" + path.string() + "': " + msg, bytes.size());
    }
    if (n == 0) break;
    bytes.insert(bytes.end(), buf, buf + n);
  }
  gzclose(f);
  return bytes;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off,
                        const fs::path& path, const char* field) {
  if (off + 4 > b.size()) {
    throw FormatError("'" + path.string() + "': truncated while reading " +
                          field,
                      b.size());
  }
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

void expect_length(const std::vector<std::uint8_t>& bytes, std::size_t expected,
                   const fs::path& path) {
  if (bytes.size() < expected) {
    throw FormatError("'" + path.string() + "': truncated, expected " +
                          std::to_string(expected) + " bytes, found " +
                          std::to_string(bytes.size()),
                      bytes.size());
  }
  if (bytes.size() > expected) {
    throw FormatError("'" + path.string() + "': " +
                          std::to_string(bytes.size() - expected) +
                          " unexpected trailing bytes",
                      expected);
  }
}

fs::path with_optional_gz(const fs::path& base) {
  if (fs::exists(base)) return base;
  fs::path gz = base;
  gz += ".gz";
  if (fs::exists(gz)) return gz;
  throw ConfigError("neither '" + base.string() + "' nor '" + gz.string() +
                    "' exists");
}

}  // namespace

IdxImages read_idx_images(const fs::path& path) {
  const auto bytes = read_file(path);
  const std::uint32_t magic = read_be32(bytes, 0, path, "magic number");
  if (magic != kIdxImageMagic) {
    throw FormatError("'" + path.string() + "': bad IDX image magic " +
                          hex32(magic) + ", expected " + hex32(kIdxImageMagic),
                      0);
  }
  IdxImages out;
  out.count = read_be32(bytes, 4, path, "image count");
  out.rows = read_be32(bytes, 8, path, "row count");
  out.cols = read_be32(bytes, 12, path, "column count");
  if (out.count == 0 || out.rows == 0 || out.cols == 0) {
    throw FormatError("'" + path.string() + "': zero dimension in IDX header", 4);
  }
  expect_length(bytes, 16 + out.count * out.rows * out.cols, path);
  out.pixels.assign(bytes.begin() + 16, bytes.end());
  return out;
}

std::vector<std::uint8_t> read_idx_labels(const fs::path& path) {
  const auto bytes = read_file(path);
  const std::uint32_t magic = read_be32(bytes, 0, path, "magic number");
  if (magic != kIdxLabelMagic) {
    throw FormatError("'" + path.string() + "': bad IDX label magic " +
                          hex32(magic) + ", expected " + hex32(kIdxLabelMagic),
                      0);
  }
  const std::size_t count = read_be32(bytes, 4, path, "label count");
  expect_length(bytes, 8 + count, path);
  return {bytes.begin() + 8, bytes.end()};
}

Dataset load_fashion_mnist(const fs::path& dir, DatasetSplit split) {
  const std::string prefix = split == DatasetSplit::kTrain ? "train" : "t10k";
  const std::size_t expected = split == DatasetSplit::kTrain ? 60000 : 10000;
  const fs::path image_path = with_optional_gz(dir / (prefix + "-images-idx3-ubyte"));
  const fs::path label_path = with_optional_gz(dir / (prefix + "-labels-idx1-ubyte"));
  const IdxImages img = read_idx_images(image_path);
  const auto labels = read_idx_labels(label_path);

  if (img.rows != 28 || img.cols != 28) {
    throw FormatError("'" + image_path.string() + "': expected 28x28 images, got " +
                          std::to_string(img.rows) + "x" + std::to_string(img.cols),
                      8);
  }
  if (img.count != expected) {
    throw FormatError("'" + image_path.string() + "': expected " +
                          std::to_string(expected) + " images, header says " +
                          std::to_string(img.count),
                      4);
  }
  if (labels.size() != img.count) {
    throw FormatError("'" + label_path.string() + "': " +
                          std::to_string(labels.size()) + " labels for " +
                          std::to_string(img.count) + " images",
                      4);
  }

  Dataset d;
  d.classes = 10;
  d.source = DatasetSource::kFashionMnist;
  d.images = Tensor({img.count, 1, 28, 28});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    d.images[i] = img.pixels[i] / 255.0;
  }
  d.labels.reserve(img.count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 10) {
      throw FormatError("'" + label_path.string() + "': label " +
                            std::to_string(labels[i]) + " outside [0, 10)",
                        8 + i);
    }
    d.labels.push_back(labels[i]);
  }
  d.ids.resize(img.count);
  std::iota(d.ids.begin(), d.ids.end(), std::uint64_t{0});
  return d;
}

Dataset read_cifar10_batch(const fs::path& path) {
  const auto bytes = read_file(path);
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    const std::size_t whole = bytes.size() / kCifarRecordBytes * kCifarRecordBytes;
    throw FormatError("'" + path.string() + "': length " +
                          std::to_string(bytes.size()) +
                          " is not a positive multiple of the " +
                          std::to_string(kCifarRecordBytes) + "-byte record size",
                      whole);
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  Dataset d;
  d.classes = 10;
  d.source = DatasetSource::kCifar10;
  d.images = Tensor({n, 3, 32, 32});
  d.labels.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t off = r * kCifarRecordBytes;
    if (bytes[off] >= 10) {
      throw FormatError("'" + path.string() + "': label byte " +
                            std::to_string(bytes[off]) + " of record " +
                            std::to_string(r) + " outside [0, 10)",
                        off);
    }
    d.labels.push_back(bytes[off]);
    double* dst = d.images.data().data() + r * 3072;
    for (std::size_t p = 0; p < 3072; ++p) dst[p] = bytes[off + 1 + p] / 255.0;
  }
  d.ids.resize(n);
  std::iota(d.ids.begin(), d.ids.end(), std::uint64_t{0});
  return d;
}

Dataset load_cifar10(const fs::path& dir, DatasetSplit split) {
  std::vector<fs::path> files;
  if (split == DatasetSplit::kTrain) {
    for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  } else {
    files.push_back(dir / "test_batch.bin");
  }
  std::vector<Dataset> parts;
  std::size_t total = 0;
  for (const auto& f : files) {
    parts.push_back(read_cifar10_batch(f));
    if (parts.back().size() != 10000) {
      throw FormatError("'" + f.string() + "': expected 10000 records, found " +
                            std::to_string(parts.back().size()),
                        parts.back().size() * kCifarRecordBytes);
    }
    total += parts.back().size();
  }
  Dataset d;
  d.classes = 10;
  d.source = DatasetSource::kCifar10;
  d.images = Tensor({total, 3, 32, 32});
  std::size_t row = 0;
  for (const auto& p : parts) {
    std::copy(p.images.data().begin(), p.images.data().end(),
              d.images.data().begin() + row * 3072);
    d.labels.insert(d.labels.end(), p.labels.begin(), p.labels.end());
    row += p.size();
  }
  d.ids.resize(total);
  std::iota(d.ids.begin(), d.ids.end(), std::uint64_t{0});
  return d;
}

std::vector<double> covidx_profile() { return {7966.0, 5471.0, 517.0}; }

std::vector<std::size_t> scaled_counts(std::span<const double> profile,
                                       std::size_t total) {
  const double sum = std::accumulate(profile.begin(), profile.end(), 0.0);
  if (profile.empty() || !(sum > 0.0)) {
    throw ConfigError("class profile must have positive mass");
  }
  std::vector<std::size_t> counts;
  for (double w : profile) {
    if (w < 0.0) throw ConfigError("class profile weights must be non-negative");
    const auto c = static_cast<std::size_t>(std::llround(w * static_cast<double>(total) / sum));
    counts.push_back(std::max<std::size_t>(c, 1));
  }
  return counts;
}

Dataset gen_synthetic(const SyntheticSpec& spec, Rng& rng) {
  const std::size_t classes = spec.class_counts.size();
  if (classes == 0) throw ConfigError("synthetic dataset needs at least one class");
  if (spec.channels == 0 || spec.height == 0 || spec.width == 0) {
    throw ConfigError("synthetic image dimensions must be positive");
  }
  if (!(spec.noise >= 0.0)) throw ConfigError("synthetic noise must be non-negative");
  const std::size_t total =
      std::accumulate(spec.class_counts.begin(), spec.class_counts.end(), std::size_t{0});
  if (total == 0) throw ConfigError("synthetic dataset needs at least one sample");

  const std::size_t per = spec.channels * spec.height * spec.width;
  constexpr std::size_t kBlock = 4;
  std::vector<std::vector<double>> prototypes(classes, std::vector<double>(per));
  for (auto& proto : prototypes) {
    const std::size_t bh = (spec.height + kBlock - 1) / kBlock;
    const std::size_t bw = (spec.width + kBlock - 1) / kBlock;
    for (std::size_t c = 0; c < spec.channels; ++c) {
      std::vector<double> blocks(bh * bw);
      for (double& v : blocks) v = rng.uniform();
      for (std::size_t y = 0; y < spec.height; ++y)
        for (std::size_t x = 0; x < spec.width; ++x)
          proto[(c * spec.height + y) * spec.width + x] =
              blocks[(y / kBlock) * bw + x / kBlock];
    }
  }

  std::vector<int> order;
  order.reserve(total);
  for (std::size_t c = 0; c < classes; ++c)
    order.insert(order.end(), spec.class_counts[c], static_cast<int>(c));
  rng.shuffle(order.begin(), order.end());

  Dataset d;
  d.classes = classes;
  d.source = DatasetSource::kSynthetic;
  d.images = Tensor({total, spec.channels, spec.height, spec.width});
  d.labels = order;
  d.ids.resize(total);
  std::iota(d.ids.begin(), d.ids.end(), std::uint64_t{0});
  for (std::size_t i = 0; i < total; ++i) {
    const auto& proto = prototypes[static_cast<std::size_t>(order[i])];
    double* dst = d.images.data().data() + i * per;
    for (std::size_t p = 0; p < per; ++p) {
      dst[p] = std::clamp(proto[p] + spec.noise * rng.normal(), 0.0, 1.0);
    }
  }
  return d;
}

// ---- container format -------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'F', 'L', 'O', 'P', 'D', 'S', '0', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 40;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
}

template <typename T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t off) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= U{in[off + i]} << (8 * i);
  return std::bit_cast<T>(bits);
}

}  // namespace

void save_dataset(const fs::path& path, const Dataset& data) {
  data.validate();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.source));
  put_le<std::uint64_t>(out, data.size());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.channels()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.height()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.width()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.classes));
  out.reserve(out.size() + data.size() * (12 + 8 * data.image_size()));
  for (int l : data.labels) put_le<std::int32_t>(out, l);
  for (std::uint64_t id : data.ids) put_le<std::uint64_t>(out, id);
  for (double v : data.images.data()) put_le<double>(out, v);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot write '" + path.string() + "'");
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw ConfigError("failed writing '" + path.string() + "'");
}

Dataset load_dataset(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> in((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
  if (in.size() < kHeaderBytes) {
    throw FormatError("'" + path.string() + "': truncated header", in.size());
  }
  if (std::memcmp(in.data(), kMagic, 8) != 0) {
    throw FormatError("'" + path.string() + "': bad magic, expected FLOPDS01", 0);
  }
  const auto version = get_le<std::uint32_t>(in, 8);
  if (version != kVersion) {
    throw FormatError("'" + path.string() + "': unsupported version " +
                          std::to_string(version),
                      8);
  }
  const auto source = get_le<std::uint32_t>(in, 12);
  if (source > static_cast<std::uint32_t>(DatasetSource::kSynthetic)) {
    throw FormatError("'" + path.string() + "': unknown source tag " +
                          std::to_string(source),
                      12);
  }
  const auto n = get_le<std::uint64_t>(in, 16);
  const std::size_t c = get_le<std::uint32_t>(in, 24);
  const std::size_t h = get_le<std::uint32_t>(in, 28);
  const std::size_t w = get_le<std::uint32_t>(in, 32);
  const std::size_t k = get_le<std::uint32_t>(in, 36);
  if (n == 0 || c == 0 || h == 0 || w == 0 || k == 0) {
    throw FormatError("'" + path.string() + "': zero dimension in header", 16);
  }
  const std::size_t expected = kHeaderBytes + n * (4 + 8 + 8 * c * h * w);
  expect_length(in, expected, path);

  Dataset d;
  d.source = static_cast<DatasetSource>(source);
  d.classes = k;
  std::size_t off = kHeaderBytes;
  d.labels.resize(n);
  for (auto& l : d.labels) {
    l = get_le<std::int32_t>(in, off);
    if (l < 0 || static_cast<std::size_t>(l) >= k) {
      throw FormatError("'" + path.string() + "': label " + std::to_string(l) +
                            " outside [0, " + std::to_string(k) + ")",
                        off);
    }
    off += 4;
  }
  d.ids.resize(n);
  for (auto& id : d.ids) {
    id = get_le<std::uint64_t>(in, off);
    off += 8;
  }
  d.images = Tensor({n, c, h, w});
  for (double& v : d.images.data()) {
    v = get_le<double>(in, off);
    off += 8;
  }
  return d;
}

}  // namespace flop
