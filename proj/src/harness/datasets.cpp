#include "atfs/harness/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <random>
#include <string_view>
#include <vector>

#include "atfs/io.hpp"

namespace atfs::harness {

namespace {

constexpr double kPi = 3.14159265358979323846;

// A pool of labeled samples the splits are carved from.
struct Pool {
  Tensor x;
  std::vector<int> y;
  std::size_t classes = 0;
};

Pool gaussians(const DatasetSpec& spec, std::size_t n) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> center(0.2, 0.8);
  std::normal_distribution<double> noise(0.0, spec.noise);
  std::vector<double> centers(spec.classes * spec.dim);
  for (double& c : centers) c = center(rng);
  Pool p{Tensor({n, spec.dim}), std::vector<int>(n), spec.classes};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % spec.classes;
    p.y[i] = static_cast<int>(c);
    for (std::size_t k = 0; k < spec.dim; ++k) {
      p.x.at(i, k) = std::clamp(centers[c * spec.dim + k] + noise(rng), 0.0, 1.0);
    }
  }
  return p;
}

Pool moons(const DatasetSpec& spec, std::size_t n) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> angle(0.0, kPi);
  std::normal_distribution<double> noise(0.0, spec.noise);
  Pool p{Tensor({n, 2}), std::vector<int>(n), 2};
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 2);
    const double t = angle(rng);
    double a = c == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double b = c == 0 ? std::sin(t) : 0.5 - std::sin(t);
    a += noise(rng);
    b += noise(rng);
    // The noiseless moons span [-1, 2] x [-0.5, 1].
    p.x.at(i, 0) = std::clamp((a + 1.0) / 3.0, 0.0, 1.0);
    p.x.at(i, 1) = std::clamp((b + 0.5) / 1.5, 0.0, 1.0);
    p.y[i] = c;
  }
  return p;
}

std::uint32_t be32(const std::string& s, std::size_t off) {
  return (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off])) << 24) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 1])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 2])) << 8) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + 3]));
}

std::string read_source(const std::filesystem::path& path, const std::string& hint) {
  if (!std::filesystem::exists(path)) {
    throw DataError("missing " + path.string() + "; " + hint);
  }
  return io::read_file(path);
}

Pool mnist() {
  const auto dir = data_dir() / "mnist";
  const std::string hint = "run tools/fetch_mnist_subset.py or set ATFS_DATA_DIR";
  const std::string img = read_source(dir / "train-images-idx3-ubyte", hint);
  const std::string lbl = read_source(dir / "train-labels-idx1-ubyte", hint);
  if (img.size() < 16 || be32(img, 0) != 2051 || lbl.size() < 8 || be32(lbl, 0) != 2049) {
    throw DataError("bad IDX header in " + dir.string());
  }
  const std::size_t n = be32(img, 4), rows = be32(img, 8), cols = be32(img, 12);
  if (rows != 28 || cols != 28 || be32(lbl, 4) != n || img.size() != 16 + n * 784 ||
      lbl.size() != 8 + n) {
    throw DataError("inconsistent IDX files in " + dir.string());
  }
  Pool p{Tensor({n, 1, 28, 28}), std::vector<int>(n), 10};
  for (std::size_t i = 0; i < n; ++i) {
    p.y[i] = static_cast<unsigned char>(lbl[8 + i]);
    if (p.y[i] > 9) throw DataError("mnist label out of range");
    for (std::size_t k = 0; k < 784; ++k) {
      p.x[i * 784 + k] = static_cast<unsigned char>(img[16 + i * 784 + k]) / 255.0;
    }
  }
  return p;
}

Pool cifar10() {
  const auto dir = data_dir() / "cifar10";
  constexpr std::size_t kRecord = 1 + 3072;
  std::string bytes;
  for (const char* name : {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                           "data_batch_4.bin", "data_batch_5.bin", "test_batch.bin"}) {
    if (std::filesystem::exists(dir / name)) bytes += io::read_file(dir / name);
  }
  if (bytes.empty()) {
    throw DataError("no CIFAR-10 binary batches in " + dir.string() +
                    "; place the cifar-10-batches-bin files there");
  }
  if (bytes.size() % kRecord != 0) throw DataError("truncated CIFAR-10 batch in " + dir.string());
  const std::size_t n = bytes.size() / kRecord;
  Pool p{Tensor({n, 3, 32, 32}), std::vector<int>(n), 10};
  for (std::size_t i = 0; i < n; ++i) {
    p.y[i] = static_cast<unsigned char>(bytes[i * kRecord]);
    if (p.y[i] > 9) throw DataError("cifar10 label out of range");
    for (std::size_t k = 0; k < 3072; ++k) {
      p.x[i * 3072 + k] = static_cast<unsigned char>(bytes[i * kRecord + 1 + k]) / 255.0;
    }
  }
  return p;
}

Split take(const Pool& pool, const std::vector<std::size_t>& order, std::size_t begin,
           std::size_t count) {
  Shape shape = pool.x.shape();
  shape[0] = count;
  Split s{Tensor(shape), std::vector<int>(count), std::vector<std::size_t>(count)};
  const std::size_t d = pool.x.row_size();
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t src = order[begin + i];
    std::copy_n(pool.x.data() + src * d, d, s.x.data() + i * d);
    s.y[i] = pool.y[src];
    s.source_index[i] = src;
  }
  return s;
}

}  // namespace

void DatasetSpec::validate() const {
  if (name != "synthetic-gaussians" && name != "synthetic-moons" && name != "mnist-subset" &&
      name != "cifar10-subset") {
    throw std::invalid_argument("unknown dataset '" + name + "'");
  }
  if (train == 0 || val == 0 || test == 0) {
    throw std::invalid_argument("dataset split sizes must be >= 1");
  }
  if (name == "synthetic-gaussians") {
    if (classes < 2) throw std::invalid_argument("synthetic-gaussians needs classes >= 2");
    if (dim == 0) throw std::invalid_argument("synthetic-gaussians needs dim >= 1");
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) {
    throw std::invalid_argument("dataset noise must be finite and >= 0");
  }
}

std::filesystem::path data_dir() {
  if (const char* d = std::getenv("ATFS_DATA_DIR"); d && *d) return d;
  if (const char* x = std::getenv("XDG_CACHE_HOME"); x && *x) {
    return std::filesystem::path(x) / "atfs-lab";
  }
  const char* home = std::getenv("HOME");
  return std::filesystem::path(home ? home : ".") / ".cache" / "atfs-lab";
}

DatasetSplits load_dataset(const DatasetSpec& spec) {
  spec.validate();
  const std::size_t total = spec.train + spec.val + spec.test;
  Pool pool;
  if (spec.name == "synthetic-gaussians") {
    pool = gaussians(spec, total);
  } else if (spec.name == "synthetic-moons") {
    pool = moons(spec, total);
  } else if (spec.name == "mnist-subset") {
    pool = mnist();
  } else {
    pool = cifar10();
  }
  const std::size_t n = pool.y.size();
  if (total > n) {
    throw DataError(spec.name + ": requested " + std::to_string(total) + " samples but the source has " +
                    std::to_string(n));
  }

  // Stratified shuffle: a seeded permutation, then stably reordered by each
  // sample's rank within its class, so the classes interleave and every
  // contiguous split of at least C samples sees each class while it lasts.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(spec.seed ^ 0x5eed5eed5eed5eedULL);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> rank(n), seen(pool.classes, 0);
  for (std::size_t i : order) rank[i] = seen[static_cast<std::size_t>(pool.y[i])]++;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rank[a] < rank[b]; });

  DatasetSplits out;
  out.name = spec.name;
  out.num_classes = pool.classes;
  out.input_shape.assign(pool.x.shape().begin() + 1, pool.x.shape().end());
  out.train = take(pool, order, 0, spec.train);
  out.val = take(pool, order, spec.train, spec.val);
  out.test = take(pool, order, spec.train + spec.val, spec.test);
  for (const auto& [split_name, split] :
       {std::pair<const char*, const Split*>{"train", &out.train}, {"val", &out.val}, {"test", &out.test}}) {
    const auto hist = label_histogram(split->y, out.num_classes);
    for (std::size_t c = 0; c < hist.size(); ++c) {
      if (hist[c] == 0) {
        throw DataError(spec.name + ": " + split_name + " split has no sample of class " +
                        std::to_string(c) + "; increase its size");
      }
    }
  }
  return out;
}

std::uint64_t split_checksum(const Split& s) {
  std::string bytes(reinterpret_cast<const char*>(s.x.data()), s.x.size() * sizeof(double));
  bytes.append(reinterpret_cast<const char*>(s.y.data()), s.y.size() * sizeof(int));
  bytes.append(reinterpret_cast<const char*>(s.source_index.data()),
               s.source_index.size() * sizeof(std::size_t));
  return io::fnv1a64(bytes);
}

}  // namespace atfs::harness
