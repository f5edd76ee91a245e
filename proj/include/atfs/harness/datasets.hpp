#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "atfs/data.hpp"

namespace atfs::harness {

// synthetic-gaussians: isotropic blobs around seeded centers, `dim` features.
// synthetic-moons: two interleaved half circles in the unit square.
// mnist-subset: IDX files under <data dir>/mnist, shape [1, 28, 28].
// cifar10-subset: binary batches under <data dir>/cifar10, shape [3, 32, 32].
struct DatasetSpec {
  std::string name = "synthetic-gaussians";
  std::size_t train = 200;
  std::size_t val = 50;
  std::size_t test = 50;
  std::size_t classes = 2;  // synthetic-gaussians only; fixed for the others
  std::size_t dim = 2;      // synthetic-gaussians only
  double noise = 0.1;       // synthetic noise std
  std::uint64_t seed = 0;

  void validate() const;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// $ATFS_DATA_DIR, else $XDG_CACHE_HOME/atfs-lab, else ~/.cache/atfs-lab.
std::filesystem::path data_dir();

// Deterministic for a given spec. Throws DataError when source files are
// missing, the requested sizes exceed the source, or a split would lack a
// class.
DatasetSplits load_dataset(const DatasetSpec& spec);

// FNV-1a over a split's inputs, labels and source indices.
std::uint64_t split_checksum(const Split& s);

}  // namespace atfs::harness
