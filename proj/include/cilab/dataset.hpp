#pragma once

#include <cstdint>
#include <vector>

#include "cilab/matrix.hpp"
#include "cilab/rng.hpp"

namespace cilab {

// Synthetic benchmark: unit-variance Gaussian clusters whose means are
// drawn from a sphere of the given radius. Defaults give the B5-5step
// desk benchmark (10 classes x 600 samples x 32 dims).
struct DatasetSpec {
  std::size_t classes = 10;
  std::size_t dim = 32;
  std::size_t train_per_class = 500;
  std::size_t val_per_class = 100;
  double cluster_radius = 4.0;
  std::uint64_t seed = 0;
};

struct Dataset {
  DatasetSpec spec;
  Matrix features;          // (total samples) x dim
  std::vector<int> labels;  // class id per row
  std::vector<std::vector<int>> train_by_class;
  std::vector<std::vector<int>> val_by_class;

  std::size_t num_classes() const { return spec.classes; }
  std::size_t dim() const { return spec.dim; }
  std::vector<int> all_train() const;
  std::vector<int> all_val() const;
};

Dataset generate_dataset(const DatasetSpec& spec);

}  // namespace cilab
