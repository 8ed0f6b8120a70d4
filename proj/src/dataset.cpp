#include "cilab/dataset.hpp"

#include <cmath>

#include "cilab/errors.hpp"

namespace cilab {

std::vector<int> Dataset::all_train() const {
  std::vector<int> out;
  for (const auto& cls : train_by_class) out.insert(out.end(), cls.begin(), cls.end());
  return out;
}

std::vector<int> Dataset::all_val() const {
  std::vector<int> out;
  for (const auto& cls : val_by_class) out.insert(out.end(), cls.begin(), cls.end());
  return out;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  if (spec.classes == 0 || spec.dim == 0)
    throw ConfigurationError("generate_dataset: classes and dim must be positive");
  if (spec.train_per_class == 0 || spec.val_per_class == 0)
    throw ConfigurationError("generate_dataset: per-class sample counts must be positive");

  Dataset ds;
  ds.spec = spec;
  RngStream mean_rng(derive_seed(spec.seed, "class-means"));
  Matrix means(spec.classes, spec.dim);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    double norm = 0.0;
    double* mu = means.row(c);
    for (std::size_t d = 0; d < spec.dim; ++d) {
      mu[d] = mean_rng.next_normal();
      norm += mu[d] * mu[d];
    }
    norm = std::sqrt(norm);
    // A fresh normal draw almost surely has positive norm; redraws would
    // complicate the stream for no practical gain.
    for (std::size_t d = 0; d < spec.dim; ++d) mu[d] = mu[d] / norm * spec.cluster_radius;
  }

  const std::size_t per_class = spec.train_per_class + spec.val_per_class;
  const std::size_t total = spec.classes * per_class;
  ds.features = Matrix(total, spec.dim);
  ds.labels.resize(total);
  ds.train_by_class.resize(spec.classes);
  ds.val_by_class.resize(spec.classes);

  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    RngStream sample_rng(derive_seed(spec.seed, "class-samples", c));
    const double* mu = means.row(c);
    for (std::size_t s = 0; s < per_class; ++s, ++row) {
      double* x = ds.features.row(row);
      for (std::size_t d = 0; d < spec.dim; ++d) x[d] = mu[d] + sample_rng.next_normal();
      ds.labels[row] = static_cast<int>(c);
      if (s < spec.train_per_class) {
        ds.train_by_class[c].push_back(static_cast<int>(row));
      } else {
        ds.val_by_class[c].push_back(static_cast<int>(row));
      }
    }
  }
  return ds;
}

}  // namespace cilab
