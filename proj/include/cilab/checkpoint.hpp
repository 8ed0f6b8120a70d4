#pragma once

#include <cstdint>
#include <string>

#include "cilab/dataset.hpp"
#include "cilab/nn.hpp"

namespace cilab {

// Flat binary containers, little-endian, written byte-identically for
// identical inputs. Every file embeds the resolved config hash so
// analyze can refuse mismatched run/config pairs.

// Model checkpoint: structural metadata as a JSON string plus one raw
// f64 tensor per parameter.
void save_model(const std::string& path, const Model& model, const std::string& metadata_json,
                std::uint64_t config_hash);

struct LoadedModel {
  Model model;
  std::string metadata_json;
  std::uint64_t config_hash = 0;
};

LoadedModel load_model(const std::string& path);

// Standalone classifier container (the per-stage Exploit head files).
void save_classifier(const std::string& path, const Classifier& head,
                     const std::vector<int>& head_classes, std::uint64_t config_hash);

struct LoadedClassifier {
  Classifier head;
  std::vector<int> head_classes;
  std::uint64_t config_hash = 0;
};

LoadedClassifier load_classifier(const std::string& path);

// Dataset file: spec header, row-major features, label list. Train/val
// index lists are implied by the generator's class-major layout and are
// rebuilt on load.
void save_dataset(const std::string& path, const Dataset& dataset, std::uint64_t config_hash);

struct LoadedDataset {
  Dataset dataset;
  std::uint64_t config_hash = 0;
};

LoadedDataset load_dataset(const std::string& path);

}  // namespace cilab
