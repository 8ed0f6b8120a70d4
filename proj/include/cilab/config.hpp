#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cilab/analysis.hpp"
#include "cilab/cil.hpp"
#include "cilab/dataset.hpp"

namespace cilab {

// Shortest round-trip decimal representation (std::to_chars); the one
// formatter used for every emitted number so CSV and JSON agree exactly.
std::string format_double(double v);

// Fully-resolved experiment configuration. Every field has a recorded
// default; seeds left unset derive from [experiment] seed with fixed
// tags so independent consumers never share a stream.
struct ExperimentConfig {
  // [experiment]
  std::uint64_t seed = 0;
  std::string output_root = "out";  // default comes from $CILAB_OUT when set

  // [dataset]
  DatasetSpec dataset;  // seed resolved against the master seed

  // [split]
  std::size_t split_base = 5;
  std::size_t split_steps = 5;
  std::size_t split_per_step = 1;
  std::uint64_t order_seed = 0;

  // [algorithm] + [schedule]
  Algorithm algorithm = Algorithm::kNaive;
  TrainHyper hyper;

  // [analysis]
  RetrainHyper retrain;
  std::uint64_t retrain_seed = 0;
  std::size_t cka_batch_size = 256;
  std::size_t cka_passes = 10;
  std::uint64_t cka_seed = 0;
  double tsne_perplexity = 30.0;
  std::size_t tsne_iterations = 500;
  std::size_t tsne_stage = 0;
  std::size_t tsne_classes = 5;
  std::size_t tsne_per_class = 20;
  std::uint64_t tsne_seed = 0;
  std::vector<PerturbStep> perturb_schedule;
  std::uint64_t perturb_seed = 0;
};

// Parses the line-oriented [section] key = value format and resolves
// defaults and seeds. Unknown sections or keys are configuration errors.
// A seed override, when given, replaces [experiment] seed and re-derives
// every seed the file did not pin explicitly.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_text(const std::string& text, std::uint64_t seed_override);
ExperimentConfig parse_config_file(const std::string& path);
ExperimentConfig parse_config_file(const std::string& path, std::uint64_t seed_override);

// Canonical echo of the resolved config: every field, fixed order,
// seeds materialized. Reparsing it yields the same config.
std::string resolved_config_text(const ExperimentConfig& config);

// FNV-1a over the canonical echo (minus the output root, which is an
// operational detail); embedded in every output artifact.
std::uint64_t config_hash(const ExperimentConfig& config);

// Hash of the dataset block alone; keys the dataset file name so runs
// with the same data share one file.
std::uint64_t dataset_block_hash(const ExperimentConfig& config);

std::string perturb_schedule_text(const std::vector<PerturbStep>& schedule);
std::vector<PerturbStep> parse_perturb_schedule(const std::string& text);

}  // namespace cilab
