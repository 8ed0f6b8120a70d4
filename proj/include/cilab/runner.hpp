#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cilab/analysis.hpp"
#include "cilab/config.hpp"
#include "cilab/tsne.hpp"

namespace cilab {

// Dataset file for a config: {output_root}/datasets/ds_{hash}.bin, keyed
// by the dataset block so configs with equal data share the file.
std::string dataset_path(const ExperimentConfig& config);

// Default run directory: {output_root}/runs/{algorithm}_seed{seed}.
std::string default_run_dir(const ExperimentConfig& config);

// Writes the synthetic dataset file; returns its path. Byte-identical
// for identical dataset blocks.
std::string cmd_gen_data(const ExperimentConfig& config);

struct RunResult {
  std::string run_dir;
  std::vector<std::string> warnings;
};

// Trains all stages and writes checkpoints, the resolved config echo,
// and the run manifest into run_dir.
RunResult cmd_run(const ExperimentConfig& config, const std::string& run_dir);

struct AnalyzeResult {
  std::vector<StageReport> reports;
  // Final-stage layer sweep vs F_0 over the D_0 validation set: the
  // primary-path curve plus one row per extra branch tap.
  std::vector<std::pair<std::string, double>> final_cka;
  FeatureShiftExport shift;
  TsneResult tsne;
  double avg_inc_acc = 0.0;
  double final_acc = 0.0;  // Acc(M_N, D) with the incremental head
  std::vector<std::string> warnings;
};

// Retrains classifiers per stage, evaluates the full protocol, and
// writes stage_reports.csv, cka.csv, tsne.csv, and summary.json into
// run_dir. Refuses a config whose hash differs from the manifest's.
AnalyzeResult cmd_analyze(const ExperimentConfig& config, const std::string& run_dir);

// One table row per analyzed run (reads each run's summary.json).
// Emits a warning when runs disagree on the class ordering.
std::string cmd_compare(const std::vector<std::string>& run_dirs,
                        std::vector<std::string>* warnings);

}  // namespace cilab
