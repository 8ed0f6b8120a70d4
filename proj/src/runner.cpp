#include "cilab/runner.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cilab/checkpoint.hpp"
#include "cilab/errors.hpp"
#include "cilab/repsim.hpp"

namespace cilab {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Dataset load_dataset_checked(const ExperimentConfig& config) {
  const std::string path = dataset_path(config);
  if (!fs::exists(path))
    throw IoError("dataset file " + path + " not found; run gen-data first");
  LoadedDataset loaded = load_dataset(path);
  if (loaded.config_hash != dataset_block_hash(config))
    throw IntegrityError("dataset file " + path + " does not match the config's dataset block");
  return std::move(loaded.dataset);
}

IncrementalSplit split_for(const ExperimentConfig& config, const Dataset& dataset) {
  RngStream order_rng(config.order_seed);
  return make_split(dataset, config.split_base, config.split_steps, config.split_per_step,
                    order_rng);
}

Dataset prepare_dataset(const ExperimentConfig& config, const IncrementalSplit& split,
                        Dataset dataset) {
  if (config.perturb_schedule.empty()) return dataset;
  return perturb_stage_inputs(dataset, split, config.perturb_schedule, config.perturb_seed);
}

std::string stage_file(std::size_t stage) { return "stage_" + std::to_string(stage); }

json seeds_json(const ExperimentConfig& config) {
  json j;
  j["master"] = config.seed;
  j["data"] = config.dataset.seed;
  j["order"] = config.order_seed;
  j["train"] = config.hyper.train_seed;
  j["retrain"] = config.retrain_seed;
  j["cka"] = config.cka_seed;
  j["tsne"] = config.tsne_seed;
  j["perturb"] = config.perturb_seed;
  return j;
}

// Model view that keeps only the stage-0 lineage (stem + first branch);
// the head is untouched and unused by feature extraction.
Model primary_path_model(const Model& model) {
  Model out;
  out.stem = model.stem;
  out.branches.push_back(model.branches.front());
  out.branch_frozen.assign(1, true);
  out.stem_frozen = true;
  out.head = model.head;
  out.head_classes = model.head_classes;
  return out;
}

struct LoadedRun {
  CilRun run;
  json manifest;
};

LoadedRun load_run(const ExperimentConfig& config, const std::string& run_dir) {
  const std::string manifest_path = run_dir + "/manifest.json";
  if (!fs::exists(manifest_path)) throw IoError("missing " + manifest_path);
  json manifest;
  try {
    manifest = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("corrupt manifest: ") + e.what());
  }
  const std::uint64_t expected_hash = config_hash(config);
  if (manifest.at("config_hash").get<std::uint64_t>() != expected_hash)
    throw IntegrityError("run directory " + run_dir + " was produced by a different config");

  LoadedRun out;
  out.manifest = manifest;
  out.run.algo = algorithm_from_name(manifest.at("algorithm").get<std::string>());
  out.run.hyper = config.hyper;
  const auto digests = manifest.at("stage_digests").get<std::vector<std::uint64_t>>();
  const std::size_t stages = digests.size();

  if (out.run.algo == Algorithm::kExploit) {
    const LoadedModel base = load_model(run_dir + "/extractor");
    if (base.config_hash != expected_hash)
      throw IntegrityError("extractor checkpoint does not embed the expected config hash");
    std::vector<Classifier> heads;
    std::vector<int> head_classes;
    for (std::size_t stage = 0; stage < stages; ++stage) {
      LoadedClassifier head = load_classifier(run_dir + "/head_" + std::to_string(stage));
      if (head.config_hash != expected_hash)
        throw IntegrityError("head checkpoint does not embed the expected config hash");
      heads.push_back(std::move(head.head));
      head_classes.insert(head_classes.end(), head.head_classes.begin(),
                          head.head_classes.end());
      Model model;
      model.branches.push_back(base.model.branches.front());
      model.branch_frozen.assign(1, true);
      model.head = concat_heads(heads);
      model.head_classes = head_classes;
      StageSnapshot snap = snapshot_model(model);
      if (snap.digest != digests[stage])
        throw IntegrityError("reconstructed stage " + std::to_string(stage) +
                             " does not match its recorded digest");
      out.run.snapshots.push_back(std::move(snap));
      out.run.exploit_heads.push_back(heads.back());
    }
    return out;
  }

  for (std::size_t stage = 0; stage < stages; ++stage) {
    LoadedModel loaded = load_model(run_dir + "/" + stage_file(stage));
    if (loaded.config_hash != expected_hash)
      throw IntegrityError("stage checkpoint does not embed the expected config hash");
    StageSnapshot snap;
    snap.model = std::move(loaded.model);
    snap.digest = model_digest(snap.model);
    if (snap.digest != digests[stage])
      throw IntegrityError("stage " + std::to_string(stage) +
                           " checkpoint does not match its recorded digest");
    out.run.snapshots.push_back(std::move(snap));
  }
  return out;
}

// Filters the F_0 tap set down to the ids a partial branch carries.
LayerTapSet subset_taps(const LayerTapSet& full, const std::vector<std::string>& wanted) {
  LayerTapSet out;
  for (const std::string& id : wanted) {
    for (std::size_t l = 0; l < full.layer_ids.size(); ++l) {
      if (full.layer_ids[l] == id) {
        out.layer_ids.push_back(id);
        out.activations.push_back(full.activations[l]);
        break;
      }
    }
  }
  if (out.layer_ids.size() != wanted.size())
    throw ProtocolError("branch tap ids are not a subset of the primary tap set");
  return out;
}

std::string csv_header_line(std::uint64_t hash) { return "# config_hash=" + hex64(hash) + "\n"; }

}  // namespace

std::string dataset_path(const ExperimentConfig& config) {
  return config.output_root + "/datasets/ds_" + hex64(dataset_block_hash(config)) + ".bin";
}

std::string default_run_dir(const ExperimentConfig& config) {
  return config.output_root + "/runs/" + algorithm_name(config.algorithm) + "_seed" +
         std::to_string(config.seed);
}

std::string cmd_gen_data(const ExperimentConfig& config) {
  const Dataset dataset = generate_dataset(config.dataset);
  const std::string path = dataset_path(config);
  fs::create_directories(fs::path(path).parent_path());
  save_dataset(path, dataset, dataset_block_hash(config));
  return path;
}

RunResult cmd_run(const ExperimentConfig& config, const std::string& run_dir) {
  Dataset dataset = load_dataset_checked(config);
  const IncrementalSplit split = split_for(config, dataset);
  dataset = prepare_dataset(config, split, std::move(dataset));

  const CilRun run = run_incremental(config.algorithm, dataset, split, config.hyper);

  RunResult result;
  result.run_dir = run_dir;
  if (run.exemplar_warning)
    result.warnings.push_back(
        "exploit ignores exemplars by design; the configured exemplar memory was not used");

  fs::create_directories(run_dir);
  const std::uint64_t hash = config_hash(config);
  write_text_file(run_dir + "/config.resolved.ini", resolved_config_text(config));

  std::vector<std::string> files;
  if (config.algorithm == Algorithm::kExploit) {
    json meta;
    meta["role"] = "extractor";
    save_model(run_dir + "/extractor", run.snapshots.front().model, meta.dump(), hash);
    files.push_back("extractor");
    for (std::size_t stage = 0; stage < run.exploit_heads.size(); ++stage) {
      const std::string name = "head_" + std::to_string(stage);
      save_classifier(run_dir + "/" + name, run.exploit_heads[stage],
                      split.stage_classes[stage], hash);
      files.push_back(name);
    }
  } else {
    for (std::size_t stage = 0; stage < run.snapshots.size(); ++stage) {
      json meta;
      meta["stage"] = stage;
      save_model(run_dir + "/" + stage_file(stage), run.snapshots[stage].model, meta.dump(), hash);
      files.push_back(stage_file(stage));
    }
  }

  json manifest;
  manifest["config_hash"] = hash;
  manifest["algorithm"] = algorithm_name(config.algorithm);
  manifest["class_order"] = split.class_order;
  manifest["seeds"] = seeds_json(config);
  manifest["branch_stage"] = config.hyper.branch_stage;
  std::vector<std::uint64_t> digests;
  for (const StageSnapshot& snap : run.snapshots) digests.push_back(snap.digest);
  manifest["stage_digests"] = digests;
  manifest["files"] = files;
  manifest["warnings"] = result.warnings;
  json exemplar_counts = json::object();
  for (const auto& [cls, indices] : run.exemplars.by_class)
    exemplar_counts[std::to_string(cls)] = indices.size();
  manifest["exemplar_counts"] = exemplar_counts;
  write_text_file(run_dir + "/manifest.json", manifest.dump(2) + "\n");
  return result;
}

AnalyzeResult cmd_analyze(const ExperimentConfig& config, const std::string& run_dir) {
  Dataset dataset = load_dataset_checked(config);
  const IncrementalSplit split = split_for(config, dataset);
  dataset = prepare_dataset(config, split, std::move(dataset));

  LoadedRun loaded = load_run(config, run_dir);
  CilRun& run = loaded.run;
  if (run.snapshots.size() != split.num_stages())
    throw IntegrityError("run directory is missing stage checkpoints");
  const std::size_t stages = run.snapshots.size();
  const std::uint64_t hash = config_hash(config);

  AnalyzeResult result;
  result.warnings = loaded.manifest.at("warnings").get<std::vector<std::string>>();

  const std::vector<int> all_val = split.all_val();
  const Matrix d0_val_inputs = take_rows(dataset.features, split.stage_val[0]);
  const LayerTapSet taps_f0 = primary_tap_set(run.snapshots.front().model, d0_val_inputs);

  for (std::size_t stage = 0; stage < stages; ++stage) {
    const StageSnapshot& snap = run.snapshots[stage];
    StageReport report;
    report.stage = stage;
    report.macs = extractor_macs(snap.model);

    const RetrainedModel retrained =
        retrain_classifier_full(snap, dataset, split, config.retrain, config.retrain_seed);
    report.acc_full = accuracy(retrained.model, dataset, all_val);
    for (std::size_t i = 0; i < stages; ++i)
      report.acc_subset.push_back(accuracy(retrained.model, dataset, split.stage_val[i]));

    const LayerTapSet taps_j = primary_tap_set(snap.model, d0_val_inputs);
    RngStream cka_rng(derive_seed(config.cka_seed, "stage", stage));
    report.cka_curve =
        layerwise_cka(taps_f0, taps_j, config.cka_batch_size, config.cka_passes, cka_rng);
    result.reports.push_back(std::move(report));
  }

  const std::vector<double> deltas = delta_metric(result.reports);
  for (std::size_t stage = 0; stage < stages; ++stage) result.reports[stage].delta = deltas[stage];
  result.avg_inc_acc = avg_incremental_accuracy(run, dataset, split);
  result.reports.back().avg_inc_acc = result.avg_inc_acc;
  result.final_acc = accuracy(run.snapshots.back().model, dataset, all_val);

  // Final-stage sweep: the primary curve plus one row per extra branch.
  result.final_cka = result.reports.back().cka_curve;
  const Model& final_model = run.snapshots.back().model;
  if (final_model.branches.size() > 1) {
    const Matrix stem_out = final_model.has_stem()
                                ? forward_features(final_model.stem, d0_val_inputs)
                                : d0_val_inputs;
    for (std::size_t bi = 1; bi < final_model.branches.size(); ++bi) {
      const ForwardTaps branch_fwd = forward_with_taps(final_model.branches[bi], stem_out);
      const LayerTapSet f0_sub = subset_taps(taps_f0, branch_fwd.taps.layer_ids);
      RngStream cka_rng(derive_seed(config.cka_seed, "branch", bi));
      const auto curve = layerwise_cka(f0_sub, branch_fwd.taps, config.cka_batch_size,
                                       config.cka_passes, cka_rng);
      for (const auto& [tap, value] : curve)
        result.final_cka.emplace_back("branch" + std::to_string(bi) + "/" + tap, value);
    }
  }

  const Model shift_a = primary_path_model(run.snapshots.front().model);
  const Model shift_b = primary_path_model(final_model);
  result.shift = feature_shift_export(shift_a, shift_b, dataset, split, config.tsne_stage,
                                      config.tsne_classes, config.tsne_per_class, config.tsne_seed);
  RngStream tsne_rng(config.tsne_seed);
  result.tsne =
      tsne_embed(result.shift.features, config.tsne_perplexity, config.tsne_iterations, tsne_rng);

  // stage_reports.csv
  {
    std::string csv = csv_header_line(hash);
    csv += "stage,acc_full";
    for (std::size_t i = 0; i < stages; ++i) csv += ",acc_subset_" + std::to_string(i);
    csv += ",delta,avg_inc_acc,macs\n";
    for (const StageReport& r : result.reports) {
      csv += std::to_string(r.stage) + "," + format_double(r.acc_full);
      for (const double v : r.acc_subset) csv += "," + format_double(v);
      csv += "," + format_double(r.delta);
      csv += ",";
      if (r.avg_inc_acc) csv += format_double(*r.avg_inc_acc);
      csv += "," + std::to_string(r.macs) + "\n";
    }
    write_text_file(run_dir + "/stage_reports.csv", csv);
  }

  // cka.csv
  {
    std::string csv = csv_header_line(hash);
    csv += "tap_id,cka\n";
    for (const auto& [tap, value] : result.final_cka)
      csv += tap + "," + format_double(value) + "\n";
    write_text_file(run_dir + "/cka.csv", csv);
  }

  // tsne.csv
  {
    std::string csv = csv_header_line(hash);
    csv += "x,y,class,source\n";
    for (std::size_t i = 0; i < result.tsne.embedding.rows(); ++i) {
      csv += format_double(result.tsne.embedding(i, 0)) + "," +
             format_double(result.tsne.embedding(i, 1)) + "," +
             std::to_string(result.shift.labels[i]) + "," +
             (result.shift.source[i] == 0 ? "A" : "B") + "\n";
    }
    write_text_file(run_dir + "/tsne.csv", csv);
  }

  // summary.json mirrors every number.
  {
    json summary;
    summary["config_hash"] = hash;
    summary["algorithm"] = algorithm_name(config.algorithm);
    summary["class_order"] = split.class_order;
    summary["order_seed"] = config.order_seed;
    summary["seeds"] = seeds_json(config);
    json stage_rows = json::array();
    for (const StageReport& r : result.reports) {
      json row;
      row["stage"] = r.stage;
      row["acc_full"] = r.acc_full;
      row["acc_subset"] = r.acc_subset;
      row["delta"] = r.delta;
      if (r.avg_inc_acc) row["avg_inc_acc"] = *r.avg_inc_acc;
      row["macs"] = r.macs;
      json curve = json::object();
      for (const auto& [tap, value] : r.cka_curve) curve[tap] = value;
      row["cka_curve"] = curve;
      stage_rows.push_back(row);
    }
    summary["stages"] = stage_rows;
    json final_cka = json::object();
    for (const auto& [tap, value] : result.final_cka) final_cka[tap] = value;
    summary["final_cka"] = final_cka;
    summary["avg_inc_acc"] = result.avg_inc_acc;
    summary["final_acc"] = result.final_acc;
    summary["tsne_initial_kl"] = result.tsne.initial_kl;
    summary["tsne_final_kl"] = result.tsne.final_kl;
    summary["mean_pair_distance"] = result.shift.mean_pair_distance();
    summary["warnings"] = result.warnings;
    write_text_file(run_dir + "/summary.json", summary.dump(2) + "\n");
  }
  return result;
}

std::string cmd_compare(const std::vector<std::string>& run_dirs,
                        std::vector<std::string>* warnings) {
  if (run_dirs.empty()) throw ConfigurationError("cmd_compare: no run directories given");
  struct Row {
    std::string method;
    double acc0, accN, delta, avg_inc, final_acc;
    std::vector<int> class_order;
  };
  std::vector<Row> rows;
  for (const std::string& dir : run_dirs) {
    const std::string path = dir + "/summary.json";
    if (!fs::exists(path)) throw IoError("missing " + path + "; analyze the run first");
    json summary;
    try {
      summary = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
      throw IntegrityError(std::string("corrupt summary: ") + e.what());
    }
    Row row;
    row.method = summary.at("algorithm").get<std::string>();
    const auto& stages = summary.at("stages");
    row.acc0 = stages.front().at("acc_full").get<double>();
    row.accN = stages.back().at("acc_full").get<double>();
    row.delta = stages.back().at("delta").get<double>();
    row.avg_inc = summary.at("avg_inc_acc").get<double>();
    row.final_acc = summary.at("final_acc").get<double>();
    row.class_order = summary.at("class_order").get<std::vector<int>>();
    rows.push_back(std::move(row));
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].class_order != rows.front().class_order) {
      if (warnings)
        warnings->push_back(
            "runs use different class orderings; inter-method comparisons may not be appropriate");
      break;
    }
  }
  std::string table = "method,acc_m0_full,acc_mN_full,delta_mN,avg_inc_acc,final_acc\n";
  for (const Row& row : rows) {
    table += row.method + "," + format_double(row.acc0) + "," + format_double(row.accN) + "," +
             format_double(row.delta) + "," + format_double(row.avg_inc) + "," +
             format_double(row.final_acc) + "\n";
  }
  return table;
}

}  // namespace cilab
