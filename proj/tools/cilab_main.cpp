// cilab: configuration-driven class-incremental learning lab.
//
// Exit codes: 0 ok, 2 configuration, 3 protocol, 4 integrity, 5 I/O,
// 6 other library error, 7 unexpected.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cilab/errors.hpp"
#include "cilab/runner.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string run_dir;
  std::int64_t seed_override = -1;
  bool quiet = false;
};

cilab::ExperimentConfig load_config(const CommonArgs& args) {
  if (args.seed_override >= 0)
    return cilab::parse_config_file(args.config_path,
                                    static_cast<std::uint64_t>(args.seed_override));
  return cilab::parse_config_file(args.config_path);
}

void print_warnings(const std::vector<std::string>& warnings, bool quiet) {
  if (quiet) return;
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cilab: class-incremental learning laboratory"};
  app.require_subcommand(1);

  CommonArgs args;

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic dataset file for a config");
  gen->add_option("--config", args.config_path, "Experiment config file")->required();
  gen->add_option("--seed-override", args.seed_override, "Replace the experiment master seed");
  gen->add_flag("--quiet", args.quiet, "Suppress warnings and progress output");

  auto* run = app.add_subcommand("run", "Train all incremental stages for a config");
  run->add_option("--config", args.config_path, "Experiment config file")->required();
  run->add_option("--run-dir", args.run_dir, "Run directory (default derived from the config)");
  run->add_option("--seed-override", args.seed_override, "Replace the experiment master seed");
  run->add_flag("--quiet", args.quiet, "Suppress warnings and progress output");

  auto* analyze = app.add_subcommand("analyze", "Retrain classifiers and emit reports for a run");
  analyze->add_option("--config", args.config_path, "Experiment config file")->required();
  analyze->add_option("--run-dir", args.run_dir, "Run directory");
  analyze->add_option("--seed-override", args.seed_override, "Replace the experiment master seed");
  analyze->add_flag("--quiet", args.quiet, "Suppress warnings and progress output");

  std::vector<std::string> compare_dirs;
  auto* compare = app.add_subcommand("compare", "Tabulate analyzed runs side by side");
  compare->add_option("--run-dir", compare_dirs, "Analyzed run directories")->required();
  compare->add_flag("--quiet", args.quiet, "Suppress warnings and progress output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const cilab::ExperimentConfig config = load_config(args);
      const std::string path = cilab::cmd_gen_data(config);
      if (!args.quiet) std::cout << path << "\n";
      return 0;
    }
    if (run->parsed()) {
      const cilab::ExperimentConfig config = load_config(args);
      const std::string dir = args.run_dir.empty() ? cilab::default_run_dir(config) : args.run_dir;
      const cilab::RunResult result = cilab::cmd_run(config, dir);
      print_warnings(result.warnings, args.quiet);
      if (!args.quiet) std::cout << result.run_dir << "\n";
      return 0;
    }
    if (analyze->parsed()) {
      const cilab::ExperimentConfig config = load_config(args);
      const std::string dir = args.run_dir.empty() ? cilab::default_run_dir(config) : args.run_dir;
      const cilab::AnalyzeResult result = cilab::cmd_analyze(config, dir);
      print_warnings(result.warnings, args.quiet);
      if (!args.quiet) {
        for (const cilab::StageReport& r : result.reports) {
          std::cout << "stage " << r.stage << ": acc_full=" << cilab::format_double(r.acc_full)
                    << " delta=" << cilab::format_double(r.delta) << "\n";
        }
        std::cout << "avg_inc_acc=" << cilab::format_double(result.avg_inc_acc)
                  << " final_acc=" << cilab::format_double(result.final_acc) << "\n";
      }
      return 0;
    }
    if (compare->parsed()) {
      std::vector<std::string> warnings;
      const std::string table = cilab::cmd_compare(compare_dirs, &warnings);
      print_warnings(warnings, args.quiet);
      std::cout << table;
      return 0;
    }
  } catch (const cilab::ConfigurationError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const cilab::ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << "\n";
    return 3;
  } catch (const cilab::IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return 4;
  } catch (const cilab::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 5;
  } catch (const cilab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 6;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 7;
  }
  return 0;
}
