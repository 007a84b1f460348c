// amsrc command-line driver.

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>

#include "amsrc/config.hpp"
#include "amsrc/error.hpp"
#include "amsrc/pipeline.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"AMSRC video anomaly detection: synth | extract | train | score | eval | ablate"};
  std::string command;
  std::string config_arg;
  std::string out_dir = "amsrc_out";
  long long seed = -1;
  bool quiet = false;
  app.add_option("command", command, "Pipeline command")
      ->required()
      ->check(CLI::IsMember({"synth", "extract", "train", "score", "eval", "ablate"}));
  app.add_option("--config", config_arg, "Config file, or a preset name (ped2, avenue, shanghaitech, synth)")->required();
  app.add_option("--seed", seed, "Override the master seed")->check(CLI::NonNegativeNumber);
  app.add_option("--out", out_dir, "Output root");
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    amsrc::TrainConfig config =
        fs::exists(config_arg) ? amsrc::load_config(config_arg) : amsrc::preset_config(config_arg);
    if (seed >= 0) config.seed = static_cast<std::uint64_t>(seed);
    config.validate();
    const amsrc::Command cmd = amsrc::parse_command(command);
    const amsrc::CommandResult r = amsrc::run_pipeline(cmd, config, out_dir, quiet ? nullptr : &std::cerr);
    if (r.auroc) std::cout << "auroc " << std::setprecision(6) << *r.auroc << "\n";
    for (const auto& row : r.ablation) {
      std::cout << "row " << row.name << " flow=" << row.use_flow << " consistency=" << row.use_consistency
                << " fgfm=" << row.use_fgfm << " auroc=";
      if (row.auroc) std::cout << std::setprecision(6) << *row.auroc;
      else std::cout << "error (" << row.error << ")";
      std::cout << "\n";
    }
    if (!r.manifest.empty() && !quiet) std::cerr << "manifest: " << r.manifest.string() << "\n";
    for (const auto& row : r.ablation)
      if (!row.auroc) return 3;
    return 0;
  } catch (const amsrc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
