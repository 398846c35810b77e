#include <CLI11.hpp>
#include <iostream>

#include "qstlab/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"qstlab: neural quantum state tomography workbench"};
  app.require_subcommand(1);

  std::string config;
  qstlab::harness::Overrides overrides;
  const std::pair<const char*, const char*> commands[] = {
      {"reconstruct", "Fit one state and write trace.csv, spec.json and rho.json"},
      {"sweep-bases", "Sweep the number of measurement bases and report the minimal |M|"},
      {"bench-arch", "Compare architectures on one dataset"},
      {"crossbar-eval", "Replay a trained network on simulated memristor crossbars"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", overrides.out, "Output directory (overrides output_dir)");
    sub->add_option("--seed", overrides.seed, "Master seed (overrides seed)");
    sub->add_option("--repeats", overrides.repeats, "Repeat count (overrides repeats)")->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : qstlab::harness::kError;
  }
  return qstlab::harness::run_command(app.get_subcommands().front()->get_name(), config, overrides, std::cout,
                                      std::cerr);
}
