#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fova/errors.hpp"
#include "fova/harness.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitIo = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated offline RL with vote-based conservative evaluation on tabular MDPs"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string algo;
  std::optional<int> rounds;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", config_path, "Experiment config (JSON)");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "Output directory")->required();
  };

  auto* generate = app.add_subcommand("generate", "Write the MDP, per-client datasets and a manifest");
  add_common(generate, true);
  auto* train = app.add_subcommand("train", "Run federated training for every seed");
  add_common(train, true);
  train->add_option("--algo", algo, "Override the algorithm")
      ->check(CLI::IsMember({"fova", "cql-fl", "fova-no-vote", "fova-no-awr"}));
  train->add_option("--rounds", rounds, "Override the number of rounds");
  auto* audit = app.add_subcommand("audit", "Evaluate the bound checks on trained checkpoints");
  add_common(audit, true);
  audit->add_option("--algo", algo, "Algorithm whose checkpoints are audited")
      ->check(CLI::IsMember({"fova", "cql-fl", "fova-no-vote", "fova-no-awr"}));
  auto* report = app.add_subcommand("report", "Aggregate per-seed metrics into plot-ready CSV");
  add_common(report, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    const std::filesystem::path out(out_dir);
    if (report->parsed()) {
      fova::cmd_report(out);
      std::cout << "wrote " << (out / "report").string() << "\n";
      return 0;
    }
    fova::ExperimentConfig config = fova::load_config(config_path);
    if (!algo.empty()) config.algo = fova::parse_algo(algo);
    if (rounds) {
      if (*rounds < 1) throw fova::ConfigError("--rounds must be at least 1");
      config.rounds = *rounds;
    }
    if (generate->parsed()) {
      const auto manifest = fova::cmd_generate(config, out);
      std::cout << "wrote " << (out / "manifest.json").string() << " (" << manifest.at("seeds").size()
                << " seeds)\n";
    } else if (train->parsed()) {
      fova::cmd_train(config, out);
      std::cout << "trained " << fova::algo_tag(config.algo) << " on " << config.seeds.size() << " seeds\n";
    } else if (audit->parsed()) {
      fova::cmd_audit(config, out);
      std::cout << "audited " << fova::algo_tag(config.algo) << " on " << config.seeds.size() << " seeds\n";
    }
    return 0;
  } catch (const fova::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::domain_error& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
