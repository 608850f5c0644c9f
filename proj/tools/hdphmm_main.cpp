#include <optional>
#include <string>

#include <CLI11.hpp>

#include "hdphmm/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"HDP-HMM fitting and evaluation for count time series"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON configuration file")
        ->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "output directory");
  };
  add_common(app.add_subcommand("simulate", "generate a synthetic dataset"));
  add_common(app.add_subcommand("fit", "fit a model to count data"));
  add_common(app.add_subcommand("evaluate", "score a fit against held-out data"));
  add_common(app.add_subcommand("decode", "reconstruct positions from a fit"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return hdphmm::cli::run_command(app.get_subcommands().front()->get_name(),
                                  config_path, seed, out_dir);
}
