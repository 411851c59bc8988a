#include <CLI11.hpp>

#include "sigctrl/bench.hpp"

int main(int argc, char** argv) {
  CLI::App app{"controlled-SDE treatment planning benchmark"};
  app.require_subcommand(1);

  sigctrl::CliOptions opts;
  for (const char* name : {"simulate", "train", "optimize", "evaluate", "library"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", opts.config_path, "experiment config (JSON)")->required();
    sub->add_option("--out", opts.out_dir, "artifact directory")->required();
    sub->add_option("--seed", opts.seed, "override the config seed")->each([&opts](const std::string&) {
      opts.seed_set = true;
    });
    sub->add_flag("--full-scale", opts.full_scale, "full protocol sizes instead of desk scale");
    sub->callback([&opts, name] { opts.command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return sigctrl::run_cli(opts);
}
