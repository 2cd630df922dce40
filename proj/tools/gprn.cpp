#include <iostream>

#include <CLI11.hpp>

#include "gprn/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Gaussian process regression networks"};
  app.require_subcommand(1, 1);
  gprn::CliOptions opts;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out;

  for (const char* name : {"fit", "predict", "metrics", "volatility", "select-q", "synth"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", opts.config, "run configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--threads", threads, "worker cap")->check(CLI::PositiveNumber);
    sub->add_option("--out", out, "output directory");
    sub->callback([&opts, name] { opts.command = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  CLI::App* used = app.get_subcommands().front();
  if (used->count("--seed")) opts.seed = seed;
  if (used->count("--threads")) opts.threads = threads;
  if (used->count("--out")) opts.out = out;
  return gprn::run_cli(opts, std::cout, std::cerr);
}
