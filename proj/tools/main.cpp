#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "commands.hpp"
#include "mufasa/error.hpp"
#include "mufasa/version.hpp"

namespace {

struct Flags {
  std::string config, out, items, interactions, variant, checkpoint;
  std::uint64_t seed = 0;
  bool corrupt = false;
  bool verbose = false;
  bool quiet = false;
};

mufasa::cli::Overrides overrides(const CLI::App& sub, const Flags& f) {
  mufasa::cli::Overrides o;
  if (sub.count("--config")) o.config = f.config;
  if (sub.count("--seed")) o.seed = f.seed;
  if (sub.count("--out")) o.out = f.out;
  if (sub.count("--data-items")) o.data_items = f.items;
  if (sub.count("--data-interactions")) o.data_interactions = f.interactions;
  if (sub.count("--variant")) o.variant = f.variant;
  if (sub.count("--checkpoint")) o.checkpoint = f.checkpoint;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_st("mufasa"));

  CLI::App app{"Multimodal fusion and sparse-attention sequential recommender"};
  app.set_version_flag("--version", std::string(mufasa::version()));
  app.require_subcommand(1);

  Flags f;
  const auto add_common = [&f](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON run configuration");
    sub->add_option("--seed", f.seed, "seed for every component");
    sub->add_option("--out", f.out, "output directory");
    sub->add_option("--data-items", f.items, "item catalog (JSONL)");
    sub->add_option("--data-interactions", f.interactions, "user interactions (JSONL)");
    sub->add_option("--variant", f.variant, "full | no_mfl | no_sal | full_attention");
    sub->add_option("--checkpoint", f.checkpoint, "checkpoint path");
    sub->add_flag("-v,--verbose", f.verbose, "debug logging");
    sub->add_flag("-q,--quiet", f.quiet, "warnings and errors only");
    return sub;
  };

  CLI::App* gen = add_common(app.add_subcommand("gen-data", "write a synthetic corpus and print its statistics"));
  CLI::App* train = add_common(app.add_subcommand("train", "two-stage training; writes a checkpoint and loss curves"));
  CLI::App* eval = add_common(app.add_subcommand("eval", "evaluate a checkpoint under both protocols"));
  CLI::App* ablate = add_common(app.add_subcommand("ablate", "train and compare every variant"));
  CLI::App* grad = add_common(app.add_subcommand("gradcheck", "finite-difference gradient checks"));
  CLI::App* bench = add_common(app.add_subcommand("bench", "attention cost sweep over sequence lengths"));
  grad->add_flag("--corrupt", f.corrupt, "perturb analytic gradients")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : mufasa::exit_code_for(mufasa::ErrorCode::kConfig);
  }

  if (f.verbose) spdlog::set_level(spdlog::level::debug);
  if (f.quiet) spdlog::set_level(spdlog::level::warn);

  CLI::App* sub = app.get_subcommands().front();
  try {
    mufasa::cli::RunConfig config = mufasa::cli::resolve(overrides(*sub, f));
    if (sub == gen) return mufasa::cli::cmd_gen_data(std::move(config), std::cout);
    if (sub == train) return mufasa::cli::cmd_train(std::move(config), std::cout);
    if (sub == eval) return mufasa::cli::cmd_eval(std::move(config), std::cout);
    if (sub == ablate) return mufasa::cli::cmd_ablate(std::move(config), std::cout);
    if (sub == grad) return mufasa::cli::cmd_gradcheck(std::move(config), f.corrupt, std::cout);
    if (sub == bench) return mufasa::cli::cmd_bench(std::move(config), std::cout);
  } catch (const mufasa::Error& e) {
    std::cerr << fmt::format("error[{}]: {}\n", mufasa::error_category(e.code()), e.what());
    return mufasa::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << fmt::format("error[internal]: {}\n", e.what());
    return 1;
  }
  return 1;
}
