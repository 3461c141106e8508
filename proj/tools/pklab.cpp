#include "cli.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

const char* kind_name(pklab::ErrorKind k) {
  using pklab::ErrorKind;
  switch (k) {
    case ErrorKind::argument: return "argument";
    case ErrorKind::geometry: return "geometry";
    case ErrorKind::evaluation: return "evaluation";
    case ErrorKind::scheme: return "scheme";
    case ErrorKind::resolution: return "resolution";
    case ErrorKind::config: return "config";
    case ErrorKind::construction: return "construction";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::decomposition: return "decomposition";
    case ErrorKind::simulation: return "simulation";
    case ErrorKind::estimation: return "estimation";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pklab: fundamental solutions of non-divergence parabolic operators"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  bool strict = false;
  app.add_option("--config", config_path, "YAML run configuration")->required();
  app.add_option("--out", out_dir, "output directory (overrides config 'output')");
  app.add_option("--seed", seed, "seed (overrides config 'seed')");
  app.add_option("--threads", threads, "worker thread cap, 0 = all cores");
  app.add_flag("--strict-monotone", strict, "fail on a non-monotone step operator");
  app.fallthrough();
  for (const char* name : {"kernel", "verify", "envelope", "chain", "dmo", "mc"}) app.add_subcommand(name);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(pklab::cli::Exit::config);
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    auto cfg = pklab::cli::load_config(config_path);
    if (!out_dir.empty()) cfg.output = out_dir;
    if (seed) cfg.seed = *seed;
    if (threads) cfg.threads = *threads;
    if (strict) cfg.strict_monotone = true;
    pklab::set_max_threads(cfg.threads);
    pklab::cli::Outputs out(cfg.output);
    const auto result = pklab::cli::dispatch(command, cfg, out);
    pklab::cli::write_manifest(out, command, cfg);
    std::cout << result.summary << '\n';
    return static_cast<int>(result.code);
  } catch (const pklab::Error& e) {
    std::cerr << "error tag=" << e.tag() << " kind=" << kind_name(e.kind()) << " message=\"" << e.what()
              << "\"\n";
    return static_cast<int>(pklab::cli::exit_for(e.kind()));
  } catch (const std::exception& e) {
    std::cerr << "error tag=INTERNAL kind=internal message=\"" << e.what() << "\"\n";
    return static_cast<int>(pklab::cli::Exit::numerical);
  }
}
