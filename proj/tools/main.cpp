#include <iostream>

#include "cli.hpp"

namespace {

using namespace cgiqa;
using cgiqa::cli::ExitCode;

int report(ExitCode code, const char* type, const std::string& message) {
  std::cerr << nlohmann::json{{"error", {{"type", type}, {"message", message}}}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  cli::Context ctx;
  ctx.argv.assign(argv, argv + argc);

  CLI::App app{"cgiqa: quality assessment toolkit for computer-generated images"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", ctx.config_path, "JSON config with per-command sections");
  ctx.seed_opt = app.add_option("--seed", ctx.seed_flag, "RNG seed");
  ctx.threads_opt = app.add_option("--threads", ctx.threads_flag, "worker threads")
                        ->check(CLI::PositiveNumber);
  ctx.out_opt = app.add_option("--out", ctx.out_flag, "primary output path");
  app.add_option("--manifest", ctx.manifest_flag, "run manifest path");

  cli::add_attributes(app, ctx);
  cli::add_sample(app, ctx);
  cli::add_serve(app, ctx);
  cli::add_mos(app, ctx);
  cli::add_train(app, ctx);
  cli::add_eval(app, ctx);
  cli::add_stats_test(app, ctx);
  cli::add_plotdata(app, ctx);

  // Config loads once options are parsed and before any subcommand runs.
  app.parse_complete_callback([&] { ctx.load(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kUsage;
  } catch (const cli::UsageError& e) {
    return report(cli::kUsage, "usage", e.what());
  } catch (const ConfigError& e) {
    return report(cli::kConfig, "config", e.what());
  } catch (const IoError& e) {
    return report(cli::kIo, "io", e.what());
  } catch (const NotFoundError& e) {
    return report(cli::kIo, "io", e.what());
  } catch (const ValidationError& e) {
    return report(cli::kValidation, "validation", e.what());
  } catch (const DegenerateError& e) {
    return report(cli::kValidation, "degenerate", e.what());
  } catch (const DimensionError& e) {
    return report(cli::kValidation, "dimension", e.what());
  } catch (const std::exception& e) {
    return report(cli::kFailure, "internal", e.what());
  }
  return cli::kOk;
}
