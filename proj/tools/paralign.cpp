// paralign: drives world generation, the training stages, and reporting.
//
//   paralign world gen --config c.ini --out run/ [--seed N]
//   paralign pipeline <stage> --config c.ini --in run/ --out run/ [--seed N] [--workers N]
//   paralign report --in runs/ --out summary/
//
// exit codes: 0 ok, 1 other failure, 2 config error, 3 IO error, 4 missing upstream artifact

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "paralign/pipeline.hpp"

namespace {

using namespace paralign;

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return 2;
    case ErrorKind::Io: return 3;
    case ErrorKind::MissingArtifact:
    case ErrorKind::RewardModelMissing: return 4;
    default: return 1;
  }
}

struct Common {
  std::string config;
  std::string in = ".";
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

StageContext make_context(const Common& o) {
  StageContext ctx;
  ctx.cfg = load_config(o.config);
  if (o.workers) ctx.cfg.config.workers = *o.workers;
  require(ctx.cfg.config.workers >= 1, ErrorKind::Config, "key 'run.workers': must be at least 1");
  ctx.in = o.in;
  ctx.out = o.out;
  ctx.seed = o.seed.value_or(ctx.cfg.config.seed);
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"paralinguistic alignment pipeline on a synthetic dual-stream world"};
  app.require_subcommand(1);

  Common world_opts;
  auto* world = app.add_subcommand("world", "synthetic query world");
  world->require_subcommand(1);
  auto* world_gen = world->add_subcommand("gen", "generate, filter, render and split queries");
  world_gen->add_option("--config", world_opts.config, "INI config")->required();
  world_gen->add_option("--out", world_opts.out, "output directory")->required();
  world_gen->add_option("--seed", world_opts.seed, "run seed (default: run.seed)");

  Common pipe_opts;
  std::string stage;
  auto* pipeline = app.add_subcommand("pipeline", "run one training or evaluation stage");
  pipeline->add_option("stage", stage, "stage")
      ->required()
      ->check(CLI::IsMember({"pretrain", "sft", "rm-build", "rm-train", "grpo", "eval", "gradcheck", "ablate"}));
  pipeline->add_option("--config", pipe_opts.config, "INI config")->required();
  pipeline->add_option("--in", pipe_opts.in, "directory holding upstream artifacts");
  pipeline->add_option("--out", pipe_opts.out, "output directory");
  pipeline->add_option("--seed", pipe_opts.seed, "run seed (default: run.seed)");
  pipeline->add_option("--workers", pipe_opts.workers, "cap on worker threads");

  std::string report_in, report_out;
  auto* report = app.add_subcommand("report", "merge metrics.jsonl files into a summary");
  report->add_option("--in", report_in, "directory searched recursively for metrics.jsonl")->required();
  report->add_option("--out", report_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (world_gen->parsed()) {
      stage_world(make_context(world_opts));
      std::cout << "world written to " << world_opts.out << "\n";
    } else if (pipeline->parsed()) {
      const auto ctx = make_context(pipe_opts);
      if (stage == "pretrain") stage_pretrain(ctx);
      else if (stage == "sft") stage_sft(ctx);
      else if (stage == "rm-build") stage_rm_build(ctx);
      else if (stage == "rm-train") stage_rm_train(ctx);
      else if (stage == "grpo") stage_grpo(ctx);
      else if (stage == "eval") stage_eval(ctx);
      else if (stage == "ablate") stage_ablate(ctx);
      else if (stage == "gradcheck") {
        const double worst = stage_gradcheck(ctx);
        std::printf("max relative error %.3e (tolerance 1e-4)\n", worst);
        return worst <= 1e-4 ? 0 : 1;
      }
      std::cout << stage << " done, artifacts in " << pipe_opts.out << "\n";
    } else if (report->parsed()) {
      write_report(report_in, report_out);
      std::cout << "summary written to " << report_out << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
