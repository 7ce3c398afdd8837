// Command-line front end for the staged experiment pipeline.
//
//   dcqmc <command> [--config PATH] [--seed INT] [--out DIR] [--force] [--workers INT]
//
// Exit codes: 0 success, 2 configuration error, 3 data or format error,
// 4 resource limit, 1 anything else.

#include <CLI11.hpp>

#include <iomanip>
#include <iostream>
#include <optional>

#include "dcqmc/pipeline.hpp"

using namespace dcqmc;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::optional<std::size_t> workers;
  bool quiet = false;
};

ExperimentConfig resolve_config(const GlobalOptions& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.out = g.out;
  if (g.workers) cfg.workers = std::max<std::size_t>(1, *g.workers);
  validate_config(cfg);
  return cfg;
}

void print_stages(const RunManifest& m) {
  for (const auto& s : m.stages)
    std::cout << std::left << std::setw(10) << s.name << ' ' << std::setw(8) << s.status << ' ' << std::fixed
              << std::setprecision(2) << s.seconds << "s\n";
}

void print_crossing(const PartitionPair& pp) {
  const auto r = crossing_report(pp);
  std::cout << "p2 block  p1 blocks met\n";
  for (std::size_t m = 0; m < r.per_block.size(); ++m)
    std::cout << std::left << std::setw(9) << pp.p2[m].id.to_string() << ' ' << r.per_block[m] << '\n';
  std::cout << "min " << r.min_crossing << ", mean " << std::setprecision(3) << r.mean_crossing << ", violating "
            << r.violating.size() << '\n';
}

int run_command(const std::string& cmd, const GlobalOptions& g) {
  const ExperimentConfig cfg = resolve_config(g);
  std::ostream* log = g.quiet ? nullptr : &std::cerr;
  if (cmd == "sweep-n" || cmd == "sweep-b") {
    std::cout << run_sweep(cfg, cmd == "sweep-n" ? "n" : "block_size", g.force, log);
    return 0;
  }
  Pipeline p(cfg, g.force, log);
  if (cmd == "mnist") {
    const Json report = p.run_mnist();
    print_stages(p.manifest());
    std::cout << report.dump(2) << '\n';
    return 0;
  }
  static const std::map<std::string, std::string> last_stage{
      {"generate", "instance"}, {"partition", "partition"}, {"qaoa", "qaoa"}, {"made", "made"},
      {"mcmc", "mcmc"},         {"analyze", "analysis"},    {"pipeline", "analysis"}};
  const auto manifest = p.run_through(last_stage.at(cmd));
  print_stages(manifest);
  if (cmd == "generate") {
    const auto inst = load_instance(p.instance_path());
    std::cout << "N " << inst.n() << ", edges " << inst.edges().size() << ", written to " << p.instance_path().string()
              << '\n';
  } else if (cmd == "partition" && fs::exists(p.partitions_path())) {
    print_crossing(load_partition_pair(p.partitions_path()));
  } else if (cmd == "analyze" || cmd == "pipeline") {
    std::cout << read_text_file(p.analysis_dir() / "summary.csv");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-surrogate MCMC for fixed-weight Boltzmann sampling"};
  app.require_subcommand(1, 1);
  GlobalOptions g;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  auto* seed_opt = app.add_option("--seed", seed, "Root seed (overrides the config)");
  auto* workers_opt = app.add_option("--workers", workers, "Worker threads (overrides the config)");
  app.add_option("--config", g.config, "Experiment config JSON");
  app.add_option("--out", g.out, "Output directory (overrides the config)");
  app.add_flag("--force", g.force, "Rerun stages even when cached");
  app.add_flag("--quiet", g.quiet, "No progress messages on stderr");
  const std::vector<std::pair<std::string, std::string>> commands{
      {"generate", "Build or import the instance"},
      {"partition", "Build the partition pair and print its crossing table"},
      {"qaoa", "Optimise per-block circuits and sample training sets"},
      {"made", "Train per-block conditional surrogates"},
      {"mcmc", "Run chain-pair ensembles for each kernel"},
      {"analyze", "Fit overlap decay rates and write summaries"},
      {"pipeline", "Run every stage"},
      {"sweep-n", "Pipeline over sweep.values as system sizes"},
      {"sweep-b", "Pipeline over sweep.values as block sizes"},
      {"mnist", "Feature-selection experiment on IDX data"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->fallthrough();
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (seed_opt->count()) g.seed = seed;
  if (workers_opt->count()) g.workers = workers;
  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    return run_command(cmd, g);
  } catch (const ConfigurationError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return 3;
  } catch (const InsufficientData& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 3;
  } catch (const ResourceLimit& e) {
    std::cerr << "resource limit: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
