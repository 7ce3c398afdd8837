#pragma once

// Staged experiment runner. Every stage reads its inputs from and writes its
// outputs to files under the output directory; a stage whose content hash
// (its config subsection plus upstream hashes) matches the stamp left by a
// previous run is reused unless forced.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dcqmc/analysis.hpp"
#include "dcqmc/errors.hpp"
#include "dcqmc/featureselect.hpp"
#include "dcqmc/io.hpp"
#include "dcqmc/ising.hpp"
#include "dcqmc/ising_io.hpp"
#include "dcqmc/made.hpp"
#include "dcqmc/mcmc.hpp"
#include "dcqmc/parallel.hpp"
#include "dcqmc/partition.hpp"
#include "dcqmc/qaoa.hpp"

namespace dcqmc {

namespace fs = std::filesystem;

struct InstanceSpec {
  std::string source = "generate";  // generate | file | mnist-qubo
  std::size_t n = 16;
  std::size_t degree = 3;
  std::uint64_t seed = 1;
  std::string path;  // source == file: instance JSON or upper-triangular CSV
};

struct PartitionSpec {
  std::size_t block_size = 4;
};

struct QaoaSpec {
  QaoaOptimizerConfig optimizer;
  std::size_t shots = 2000;  // per initial angle
  std::vector<double> extra_angles;
  double target_weight = -1.0;  // >= 0 adds the biased angle for this expected block weight
};

struct McmcSpec {
  std::vector<KernelKind> kernels{KernelKind::BlockSurrogate, KernelKind::GlobalKawasaki, KernelKind::LocalKawasaki};
  std::uint64_t steps = 20000;
  std::size_t repeats = 12;  // chain pairs per kernel
  std::size_t thin = 1;
  std::uint64_t check_every = 10000;
  bool csv = false;          // write the per-step CSV sidecar next to each trace
  bool keep_traces = true;   // false: the analysis stage deletes traces after reading them
};

struct AnalysisSpec {
  std::size_t max_lag = 200;
  double cutoff = 0.05;
  double burn_in = 0.1;
  bool per_run = false;  // false: fit the run-averaged autocorrelation
};

struct MnistSpec {
  std::string train_images, train_labels, test_images, test_labels;
  std::size_t downsample = 2;
  int threshold = 127;
  std::size_t k = 20;
  double edge_threshold = 1e-3;
  std::vector<std::uint64_t> stop_steps{50, 3000};
  std::size_t runs = 10;
  std::size_t random_masks = 10;
  LogisticConfig classifier;
};

struct SweepSpec {
  std::vector<std::size_t> values;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  InstanceSpec instance;
  std::size_t k = 0;  // 0: N/2 (or mnist.k for the MNIST QUBO)
  double beta_pi = 0.5;
  PartitionSpec partition;
  QaoaSpec qaoa;
  TrainConfig made;
  McmcSpec mcmc;
  AnalysisSpec analysis;
  MnistSpec mnist;
  SweepSpec sweep;
  std::size_t workers = 1;
  std::string out = "runs/default";

  bool needs_surrogate() const {
    for (auto k : mcmc.kernels)
      if (k == KernelKind::BlockSurrogate) return true;
    return false;
  }
};

namespace detail {

class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigurationError(where_ + ": expected an object");
  }
  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigurationError(where_ + ": unknown key '" + key + "'");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception& e) {
      throw ConfigurationError(where_ + "." + key + ": " + e.what());
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline Json config_to_json(const ExperimentConfig& c) {
  Json kernels = Json::array();
  for (auto k : c.mcmc.kernels) kernels.push_back(kernel_name(k));
  return Json{
      {"seed", c.seed},
      {"instance",
       {{"source", c.instance.source}, {"n", c.instance.n}, {"degree", c.instance.degree}, {"seed", c.instance.seed},
        {"path", c.instance.path}}},
      {"k", c.k},
      {"beta_pi", c.beta_pi},
      {"partition", {{"block_size", c.partition.block_size}}},
      {"qaoa",
       {{"p", c.qaoa.optimizer.depth}, {"restarts", c.qaoa.optimizer.restarts},
        {"evaluations_per_layer", c.qaoa.optimizer.evaluations_per_layer}, {"tolerance", c.qaoa.optimizer.tolerance},
        {"shots", c.qaoa.shots}, {"extra_angles", c.qaoa.extra_angles}, {"target_weight", c.qaoa.target_weight}}},
      {"made",
       {{"hidden_widths", c.made.hidden_widths}, {"learning_rate", c.made.learning_rate},
        {"momentum", c.made.momentum}, {"batch_size", c.made.batch_size}, {"epochs", c.made.epochs},
        {"validation_fraction", c.made.validation_fraction}}},
      {"mcmc",
       {{"kernels", kernels}, {"steps", c.mcmc.steps}, {"repeats", c.mcmc.repeats}, {"thin", c.mcmc.thin},
        {"check_every", c.mcmc.check_every}, {"csv", c.mcmc.csv}, {"keep_traces", c.mcmc.keep_traces}}},
      {"analysis",
       {{"max_lag", c.analysis.max_lag}, {"cutoff", c.analysis.cutoff}, {"burn_in", c.analysis.burn_in},
        {"per_run", c.analysis.per_run}}},
      {"mnist",
       {{"train_images", c.mnist.train_images}, {"train_labels", c.mnist.train_labels},
        {"test_images", c.mnist.test_images}, {"test_labels", c.mnist.test_labels},
        {"downsample", c.mnist.downsample}, {"threshold", c.mnist.threshold}, {"k", c.mnist.k},
        {"edge_threshold", c.mnist.edge_threshold}, {"stop_steps", c.mnist.stop_steps}, {"runs", c.mnist.runs},
        {"random_masks", c.mnist.random_masks},
        {"classifier",
         {{"iterations", c.mnist.classifier.iterations}, {"learning_rate", c.mnist.classifier.learning_rate},
          {"l2", c.mnist.classifier.l2}}}}},
      {"sweep", {{"values", c.sweep.values}}},
      {"workers", c.workers},
      {"out", c.out}};
}

inline void validate_config(const ExperimentConfig& c) {
  const auto& s = c.instance.source;
  if (s != "generate" && s != "file" && s != "mnist-qubo")
    throw ConfigurationError("instance.source must be generate, file or mnist-qubo");
  if (s == "file" && c.instance.path.empty()) throw ConfigurationError("instance.path is required for source=file");
  if (s == "file" && !fs::exists(c.instance.path))
    throw ConfigurationError("instance.path '" + c.instance.path + "' does not exist");
  if (s == "mnist-qubo")
    for (const auto* p : {&c.mnist.train_images, &c.mnist.train_labels, &c.mnist.test_images, &c.mnist.test_labels})
      if (p->empty() || !fs::exists(*p)) throw ConfigurationError("mnist data file '" + *p + "' does not exist");
  if (!std::isfinite(c.beta_pi) || c.beta_pi < 0) throw ConfigurationError("beta_pi must be finite and non-negative");
  if (c.partition.block_size == 0 || c.partition.block_size > kMaxQubits)
    throw ConfigurationError("partition.block_size must lie in [1, " + std::to_string(kMaxQubits) + "]");
  if (c.qaoa.optimizer.depth == 0 || c.qaoa.optimizer.restarts == 0 || c.qaoa.shots == 0)
    throw ConfigurationError("qaoa.p, qaoa.restarts and qaoa.shots must be positive");
  if (c.mcmc.kernels.empty()) throw ConfigurationError("mcmc.kernels must not be empty");
  if (c.mcmc.repeats == 0 || c.mcmc.thin == 0) throw ConfigurationError("mcmc.repeats and mcmc.thin must be positive");
  if (!(c.analysis.cutoff > 0 && c.analysis.cutoff < 1)) throw ConfigurationError("analysis.cutoff must lie in (0, 1)");
  if (!(c.analysis.burn_in >= 0 && c.analysis.burn_in < 1)) throw ConfigurationError("analysis.burn_in must lie in [0, 1)");
  if (c.mnist.threshold < 0 || c.mnist.threshold > 255) throw ConfigurationError("mnist.threshold must lie in [0, 255]");
  if (c.mnist.k < 2) throw ConfigurationError("mnist.k must be at least 2");
  try {
    c.made.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigurationError(std::string("made: ") + e.what());
  }
}

inline ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  {
    detail::ObjectReader r(j, "config");
    r.get("seed", c.seed);
    r.get("k", c.k);
    r.get("beta_pi", c.beta_pi);
    r.get("workers", c.workers);
    r.get("out", c.out);
    if (const Json* s = r.child("instance")) {
      detail::ObjectReader ri(*s, "instance");
      ri.get("source", c.instance.source);
      ri.get("n", c.instance.n);
      ri.get("degree", c.instance.degree);
      ri.get("seed", c.instance.seed);
      ri.get("path", c.instance.path);
    }
    if (const Json* s = r.child("partition")) {
      detail::ObjectReader rp(*s, "partition");
      rp.get("block_size", c.partition.block_size);
    }
    if (const Json* s = r.child("qaoa")) {
      detail::ObjectReader rq(*s, "qaoa");
      rq.get("p", c.qaoa.optimizer.depth);
      rq.get("restarts", c.qaoa.optimizer.restarts);
      rq.get("evaluations_per_layer", c.qaoa.optimizer.evaluations_per_layer);
      rq.get("tolerance", c.qaoa.optimizer.tolerance);
      rq.get("shots", c.qaoa.shots);
      rq.get("extra_angles", c.qaoa.extra_angles);
      rq.get("target_weight", c.qaoa.target_weight);
    }
    if (const Json* s = r.child("made")) {
      detail::ObjectReader rm(*s, "made");
      rm.get("hidden_widths", c.made.hidden_widths);
      rm.get("learning_rate", c.made.learning_rate);
      rm.get("momentum", c.made.momentum);
      rm.get("batch_size", c.made.batch_size);
      rm.get("epochs", c.made.epochs);
      rm.get("validation_fraction", c.made.validation_fraction);
    }
    if (const Json* s = r.child("mcmc")) {
      detail::ObjectReader rc(*s, "mcmc");
      std::vector<std::string> names;
      rc.get("kernels", names);
      if (s->contains("kernels")) {
        c.mcmc.kernels.clear();
        for (const auto& n : names) c.mcmc.kernels.push_back(parse_kernel(n));
      }
      rc.get("steps", c.mcmc.steps);
      rc.get("repeats", c.mcmc.repeats);
      rc.get("thin", c.mcmc.thin);
      rc.get("check_every", c.mcmc.check_every);
      rc.get("csv", c.mcmc.csv);
      rc.get("keep_traces", c.mcmc.keep_traces);
    }
    if (const Json* s = r.child("analysis")) {
      detail::ObjectReader ra(*s, "analysis");
      ra.get("max_lag", c.analysis.max_lag);
      ra.get("cutoff", c.analysis.cutoff);
      ra.get("burn_in", c.analysis.burn_in);
      ra.get("per_run", c.analysis.per_run);
    }
    if (const Json* s = r.child("mnist")) {
      detail::ObjectReader rn(*s, "mnist");
      rn.get("train_images", c.mnist.train_images);
      rn.get("train_labels", c.mnist.train_labels);
      rn.get("test_images", c.mnist.test_images);
      rn.get("test_labels", c.mnist.test_labels);
      rn.get("downsample", c.mnist.downsample);
      rn.get("threshold", c.mnist.threshold);
      rn.get("k", c.mnist.k);
      rn.get("edge_threshold", c.mnist.edge_threshold);
      rn.get("stop_steps", c.mnist.stop_steps);
      rn.get("runs", c.mnist.runs);
      rn.get("random_masks", c.mnist.random_masks);
      if (const Json* cl = rn.child("classifier")) {
        detail::ObjectReader rl(*cl, "mnist.classifier");
        rl.get("iterations", c.mnist.classifier.iterations);
        rl.get("learning_rate", c.mnist.classifier.learning_rate);
        rl.get("l2", c.mnist.classifier.l2);
      }
    }
    if (const Json* s = r.child("sweep")) {
      detail::ObjectReader rs(*s, "sweep");
      rs.get("values", c.sweep.values);
    }
  }
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigurationError("config file '" + path.string() + "' does not exist");
  Json j;
  try {
    j = read_json_file(path);
  } catch (const FormatError& e) {
    throw ConfigurationError(e.what());
  }
  return config_from_json(j);
}

struct StageRecord {
  std::string name;
  std::string hash;
  std::string status;  // ran | cached | skipped
  double seconds = 0.0;
  std::vector<std::string> artifacts;  // relative to the output directory
};

struct RunManifest {
  std::string config_hash;
  std::vector<StageRecord> stages;

  const StageRecord& stage(const std::string& name) const {
    for (const auto& s : stages)
      if (s.name == name) return s;
    throw InvalidArgument("manifest has no stage '" + name + "'");
  }

  Json to_json() const {
    Json st = Json::array();
    for (const auto& s : stages)
      st.push_back({{"name", s.name}, {"hash", s.hash}, {"status", s.status}, {"seconds", s.seconds},
                    {"artifacts", s.artifacts}});
    return {{"config_hash", config_hash}, {"stages", st}};
  }
};

/// Kernel summary written by the analysis stage.
struct AnalysisResult {
  std::map<std::string, DecayFit> fits;            // fit used for tau_mean
  std::map<std::string, std::vector<double>> run_rates;  // per-run rates (NaN if unfittable)
  EnsembleSummary summary;
  std::map<std::string, MeanAutocorr> autocorr;
  std::size_t feasibility_violations = 0;
};

class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, bool force = false, std::ostream* log = nullptr)
      : cfg_(std::move(cfg)), force_(force), log_(log), out_(cfg_.out) {
    validate_config(cfg_);
    manifest_.config_hash = hex64(fnv1a(config_to_json(cfg_).dump()));
  }

  const ExperimentConfig& config() const noexcept { return cfg_; }
  const fs::path& out() const noexcept { return out_; }
  const RunManifest& manifest() const noexcept { return manifest_; }

  fs::path instance_path() const { return out_ / "instance.json"; }
  fs::path partitions_path() const { return out_ / "partitions.json"; }
  fs::path qaoa_dir() const { return out_ / "qaoa"; }
  fs::path made_dir() const { return out_ / "made"; }
  fs::path mcmc_dir() const { return out_ / "mcmc"; }
  fs::path analysis_dir() const { return out_ / "analysis"; }
  fs::path mnist_dir() const { return out_ / "mnist"; }

  std::string trace_stem(KernelKind k, std::size_t run, char side) const {
    return (fs::path(kernel_name(k)) / ("r" + std::to_string(run) + "_" + side)).string();
  }

  /// Stages up to and including `last` (instance, partition, qaoa, made, mcmc, analysis).
  RunManifest run_through(const std::string& last) {
    static const std::vector<std::string> order{"instance", "partition", "qaoa", "made", "mcmc", "analysis"};
    auto it = std::find(order.begin(), order.end(), last);
    if (it == order.end()) throw ConfigurationError("unknown stage '" + last + "'");
    const auto stop = static_cast<std::size_t>(it - order.begin());
    stage_instance();
    if (stop >= 1) stage_partition();
    if (stop >= 2) stage_qaoa();
    if (stop >= 3) stage_made();
    if (stop >= 4) stage_mcmc();
    if (stop >= 5) stage_analysis();
    write_manifest();
    return manifest_;
  }

  RunManifest run() { return run_through("analysis"); }

  // ---- stages ----

  std::string stage_instance() {
    if (hashes_.count("instance")) return hashes_["instance"];
    Json key = config_to_json(cfg_)["instance"];
    key["seed_root"] = cfg_.seed;
    if (cfg_.instance.source == "file") key["content"] = hex64(fnv1a(read_binary_file(cfg_.instance.path)));
    if (cfg_.instance.source == "mnist-qubo") {
      key["mnist"] = config_to_json(cfg_)["mnist"];
      key.erase("n");
      key.erase("degree");
      key["mnist"].erase("stop_steps");
      key["mnist"].erase("runs");
      key["mnist"].erase("random_masks");
      key["mnist"].erase("classifier");
      for (const char* f : {"train_images", "train_labels"})
        key["mnist"][std::string(f) + "_hash"] = hex64(fnv1a(read_binary_file(cfg_.mnist.*member_for(f))));
    }
    return run_stage("instance", hex64(fnv1a(key.dump())), [&] {
      std::vector<std::string> artifacts{"instance.json"};
      QuboInstance inst = [&] {
        if (cfg_.instance.source == "generate")
          return gen_regular_instance(cfg_.instance.n, cfg_.instance.degree, cfg_.instance.seed);
        if (cfg_.instance.source == "file") {
          const fs::path p = cfg_.instance.path;
          if (p.extension() == ".csv") return import_upper_triangular_csv(read_text_file(p));
          return load_instance(p);
        }
        const auto train = load_mnist_train();
        const MiTable mi = build_mi_table(train, cfg_.workers);
        write_file(out_ / "mi_table.csv", mi.to_csv());
        artifacts.push_back("mi_table.csv");
        return build_feature_qubo(mi, cfg_.mnist.k, cfg_.mnist.edge_threshold);
      }();
      save_instance(instance_path(), inst);
      return artifacts;
    });
  }

  std::string stage_partition() {
    if (hashes_.count("partition")) return hashes_["partition"];
    const std::string up = stage_instance();
    if (!cfg_.needs_surrogate()) return skip("partition");
    Json key = config_to_json(cfg_)["partition"];
    key["up"] = up;
    key["seed_root"] = cfg_.seed;
    return run_stage("partition", hex64(fnv1a(key.dump())), [&] {
      const QuboInstance inst = load_instance(instance_path());
      const auto sizes = spread_block_sizes(inst.n(), cfg_.partition.block_size);
      const PartitionPair pp = build_partition_pair(inst, sizes, sizes, derive_seed(cfg_.seed, 20));
      save_partition_pair(partitions_path(), pp, inst.n());
      return std::vector<std::string>{"partitions.json"};
    });
  }

  std::string stage_qaoa() {
    if (hashes_.count("qaoa")) return hashes_["qaoa"];
    const std::string up = stage_partition();
    if (!cfg_.needs_surrogate()) return skip("qaoa");
    Json key = config_to_json(cfg_)["qaoa"];
    key["up"] = up;
    key["seed_root"] = cfg_.seed;
    return run_stage("qaoa", hex64(fnv1a(key.dump())), [&] {
      const QuboInstance inst = load_instance(instance_path());
      const PartitionPair pp = load_partition_pair(partitions_path());
      const auto blocks = all_blocks(pp);
      std::vector<std::string> artifacts(2 * blocks.size());
      parallel_for(blocks.size(), cfg_.workers, [&](std::size_t b) {
        const Block& block = blocks[b];
        const BlockProblem bp = make_block_problem(inst, block);
        const QaoaSimulator sim(bp);
        // With a target weight the search starts from the biased product
        // state instead of the uniform superposition.
        auto extra = cfg_.qaoa.extra_angles;
        double init_angle = std::numbers::pi / 2;
        if (cfg_.qaoa.target_weight >= 0) {
          init_angle = biased_angle_for_target_weight(
              block.size(), std::min(cfg_.qaoa.target_weight, static_cast<double>(block.size())));
          extra.push_back(init_angle);
        }
        const Statevector init = prepare_initial_state(block.size(), init_angle);
        const auto opt =
            optimize_params(sim, init, derive_seed(cfg_.seed, 30, block.id.s, block.id.m), cfg_.qaoa.optimizer);
        const auto angles = default_training_angles(block.size(), extra);
        const BlockSampleSet set = generate_training_set(sim, opt.params, angles, cfg_.qaoa.shots,
                                                         derive_seed(cfg_.seed, 31, block.id.s, block.id.m));
        const std::string name = block.id.to_string();
        write_json_file(qaoa_dir() / (name + ".params.json"), qaoa_params_to_json(block.id, opt.params, opt.loss));
        save_sample_set(qaoa_dir() / (name + ".samples"), set);
        artifacts[2 * b] = "qaoa/" + name + ".params.json";
        artifacts[2 * b + 1] = "qaoa/" + name + ".samples";
        say("qaoa " + name + ": loss " + std::to_string(opt.loss) + " (start " + std::to_string(opt.initial_loss) + ")");
      });
      return artifacts;
    });
  }

  std::string stage_made() {
    if (hashes_.count("made")) return hashes_["made"];
    const std::string up = stage_qaoa();
    if (!cfg_.needs_surrogate()) return skip("made");
    Json key = config_to_json(cfg_)["made"];
    key["up"] = up;
    key["seed_root"] = cfg_.seed;
    return run_stage("made", hex64(fnv1a(key.dump())), [&] {
      const PartitionPair pp = load_partition_pair(partitions_path());
      const auto blocks = all_blocks(pp);
      std::vector<std::string> artifacts(2 * blocks.size());
      parallel_for(blocks.size(), cfg_.workers, [&](std::size_t b) {
        const Block& block = blocks[b];
        const std::string name = block.id.to_string();
        const BlockSampleSet data = load_sample_set(qaoa_dir() / (name + ".samples"));
        auto model = ConditionalMadeModel::build(block.size(), cfg_.made,
                                                 derive_seed(cfg_.seed, 40, block.id.s, block.id.m), block.id);
        TrainConfig tc = cfg_.made;
        tc.seed = derive_seed(cfg_.seed, 41, block.id.s, block.id.m);
        const TrainingReport report = train(model, data, tc);
        save_model(made_dir() / (name + ".model"), model);
        write_file(made_dir() / (name + ".train.csv"), report.to_csv());
        artifacts[2 * b] = "made/" + name + ".model";
        artifacts[2 * b + 1] = "made/" + name + ".train.csv";
        say("made " + name + ": train ll " + std::to_string(report.epochs.back().train_ll));
      });
      return artifacts;
    });
  }

  /// Kernel configuration for the target, loading partitions and models from disk when needed.
  KernelConfig kernel_config(KernelKind kind) {
    KernelConfig kc;
    kc.kind = kind;
    kc.beta_pi = cfg_.beta_pi;
    if (kind == KernelKind::BlockSurrogate) {
      if (!surrogate_) {
        auto pp = std::make_shared<PartitionPair>(load_partition_pair(partitions_path()));
        ModelMap models;
        for (const auto& block : all_blocks(*pp))
          models[block.id] = std::make_shared<const ConditionalMadeModel>(
              load_model(made_dir() / (block.id.to_string() + ".model")));
        surrogate_ = std::make_pair(std::shared_ptr<const PartitionPair>(pp), std::move(models));
      }
      kc.partitions = surrogate_->first;
      kc.models = surrogate_->second;
    }
    return kc;
  }

  std::size_t target_weight(const QuboInstance& inst) const {
    if (cfg_.instance.source == "mnist-qubo") return cfg_.mnist.k;
    return cfg_.k ? cfg_.k : inst.n() / 2;
  }

  /// Initial states shared by all kernels for chain pair `run`.
  std::pair<SpinConfig, SpinConfig> initial_pair(std::size_t n, std::size_t k, std::size_t run) const {
    Rng ra(derive_seed(cfg_.seed, 50, run), 0), rb(derive_seed(cfg_.seed, 50, run), 1);
    return {random_feasible_config(n, k, ra), random_feasible_config(n, k, rb)};
  }

  std::uint64_t chain_seed(KernelKind kind, std::size_t run, int side) const {
    return derive_seed(cfg_.seed, 51, static_cast<std::uint64_t>(kind), run, static_cast<std::uint64_t>(side));
  }

  std::string stage_mcmc() {
    if (hashes_.count("mcmc")) return hashes_["mcmc"];
    const std::string up = stage_made();
    Json key = config_to_json(cfg_)["mcmc"];
    key.erase("keep_traces");
    key["up"] = up;
    key["instance"] = hashes_["instance"];
    key["k"] = cfg_.k;
    key["beta_pi"] = cfg_.beta_pi;
    key["seed_root"] = cfg_.seed;
    return run_stage("mcmc", hex64(fnv1a(key.dump())), [&] {
      const QuboInstance inst = load_instance(instance_path());
      const std::size_t k = target_weight(inst);
      std::vector<KernelConfig> kernels;
      for (auto kind : cfg_.mcmc.kernels) kernels.push_back(kernel_config(kind));
      const std::size_t R = cfg_.mcmc.repeats;
      std::vector<std::string> artifacts;
      for (auto kind : cfg_.mcmc.kernels)
        for (std::size_t r = 0; r < R; ++r)
          for (char side : {'a', 'b'}) {
            artifacts.push_back("mcmc/" + trace_stem(kind, r, side) + ".trace");
            if (cfg_.mcmc.csv) artifacts.push_back("mcmc/" + trace_stem(kind, r, side) + ".csv");
          }
      RunOptions opt;
      opt.record_transitions = cfg_.mcmc.csv;
      opt.check_every = cfg_.mcmc.check_every;
      parallel_for(kernels.size() * R, cfg_.workers, [&](std::size_t job) {
        const auto& kc = kernels[job / R];
        const std::size_t r = job % R;
        const auto [ia, ib] = initial_pair(inst.n(), k, r);
        const auto [ta, tb] = run_chain_pair(inst, k, kc, cfg_.mcmc.steps, ia, ib, chain_seed(kc.kind, r, 0),
                                             chain_seed(kc.kind, r, 1), cfg_.mcmc.thin, opt);
        for (const auto* t : {&ta, &tb}) {
          const fs::path stem = mcmc_dir() / trace_stem(kc.kind, r, t == &ta ? 'a' : 'b');
          if (cfg_.mcmc.csv) save_trace(stem, *t);
          else write_file(fs::path(stem.string() + ".trace"), encode_trace(*t));
        }
      });
      return artifacts;
    });
  }

  std::string stage_analysis() {
    if (hashes_.count("analysis")) return hashes_["analysis"];
    const std::string up = stage_mcmc();
    Json key = config_to_json(cfg_)["analysis"];
    key["up"] = up;
    return run_stage("analysis", hex64(fnv1a(key.dump())), [&] {
      const auto result = analyze_traces();
      auto artifacts = write_analysis(result);
      if (!cfg_.mcmc.keep_traces) fs::remove_all(mcmc_dir());
      return artifacts;
    });
  }

  AnalysisResult analyze_traces() const {
    AnalysisResult res;
    std::map<std::string, std::vector<DecayFit>> per_run;
    for (auto kind : cfg_.mcmc.kernels) {
      const std::string name = kernel_name(kind);
      std::vector<AutocorrResult> acs;
      auto& rates = res.run_rates[name];
      for (std::size_t r = 0; r < cfg_.mcmc.repeats; ++r) {
        const ChainTrace a = load_trace(mcmc_dir() / (trace_stem(kind, r, 'a') + ".trace"));
        const ChainTrace b = load_trace(mcmc_dir() / (trace_stem(kind, r, 'b') + ".trace"));
        res.feasibility_violations += a.feasibility_violations + b.feasibility_violations;
        const auto q = overlap_series(a, b, burn_in_count(a.configs.size(), cfg_.analysis.burn_in));
        acs.push_back(autocorrelation(q, cfg_.analysis.max_lag));
        try {
          const DecayFit f = fit_decay_rate(acs.back(), cfg_.analysis.cutoff);
          rates.push_back(f.rate);
          per_run[name].push_back(f);
        } catch (const InsufficientData&) {
          rates.push_back(std::numeric_limits<double>::quiet_NaN());
        }
      }
      res.autocorr[name] = average_autocorrelation(acs);
      if (!cfg_.analysis.per_run) res.fits[name] = fit_decay_rate(res.autocorr[name].mean, cfg_.analysis.cutoff);
    }
    if (cfg_.analysis.per_run) {
      for (auto kind : cfg_.mcmc.kernels)
        if (per_run[kernel_name(kind)].empty())
          throw InsufficientData("analysis: no run of " + kernel_name(kind) + " produced a usable fit");
      res.summary = ensemble_summary(per_run);
    } else {
      std::map<std::string, std::vector<DecayFit>> single;
      for (const auto& [name, f] : res.fits) single[name] = {f};
      res.summary = ensemble_summary(single);
      for (auto& ks : res.summary.kernels) {
        ks.runs = cfg_.mcmc.repeats;
        const auto& fits = per_run[ks.kernel];
        if (fits.size() > 1) {
          double m = 0, ss = 0;
          for (const auto& f : fits) m += f.rate;
          m /= static_cast<double>(fits.size());
          for (const auto& f : fits) ss += (f.rate - m) * (f.rate - m);
          ks.tau_std = std::sqrt(ss / static_cast<double>(fits.size() - 1));
        } else {
          ks.tau_std = std::numeric_limits<double>::quiet_NaN();
        }
      }
    }
    return res;
  }

  std::vector<std::string> write_analysis(const AnalysisResult& res) const {
    std::vector<std::string> artifacts;
    const fs::path dir = analysis_dir();
    for (const auto& [name, m] : res.autocorr) {
      write_file(dir / (name + ".autocorr.csv"), autocorr_csv(m));
      artifacts.push_back("analysis/" + name + ".autocorr.csv");
    }
    write_file(dir / "summary.csv", summary_csv(res.summary));
    artifacts.push_back("analysis/summary.csv");
    std::ostringstream runs;
    runs.precision(17);
    runs << "kernel,run,tau\n";
    for (const auto& [name, rates] : res.run_rates)
      for (std::size_t r = 0; r < rates.size(); ++r) runs << name << ',' << r << ',' << rates[r] << '\n';
    write_file(dir / "runs.csv", runs.str());
    artifacts.push_back("analysis/runs.csv");
    Json j;
    j["feasibility_violations"] = res.feasibility_violations;
    for (const auto& k : res.summary.kernels) {
      Json entry{{"runs", k.runs}, {"tau_mean", k.tau_mean}};
      entry["tau_std"] = std::isfinite(k.tau_std) ? Json(k.tau_std) : Json(nullptr);
      if (auto it = res.fits.find(k.kernel); it != res.fits.end())
        entry["fit"] = {{"amplitude", it->second.amplitude}, {"last_lag", it->second.last_lag},
                        {"residual", it->second.residual}, {"slow_mixing", it->second.slow_mixing}};
      j["kernels"][k.kernel] = entry;
    }
    for (const auto& r : res.summary.ratios) j["ratios"][r.numerator + "/" + r.denominator] = r.ratio;
    write_json_file(dir / "summary.json", j);
    artifacts.push_back("analysis/summary.json");
    for (auto kind : cfg_.mcmc.kernels) {
      const ChainTrace t = load_trace(mcmc_dir() / (trace_stem(kind, 0, 'a') + ".trace"));
      write_file(dir / (kernel_name(kind) + ".best_energy.csv"), best_energy_csv(best_energy_trace(t)));
      artifacts.push_back("analysis/" + kernel_name(kind) + ".best_energy.csv");
    }
    return artifacts;
  }

  // ---- MNIST-style feature selection ----

  LabeledDataset load_mnist(const std::string& images, const std::string& labels) const {
    RawDataset raw = load_idx(images, labels);
    if (cfg_.mnist.downsample > 1) raw = downsample(raw, cfg_.mnist.downsample);
    return binarize(raw, static_cast<std::uint8_t>(cfg_.mnist.threshold), 10);
  }
  LabeledDataset load_mnist_train() const { return load_mnist(cfg_.mnist.train_images, cfg_.mnist.train_labels); }
  LabeledDataset load_mnist_test() const { return load_mnist(cfg_.mnist.test_images, cfg_.mnist.test_labels); }

  /// Best-so-far energy traces and masked-classifier accuracies for the
  /// configured kernels, plus Random-K and Linear-Terms-K baselines.
  Json run_mnist() {
    if (cfg_.instance.source != "mnist-qubo") throw ConfigurationError("mnist command needs instance.source = mnist-qubo");
    if (cfg_.mnist.stop_steps.empty()) throw ConfigurationError("mnist.stop_steps must not be empty");
    stage_made();
    Json key = config_to_json(cfg_);
    key.erase("workers");
    key.erase("out");
    key["up"] = hashes_["made"] + hashes_["instance"];
    Json report;
    run_stage("mnist", hex64(fnv1a(key.dump())), [&] {
      const QuboInstance inst = load_instance(instance_path());
      const auto train = load_mnist_train();
      const auto test = load_mnist_test();
      const std::size_t k = cfg_.mnist.k;
      const std::uint64_t steps = *std::max_element(cfg_.mnist.stop_steps.begin(), cfg_.mnist.stop_steps.end());
      std::vector<std::string> artifacts;
      std::vector<KernelConfig> kernels;
      for (auto kind : cfg_.mcmc.kernels) kernels.push_back(kernel_config(kind));
      const std::size_t R = cfg_.mnist.runs, S = cfg_.mnist.stop_steps.size();
      // [kernel][run] best energy at each stop step and accuracy of the best mask found so far
      std::vector<std::vector<std::vector<double>>> best_e(kernels.size(), std::vector<std::vector<double>>(R)),
          acc(kernels.size(), std::vector<std::vector<double>>(R));
      std::vector<std::size_t> violations(kernels.size() * R, 0);
      for (const auto& kc : kernels)
        for (std::size_t r = 0; r < R; ++r)
          artifacts.push_back("mnist/" + kernel_name(kc.kind) + "/r" + std::to_string(r) + ".best_energy.csv");
      parallel_for(kernels.size() * R, cfg_.workers, [&](std::size_t job) {
        const auto& kc = kernels[job / R];
        const std::size_t r = job % R;
        Rng init_rng(derive_seed(cfg_.seed, 60, r), 0);
        const SpinConfig init = random_feasible_config(inst.n(), k, init_rng);
        RunOptions opt;
        opt.record_transitions = false;
        opt.check_every = cfg_.mcmc.check_every;
        const ChainTrace t = run_chain(inst, k, kc, steps, init, chain_seed(kc.kind, r, 2), 1, opt);
        violations[job] = t.feasibility_violations;
        const auto best = best_energy_trace(t);
        write_file(mnist_dir() / kernel_name(kc.kind) / ("r" + std::to_string(r) + ".best_energy.csv"),
                   best_energy_csv(best));
        for (auto stop : cfg_.mnist.stop_steps) {
          std::size_t arg = 0;
          for (std::size_t s = 1; s <= stop; ++s)
            if (t.energies[s] < t.energies[arg]) arg = s;
          best_e[job / R][r].push_back(best[stop]);
          acc[job / R][r].push_back(
              evaluate_mask(train, test, FeatureMask::from_config(t.configs.at(arg)), cfg_.mnist.classifier));
        }
      });
      auto mean_std = [](const std::vector<double>& v) {
        double m = 0, ss = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        for (double x : v) ss += (x - m) * (x - m);
        return Json{{"mean", m}, {"std", v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0}};
      };
      for (std::size_t ki = 0; ki < kernels.size(); ++ki) {
        Json kj;
        for (std::size_t s = 0; s < S; ++s) {
          std::vector<double> e, a;
          for (std::size_t r = 0; r < R; ++r) {
            e.push_back(best_e[ki][r][s]);
            a.push_back(acc[ki][r][s]);
          }
          kj[std::to_string(cfg_.mnist.stop_steps[s])] = {
              {"best_energy", e}, {"accuracy", a}, {"accuracy_summary", mean_std(a)}};
        }
        report["kernels"][kernel_name(kernels[ki].kind)] = kj;
      }
      std::vector<double> random_acc;
      for (std::size_t r = 0; r < cfg_.mnist.random_masks; ++r) {
        Rng rng(derive_seed(cfg_.seed, 61, r), 0);
        random_acc.push_back(evaluate_mask(train, test, random_k_mask(inst.n(), k, rng), cfg_.mnist.classifier));
      }
      if (!random_acc.empty()) report["baselines"]["random"] = {{"accuracy", random_acc}, {"summary", mean_std(random_acc)}};
      const MiTable mi = build_mi_table(train, cfg_.workers);
      const FeatureMask lin = linear_terms_mask(mi, k);
      report["baselines"]["linear_terms"] = {{"accuracy", evaluate_mask(train, test, lin, cfg_.mnist.classifier)},
                                             {"mask", lin.indices()}};
      write_file(mnist_dir() / "linear_terms.mask", lin.to_text());
      report["feasibility_violations"] = std::accumulate(violations.begin(), violations.end(), std::size_t{0});
      report["n"] = inst.n();
      report["k"] = k;
      report["edges"] = inst.edges().size();
      report["stop_steps"] = cfg_.mnist.stop_steps;
      write_json_file(mnist_dir() / "report.json", report);
      artifacts.push_back("mnist/report.json");
      artifacts.push_back("mnist/linear_terms.mask");
      return artifacts;
    });
    write_manifest();
    return read_json_file(mnist_dir() / "report.json");
  }

  void write_manifest() const { write_json_file(out_ / "manifest.json", manifest_.to_json()); }

 private:
  static std::string MnistSpec::*member_for(const char* f) {
    const std::string s(f);
    if (s == "train_images") return &MnistSpec::train_images;
    if (s == "train_labels") return &MnistSpec::train_labels;
    if (s == "test_images") return &MnistSpec::test_images;
    return &MnistSpec::test_labels;
  }

  static std::vector<Block> all_blocks(const PartitionPair& pp) {
    std::vector<Block> blocks(pp.p1.begin(), pp.p1.end());
    blocks.insert(blocks.end(), pp.p2.begin(), pp.p2.end());
    return blocks;
  }

  void say(const std::string& msg) const {
    if (log_) *log_ << msg << '\n';
  }

  std::string skip(const std::string& name) {
    manifest_.stages.push_back({name, "", "skipped", 0.0, {}});
    hashes_[name] = "skipped";
    return hashes_[name];
  }

  fs::path stamp_path(const std::string& name) const { return out_ / "stamps" / (name + ".json"); }

  std::string run_stage(const std::string& name, const std::string& hash,
                        const std::function<std::vector<std::string>()>& body) {
    StageRecord rec{name, hash, "ran", 0.0, {}};
    if (!force_ && fs::exists(stamp_path(name))) {
      try {
        const Json stamp = read_json_file(stamp_path(name));
        if (stamp.at("hash").get<std::string>() == hash) {
          bool complete = true;
          for (const auto& a : stamp.at("artifacts")) complete = complete && fs::exists(out_ / a.get<std::string>());
          if (complete) {
            rec.status = "cached";
            rec.artifacts = stamp.at("artifacts").get<std::vector<std::string>>();
          }
        }
      } catch (const std::exception&) {
        // unreadable stamp: rerun the stage
      }
    }
    if (rec.status != "cached") {
      fs::remove(stamp_path(name));
      say("stage " + name + " ...");
      const auto t0 = std::chrono::steady_clock::now();
      rec.artifacts = body();
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      write_json_file(stamp_path(name), Json{{"hash", hash}, {"artifacts", rec.artifacts}});
    } else {
      say("stage " + name + " cached");
    }
    manifest_.stages.push_back(rec);
    hashes_[name] = hash;
    return hash;
  }

  ExperimentConfig cfg_;
  bool force_;
  std::ostream* log_;
  fs::path out_;
  RunManifest manifest_;
  std::map<std::string, std::string> hashes_;
  std::optional<std::pair<std::shared_ptr<const PartitionPair>, ModelMap>> surrogate_;
};

/// Runs the pipeline once per value of N (axis "n") or block size (axis
/// "block_size") and returns a wide CSV: value, tau_mean/tau_std per kernel,
/// then the rate ratios of the block-surrogate kernel over each baseline.
inline std::string run_sweep(const ExperimentConfig& base, const std::string& axis, bool force = false,
                             std::ostream* log = nullptr) {
  if (axis != "n" && axis != "block_size") throw ConfigurationError("sweep axis must be n or block_size");
  if (base.sweep.values.empty()) throw ConfigurationError("sweep.values must not be empty");
  std::ostringstream os;
  os.precision(17);
  os << (axis == "n" ? "N" : "block_size");
  const bool ratios = base.mcmc.kernels.size() > 1 &&
                      std::count(base.mcmc.kernels.begin(), base.mcmc.kernels.end(), KernelKind::BlockSurrogate);
  for (auto k : base.mcmc.kernels) os << ",tau_mean_" << kernel_name(k) << ",tau_std_" << kernel_name(k);
  if (ratios)
    for (auto k : base.mcmc.kernels)
      if (k != KernelKind::BlockSurrogate) os << ",ratio_block-surrogate_over_" << kernel_name(k);
  os << '\n';
  for (auto v : base.sweep.values) {
    ExperimentConfig cfg = base;
    if (axis == "n") cfg.instance.n = v;
    else cfg.partition.block_size = v;
    if (axis == "n" && base.k == 0) cfg.k = 0;
    cfg.out = (fs::path(base.out) / (axis + "_" + std::to_string(v))).string();
    Pipeline p(cfg, force, log);
    p.run();
    const Json s = read_json_file(p.analysis_dir() / "summary.json");
    os << v;
    for (auto k : base.mcmc.kernels) {
      const Json& e = s.at("kernels").at(kernel_name(k));
      os << ',' << e.at("tau_mean").get<double>() << ',';
      if (!e.at("tau_std").is_null()) os << e.at("tau_std").get<double>();
    }
    if (ratios)
      for (auto k : base.mcmc.kernels)
        if (k != KernelKind::BlockSurrogate) {
          // a zero denominator is stored as null
          const Json& ratio = s.at("ratios").at("block-surrogate/" + kernel_name(k));
          os << ',';
          if (ratio.is_null()) os << "inf";
          else os << ratio.get<double>();
        }
    os << '\n';
  }
  const std::string csv = os.str();
  write_file(fs::path(base.out) / ("sweep_" + axis + ".csv"), csv);
  return csv;
}

}  // namespace dcqmc
