// Command-line front end: run experiments, corrupt datasets, evaluate
// checkpoints and print kurtosis diagnostics.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rpexlab/harness.hpp"

using namespace rpexlab;

namespace {

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("RPEXLAB_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::stoull(v);
}

ExperimentConfig base_config(const std::string& path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : load_config(path);
  apply_overrides(cfg, overrides);
  return cfg;
}

std::string opt_text(const std::optional<double>& v) { return v ? format_double(*v) : "undefined"; }

void print_kurtosis(const std::string& label, const KurtosisReport& rep) {
  std::cout << label << ":";
  for (const auto& d : rep.per_dim) std::cout << " " << opt_text(d);
  std::cout << " mean=" << opt_text(rep.mean) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rpexlab: robust offline-to-online RL experiments"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress logging");

  std::string config_path;
  std::vector<std::string> overrides;
  std::vector<std::uint64_t> seeds;
  std::string out;

  auto* run = app.add_subcommand("run", "Run offline then online training for every seed");
  run->add_option("--config", config_path, "Config file (key = value lines)");
  run->add_option("--seed", seeds, "Seed; repeatable. Falls back to RPEXLAB_SEED, then run.seeds");
  run->add_option("--override", overrides, "key=value override; repeatable");
  run->add_option("--out", out, "Output directory (overrides run.out_dir)");

  std::string in_path;
  std::string env_id = "pointmass";
  auto* corrupt = app.add_subcommand("corrupt-dataset", "Apply the offline attack to a dataset file");
  corrupt->add_option("--in", in_path, "Clean dataset")->required();
  corrupt->add_option("--spec", overrides, "corruption.* key=value; repeatable");
  corrupt->add_option("--config", config_path, "Config file supplying the corruption section");
  corrupt->add_option("--out", out, "Corrupted dataset output")->required();
  std::string mask_path;
  corrupt->add_option("--mask", mask_path, "Optional corruption mask CSV output");
  std::optional<std::uint64_t> one_seed;
  corrupt->add_option("--seed", one_seed, "Seed (falls back to RPEXLAB_SEED, then 0)");

  std::string ckpt_path;
  int episodes = 10;
  auto* eval = app.add_subcommand("eval", "Greedy evaluation of a checkpoint on the clean environment");
  eval->add_option("--checkpoint", ckpt_path, "Offline or online checkpoint")->required();
  eval->add_option("--env", env_id, "Environment id");
  eval->add_option("--episodes", episodes, "Episodes")->check(CLI::PositiveNumber);
  eval->add_option("--config", config_path, "Config used for training (selection settings)");
  eval->add_option("--override", overrides, "key=value override; repeatable");
  eval->add_option("--seed", one_seed, "Seed (falls back to RPEXLAB_SEED, then 0)");

  std::string dataset_path;
  int samples = 5000;
  auto* diag = app.add_subcommand("diag", "Kurtosis report for a checkpoint and dataset");
  diag->add_option("--checkpoint", ckpt_path, "Offline or online checkpoint")->required();
  diag->add_option("--dataset", dataset_path, "Dataset whose states and targets are used")->required();
  diag->add_option("--samples", samples, "Samples per kurtosis estimate")->check(CLI::Range(4, 100000000));
  diag->add_option("--config", config_path, "Config used for training");
  diag->add_option("--override", overrides, "key=value override; repeatable");
  diag->add_option("--seed", one_seed, "Seed (falls back to RPEXLAB_SEED, then 0)");

  std::size_t dataset_size = 20000;
  double p_opt = 0.5;
  auto* collect = app.add_subcommand("collect-dataset", "Collect a clean dataset with the scripted behavior mix");
  collect->add_option("--env", env_id, "Environment id");
  collect->add_option("--size", dataset_size, "Transitions")->check(CLI::PositiveNumber);
  collect->add_option("--p-opt", p_opt, "Probability of the scripted action")->check(CLI::Range(0.0, 1.0));
  collect->add_option("--out", out, "Dataset output")->required();
  collect->add_option("--seed", one_seed, "Seed (falls back to RPEXLAB_SEED, then 0)");

  auto* keys = app.add_subcommand("config-keys", "Print every config key with its default value");

  CLI11_PARSE(app, argc, argv);

  const LogFn log = quiet ? LogFn{} : LogFn([](const std::string& m) { std::cerr << m << "\n"; });
  try {
    if (*run) {
      ExperimentConfig cfg = base_config(config_path, overrides);
      if (!seeds.empty()) {
        cfg.seeds = seeds;
      } else if (auto s = env_seed()) {
        cfg.seeds = {*s};
      }
      if (!out.empty()) cfg.out_dir = out;
      const EvalReport rep = run_experiment(cfg, log);
      for (const auto& r : rep.seeds) {
        std::cout << "seed " << r.seed << ": "
                  << (r.error.empty() ? "final_return " + opt_text(r.final_return) : "error " + r.error) << "\n";
      }
      std::cout << "mean_final " << opt_text(rep.mean_final) << " std_final " << opt_text(rep.std_final) << "\n";
      return rep.ok() ? 0 : 1;
    }
    const std::uint64_t seed = one_seed ? *one_seed : env_seed().value_or(0);
    if (*collect) {
      const auto env = make_env(env_id);
      write_dataset(collect_dataset(*env, BehaviorSpec{p_opt}, dataset_size, seed), out);
      return 0;
    }
    if (*corrupt) {
      ExperimentConfig cfg = base_config(config_path, {});
      for (const auto& o : overrides) {
        if (o.rfind("corruption.", 0) != 0) throw std::invalid_argument("--spec accepts corruption.* keys only: " + o);
      }
      apply_overrides(cfg, overrides);
      cfg.corruption.validate();
      const TransitionDataset clean = read_dataset(in_path);
      CorruptionSpec spec = cfg.corruption;
      spec.fill_std(clean, cfg.agent.normalize_states);
      Rng rng(seed);
      const CorruptedDataset res = corrupt_dataset(clean, spec, rng);
      write_dataset(res.data, out);
      if (!mask_path.empty()) {
        std::ofstream mf(mask_path);
        mf << mask_csv(res.mask);
      }
      std::cout << validate_corruption(clean, res.data, spec).summary() << "\n";
      return 0;
    }
    if (*eval) {
      const ExperimentConfig cfg = base_config(config_path, overrides);
      const auto env = make_env(env_id);
      const CheckpointPolicy policy(Checkpoint::load(ckpt_path), cfg.agent);
      const EvalPoint pt = evaluate_policy(*env, [&](const State& s) { return policy.act(s); }, episodes, seed);
      std::cout << "episode,return,length,reached_goal\n";
      for (std::size_t k = 0; k < pt.returns.size(); ++k) {
        std::cout << k << "," << format_double(pt.returns[k]) << "," << pt.lengths[k] << ","
                  << (pt.reached_goal[k] ? 1 : 0) << "\n";
      }
      std::cout << "mean_return " << format_double(pt.mean_return) << "\n";
      return 0;
    }
    if (*diag) {
      const ExperimentConfig cfg = base_config(config_path, overrides);
      const Checkpoint ckpt = Checkpoint::load(ckpt_path);
      const OfflineArtifacts art = OfflineArtifacts::from_checkpoint(ckpt, cfg.agent);
      const TransitionDataset ds = read_dataset(dataset_path);
      const StateNormalizer norm(art.norm);
      std::vector<Vec> states;
      for (const auto& t : ds.records) states.push_back(norm.apply(t.s));
      Rng rng(seed);
      if (art.beta.kind == PolicyKind::gaussian) {
        print_kurtosis("policy_kurtosis beta", policy_kurtosis(art.beta.gaussian, states, samples, rng));
      } else {
        print_kurtosis("policy_kurtosis beta", policy_kurtosis(art.beta.deterministic, states, samples, rng));
      }
      if (ckpt.has("theta.net")) {
        const GaussianPolicy theta(ckpt.get_mlp("theta.net"), ckpt.get_vec("theta.log_std"), art.bounds);
        print_kurtosis("policy_kurtosis theta", policy_kurtosis(theta, states, samples, rng));
      }
      ReplayBuffer buf = ReplayBuffer::from_dataset(ds);
      Batch b = sample_uniform(buf, samples, rng);
      normalize_batch(b, norm);
      std::cout << "qtarget_kurtosis " << opt_text(qtarget_kurtosis(b, art.value, cfg.agent.gamma)) << "\n";
      return 0;
    }
    if (*keys) {
      std::cout << echo_config(ExperimentConfig{});
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
