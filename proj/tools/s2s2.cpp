#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "s2s2/s2s2.hpp"

namespace fs = std::filesystem;
using namespace s2s2;

namespace {

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed_override;
  unsigned threads = 1;
};

ExperimentConfig load_or_default(const Globals& g) {
  if (g.config.empty()) {
    ExperimentConfig c;
    validate_experiment(c);
    return c;
  }
  return load_experiment(g.config);
}

void print_epoch(std::size_t epoch, const LossRecord& m) {
  std::fprintf(stderr, "epoch %3zu  seg %.4f  sc_enc %.4f  sc_dec %.4f  total %.4f\n", epoch, m.seg, m.sc_enc,
               m.sc_dec, m.total);
}

int cmd_verify(const Globals& g, bool inject_skip_sqrt_n) {
  VerifyOptions opt;
  opt.seed = g.seed_override.value_or(1);
  opt.inject_skip_sqrt_n = inject_skip_sqrt_n;
  const fs::path out = g.out.empty() ? fs::path("runs/verify") : fs::path(g.out);
  ensure_dir(out);
  const nlohmann::json config = {{"seed", opt.seed},
                                 {"stacking", {{"sigma", 1.0}, {"n", {1, 4, 16, 64}}, {"trials", opt.stacking_trials}}},
                                 {"bayes_instances", opt.bayes_instances},
                                 {"bound_instances", opt.bound_instances},
                                 {"inject_skip_sqrt_n", opt.inject_skip_sqrt_n}};
  RunRecorder rec(out, "verify", config, {{"verify", opt.seed}});
  VerifyReport report;
  rec.run([&](RunRecorder& r) {
    report = run_verify(opt);
    r.write("verify.csv", report.csv());
    r.manifest().extra["verdict"] = report.all_pass() ? "pass" : "fail";
  });
  std::cout << report.csv();
  for (const auto& row : report.rows) {
    if (!row.pass) {
      std::cerr << "verify: FAILED " << row.check << (row.n ? " n=" + std::to_string(*row.n) : "")
                << " (max_error " << csv_number(row.max_error) << ")\n";
    }
  }
  return report.all_pass() ? kExitOk : kExitVerifyFailed;
}

int cmd_gen(const Globals& g) {
  ExperimentConfig cfg = load_or_default(g);
  if (g.seed_override) cfg.dataset.seed = *g.seed_override;
  const fs::path out = g.out.empty() ? cfg.resolved_dataset_dir() : fs::path(g.out);
  ensure_dir(out);
  RunRecorder rec(out, "gen", {{"dataset", dataset_to_json(cfg.dataset)}}, seeds_json(cfg.dataset.seed, std::nullopt));
  rec.run([&](RunRecorder& r) {
    const Dataset ds = gen_dataset(cfg.dataset);
    write_dataset(ds, out, [&r](const fs::path& rel, const std::string& bytes) { r.add(rel, bytes); });
  });
  std::cerr << "gen: wrote " << cfg.dataset.num_train << " stacks of " << cfg.dataset.stack_size << " + "
            << cfg.dataset.num_test_source << " source + " << cfg.dataset.num_test_target << " target test images to "
            << out.string() << "\n";
  return kExitOk;
}

int cmd_train(const Globals& g, const std::string& mode_override, const std::string& dataset_dir) {
  ExperimentConfig cfg = load_or_default(g);
  if (!mode_override.empty()) {
    const auto m = parse_mode(mode_override);
    if (!m) throw ConfigError("--mode: unknown mode \"" + mode_override + "\"");
    cfg.train.mode = *m;
    cfg.train.validate();
  }
  if (g.seed_override) cfg.train.seed = *g.seed_override;
  const fs::path out = g.out.empty() ? fs::path(cfg.output_dir) / ("train_" + cell_name(cfg.train.mode, cfg.train.seed))
                                     : fs::path(g.out);
  const Dataset ds = obtain_dataset(cfg.dataset, dataset_dir.empty() ? cfg.resolved_dataset_dir() : fs::path(dataset_dir),
                                    &std::cerr);
  ensure_dir(out);
  RunRecorder rec(out, "train", experiment_to_json(cfg), seeds_json(cfg.dataset.seed, cfg.train.seed));
  rec.run([&](RunRecorder& r) {
    const auto start = std::chrono::steady_clock::now();
    const TrainArtifacts a = train_and_record(cfg.train, ds, r, print_epoch);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto samples = split_samples(ds, "train");
    const MetricsRecord m = evaluate(a.result.params, std::span<const LabeledImage>(samples));
    r.manifest().extra["train_seconds"] = seconds;
    r.manifest().extra["forward_calls"] = a.result.forward_calls;
    r.manifest().extra["train_in_domain_mean_dice"] = m.mean_dice;
    r.manifest().extra["train_in_domain_dice_threshold"] = 0.85;
    std::fprintf(stderr, "train: %s seed %llu  %.1f s  in-domain train Dice %.4f\n",
                 std::string(mode_name(cfg.train.mode)).c_str(), static_cast<unsigned long long>(cfg.train.seed),
                 seconds, m.mean_dice);
  });
  std::cout << (out / "checkpoint.s2s2").string() << "\n";
  return kExitOk;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& split, const std::string& dataset_dir) {
  const ExperimentConfig cfg = load_or_default(g);
  const std::string ck_bytes = read_file_bytes(checkpoint);
  const LoadedCheckpoint ck = decode_checkpoint(ck_bytes);
  const fs::path out = g.out.empty() ? fs::path(checkpoint).parent_path() : fs::path(g.out);
  const Dataset ds = obtain_dataset(cfg.dataset, dataset_dir.empty() ? cfg.resolved_dataset_dir() : fs::path(dataset_dir),
                                    &std::cerr);
  if (ck.params.config.num_classes != ds.config.mask.num_classes)
    throw ConfigError("eval: checkpoint has " + std::to_string(ck.params.config.num_classes) +
                      " classes, dataset has " + std::to_string(ds.config.mask.num_classes));
  const auto samples = split_samples(ds, split);
  ensure_dir(out);
  const nlohmann::json config = {
      {"checkpoint_sha256", sha256_hex(ck_bytes)}, {"split", split}, {"dataset", dataset_to_json(cfg.dataset)}};
  RunRecorder rec(out, "eval", config, seeds_json(cfg.dataset.seed, std::nullopt), "manifest_eval_" + split + ".json");
  rec.run([&](RunRecorder& r) {
    const MetricsRecord m = evaluate(ck.params, std::span<const LabeledImage>(samples));
    const std::string mode = ck.meta.value("mode", std::string("unknown"));
    const std::uint64_t seed = ck.meta.value("seed", std::uint64_t{0});
    r.write("metrics_" + split + ".csv", metrics_csv_header() + metrics_csv_rows(r.run_id(), mode, seed, split, m));
    std::fprintf(stderr, "eval: %s on %s  mean Dice %.4f  IoU %.4f\n", mode.c_str(), split.c_str(), m.mean_dice,
                 m.mean_iou);
  });
  std::cout << (out / ("metrics_" + split + ".csv")).string() << "\n";
  return kExitOk;
}

int cmd_compare(const Globals& g, bool resume) {
  ExperimentConfig cfg = load_or_default(g);
  if (g.seed_override) cfg.dataset.seed = *g.seed_override;
  if (cfg.modes.size() < 2) throw ConfigError("compare: config must list >= 2 modes");
  if (cfg.seeds.size() < 3) throw ConfigError("compare: config must list >= 3 seeds");
  const fs::path out = g.out.empty() ? fs::path(cfg.output_dir) : fs::path(g.out);
  ensure_dir(out);
  nlohmann::json seeds = seeds_json(cfg.dataset.seed, std::nullopt);
  seeds["train"] = cfg.seeds;
  RunRecorder rec(out, "compare", experiment_to_json(cfg), seeds);
  CompareReport report;
  rec.run([&](RunRecorder& r) {
    CompareOptions opt;
    opt.threads = g.threads;
    opt.resume = resume;
    opt.log = &std::cerr;
    report = run_compare(cfg, r, opt);
  });
  std::cout << report.ladder_text();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic-stacking segmentation toolkit: verify, gen, train, eval, compare"};
  app.require_subcommand(1);
  app.fallthrough();  // inherited by subcommands: global flags may follow the verb
  Globals g;
  std::uint64_t seed_override = 0;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--out", g.out, "Output directory");
  auto* seed_opt = app.add_option("--seed-override", seed_override, "Override the command's root seed");
  app.add_option("--threads", g.threads, "Worker threads for compare cells")->check(CLI::Range(1u, 256u));

  bool inject = false;
  auto* verify = app.add_subcommand("verify", "Monte Carlo and closed-form checks of the stacking theory");
  verify->add_flag("--inject-skip-sqrt-n", inject, "Fault injection for the negative control")->group("");

  auto* gen = app.add_subcommand("gen", "Write the synthetic dataset");

  std::string mode, dataset_dir;
  auto* train_cmd = app.add_subcommand("train", "Train one model and write a checkpoint");
  train_cmd->add_option("--mode", mode, "Override train.mode");
  train_cmd->add_option("--dataset", dataset_dir, "Dataset directory (default: from config)");

  std::string checkpoint, split;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--split", split, "train | test_source | test_target")
      ->required()
      ->check(CLI::IsMember({"train", "test_source", "test_target"}));
  eval->add_option("--dataset", dataset_dir, "Dataset directory (default: from config)");

  bool resume = false;
  auto* compare = app.add_subcommand("compare", "Train and evaluate every (mode, seed) cell");
  compare->add_flag("--resume", resume, "Reuse finished cells whose config digest and files match");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  if (seed_opt->count()) g.seed_override = seed_override;

  return guarded([&]() -> int {
    if (*verify) return cmd_verify(g, inject);
    if (*gen) return cmd_gen(g);
    if (*train_cmd) return cmd_train(g, mode, dataset_dir);
    if (*eval) return cmd_eval(g, checkpoint, split, dataset_dir);
    return cmd_compare(g, resume);
  });
}
