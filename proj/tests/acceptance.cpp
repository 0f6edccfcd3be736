// Acceptance runner: one PASS/FAIL line per criterion.
//
//   acceptance [--criteria 1,2,...] [--bench-dir DIR] [--bench-config FILE] [--threads N]

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "s2s2/diffcore/grad_check.hpp"
#include "s2s2/s2s2.hpp"

namespace fs = std::filesystem;
using namespace s2s2;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

Image random_image(Rng& rng, std::size_t H, std::size_t W) {
  Image img(H, W);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

// ---------------------------------------------------------------- 1-3

void stacking_law(Verdict& v) {
  const auto start = Clock::now();
  const std::size_t ns[] = {1, 4, 16, 64};
  const auto rows = stacklab::stacking_law_mc(1.0, ns, 10000, Rng(1, Stream::verify).substream(1));
  const double secs = seconds_since(start);
  for (const auto& r : rows) {
    v.detail << " n=" << r.n << " ratio=" << csv_number(r.ratio);
    v.require(std::abs(r.ratio - 1.0) <= 0.05, "n=" + std::to_string(r.n) + " outside 5%");
  }
  v.detail << " (" << csv_number(secs) << " s)";
  v.require(secs < 10.0, "runtime >= 10 s");
}

void bayes(Verdict& v) {
  using namespace stacklab;
  Rng rng(2, Stream::verify);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    GaussianPrior prior{{}, rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0)};
    const std::size_t d = 1 + rng.below(8);
    for (std::size_t k = 0; k < d; ++k) prior.t0.push_back(rng.normal(0.0, 2.0));
    std::vector<Array> obs(1 + rng.below(32), Array(d));
    for (auto& o : obs)
      for (auto& x : o) x = rng.normal(1.0, prior.sigma);
    const Posterior a = bayes_update(prior, obs), b = bayes_update_sequential(prior, obs);
    worst = std::max(worst, relative_error(a.variance, b.variance));
    for (std::size_t k = 0; k < d; ++k) worst = std::max(worst, relative_error(a.mean[k], b.mean[k]));
  }
  const Posterior hand = bayes_update(GaussianPrior{{0.0}, 1.0, 1.0}, std::vector<Array>{{2.0}, {4.0}});
  v.detail << " batch-vs-sequential max rel err " << csv_number(worst) << ", hand mean " << csv_number(hand.mean[0])
           << " var " << csv_number(hand.variance);
  v.require(worst <= 1e-9, "batch vs sequential");
  v.require(std::abs(hand.mean[0] - 2.0) <= 1e-12 && std::abs(hand.variance - 1.0 / 3.0) <= 1e-12, "hand case");
}

void bound(Verdict& v) {
  using namespace stacklab;
  Rng rng(3, Stream::verify);
  const std::size_t sizes[] = {2, 4, 8};
  double worst_gap = -INFINITY;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = sizes[t % 3];
    GaussianPrior prior{{}, rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0)};
    Array truth(6);
    for (auto& x : truth) x = rng.normal();
    for (const double x : truth) prior.t0.push_back(x + rng.normal(0.0, prior.sigma0));
    std::vector<Array> items(n, Array(6));
    for (auto& it : items)
      for (std::size_t d = 0; d < 6; ++d) it[d] = truth[d] + rng.normal(0.0, prior.sigma);
    const BoundResult b = bound_check(FeatureStack(items), prior, rng.below(n));
    worst_gap = std::max(worst_gap, b.lhs - b.rhs);
  }
  double worst_eq = 0;
  for (int t = 0; t < 100; ++t) {
    const double s = rng.uniform(0.1, 3.0);
    Array x(6), t0(6);
    for (auto& e : x) e = rng.normal();
    for (auto& e : t0) e = rng.normal();
    const BoundResult b = bound_check(FeatureStack(std::vector<Array>{x}), GaussianPrior{t0, s, s}, 0);
    worst_eq = std::max(worst_eq, std::abs(b.lhs - b.rhs));
  }
  v.detail << " max(lhs - rhs) " << csv_number(worst_gap) << ", equality case max |lhs - rhs| " << csv_number(worst_eq);
  v.require(worst_gap <= 1e-9, "bound violated");
  v.require(worst_eq <= 1e-12, "equality case");
}

// ---------------------------------------------------------------- 4

void gradients(Verdict& v) {
  const auto start = Clock::now();
  Rng rng(4, Stream::verify);
  auto rt = [&](Shape s, bool g = true) { return oracle::random_tensor(rng, std::move(s), 1.0, g); };
  double worst = 0;
  std::string worst_op;
  auto check = [&](const std::string& op, std::vector<Tensor<double>> p, auto&& f) {
    const double e = grad_check([&] { return f(p); }, std::span<Tensor<double>>(p));
    if (e > worst) worst = e, worst_op = op;
    v.require(e < 1e-4, op);
  };
  const auto w3 = rt({3, 4, 4}, false), w2 = rt({2, 4, 4}, false);
  check("conv2d", {rt({2, 4, 4}), rt({3, 2, 3, 3}), rt({3})},
        [&](auto& p) { return sum(mul(conv2d(p[0], p[1], p[2], 1), w3)); });
  check("relu", {rt({2, 4, 4})}, [&](auto& p) { return sum(mul(relu(p[0]), w2)); });
  const auto wp = rt({2, 2, 2}, false), wu = rt({2, 8, 8}, false);
  check("maxpool2x", {rt({2, 4, 4})}, [&](auto& p) { return sum(mul(maxpool2x(p[0]), wp)); });
  check("upsample_nearest2x", {rt({2, 4, 4})}, [&](auto& p) { return sum(mul(upsample_nearest2x(p[0]), wu)); });
  const auto wc = rt({3, 4, 4}, false);
  check("concat_channels", {rt({2, 4, 4}), rt({1, 4, 4})},
        [&](auto& p) { return sum(mul(concat_channels(p[0], p[1]), wc)); });
  check("add/scale/mul/mean", {rt({2, 4, 4}), rt({2, 4, 4})},
        [&](auto& p) { return mean(mul(add(p[0], scale(p[1], -0.3)), p[1])); });
  check("softmax_channels", {rt({3, 4, 4})}, [&](auto& p) { return sum(mul(softmax_channels(p[0]), w3)); });
  const auto mask = oracle::random_mask(rng, 4, 4, 3);
  check("softmax_cross_entropy", {rt({3, 4, 4})}, [&](auto& p) { return softmax_cross_entropy(p[0], mask); });
  check("soft_dice_loss", {rt({3, 4, 4})}, [&](auto& p) { return soft_dice_loss(softmax_channels(p[0]), mask); });
  check("cosine_distance", {rt({6}), rt({6})}, [&](auto& p) { return cosine_distance(p[0], p[1]); });
  check("cosine_distance_map", {rt({4, 3, 3}), rt({4, 3, 3})},
        [&](auto& p) { return mean(cosine_distance_map(p[0], p[1])); });

  auto params = init_params<double>(NetConfig{1, 4, 2, 4}, 4);
  for (auto& t : params.tensors)
    for (auto& x : t.mutable_data()) x += rng.normal(0.0, 0.05);
  const auto net_mask = oracle::random_mask(rng, 16, 16, 4);
  const auto x0 = image_tensor<double>(random_image(rng, 16, 16)), x1 = image_tensor<double>(random_image(rng, 16, 16));
  GradCheckOptions opts;
  opts.max_coords_per_tensor = 40;
  opts.sample_seed = 4;
  const auto r = grad_check_report(
      [&] { return total_loss(forward(params, x0), forward(params, x1), net_mask, 0.4, 0.4).first; },
      std::span<Tensor<double>>(params.tensors), opts);
  v.require(r.max_rel_error < 1e-4, "full loss through depth-2 net");
  const double secs = seconds_since(start);
  v.detail << " worst op " << worst_op << " " << csv_number(worst) << "; full loss " << csv_number(r.max_rel_error)
           << " over " << r.coords_checked << " coords (" << csv_number(secs) << " s)";
  v.require(secs < 60.0, "runtime >= 60 s");
}

// ---------------------------------------------------------------- 5

Dataset small_dataset() {
  DatasetConfig c;
  c.mask.height = c.mask.width = 32;
  c.num_train = 6;
  c.num_test_source = c.num_test_target = 2;
  c.stack_size = 4;
  return gen_dataset(c);
}

void loss_contracts(Verdict& v) {
  Rng rng(5, Stream::verify);
  double lo = 2, hi = 0, ident = 0, neg = 0;
  for (int t = 0; t < 100; ++t) {
    const auto a = oracle::random_tensor(rng, {8, 4, 4}, 1.0, false), b = oracle::random_tensor(rng, {8, 4, 4}, 1.0, false);
    const double d = consistency_loss(a, b).item();
    lo = std::min(lo, d);
    hi = std::max(hi, d);
    ident = std::max(ident, std::abs(consistency_loss(a, a).item()));
    neg = std::max(neg, std::abs(consistency_loss(a, scale(a, -1.0)).item() - 2.0));
  }
  v.detail << " D range [" << csv_number(lo) << ", " << csv_number(hi) << "], |D(a,a)| " << csv_number(ident)
           << ", |D(a,-a) - 2| " << csv_number(neg);
  v.require(lo >= 0 && hi <= 2, "range");
  v.require(ident <= 1e-6 && neg <= 1e-6, "identical/negated");

  const Dataset ds = small_dataset();
  double worst_identity = 0;
  for (const Mode m : kAllModes) {
    TrainConfig t;
    t.mode = m;
    t.epochs = 2;
    t.batch_size = 4;
    t.alpha_dec = 0.3;
    t.net = NetConfig{1, 4, 2, 4};
    const auto r = train<float>(t, ds.train);
    for (const auto& rec : r.history)
      worst_identity = std::max(worst_identity, std::abs(rec.total - (rec.seg + t.effective_alpha_enc() * rec.sc_enc +
                                                                      t.effective_alpha_dec() * rec.sc_dec)));
    const std::size_t per_stack = t.paired() ? 2 : 1;
    const std::size_t expected = per_stack * ds.train.size() * static_cast<std::size_t>(t.epochs);
    if (t.use_synthetic()) v.detail << "; " << mode_name(m) << " " << r.forward_calls << " forwards";
    v.require(r.forward_calls == expected, std::string(mode_name(m)) + " forward count");
  }
  v.detail << "; max LossRecord identity error " << csv_number(worst_identity);
  v.require(worst_identity <= 1e-6, "LossRecord identity");
}

// ---------------------------------------------------------------- 6

void metric_oracles(Verdict& v) {
  Rng rng(6, Stream::verify);
  double worst = 0, worst_identity = 0;
  for (int t = 0; t < 100; ++t) {
    const auto p = oracle::random_mask(rng, 8, 8, 4), g = oracle::random_mask(rng, 8, 8, 4);
    for (int c = 0; c < 4; ++c) {
      const auto k = oracle::count(p, g, c);
      const ClassScores s = class_metrics(p, g, c);
      auto cmp = [&](const std::optional<double>& got, double num, double den) {
        if (den > 0) worst = std::max(worst, got ? std::abs(*got - num / den) : INFINITY);
        else if (got) worst = INFINITY;
      };
      cmp(s.dice, 2 * k.tp, 2 * k.tp + k.fp + k.fn);
      cmp(s.iou, k.tp, k.tp + k.fp + k.fn);
      cmp(s.precision, k.tp, k.tp + k.fp);
      cmp(s.recall, k.tp, k.tp + k.fn);
      if (s.dice && s.iou) worst_identity = std::max(worst_identity, std::abs(*s.dice - 2 * *s.iou / (1 + *s.iou)));
    }
  }
  int hd_mismatch = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t H = 16 + rng.below(49), W = 16 + rng.below(49);
    SegmentationMask a(H, W, 2), b(H, W, 2);
    const auto na = 1 + rng.below(200), nb = 1 + rng.below(200);
    for (std::uint64_t i = 0; i < na; ++i) a.labels[rng.below(H * W)] = 1;
    for (std::uint64_t i = 0; i < nb; ++i) b.labels[rng.below(H * W)] = 1;
    std::vector<oracle::Point> pa, pb;
    for (std::size_t i = 0; i < H * W; ++i) {
      if (a.labels[i]) pa.emplace_back(static_cast<int>(i / W), static_cast<int>(i % W));
      if (b.labels[i]) pb.emplace_back(static_cast<int>(i / W), static_cast<int>(i % W));
    }
    if (*hausdorff(a, b, 1) != oracle::hausdorff(pa, pb)) ++hd_mismatch;
  }
  v.detail << " counting max err " << csv_number(worst) << ", dice/iou identity " << csv_number(worst_identity)
           << ", hausdorff mismatches " << hd_mismatch << "/100";
  v.require(worst <= 1e-9, "pixel counting");
  v.require(worst_identity <= 1e-9, "dice/iou identity");
  v.require(hd_mismatch == 0, "hausdorff");
}

// ---------------------------------------------------------------- 7

void baseline_equivalence(Verdict& v) {
  const Dataset ds = small_dataset();
  TrainConfig t;
  t.mode = Mode::baseline;
  t.epochs = 3;
  t.batch_size = 4;
  t.alpha_enc = 0.0;
  t.net = NetConfig{1, 8, 2, 4};
  t.seed = 11;

  NetParams<float> params = init_params<float>(t.net, t.seed);
  Adam<float> opt(AdamConfig{t.learning_rate});
  Rng shuffle(t.seed, Stream::shuffle);
  std::vector<double> ref;
  for (int e = 0; e < t.epochs; ++e) {
    const auto order = epoch_order(ds.train.size(), shuffle);
    for (std::size_t s = 0; s < order.size(); s += t.batch_size) {
      const std::size_t end = std::min(order.size(), s + t.batch_size);
      params.zero_grad();
      double acc = 0;
      for (std::size_t i = s; i < end; ++i) {
        const auto& sample = ds.train[order[i]];
        const auto loss = seg_loss(forward(params, image_tensor<float>(sample.images[0])).logits, sample.mask);
        backward(loss, 1.0f / static_cast<float>(end - s));
        acc += loss.item();
      }
      ref.push_back(acc / static_cast<double>(end - s));
      opt.step(params.tensors);
    }
  }
  const auto r = train<float>(t, ds.train);
  bool same_traj = r.history.size() == ref.size();
  for (std::size_t i = 0; same_traj && i < ref.size(); ++i) same_traj = r.history[i].total == ref[i];
  const std::string a = encode_checkpoint(r.params), b = encode_checkpoint(params);
  v.detail << " " << ref.size() << " steps, checkpoint sha256 " << sha256_hex(a).substr(0, 16) << " vs "
           << sha256_hex(b).substr(0, 16);
  v.require(same_traj, "loss trajectory");
  v.require(a == b, "checkpoint bytes");
}

// ---------------------------------------------------------------- 8

void benchmark(Verdict& v, const fs::path& dir, const std::string& config_path, unsigned threads) {
  ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_experiment(config_path);
  cfg.output_dir = dir.string();
  ensure_dir(dir);
  RunRecorder rec(dir, "compare", experiment_to_json(cfg), seeds_json(cfg.dataset.seed, std::nullopt));
  CompareReport rep;
  const auto start = Clock::now();
  rec.run([&](RunRecorder& r) {
    CompareOptions opt;
    opt.threads = threads;
    opt.resume = true;
    opt.log = &std::cerr;
    rep = run_compare(cfg, r, opt);
  });
  std::cerr << rep.ladder_text();
  const SummaryRow* bs = rep.row(Mode::baseline, "test_source");
  const SummaryRow* bt = rep.row(Mode::baseline, "test_target");
  const SummaryRow* es = rep.row(Mode::synth_enc, "test_source");
  const SummaryRow* et = rep.row(Mode::synth_enc, "test_target");
  const SummaryRow* so = rep.row(Mode::synth_only, "test_target");
  if (!bs || !bt || !es || !et || !so) {
    v.require(false, "ladder must include baseline, synth_only and synth_enc");
    return;
  }
  v.detail << " ood: baseline " << csv_number(bt->dice_mean) << ", synth_only " << csv_number(so->dice_mean)
           << ", synth_enc " << csv_number(et->dice_mean) << "; in-domain: baseline " << csv_number(bs->dice_mean)
           << ", synth_enc " << csv_number(es->dice_mean) << " (" << csv_number(seconds_since(start)) << " s)";
  v.require(et->dice_mean >= bt->dice_mean + 0.02, "(a) synth_enc ood >= baseline + 0.02");
  v.require(es->dice_mean >= bs->dice_mean - 0.01, "(b) synth_enc in-domain >= baseline - 0.01");
  if (so->dice_mean < bt->dice_mean) {
    std::ostringstream seeds;
    for (const auto s : cfg.seeds)
      seeds << " s" << s << ": synth_only " << csv_number(rep.cell(Mode::synth_only, s)->target.mean_dice)
            << " vs baseline " << csv_number(rep.cell(Mode::baseline, s)->target.mean_dice) << ";";
    v.require(false, "synth_only ood >= baseline; per seed" + seeds.str());
  }
}

// ---------------------------------------------------------------- 9

void reproducibility(Verdict& v) {
  const fs::path root = fs::temp_directory_path() / "s2s2_acceptance_repro";
  fs::remove_all(root);
  ExperimentConfig cfg;
  cfg.dataset.mask.height = cfg.dataset.mask.width = 32;
  cfg.dataset.num_train = 4;
  cfg.dataset.num_test_source = cfg.dataset.num_test_target = 2;
  cfg.dataset.stack_size = 3;
  cfg.train.epochs = 1;
  cfg.train.net.base_channels = 4;
  cfg.modes = {Mode::baseline, Mode::synth_enc};
  cfg.output_dir = (root / "unused").string();
  validate_experiment(cfg);

  const std::vector<std::pair<std::string, std::function<void(RunRecorder&)>>> commands = {
      {"verify", [](RunRecorder& r) { r.write("verify.csv", run_verify(VerifyOptions{}).csv()); }},
      {"gen",
       [&](RunRecorder& r) {
         write_dataset(gen_dataset(cfg.dataset), r.dir(), [&r](const fs::path& p, const std::string& b) { r.add(p, b); });
       }},
      {"train",
       [&](RunRecorder& r) {
         const Dataset ds = gen_dataset(cfg.dataset);
         const auto a = train_and_record(cfg.train, ds, r);
         const auto samples = split_samples(ds, "test_target");
         const auto m = evaluate(a.result.params, std::span<const LabeledImage>(samples));
         r.write("metrics_test_target.csv", metrics_csv_header() + metrics_csv_rows(r.run_id(), "synth_enc", 1,
                                                                                       "test_target", m));
       }},
      {"compare", [&](RunRecorder& r) { run_compare(cfg, r); }},
  };
  for (const auto& [name, body] : commands) {
    std::string digests[2];
    for (int k = 0; k < 2; ++k) {
      const fs::path dir = root / (name + std::to_string(k));
      ensure_dir(dir);
      RunRecorder rec(dir, name, experiment_to_json(cfg), {});
      rec.run(body);
      digests[k] = rec.manifest().outputs_digest();
    }
    v.detail << " " << name << " " << digests[0].substr(0, 12) << (digests[0] == digests[1] ? "==" : "!=")
             << digests[1].substr(0, 12) << ";";
    v.require(digests[0] == digests[1], name + " digests differ");
  }
  fs::remove_all(root);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::vector<int> criteria{1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::string bench_dir = "runs/acceptance_benchmark", bench_config;
  unsigned threads = 1;
  app.add_option("--criteria", criteria, "Criteria to run")->delimiter(',')->check(CLI::Range(1, 9));
  app.add_option("--bench-dir", bench_dir, "Output (and resume) directory for criterion 8");
  app.add_option("--bench-config", bench_config, "Experiment config for criterion 8 (default: built-in)");
  app.add_option("--threads", threads, "Worker threads for criterion 8");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<void(Verdict&)>>> all = {
      {"stacking law", stacking_law},
      {"bayesian update", bayes},
      {"bound", bound},
      {"gradient correctness", gradients},
      {"loss contracts", loss_contracts},
      {"metric oracles", metric_oracles},
      {"baseline equivalence", baseline_equivalence},
      {"synthetic benchmark direction", [&](Verdict& v) { benchmark(v, bench_dir, bench_config, threads); }},
      {"reproducibility", reproducibility},
  };
  bool ok = true;
  for (const int c : std::set<int>(criteria.begin(), criteria.end())) {
    Verdict v;
    try {
      all[static_cast<std::size_t>(c - 1)].second(v);
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    std::printf("criterion %d %-30s %s%s\n", c, all[static_cast<std::size_t>(c - 1)].first, v.pass ? "PASS" : "FAIL",
                v.detail.str().c_str());
    std::fflush(stdout);
    ok = ok && v.pass;
  }
  return ok ? 0 : 1;
}
