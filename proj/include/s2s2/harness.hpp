#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "s2s2/checkpoint.hpp"
#include "s2s2/config.hpp"
#include "s2s2/dataset_io.hpp"
#include "s2s2/errors.hpp"
#include "s2s2/metrics.hpp"
#include "s2s2/stacklab.hpp"
#include "s2s2/trainer.hpp"

#ifndef S2S2_VERSION
#define S2S2_VERSION "0.1.0"
#endif

namespace s2s2 {

inline constexpr std::string_view kCodeVersion = S2S2_VERSION;

// ---------------------------------------------------------------- utilities

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256: EVP_Digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

inline std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string csv_number(const std::optional<double>& v) { return v ? csv_number(*v) : std::string(); }

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  // create_directories succeeds on an existing read-only dir; probe writability.
  const fs::path probe = dir / ".s2s2-write-probe";
  {
    std::ofstream p(probe);
    if (!p) throw IoError("directory not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

// ---------------------------------------------------------------- manifest

struct OutputFile {
  std::string path;  // relative to the manifest's directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

/// Reproducibility record written next to every command's outputs.
struct RunManifest {
  std::string run_id;
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json seeds = nlohmann::json::object();
  std::string started, finished;
  std::string status = "running";  // complete | aborted
  std::string error;
  std::vector<OutputFile> outputs;
  nlohmann::json extra = nlohmann::json::object();  // timings and other non-reproducible notes

  /// Digest of the (path, sha256) list; equal across reruns iff all outputs are.
  std::string outputs_digest() const {
    std::string acc;
    for (const auto& o : outputs) acc += o.path + " " + o.sha256 + "\n";
    return sha256_hex(acc);
  }

  nlohmann::json to_json() const {
    nlohmann::json outs = nlohmann::json::array();
    for (const auto& o : outputs) outs.push_back({{"path", o.path}, {"sha256", o.sha256}, {"bytes", o.bytes}});
    nlohmann::json j = {{"run_id", run_id},
                        {"command", command},
                        {"status", status},
                        {"code_version", std::string(kCodeVersion)},
                        {"rng", Rng::algorithm},
                        {"config", config},
                        {"seeds", seeds},
                        {"started", started},
                        {"finished", finished},
                        {"outputs", outs},
                        {"outputs_digest", outputs_digest()},
                        {"extra", extra}};
    if (!error.empty()) j["error"] = error;
    return j;
  }
};

inline std::string make_run_id(std::string_view command, const nlohmann::json& config) {
  return std::string(command) + "-" + sha256_hex(config.dump()).substr(0, 12);
}

/// Collects outputs under one directory and writes manifest.json last.
class RunRecorder {
 public:
  RunRecorder(fs::path dir, std::string command, nlohmann::json config, nlohmann::json seeds,
              std::string manifest_name = "manifest.json")
      : dir_(std::move(dir)), manifest_name_(std::move(manifest_name)) {
    m_.command = std::move(command);
    m_.run_id = make_run_id(m_.command, config);
    m_.config = std::move(config);
    m_.seeds = std::move(seeds);
    m_.started = utc_timestamp();
  }

  const fs::path& dir() const { return dir_; }
  const std::string& run_id() const { return m_.run_id; }
  RunManifest& manifest() { return m_; }

  void write(const fs::path& rel, const std::string& bytes) {
    write_file_bytes(dir_ / rel, bytes);
    add(rel, bytes);
  }

  /// Registers a file that was written by someone else.
  void add(const fs::path& rel, const std::string& bytes) {
    std::lock_guard lock(mu_);
    m_.outputs.push_back({rel.generic_string(), sha256_hex(bytes), bytes.size()});
  }

  void add_existing(const fs::path& rel) { add(rel, read_file_bytes(dir_ / rel)); }

  void finish(const std::string& status, const std::string& error = {}) {
    m_.status = status;
    m_.error = error;
    m_.finished = utc_timestamp();
    const fs::path tmp = dir_ / (manifest_name_ + ".tmp");
    write_file_bytes(tmp, m_.to_json().dump(2) + "\n");
    std::error_code ec;
    fs::rename(tmp, dir_ / manifest_name_, ec);
    if (ec) throw IoError("cannot finalize manifest in " + dir_.string() + ": " + ec.message());
  }

  /// Runs `body`; on failure marks the manifest aborted and rethrows.
  template <class F>
  void run(F&& body) {
    try {
      body(*this);
    } catch (const std::exception& e) {
      try {
        finish("aborted", e.what());
      } catch (...) {
      }
      throw;
    }
    finish("complete");
  }

 private:
  fs::path dir_;
  std::string manifest_name_;
  RunManifest m_;
  std::mutex mu_;
};

// ---------------------------------------------------------------- CSV

inline std::string loss_history_csv(std::span<const LossRecord> history) {
  std::string out = "step,epoch,seg,sc_enc,sc_dec,total\n";
  for (const auto& r : history) {
    out += std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + csv_number(r.seg) + "," +
           csv_number(r.sc_enc) + "," + csv_number(r.sc_dec) + "," + csv_number(r.total) + "\n";
  }
  return out;
}

inline std::string metrics_csv_header() { return "run_id,mode,seed,split,class,dice,iou,precision,recall,hausdorff\n"; }

/// One row per foreground class plus a "mean" row.
inline std::string metrics_csv_rows(const std::string& run_id, const std::string& mode, std::uint64_t seed,
                                    const std::string& split, const MetricsRecord& m) {
  const std::string prefix = run_id + "," + mode + "," + std::to_string(seed) + "," + split + ",";
  std::string out;
  auto opt = [](std::size_t n, double v) { return n ? csv_number(v) : std::string(); };
  for (const auto& [c, s] : m.per_class) {
    out += prefix + std::to_string(c) + "," + opt(s.n_dice, s.dice) + "," + opt(s.n_iou, s.iou) + "," +
           opt(s.n_precision, s.precision) + "," + opt(s.n_recall, s.recall) + "," + csv_number(s.hausdorff) + "\n";
  }
  out += prefix + "mean," + csv_number(m.mean_dice) + "," + csv_number(m.mean_iou) + "," +
         csv_number(m.mean_precision) + "," + csv_number(m.mean_recall) + "," + csv_number(m.mean_hausdorff) + "\n";
  return out;
}

// ---------------------------------------------------------------- verify

struct VerifyOptions {
  std::uint64_t seed = 1;
  std::size_t stacking_trials = 10000;
  std::size_t bayes_instances = 100;
  std::size_t bound_instances = 1000;
  bool inject_skip_sqrt_n = false;  // negative control
};

struct VerifyRow {
  std::string check;
  std::optional<std::size_t> n;
  std::optional<double> sigma;
  std::size_t trials = 0;
  std::optional<double> empirical_std, predicted_std, ratio;
  double max_error = 0.0;
  bool pass = false;
};

struct VerifyReport {
  std::vector<VerifyRow> rows;

  bool all_pass() const {
    for (const auto& r : rows)
      if (!r.pass) return false;
    return !rows.empty();
  }

  std::string csv() const {
    std::string out = "check,n,sigma,trials,empirical_std,predicted_std,ratio,max_error,pass\n";
    for (const auto& r : rows) {
      out += r.check + "," + (r.n ? std::to_string(*r.n) : "") + "," + csv_number(r.sigma) + "," +
             std::to_string(r.trials) + "," + csv_number(r.empirical_std) + "," + csv_number(r.predicted_std) + "," +
             csv_number(r.ratio) + "," + csv_number(r.max_error) + "," + (r.pass ? "true" : "false") + "\n";
    }
    return out;
  }
};

inline double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

inline VerifyReport run_verify(const VerifyOptions& opt) {
  using namespace stacklab;
  VerifyReport report;
  const Rng root(opt.seed, Stream::verify);

  const std::size_t ns[] = {1, 4, 16, 64};
  for (const auto& row : stacking_law_mc(1.0, ns, opt.stacking_trials, root.substream(1), opt.inject_skip_sqrt_n)) {
    VerifyRow v;
    v.check = "stacking_law";
    v.n = row.n;
    v.sigma = row.sigma;
    v.trials = row.trials;
    v.empirical_std = row.empirical_std;
    v.predicted_std = row.predicted_std;
    v.ratio = row.ratio;
    v.max_error = std::abs(row.ratio - 1.0);
    v.pass = v.max_error <= 0.05;
    report.rows.push_back(v);
  }

  {
    Rng rng = root.substream(2);
    VerifyRow v;
    v.check = "bayes_sequential";
    v.trials = opt.bayes_instances;
    for (std::size_t t = 0; t < opt.bayes_instances; ++t) {
      const std::size_t dim = 8, n = 1 + rng.below(20);
      GaussianPrior prior;
      prior.sigma = rng.uniform(0.2, 3.0);
      prior.sigma0 = rng.uniform(0.2, 3.0);
      for (std::size_t d = 0; d < dim; ++d) prior.t0.push_back(rng.normal(0.0, 2.0));
      std::vector<Array> obs(n, Array(dim));
      for (auto& o : obs)
        for (std::size_t d = 0; d < dim; ++d) o[d] = rng.normal(prior.t0[d] + rng.normal(), prior.sigma);
      const Posterior batch = bayes_update(prior, obs);
      const Posterior seq = bayes_update_sequential(prior, obs);
      v.max_error = std::max(v.max_error, relative_error(batch.variance, seq.variance));
      for (std::size_t d = 0; d < dim; ++d) v.max_error = std::max(v.max_error, relative_error(batch.mean[d], seq.mean[d]));
    }
    // Hand case: sigma = sigma0 = 1, t0 = 0, observations {2, 4}.
    const std::vector<Array> hand_obs{{2.0}, {4.0}};
    const Posterior hand = bayes_update(GaussianPrior{{0.0}, 1.0, 1.0}, hand_obs);
    const bool hand_ok = std::abs(hand.mean[0] - 2.0) <= 1e-12 && std::abs(hand.variance - 1.0 / 3.0) <= 1e-12;
    v.pass = v.max_error <= 1e-9 && hand_ok;
    report.rows.push_back(v);
  }

  {
    Rng rng = root.substream(3);
    VerifyRow v;
    v.check = "bound_l1";
    v.trials = opt.bound_instances;
    v.max_error = -std::numeric_limits<double>::infinity();  // max(lhs - rhs)
    bool all_hold = true;
    const std::size_t sizes[] = {2, 4, 8};
    for (std::size_t t = 0; t < opt.bound_instances; ++t) {
      const std::size_t dim = 8, n = sizes[t % 3];
      GaussianPrior prior;
      prior.sigma = rng.uniform(0.1, 3.0);
      prior.sigma0 = rng.uniform(0.1, 3.0);
      Array truth(dim);
      for (auto& x : truth) x = rng.normal();
      for (std::size_t d = 0; d < dim; ++d) prior.t0.push_back(truth[d] + rng.normal(0.0, prior.sigma0));
      FeatureStack stack;
      for (std::size_t k = 0; k < n; ++k) {
        Array a(dim);
        for (std::size_t d = 0; d < dim; ++d) a[d] = truth[d] + rng.normal(0.0, prior.sigma);
        stack.items.push_back(std::move(a));
      }
      const BoundResult b = bound_check(stack, prior, static_cast<std::size_t>(rng.below(n)));
      v.max_error = std::max(v.max_error, b.lhs - b.rhs);
      all_hold = all_hold && b.holds;
    }
    // n = 1, sigma0 = sigma: the bound is an equality.
    bool equality_ok = true;
    for (int t = 0; t < 10; ++t) {
      const double s = rng.uniform(0.1, 3.0);
      GaussianPrior prior{{rng.normal(), rng.normal(), rng.normal()}, s, s};
      FeatureStack stack{{{rng.normal(), rng.normal(), rng.normal()}}};
      const BoundResult b = bound_check(stack, prior, 0);
      equality_ok = equality_ok && std::abs(b.lhs - b.rhs) <= 1e-12;
    }
    v.pass = all_hold && equality_ok;
    report.rows.push_back(v);
  }
  return report;
}

// ---------------------------------------------------------------- train / eval

inline nlohmann::json seeds_json(std::uint64_t dataset_seed, std::optional<std::uint64_t> train_seed) {
  nlohmann::json j = {{"dataset", dataset_seed},
                      {"streams",
                       {{"init", static_cast<std::uint64_t>(Stream::init)},
                        {"data", static_cast<std::uint64_t>(Stream::data)},
                        {"sampling", static_cast<std::uint64_t>(Stream::sampling)},
                        {"shuffle", static_cast<std::uint64_t>(Stream::shuffle)},
                        {"verify", static_cast<std::uint64_t>(Stream::verify)}}}};
  if (train_seed) j["train"] = *train_seed;
  return j;
}

inline nlohmann::json checkpoint_meta(const TrainConfig& t, std::uint64_t dataset_seed) {
  return {{"mode", std::string(mode_name(t.mode))}, {"seed", t.seed}, {"train", train_to_json(t)},
          {"dataset_seed", dataset_seed}};
}

struct TrainArtifacts {
  TrainResult<float> result;
  std::string checkpoint_bytes;
};

/// Trains and writes checkpoint.s2s2 and losses.csv through `rec`.
inline TrainArtifacts train_and_record(const TrainConfig& t, const Dataset& ds, RunRecorder& rec,
                                       const EpochCallback& on_epoch = {}) {
  TrainArtifacts a{train<float>(t, ds.train, on_epoch), {}};
  a.checkpoint_bytes = encode_checkpoint(a.result.params, checkpoint_meta(t, ds.config.seed));
  rec.write("checkpoint.s2s2", a.checkpoint_bytes);
  rec.write("losses.csv", loss_history_csv(a.result.history));
  return a;
}

inline std::vector<LabeledImage> split_samples(const Dataset& ds, const std::string& split) {
  if (split == "test_source") return ds.test_source;
  if (split == "test_target") return ds.test_target;
  if (split == "train") {
    std::vector<LabeledImage> out;
    for (const auto& s : ds.train) out.push_back({s.id, s.images.front(), s.mask});
    return out;
  }
  throw ConfigError("split: expected train, test_source or test_target, got \"" + split + "\"");
}

/// Dataset for a config: read from disk when present (and matching), else
/// regenerated in memory.
inline Dataset obtain_dataset(const DatasetConfig& cfg, const fs::path& dir, std::ostream* log = nullptr) {
  if (fs::exists(dir / "meta.json")) {
    Dataset ds = read_dataset(dir);
    if (dataset_to_json(ds.config) != dataset_to_json(cfg))
      throw ConfigError("dataset at " + dir.string() + " was generated from a different dataset config");
    return ds;
  }
  if (log) *log << "dataset: " << dir.string() << " not found, generating in memory\n";
  return gen_dataset(cfg);
}

// ---------------------------------------------------------------- compare

struct SplitSummary {
  double mean_dice = 0, mean_iou = 0, mean_precision = 0, mean_recall = 0;
  std::optional<double> mean_hausdorff;
};

inline SplitSummary split_summary(const MetricsRecord& m) {
  return {m.mean_dice, m.mean_iou, m.mean_precision, m.mean_recall, m.mean_hausdorff};
}

inline nlohmann::json split_summary_json(const SplitSummary& s) {
  nlohmann::json j = {{"mean_dice", s.mean_dice},
                      {"mean_iou", s.mean_iou},
                      {"mean_precision", s.mean_precision},
                      {"mean_recall", s.mean_recall}};
  j["mean_hausdorff"] = s.mean_hausdorff ? nlohmann::json(*s.mean_hausdorff) : nlohmann::json(nullptr);
  return j;
}

inline SplitSummary split_summary_from_json(const nlohmann::json& j) {
  SplitSummary s{j.at("mean_dice"), j.at("mean_iou"), j.at("mean_precision"), j.at("mean_recall"), std::nullopt};
  if (!j.at("mean_hausdorff").is_null()) s.mean_hausdorff = j.at("mean_hausdorff").get<double>();
  return s;
}

inline constexpr const char* kCompareSplits[] = {"test_source", "test_target"};

struct CellResult {
  Mode mode = Mode::baseline;
  std::uint64_t seed = 0;
  SplitSummary source, target;
  double final_loss = 0.0;
  std::size_t forward_calls = 0;
  std::size_t steps = 0;
  bool reused = false;
  double seconds = 0.0;

  const SplitSummary& split(const std::string& name) const { return name == "test_source" ? source : target; }
};

struct SummaryRow {
  Mode mode;
  std::string split;
  std::size_t n_seeds = 0;
  double dice_mean = 0, dice_std = 0, iou_mean = 0, iou_std = 0;
  std::optional<double> hausdorff_mean, hausdorff_std;
  std::optional<double> delta_dice_vs_baseline;
};

struct CompareOptions {
  unsigned threads = 1;
  bool resume = false;  // reuse finished cells whose config digest matches
  std::ostream* log = nullptr;
};

struct CompareReport {
  std::vector<CellResult> cells;  // config order: modes outer, seeds inner
  std::vector<SummaryRow> summary;

  const CellResult* cell(Mode m, std::uint64_t seed) const {
    for (const auto& c : cells)
      if (c.mode == m && c.seed == seed) return &c;
    return nullptr;
  }
  const SummaryRow* row(Mode m, const std::string& split) const {
    for (const auto& r : summary)
      if (r.mode == m && r.split == split) return &r;
    return nullptr;
  }

  std::string compare_csv() const {
    std::string out = "mode,seed,split,mean_dice,mean_iou,mean_precision,mean_recall,mean_hausdorff,final_loss\n";
    for (const auto& c : cells) {
      for (const char* split : kCompareSplits) {
        const SplitSummary& s = c.split(split);
        out += std::string(mode_name(c.mode)) + "," + std::to_string(c.seed) + "," + split + "," +
               csv_number(s.mean_dice) + "," + csv_number(s.mean_iou) + "," + csv_number(s.mean_precision) + "," +
               csv_number(s.mean_recall) + "," + csv_number(s.mean_hausdorff) + "," + csv_number(c.final_loss) + "\n";
      }
    }
    return out;
  }

  std::string summary_csv() const {
    std::string out =
        "mode,split,n_seeds,dice_mean,dice_std,delta_dice_vs_baseline,iou_mean,iou_std,hausdorff_mean,hausdorff_std\n";
    for (const auto& r : summary) {
      out += std::string(mode_name(r.mode)) + "," + r.split + "," + std::to_string(r.n_seeds) + "," +
             csv_number(r.dice_mean) + "," + csv_number(r.dice_std) + "," + csv_number(r.delta_dice_vs_baseline) +
             "," + csv_number(r.iou_mean) + "," + csv_number(r.iou_std) + "," + csv_number(r.hausdorff_mean) + "," +
             csv_number(r.hausdorff_std) + "\n";
    }
    return out;
  }

  /// Human-readable ladder: in-domain and out-of-domain Dice per mode, then
  /// per-seed out-of-domain detail.
  std::string ladder_text() const {
    std::ostringstream o;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-14s %22s %22s %10s\n", "mode", "in-domain dice", "out-of-domain dice",
                  "ood delta");
    o << buf;
    std::vector<Mode> modes;
    for (const auto& c : cells)
      if (std::find(modes.begin(), modes.end(), c.mode) == modes.end()) modes.push_back(c.mode);
    for (const Mode m : modes) {
      const SummaryRow* src = row(m, "test_source");
      const SummaryRow* tgt = row(m, "test_target");
      const std::string delta = tgt->delta_dice_vs_baseline ? csv_number(*tgt->delta_dice_vs_baseline) : "";
      std::snprintf(buf, sizeof buf, "%-14s %13.4f +- %.4f %13.4f +- %.4f %10s\n", std::string(mode_name(m)).c_str(),
                    src->dice_mean, src->dice_std, tgt->dice_mean, tgt->dice_std, delta.c_str());
      o << buf;
    }
    o << "\nper-seed out-of-domain dice\n";
    for (const Mode m : modes) {
      o << "  " << mode_name(m) << ":";
      for (const auto& c : cells)
        if (c.mode == m) {
          std::snprintf(buf, sizeof buf, " s%llu=%.4f", static_cast<unsigned long long>(c.seed), c.target.mean_dice);
          o << buf;
        }
      o << "\n";
    }
    return o.str();
  }
};

inline std::vector<SummaryRow> summarize_cells(const std::vector<CellResult>& cells, std::span<const Mode> modes) {
  std::vector<SummaryRow> rows;
  auto mean_std = [](const std::vector<double>& v) {
    double m = 0;
    for (const double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0;
    for (const double x : v) ss += (x - m) * (x - m);
    return std::pair{m, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
  };
  for (const Mode m : modes) {
    for (const char* split : kCompareSplits) {
      std::vector<double> dice, iou, hd;
      for (const auto& c : cells) {
        if (c.mode != m) continue;
        const SplitSummary& s = c.split(split);
        dice.push_back(s.mean_dice);
        iou.push_back(s.mean_iou);
        if (s.mean_hausdorff) hd.push_back(*s.mean_hausdorff);
      }
      if (dice.empty()) continue;
      SummaryRow r{m, split};
      r.n_seeds = dice.size();
      std::tie(r.dice_mean, r.dice_std) = mean_std(dice);
      std::tie(r.iou_mean, r.iou_std) = mean_std(iou);
      if (!hd.empty()) {
        const auto [hm, hs] = mean_std(hd);
        r.hausdorff_mean = hm;
        r.hausdorff_std = hs;
      }
      rows.push_back(r);
    }
  }
  for (auto& r : rows) {
    for (const auto& b : rows)
      if (b.mode == Mode::baseline && b.split == r.split) r.delta_dice_vs_baseline = r.dice_mean - b.dice_mean;
  }
  return rows;
}

inline std::string cell_name(Mode m, std::uint64_t seed) {
  return std::string(mode_name(m)) + "_s" + std::to_string(seed);
}

/// Trains and evaluates one (mode, seed) cell into cells/<name>/, via a
/// temporary directory renamed into place once complete.
inline CellResult run_cell(const ExperimentConfig& cfg, const Dataset& ds, Mode mode, std::uint64_t seed,
                           const fs::path& cells_dir, const std::string& config_digest, bool resume) {
  const std::string name = cell_name(mode, seed);
  const fs::path final_dir = cells_dir / name;
  CellResult res;
  res.mode = mode;
  res.seed = seed;

  if (resume && fs::exists(final_dir / "cell.json")) {
    try {
      const auto j = nlohmann::json::parse(read_file_bytes(final_dir / "cell.json"));
      bool intact = j.at("config_digest") == config_digest;
      for (const auto& f : j.at("files").items())
        intact = intact && fs::exists(final_dir / f.key()) &&
                 sha256_hex(read_file_bytes(final_dir / f.key())) == f.value().get<std::string>();
      if (intact) {
        res.source = split_summary_from_json(j.at("test_source"));
        res.target = split_summary_from_json(j.at("test_target"));
        res.final_loss = j.at("final_loss");
        res.forward_calls = j.at("forward_calls");
        res.steps = j.at("steps");
        res.reused = true;
        return res;
      }
    } catch (const std::exception&) {
      // Unreadable cell: recompute.
    }
  }

  const fs::path tmp_dir = cells_dir / (name + ".partial");
  std::error_code ec;
  fs::remove_all(tmp_dir, ec);
  ensure_dir(tmp_dir);

  TrainConfig t = cfg.train;
  t.mode = mode;
  t.seed = seed;
  const auto start = std::chrono::steady_clock::now();
  TrainResult<float> tr;
  try {
    tr = train<float>(t, ds.train);
  } catch (const RunFailure& e) {
    throw RunFailure("cell (" + std::string(mode_name(mode)) + ", seed " + std::to_string(seed) + "): " + e.what());
  }
  std::map<std::string, std::string> files;
  files["checkpoint.s2s2"] = encode_checkpoint(tr.params, checkpoint_meta(t, ds.config.seed));
  files["losses.csv"] = loss_history_csv(tr.history);
  const std::string run_id = "compare-" + config_digest.substr(0, 12);
  for (const char* split : kCompareSplits) {
    const auto samples = split_samples(ds, split);
    const MetricsRecord m = evaluate(tr.params, std::span<const LabeledImage>(samples));
    (std::string(split) == "test_source" ? res.source : res.target) = split_summary(m);
    files[std::string("metrics_") + split + ".csv"] =
        metrics_csv_header() + metrics_csv_rows(run_id, std::string(mode_name(mode)), seed, split, m);
  }
  res.final_loss = tr.history.empty() ? 0.0 : tr.history.back().total;
  res.forward_calls = tr.forward_calls;
  res.steps = tr.history.size();
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  nlohmann::json digests = nlohmann::json::object();
  for (const auto& [file, bytes] : files) {
    write_file_bytes(tmp_dir / file, bytes);
    digests[file] = sha256_hex(bytes);
  }
  const nlohmann::json cell = {{"mode", std::string(mode_name(mode))},
                               {"seed", seed},
                               {"config_digest", config_digest},
                               {"test_source", split_summary_json(res.source)},
                               {"test_target", split_summary_json(res.target)},
                               {"final_loss", res.final_loss},
                               {"forward_calls", res.forward_calls},
                               {"steps", res.steps},
                               {"files", digests}};
  write_file_bytes(tmp_dir / "cell.json", cell.dump(2) + "\n");
  fs::remove_all(final_dir, ec);
  fs::rename(tmp_dir, final_dir, ec);
  if (ec) throw IoError("cannot register cell " + final_dir.string() + ": " + ec.message());
  return res;
}

/// Full (mode, seed) grid on one generated dataset. Writes cells/, compare.csv,
/// compare_summary.csv and ladder.txt through `rec`.
inline CompareReport run_compare(const ExperimentConfig& cfg, RunRecorder& rec, const CompareOptions& opt = {}) {
  if (cfg.modes.size() < 2) throw ConfigError("compare: config must list >= 2 modes");
  if (cfg.seeds.size() < 3) throw ConfigError("compare: config must list >= 3 seeds");
  const std::string config_digest = sha256_hex(experiment_to_json(cfg).dump());
  const Dataset ds = gen_dataset(cfg.dataset);
  const fs::path cells_dir = rec.dir() / "cells";
  ensure_dir(cells_dir);

  struct Job {
    Mode mode;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const Mode m : cfg.modes)
    for (const std::uint64_t s : cfg.seeds) jobs.push_back({m, s});

  std::vector<std::optional<CellResult>> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::vector<int> error_kind(jobs.size(), 0);
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&]() {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      try {
        results[i] = run_cell(cfg, ds, jobs[i].mode, jobs[i].seed, cells_dir, config_digest, opt.resume);
        if (opt.log) {
          std::lock_guard lock(log_mu);
          const auto& r = *results[i];
          char buf[200];
          std::snprintf(buf, sizeof buf, "compare: %-22s src dice %.4f  tgt dice %.4f  %s\n",
                        cell_name(r.mode, r.seed).c_str(), r.source.mean_dice, r.target.mean_dice,
                        r.reused ? "(reused)" : (std::to_string(static_cast<int>(r.seconds)) + " s").c_str());
          *opt.log << buf << std::flush;
        }
      } catch (const RunFailure& e) {
        errors[i] = e.what();
        error_kind[i] = 5;
      } catch (const IoError& e) {
        errors[i] = e.what();
        error_kind[i] = 3;
      } catch (const std::exception& e) {
        errors[i] = "cell (" + std::string(mode_name(jobs[i].mode)) + ", seed " + std::to_string(jobs[i].seed) +
                    "): " + e.what();
        error_kind[i] = 5;
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(jobs.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  CompareReport report;
  nlohmann::json timings = nlohmann::json::object();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!results[i]) continue;
    const std::string name = cell_name(jobs[i].mode, jobs[i].seed);
    for (const auto& f : nlohmann::json::parse(read_file_bytes(cells_dir / name / "cell.json")).at("files").items())
      rec.add_existing(fs::path("cells") / name / f.key());
    rec.add_existing(fs::path("cells") / name / "cell.json");
    timings[name] = results[i]->reused ? nlohmann::json("reused") : nlohmann::json(results[i]->seconds);
    report.cells.push_back(*results[i]);
  }
  rec.manifest().extra["cell_seconds"] = timings;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (error_kind[i] == 3) throw IoError(errors[i]);
    if (error_kind[i] != 0) throw RunFailure(errors[i]);
  }
  report.summary = summarize_cells(report.cells, cfg.modes);
  rec.write("compare.csv", report.compare_csv());
  rec.write("compare_summary.csv", report.summary_csv());
  rec.write("ladder.txt", report.ladder_text());
  return report;
}

// ---------------------------------------------------------------- exit codes

enum ExitCode : int {
  kExitOk = 0,
  kExitVerifyFailed = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitCorrupt = 4,
  kExitRunFailure = 5,
};

/// Maps the error taxonomy onto process exit codes, printing the message.
template <class F>
int guarded(F&& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const CorruptArtifact& e) {
    err << "corrupt artifact: " << e.what() << "\n";
    return kExitCorrupt;
  } catch (const RunFailure& e) {
    err << "run failure: " << e.what() << "\n";
    return kExitRunFailure;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "run failure: " << e.what() << "\n";
    return kExitRunFailure;
  }
}

}  // namespace s2s2
