#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "unicon/config.hpp"

namespace unicon {

struct LogRecord {
  int step = 0;
  double loss = 0;  // mean over the steps since the previous record
  double grad_norm = 0;
  double elapsed_ms = 0;
};

nlohmann::json to_json(const LogRecord& record);
std::vector<LogRecord> read_log(const std::filesystem::path& path);

struct TrainOptions {
  int steps = 0;
  int batch = 16;
  int log_every = 10;
  std::uint64_t seed = 0;
  ConditionKind condition = ConditionKind::sr4x;
  AdamWConfig optim;
};

/// Batch seeds of training step `step` (1-based), drawn from the train range.
std::vector<std::uint64_t> step_seeds(std::uint64_t seed, int step, int batch);

/// AdamW on the trainable parameters of `model`. Writes one JSON line per
/// logged step to `log` (every log_every steps and the last step). Returns
/// the loss of every step.
std::vector<double> train_loop(EpsModel& model, const TrainOptions& options, std::ostream* log,
                               std::ostream* progress = nullptr);

/// The base backbone before training, from the pretrain seed.
Backbone initial_base(const RunConfig& config);
/// Trains the bare backbone on the task's images and labels and writes it to
/// config.base_path() with pretrain_log.jsonl beside it.
Backbone pretrain_base(const RunConfig& config, std::ostream* progress = nullptr);
/// Loads config.base_path(), pretraining it first when the file is missing.
Backbone obtain_base(const RunConfig& config, std::ostream* progress = nullptr);

/// The adapted model, or a copy of `base` when the config has no adapter.
/// Adapter weights are initialized from the run seed.
std::unique_ptr<EpsModel> build_model(const RunConfig& config, const Backbone& base);
/// Builds the architecture of `config` and loads `checkpoint` into it.
std::unique_ptr<EpsModel> load_model(const RunConfig& config, const std::filesystem::path& checkpoint);

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::vector<double> losses;
};

/// Writes config.ini, train_log.jsonl and model.uckp into output_dir.
TrainResult run_train(const RunConfig& config, std::ostream* progress = nullptr);

/// Generated images in [-1, 1] for the batch's conditions and labels.
using Generator = std::function<Tensor(const TrainBatch& batch)>;

Generator sampler_generator(const EpsModel& model, const RunConfig& config);

struct MetricStats {
  double mean = 0;
  double stddev = 0;  // population
};

struct EvalSummary {
  std::string condition;
  int count = 0;
  MetricStats consistency;  // PSNR for sr4x and blur-sr4x, SSIM for edge
  MetricStats psnr;         // generated vs ground truth
  MetricStats ssim;
  std::string config_hash;
};

nlohmann::json to_json(const EvalSummary& summary);

inline constexpr int kEvalChunk = 16;

/// Scores `generate` on the test scenes with the given seeds, in chunks of
/// kEvalChunk.
EvalSummary evaluate(const Generator& generate, ConditionKind condition, std::span<const std::uint64_t> seeds);
/// The first eval_count test seeds.
std::vector<std::uint64_t> test_seeds(int count);
/// Writes eval.json and eval.csv into `out_dir`.
EvalSummary run_eval(const RunConfig& config, const EpsModel& model, const std::filesystem::path& out_dir);

struct SampleRequest {
  std::optional<std::uint64_t> test_seed;          // condition and label of this test scene
  std::optional<std::filesystem::path> condition;  // or a condition PGM
  int label = 0;                                   // used with a condition PGM
  int count = 1;
  int steps = 24;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
};

/// Writes sample_<i>.pgm and manifest.json into out_dir; returns the manifest path.
std::filesystem::path run_sample(const RunConfig& config, const EpsModel& model, const SampleRequest& request);

}  // namespace unicon
