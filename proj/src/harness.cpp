#include "unicon/harness.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "unicon/checkpoint.hpp"

namespace unicon {

namespace {

constexpr std::uint64_t kDataStream = 0x64617461;
constexpr std::uint64_t kNoiseStream = 0x6e6f6973;
constexpr std::uint64_t kInitStream = 0x696e6974;
constexpr std::uint64_t kSampleStream = 0x73616d70;
constexpr int kTimesteps = 1000;

const NoiseSchedule& schedule() {
  static const NoiseSchedule sched = build_schedule(kTimesteps);
  return sched;
}

const Shape& image_shape() {
  static const Shape shape{kImageSize, kImageSize, 1};
  return shape;
}

void prepare_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
  const auto probe = dir / ".write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw Error("output directory " + dir.string() + " is not writable");
  }
  std::filesystem::remove(probe, ec);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

MetricStats stats_of(const std::vector<double>& v) {
  MetricStats s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.stddev += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<double>(v.size()));
  return s;
}

nlohmann::json to_json(const MetricStats& s) { return {{"mean", s.mean}, {"stddev", s.stddev}}; }

Tensor item(const Tensor& batch, std::int64_t b) {
  constexpr std::int64_t n = kImageSize * kImageSize;
  Tensor out({kImageSize, kImageSize, 1});
  std::copy_n(batch.data() + b * n, n, out.data());
  return out;
}

}  // namespace

nlohmann::json to_json(const LogRecord& r) {
  return {{"step", r.step}, {"loss", r.loss}, {"grad_norm", r.grad_norm}, {"elapsed_ms", r.elapsed_ms}};
}

std::vector<LogRecord> read_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<LogRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({j.at("step").get<int>(), j.at("loss").get<double>(), j.at("grad_norm").get<double>(),
                   j.at("elapsed_ms").get<double>()});
  }
  return out;
}

std::vector<std::uint64_t> step_seeds(std::uint64_t seed, int step, int batch) {
  CounterRng rng = CounterRng(seed).split(kDataStream).split(static_cast<std::uint64_t>(step));
  std::vector<std::uint64_t> seeds(batch);
  for (auto& s : seeds) s = kTrainSeedBegin + rng.below(kTrainSeedEnd - kTrainSeedBegin);
  return seeds;
}

std::vector<double> train_loop(EpsModel& model, const TrainOptions& options, std::ostream* log,
                               std::ostream* progress) {
  AdamW opt(model, options.optim);
  const CounterRng noise = CounterRng(options.seed).split(kNoiseStream);
  const auto start = std::chrono::steady_clock::now();
  std::vector<double> losses;
  double pending = 0;
  int pending_steps = 0;
  for (int step = 1; step <= options.steps; ++step) {
    const auto seeds = step_seeds(options.seed, step, options.batch);
    const TrainBatch batch = make_batch(seeds, options.condition);
    Tape tape;
    const Tensor loss = diffusion_loss(tape, model, batch, schedule(), noise.split(static_cast<std::uint64_t>(step)));
    const GradientMap grads = backward(tape, loss);
    const double norm = gradient_norm(grads);
    opt.step(grads);
    const double value = loss.at(0);
    if (!std::isfinite(value)) throw Error("training diverged at step " + std::to_string(step));
    losses.push_back(value);
    pending += value;
    ++pending_steps;
    if (step % options.log_every == 0 || step == options.steps) {
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      const LogRecord r{step, pending / pending_steps, norm, ms};
      if (log) *log << to_json(r).dump() << '\n' << std::flush;
      if (progress) *progress << "step " << r.step << " loss " << r.loss << " grad_norm " << r.grad_norm << '\n';
      pending = 0;
      pending_steps = 0;
    }
  }
  return losses;
}

Backbone initial_base(const RunConfig& config) {
  CounterRng rng = CounterRng(config.pretrain_seed).split(kInitStream);
  return make_backbone(config.backbone, rng);
}

Backbone pretrain_base(const RunConfig& config, std::ostream* progress) {
  const auto path = config.base_path();
  if (path.has_parent_path()) prepare_dir(path.parent_path());
  Backbone base = initial_base(config);
  TrainOptions options;
  options.steps = config.pretrain_steps;
  options.batch = config.batch;
  options.log_every = config.log_every;
  options.seed = config.pretrain_seed;
  options.condition = config.condition;
  options.optim = config.optim;
  options.optim.lr = config.pretrain_lr;
  auto log = open_out(path.parent_path() / "pretrain_log.jsonl");
  train_loop(base, options, &log, progress);
  save_checkpoint(path, base);
  return base;
}

Backbone obtain_base(const RunConfig& config, std::ostream* progress) {
  const auto path = config.base_path();
  if (!std::filesystem::exists(path)) return pretrain_base(config, progress);
  Backbone base = initial_base(config);
  load_checkpoint(path, base);
  return base;
}

std::unique_ptr<EpsModel> build_model(const RunConfig& config, const Backbone& base) {
  if (!config.adapter) return std::make_unique<Backbone>(base);
  AdapterConfig cfg = *config.adapter;
  cfg.backbone = base.kind();
  CounterRng rng = CounterRng(config.seed).split(kInitStream);
  return std::make_unique<AdaptedModel>(base, cfg, rng);
}

std::unique_ptr<EpsModel> load_model(const RunConfig& config, const std::filesystem::path& checkpoint) {
  auto model = build_model(config, initial_base(config));
  load_checkpoint(checkpoint, *model);
  return model;
}

TrainResult run_train(const RunConfig& config, std::ostream* progress) {
  config.validate();
  if (!config.adapter) throw ConfigError("train needs an adapter; use pretrain-base for the bare backbone");
  const std::filesystem::path dir = config.output_dir;
  prepare_dir(dir);
  open_out(dir / "config.ini") << to_ini(config);
  const Backbone base = obtain_base(config, progress);
  auto model = build_model(config, base);
  TrainOptions options;
  options.steps = config.steps;
  options.batch = config.batch;
  options.log_every = config.log_every;
  options.seed = config.seed;
  options.condition = config.condition;
  options.optim = config.optim;
  TrainResult result{dir / "model.uckp", dir / "train_log.jsonl", {}};
  auto log = open_out(result.log);
  result.losses = train_loop(*model, options, &log, progress);
  save_checkpoint(result.checkpoint, *model);
  return result;
}

Generator sampler_generator(const EpsModel& model, const RunConfig& config) {
  const int steps = config.sampler_steps;
  const CounterRng rng = CounterRng(config.seed).split(kSampleStream);
  const SamplerOptions options{config.clip_x0};
  return [&model, steps, rng, options](const TrainBatch& batch) {
    const ConditioningInputs cond{{}, batch.labels, batch.cond_image};
    return sample_loop(model, cond, image_shape(), schedule(), steps, rng.split(batch.keys.front()), options);
  };
}

std::vector<std::uint64_t> test_seeds(int count) {
  if (count < 1) throw Error("empty test set");
  if (static_cast<std::uint64_t>(count) > kTestSeedEnd - kTestSeedBegin) throw Error("test set larger than the test range");
  std::vector<std::uint64_t> seeds(count);
  for (int i = 0; i < count; ++i) seeds[i] = kTestSeedBegin + static_cast<std::uint64_t>(i);
  return seeds;
}

EvalSummary evaluate(const Generator& generate, ConditionKind condition, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw Error("evaluate: empty test set");
  std::vector<double> consistency, psnrs, ssims;
  for (std::size_t begin = 0; begin < seeds.size(); begin += kEvalChunk) {
    const auto chunk = seeds.subspan(begin, std::min<std::size_t>(kEvalChunk, seeds.size() - begin));
    const TrainBatch batch = make_batch(chunk, condition);
    const Tensor generated = generate(batch);
    if (generated.shape() != batch.x0.shape()) throw ShapeError("evaluate: generator returned the wrong shape");
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const SamplePair truth = make_sample(chunk[b], condition);
      const Tensor image = to_unit_range(item(generated, static_cast<std::int64_t>(b)));
      const Tensor reference = to_unit_range(truth.x0);
      consistency.push_back(condition_consistency(image, truth.cond, condition));
      psnrs.push_back(psnr(image, reference));
      ssims.push_back(ssim(image, reference));
    }
  }
  EvalSummary s;
  s.condition = std::string(condition_name(condition));
  s.count = static_cast<int>(seeds.size());
  s.consistency = stats_of(consistency);
  s.psnr = stats_of(psnrs);
  s.ssim = stats_of(ssims);
  return s;
}

nlohmann::json to_json(const EvalSummary& s) {
  return {{"condition", s.condition},
          {"count", s.count},
          {"condition_consistency", to_json(s.consistency)},
          {"consistency_metric", s.condition == "edge" ? "ssim" : "psnr"},
          {"psnr", to_json(s.psnr)},
          {"ssim", to_json(s.ssim)},
          {"config_hash", s.config_hash}};
}

EvalSummary run_eval(const RunConfig& config, const EpsModel& model, const std::filesystem::path& out_dir) {
  const auto seeds = test_seeds(config.eval_count);
  EvalSummary s = evaluate(sampler_generator(model, config), config.condition, seeds);
  s.config_hash = config_hash(config);
  prepare_dir(out_dir);
  open_out(out_dir / "eval.json") << to_json(s).dump(2) << '\n';
  auto csv = open_out(out_dir / "eval.csv");
  csv << "metric,mean,stddev\n";
  for (const auto& [name, m] : {std::pair{"condition_consistency", s.consistency}, {"psnr", s.psnr}, {"ssim", s.ssim}}) {
    csv << name << ',' << m.mean << ',' << m.stddev << '\n';
  }
  return s;
}

std::filesystem::path run_sample(const RunConfig& config, const EpsModel& model, const SampleRequest& request) {
  if (request.test_seed.has_value() == request.condition.has_value()) {
    throw Error("sample: give exactly one of a test seed or a condition image");
  }
  if (request.count < 1) throw Error("sample: count must be >= 1");
  if (request.steps < 1 || request.steps > kTimesteps) throw Error("sample: steps must be in [1, 1000]");
  Tensor cond;
  int label = request.label;
  std::string source;
  if (request.test_seed) {
    if (*request.test_seed < kTestSeedBegin || *request.test_seed >= kTestSeedEnd) {
      throw Error("sample: test seed outside [" + std::to_string(kTestSeedBegin) + ", " + std::to_string(kTestSeedEnd) + ")");
    }
    const SamplePair p = make_sample(*request.test_seed, config.condition);
    cond = p.cond;
    label = p.label;
    source = "test_seed:" + std::to_string(*request.test_seed);
  } else {
    cond = read_pgm(*request.condition);
    if (cond.shape() != image_shape()) throw ShapeError("sample: condition image must be 32x32");
    if (label < 0 || label >= kNumClasses) throw Error("sample: label out of range");
    source = request.condition->string();
  }
  const auto B = static_cast<std::int64_t>(request.count);
  constexpr std::int64_t n = kImageSize * kImageSize;
  ConditioningInputs inputs;
  inputs.labels.assign(B, label);
  inputs.cond_image = Tensor({B, kImageSize, kImageSize, 1});
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < n; ++i) inputs.cond_image.data()[b * n + i] = 2.0f * cond.at(i) - 1.0f;
  }
  const CounterRng rng = CounterRng(request.seed).split(kSampleStream);
  const Tensor x = sample_loop(model, inputs, image_shape(), schedule(), request.steps, rng, {config.clip_x0});
  prepare_dir(request.out_dir);
  nlohmann::json manifest = {{"condition", condition_name(config.condition)},
                             {"source", source},
                             {"label", label},
                             {"steps", request.steps},
                             {"seed", request.seed},
                             {"config_hash", config_hash(config)},
                             {"images", nlohmann::json::array()}};
  for (std::int64_t b = 0; b < B; ++b) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03lld.pgm", static_cast<long long>(b));
    write_pgm(request.out_dir / name, to_unit_range(item(x, b)));
    manifest["images"].push_back(name);
  }
  const auto path = request.out_dir / "manifest.json";
  open_out(path) << manifest.dump(2) << '\n';
  return path;
}

}  // namespace unicon
