#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>

#include "unicon/checkpoint.hpp"
#include "unicon/harness.hpp"
#include "unicon/profiler.hpp"

using namespace unicon;

namespace {

// Flags that override config keys, in the order they are applied.
const std::vector<std::pair<std::string, std::string>> kConfigFlags = {
    {"backbone", "model.backbone"},
    {"adapter", "model.adapter"},
    {"seed", "run.seed"},
    {"steps", "run.steps"},
    {"batch", "run.batch"},
    {"log-every", "run.log_every"},
    {"output-dir", "run.output_dir"},
    {"base-checkpoint", "run.base_checkpoint"},
    {"connector", "model.connector"},
    {"keep-cross-attention", "model.keep_cross_attention"},
    {"controller-sees-input", "model.controller_sees_input"},
    {"drop-base-decoder", "model.drop_base_decoder"},
    {"condition", "task.condition"},
    {"lr", "optim.lr"},
    {"beta1", "optim.beta1"},
    {"beta2", "optim.beta2"},
    {"eps", "optim.eps"},
    {"weight-decay", "optim.weight_decay"},
    {"sampler-steps", "sample.sampler_steps"},
    {"eval-count", "sample.eval_count"},
    {"clip-x0", "sample.clip_x0"},
    {"pretrain-steps", "pretrain.steps"},
    {"pretrain-seed", "pretrain.seed"},
    {"pretrain-lr", "pretrain.lr"},
};

struct ConfigArgs {
  std::string path;
  std::map<std::string, std::string> values;

  void add_to(CLI::App& cmd, const std::vector<std::string>& only = {}) {
    cmd.add_option("-c,--config", path, "Run config file")->check(CLI::ExistingFile);
    for (const auto& [flag, key] : kConfigFlags) {
      if (!only.empty() && std::find(only.begin(), only.end(), flag) == only.end()) continue;
      cmd.add_option("--" + flag, values[flag], "Overrides " + key);
    }
  }

  RunConfig resolve(const CLI::App& cmd) const {
    RunConfig c = path.empty() ? RunConfig{} : load_config(path);
    for (const auto& [flag, key] : kConfigFlags) {
      if (values.contains(flag) && cmd.count("--" + flag) > 0) set_config_value(c, key, values.at(flag));
    }
    c.validate();
    return c;
  }
};

struct ProfileArgs {
  int repeat = 20;
  bool timing = false;
  std::string format = "table";
  std::string json_path;
  std::string csv_path;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--repeat", repeat, "Timed rounds")->check(CLI::PositiveNumber);
    cmd.add_flag("--timing", timing, "Measure wall-clock forward/backward time");
    cmd.add_option("--format", format, "Stdout format")->check(CLI::IsMember({"table", "json", "csv"}));
    cmd.add_option("--json", json_path, "Also write JSON here");
    cmd.add_option("--csv", csv_path, "Also write CSV here");
  }
};

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

ProfileSpec profile_spec(const RunConfig& c, const ProfileArgs& args) {
  ProfileSpec spec;
  spec.backbone = c.backbone;
  spec.adapter = c.adapter;
  spec.batch = c.batch;
  spec.repeat = args.repeat;
  spec.seed = c.seed;
  spec.timing = args.timing;
  return spec;
}

std::string spec_name(const RunConfig& c) {
  if (!c.adapter) return "base";
  std::string name = adapter_label(*c.adapter);
  if (c.adapter->connector != ConnectorKind::zero_ft) name += ":" + std::string(connector_name(c.adapter->connector));
  return name;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UniCon and ControlNet-style adapters on tiny diffusion backbones"};
  app.require_subcommand(1);

  ConfigArgs train_args;
  auto* train = app.add_subcommand("train", "Train an adapter on a frozen base");
  train_args.add_to(*train);

  ConfigArgs pretrain_args;
  auto* pretrain = app.add_subcommand("pretrain-base", "Train the bare backbone and cache it");
  pretrain_args.add_to(*pretrain);

  const std::vector<std::string> model_flags = {"backbone", "adapter", "connector", "keep-cross-attention",
                                                "controller-sees-input", "drop-base-decoder", "batch", "seed"};
  ConfigArgs profile_args;
  ProfileArgs profile_opts;
  auto* profile = app.add_subcommand("profile", "Memory and FLOPs of one training round");
  profile_args.add_to(*profile, model_flags);
  profile_opts.add_to(*profile);

  ConfigArgs compare_args;
  ProfileArgs compare_opts;
  std::vector<std::string> compare_specs;
  auto* compare = app.add_subcommand("compare", "Profile several adapters; ratios against the first");
  compare_args.add_to(*compare, {"backbone", "batch", "seed"});
  compare_opts.add_to(*compare);
  compare->add_option("specs", compare_specs, "Adapter labels such as unicon-full or controlnet-full:zero-mlp, or none")
      ->required();

  ConfigArgs sample_args;
  std::string sample_checkpoint, sample_out, sample_condition;
  std::uint64_t sample_test_seed = 0;
  int sample_label = 0, sample_count = 1, sample_steps = 0;
  std::uint64_t sample_seed = 0;
  auto* sample = app.add_subcommand("sample", "Generate images from a checkpoint");
  sample_args.add_to(*sample);
  sample->add_option("--checkpoint", sample_checkpoint, "Defaults to <output_dir>/model.uckp");
  auto* test_seed_opt = sample->add_option("--test-seed", sample_test_seed, "Condition and label of this test scene");
  auto* cond_opt = sample->add_option("--condition-image", sample_condition, "Condition PGM")->check(CLI::ExistingFile);
  test_seed_opt->excludes(cond_opt);
  sample->add_option("--label", sample_label, "Class label with --condition-image");
  sample->add_option("--count", sample_count, "Images to draw")->check(CLI::PositiveNumber);
  auto* steps_opt = sample->add_option("--sample-steps", sample_steps, "Sampler steps (default sample.sampler_steps)");
  auto* seed_opt = sample->add_option("--sample-seed", sample_seed, "Sampler seed (default run.seed)");
  sample->add_option("--out", sample_out, "Output directory")->required();

  ConfigArgs eval_args;
  std::string eval_checkpoint, eval_out;
  auto* eval = app.add_subcommand("eval", "Condition consistency and fidelity on the test scenes");
  eval_args.add_to(*eval);
  eval->add_option("--checkpoint", eval_checkpoint, "Defaults to <output_dir>/model.uckp");
  eval->add_option("--out", eval_out, "Output directory (default output_dir)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const RunConfig c = train_args.resolve(*train);
      const TrainResult r = run_train(c, &std::cerr);
      std::cout << r.checkpoint.string() << '\n';
    } else if (*pretrain) {
      const RunConfig c = pretrain_args.resolve(*pretrain);
      pretrain_base(c, &std::cerr);
      std::cout << c.base_path().string() << '\n';
    } else if (*profile) {
      const RunConfig c = profile_args.resolve(*profile);
      const CostReport report = measure_round(profile_spec(c, profile_opts));
      const std::string name = spec_name(c);
      if (!profile_opts.json_path.empty()) write_file(profile_opts.json_path, to_json(report).dump(2) + "\n");
      if (!profile_opts.csv_path.empty()) write_file(profile_opts.csv_path, report_csv(name, report));
      if (profile_opts.format == "json") std::cout << to_json(report).dump(2) << '\n';
      else if (profile_opts.format == "csv") std::cout << report_csv(name, report);
      else std::cout << name << '\n' << report_table(report);
    } else if (*compare) {
      if (compare_specs.size() < 2) throw Error("compare needs at least two specs");
      const RunConfig base = compare_args.resolve(*compare);
      std::vector<NamedReport> reports;
      for (const std::string& s : compare_specs) {
        RunConfig c = base;
        const auto colon = s.find(':');
        set_config_value(c, "model.adapter", s.substr(0, colon));
        if (colon != std::string::npos) set_config_value(c, "model.connector", s.substr(colon + 1));
        c.validate();
        reports.emplace_back(s, measure_round(profile_spec(c, compare_opts)));
      }
      const Comparison cmp = compare_reports(std::move(reports));
      if (!compare_opts.json_path.empty()) write_file(compare_opts.json_path, to_json(cmp).dump(2) + "\n");
      if (!compare_opts.csv_path.empty()) write_file(compare_opts.csv_path, comparison_csv(cmp));
      if (compare_opts.format == "json") std::cout << to_json(cmp).dump(2) << '\n';
      else if (compare_opts.format == "csv") std::cout << comparison_csv(cmp);
      else std::cout << comparison_table(cmp);
    } else if (*sample) {
      const RunConfig c = sample_args.resolve(*sample);
      const auto ckpt = sample_checkpoint.empty() ? std::filesystem::path(c.output_dir) / "model.uckp"
                                                  : std::filesystem::path(sample_checkpoint);
      const auto model = load_model(c, ckpt);
      SampleRequest req;
      if (*test_seed_opt) req.test_seed = sample_test_seed;
      if (*cond_opt) req.condition = sample_condition;
      req.label = sample_label;
      req.count = sample_count;
      req.steps = *steps_opt ? sample_steps : c.sampler_steps;
      req.seed = *seed_opt ? sample_seed : c.seed;
      req.out_dir = sample_out;
      std::cout << run_sample(c, *model, req).string() << '\n';
    } else if (*eval) {
      const RunConfig c = eval_args.resolve(*eval);
      const auto ckpt = eval_checkpoint.empty() ? std::filesystem::path(c.output_dir) / "model.uckp"
                                                : std::filesystem::path(eval_checkpoint);
      const auto model = load_model(c, ckpt);
      const EvalSummary s = run_eval(c, *model, std::filesystem::path(eval_out.empty() ? c.output_dir : eval_out));
      std::cout << to_json(s).dump(2) << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
