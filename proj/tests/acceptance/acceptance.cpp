// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion;
// exit status is nonzero when a hard criterion fails.
//
//   acceptance [--only N]... [--work DIR] [--prepare-base]
//
// Criteria 5 and 6 share a pre-trained base cached under DIR/base.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "adapter_fixtures.hpp"
#include "fd_cases.hpp"
#include "oracles/cost_sheet.hpp"
#include "oracles/crc32.hpp"
#include "unicon/checkpoint.hpp"
#include "unicon/harness.hpp"
#include "unicon/profiler.hpp"

using namespace unicon;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::filesystem::path g_work;

// Shared base for the training criteria: default pre-training of the DiT.
RunConfig shared_run(const std::string& name) {
  RunConfig c;
  c.output_dir = (g_work / name).string();
  c.base_checkpoint = (g_work / "base" / "base.uckp").string();
  return c;
}

Backbone shared_base() {
  const RunConfig c = shared_run("base");
  if (std::filesystem::exists(c.base_path())) {
    try {
      return obtain_base(c);
    } catch (const CheckpointError& e) {
      std::cerr << "stale base (" << e.what() << "), pre-training again\n";
      std::filesystem::remove(c.base_path());
    }
  }
  std::cerr << "pre-training the base: " << c.pretrain_steps << " steps\n";
  return pretrain_base(c);
}

// 1. Zero-init identity over every buildable configuration.
Outcome zero_init_identity() {
  const fixtures::Inputs dit_in = fixtures::random_inputs(fixtures::shared_base(BackboneKind::dit), 2, 31);
  const fixtures::Inputs unet_in = fixtures::random_inputs(fixtures::shared_base(BackboneKind::unet), 2, 31);
  int checked = 0, failed = 0;
  float worst_uni = 0.0f, flagged_gap = 0.0f;
  std::string first_failure;
  for (const AdapterConfig& c : fixtures::buildable_configs()) {
    CounterRng rng(7);
    const AdaptedModel model(fixtures::shared_base(c.backbone), c, rng);
    const float gap = fixtures::identity_gap(model, c.backbone == BackboneKind::dit ? dit_in : unet_in);
    if (known_unstable(c)) {
      flagged_gap = std::max(flagged_gap, gap);
      continue;
    }
    ++checked;
    const bool ok = c.flow == FlowMode::bidirectional ? gap == 0.0f : gap <= 1e-5f;
    if (c.flow == FlowMode::unidirectional) worst_uni = std::max(worst_uni, gap);
    if (!ok && failed++ == 0) first_failure = fixtures::describe(c) + fmt(" gap %.3g", gap);
  }
  Outcome o;
  o.pass = failed == 0 && checked > 0;
  o.detail = fmt("%d combinations, bidirectional exact, unidirectional max %.2g; skip-layer unidirectional "
                 "(known-unstable, excluded) gap %.3g",
                 checked, worst_uni, flagged_gap);
  if (failed) o.detail += fmt("; %d failed, first: ", failed) + first_failure;
  return o;
}

// 2. Unidirectional training never touches the base; ControlNet does.
struct FlowAudit {
  bool base_unchanged = true;
  std::size_t base_param_grads = 0;
  std::size_t base_activation_grad_bytes = 0;
  std::size_t base_nodes_reached = 0;
  std::size_t min_base_saved = SIZE_MAX, max_base_saved = 0;
  int trained_changed = 0;
};

FlowAudit audit_training(const char* label, int steps) {
  CounterRng init(3);
  const Backbone base = make_backbone(BackboneKind::dit, init);
  AdapterConfig cfg = parse_adapter_label(label);
  CounterRng rng(4);
  AdaptedModel model(base, cfg, rng);
  std::map<std::string, Tensor> before;
  for (const Parameter* p : parameters(std::as_const(model))) before[p->name] = p->value.clone();
  std::set<std::string> base_names;
  for (const Parameter* p : parameters(std::as_const(model))) {
    if (p->tag == ComponentTag::base) base_names.insert(p->name);
  }
  AdamW opt(model, {});
  const NoiseSchedule sched = build_schedule(1000);
  FlowAudit a;
  const std::size_t base_tag = index_of(ComponentTag::base);
  for (int step = 1; step <= steps; ++step) {
    const auto seeds = step_seeds(5, step, 4);
    const TrainBatch batch = make_batch(seeds, ConditionKind::sr4x);
    Tape tape;
    const Tensor loss = diffusion_loss(tape, model, batch, sched, CounterRng(6).split(step));
    const std::size_t saved = tape_report(tape).saved_bytes[base_tag];
    a.min_base_saved = std::min(a.min_base_saved, saved);
    a.max_base_saved = std::max(a.max_base_saved, saved);
    BackwardStats stats;
    const GradientMap grads = backward(tape, loss, &stats);
    for (const auto& [name, g] : grads) a.base_param_grads += base_names.contains(name);
    a.base_activation_grad_bytes += stats.activation_gradient_bytes[base_tag];
    a.base_nodes_reached += stats.nodes_reached[base_tag];
    opt.step(grads);
  }
  for (const Parameter* p : parameters(std::as_const(model))) {
    const bool same = bit_equal(p->value, before.at(p->name));
    if (p->tag == ComponentTag::base) a.base_unchanged &= same;
    else a.trained_changed += !same;
  }
  return a;
}

Outcome unidirectionality() {
  const FlowAudit uc = audit_training("unicon-full", 50);
  const FlowAudit cn = audit_training("controlnet-full", 50);
  const bool uc_a = uc.base_unchanged;
  const bool uc_b = uc.base_param_grads == 0 && uc.base_activation_grad_bytes == 0 && uc.base_nodes_reached == 0;
  const bool uc_c = uc.max_base_saved == 0;
  const bool cn_b_fails = cn.base_activation_grad_bytes > 0 && cn.base_nodes_reached > 0;
  const bool cn_c_fails = cn.min_base_saved > 0;
  Outcome o;
  o.pass = uc_a && uc_b && uc_c && uc.trained_changed > 0 && cn_b_fails && cn_c_fails && cn.base_unchanged;
  o.detail = fmt("unicon-full 50 steps: base unchanged %s, base gradient entries %zu (params) / %zu B (activations), "
                 "base saved max %zu B; controlnet-full: base activation gradients %zu B, base saved min %zu B",
                 uc_a ? "yes" : "NO", uc.base_param_grads, uc.base_activation_grad_bytes, uc.max_base_saved,
                 cn.base_activation_grad_bytes, cn.min_base_saved);
  return o;
}

// 3. Finite differences on random parameters of every primitive and of both flows.
struct FdTally {
  int params = 0;
  int failures = 0;
  double worst = 0.0;
  std::string first_failure;

  void record(const std::string& what, bool ok, double err) {
    ++params;
    worst = std::max(worst, err);
    if (!ok && failures++ == 0) first_failure = what + fmt(" err %.3g", err);
  }
};

void check_primitives(FdTally& tally) {
  for (std::size_t k = 0; k < fd_cases::primitive_cases().size(); ++k) {
    const auto& [name, build] = fd_cases::primitive_cases()[k];
    CounterRng rng(4000 + 13 * k);
    fd_cases::FdCase c = build(rng, static_cast<int>(rng.below(8)));
    for (Parameter& p : c.params) {
      const auto idx = informative_indices(analytic_gradient(c.loss, p), rng, 6);
      const auto r = finite_difference_check(c.loss, p, idx, 1e-3f);
      tally.record(name + "." + p.name, r.non_finite.empty() && r.max_relative_error <= 1e-3, r.max_relative_error);
    }
  }
}

void check_adapter(FdTally& tally, BackboneKind kind, FlowMode flow, int picks) {
  const Backbone base = fixtures::small_backbone(kind, 3);
  AdapterConfig cfg;
  cfg.backbone = kind;
  cfg.flow = flow;
  CounterRng rng(1);
  AdaptedModel model(base, cfg, rng);
  fixtures::perturb_connectors(model, 6);
  const fixtures::Inputs in = fixtures::random_inputs(base, 4, 7);
  CounterRng target_rng(8);
  const Tensor target = target_rng.normal_tensor(in.x_t.shape());
  const LossFn loss = [&](Tape& tape) { return ops::mse(tape, model.predict_eps(tape, in.x_t, in.cond), target); };
  std::vector<Parameter*> trainable;
  for (Parameter* p : parameters(model)) {
    if (p->trainable) trainable.push_back(p);
  }
  double noise = 0.0;
  for (std::size_t k = 0; k < trainable.size(); k += trainable.size() / 3) {
    noise = std::max(noise, loss_noise_floor(loss, *trainable[k], 0));
  }
  const double g_min = resolvable_gradient(noise, 1e-3f, 1e-3);
  const std::string label = std::string(backbone_name(kind)) + "/" + std::string(flow_name(flow));
  CounterRng pick(static_cast<std::uint64_t>(kind) * 10 + static_cast<std::uint64_t>(flow) + 90);
  std::set<std::size_t> chosen;
  while (static_cast<int>(chosen.size()) < std::min<int>(picks, static_cast<int>(trainable.size()))) {
    chosen.insert(pick.below(trainable.size()));
  }
  for (std::size_t k : chosen) {
    Parameter& p = *trainable[k];
    const Tensor g = analytic_gradient(loss, p);
    const auto idx = informative_indices(g, pick, 4, 0.25, g_min);
    if (idx.empty()) {
      const auto any = informative_indices(g, pick, 2, 0.0);
      const auto r = finite_difference_check(loss, p, any, 1e-3f);
      double gap = 0.0;
      for (std::size_t i = 0; i < r.indices.size(); ++i) gap = std::max(gap, std::abs(r.analytic[i] - r.numeric[i]));
      tally.record(label + " " + p.name + " (absolute)", gap <= g_min * 1e-3, 0.0);
      continue;
    }
    const auto r = finite_difference_check(loss, p, idx, 1e-3f);
    tally.record(label + " " + p.name, r.non_finite.empty() && r.max_relative_error <= 1e-3, r.max_relative_error);
  }
}

Outcome gradient_correctness() {
  FdTally tally;
  check_primitives(tally);
  const int primitive_params = tally.params;
  for (auto kind : {BackboneKind::dit, BackboneKind::unet}) {
    for (auto flow : {FlowMode::bidirectional, FlowMode::unidirectional}) check_adapter(tally, kind, flow, 6);
  }
  Outcome o;
  o.pass = tally.failures == 0 && tally.params >= 32;
  o.detail = fmt("%d parameters (%zu primitive kinds, %d primitive / %d adapter tensors over both flows), "
                 "max relative error %.3g",
                 tally.params, fd_cases::primitive_cases().size(), primitive_params, tally.params - primitive_params,
                 tally.worst);
  if (tally.failures) o.detail += fmt("; %d failed, first: ", tally.failures) + tally.first_failure;
  return o;
}

// 4. Cost ratios at batch 16, and exact agreement with the cost sheet.
bool matches_sheet(const CostReport& r, const oracle::Costs& sheet) {
  for (int k = 0; k < oracle::kTags; ++k) {
    const CostFields& c = r.per_component[k];
    if (c.fp_flops != sheet.fp[k] || c.bp_flops != sheet.bp[k] || c.activation_bytes != sheet.saved[k] ||
        c.weight_bytes != sheet.weights[k] || c.gradient_bytes != sheet.trainable[k] ||
        c.optimizer_bytes != 2 * sheet.trainable[k]) {
      return false;
    }
  }
  return true;
}

Outcome cost_ratios() {
  ProfileSpec spec;
  spec.adapter = parse_adapter_label("controlnet-full");
  const CostReport cn = measure_round(spec);
  spec.adapter = parse_adapter_label("unicon-full");
  const CostReport uc = measure_round(spec);
  const oracle::DiTShape d;
  const bool cn_exact = matches_sheet(cn, oracle::dit_adapted_full(d, 16, true));
  const bool uc_exact = matches_sheet(uc, oracle::dit_adapted_full(d, 16, false));
  const double bp = static_cast<double>(uc.bp_flops) / static_cast<double>(cn.bp_flops);
  const auto& base = cn.per_component[index_of(ComponentTag::base)];
  const double share = static_cast<double>(base.gradient_bytes + base.activation_bytes) /
                       static_cast<double>(cn.gradient_bytes + cn.activation_bytes);
  Outcome o;
  o.pass = cn_exact && uc_exact && bp >= 0.45 && bp <= 0.60 && share >= 0.30;
  o.detail = fmt("bp_flops unicon/controlnet %.4f (want [0.45, 0.60]); controlnet base share of gradient+activation "
                 "bytes %.4f (want >= 0.30); reports equal the cost sheet: controlnet %s, unicon %s",
                 bp, share, cn_exact ? "yes" : "NO", uc_exact ? "yes" : "NO");
  return o;
}

// 5. UniCon-full learns sr4x on the pre-trained base.
double mean_of(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  double s = 0;
  for (std::size_t i = begin; i < end; ++i) s += v[i];
  return s / static_cast<double>(end - begin);
}

Outcome training_effectiveness() {
  shared_base();
  RunConfig init = shared_run("c5_init");
  init.seed = 42;
  init.steps = 0;
  const TrainResult r0 = run_train(init);
  const EvalSummary e0 = run_eval(init, *load_model(init, r0.checkpoint), init.output_dir);

  RunConfig run = shared_run("c5_unicon_full");
  run.seed = 42;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = run_train(run, &std::cerr);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  const EvalSummary e = run_eval(run, *load_model(run, r.checkpoint), run.output_dir);

  const double first = mean_of(r.losses, 0, 10);
  const double last = mean_of(r.losses, r.losses.size() - 100, r.losses.size());
  const double gain = e.consistency.mean - e0.consistency.mean;
  Outcome o;
  o.pass = r.losses.size() == 3000 && last < 0.5 * first && gain >= 3.0;
  o.detail = fmt("loss steps 1-10 %.4f, last 100 %.4f (ratio %.3f, want < 0.5); consistency PSNR init %.2f dB, "
                 "trained %.2f dB (gain %.2f, want >= 3); training %.1f min",
                 first, last, last / first, e0.consistency.mean, e.consistency.mean, gain, minutes);
  return o;
}

// 6. Decoder beats encoder ControlNet on edges in most seeds (soft).
constexpr int kAblationSteps = 1000;

Outcome ablation_direction() {
  shared_base();
  int wins = 0;
  std::string scores;
  for (std::uint64_t seed : {1, 2, 3}) {
    double ssim[2] = {0, 0};
    int k = 0;
    for (const char* label : {"controlnet-encoder", "controlnet-decoder"}) {
      RunConfig c = shared_run(fmt("c6_%s_seed%llu", label, static_cast<unsigned long long>(seed)));
      set_config_value(c, "model.adapter", label);
      c.condition = ConditionKind::edge;
      c.seed = seed;
      c.steps = kAblationSteps;
      const TrainResult r = run_train(c, &std::cerr);
      ssim[k++] = run_eval(c, *load_model(c, r.checkpoint), c.output_dir).consistency.mean;
    }
    wins += ssim[1] > ssim[0];
    scores += fmt("%sseed %llu enc %.4f dec %.4f", scores.empty() ? "" : ", ",
                  static_cast<unsigned long long>(seed), ssim[0], ssim[1]);
  }
  Outcome o;
  o.pass = wins >= 2;
  o.detail = fmt("decoder wins %d of 3 at %d steps (edge SSIM: ", wins, kAblationSteps) + scores + ")";
  return o;
}

// 7. Determinism of runs, samples and checkpoints.
Outcome determinism() {
  std::string bytes[2], samples[2], logs[2];
  for (int k = 0; k < 2; ++k) {
    RunConfig c;
    c.output_dir = (g_work / fmt("c7_run%d", k)).string();
    std::filesystem::remove_all(c.output_dir);
    c.seed = 77;
    c.steps = 20;
    c.batch = 4;
    c.pretrain_steps = 20;
    const TrainResult r = run_train(c);
    bytes[k] = slurp(r.checkpoint);
    for (const auto& rec : read_log(r.log)) logs[k] += fmt("%d %.17g %.17g\n", rec.step, rec.loss, rec.grad_norm);
    SampleRequest req;
    req.test_seed = 50010;
    req.count = 2;
    req.steps = 6;
    req.seed = 3;
    req.out_dir = std::filesystem::path(c.output_dir) / "samples";
    run_sample(c, *load_model(c, r.checkpoint), req);
    samples[k] = slurp(req.out_dir / "sample_000.pgm") + slurp(req.out_dir / "sample_001.pgm");
  }
  const bool same_runs = bytes[0] == bytes[1] && logs[0] == logs[1] && !logs[0].empty();
  const bool same_samples = samples[0] == samples[1] && !samples[0].empty();

  CounterRng rng(12);
  Backbone a = make_backbone(BackboneKind::dit, rng);
  Backbone b = make_backbone(BackboneKind::dit, rng);
  const auto path = g_work / "c7_roundtrip.uckp";
  save_checkpoint(path, a);
  load_checkpoint(path, b);
  bool round_trip = true;
  const auto pa = parameters(std::as_const(a)), pb = parameters(std::as_const(b));
  for (std::size_t i = 0; i < pa.size(); ++i) round_trip &= bit_equal(pa[i]->value, pb[i]->value);

  const std::string good = slurp(path);
  int rejected = 0, trials = 0;
  CounterRng flip(13);
  for (int k = 0; k < 8; ++k, ++trials) {
    std::string bad = good;
    const std::size_t at = 4 + flip.below(good.size() - 4);
    bad[at] = static_cast<char>(bad[at] ^ (1 << flip.below(8)));
    std::ofstream(g_work / "c7_bad.uckp", std::ios::binary).write(bad.data(), static_cast<std::streamsize>(bad.size()));
    try {
      load_checkpoint(g_work / "c7_bad.uckp", b);
    } catch (const CheckpointCrcError&) {
      ++rejected;
    } catch (const Error&) {
    }
  }
  for (std::size_t keep : {good.size() - 1, good.size() / 2, std::size_t{10}}) {
    ++trials;
    std::ofstream(g_work / "c7_bad.uckp", std::ios::binary).write(good.data(), static_cast<std::streamsize>(keep));
    try {
      load_checkpoint(g_work / "c7_bad.uckp", b);
    } catch (const CheckpointCrcError&) {
      ++rejected;
    } catch (const Error&) {
    }
  }
  const bool crc_matches_oracle =
      oracle::crc32(std::string_view(good).substr(0, good.size() - 4)) ==
      (static_cast<std::uint32_t>(static_cast<unsigned char>(good[good.size() - 4])) |
       static_cast<std::uint32_t>(static_cast<unsigned char>(good[good.size() - 3])) << 8 |
       static_cast<std::uint32_t>(static_cast<unsigned char>(good[good.size() - 2])) << 16 |
       static_cast<std::uint32_t>(static_cast<unsigned char>(good[good.size() - 1])) << 24);
  Outcome o;
  o.pass = same_runs && same_samples && round_trip && rejected == trials && crc_matches_oracle;
  o.detail = fmt("repeated runs identical (checkpoint + log) %s, samples identical %s, round trip bit-exact %s, "
                 "corrupted/truncated rejected by CRC %d of %d, stored CRC equals bitwise oracle %s",
                 same_runs ? "yes" : "NO", same_samples ? "yes" : "NO", round_trip ? "yes" : "NO", rejected, trials,
                 crc_matches_oracle ? "yes" : "NO");
  return o;
}

// 8. Schedule and sampler sanity.
class StubModel : public EpsModel {
 public:
  explicit StubModel(float value) : value_(value) {}
  Tensor predict_eps(Tape&, const Tensor& x_t, const ConditioningInputs&) const override {
    return Tensor::full(x_t.shape(), value_);
  }
  void visit(const std::string&, const ParamVisitor&) override {}

 private:
  float value_;
};

Outcome schedule_sanity() {
  const NoiseSchedule s = build_schedule(1000);
  bool decreasing = true;
  for (int t = 1; t < s.steps(); ++t) decreasing &= s.alpha_bars[t] < s.alpha_bars[t - 1];

  double worst_var = 0.0;
  CounterRng rng(21);
  const Tensor x0 = Tensor::full({1}, 0.5f);
  for (int t : {10, 500, 990}) {
    constexpr int kDraws = 20000;
    double sum = 0, sum_sq = 0;
    for (int k = 0; k < kDraws; ++k) {
      const double v = q_sample(x0, t, rng.normal_tensor({1}), s).at(0);
      sum += v;
      sum_sq += v * v;
    }
    const double mean = sum / kDraws;
    const double var = sum_sq / kDraws - mean * mean;
    worst_var = std::max(worst_var, std::abs(var - (1.0 - s.alpha_bars[t])) / (1.0 - s.alpha_bars[t]));
  }

  // One sampler step from t = T-1 to x0, no noise on the final step.
  double worst_step = 0.0;
  const double ab = s.alpha_bars[999];
  for (float c : {0.0f, 0.3f}) {
    const StubModel stub(c);
    ConditioningInputs cond;
    cond.labels = {0, 1, 2};
    const CounterRng sampler(5);
    const Tensor out = sample_loop(stub, cond, {4, 4, 1}, s, 1, sampler);
    CounterRng replay = sampler;
    const Tensor x_T = replay.normal_tensor({3, 4, 4, 1});
    for (std::int64_t i = 0; i < out.numel(); ++i) {
      const double want = (x_T.at(i) - std::sqrt(1.0 - ab) * c) / std::sqrt(ab);
      worst_step = std::max(worst_step, std::abs(out.at(i) - want) / std::max(1.0, std::abs(want)));
    }
  }
  Outcome o;
  o.pass = decreasing && worst_var <= 0.05 && worst_step <= 1e-5;
  o.detail = fmt("alpha_bars strictly decreasing %s; q_sample variance max relative error %.4f at t in {10, 500, 990} "
                 "(want <= 0.05); single-step closed form max error %.2g",
                 decreasing ? "yes" : "NO", worst_var, worst_step);
  return o;
}

struct Criterion {
  int id;
  const char* name;
  bool soft;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  std::string work = "acceptance_work";
  bool prepare_base = false;
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 8));
  app.add_option("--work", work, "Working directory for runs and the cached base");
  app.add_flag("--prepare-base", prepare_base, "Pre-train (or verify) the shared base and exit");
  CLI11_PARSE(app, argc, argv);
  g_work = work;
  std::filesystem::create_directories(g_work);

  if (prepare_base) {
    try {
      shared_base();
      std::cout << "base ready: " << shared_run("base").base_path().string() << '\n';
      return 0;
    } catch (const std::exception& e) {
      std::cout << "base FAILED: " << e.what() << '\n';
      return 1;
    }
  }

  const std::vector<Criterion> criteria = {
      {1, "zero-init identity", false, zero_init_identity},
      {2, "unidirectionality", false, unidirectionality},
      {3, "gradient correctness", false, gradient_correctness},
      {4, "cost ratios", false, cost_ratios},
      {5, "training effectiveness", false, training_effectiveness},
      {6, "ablation direction", true, ablation_direction},
      {7, "determinism and serialization", false, determinism},
      {8, "schedule and sampler sanity", false, schedule_sanity},
  };
  int hard_failures = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* verdict = o.pass ? "PASS" : c.soft ? "WARN" : "FAIL";
    std::cout << "criterion " << c.id << " " << verdict << " [" << c.name << (c.soft ? ", soft" : "") << "] "
              << o.detail << fmt(" (%.1f s)", secs) << std::endl;
    if (!o.pass && !c.soft) ++hard_failures;
  }
  return hard_failures == 0 ? 0 : 1;
}
