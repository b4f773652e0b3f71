#include "unicon/profiler.hpp"

#include <chrono>
#include <cstdio>
#include <map>
#include <new>
#include <sstream>

#include "unicon/optim.hpp"

namespace unicon {

std::uint64_t field_value(const CostFields& f, int field) {
  switch (field) {
    case 0: return f.weight_bytes;
    case 1: return f.activation_bytes;
    case 2: return f.gradient_bytes;
    case 3: return f.optimizer_bytes;
    case 4: return f.fp_flops;
    case 5: return f.bp_flops;
  }
  throw Error("unknown cost field " + std::to_string(field));
}

void CostReport::sum_components() {
  CostFields total;
  for (const CostFields& c : per_component) {
    total.weight_bytes += c.weight_bytes;
    total.activation_bytes += c.activation_bytes;
    total.gradient_bytes += c.gradient_bytes;
    total.optimizer_bytes += c.optimizer_bytes;
    total.fp_flops += c.fp_flops;
    total.bp_flops += c.bp_flops;
  }
  static_cast<CostFields&>(*this) = total;
}

TrainBatch profile_batch(const Shape& image_shape, int batch, std::uint64_t seed) {
  if (batch < 1) throw Error("profile: batch must be at least 1");
  CounterRng rng = CounterRng(seed).split(0x70726f66);
  TrainBatch b;
  b.x0 = rng.uniform_tensor({batch, image_shape[0], image_shape[1], image_shape[2]}, -1.0f, 1.0f);
  b.cond_image = rng.uniform_tensor({batch, image_shape[0], image_shape[1], 1}, -1.0f, 1.0f);
  for (int i = 0; i < batch; ++i) {
    b.labels.push_back(static_cast<int>(rng.below(8)));
    b.keys.push_back(static_cast<std::uint64_t>(i));
  }
  return b;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

template <typename F>
void stage(const char* name, F&& body) {
  try {
    body();
  } catch (const std::bad_alloc&) {
    throw Error(std::string("profile: out of memory in the ") + name + " stage");
  }
}

const NoiseSchedule& profile_schedule() {
  static const NoiseSchedule s = build_schedule(1000);
  return s;
}

}  // namespace

CostReport measure_round(EpsModel& model, const Shape& image_shape, int batch, int repeat, std::uint64_t seed,
                         bool timing) {
  if (repeat < 1) throw Error("profile: repeat must be at least 1");
  const TrainBatch data = profile_batch(image_shape, batch, seed);
  const CounterRng noise = CounterRng(seed).split(0x6e6f6973);
  CostReport r;

  std::map<std::string, ComponentTag> tags;
  stage("weight", [&] {
    for (const Parameter* p : parameters(std::as_const(model))) {
      r.per_component[index_of(p->tag)].weight_bytes += p->value.bytes();
      tags[p->name] = p->tag;
    }
  });

  Tape tape;
  Tensor loss;
  stage("activation", [&] {
    loss = diffusion_loss(tape, model, data, profile_schedule(), noise);
    const TapeReport saved = tape_report(tape);
    for (auto tag : kAllTags) {
      const int k = index_of(tag);
      r.per_component[k].activation_bytes = saved.saved_bytes[k];
      r.per_component[k].fp_flops = tape.flops().forward[k];
      r.per_component[k].bp_flops = tape.flops().backward[k];
    }
  });
  GradientMap grads;
  stage("gradient", [&] {
    grads = backward(tape, loss);
    for (const auto& [name, g] : grads) r.per_component[index_of(tags.at(name))].gradient_bytes += g.bytes();
  });
  stage("optimizer", [&] {
    AdamW opt(model, AdamWConfig{});
    opt.step(grads);
    const auto state = opt.state_bytes();
    for (auto tag : kAllTags) r.per_component[index_of(tag)].optimizer_bytes = state[index_of(tag)];
  });
  r.sum_components();

  if (timing) {
    double fp = 0.0, bp = 0.0;
    for (int i = 0; i < repeat; ++i) {
      Tape round;
      auto start = Clock::now();
      const Tensor l = diffusion_loss(round, model, data, profile_schedule(), noise);
      fp += ms_since(start);
      start = Clock::now();
      const GradientMap g = backward(round, l);
      bp += ms_since(start);
    }
    r.fp_time_ms = fp / repeat;
    r.bp_time_ms = bp / repeat;
  }
  return r;
}

CostReport measure_round(const ProfileSpec& spec) {
  CounterRng rng(spec.seed);
  Backbone base = make_backbone(spec.backbone, rng);
  if (!spec.adapter) return measure_round(base, base.image_shape(), spec.batch, spec.repeat, spec.seed, spec.timing);
  AdapterConfig cfg = *spec.adapter;
  cfg.backbone = spec.backbone;
  AdaptedModel model(base, cfg, rng);
  return measure_round(model, base.image_shape(), spec.batch, spec.repeat, spec.seed, spec.timing);
}

FlopCount count_flops(const EpsModel& model, const Shape& image_shape, int batch, std::uint64_t seed, bool training) {
  const TrainBatch data = profile_batch(image_shape, batch, seed);
  Tape tape;
  std::optional<NoGradGuard> no_grad;
  if (!training) no_grad.emplace(tape);
  diffusion_loss(tape, model, data, profile_schedule(), CounterRng(seed).split(0x6e6f6973));
  FlopCount f;
  f.fp_per_component = tape.flops().forward;
  f.bp_per_component = tape.flops().backward;
  f.fp_flops = tape.flops().forward_total();
  f.bp_flops = tape.flops().backward_total();
  return f;
}

std::optional<double> Comparison::ratio(std::size_t report, int field) const {
  const double base = static_cast<double>(field_value(reports.front().second, field));
  const double v = static_cast<double>(field_value(reports.at(report).second, field));
  if (base == 0.0) return v == 0.0 ? std::optional<double>(1.0) : std::nullopt;
  return v / base;
}

std::optional<double> Comparison::ratio(std::size_t report, ComponentTag tag, int field) const {
  const double base = static_cast<double>(field_value(reports.front().second.per_component[index_of(tag)], field));
  const double v = static_cast<double>(field_value(reports.at(report).second.per_component[index_of(tag)], field));
  if (base == 0.0) return v == 0.0 ? std::optional<double>(1.0) : std::nullopt;
  return v / base;
}

Comparison compare_reports(std::vector<NamedReport> reports) {
  if (reports.size() < 2) throw Error("compare: need at least two reports");
  return Comparison{std::move(reports)};
}

namespace {

nlohmann::json fields_json(const CostFields& f) {
  nlohmann::json j = nlohmann::json::object();
  for (int k = 0; k < 6; ++k) j[kCostFieldNames[k]] = field_value(f, k);
  return j;
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::string ratio_text(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

std::string pad(const std::string& s, int width, bool left = false) {
  if (static_cast<int>(s.size()) >= width) return s + " ";
  const std::string fill(width - s.size(), ' ');
  return left ? s + fill : fill + s;
}

}  // namespace

nlohmann::json to_json(const CostReport& report) {
  nlohmann::json j = fields_json(report);
  j["fp_time_ms"] = optional_json(report.fp_time_ms);
  j["bp_time_ms"] = optional_json(report.bp_time_ms);
  nlohmann::json per = nlohmann::json::object();
  for (auto tag : kAllTags) per[std::string(tag_name(tag))] = fields_json(report.per_component[index_of(tag)]);
  j["per_component"] = per;
  return j;
}

nlohmann::json to_json(const Comparison& c) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t r = 0; r < c.reports.size(); ++r) {
    nlohmann::json entry;
    entry["name"] = c.reports[r].first;
    entry["report"] = to_json(c.reports[r].second);
    nlohmann::json ratios = nlohmann::json::object();
    for (int k = 0; k < 6; ++k) ratios[kCostFieldNames[k]] = optional_json(c.ratio(r, k));
    nlohmann::json per = nlohmann::json::object();
    for (auto tag : kAllTags) {
      nlohmann::json t = nlohmann::json::object();
      for (int k = 0; k < 6; ++k) t[kCostFieldNames[k]] = optional_json(c.ratio(r, tag, k));
      per[std::string(tag_name(tag))] = t;
    }
    ratios["per_component"] = per;
    entry["ratios"] = ratios;
    out.push_back(entry);
  }
  return nlohmann::json{{"baseline", c.reports.front().first}, {"reports", out}};
}

std::string report_table(const CostReport& report) {
  std::ostringstream out;
  out << pad("field", 18, true) << pad("total", 14);
  for (auto tag : kAllTags) out << pad(std::string(tag_name(tag)), 14);
  out << '\n';
  for (int k = 0; k < 6; ++k) {
    out << pad(kCostFieldNames[k], 18, true) << pad(std::to_string(field_value(report, k)), 14);
    for (auto tag : kAllTags) out << pad(std::to_string(field_value(report.per_component[index_of(tag)], k)), 14);
    out << '\n';
  }
  if (report.fp_time_ms) out << pad("fp_time_ms", 18, true) << pad(ratio_text(report.fp_time_ms), 14) << '\n';
  if (report.bp_time_ms) out << pad("bp_time_ms", 18, true) << pad(ratio_text(report.bp_time_ms), 14) << '\n';
  return out.str();
}

std::string comparison_table(const Comparison& c) {
  std::ostringstream out;
  out << pad("field", 18, true) << pad("report", 24, true) << pad("total", 14) << pad("ratio", 10);
  for (auto tag : kAllTags) out << pad(std::string(tag_name(tag)), 14);
  out << '\n';
  for (int k = 0; k < 6; ++k) {
    for (std::size_t r = 0; r < c.reports.size(); ++r) {
      const CostReport& rep = c.reports[r].second;
      out << pad(kCostFieldNames[k], 18, true) << pad(c.reports[r].first, 24, true)
          << pad(std::to_string(field_value(rep, k)), 14) << pad(ratio_text(c.ratio(r, k)), 10);
      for (auto tag : kAllTags) out << pad(std::to_string(field_value(rep.per_component[index_of(tag)], k)), 14);
      out << '\n';
    }
  }
  return out.str();
}

std::string comparison_csv(const Comparison& c) {
  std::ostringstream out;
  out << "report,component,field,value,ratio\n";
  for (std::size_t r = 0; r < c.reports.size(); ++r) {
    const auto& [name, rep] = c.reports[r];
    for (int k = 0; k < 6; ++k) {
      const auto ratio = c.ratio(r, k);
      out << name << ",total," << kCostFieldNames[k] << ',' << field_value(rep, k) << ','
          << (ratio ? ratio_text(ratio) : "") << '\n';
      for (auto tag : kAllTags) {
        const auto tr = c.ratio(r, tag, k);
        out << name << ',' << tag_name(tag) << ',' << kCostFieldNames[k] << ','
            << field_value(rep.per_component[index_of(tag)], k) << ',' << (tr ? ratio_text(tr) : "") << '\n';
      }
    }
  }
  return out.str();
}

std::string report_csv(const std::string& name, const CostReport& report) {
  std::ostringstream out;
  out << "report,component,field,value\n";
  for (int k = 0; k < 6; ++k) {
    out << name << ",total," << kCostFieldNames[k] << ',' << field_value(report, k) << '\n';
    for (auto tag : kAllTags) {
      out << name << ',' << tag_name(tag) << ',' << kCostFieldNames[k] << ','
          << field_value(report.per_component[index_of(tag)], k) << '\n';
    }
  }
  return out.str();
}

}  // namespace unicon
