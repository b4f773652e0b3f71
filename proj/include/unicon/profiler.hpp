#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "unicon/adapter.hpp"
#include "unicon/backbone.hpp"
#include "unicon/diffusion.hpp"

namespace unicon {

struct CostFields {
  std::uint64_t weight_bytes = 0;
  std::uint64_t activation_bytes = 0;
  std::uint64_t gradient_bytes = 0;
  std::uint64_t optimizer_bytes = 0;
  std::uint64_t fp_flops = 0;
  std::uint64_t bp_flops = 0;

  bool operator==(const CostFields&) const = default;
};

/// Field names in report order.
inline constexpr std::array<const char*, 6> kCostFieldNames = {
    "weight_bytes", "activation_bytes", "gradient_bytes", "optimizer_bytes", "fp_flops", "bp_flops"};
std::uint64_t field_value(const CostFields& f, int field);

/// One training round's memory and compute. Top-level fields are the sums
/// over per_component.
struct CostReport : CostFields {
  std::optional<double> fp_time_ms;
  std::optional<double> bp_time_ms;
  PerTag<CostFields> per_component{};

  /// Same report with top-level fields recomputed from per_component.
  void sum_components();
};

struct ProfileSpec {
  BackboneKind backbone = BackboneKind::dit;
  std::optional<AdapterConfig> adapter;  // bare backbone when empty
  int batch = 16;
  int repeat = 20;
  std::uint64_t seed = 0;
  /// Wall-clock forward/backward means over `repeat` rounds.
  bool timing = false;
};

/// The inputs of one profiled round: a batch of random images, labels,
/// condition images and noise keys.
TrainBatch profile_batch(const Shape& image_shape, int batch, std::uint64_t seed);

/// One round on `model`: weights, a recorded forward + diffusion loss,
/// backward, and one AdamW step (which updates `model`).
CostReport measure_round(EpsModel& model, const Shape& image_shape, int batch, int repeat, std::uint64_t seed,
                         bool timing);
/// Builds the model described by `spec` from `spec.seed` and measures it.
CostReport measure_round(const ProfileSpec& spec);

struct FlopCount {
  std::uint64_t fp_flops = 0;
  std::uint64_t bp_flops = 0;
  PerTag<std::uint64_t> fp_per_component{};
  PerTag<std::uint64_t> bp_per_component{};
};

/// FLOPs of one forward + diffusion loss. With `training` false the pass runs
/// with recording disabled and bp_flops is 0.
FlopCount count_flops(const EpsModel& model, const Shape& image_shape, int batch, std::uint64_t seed,
                      bool training = true);

using NamedReport = std::pair<std::string, CostReport>;

struct Comparison {
  std::vector<NamedReport> reports;
  /// ratio(r, field) = field(r) / field(first); 1 when both are 0, empty when only the first is 0.
  std::optional<double> ratio(std::size_t report, int field) const;
  std::optional<double> ratio(std::size_t report, ComponentTag tag, int field) const;
};

Comparison compare_reports(std::vector<NamedReport> reports);

nlohmann::json to_json(const CostReport& report);
nlohmann::json to_json(const Comparison& comparison);
std::string report_table(const CostReport& report);
std::string comparison_table(const Comparison& comparison);
/// Header: report,component,field,value,ratio. Component "total" holds the top-level fields.
std::string comparison_csv(const Comparison& comparison);
std::string report_csv(const std::string& name, const CostReport& report);

}  // namespace unicon
