#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "unicon/adapter.hpp"
#include "unicon/data.hpp"
#include "unicon/optim.hpp"

namespace unicon {

/// Everything one run depends on. Serializes to an ini-style file:
///
///   [run]      seed, steps, batch, log_every, output_dir, base_checkpoint
///   [model]    backbone, adapter, connector, keep_cross_attention,
///              controller_sees_input, drop_base_decoder
///   [task]     condition
///   [optim]    lr, beta1, beta2, eps, weight_decay
///   [sample]   sampler_steps, eval_count, clip_x0
///   [pretrain] steps, seed, lr
///
/// `adapter` is a label such as unicon-full or controlnet-decoder, or none
/// for the bare backbone.
struct RunConfig {
  std::uint64_t seed = 0;
  int steps = 3000;
  int batch = 16;
  int log_every = 10;
  std::string output_dir = "runs/default";
  /// Empty means <output_dir>/base.uckp, trained on first use.
  std::string base_checkpoint;

  BackboneKind backbone = BackboneKind::dit;
  std::optional<AdapterConfig> adapter = AdapterConfig{};

  ConditionKind condition = ConditionKind::sr4x;
  AdamWConfig optim;

  int sampler_steps = 24;
  int eval_count = 64;
  bool clip_x0 = true;

  int pretrain_steps = 5000;
  std::uint64_t pretrain_seed = 0;
  double pretrain_lr = 1e-3;

  std::filesystem::path base_path() const;
  /// Throws ConfigError on out-of-range values or unbuildable adapters.
  void validate() const;
};

/// Unknown sections or keys, malformed values and duplicates are ConfigErrors.
/// Missing keys keep their defaults.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Every key in a fixed order; parse_config(to_ini(c)) == c.
std::string to_ini(const RunConfig& config);
/// CRC-32 of to_ini as 8 hex digits.
std::string config_hash(const RunConfig& config);

/// Sets one field from "section.key" and its text value, as parse_config does.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

}  // namespace unicon
