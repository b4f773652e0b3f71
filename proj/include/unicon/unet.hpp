#pragma once

#include <optional>

#include "unicon/backbone.hpp"

namespace unicon {

/// GroupNorm-SiLU-conv twice with a timestep shift in between, plus a 1x1
/// shortcut when the width changes.
class ResBlock : public Module {
 public:
  ResBlock() = default;
  ResBlock(int in_channels, int out_channels, int time_dim, int groups, CounterRng& rng);

  Tensor forward(Tape& tape, const Tensor& x, const Tensor& t_emb) const;
  ResBlock copy() const;
  void visit(const std::string& prefix, const ParamVisitor& fn) override;

 private:
  Conv2d conv1_, conv2_;
  Linear time_;
  std::optional<Conv2d> shortcut_;
  int groups_ = 1;
};

/// One U-Net level: optional stride-2 downsampling conv or nearest upsample
/// + conv, optional concatenation of an encoder skip, then a ResBlock.
class UNetBlock : public Block {
 public:
  enum class Resample { none, down, up };

  UNetBlock(Resample resample, int in_channels, int resampled_channels, int skip_from, int skip_channels,
            int out_channels, int time_dim, int groups, CounterRng& rng);

  int skip_from() const { return skip_from_; }
  Tensor forward(Tape& tape, const Tensor& x, const Conditioning& cond,
                 std::span<const Tensor> history) const override;
  std::unique_ptr<Block> clone() const override;
  void visit(const std::string& prefix, const ParamVisitor& fn) override;

 private:
  UNetBlock() = default;

  Resample resample_ = Resample::none;
  std::optional<Conv2d> resample_conv_;
  int skip_from_ = -1;
  ResBlock res_;
};

}  // namespace unicon
