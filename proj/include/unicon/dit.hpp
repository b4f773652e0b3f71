#pragma once

#include <optional>

#include "unicon/backbone.hpp"

namespace unicon {

/// [B, H, W, C] -> [B, (H/p)(W/p), p*p*C], pure data movement.
Tensor patchify(Tape& tape, const Tensor& x, int patch);
/// Inverse of patchify for a square grid.
Tensor unpatchify(Tape& tape, const Tensor& tokens, int patch, int channels);

/// Scaled dot-product attention over [B, T, D] streams split into heads,
/// built from matmul / scale / softmax so it is accounted per primitive.
Tensor multi_head_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v, int heads);

class SelfAttention : public Module {
 public:
  SelfAttention() = default;
  SelfAttention(int dim, int heads, CounterRng& rng);

  int heads() const { return heads_; }
  int dim() const { return qkv_.in_features(); }
  Tensor forward(Tape& tape, const Tensor& h) const;
  /// Queries from `query_from`, keys and values from `kv_from`, through this
  /// layer's own projections.
  Tensor attend(Tape& tape, const Tensor& query_from, const Tensor& kv_from) const;
  SelfAttention copy() const;
  void visit(const std::string& prefix, const ParamVisitor& fn) override;

 private:
  Tensor project(Tape& tape, const Tensor& h, int first, int count) const;

  Linear qkv_;
  Linear out_;
  int heads_ = 1;
};

class CrossAttention : public Module {
 public:
  CrossAttention() = default;
  CrossAttention(int dim, int heads, CounterRng& rng);

  Tensor forward(Tape& tape, const Tensor& h, const Tensor& context) const;
  CrossAttention copy() const;
  void visit(const std::string& prefix, const ParamVisitor& fn) override;

 private:
  Linear q_;
  Linear kv_;
  Linear out_;
  int heads_ = 1;
};

class DiTBlock : public Block {
 public:
  DiTBlock(const TinyDiTConfig& cfg, CounterRng& rng);

  Tensor forward(Tape& tape, const Tensor& x, const Conditioning& cond,
                 std::span<const Tensor> history) const override;
  std::unique_ptr<Block> clone() const override;
  const SelfAttention* attention() const override { return &attn_; }
  bool has_cross_attention() const override { return xattn_.has_value(); }
  void remove_cross_attention() override { xattn_.reset(); }
  void visit(const std::string& prefix, const ParamVisitor& fn) override;

 private:
  DiTBlock() = default;

  Linear ada_;
  SelfAttention attn_;
  std::optional<CrossAttention> xattn_;
  Linear fc1_;
  Linear fc2_;
};

}  // namespace unicon
