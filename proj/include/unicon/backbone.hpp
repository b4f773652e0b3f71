#pragma once

#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "unicon/module.hpp"

namespace unicon {

enum class BackboneKind { dit, unet };

std::string_view backbone_name(BackboneKind kind);
BackboneKind parse_backbone(std::string_view name);

/// Per-call signals shared by every block of a stream.
struct Conditioning {
  Tensor t_emb;    // [B, D]
  Tensor context;  // [B, L, D] label tokens for cross-attention; undefined for the U-Net
};

/// The (t, p, c) of one denoising call. `cond_image` is only read by adapters.
struct ConditioningInputs {
  std::vector<int> timesteps;
  std::vector<int> labels;
  Tensor cond_image;  // [B, H, W, 1] in [-1, 1]
};

class SelfAttention;

class Block : public Module {
 public:
  /// `history[k]` is the output of block k for every k before this block.
  virtual Tensor forward(Tape& tape, const Tensor& x, const Conditioning& cond,
                         std::span<const Tensor> history) const = 0;
  virtual std::unique_ptr<Block> clone() const = 0;
  virtual const SelfAttention* attention() const { return nullptr; }
  virtual bool has_cross_attention() const { return false; }
  virtual void remove_cross_attention() {}
};

class ImageEmbedder : public Module {
 public:
  virtual Tensor forward(Tape& tape, const Tensor& x_t) const = 0;
  virtual std::unique_ptr<ImageEmbedder> clone() const = 0;
};

class ConditioningEmbedder : public Module {
 public:
  virtual Conditioning forward(Tape& tape, std::span<const int> timesteps, std::span<const int> labels) const = 0;
  virtual std::unique_ptr<ConditioningEmbedder> clone() const = 0;
};

class OutputHead : public Module {
 public:
  virtual Tensor forward(Tape& tape, const Tensor& x, const Conditioning& cond) const = 0;
  virtual std::unique_ptr<OutputHead> clone() const = 0;
};

/// Anything that predicts the noise of x_t.
class EpsModel : public Module {
 public:
  virtual Tensor predict_eps(Tape& tape, const Tensor& x_t, const ConditioningInputs& cond) const = 0;
};

struct BackboneOutput {
  Tensor eps;
  std::vector<Tensor> trace;  // per-block outputs when requested
};

struct BackboneParts {
  std::unique_ptr<ImageEmbedder> embed;
  std::unique_ptr<ConditioningEmbedder> cond;
  std::vector<std::unique_ptr<Block>> blocks;
  std::unique_ptr<OutputHead> head;
};

/// Embedders, a chain of blocks and an output head. All operations run under
/// the base tag.
class Backbone : public EpsModel {
 public:
  /// `block_shapes` holds each block's input shape followed by the last block's output shape.
  Backbone(BackboneKind kind, BackboneParts parts, Shape image_shape, std::vector<Shape> block_shapes, int heads);
  Backbone(const Backbone& other);
  Backbone& operator=(const Backbone& other);
  Backbone(Backbone&&) noexcept = default;
  Backbone& operator=(Backbone&&) noexcept = default;

  BackboneKind kind() const { return kind_; }
  int num_blocks() const { return static_cast<int>(parts_.blocks.size()); }
  int heads() const { return heads_; }
  /// [H, W, C] of an image.
  const Shape& image_shape() const { return image_shape_; }
  /// Per-item input shape of block i (without the batch axis).
  const Shape& block_input_shape(int i) const { return block_shapes_.at(i); }
  const Shape& block_output_shape(int i) const { return block_shapes_.at(i + 1); }

  const ImageEmbedder& embedder() const { return *parts_.embed; }
  const ConditioningEmbedder& conditioning() const { return *parts_.cond; }
  const Block& block(int i) const { return *parts_.blocks.at(i); }
  const OutputHead& head() const { return *parts_.head; }

  /// Rejects x_t that is not [B, H, W, C] or per-item lists of the wrong length.
  void check_inputs(const Tensor& x_t, const ConditioningInputs& cond) const;

  BackboneOutput forward(Tape& tape, const Tensor& x_t, const ConditioningInputs& cond, bool trace) const;
  Tensor predict_eps(Tape& tape, const Tensor& x_t, const ConditioningInputs& cond) const override;
  void visit(const std::string& prefix, const ParamVisitor& fn) override;

 private:
  BackboneKind kind_;
  BackboneParts parts_;
  Shape image_shape_;
  std::vector<Shape> block_shapes_;
  int heads_ = 0;
};

struct TinyDiTConfig {
  int image_size = 32;
  int channels = 1;
  int patch = 4;
  int hidden = 64;
  int heads = 4;
  int blocks = 8;
  int time_dim = 64;
  int classes = 8;
  int context_tokens = 4;
  int mlp_ratio = 4;
};

struct TinyUNetConfig {
  int image_size = 32;
  int channels = 1;
  std::vector<int> widths = {16, 32, 64};
  int time_dim = 64;
  int classes = 8;
  int groups = 4;
};

Backbone make_tiny_dit(const TinyDiTConfig& cfg, CounterRng& rng);
Backbone make_tiny_unet(const TinyUNetConfig& cfg, CounterRng& rng);
/// Default-config backbone of the given kind.
Backbone make_backbone(BackboneKind kind, CounterRng& rng);

}  // namespace unicon
