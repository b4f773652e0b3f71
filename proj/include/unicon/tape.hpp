#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "unicon/tensor.hpp"

namespace unicon {

enum class ComponentTag : std::uint8_t { base, adapter, connector, cond_embedder, other };
inline constexpr int kNumTags = 5;
inline constexpr std::array<ComponentTag, kNumTags> kAllTags = {
    ComponentTag::base, ComponentTag::adapter, ComponentTag::connector, ComponentTag::cond_embedder,
    ComponentTag::other};

std::string_view tag_name(ComponentTag tag);
ComponentTag parse_tag(std::string_view name);

template <typename T>
using PerTag = std::array<T, kNumTags>;

inline constexpr int index_of(ComponentTag tag) { return static_cast<int>(tag); }

enum class PrimitiveKind : std::uint8_t {
  leaf,
  matmul,
  conv2d,
  upsample,
  add,
  mul,
  scale,
  layer_norm,
  group_norm,
  softmax,
  gelu,
  silu,
  reshape,
  transpose,
  concat,
  slice,
  mean,
  mse,
};

std::string_view primitive_name(PrimitiveKind kind);

struct OpAttrs {
  std::vector<std::int64_t> ints;
  float scalar = 0.0f;
};

struct Parameter;

struct Node {
  PrimitiveKind kind = PrimitiveKind::leaf;
  ComponentTag tag = ComponentTag::other;
  std::vector<int> inputs;  // producing node per input, -1 for constants
  std::vector<Shape> input_shapes;
  Shape output_shape;
  std::vector<Tensor> saved;
  OpAttrs attrs;
  const Parameter* parameter = nullptr;  // leaves only
  std::uint64_t forward_flops = 0;
};

struct SavedEntry {
  std::size_t bytes = 0;
  ComponentTag tag = ComponentTag::other;
  int node = -1;
};

struct TapeReport {
  PerTag<std::size_t> saved_bytes{};
  PerTag<std::size_t> node_count{};
  std::size_t total_saved_bytes = 0;
};

struct FlopLedger {
  PerTag<std::uint64_t> forward{};
  PerTag<std::uint64_t> backward{};
  std::uint64_t forward_total() const;
  std::uint64_t backward_total() const;
};

/// Record of executed primitives. Every primitive call reports its forward
/// FLOPs here; calls with at least one tape-recorded input append a node and
/// register what their backward rule needs under the current component tag.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  /// Forward GEMMs accumulate in double (storage stays f32). Off by default;
  /// the finite-difference checker turns it on to lower its rounding floor.
  bool precise() const { return precise_; }
  void set_precise(bool on) { precise_ = on; }
  ComponentTag current_tag() const { return tag_; }

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<SavedEntry>& saved() const { return saved_; }
  const FlopLedger& flops() const { return flops_; }

  /// Wires a new node. Inputs without a node on this tape are constants.
  /// Returns a tensor carrying `value` and the new node, or `value`
  /// untouched when nothing needs recording.
  Tensor record(PrimitiveKind kind, std::span<const Tensor* const> inputs, Tensor value,
                std::vector<Tensor> saved, OpAttrs attrs, std::uint64_t flops);
  /// Books forward FLOPs for a primitive call without recording a node.
  void count_forward(std::uint64_t flops) { flops_.forward[index_of(tag_)] += flops; }

  /// Leaf node for a trainable parameter, created on first use.
  Tensor leaf(const Parameter& param);

  bool needs_grad(const Tensor& t) const;

 private:
  friend class NoGradGuard;
  friend class TagScope;

  bool recording_ = true;
  bool precise_ = false;
  ComponentTag tag_ = ComponentTag::other;
  std::vector<Node> nodes_;
  std::vector<SavedEntry> saved_;
  std::unordered_map<const Parameter*, int> leaves_;
  FlopLedger flops_;
};

/// Disables recording for its lifetime.
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& tape) : tape_(tape), previous_(tape.recording_) { tape.recording_ = false; }
  ~NoGradGuard() { tape_.recording_ = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape& tape_;
  bool previous_;
};

/// Attributes nodes and FLOPs to `tag` for its lifetime.
class TagScope {
 public:
  TagScope(Tape& tape, ComponentTag tag) : tape_(tape), previous_(tape.tag_) { tape.tag_ = tag; }
  ~TagScope() { tape_.tag_ = previous_; }
  TagScope(const TagScope&) = delete;
  TagScope& operator=(const TagScope&) = delete;

 private:
  Tape& tape_;
  ComponentTag previous_;
};

struct Parameter {
  std::string name;
  Tensor value;
  ComponentTag tag = ComponentTag::other;
  bool trainable = true;

  Parameter() = default;
  Parameter(Tensor init, ComponentTag tag_ = ComponentTag::other, bool trainable_ = true);

  /// The value as seen by a forward pass: a leaf node when trainable and the
  /// tape records, a constant otherwise.
  Tensor use(Tape& tape) const;
  /// Deep copy: fresh storage, same metadata.
  Parameter copy() const;
};

using GradientMap = std::map<std::string, Tensor>;

/// Where the reverse pass went: per tag, how many non-leaf nodes received an
/// output gradient, and the bytes of those activation gradients.
struct BackwardStats {
  PerTag<std::size_t> nodes_reached{};
  PerTag<std::size_t> activation_gradient_bytes{};
};

/// Reverse pass from a scalar loss. Gradients are accumulated in reverse
/// recording order; only trainable parameters reachable through recorded
/// edges appear in the result.
GradientMap backward(const Tape& tape, const Tensor& loss, BackwardStats* stats = nullptr);

TapeReport tape_report(const Tape& tape);

}  // namespace unicon
