#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "unicon/backbone.hpp"
#include "unicon/dit.hpp"

namespace unicon {

enum class Topology { encoder, decoder, skip_layer, full };
enum class FlowMode { bidirectional, unidirectional };
enum class ConnectorKind { zero_mlp, zero_ft, share_attn };

std::string_view topology_name(Topology t);
std::string_view flow_name(FlowMode f);
std::string_view connector_name(ConnectorKind k);
Topology parse_topology(std::string_view s);
FlowMode parse_flow(std::string_view s);
ConnectorKind parse_connector(std::string_view s);

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct AdapterConfig {
  Topology topology = Topology::full;
  FlowMode flow = FlowMode::unidirectional;
  ConnectorKind connector = ConnectorKind::zero_ft;
  bool keep_cross_attention = true;
  BackboneKind backbone = BackboneKind::dit;
  /// Bidirectional only: start the controller stream from cond + x instead of cond alone.
  bool controller_sees_input = true;
  /// Unidirectional decoder only: skip base blocks >= n/2 entirely.
  bool drop_base_decoder = false;
};

/// "unicon-full", "controlnet-encoder", ...
std::string adapter_label(const AdapterConfig& cfg);
/// Flow and topology from a label of the form above; other fields default.
AdapterConfig parse_adapter_label(std::string_view label);

/// Throws ConfigError for combinations that cannot be built.
void validate(const AdapterConfig& cfg);
/// Buildable, but the controller stream skips base blocks, so the adapted
/// model is not the base model at initialization.
bool known_unstable(const AdapterConfig& cfg);

/// Indices of the base blocks the controller copies, in order.
std::vector<int> select_blocks(Topology topology, int n_blocks);

/// Zero-initialized bridge from a source stream into a target stream.
class Connector : public Module {
 public:
  virtual ConnectorKind kind() const = 0;
  /// `shared` is the target stream's self-attention, read by share-attn only.
  virtual Tensor forward(Tape& tape, const Tensor& source, const Tensor& target,
                         const SelfAttention* shared) const = 0;
};

/// `width` is the channel (U-Net) or token (DiT) width of both streams.
std::unique_ptr<Connector> make_connector(ConnectorKind kind, BackboneKind backbone, int width);

Tensor connector_forward(const Connector& connector, Tape& tape, const Tensor& source, const Tensor& target,
                         const SelfAttention* shared = nullptr);

/// Condition image -> stream at the controller's entry block: two 3x3 convs
/// with SiLU, stride-2 convs down to the entry resolution (U-Net), and a
/// zero-initialized 1x1 projection; the DiT variant is then patchified.
class ConditionEmbedder : public Module {
 public:
  ConditionEmbedder() = default;
  ConditionEmbedder(const Backbone& base, int entry_block, CounterRng& rng);

  Tensor forward(Tape& tape, const Tensor& cond_image) const;
  void visit(const std::string& prefix, const ParamVisitor& fn) override;

 private:
  Conv2d conv1_, conv2_;
  std::vector<Conv2d> downs_;
  Conv2d proj_;
  int patch_ = 0;  // DiT only
};

struct AdaptedOutput {
  Tensor eps;
  Tensor controller_stream;  // c after the last controller block and connector
};

class AdaptedModel : public EpsModel {
 public:
  AdaptedModel(const Backbone& base, const AdapterConfig& cfg, CounterRng& rng);

  const AdapterConfig& config() const { return cfg_; }
  const Backbone& base() const { return base_; }
  const std::vector<int>& selected() const { return selected_; }
  int controller_blocks() const { return static_cast<int>(blocks_.size()); }
  const Block& controller_block(int j) const { return *blocks_.at(j); }
  const Connector& connector(int j) const { return *connectors_.at(j); }
  const ConditionEmbedder& condition_embedder() const { return cond_embedder_; }
  /// Controller embedder, blocks and (unidirectional) head.
  std::int64_t controller_parameter_count() const;

  AdaptedOutput forward(Tape& tape, const Tensor& x_t, const ConditioningInputs& cond) const;
  Tensor controlnet_forward(Tape& tape, const Tensor& x_t, const ConditioningInputs& cond) const;
  Tensor unicon_forward(Tape& tape, const Tensor& x_t, const ConditioningInputs& cond) const;
  Tensor predict_eps(Tape& tape, const Tensor& x_t, const ConditioningInputs& cond) const override;
  void visit(const std::string& prefix, const ParamVisitor& fn) override;

 private:
  AdaptedOutput run_bidirectional(Tape& tape, const Tensor& x_t, const ConditioningInputs& cond) const;
  AdaptedOutput run_unidirectional(Tape& tape, const Tensor& x_t, const ConditioningInputs& cond) const;
  void visit_controller(const std::string& prefix, const ParamVisitor& fn);

  AdapterConfig cfg_;
  Backbone base_;
  std::vector<int> selected_;
  std::unique_ptr<ConditioningEmbedder> cond_;
  std::vector<std::unique_ptr<Block>> blocks_;
  std::unique_ptr<OutputHead> head_;  // unidirectional only
  std::vector<std::unique_ptr<Connector>> connectors_;
  ConditionEmbedder cond_embedder_;
};

AdaptedModel build_adapter(const Backbone& base, const AdapterConfig& cfg, CounterRng& rng);

}  // namespace unicon
