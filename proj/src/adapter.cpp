#include "unicon/adapter.hpp"

#include <algorithm>
#include <cmath>

#include "unicon/ops.hpp"

namespace unicon {

std::string_view topology_name(Topology t) {
  switch (t) {
    case Topology::encoder: return "encoder";
    case Topology::decoder: return "decoder";
    case Topology::skip_layer: return "skip-layer";
    case Topology::full: return "full";
  }
  return "full";
}

std::string_view flow_name(FlowMode f) { return f == FlowMode::bidirectional ? "bidirectional" : "unidirectional"; }

std::string_view connector_name(ConnectorKind k) {
  switch (k) {
    case ConnectorKind::zero_mlp: return "zero-mlp";
    case ConnectorKind::zero_ft: return "zero-ft";
    case ConnectorKind::share_attn: return "share-attn";
  }
  return "zero-ft";
}

Topology parse_topology(std::string_view s) {
  for (auto t : {Topology::encoder, Topology::decoder, Topology::skip_layer, Topology::full}) {
    if (topology_name(t) == s) return t;
  }
  throw ConfigError("unknown topology '" + std::string(s) + "'");
}

FlowMode parse_flow(std::string_view s) {
  if (s == "bidirectional") return FlowMode::bidirectional;
  if (s == "unidirectional") return FlowMode::unidirectional;
  throw ConfigError("unknown flow '" + std::string(s) + "'");
}

ConnectorKind parse_connector(std::string_view s) {
  for (auto k : {ConnectorKind::zero_mlp, ConnectorKind::zero_ft, ConnectorKind::share_attn}) {
    if (connector_name(k) == s) return k;
  }
  throw ConfigError("unknown connector '" + std::string(s) + "'");
}

std::string adapter_label(const AdapterConfig& cfg) {
  std::string flow = cfg.flow == FlowMode::unidirectional ? "unicon-" : "controlnet-";
  return flow + std::string(topology_name(cfg.topology));
}

AdapterConfig parse_adapter_label(std::string_view label) {
  AdapterConfig cfg;
  std::string_view rest;
  if (label.starts_with("unicon-")) {
    cfg.flow = FlowMode::unidirectional;
    rest = label.substr(7);
  } else if (label.starts_with("controlnet-")) {
    cfg.flow = FlowMode::bidirectional;
    rest = label.substr(11);
  } else {
    throw ConfigError("unknown adapter '" + std::string(label) + "'");
  }
  cfg.topology = parse_topology(rest);
  return cfg;
}

void validate(const AdapterConfig& cfg) {
  const bool uni = cfg.flow == FlowMode::unidirectional;
  if (uni && cfg.topology == Topology::encoder) {
    throw ConfigError("encoder topology with unidirectional flow: the controller would never reach the output");
  }
  if (cfg.backbone == BackboneKind::unet) {
    if (cfg.topology == Topology::skip_layer) {
      throw ConfigError("skip-layer topology needs blocks of equal shape; the U-Net changes resolution per block");
    }
    if (cfg.connector == ConnectorKind::share_attn) throw ConfigError("share-attn needs an attention backbone");
    if (!cfg.keep_cross_attention) throw ConfigError("the U-Net has no cross-attention to drop");
    if (cfg.drop_base_decoder) {
      throw ConfigError("drop_base_decoder needs blocks of equal shape; U-Net decoder connectors would read a stale x");
    }
  }
  if (cfg.drop_base_decoder && !(uni && cfg.topology == Topology::decoder)) {
    throw ConfigError("drop_base_decoder applies to the unidirectional decoder topology only");
  }
  if (!cfg.controller_sees_input && uni) {
    throw ConfigError("controller_sees_input=false applies to bidirectional flow only");
  }
}

bool known_unstable(const AdapterConfig& cfg) {
  return cfg.flow == FlowMode::unidirectional && cfg.topology == Topology::skip_layer;
}

std::vector<int> select_blocks(Topology topology, int n_blocks) {
  if (n_blocks < 2 || n_blocks % 2 != 0) throw ConfigError("block count must be even and at least 2");
  std::vector<int> out;
  for (int i = 0; i < n_blocks; ++i) {
    const bool take = topology == Topology::full || (topology == Topology::encoder && i < n_blocks / 2) ||
                      (topology == Topology::decoder && i >= n_blocks / 2) ||
                      (topology == Topology::skip_layer && i % 2 == 0);
    if (take) out.push_back(i);
  }
  return out;
}

namespace {

// Zero map of the source stream: a linear layer over tokens or a 1x1 conv.
class ZeroMap : public Module {
 public:
  ZeroMap() = default;
  ZeroMap(BackboneKind backbone, int width) : tokens_(backbone == BackboneKind::dit) {
    if (tokens_) {
      linear_ = Linear::zeros(width, width);
    } else {
      conv_ = Conv2d::zeros(width, width, 1);
    }
  }
  Tensor forward(Tape& tape, const Tensor& x) const {
    return tokens_ ? linear_.forward(tape, x) : conv_.forward(tape, x);
  }
  void visit(const std::string& prefix, const ParamVisitor& fn) override {
    if (tokens_) {
      linear_.visit(prefix, fn);
    } else {
      conv_.visit(prefix, fn);
    }
  }

 private:
  bool tokens_ = true;
  Linear linear_;
  Conv2d conv_;
};

class ZeroMlpConnector : public Connector {
 public:
  ZeroMlpConnector(BackboneKind backbone, int width) : map_(backbone, width) {}
  ConnectorKind kind() const override { return ConnectorKind::zero_mlp; }
  Tensor forward(Tape& tape, const Tensor& source, const Tensor& target, const SelfAttention*) const override {
    return ops::add(tape, target, map_.forward(tape, source));
  }
  void visit(const std::string& prefix, const ParamVisitor& fn) override { map_.visit(join_path(prefix, "proj"), fn); }

 private:
  ZeroMap map_;
};

class ZeroFtConnector : public Connector {
 public:
  ZeroFtConnector(BackboneKind backbone, int width) : scale_(backbone, width), shift_(backbone, width) {}
  ConnectorKind kind() const override { return ConnectorKind::zero_ft; }
  Tensor forward(Tape& tape, const Tensor& source, const Tensor& target, const SelfAttention*) const override {
    Tensor out = ops::add(tape, target, ops::mul(tape, target, scale_.forward(tape, source)));
    return ops::add(tape, out, shift_.forward(tape, source));
  }
  void visit(const std::string& prefix, const ParamVisitor& fn) override {
    scale_.visit(join_path(prefix, "scale"), fn);
    shift_.visit(join_path(prefix, "shift"), fn);
  }

 private:
  ZeroMap scale_;
  ZeroMap shift_;
};

class ShareAttnConnector : public Connector {
 public:
  ShareAttnConnector() : gate_(Tensor::zeros({1})) {}
  ConnectorKind kind() const override { return ConnectorKind::share_attn; }
  Tensor forward(Tape& tape, const Tensor& source, const Tensor& target, const SelfAttention* shared) const override {
    if (shared == nullptr) throw ConfigError("share-attn connector needs the target block's attention");
    Tensor a = shared->attend(tape, ops::layer_norm(tape, target), ops::layer_norm(tape, source));
    return ops::add(tape, target, ops::mul(tape, a, gate_.use(tape)));
  }
  void visit(const std::string& prefix, const ParamVisitor& fn) override { fn(join_path(prefix, "gate"), gate_); }

 private:
  Parameter gate_;
};

}  // namespace

std::unique_ptr<Connector> make_connector(ConnectorKind kind, BackboneKind backbone, int width) {
  switch (kind) {
    case ConnectorKind::zero_mlp: return std::make_unique<ZeroMlpConnector>(backbone, width);
    case ConnectorKind::zero_ft: return std::make_unique<ZeroFtConnector>(backbone, width);
    case ConnectorKind::share_attn:
      if (backbone != BackboneKind::dit) throw ConfigError("share-attn needs an attention backbone");
      return std::make_unique<ShareAttnConnector>();
  }
  throw ConfigError("unknown connector kind");
}

Tensor connector_forward(const Connector& connector, Tape& tape, const Tensor& source, const Tensor& target,
                         const SelfAttention* shared) {
  if (source.shape() != target.shape()) {
    throw ShapeError("connector: source " + to_string(source.shape()) + " vs target " + to_string(target.shape()));
  }
  return connector.forward(tape, source, target, shared);
}

namespace {

constexpr int kCondWidth = 16;

int log2_exact(std::int64_t v) {
  int k = 0;
  while ((std::int64_t{1} << k) < v) ++k;
  if ((std::int64_t{1} << k) != v) throw ShapeError("condition embedder: resolution ratio is not a power of two");
  return k;
}

}  // namespace

ConditionEmbedder::ConditionEmbedder(const Backbone& base, int entry_block, CounterRng& rng) {
  const Shape& img = base.image_shape();
  const Shape& entry = base.block_input_shape(entry_block);
  conv1_ = Conv2d(1, kCondWidth, 3, 1, rng);
  conv2_ = Conv2d(kCondWidth, kCondWidth, 3, 1, rng);
  int out_channels = 0;
  if (base.kind() == BackboneKind::dit) {
    const auto tokens = entry[0], hidden = entry[1];
    const auto pixels = img[0] * img[1];
    patch_ = static_cast<int>(std::lround(std::sqrt(static_cast<double>(pixels / tokens))));
    if (std::int64_t(patch_) * patch_ * tokens != pixels || hidden % (patch_ * patch_) != 0) {
      throw ShapeError("condition embedder: cannot patchify onto " + to_string(entry));
    }
    out_channels = static_cast<int>(hidden / (patch_ * patch_));
  } else {
    const int downs = log2_exact(img[0] / entry[0]);
    for (int k = 0; k < downs; ++k) downs_.emplace_back(kCondWidth, kCondWidth, 3, 2, rng);
    out_channels = static_cast<int>(entry[2]);
  }
  proj_ = Conv2d::zeros(kCondWidth, out_channels, 1);
}

Tensor ConditionEmbedder::forward(Tape& tape, const Tensor& cond_image) const {
  Tensor h = ops::silu(tape, conv1_.forward(tape, cond_image));
  h = ops::silu(tape, conv2_.forward(tape, h));
  for (const auto& d : downs_) h = ops::silu(tape, d.forward(tape, h));
  h = proj_.forward(tape, h);
  return patch_ > 0 ? patchify(tape, h, patch_) : h;
}

void ConditionEmbedder::visit(const std::string& prefix, const ParamVisitor& fn) {
  conv1_.visit(join_path(prefix, "conv1"), fn);
  conv2_.visit(join_path(prefix, "conv2"), fn);
  for (std::size_t k = 0; k < downs_.size(); ++k) downs_[k].visit(join_path(prefix, "down." + std::to_string(k)), fn);
  proj_.visit(join_path(prefix, "proj"), fn);
}

AdaptedModel::AdaptedModel(const Backbone& base, const AdapterConfig& cfg, CounterRng& rng) : cfg_(cfg), base_(base) {
  validate(cfg_);
  if (cfg_.backbone != base_.kind()) throw ConfigError("adapter config names a different backbone than the base");
  set_trainable(base_, false);
  selected_ = select_blocks(cfg_.topology, base_.num_blocks());

  cond_ = base_.conditioning().clone();
  set_tag(*cond_, ComponentTag::adapter);
  set_trainable(*cond_, true);
  for (int i : selected_) {
    auto b = base_.block(i).clone();
    if (!cfg_.keep_cross_attention) b->remove_cross_attention();
    set_tag(*b, ComponentTag::adapter);
    set_trainable(*b, true);
    blocks_.push_back(std::move(b));

    auto c = make_connector(cfg_.connector, cfg_.backbone, static_cast<int>(base_.block_output_shape(i).back()));
    set_tag(*c, ComponentTag::connector);
    connectors_.push_back(std::move(c));
  }
  if (cfg_.flow == FlowMode::unidirectional) {
    head_ = base_.head().clone();
    set_tag(*head_, ComponentTag::adapter);
    set_trainable(*head_, true);
  }
  cond_embedder_ = ConditionEmbedder(base_, selected_.front(), rng);
  set_tag(cond_embedder_, ComponentTag::cond_embedder);
  assign_names(*this);
}

std::int64_t AdaptedModel::controller_parameter_count() const {
  std::int64_t n = parameter_count(*cond_);
  for (const auto& b : blocks_) n += parameter_count(*b);
  if (head_) n += parameter_count(*head_);
  return n;
}

namespace {

void check_condition(const Backbone& base, const Tensor& x_t, const ConditioningInputs& cond) {
  base.check_inputs(x_t, cond);
  const Shape& img = base.image_shape();
  const Shape want = {x_t.dim(0), img[0], img[1], 1};
  if (!cond.cond_image.defined()) throw ShapeError("adapter: condition image missing");
  if (cond.cond_image.shape() != want) {
    throw ShapeError("adapter: condition image must be " + to_string(want) + ", got " +
                     to_string(cond.cond_image.shape()));
  }
}

// History for a controller block: its own stream where it exists, else the base stream.
std::vector<Tensor> mixed_history(const std::vector<Tensor>& c_hist, const std::vector<Tensor>& x_hist, int i) {
  std::vector<Tensor> out(i);
  for (int k = 0; k < i; ++k) out[k] = c_hist[k].defined() ? c_hist[k] : x_hist[k];
  return out;
}

}  // namespace

AdaptedOutput AdaptedModel::run_bidirectional(Tape& tape, const Tensor& x_t, const ConditioningInputs& cond) const {
  const int n = base_.num_blocks();
  const int e = selected_.front();
  std::vector<Tensor> x_hist(n), c_hist(n);
  Conditioning emb;
  Tensor x;
  {
    TagScope scope(tape, ComponentTag::base);
    emb = base_.conditioning().forward(tape, cond.timesteps, cond.labels);
    x = base_.embedder().forward(tape, x_t);
    for (int i = 0; i < e; ++i) {
      x = base_.block(i).forward(tape, x, emb, std::span(x_hist.data(), i));
      x_hist[i] = x;
    }
  }
  Conditioning emb_c;
  Tensor c;
  {
    TagScope scope(tape, ComponentTag::cond_embedder);
    c = cond_embedder_.forward(tape, cond.cond_image);
  }
  {
    TagScope scope(tape, ComponentTag::adapter);
    emb_c = cond_->forward(tape, cond.timesteps, cond.labels);
    Tensor injected = ops::add(tape, x, c);
    if (cfg_.controller_sees_input) c = ops::add(tape, c, x);
    x = injected;
  }
  std::size_t j = 0;
  for (int i = e; i < n; ++i) {
    {
      TagScope scope(tape, ComponentTag::base);
      x = base_.block(i).forward(tape, x, emb, std::span(x_hist.data(), i));
    }
    if (j < selected_.size() && selected_[j] == i) {
      const auto hist = mixed_history(c_hist, x_hist, i);
      {
        TagScope scope(tape, ComponentTag::adapter);
        c = blocks_[j]->forward(tape, c, emb_c, hist);
      }
      {
        TagScope scope(tape, ComponentTag::connector);
        x = connector_forward(*connectors_[j], tape, c, x, base_.block(i).attention());
      }
      c_hist[i] = c;
      ++j;
    }
    x_hist[i] = x;
  }
  AdaptedOutput out;
  {
    TagScope scope(tape, ComponentTag::base);
    out.eps = base_.head().forward(tape, x, emb);
  }
  out.controller_stream = c;
  return out;
}

AdaptedOutput AdaptedModel::run_unidirectional(Tape& tape, const Tensor& x_t, const ConditioningInputs& cond) const {
  const int n = base_.num_blocks();
  const int e = selected_.front();
  const int last = selected_.back();
  std::vector<Tensor> x_hist(n), c_hist(n);
  Conditioning emb;
  Tensor x;
  {
    TagScope scope(tape, ComponentTag::base);
    NoGradGuard no_grad(tape);
    emb = base_.conditioning().forward(tape, cond.timesteps, cond.labels);
    x = base_.embedder().forward(tape, x_t);
    for (int i = 0; i < e; ++i) {
      x = base_.block(i).forward(tape, x, emb, std::span(x_hist.data(), i));
      x_hist[i] = x;
    }
  }
  Conditioning emb_c;
  Tensor c;
  {
    TagScope scope(tape, ComponentTag::cond_embedder);
    c = cond_embedder_.forward(tape, cond.cond_image);
  }
  {
    TagScope scope(tape, ComponentTag::adapter);
    emb_c = cond_->forward(tape, cond.timesteps, cond.labels);
    c = ops::add(tape, c, ops::detach(x));
  }
  std::size_t j = 0;
  for (int i = e; i <= last; ++i) {
    if (!(cfg_.drop_base_decoder && i >= n / 2)) {
      TagScope scope(tape, ComponentTag::base);
      NoGradGuard no_grad(tape);
      x = ops::detach(base_.block(i).forward(tape, x, emb, std::span(x_hist.data(), i)));
      x_hist[i] = x;
    }
    if (selected_[j] == i) {
      const auto hist = mixed_history(c_hist, x_hist, i);
      {
        TagScope scope(tape, ComponentTag::adapter);
        c = blocks_[j]->forward(tape, c, emb_c, hist);
      }
      {
        TagScope scope(tape, ComponentTag::connector);
        c = connector_forward(*connectors_[j], tape, x, c, blocks_[j]->attention());
      }
      c_hist[i] = c;
      ++j;
    }
  }
  AdaptedOutput out;
  {
    TagScope scope(tape, ComponentTag::adapter);
    out.eps = head_->forward(tape, c, emb_c);
  }
  out.controller_stream = c;
  return out;
}

AdaptedOutput AdaptedModel::forward(Tape& tape, const Tensor& x_t, const ConditioningInputs& cond) const {
  check_condition(base_, x_t, cond);
  return cfg_.flow == FlowMode::bidirectional ? run_bidirectional(tape, x_t, cond)
                                              : run_unidirectional(tape, x_t, cond);
}

Tensor AdaptedModel::controlnet_forward(Tape& tape, const Tensor& x_t, const ConditioningInputs& cond) const {
  if (cfg_.flow != FlowMode::bidirectional) throw ConfigError("controlnet_forward on a unidirectional adapter");
  return forward(tape, x_t, cond).eps;
}

Tensor AdaptedModel::unicon_forward(Tape& tape, const Tensor& x_t, const ConditioningInputs& cond) const {
  if (cfg_.flow != FlowMode::unidirectional) throw ConfigError("unicon_forward on a bidirectional adapter");
  return forward(tape, x_t, cond).eps;
}

Tensor AdaptedModel::predict_eps(Tape& tape, const Tensor& x_t, const ConditioningInputs& cond) const {
  return forward(tape, x_t, cond).eps;
}

void AdaptedModel::visit_controller(const std::string& prefix, const ParamVisitor& fn) {
  cond_->visit(join_path(prefix, "cond"), fn);
  for (std::size_t j = 0; j < blocks_.size(); ++j) {
    blocks_[j]->visit(join_path(prefix, "blocks." + std::to_string(j)), fn);
  }
  if (head_) head_->visit(join_path(prefix, "head"), fn);
}

void AdaptedModel::visit(const std::string& prefix, const ParamVisitor& fn) {
  base_.visit(join_path(prefix, "base"), fn);
  visit_controller(join_path(prefix, "controller"), fn);
  for (std::size_t j = 0; j < connectors_.size(); ++j) {
    connectors_[j]->visit(join_path(prefix, "connectors." + std::to_string(j)), fn);
  }
  cond_embedder_.visit(join_path(prefix, "cond_embedder"), fn);
}

AdaptedModel build_adapter(const Backbone& base, const AdapterConfig& cfg, CounterRng& rng) {
  return AdaptedModel(base, cfg, rng);
}

}  // namespace unicon
