#include "unicon/tape.hpp"

#include "unicon/ops.hpp"

namespace unicon {

std::string_view tag_name(ComponentTag tag) {
  switch (tag) {
    case ComponentTag::base: return "base";
    case ComponentTag::adapter: return "adapter";
    case ComponentTag::connector: return "connector";
    case ComponentTag::cond_embedder: return "cond-embedder";
    case ComponentTag::other: return "other";
  }
  return "other";
}

ComponentTag parse_tag(std::string_view name) {
  for (auto tag : kAllTags) {
    if (tag_name(tag) == name) return tag;
  }
  throw Error("unknown component tag '" + std::string(name) + "'");
}

std::string_view primitive_name(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::leaf: return "leaf";
    case PrimitiveKind::matmul: return "matmul";
    case PrimitiveKind::conv2d: return "conv2d";
    case PrimitiveKind::upsample: return "upsample";
    case PrimitiveKind::add: return "add";
    case PrimitiveKind::mul: return "mul";
    case PrimitiveKind::scale: return "scale";
    case PrimitiveKind::layer_norm: return "layer_norm";
    case PrimitiveKind::group_norm: return "group_norm";
    case PrimitiveKind::softmax: return "softmax";
    case PrimitiveKind::gelu: return "gelu";
    case PrimitiveKind::silu: return "silu";
    case PrimitiveKind::reshape: return "reshape";
    case PrimitiveKind::transpose: return "transpose";
    case PrimitiveKind::concat: return "concat";
    case PrimitiveKind::slice: return "slice";
    case PrimitiveKind::mean: return "mean";
    case PrimitiveKind::mse: return "mse";
  }
  return "unknown";
}

std::uint64_t FlopLedger::forward_total() const {
  std::uint64_t total = 0;
  for (auto f : forward) total += f;
  return total;
}

std::uint64_t FlopLedger::backward_total() const {
  std::uint64_t total = 0;
  for (auto f : backward) total += f;
  return total;
}

bool Tape::needs_grad(const Tensor& t) const {
  if (!t.has_node()) return false;
  if (t.tape() != this) throw Error("tensor was recorded on a different tape");
  return true;
}

Tensor Tape::record(PrimitiveKind kind, std::span<const Tensor* const> inputs, Tensor value,
                    std::vector<Tensor> saved, OpAttrs attrs, std::uint64_t flops) {
  flops_.forward[index_of(tag_)] += flops;
  if (!recording_) return value;
  bool any = false;
  for (const Tensor* in : inputs) any = needs_grad(*in) || any;
  if (!any) return value;

  const int id = static_cast<int>(nodes_.size());
  Node node;
  node.kind = kind;
  node.tag = tag_;
  node.inputs.reserve(inputs.size());
  node.input_shapes.reserve(inputs.size());
  for (const Tensor* in : inputs) {
    node.inputs.push_back(in->has_node() ? in->node() : -1);
    node.input_shapes.push_back(in->shape());
  }
  node.output_shape = value.shape();
  node.attrs = std::move(attrs);
  node.forward_flops = flops;
  for (auto& s : saved) {
    if (s.defined() && !s.is_parameter_storage()) saved_.push_back({s.bytes(), tag_, id});
  }
  node.saved = std::move(saved);
  nodes_.push_back(std::move(node));
  flops_.backward[index_of(tag_)] += 2 * flops;

  value.tape_ = this;
  value.node_ = id;
  return value;
}

Tensor Tape::leaf(const Parameter& param) {
  Tensor t = param.value.detached();
  t.parameter_storage_ = true;
  if (!recording_) return t;
  auto it = leaves_.find(&param);
  int id;
  if (it != leaves_.end()) {
    id = it->second;
  } else {
    id = static_cast<int>(nodes_.size());
    Node node;
    node.kind = PrimitiveKind::leaf;
    node.tag = param.tag;
    node.output_shape = param.value.shape();
    node.parameter = &param;
    nodes_.push_back(std::move(node));
    leaves_.emplace(&param, id);
  }
  t.tape_ = this;
  t.node_ = id;
  return t;
}

Parameter::Parameter(Tensor init, ComponentTag tag_, bool trainable_)
    : value(std::move(init)), tag(tag_), trainable(trainable_) {}

Tensor Parameter::use(Tape& tape) const {
  if (trainable && tape.recording()) return tape.leaf(*this);
  return value.detached().as_parameter_storage();
}

Parameter Parameter::copy() const {
  Parameter p;
  p.name = name;
  p.value = value.clone();
  p.tag = tag;
  p.trainable = trainable;
  return p;
}

GradientMap backward(const Tape& tape, const Tensor& loss, BackwardStats* stats) {
  if (loss.numel() != 1) throw ShapeError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  if (!tape.needs_grad(loss)) throw Error("loss is not recorded on the tape");

  const auto& nodes = tape.nodes();
  std::vector<Tensor> grads(nodes.size());
  std::vector<bool> owned(nodes.size(), false);
  grads[loss.node()] = Tensor::full(loss.shape(), 1.0f);
  owned[loss.node()] = true;

  GradientMap result;
  for (int i = loss.node(); i >= 0; --i) {
    if (!grads[i].defined()) continue;
    const Node& node = nodes[i];
    if (node.kind == PrimitiveKind::leaf) {
      if (node.parameter != nullptr && node.parameter->trainable) {
        result[node.parameter->name] = owned[i] ? grads[i] : grads[i].clone();
      }
      continue;
    }
    if (stats != nullptr) {
      stats->nodes_reached[index_of(node.tag)] += 1;
      stats->activation_gradient_bytes[index_of(node.tag)] += grads[i].bytes();
    }
    std::vector<Tensor> input_grads = ops::detail::backward_rule(node, grads[i]);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const int j = node.inputs[k];
      if (j < 0 || !input_grads[k].defined()) continue;
      if (!grads[j].defined()) {
        grads[j] = input_grads[k].view(nodes[j].output_shape);
        owned[j] = false;
      } else {
        if (!owned[j]) {
          grads[j] = grads[j].clone();
          owned[j] = true;
        }
        grads[j].array() += input_grads[k].array();
      }
    }
    grads[i] = Tensor();
  }
  return result;
}

TapeReport tape_report(const Tape& tape) {
  TapeReport report;
  for (const auto& entry : tape.saved()) {
    report.saved_bytes[index_of(entry.tag)] += entry.bytes;
    report.total_saved_bytes += entry.bytes;
  }
  for (const auto& node : tape.nodes()) report.node_count[index_of(node.tag)] += 1;
  return report;
}

}  // namespace unicon
