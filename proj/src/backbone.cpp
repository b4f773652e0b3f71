#include "unicon/backbone.hpp"

namespace unicon {

std::string_view backbone_name(BackboneKind kind) { return kind == BackboneKind::dit ? "dit" : "unet"; }

BackboneKind parse_backbone(std::string_view name) {
  if (name == "dit") return BackboneKind::dit;
  if (name == "unet") return BackboneKind::unet;
  throw Error("unknown backbone '" + std::string(name) + "'");
}

namespace {

BackboneParts clone_parts(const BackboneParts& p) {
  BackboneParts out;
  out.embed = p.embed->clone();
  out.cond = p.cond->clone();
  for (const auto& b : p.blocks) out.blocks.push_back(b->clone());
  out.head = p.head->clone();
  return out;
}

}  // namespace

Backbone::Backbone(BackboneKind kind, BackboneParts parts, Shape image_shape, std::vector<Shape> block_shapes,
                   int heads)
    : kind_(kind),
      parts_(std::move(parts)),
      image_shape_(std::move(image_shape)),
      block_shapes_(std::move(block_shapes)),
      heads_(heads) {
  if (block_shapes_.size() != parts_.blocks.size() + 1) {
    throw Error("backbone: expected one input shape per block plus the final output shape");
  }
}

Backbone::Backbone(const Backbone& other)
    : kind_(other.kind_),
      parts_(clone_parts(other.parts_)),
      image_shape_(other.image_shape_),
      block_shapes_(other.block_shapes_),
      heads_(other.heads_) {}

Backbone& Backbone::operator=(const Backbone& other) {
  if (this != &other) *this = Backbone(other);
  return *this;
}

void Backbone::check_inputs(const Tensor& x_t, const ConditioningInputs& cond) const {
  const Shape& s = x_t.shape();
  if (s.size() != 4 || !std::equal(image_shape_.begin(), image_shape_.end(), s.begin() + 1)) {
    throw ShapeError("backbone expects [B, " + to_string(image_shape_) + "] input, got " + to_string(s));
  }
  const auto batch = static_cast<std::size_t>(s[0]);
  if (cond.timesteps.size() != batch || cond.labels.size() != batch) {
    throw ShapeError("backbone: timesteps/labels must have one entry per batch item");
  }
}

BackboneOutput Backbone::forward(Tape& tape, const Tensor& x_t, const ConditioningInputs& cond, bool trace) const {
  check_inputs(x_t, cond);
  TagScope scope(tape, ComponentTag::base);
  const Conditioning emb = parts_.cond->forward(tape, cond.timesteps, cond.labels);
  Tensor x = parts_.embed->forward(tape, x_t);
  std::vector<Tensor> history;
  history.reserve(parts_.blocks.size());
  for (const auto& block : parts_.blocks) {
    x = block->forward(tape, x, emb, history);
    history.push_back(x);
  }
  BackboneOutput out;
  out.eps = parts_.head->forward(tape, x, emb);
  if (trace) out.trace = std::move(history);
  return out;
}

Tensor Backbone::predict_eps(Tape& tape, const Tensor& x_t, const ConditioningInputs& cond) const {
  return forward(tape, x_t, cond, false).eps;
}

void Backbone::visit(const std::string& prefix, const ParamVisitor& fn) {
  parts_.embed->visit(join_path(prefix, "embed"), fn);
  parts_.cond->visit(join_path(prefix, "cond"), fn);
  for (std::size_t i = 0; i < parts_.blocks.size(); ++i) {
    parts_.blocks[i]->visit(join_path(prefix, "blocks." + std::to_string(i)), fn);
  }
  parts_.head->visit(join_path(prefix, "head"), fn);
}

Backbone make_backbone(BackboneKind kind, CounterRng& rng) {
  return kind == BackboneKind::dit ? make_tiny_dit(TinyDiTConfig{}, rng) : make_tiny_unet(TinyUNetConfig{}, rng);
}

}  // namespace unicon
