#include "unicon/dit.hpp"

#include <cmath>

#include "unicon/ops.hpp"

namespace unicon {

Tensor patchify(Tape& tape, const Tensor& x, int patch) {
  const auto B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (H % patch != 0 || W % patch != 0) throw ShapeError("patchify: " + to_string(x.shape()) + " not divisible");
  const auto gh = H / patch, gw = W / patch;
  Tensor t = ops::reshape(tape, x, {B, gh, patch, gw, patch, C});
  t = ops::transpose(tape, t, {0, 1, 3, 2, 4, 5});
  return ops::reshape(tape, t, {B, gh * gw, patch * patch * C});
}

Tensor unpatchify(Tape& tape, const Tensor& tokens, int patch, int channels) {
  const auto B = tokens.dim(0), T = tokens.dim(1);
  const auto g = static_cast<std::int64_t>(std::lround(std::sqrt(static_cast<double>(T))));
  if (g * g != T || tokens.dim(2) != std::int64_t(patch) * patch * channels) {
    throw ShapeError("unpatchify: unexpected token shape " + to_string(tokens.shape()));
  }
  Tensor t = ops::reshape(tape, tokens, {B, g, g, patch, patch, channels});
  t = ops::transpose(tape, t, {0, 1, 3, 2, 4, 5});
  return ops::reshape(tape, t, {B, g * patch, g * patch, channels});
}

Tensor multi_head_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
  const auto B = q.dim(0), Tq = q.dim(1), D = q.dim(2), Tk = k.dim(1);
  if (D % heads != 0) throw ShapeError("attention: width not divisible by heads");
  const auto hd = D / heads;
  Tensor qh = ops::transpose(tape, ops::reshape(tape, q, {B, Tq, heads, hd}), {0, 2, 1, 3});
  Tensor kt = ops::transpose(tape, ops::reshape(tape, k, {B, Tk, heads, hd}), {0, 2, 3, 1});
  Tensor vh = ops::transpose(tape, ops::reshape(tape, v, {B, Tk, heads, hd}), {0, 2, 1, 3});
  Tensor scores = ops::scale(tape, ops::matmul(tape, qh, kt), 1.0f / std::sqrt(static_cast<float>(hd)));
  Tensor o = ops::matmul(tape, ops::softmax(tape, scores), vh);
  return ops::reshape(tape, ops::transpose(tape, o, {0, 2, 1, 3}), {B, Tq, D});
}

SelfAttention::SelfAttention(int dim, int heads, CounterRng& rng)
    : qkv_(dim, 3 * dim, rng), out_(dim, dim, rng), heads_(heads) {}

Tensor SelfAttention::forward(Tape& tape, const Tensor& h) const {
  const auto D = h.dim(-1);
  Tensor qkv = qkv_.forward(tape, h);
  Tensor q = ops::slice(tape, qkv, 2, 0, D);
  Tensor k = ops::slice(tape, qkv, 2, D, D);
  Tensor v = ops::slice(tape, qkv, 2, 2 * D, D);
  return out_.forward(tape, multi_head_attention(tape, q, k, v, heads_));
}

Tensor SelfAttention::project(Tape& tape, const Tensor& h, int first, int count) const {
  const int D = dim();
  Tensor w = ops::slice(tape, qkv_.weight.use(tape), 1, first * D, count * D);
  Tensor b = ops::slice(tape, qkv_.bias.use(tape), 0, first * D, count * D);
  return ops::add(tape, ops::matmul(tape, h, w), b);
}

Tensor SelfAttention::attend(Tape& tape, const Tensor& query_from, const Tensor& kv_from) const {
  const auto D = query_from.dim(-1);
  Tensor q = project(tape, query_from, 0, 1);
  Tensor kv = project(tape, kv_from, 1, 2);
  Tensor k = ops::slice(tape, kv, 2, 0, D);
  Tensor v = ops::slice(tape, kv, 2, D, D);
  return out_.forward(tape, multi_head_attention(tape, q, k, v, heads_));
}

SelfAttention SelfAttention::copy() const {
  SelfAttention a;
  a.qkv_ = qkv_.copy();
  a.out_ = out_.copy();
  a.heads_ = heads_;
  return a;
}

void SelfAttention::visit(const std::string& prefix, const ParamVisitor& fn) {
  qkv_.visit(join_path(prefix, "qkv"), fn);
  out_.visit(join_path(prefix, "out"), fn);
}

CrossAttention::CrossAttention(int dim, int heads, CounterRng& rng)
    : q_(dim, dim, rng), kv_(dim, 2 * dim, rng), out_(dim, dim, rng), heads_(heads) {}

Tensor CrossAttention::forward(Tape& tape, const Tensor& h, const Tensor& context) const {
  const auto D = h.dim(-1);
  Tensor q = q_.forward(tape, h);
  Tensor kv = kv_.forward(tape, context);
  Tensor k = ops::slice(tape, kv, 2, 0, D);
  Tensor v = ops::slice(tape, kv, 2, D, D);
  return out_.forward(tape, multi_head_attention(tape, q, k, v, heads_));
}

CrossAttention CrossAttention::copy() const {
  CrossAttention a;
  a.q_ = q_.copy();
  a.kv_ = kv_.copy();
  a.out_ = out_.copy();
  a.heads_ = heads_;
  return a;
}

void CrossAttention::visit(const std::string& prefix, const ParamVisitor& fn) {
  q_.visit(join_path(prefix, "q"), fn);
  kv_.visit(join_path(prefix, "kv"), fn);
  out_.visit(join_path(prefix, "out"), fn);
}

DiTBlock::DiTBlock(const TinyDiTConfig& cfg, CounterRng& rng)
    : ada_(cfg.hidden, cfg.hidden, rng),
      attn_(cfg.hidden, cfg.heads, rng),
      xattn_(CrossAttention(cfg.hidden, cfg.heads, rng)),
      fc1_(cfg.hidden, cfg.mlp_ratio * cfg.hidden, rng),
      fc2_(cfg.mlp_ratio * cfg.hidden, cfg.hidden, rng) {}

// x += attn(ln(x) + s); x += xattn(ln(x), ctx); x += mlp(ln(x) + s),
// with s = ada(silu(t_emb)) broadcast over tokens.
Tensor DiTBlock::forward(Tape& tape, const Tensor& x, const Conditioning& cond, std::span<const Tensor>) const {
  const auto B = x.dim(0), D = x.dim(2);
  Tensor shift = ops::reshape(tape, ada_.forward(tape, ops::silu(tape, cond.t_emb)), {B, 1, D});
  Tensor h = ops::add(tape, ops::layer_norm(tape, x), shift);
  Tensor out = ops::add(tape, x, attn_.forward(tape, h));
  if (xattn_) {
    if (!cond.context.defined()) throw Error("DiT block: cross-attention needs context tokens");
    out = ops::add(tape, out, xattn_->forward(tape, ops::layer_norm(tape, out), cond.context));
  }
  h = ops::add(tape, ops::layer_norm(tape, out), shift);
  h = fc2_.forward(tape, ops::gelu(tape, fc1_.forward(tape, h)));
  return ops::add(tape, out, h);
}

std::unique_ptr<Block> DiTBlock::clone() const {
  std::unique_ptr<DiTBlock> b(new DiTBlock());
  b->ada_ = ada_.copy();
  b->attn_ = attn_.copy();
  if (xattn_) b->xattn_ = xattn_->copy();
  b->fc1_ = fc1_.copy();
  b->fc2_ = fc2_.copy();
  return b;
}

void DiTBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
  ada_.visit(join_path(prefix, "ada"), fn);
  attn_.visit(join_path(prefix, "attn"), fn);
  if (xattn_) xattn_->visit(join_path(prefix, "xattn"), fn);
  fc1_.visit(join_path(prefix, "fc1"), fn);
  fc2_.visit(join_path(prefix, "fc2"), fn);
}

namespace {

// Fixed 2D sin-cos position table, [T, D].
Tensor position_table(int grid, int dim) {
  Tensor t({std::int64_t(grid) * grid, dim});
  const int quarter = dim / 4;
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx) {
      float* row = t.data() + (std::int64_t(gy) * grid + gx) * dim;
      for (int k = 0; k < quarter; ++k) {
        const double freq = 1.0 / std::pow(10000.0, static_cast<double>(k) / quarter);
        row[k] = static_cast<float>(std::sin(gy * freq));
        row[quarter + k] = static_cast<float>(std::cos(gy * freq));
        row[2 * quarter + k] = static_cast<float>(std::sin(gx * freq));
        row[3 * quarter + k] = static_cast<float>(std::cos(gx * freq));
      }
    }
  return t;
}

class PatchEmbed : public ImageEmbedder {
 public:
  PatchEmbed(const TinyDiTConfig& cfg, CounterRng& rng)
      : proj_(cfg.patch * cfg.patch * cfg.channels, cfg.hidden, rng),
        pos_(position_table(cfg.image_size / cfg.patch, cfg.hidden)),
        patch_(cfg.patch) {}

  Tensor forward(Tape& tape, const Tensor& x_t) const override {
    return ops::add(tape, proj_.forward(tape, patchify(tape, x_t, patch_)), pos_);
  }
  std::unique_ptr<ImageEmbedder> clone() const override {
    auto p = std::make_unique<PatchEmbed>(*this);
    p->proj_ = proj_.copy();
    return p;
  }
  void visit(const std::string& prefix, const ParamVisitor& fn) override { proj_.visit(join_path(prefix, "proj"), fn); }

 private:
  Linear proj_;
  Tensor pos_;
  int patch_;
};

// t_emb from the timestep only; the label reaches the blocks as context
// tokens for cross-attention.
class DiTConditioning : public ConditioningEmbedder {
 public:
  DiTConditioning(const TinyDiTConfig& cfg, CounterRng& rng)
      : t1_(cfg.time_dim, cfg.hidden, rng),
        t2_(cfg.hidden, cfg.hidden, rng),
        table_(rng.normal_tensor({cfg.classes, cfg.context_tokens * cfg.hidden})),
        time_dim_(cfg.time_dim),
        tokens_(cfg.context_tokens),
        hidden_(cfg.hidden) {}

  Conditioning forward(Tape& tape, std::span<const int> timesteps, std::span<const int> labels) const override {
    Conditioning c;
    const Tensor f = timestep_features(timesteps, time_dim_);
    c.t_emb = t2_.forward(tape, ops::silu(tape, t1_.forward(tape, f)));
    const auto classes = static_cast<int>(table_.value.dim(0));
    Tensor ctx = ops::matmul(tape, one_hot(labels, classes), table_.use(tape));
    c.context = ops::reshape(tape, ctx, {static_cast<std::int64_t>(labels.size()), tokens_, hidden_});
    return c;
  }
  std::unique_ptr<ConditioningEmbedder> clone() const override {
    auto p = std::make_unique<DiTConditioning>(*this);
    p->t1_ = t1_.copy();
    p->t2_ = t2_.copy();
    p->table_ = table_.copy();
    return p;
  }
  void visit(const std::string& prefix, const ParamVisitor& fn) override {
    t1_.visit(join_path(prefix, "t1"), fn);
    t2_.visit(join_path(prefix, "t2"), fn);
    fn(join_path(prefix, "label_tokens"), table_);
  }

 private:
  Linear t1_, t2_;
  Parameter table_;
  int time_dim_, tokens_, hidden_;
};

class DiTHead : public OutputHead {
 public:
  DiTHead(const TinyDiTConfig& cfg, CounterRng& rng)
      : ada_(cfg.hidden, cfg.hidden, rng),
        proj_(cfg.hidden, cfg.patch * cfg.patch * cfg.channels, rng),
        patch_(cfg.patch),
        channels_(cfg.channels) {}

  Tensor forward(Tape& tape, const Tensor& x, const Conditioning& cond) const override {
    const auto B = x.dim(0), D = x.dim(2);
    Tensor shift = ops::reshape(tape, ada_.forward(tape, ops::silu(tape, cond.t_emb)), {B, 1, D});
    Tensor h = ops::add(tape, ops::layer_norm(tape, x), shift);
    return unpatchify(tape, proj_.forward(tape, h), patch_, channels_);
  }
  std::unique_ptr<OutputHead> clone() const override {
    auto p = std::make_unique<DiTHead>(*this);
    p->ada_ = ada_.copy();
    p->proj_ = proj_.copy();
    return p;
  }
  void visit(const std::string& prefix, const ParamVisitor& fn) override {
    ada_.visit(join_path(prefix, "ada"), fn);
    proj_.visit(join_path(prefix, "proj"), fn);
  }

 private:
  Linear ada_, proj_;
  int patch_, channels_;
};

}  // namespace

Backbone make_tiny_dit(const TinyDiTConfig& cfg, CounterRng& rng) {
  if (cfg.blocks <= 0 || cfg.blocks % 2 != 0) throw Error("TinyDiT: block count must be even");
  if (cfg.image_size % cfg.patch != 0) throw Error("TinyDiT: image size not divisible by patch");
  if (cfg.hidden % cfg.heads != 0 || cfg.hidden % 4 != 0) throw Error("TinyDiT: hidden width incompatible with heads");
  BackboneParts parts;
  parts.embed = std::make_unique<PatchEmbed>(cfg, rng);
  parts.cond = std::make_unique<DiTConditioning>(cfg, rng);
  for (int i = 0; i < cfg.blocks; ++i) parts.blocks.push_back(std::make_unique<DiTBlock>(cfg, rng));
  parts.head = std::make_unique<DiTHead>(cfg, rng);
  const std::int64_t tokens = std::int64_t(cfg.image_size / cfg.patch) * (cfg.image_size / cfg.patch);
  std::vector<Shape> inputs(cfg.blocks + 1, Shape{tokens, cfg.hidden});
  Backbone b(BackboneKind::dit, std::move(parts), {cfg.image_size, cfg.image_size, cfg.channels}, std::move(inputs),
             cfg.heads);
  set_tag(b, ComponentTag::base);
  assign_names(b);
  return b;
}

}  // namespace unicon
