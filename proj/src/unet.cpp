#include "unicon/unet.hpp"

#include "unicon/ops.hpp"

namespace unicon {

ResBlock::ResBlock(int in_channels, int out_channels, int time_dim, int groups, CounterRng& rng)
    : conv1_(in_channels, out_channels, 3, 1, rng),
      conv2_(out_channels, out_channels, 3, 1, rng),
      time_(time_dim, out_channels, rng),
      groups_(groups) {
  if (in_channels != out_channels) shortcut_ = Conv2d(in_channels, out_channels, 1, 1, rng);
}

Tensor ResBlock::forward(Tape& tape, const Tensor& x, const Tensor& t_emb) const {
  const std::int64_t B = x.dim(0), C = conv1_.out_channels();
  Tensor h = conv1_.forward(tape, ops::silu(tape, ops::group_norm(tape, x, groups_)));
  Tensor shift = ops::reshape(tape, time_.forward(tape, ops::silu(tape, t_emb)), {B, 1, 1, C});
  h = ops::add(tape, h, shift);
  h = conv2_.forward(tape, ops::silu(tape, ops::group_norm(tape, h, groups_)));
  return ops::add(tape, shortcut_ ? shortcut_->forward(tape, x) : x, h);
}

ResBlock ResBlock::copy() const {
  ResBlock r;
  r.conv1_ = conv1_.copy();
  r.conv2_ = conv2_.copy();
  r.time_ = time_.copy();
  if (shortcut_) r.shortcut_ = shortcut_->copy();
  r.groups_ = groups_;
  return r;
}

void ResBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
  conv1_.visit(join_path(prefix, "conv1"), fn);
  time_.visit(join_path(prefix, "time"), fn);
  conv2_.visit(join_path(prefix, "conv2"), fn);
  if (shortcut_) shortcut_->visit(join_path(prefix, "shortcut"), fn);
}

UNetBlock::UNetBlock(Resample resample, int in_channels, int resampled_channels, int skip_from, int skip_channels,
                     int out_channels, int time_dim, int groups, CounterRng& rng)
    : resample_(resample), skip_from_(skip_from) {
  if (resample == Resample::down) resample_conv_ = Conv2d(in_channels, resampled_channels, 3, 2, rng);
  if (resample == Resample::up) resample_conv_ = Conv2d(in_channels, resampled_channels, 3, 1, rng);
  const int width = (resample == Resample::none ? in_channels : resampled_channels) + (skip_from >= 0 ? skip_channels : 0);
  res_ = ResBlock(width, out_channels, time_dim, groups, rng);
}

Tensor UNetBlock::forward(Tape& tape, const Tensor& x, const Conditioning& cond,
                          std::span<const Tensor> history) const {
  Tensor h = x;
  if (resample_ == Resample::up) h = ops::upsample_nearest(tape, h, 2);
  if (resample_conv_) h = resample_conv_->forward(tape, h);
  if (skip_from_ >= 0) {
    if (skip_from_ >= static_cast<int>(history.size())) throw Error("U-Net block: skip source not computed yet");
    const Tensor parts[] = {h, history[skip_from_]};
    h = ops::concat(tape, parts, 3);
  }
  return res_.forward(tape, h, cond.t_emb);
}

std::unique_ptr<Block> UNetBlock::clone() const {
  std::unique_ptr<UNetBlock> b(new UNetBlock());
  b->resample_ = resample_;
  if (resample_conv_) b->resample_conv_ = resample_conv_->copy();
  b->skip_from_ = skip_from_;
  b->res_ = res_.copy();
  return b;
}

void UNetBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
  if (resample_conv_) resample_conv_->visit(join_path(prefix, "resample"), fn);
  res_.visit(join_path(prefix, "res"), fn);
}

namespace {

class ConvIn : public ImageEmbedder {
 public:
  ConvIn(int channels, int width, CounterRng& rng) : conv_(channels, width, 3, 1, rng) {}
  Tensor forward(Tape& tape, const Tensor& x_t) const override { return conv_.forward(tape, x_t); }
  std::unique_ptr<ImageEmbedder> clone() const override {
    auto p = std::make_unique<ConvIn>(*this);
    p->conv_ = conv_.copy();
    return p;
  }
  void visit(const std::string& prefix, const ParamVisitor& fn) override { conv_.visit(join_path(prefix, "conv"), fn); }

 private:
  Conv2d conv_;
};

// t_emb = mlp(sinusoid(t)) + label_table[label]
class UNetConditioning : public ConditioningEmbedder {
 public:
  UNetConditioning(const TinyUNetConfig& cfg, CounterRng& rng)
      : t1_(cfg.time_dim, cfg.time_dim, rng),
        t2_(cfg.time_dim, cfg.time_dim, rng),
        table_(rng.normal_tensor({cfg.classes, cfg.time_dim})),
        time_dim_(cfg.time_dim) {}

  Conditioning forward(Tape& tape, std::span<const int> timesteps, std::span<const int> labels) const override {
    Conditioning c;
    const Tensor f = timestep_features(timesteps, time_dim_);
    Tensor t = t2_.forward(tape, ops::silu(tape, t1_.forward(tape, f)));
    const auto classes = static_cast<int>(table_.value.dim(0));
    c.t_emb = ops::add(tape, t, ops::matmul(tape, one_hot(labels, classes), table_.use(tape)));
    return c;
  }
  std::unique_ptr<ConditioningEmbedder> clone() const override {
    auto p = std::make_unique<UNetConditioning>(*this);
    p->t1_ = t1_.copy();
    p->t2_ = t2_.copy();
    p->table_ = table_.copy();
    return p;
  }
  void visit(const std::string& prefix, const ParamVisitor& fn) override {
    t1_.visit(join_path(prefix, "t1"), fn);
    t2_.visit(join_path(prefix, "t2"), fn);
    fn(join_path(prefix, "label_table"), table_);
  }

 private:
  Linear t1_, t2_;
  Parameter table_;
  int time_dim_;
};

class UNetHead : public OutputHead {
 public:
  UNetHead(int width, int channels, int groups, CounterRng& rng) : conv_(width, channels, 3, 1, rng), groups_(groups) {}
  Tensor forward(Tape& tape, const Tensor& x, const Conditioning&) const override {
    return conv_.forward(tape, ops::silu(tape, ops::group_norm(tape, x, groups_)));
  }
  std::unique_ptr<OutputHead> clone() const override {
    auto p = std::make_unique<UNetHead>(*this);
    p->conv_ = conv_.copy();
    return p;
  }
  void visit(const std::string& prefix, const ParamVisitor& fn) override { conv_.visit(join_path(prefix, "conv"), fn); }

 private:
  Conv2d conv_;
  int groups_;
};

}  // namespace

Backbone make_tiny_unet(const TinyUNetConfig& cfg, CounterRng& rng) {
  const auto& w = cfg.widths;
  const int levels = static_cast<int>(w.size());
  if (levels < 1) throw Error("TinyUNet: need at least one level");
  if (cfg.image_size % (1 << (levels - 1)) != 0) throw Error("TinyUNet: image size not divisible by level count");
  for (int c : w)
    if (c % cfg.groups != 0) throw Error("TinyUNet: widths must be divisible by the group count");

  using R = UNetBlock::Resample;
  BackboneParts parts;
  parts.embed = std::make_unique<ConvIn>(cfg.channels, w[0], rng);
  parts.cond = std::make_unique<UNetConditioning>(cfg, rng);
  std::vector<Shape> inputs;
  int size = cfg.image_size;
  // Encoder: level 0 keeps resolution, deeper levels halve it first.
  int prev = w[0];
  for (int i = 0; i < levels; ++i) {
    inputs.push_back({size, size, prev});
    if (i > 0) size /= 2;
    parts.blocks.push_back(std::make_unique<UNetBlock>(i == 0 ? R::none : R::down, prev, w[i], -1, 0, w[i],
                                                       cfg.time_dim, cfg.groups, rng));
    prev = w[i];
  }
  // Decoder: block n-1-i reads the output of encoder block i.
  for (int j = levels - 1; j >= 0; --j) {
    inputs.push_back({size, size, prev});
    const bool up = j < levels - 1;
    if (up) size *= 2;
    parts.blocks.push_back(std::make_unique<UNetBlock>(up ? R::up : R::none, prev, w[j], j, w[j], w[j], cfg.time_dim,
                                                       cfg.groups, rng));
    prev = w[j];
  }
  inputs.push_back({size, size, prev});
  parts.head = std::make_unique<UNetHead>(w[0], cfg.channels, cfg.groups, rng);
  Backbone b(BackboneKind::unet, std::move(parts), {cfg.image_size, cfg.image_size, cfg.channels}, std::move(inputs),
             0);
  set_tag(b, ComponentTag::base);
  assign_names(b);
  return b;
}

}  // namespace unicon
