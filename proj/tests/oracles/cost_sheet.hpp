#pragma once

// Per-layer cost spreadsheet for TinyDiT training rounds, written from the
// layer list and the per-primitive closed forms alone. Nothing here runs a
// kernel or touches a tape.
//
// Closed forms (forward FLOPs):
//   matmul 2*batch*m*k*n, conv 2*k*k*Cin*Cout*Hout*Wout*B, add/mul/scale/mean
//   1 per output element, layer_norm/group_norm 8, softmax 5, gelu 8, silu 4,
//   mse 3 per element, data movement 0.
// Backward FLOPs are 2x forward for every primitive with a live input.
// Saved bytes per live primitive: matmul/conv keep each operand whose partner
// is live unless it is parameter storage; mul keeps both the same way;
// layer_norm keeps y and one rstd per row; softmax keeps y; gelu/silu keep x;
// mse keeps the difference.

#include <array>
#include <cstdint>

namespace oracle {

enum Tag { kBase, kAdapter, kConnector, kCondEmbedder, kOther, kTags };

struct Act {
  std::int64_t numel = 0;
  bool live = false;
};

struct Costs {
  std::array<std::uint64_t, kTags> fp{}, bp{}, saved{}, weights{}, trainable{};

  std::uint64_t total(const std::array<std::uint64_t, kTags>& a) const {
    std::uint64_t s = 0;
    for (auto v : a) s += v;
    return s;
  }
};

class Sheet {
 public:
  Costs costs;
  Tag tag = kOther;
  bool recording = true;

  Act constant(std::int64_t numel) const { return {numel, false}; }

  Act row(std::int64_t out_numel, std::uint64_t flops, bool any_live, std::int64_t saved_elems) {
    costs.fp[tag] += flops;
    const bool live = recording && any_live;
    if (live) {
      costs.bp[tag] += 2 * flops;
      costs.saved[tag] += 4 * static_cast<std::uint64_t>(saved_elems);
    }
    return {out_numel, live};
  }

  // Registers a parameter; returns whether it is a live leaf in this pass.
  bool param(std::int64_t numel, bool trainable) {
    costs.weights[tag] += 4 * numel;
    if (trainable) costs.trainable[tag] += 4 * numel;
    return trainable && recording;
  }

  // Linear layer applied to [rows, in]; weight and bias are parameters.
  Act linear(Act x, std::int64_t rows, std::int64_t in, std::int64_t out, bool trainable) {
    const bool w = trainable && recording;
    Act y = row(rows * out, 2ull * rows * in * out, x.live || w, w ? x.numel : 0);
    return row(rows * out, rows * out, y.live || w, 0);
  }
  // Same-padded conv on [B, H, W, Cin] with square kernel.
  Act conv(Act x, std::int64_t b, std::int64_t h, std::int64_t w_, std::int64_t cin, std::int64_t cout, int k,
           int stride, bool trainable) {
    const bool w = trainable && recording;
    const std::int64_t ho = (h + stride - 1) / stride, wo = (w_ + stride - 1) / stride;
    const std::int64_t out = b * ho * wo * cout;
    Act y = row(out, 2ull * k * k * cin * cout * ho * wo * b, x.live || w, w ? x.numel : 0);
    return row(out, out, y.live || w, 0);
  }
  Act add(Act a, Act b) { return row(std::max(a.numel, b.numel), std::max(a.numel, b.numel), a.live || b.live, 0); }
  Act mul(Act a, Act b) {
    const auto n = std::max(a.numel, b.numel);
    return row(n, n, a.live || b.live, (b.live ? a.numel : 0) + (a.live ? b.numel : 0));
  }
  Act scale(Act x) { return row(x.numel, x.numel, x.live, 0); }
  Act layer_norm(Act x, std::int64_t cols) { return row(x.numel, 8ull * x.numel, x.live, x.numel + x.numel / cols); }
  Act softmax(Act x) { return row(x.numel, 5ull * x.numel, x.live, x.numel); }
  Act gelu(Act x) { return row(x.numel, 8ull * x.numel, x.live, x.numel); }
  Act silu(Act x) { return row(x.numel, 4ull * x.numel, x.live, x.numel); }
  Act move(Act x) { return row(x.numel, 0, x.live, 0); }
  // Activation-by-activation product [batch, m, k] x [batch, k, n].
  Act bmm(Act a, Act b, std::int64_t batch, std::int64_t m, std::int64_t k, std::int64_t n) {
    return row(batch * m * n, 2ull * batch * m * k * n, a.live || b.live,
               (b.live ? a.numel : 0) + (a.live ? b.numel : 0));
  }
  Act mse(Act a, Act b) { return row(1, 3ull * a.numel, a.live || b.live, a.numel); }
};

struct DiTShape {
  std::int64_t image = 32, channels = 1, patch = 4, hidden = 64, heads = 4, blocks = 8, time_dim = 64, classes = 8,
               context = 4, mlp = 4;
  std::int64_t tokens() const { return (image / patch) * (image / patch); }
};

struct DiTCond {
  Act t_emb, context;
};

inline DiTCond dit_conditioning(Sheet& s, const DiTShape& d, std::int64_t B, bool trainable) {
  Act f = s.constant(B * d.time_dim);
  s.param(d.time_dim * d.hidden + d.hidden, trainable);
  Act h = s.linear(f, B, d.time_dim, d.hidden, trainable);
  h = s.silu(h);
  s.param(d.hidden * d.hidden + d.hidden, trainable);
  Act t = s.linear(h, B, d.hidden, d.hidden, trainable);
  const bool table = s.param(d.classes * d.context * d.hidden, trainable);
  Act onehot = s.constant(B * d.classes);
  Act ctx = s.row(B * d.context * d.hidden, 2ull * B * d.classes * d.context * d.hidden, table,
                  table ? onehot.numel : 0);
  ctx = s.move(ctx);
  return {t, ctx};
}

inline Act dit_embed(Sheet& s, const DiTShape& d, std::int64_t B, bool trainable) {
  const auto T = d.tokens(), P = d.patch * d.patch * d.channels;
  Act x = s.constant(B * d.image * d.image * d.channels);
  x = s.move(s.move(s.move(x)));
  s.param(P * d.hidden + d.hidden, trainable);
  x = s.linear(x, B * T, P, d.hidden, trainable);
  return s.add(x, s.constant(T * d.hidden));
}

inline Act dit_attention_core(Sheet& s, const DiTShape& d, std::int64_t B, std::int64_t Tq, std::int64_t Tk, Act q,
                              Act k, Act v) {
  const auto H = d.heads, hd = d.hidden / d.heads;
  Act qh = s.move(s.move(q));
  Act kt = s.move(s.move(k));
  Act vh = s.move(s.move(v));
  Act scores = s.scale(s.bmm(qh, kt, B * H, Tq, hd, Tk));
  Act o = s.bmm(s.softmax(scores), vh, B * H, Tq, Tk, hd);
  return s.move(s.move(o));
}

inline Act dit_block(Sheet& s, const DiTShape& d, std::int64_t B, Act x, const DiTCond& c, bool trainable) {
  const auto T = d.tokens(), D = d.hidden, R = B * T;
  s.param(D * D + D, trainable);
  Act shift = s.move(s.linear(s.silu(c.t_emb), B, D, D, trainable));
  Act h = s.add(s.layer_norm(x, D), shift);
  // self-attention
  s.param(D * 3 * D + 3 * D, trainable);
  Act qkv = s.linear(h, R, D, 3 * D, trainable);
  Act q = s.move(qkv), k = s.move(qkv), v = s.move(qkv);
  Act a = dit_attention_core(s, d, B, T, T, {R * D, q.live}, {R * D, k.live}, {R * D, v.live});
  s.param(D * D + D, trainable);
  a = s.linear(a, R, D, D, trainable);
  Act out = s.add(x, a);
  // cross-attention
  s.param(D * D + D, trainable);
  Act xq = s.linear(s.layer_norm(out, D), R, D, D, trainable);
  s.param(D * 2 * D + 2 * D, trainable);
  Act kv = s.linear(c.context, B * d.context, D, 2 * D, trainable);
  Act xk = s.move(kv), xv = s.move(kv);
  Act xa = dit_attention_core(s, d, B, T, d.context, xq, {B * d.context * D, xk.live}, {B * d.context * D, xv.live});
  s.param(D * D + D, trainable);
  out = s.add(out, s.linear(xa, R, D, D, trainable));
  // mlp
  h = s.add(s.layer_norm(out, D), shift);
  s.param(D * d.mlp * D + d.mlp * D, trainable);
  h = s.gelu(s.linear(h, R, D, d.mlp * D, trainable));
  s.param(d.mlp * D * D + D, trainable);
  h = s.linear(h, R, d.mlp * D, D, trainable);
  return s.add(out, h);
}

inline Act dit_head(Sheet& s, const DiTShape& d, std::int64_t B, Act x, const DiTCond& c, bool trainable) {
  const auto T = d.tokens(), D = d.hidden, P = d.patch * d.patch * d.channels;
  s.param(D * D + D, trainable);
  Act shift = s.move(s.linear(s.silu(c.t_emb), B, D, D, trainable));
  Act h = s.add(s.layer_norm(x, D), shift);
  s.param(D * P + P, trainable);
  h = s.linear(h, B * T, D, P, trainable);
  return s.move(s.move(s.move(h)));
}

inline void dit_loss(Sheet& s, const DiTShape& d, std::int64_t B, Act pred) {
  s.tag = kOther;
  s.mse(pred, s.constant(B * d.image * d.image * d.channels));
}

/// Bare trainable TinyDiT: forward plus loss.
inline Costs dit_bare(const DiTShape& d, std::int64_t B) {
  Sheet s;
  s.tag = kBase;
  DiTCond c = dit_conditioning(s, d, B, true);
  Act x = dit_embed(s, d, B, true);
  for (int i = 0; i < d.blocks; ++i) x = dit_block(s, d, B, x, c, true);
  x = dit_head(s, d, B, x, c, true);
  dit_loss(s, d, B, x);
  return s.costs;
}

inline Act dit_condition_image(Sheet& s, const DiTShape& d, std::int64_t B) {
  s.tag = kCondEmbedder;
  const std::int64_t I = d.image, W = 16, out = d.hidden / (d.patch * d.patch);
  Act img = s.constant(B * I * I);
  s.param(9 * 1 * W + W, true);
  Act h = s.silu(s.conv(img, B, I, I, 1, W, 3, 1, true));
  s.param(9 * W * W + W, true);
  h = s.silu(s.conv(h, B, I, I, W, W, 3, 1, true));
  s.param(W * out + out, true);
  h = s.conv(h, B, I, I, W, out, 1, 1, true);
  return s.move(s.move(s.move(h)));
}

// Zero-init feature transform: target + target * Z1(source) + Z2(source).
inline Act zero_ft(Sheet& s, const DiTShape& d, std::int64_t B, Act source, Act target) {
  s.tag = kConnector;
  const auto R = B * d.tokens(), D = d.hidden;
  s.param(D * D + D, true);
  Act scale = s.linear(source, R, D, D, true);
  Act out = s.add(target, s.mul(target, scale));
  s.param(D * D + D, true);
  return s.add(out, s.linear(source, R, D, D, true));
}

/// Full-topology zero-ft adapter on a frozen TinyDiT. Bidirectional runs the
/// controller beside every base block and adds it back into the base
/// stream; unidirectional runs the base without recording and predicts from
/// the controller's own head.
inline Costs dit_adapted_full(const DiTShape& d, std::int64_t B, bool bidirectional) {
  Sheet s;
  s.tag = kBase;
  s.recording = bidirectional;
  DiTCond c = dit_conditioning(s, d, B, false);
  Act x = dit_embed(s, d, B, false);
  s.recording = true;
  Act cs = dit_condition_image(s, d, B);
  s.tag = kAdapter;
  DiTCond cc = dit_conditioning(s, d, B, true);
  if (bidirectional) {
    Act injected = s.add(x, cs);
    cs = s.add(cs, x);
    x = injected;
  } else {
    x.live = false;
    cs = s.add(cs, x);
  }
  for (int i = 0; i < d.blocks; ++i) {
    s.tag = kBase;
    s.recording = bidirectional;
    x = dit_block(s, d, B, x, c, false);
    if (!bidirectional) x.live = false;
    s.recording = true;
    s.tag = kAdapter;
    cs = dit_block(s, d, B, cs, cc, true);
    if (bidirectional) {
      x = zero_ft(s, d, B, cs, x);
    } else {
      cs = zero_ft(s, d, B, x, cs);
    }
  }
  Act pred;
  if (bidirectional) {
    s.tag = kBase;
    pred = dit_head(s, d, B, x, c, false);
  } else {
    s.tag = kBase;
    const auto P = d.patch * d.patch * d.channels;
    s.param(d.hidden * d.hidden + d.hidden + d.hidden * P + P, false);
    s.tag = kAdapter;
    pred = dit_head(s, d, B, cs, cc, true);
  }
  dit_loss(s, d, B, pred);
  return s.costs;
}

}  // namespace oracle
