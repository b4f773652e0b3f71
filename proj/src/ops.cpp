#include "unicon/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "unicon/kernels.hpp"

namespace unicon::ops {
namespace {

using kernels::ConvGeometry;

constexpr std::uint64_t kLayerNormFlopsPerElement = 8;
constexpr std::uint64_t kGroupNormFlopsPerElement = 8;
constexpr std::uint64_t kSoftmaxFlopsPerElement = 5;
constexpr std::uint64_t kGeluFlopsPerElement = 8;
constexpr std::uint64_t kSiluFlopsPerElement = 4;
constexpr std::uint64_t kMseFlopsPerElement = 3;

std::uint64_t u64(std::int64_t v) { return static_cast<std::uint64_t>(v); }

[[noreturn]] void shape_fail(const std::string& op, const Shape& a, const Shape& b) {
  throw ShapeError(op + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

int normalize_axis(int axis, int rank, const std::string& op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError(op + ": axis out of range");
  return axis;
}

Tensor record(Tape& tape, PrimitiveKind kind, std::initializer_list<const Tensor*> inputs, Tensor value,
              std::vector<Tensor> saved, OpAttrs attrs, std::uint64_t flops) {
  std::vector<const Tensor*> list(inputs);
  return tape.record(kind, list, std::move(value), std::move(saved), std::move(attrs), flops);
}

// ---------------------------------------------------------------------------
// Broadcasting

struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> stride_a, stride_b;  // per output axis, 0 where broadcast
};

std::vector<std::int64_t> aligned_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::int64_t> strides(r, 0);
  std::int64_t s = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t in_axis = in.size() - 1 - i;
    const std::size_t out_axis = r - 1 - i;
    strides[out_axis] = in[in_axis] == 1 ? 0 : s;
    s *= in[in_axis];
  }
  return strides;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const std::string& op) {
  BroadcastPlan plan;
  const std::size_t r = std::max(a.size(), b.size());
  plan.out.assign(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) shape_fail(op, a, b);
    plan.out[r - 1 - i] = std::max(da, db);
  }
  plan.stride_a = aligned_strides(a, plan.out);
  plan.stride_b = aligned_strides(b, plan.out);
  return plan;
}

// Visits every output element with the matching flat offsets into a and b.
template <typename F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  const int r = static_cast<int>(plan.out.size());
  const std::int64_t total = numel_of(plan.out);
  if (total == 0) return;
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const std::int64_t inner = plan.out[r - 1];
  const std::int64_t sa = plan.stride_a[r - 1], sb = plan.stride_b[r - 1];
  std::vector<std::int64_t> index(r, 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t base = 0; base < total; base += inner) {
    for (std::int64_t j = 0; j < inner; ++j) f(base + j, oa + j * sa, ob + j * sb);
    for (int axis = r - 2; axis >= 0; --axis) {
      ++index[axis];
      oa += plan.stride_a[axis];
      ob += plan.stride_b[axis];
      if (index[axis] < plan.out[axis]) break;
      oa -= plan.stride_a[axis] * plan.out[axis];
      ob -= plan.stride_b[axis] * plan.out[axis];
      index[axis] = 0;
    }
  }
}

// Sums `grad` (output-shaped) down to `shape` along broadcast axes.
Tensor reduce_to(const Tensor& grad, const Shape& shape, bool for_a, const BroadcastPlan& plan) {
  if (grad.shape() == shape) return grad;
  Tensor out(shape);
  float* o = out.data();
  const float* g = grad.data();
  for_each_broadcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { o[for_a ? ia : ib] += g[i]; });
  return out;
}

// ---------------------------------------------------------------------------
// matmul

struct MatmulDims {
  std::int64_t batch, m, k, n;
  bool shared_rhs;
};

MatmulDims matmul_dims(const Shape& a, const Shape& b) {
  if (a.size() < 2 || b.size() < 2) shape_fail("matmul", a, b);
  MatmulDims d{};
  d.m = a[a.size() - 2];
  d.k = a.back();
  d.n = b.back();
  if (b[b.size() - 2] != d.k) shape_fail("matmul", a, b);
  d.shared_rhs = b.size() == 2;
  if (!d.shared_rhs) {
    if (a.size() != b.size() || !std::equal(a.begin(), a.end() - 2, b.begin())) shape_fail("matmul", a, b);
  }
  d.batch = 1;
  for (std::size_t i = 0; i + 2 < a.size(); ++i) d.batch *= a[i];
  return d;
}

// Forward product; with `precise` the operands are widened to double first.
void forward_gemm(bool precise, const float* a, const float* b, float* out, std::int64_t m, std::int64_t k,
                  std::int64_t n) {
  if (!precise) {
    kernels::gemm(a, b, out, m, k, n);
    return;
  }
  const Eigen::MatrixXd A = kernels::ConstMatrixMap<float>(a, m, k).cast<double>();
  const Eigen::MatrixXd B = kernels::ConstMatrixMap<float>(b, k, n).cast<double>();
  kernels::MatrixMap<float>(out, m, n) = (A * B).cast<float>();
}

Tensor matmul_values(const Tensor& a, const Tensor& b, const MatmulDims& d, bool precise) {
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(d.n);
  Tensor out(out_shape);
  if (d.shared_rhs) {
    forward_gemm(precise, a.data(), b.data(), out.data(), d.batch * d.m, d.k, d.n);
  } else {
    for (std::int64_t i = 0; i < d.batch; ++i) {
      forward_gemm(precise, a.data() + i * d.m * d.k, b.data() + i * d.k * d.n, out.data() + i * d.m * d.n, d.m, d.k,
                   d.n);
    }
  }
  return out;
}

std::vector<Tensor> matmul_backward(const Node& node, const Tensor& g) {
  const MatmulDims d = matmul_dims(node.input_shapes[0], node.input_shapes[1]);
  std::vector<Tensor> grads(2);
  const Tensor& a = node.saved[0];
  const Tensor& b = node.saved[1];
  if (node.inputs[0] >= 0) {
    Tensor ga(node.input_shapes[0]);
    if (d.shared_rhs) {
      kernels::gemm(g.data(), b.data(), ga.data(), d.batch * d.m, d.n, d.k, false, true);
    } else {
      for (std::int64_t i = 0; i < d.batch; ++i) {
        kernels::gemm(g.data() + i * d.m * d.n, b.data() + i * d.k * d.n, ga.data() + i * d.m * d.k, d.m, d.n, d.k,
                      false, true);
      }
    }
    grads[0] = ga;
  }
  if (node.inputs[1] >= 0) {
    Tensor gb(node.input_shapes[1]);
    if (d.shared_rhs) {
      kernels::gemm(a.data(), g.data(), gb.data(), d.k, d.batch * d.m, d.n, true, false);
    } else {
      for (std::int64_t i = 0; i < d.batch; ++i) {
        kernels::gemm(a.data() + i * d.m * d.k, g.data() + i * d.m * d.n, gb.data() + i * d.k * d.n, d.k, d.m, d.n,
                      true, false);
      }
    }
    grads[1] = gb;
  }
  return grads;
}

// ---------------------------------------------------------------------------
// conv2d

ConvGeometry conv_geometry(const Shape& x, const Shape& w, int stride) {
  if (x.size() != 4 || w.size() != 4 || w[0] != w[1] || w[2] != x[3]) shape_fail("conv2d", x, w);
  if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
  ConvGeometry g{};
  g.batch = x[0];
  g.height = x[1];
  g.width = x[2];
  g.in_channels = x[3];
  g.kernel = w[0];
  g.out_channels = w[3];
  g.stride = stride;
  g.pad = (g.kernel - 1) / 2;
  g.out_height = (g.height + 2 * g.pad - g.kernel) / stride + 1;
  g.out_width = (g.width + 2 * g.pad - g.kernel) / stride + 1;
  return g;
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1; }

std::vector<float> patches(const Tensor& x, const ConvGeometry& g) {
  std::vector<float> col(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
  kernels::im2col(x.data(), g, col.data());
  return col;
}

std::vector<Tensor> conv2d_backward(const Node& node, const Tensor& g) {
  const ConvGeometry geo = conv_geometry(node.input_shapes[0], node.input_shapes[1], int(node.attrs.ints[0]));
  std::vector<Tensor> grads(2);
  const Tensor& x = node.saved[0];
  const Tensor& w = node.saved[1];
  if (node.inputs[1] >= 0) {
    Tensor gw(node.input_shapes[1]);
    if (is_pointwise(geo)) {
      kernels::gemm(x.data(), g.data(), gw.data(), geo.col_cols(), geo.col_rows(), geo.out_channels, true, false);
    } else {
      auto col = patches(x, geo);
      kernels::gemm(col.data(), g.data(), gw.data(), geo.col_cols(), geo.col_rows(), geo.out_channels, true, false);
    }
    grads[1] = gw;
  }
  if (node.inputs[0] >= 0) {
    Tensor gx(node.input_shapes[0]);
    if (is_pointwise(geo)) {
      kernels::gemm(g.data(), w.data(), gx.data(), geo.col_rows(), geo.out_channels, geo.col_cols(), false, true);
    } else {
      std::vector<float> gcol(static_cast<std::size_t>(geo.col_rows() * geo.col_cols()));
      kernels::gemm(g.data(), w.data(), gcol.data(), geo.col_rows(), geo.out_channels, geo.col_cols(), false, true);
      kernels::col2im(gcol.data(), geo, gx.data());
    }
    grads[0] = gx;
  }
  return grads;
}

// ---------------------------------------------------------------------------
// normalization

// Row-wise normalization (layer norm): contiguous rows of the last axis.
void normalize_rows(const float* x, float* y, float* rstd, std::int64_t rows, std::int64_t cols, float eps) {
  for (std::int64_t r = 0; r < rows; ++r) {
    Eigen::Map<const Eigen::ArrayXf> in(x + r * cols, cols);
    Eigen::Map<Eigen::ArrayXf> out(y + r * cols, cols);
    const double mean = in.cast<double>().mean();
    const double var = (in.cast<double>() - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + eps);
    out = ((in.cast<double>() - mean) * inv).cast<float>();
    rstd[r] = static_cast<float>(inv);
  }
}

// dx = rstd * (g - mean(g) - y * mean(g*y)) over one row.
void normalize_rows_backward(const float* g, const float* y, const float* rstd, float* dx, std::int64_t rows,
                             std::int64_t cols) {
  for (std::int64_t r = 0; r < rows; ++r) {
    Eigen::Map<const Eigen::ArrayXf> gr(g + r * cols, cols), yr(y + r * cols, cols);
    Eigen::Map<Eigen::ArrayXf> out(dx + r * cols, cols);
    const float mg = static_cast<float>(gr.cast<double>().mean());
    const float mgy = static_cast<float>((gr * yr).cast<double>().mean());
    out = rstd[r] * (gr - mg - yr * mgy);
  }
}

// Group norm over [B, S, C] with C split into `groups` contiguous channel ranges.
struct GroupDims {
  std::int64_t batch, spatial, channels, groups, per_group;
};

GroupDims group_dims(const Shape& s, int groups) {
  if (s.size() < 2 || groups <= 0 || s.back() % groups != 0) {
    throw ShapeError("group_norm: channels " + to_string(s) + " not divisible into " + std::to_string(groups) +
                     " groups");
  }
  GroupDims d{};
  d.batch = s[0];
  d.channels = s.back();
  d.spatial = numel_of(s) / (d.batch * d.channels);
  d.groups = groups;
  d.per_group = d.channels / groups;
  return d;
}

template <typename F>
void for_group(const GroupDims& d, std::int64_t b, std::int64_t grp, F&& f) {
  for (std::int64_t s = 0; s < d.spatial; ++s) {
    const std::int64_t offset = (b * d.spatial + s) * d.channels + grp * d.per_group;
    for (std::int64_t c = 0; c < d.per_group; ++c) f(offset + c);
  }
}

std::vector<Tensor> group_norm_backward(const Node& node, const Tensor& g) {
  const GroupDims d = group_dims(node.input_shapes[0], int(node.attrs.ints[0]));
  const Tensor& y = node.saved[0];
  const Tensor& rstd = node.saved[1];
  Tensor dx(node.input_shapes[0]);
  const double count = static_cast<double>(d.spatial * d.per_group);
  for (std::int64_t b = 0; b < d.batch; ++b) {
    for (std::int64_t grp = 0; grp < d.groups; ++grp) {
      double sg = 0, sgy = 0;
      for_group(d, b, grp, [&](std::int64_t i) {
        sg += g.data()[i];
        sgy += double(g.data()[i]) * y.data()[i];
      });
      const float mg = static_cast<float>(sg / count), mgy = static_cast<float>(sgy / count);
      const float r = rstd.data()[b * d.groups + grp];
      for_group(d, b, grp, [&](std::int64_t i) { dx.data()[i] = r * (g.data()[i] - mg - y.data()[i] * mgy); });
    }
  }
  return {dx};
}

// ---------------------------------------------------------------------------
// transpose / concat / slice helpers

Tensor permute_values(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.rank();
  Shape out_shape(r);
  std::vector<std::int64_t> in_strides(r), strides(r);
  std::int64_t s = 1;
  for (int i = r - 1; i >= 0; --i) {
    in_strides[i] = s;
    s *= x.shape()[i];
  }
  for (int i = 0; i < r; ++i) {
    out_shape[i] = x.shape()[perm[i]];
    strides[i] = in_strides[perm[i]];
  }
  Tensor out(out_shape);
  const std::int64_t total = x.numel();
  if (total == 0) return out;
  const float* src = x.data();
  float* dst = out.data();
  std::vector<std::int64_t> index(r, 0);
  std::int64_t offset = 0;
  const std::int64_t inner = out_shape[r - 1], inner_stride = strides[r - 1];
  for (std::int64_t base = 0; base < total; base += inner) {
    for (std::int64_t j = 0; j < inner; ++j) dst[base + j] = src[offset + j * inner_stride];
    for (int axis = r - 2; axis >= 0; --axis) {
      ++index[axis];
      offset += strides[axis];
      if (index[axis] < out_shape[axis]) break;
      offset -= strides[axis] * out_shape[axis];
      index[axis] = 0;
    }
  }
  return out;
}

std::vector<int> validate_perm(const std::vector<int>& perm, int rank) {
  if (static_cast<int>(perm.size()) != rank) throw ShapeError("transpose: permutation rank mismatch");
  std::vector<int> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < rank; ++i) {
    if (sorted[i] != i) throw ShapeError("transpose: not a permutation");
  }
  return perm;
}

struct AxisSplit {
  std::int64_t outer, axis, inner;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit a{1, s[axis], 1};
  for (int i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

// Copies `len` rows of the axis starting at `src_start` from src into dst at `dst_start`.
void copy_axis_block(const float* src, const AxisSplit& src_split, std::int64_t src_start, float* dst,
                     const AxisSplit& dst_split, std::int64_t dst_start, std::int64_t len) {
  const std::int64_t chunk = len * src_split.inner;
  for (std::int64_t o = 0; o < src_split.outer; ++o) {
    const float* s = src + (o * src_split.axis + src_start) * src_split.inner;
    float* d = dst + (o * dst_split.axis + dst_start) * dst_split.inner;
    std::memcpy(d, s, static_cast<std::size_t>(chunk) * sizeof(float));
  }
}

Tensor elementwise_unary_grad(const Tensor& g, const Tensor& x, float (*deriv)(float)) {
  Tensor dx(x.shape());
  const float* gp = g.data();
  const float* xp = x.data();
  float* o = dx.data();
  for (std::int64_t i = 0; i < x.numel(); ++i) o[i] = gp[i] * deriv(xp[i]);
  return dx;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) { return plan_broadcast(a, b, "broadcast").out; }

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  const MatmulDims d = matmul_dims(a.shape(), b.shape());
  Tensor out = matmul_values(a, b, d, tape.precise());
  const bool ga = tape.needs_grad(a), gb = tape.needs_grad(b);
  std::vector<Tensor> saved{gb ? a : Tensor(), ga ? b : Tensor()};
  return record(tape, PrimitiveKind::matmul, {&a, &b}, std::move(out), std::move(saved), {},
                2 * u64(d.batch) * u64(d.m) * u64(d.k) * u64(d.n));
}

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, int stride) {
  const ConvGeometry g = conv_geometry(x.shape(), weight.shape(), stride);
  Tensor out({g.batch, g.out_height, g.out_width, g.out_channels});
  if (is_pointwise(g)) {
    forward_gemm(tape.precise(), x.data(), weight.data(), out.data(), g.col_rows(), g.col_cols(), g.out_channels);
  } else {
    auto col = patches(x, g);
    forward_gemm(tape.precise(), col.data(), weight.data(), out.data(), g.col_rows(), g.col_cols(), g.out_channels);
  }
  const bool gx = tape.needs_grad(x), gw = tape.needs_grad(weight);
  std::vector<Tensor> saved{gw ? x : Tensor(), gx ? weight : Tensor()};
  const std::uint64_t flops = 2 * u64(g.kernel * g.kernel) * u64(g.in_channels) * u64(g.out_channels) *
                              u64(g.out_height * g.out_width) * u64(g.batch);
  return record(tape, PrimitiveKind::conv2d, {&x, &weight}, std::move(out), std::move(saved),
                OpAttrs{{stride}, 0.0f}, flops);
}

Tensor upsample_nearest(Tape& tape, const Tensor& x, int factor) {
  if (x.rank() != 4 || factor < 1) throw ShapeError("upsample: expected [B, H, W, C], got " + to_string(x.shape()));
  const auto B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  Tensor out({B, H * factor, W * factor, C});
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t h = 0; h < H * factor; ++h)
      for (std::int64_t w = 0; w < W * factor; ++w)
        std::memcpy(out.data() + ((b * H * factor + h) * W * factor + w) * C,
                    x.data() + ((b * H + h / factor) * W + w / factor) * C, C * sizeof(float));
  return record(tape, PrimitiveKind::upsample, {&x}, std::move(out), {}, OpAttrs{{factor}, 0.0f}, 0);
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  Tensor out;
  if (a.shape() == b.shape()) {
    out = Tensor(a.shape());
    out.array() = a.array() + b.array();
  } else {
    const BroadcastPlan plan = plan_broadcast(a.shape(), b.shape(), "add");
    out = Tensor(plan.out);
    float* o = out.data();
    const float *pa = a.data(), *pb = b.data();
    for_each_broadcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { o[i] = pa[ia] + pb[ib]; });
  }
  const auto flops = u64(out.numel());
  return record(tape, PrimitiveKind::add, {&a, &b}, std::move(out), {}, {}, flops);
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  Tensor out;
  if (a.shape() == b.shape()) {
    out = Tensor(a.shape());
    out.array() = a.array() * b.array();
  } else {
    const BroadcastPlan plan = plan_broadcast(a.shape(), b.shape(), "mul");
    out = Tensor(plan.out);
    float* o = out.data();
    const float *pa = a.data(), *pb = b.data();
    for_each_broadcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { o[i] = pa[ia] * pb[ib]; });
  }
  const bool ga = tape.needs_grad(a), gb = tape.needs_grad(b);
  std::vector<Tensor> saved{gb ? a : Tensor(), ga ? b : Tensor()};
  const auto flops = u64(out.numel());
  return record(tape, PrimitiveKind::mul, {&a, &b}, std::move(out), std::move(saved), {}, flops);
}

Tensor scale(Tape& tape, const Tensor& x, float factor) {
  Tensor out(x.shape());
  out.array() = x.array() * factor;
  const auto flops = u64(out.numel());
  return record(tape, PrimitiveKind::scale, {&x}, std::move(out), {}, OpAttrs{{}, factor}, flops);
}

Tensor layer_norm(Tape& tape, const Tensor& x, float eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const std::int64_t cols = x.dim(-1), rows = x.numel() / cols;
  Tensor y(x.shape()), rstd({rows});
  normalize_rows(x.data(), y.data(), rstd.data(), rows, cols, eps);
  const auto flops = kLayerNormFlopsPerElement * u64(x.numel());
  return record(tape, PrimitiveKind::layer_norm, {&x}, y, {y, rstd}, OpAttrs{{}, eps}, flops);
}

Tensor group_norm(Tape& tape, const Tensor& x, int groups, float eps) {
  const GroupDims d = group_dims(x.shape(), groups);
  Tensor y(x.shape()), rstd({d.batch * d.groups});
  const double count = static_cast<double>(d.spatial * d.per_group);
  for (std::int64_t b = 0; b < d.batch; ++b) {
    for (std::int64_t grp = 0; grp < d.groups; ++grp) {
      double sum = 0;
      for_group(d, b, grp, [&](std::int64_t i) { sum += x.data()[i]; });
      const double mean = sum / count;
      double var = 0;
      for_group(d, b, grp, [&](std::int64_t i) { var += (x.data()[i] - mean) * (x.data()[i] - mean); });
      const double inv = 1.0 / std::sqrt(var / count + eps);
      for_group(d, b, grp, [&](std::int64_t i) { y.data()[i] = static_cast<float>((x.data()[i] - mean) * inv); });
      rstd.data()[b * d.groups + grp] = static_cast<float>(inv);
    }
  }
  const auto flops = kGroupNormFlopsPerElement * u64(x.numel());
  return record(tape, PrimitiveKind::group_norm, {&x}, y, {y, rstd}, OpAttrs{{groups}, eps}, flops);
}

Tensor softmax(Tape& tape, const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("softmax: scalar input");
  const std::int64_t cols = x.dim(-1), rows = x.numel() / cols;
  Tensor y(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    Eigen::Map<const Eigen::ArrayXf> in(x.data() + r * cols, cols);
    Eigen::Map<Eigen::ArrayXf> out(y.data() + r * cols, cols);
    const Eigen::ArrayXd e = (in.cast<double>() - in.maxCoeff()).exp();
    out = (e / e.sum()).cast<float>();
  }
  const auto flops = kSoftmaxFlopsPerElement * u64(x.numel());
  return record(tape, PrimitiveKind::softmax, {&x}, y, {y}, {}, flops);
}

Tensor gelu(Tape& tape, const Tensor& x) {
  Tensor y(x.shape());
  y.array() = x.array().unaryExpr([](float v) { return kernels::gelu(v); });
  const auto flops = kGeluFlopsPerElement * u64(x.numel());
  return record(tape, PrimitiveKind::gelu, {&x}, std::move(y), {x}, {}, flops);
}

Tensor silu(Tape& tape, const Tensor& x) {
  Tensor y(x.shape());
  y.array() = x.array().unaryExpr([](float v) { return kernels::silu(v); });
  const auto flops = kSiluFlopsPerElement * u64(x.numel());
  return record(tape, PrimitiveKind::silu, {&x}, std::move(y), {x}, {}, flops);
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  Tensor out = x.view(shape);
  return record(tape, PrimitiveKind::reshape, {&x}, std::move(out), {}, OpAttrs{shape, 0.0f}, 0);
}

Tensor transpose(Tape& tape, const Tensor& x, std::vector<int> perm) {
  validate_perm(perm, x.rank());
  Tensor out = permute_values(x, perm);
  return record(tape, PrimitiveKind::transpose, {&x}, std::move(out), {},
                OpAttrs{std::vector<std::int64_t>(perm.begin(), perm.end()), 0.0f}, 0);
}

Tensor concat(Tape& tape, std::span<const Tensor> xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const int r = xs[0].rank();
  axis = normalize_axis(axis, r, "concat");
  Shape out_shape = xs[0].shape();
  out_shape[axis] = 0;
  for (const auto& x : xs) {
    if (x.rank() != r) shape_fail("concat", xs[0].shape(), x.shape());
    for (int i = 0; i < r; ++i) {
      if (i != axis && x.shape()[i] != xs[0].shape()[i]) shape_fail("concat", xs[0].shape(), x.shape());
    }
    out_shape[axis] += x.shape()[axis];
  }
  Tensor out(out_shape);
  const AxisSplit dst = split_at(out_shape, axis);
  std::int64_t at = 0;
  std::vector<const Tensor*> inputs;
  for (const auto& x : xs) {
    const AxisSplit src = split_at(x.shape(), axis);
    copy_axis_block(x.data(), src, 0, out.data(), dst, at, src.axis);
    at += src.axis;
    inputs.push_back(&x);
  }
  return tape.record(PrimitiveKind::concat, inputs, std::move(out), {}, OpAttrs{{axis}, 0.0f}, 0);
}

Tensor slice(Tape& tape, const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  axis = normalize_axis(axis, x.rank(), "slice");
  if (start < 0 || length < 0 || start + length > x.shape()[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of bounds for " + to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Tensor out(out_shape);
  copy_axis_block(x.data(), split_at(x.shape(), axis), start, out.data(), split_at(out_shape, axis), 0, length);
  return record(tape, PrimitiveKind::slice, {&x}, std::move(out), {}, OpAttrs{{axis, start, length}, 0.0f}, 0);
}

Tensor mean(Tape& tape, const Tensor& x) {
  const double acc = x.numel() ? x.array().cast<double>().mean() : 0.0;
  Tensor out(Shape{});
  out.data()[0] = static_cast<float>(acc);
  const auto flops = u64(x.numel());
  return record(tape, PrimitiveKind::mean, {&x}, out.with_accumulator(acc), {}, {}, flops);
}

Tensor mse(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail("mse", a.shape(), b.shape());
  Tensor diff(a.shape());
  diff.array() = a.array() - b.array();
  const double acc = a.numel() ? (a.array().cast<double>() - b.array().cast<double>()).square().mean() : 0.0;
  Tensor out(Shape{});
  out.data()[0] = static_cast<float>(acc);
  const auto flops = kMseFlopsPerElement * u64(a.numel());
  return record(tape, PrimitiveKind::mse, {&a, &b}, out.with_accumulator(acc), {diff}, {}, flops);
}

Tensor detach(const Tensor& t) { return t.detached(); }

Tensor apply_primitive(Tape& tape, PrimitiveKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw ShapeError(std::string(primitive_name(kind)) + ": expected " + std::to_string(n) + " inputs");
    }
  };
  auto int_attr = [&](std::size_t i) {
    if (attrs.ints.size() <= i) throw Error(std::string(primitive_name(kind)) + ": missing attribute");
    return attrs.ints[i];
  };
  switch (kind) {
    case PrimitiveKind::matmul: need(2); return matmul(tape, inputs[0], inputs[1]);
    case PrimitiveKind::conv2d: need(2); return conv2d(tape, inputs[0], inputs[1], int(int_attr(0)));
    case PrimitiveKind::upsample: need(1); return upsample_nearest(tape, inputs[0], int(int_attr(0)));
    case PrimitiveKind::add: need(2); return add(tape, inputs[0], inputs[1]);
    case PrimitiveKind::mul: need(2); return mul(tape, inputs[0], inputs[1]);
    case PrimitiveKind::scale: need(1); return scale(tape, inputs[0], attrs.scalar);
    case PrimitiveKind::layer_norm: need(1); return layer_norm(tape, inputs[0], attrs.scalar);
    case PrimitiveKind::group_norm: need(1); return group_norm(tape, inputs[0], int(int_attr(0)), attrs.scalar);
    case PrimitiveKind::softmax: need(1); return softmax(tape, inputs[0]);
    case PrimitiveKind::gelu: need(1); return gelu(tape, inputs[0]);
    case PrimitiveKind::silu: need(1); return silu(tape, inputs[0]);
    case PrimitiveKind::reshape: need(1); return reshape(tape, inputs[0], attrs.ints);
    case PrimitiveKind::transpose:
      need(1);
      return transpose(tape, inputs[0], std::vector<int>(attrs.ints.begin(), attrs.ints.end()));
    case PrimitiveKind::concat: return concat(tape, inputs, int(int_attr(0)));
    case PrimitiveKind::slice:
      need(1);
      return slice(tape, inputs[0], int(int_attr(0)), int_attr(1), int_attr(2));
    case PrimitiveKind::mean: need(1); return mean(tape, inputs[0]);
    case PrimitiveKind::mse: need(2); return mse(tape, inputs[0], inputs[1]);
    case PrimitiveKind::leaf: break;
  }
  throw Error("apply_primitive: unknown primitive kind " + std::to_string(static_cast<int>(kind)));
}

namespace detail {

std::vector<Tensor> backward_rule(const Node& node, const Tensor& g) {
  const auto wants = [&](std::size_t i) { return node.inputs[i] >= 0; };
  switch (node.kind) {
    case PrimitiveKind::matmul: return matmul_backward(node, g);
    case PrimitiveKind::conv2d: return conv2d_backward(node, g);
    case PrimitiveKind::upsample: {
      const Shape& s = node.input_shapes[0];
      const auto f = node.attrs.ints[0];
      const auto B = s[0], H = s[1], W = s[2], C = s[3];
      Tensor dx(s);
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t h = 0; h < H * f; ++h)
          for (std::int64_t w = 0; w < W * f; ++w) {
            const float* src = g.data() + ((b * H * f + h) * W * f + w) * C;
            float* dst = dx.data() + ((b * H + h / f) * W + w / f) * C;
            for (std::int64_t c = 0; c < C; ++c) dst[c] += src[c];
          }
      return {dx};
    }
    case PrimitiveKind::add: {
      const BroadcastPlan plan = plan_broadcast(node.input_shapes[0], node.input_shapes[1], "add");
      std::vector<Tensor> grads(2);
      if (wants(0)) grads[0] = reduce_to(g, node.input_shapes[0], true, plan);
      if (wants(1)) grads[1] = reduce_to(g, node.input_shapes[1], false, plan);
      return grads;
    }
    case PrimitiveKind::mul: {
      const BroadcastPlan plan = plan_broadcast(node.input_shapes[0], node.input_shapes[1], "mul");
      std::vector<Tensor> grads(2);
      const float* gp = g.data();
      if (wants(0)) {
        const float* b = node.saved[1].data();
        Tensor ga(node.input_shapes[0]);
        float* o = ga.data();
        for_each_broadcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { o[ia] += gp[i] * b[ib]; });
        grads[0] = ga;
      }
      if (wants(1)) {
        const float* a = node.saved[0].data();
        Tensor gb(node.input_shapes[1]);
        float* o = gb.data();
        for_each_broadcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { o[ib] += gp[i] * a[ia]; });
        grads[1] = gb;
      }
      return grads;
    }
    case PrimitiveKind::scale: {
      Tensor dx(node.input_shapes[0]);
      dx.array() = g.array() * node.attrs.scalar;
      return {dx};
    }
    case PrimitiveKind::layer_norm: {
      const Tensor& y = node.saved[0];
      const Tensor& rstd = node.saved[1];
      const std::int64_t cols = node.input_shapes[0].back(), rows = y.numel() / cols;
      Tensor dx(node.input_shapes[0]);
      normalize_rows_backward(g.data(), y.data(), rstd.data(), dx.data(), rows, cols);
      return {dx};
    }
    case PrimitiveKind::group_norm: return group_norm_backward(node, g);
    case PrimitiveKind::softmax: {
      const Tensor& y = node.saved[0];
      const std::int64_t cols = node.input_shapes[0].back(), rows = y.numel() / cols;
      Tensor dx(node.input_shapes[0]);
      for (std::int64_t r = 0; r < rows; ++r) {
        Eigen::Map<const Eigen::ArrayXf> gr(g.data() + r * cols, cols), yr(y.data() + r * cols, cols);
        Eigen::Map<Eigen::ArrayXf> out(dx.data() + r * cols, cols);
        const float dot = (gr * yr).sum();
        out = yr * (gr - dot);
      }
      return {dx};
    }
    case PrimitiveKind::gelu:
      return {elementwise_unary_grad(g, node.saved[0], [](float v) { return kernels::gelu_derivative(v); })};
    case PrimitiveKind::silu:
      return {elementwise_unary_grad(g, node.saved[0], [](float v) { return kernels::silu_derivative(v); })};
    case PrimitiveKind::reshape: return {g.view(node.input_shapes[0])};
    case PrimitiveKind::transpose: {
      const auto& p = node.attrs.ints;
      std::vector<int> inverse(p.size());
      for (std::size_t i = 0; i < p.size(); ++i) inverse[p[i]] = static_cast<int>(i);
      return {permute_values(g, inverse)};
    }
    case PrimitiveKind::concat: {
      const int axis = int(node.attrs.ints[0]);
      const AxisSplit src = split_at(node.output_shape, axis);
      std::vector<Tensor> grads(node.inputs.size());
      std::int64_t at = 0;
      for (std::size_t i = 0; i < node.inputs.size(); ++i) {
        const Shape& s = node.input_shapes[i];
        if (wants(i)) {
          Tensor gi(s);
          const AxisSplit dst = split_at(s, axis);
          // Walk the output's outer extent, copying this input's band.
          for (std::int64_t o = 0; o < src.outer; ++o) {
            std::memcpy(gi.data() + o * dst.axis * dst.inner, g.data() + (o * src.axis + at) * src.inner,
                        static_cast<std::size_t>(dst.axis * dst.inner) * sizeof(float));
          }
          grads[i] = gi;
        }
        at += s[axis];
      }
      return grads;
    }
    case PrimitiveKind::slice: {
      const int axis = int(node.attrs.ints[0]);
      const auto start = node.attrs.ints[1], length = node.attrs.ints[2];
      Tensor dx(node.input_shapes[0]);
      copy_axis_block(g.data(), split_at(node.output_shape, axis), 0, dx.data(), split_at(node.input_shapes[0], axis),
                      start, length);
      return {dx};
    }
    case PrimitiveKind::mean: {
      const auto n = numel_of(node.input_shapes[0]);
      return {Tensor::full(node.input_shapes[0], g.item() / static_cast<float>(n))};
    }
    case PrimitiveKind::mse: {
      const Tensor& diff = node.saved[0];
      const float k = 2.0f * g.item() / static_cast<float>(diff.numel());
      std::vector<Tensor> grads(2);
      if (wants(0)) {
        grads[0] = Tensor(diff.shape());
        grads[0].array() = diff.array() * k;
      }
      if (wants(1)) {
        grads[1] = Tensor(diff.shape());
        grads[1].array() = diff.array() * -k;
      }
      return grads;
    }
    case PrimitiveKind::leaf: break;
  }
  throw Error("backward: no rule for primitive " + std::string(primitive_name(node.kind)));
}

}  // namespace detail
}  // namespace unicon::ops
