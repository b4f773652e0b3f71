#pragma once

#include <span>
#include <vector>

#include "unicon/tape.hpp"
#include "unicon/tensor.hpp"

// Differentiable primitives. Each call books its forward FLOPs on the tape
// and, when an input carries a node, records a node saving only what its
// backward rule reads. The per-primitive FLOP formulas and saved sets are
// tabulated in docs/primitives.md.
namespace unicon::ops {

/// [..., M, K] x [K, N] (shared right operand) or [..., M, K] x [..., K, N]
/// (matching leading dims).
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
/// NHWC input [B, H, W, Cin], weight [k, k, Cin, Cout], zero padding (k-1)/2.
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& weight, int stride = 1);
/// Nearest-neighbour upsampling of the two spatial axes of [B, H, W, C].
Tensor upsample_nearest(Tape& tape, const Tensor& x, int factor = 2);

/// Elementwise with right-aligned broadcasting.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, float factor);

/// Normalizes over the last axis, no affine terms.
Tensor layer_norm(Tape& tape, const Tensor& x, float eps = 1e-5f);
/// Normalizes [B, ..., C] over (spatial, C/groups) per group, no affine terms.
Tensor group_norm(Tape& tape, const Tensor& x, int groups, float eps = 1e-5f);
Tensor softmax(Tape& tape, const Tensor& x);
Tensor gelu(Tape& tape, const Tensor& x);
Tensor silu(Tape& tape, const Tensor& x);

Tensor reshape(Tape& tape, const Tensor& x, Shape shape);
/// General axis permutation: out.shape[i] = x.shape[perm[i]].
Tensor transpose(Tape& tape, const Tensor& x, std::vector<int> perm);
Tensor concat(Tape& tape, std::span<const Tensor> xs, int axis);
Tensor slice(Tape& tape, const Tensor& x, int axis, std::int64_t start, std::int64_t length);

/// Scalar mean over all elements.
Tensor mean(Tape& tape, const Tensor& x);
/// Scalar mean of squared differences.
Tensor mse(Tape& tape, const Tensor& a, const Tensor& b);

/// Same values, no node: nothing downstream reaches the producer of `t`.
Tensor detach(const Tensor& t);

/// Dispatch by kind. Attribute layout per kind:
///   conv2d: ints = {stride}; upsample: ints = {factor}; scale: scalar;
///   layer_norm: scalar = eps; group_norm: ints = {groups}, scalar = eps;
///   reshape: ints = new shape; transpose: ints = perm; concat: ints = {axis};
///   slice: ints = {axis, start, length}.
Tensor apply_primitive(Tape& tape, PrimitiveKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs);

Shape broadcast_shape(const Shape& a, const Shape& b);

namespace detail {
/// Gradients w.r.t. each input of `node` given the output gradient. Entries
/// for constant inputs are left undefined.
std::vector<Tensor> backward_rule(const Node& node, const Tensor& grad_out);
}  // namespace detail

}  // namespace unicon::ops
