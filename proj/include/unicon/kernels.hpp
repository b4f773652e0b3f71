#pragma once

// Dense kernels over raw row-major buffers, templated on the scalar type.
// The autodiff engine instantiates them for float; the test oracles reuse a
// few of them in double.

#include <cmath>
#include <cstdint>

#include <Eigen/Core>

namespace unicon::kernels {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

/// out[m,n] (+)= a[m,k] * b[k,n], with optional transposes of the operands
/// as stored.
template <typename Scalar>
void gemm(const Scalar* a, const Scalar* b, Scalar* out, std::int64_t m, std::int64_t k, std::int64_t n,
          bool transpose_a = false, bool transpose_b = false, bool accumulate = false) {
  MatrixMap<Scalar> c(out, m, n);
  if (!transpose_a && !transpose_b) {
    ConstMatrixMap<Scalar> A(a, m, k), B(b, k, n);
    accumulate ? c.noalias() += A * B : c.noalias() = A * B;
  } else if (transpose_a && !transpose_b) {
    ConstMatrixMap<Scalar> A(a, k, m), B(b, k, n);
    accumulate ? c.noalias() += A.transpose() * B : c.noalias() = A.transpose() * B;
  } else if (!transpose_a && transpose_b) {
    ConstMatrixMap<Scalar> A(a, m, k), B(b, n, k);
    accumulate ? c.noalias() += A * B.transpose() : c.noalias() = A * B.transpose();
  } else {
    ConstMatrixMap<Scalar> A(a, k, m), B(b, n, k);
    accumulate ? c.noalias() += A.transpose() * B.transpose() : c.noalias() = A.transpose() * B.transpose();
  }
}

struct ConvGeometry {
  std::int64_t batch, height, width, in_channels, out_channels, kernel, stride, pad, out_height, out_width;

  std::int64_t col_rows() const { return batch * out_height * out_width; }
  std::int64_t col_cols() const { return kernel * kernel * in_channels; }
};

/// NHWC patches into a [B*Ho*Wo, k*k*Cin] matrix; out-of-bounds taps are zero.
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Scalar* col) {
  const std::int64_t cols = g.col_cols();
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t oh = 0; oh < g.out_height; ++oh) {
      for (std::int64_t ow = 0; ow < g.out_width; ++ow) {
        Scalar* row = col + ((b * g.out_height + oh) * g.out_width + ow) * cols;
        for (std::int64_t ki = 0; ki < g.kernel; ++ki) {
          const std::int64_t ih = oh * g.stride + ki - g.pad;
          for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
            const std::int64_t iw = ow * g.stride + kj - g.pad;
            Scalar* dst = row + (ki * g.kernel + kj) * g.in_channels;
            if (ih < 0 || ih >= g.height || iw < 0 || iw >= g.width) {
              for (std::int64_t c = 0; c < g.in_channels; ++c) dst[c] = Scalar(0);
            } else {
              const Scalar* src = x + ((b * g.height + ih) * g.width + iw) * g.in_channels;
              for (std::int64_t c = 0; c < g.in_channels; ++c) dst[c] = src[c];
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters patch rows back into an NHWC buffer (accumulating).
template <typename Scalar>
void col2im(const Scalar* col, const ConvGeometry& g, Scalar* x) {
  const std::int64_t cols = g.col_cols();
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t oh = 0; oh < g.out_height; ++oh) {
      for (std::int64_t ow = 0; ow < g.out_width; ++ow) {
        const Scalar* row = col + ((b * g.out_height + oh) * g.out_width + ow) * cols;
        for (std::int64_t ki = 0; ki < g.kernel; ++ki) {
          const std::int64_t ih = oh * g.stride + ki - g.pad;
          if (ih < 0 || ih >= g.height) continue;
          for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
            const std::int64_t iw = ow * g.stride + kj - g.pad;
            if (iw < 0 || iw >= g.width) continue;
            const Scalar* src = row + (ki * g.kernel + kj) * g.in_channels;
            Scalar* dst = x + ((b * g.height + ih) * g.width + iw) * g.in_channels;
            for (std::int64_t c = 0; c < g.in_channels; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) / std::sqrt(Scalar(2) * Scalar(M_PI));
  return cdf + x * pdf;
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

template <typename Scalar>
Scalar silu(Scalar x) {
  return x * sigmoid(x);
}

template <typename Scalar>
Scalar silu_derivative(Scalar x) {
  const Scalar s = sigmoid(x);
  return s * (Scalar(1) + x * (Scalar(1) - s));
}

}  // namespace unicon::kernels
