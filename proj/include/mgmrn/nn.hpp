// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "mgmrn/common.hpp"

namespace mgmrn {

// ---------------------------------------------------------------------------
// Elementwise and rowwise primitives
// ---------------------------------------------------------------------------

/// Rowwise softmax with per-row max subtraction.
template <class Scalar>
void softmax_rows_inplace(Matrix<Scalar>& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    Scalar mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

template <class Scalar>
Matrix<Scalar> softmax_rows(Matrix<Scalar> m) {
  softmax_rows_inplace(m);
  return m;
}

/// Backward of rowwise softmax: given probabilities p and upstream dp,
/// returns dlogits = p .* (dp - rowsum(dp .* p)).
template <class Scalar>
Matrix<Scalar> softmax_backward_rows(const Matrix<Scalar>& probs, const Matrix<Scalar>& dprobs) {
  Vector<Scalar> dot = (probs.array() * dprobs.array()).rowwise().sum();
  return (probs.array() * (dprobs.array().colwise() - dot.array())).matrix();
}

template <class Scalar>
Matrix<Scalar> sigmoid(const Matrix<Scalar>& m) {
  return (Scalar(1) / (Scalar(1) + (-m.array()).exp())).matrix();
}

template <class Scalar>
Scalar sigmoid_scalar(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

// ---------------------------------------------------------------------------
// Linear layer over row vectors: y = x * weight + bias
// ---------------------------------------------------------------------------

template <class Scalar>
struct Linear {
  Matrix<Scalar> weight;  // [in x out]
  Matrix<Scalar> bias;    // [1 x out]
  Matrix<Scalar> grad_weight;
  Matrix<Scalar> grad_bias;

  Linear() = default;
  Linear(Index in, Index out) { resize(in, out); }

  void resize(Index in, Index out) {
    weight.setZero(in, out);
    bias.setZero(1, out);
    grad_weight.setZero(in, out);
    grad_bias.setZero(1, out);
  }

  void init(double stddev, Rng& rng) { fill_normal(weight, stddev, rng); bias.setZero(); }

  Index in_features() const { return weight.rows(); }
  Index out_features() const { return weight.cols(); }

  Matrix<Scalar> forward(const Matrix<Scalar>& x) {
    check(x.cols() == weight.rows(), "Linear: input feature dimension mismatch");
    input_ = x;
    Matrix<Scalar> y = x * weight;
    y.rowwise() += bias.row(0);
    return y;
  }

  Matrix<Scalar> backward(const Matrix<Scalar>& dy) {
    grad_weight.noalias() += input_.transpose() * dy;
    grad_bias.row(0) += dy.colwise().sum();
    return dy * weight.transpose();
  }

  void params(ParamList<Scalar>& out, const std::string& prefix) {
    out.push_back({prefix + "/weight", &weight, &grad_weight});
    out.push_back({prefix + "/bias", &bias, &grad_bias});
  }

 private:
  Matrix<Scalar> input_;
};

// ---------------------------------------------------------------------------
// 2D convolution (im2col + GEMM), channels-last tensors
// ---------------------------------------------------------------------------

template <class Scalar>
struct Conv2d {
  Index in_channels = 0, out_channels = 0;
  Index kernel = 3, stride = 1, pad = 1;
  Matrix<Scalar> weight;  // [kernel*kernel*in_channels x out_channels]
  Matrix<Scalar> bias;    // [1 x out_channels]
  Matrix<Scalar> grad_weight;
  Matrix<Scalar> grad_bias;

  Conv2d() = default;
  Conv2d(Index in_ch, Index out_ch, Index k, Index s, Index p)
      : in_channels(in_ch), out_channels(out_ch), kernel(k), stride(s), pad(p) {
    weight.setZero(k * k * in_ch, out_ch);
    bias.setZero(1, out_ch);
    grad_weight.setZero(k * k * in_ch, out_ch);
    grad_bias.setZero(1, out_ch);
  }

  void init(double stddev, Rng& rng) { fill_normal(weight, stddev, rng); bias.setZero(); }

  Index out_size(Index in) const { return (in + 2 * pad - kernel) / stride + 1; }

  Tensor4<Scalar> forward(const Tensor4<Scalar>& x) {
    check(x.channels == in_channels, "Conv2d: channel mismatch");
    in_h_ = x.height;
    in_w_ = x.width;
    batch_ = x.batch;
    const Index oh = out_size(x.height), ow = out_size(x.width);
    im2col(x, oh, ow);
    Tensor4<Scalar> y(x.batch, oh, ow, out_channels);
    y.data.noalias() = col_ * weight;
    y.data.rowwise() += bias.row(0);
    return y;
  }

  Tensor4<Scalar> backward(const Tensor4<Scalar>& dy) {
    grad_weight.noalias() += col_.transpose() * dy.data;
    grad_bias.row(0) += dy.data.colwise().sum();
    Matrix<Scalar> dcol = dy.data * weight.transpose();
    return col2im(dcol, dy.height, dy.width);
  }

  void params(ParamList<Scalar>& out, const std::string& prefix) {
    out.push_back({prefix + "/weight", &weight, &grad_weight});
    out.push_back({prefix + "/bias", &bias, &grad_bias});
  }

 private:
  Index in_h_ = 0, in_w_ = 0, batch_ = 0;
  Matrix<Scalar> col_;  // [batch*oh*ow x kernel*kernel*in_channels]

  void im2col(const Tensor4<Scalar>& x, Index oh, Index ow) {
    col_.setZero(x.batch * oh * ow, kernel * kernel * in_channels);
    for (Index b = 0; b < x.batch; ++b) {
      for (Index oi = 0; oi < oh; ++oi) {
        for (Index oj = 0; oj < ow; ++oj) {
          const Index r = (b * oh + oi) * ow + oj;
          for (Index ki = 0; ki < kernel; ++ki) {
            const Index ii = oi * stride + ki - pad;
            if (ii < 0 || ii >= x.height) continue;
            for (Index kj = 0; kj < kernel; ++kj) {
              const Index jj = oj * stride + kj - pad;
              if (jj < 0 || jj >= x.width) continue;
              col_.block(r, (ki * kernel + kj) * in_channels, 1, in_channels) =
                  x.data.row(x.row_index(b, ii, jj));
            }
          }
        }
      }
    }
  }

  Tensor4<Scalar> col2im(const Matrix<Scalar>& dcol, Index oh, Index ow) const {
    Tensor4<Scalar> dx = Tensor4<Scalar>::zero(batch_, in_h_, in_w_, in_channels);
    for (Index b = 0; b < batch_; ++b) {
      for (Index oi = 0; oi < oh; ++oi) {
        for (Index oj = 0; oj < ow; ++oj) {
          const Index r = (b * oh + oi) * ow + oj;
          for (Index ki = 0; ki < kernel; ++ki) {
            const Index ii = oi * stride + ki - pad;
            if (ii < 0 || ii >= in_h_) continue;
            for (Index kj = 0; kj < kernel; ++kj) {
              const Index jj = oj * stride + kj - pad;
              if (jj < 0 || jj >= in_w_) continue;
              dx.data.row(dx.row_index(b, ii, jj)) +=
                  dcol.block(r, (ki * kernel + kj) * in_channels, 1, in_channels);
            }
          }
        }
      }
    }
    return dx;
  }
};

// ---------------------------------------------------------------------------
// ReLU with cached mask
// ---------------------------------------------------------------------------

template <class Scalar>
struct Relu {
  Tensor4<Scalar> forward(const Tensor4<Scalar>& x) {
    mask_ = (x.data.array() > Scalar(0)).template cast<Scalar>();
    Tensor4<Scalar> y = x;
    y.data = x.data.cwiseProduct(mask_);
    return y;
  }
  Tensor4<Scalar> backward(const Tensor4<Scalar>& dy) {
    Tensor4<Scalar> dx = dy;
    dx.data = dy.data.cwiseProduct(mask_);
    return dx;
  }

 private:
  Matrix<Scalar> mask_;
};

// ---------------------------------------------------------------------------
// Adaptive average pooling (PyTorch-style window boundaries)
// ---------------------------------------------------------------------------

template <class Scalar>
Tensor4<Scalar> adaptive_avg_pool(const Tensor4<Scalar>& x, Index out_h, Index out_w) {
  check(out_h >= 1 && out_w >= 1, "adaptive_avg_pool: target must be positive");
  check(out_h <= x.height && out_w <= x.width, "adaptive_avg_pool: target larger than source grid");
  Tensor4<Scalar> y = Tensor4<Scalar>::zero(x.batch, out_h, out_w, x.channels);
  for (Index b = 0; b < x.batch; ++b) {
    for (Index i = 0; i < out_h; ++i) {
      const Index i0 = (i * x.height) / out_h;
      const Index i1 = ((i + 1) * x.height + out_h - 1) / out_h;
      for (Index j = 0; j < out_w; ++j) {
        const Index j0 = (j * x.width) / out_w;
        const Index j1 = ((j + 1) * x.width + out_w - 1) / out_w;
        auto out = y.data.row(y.row_index(b, i, j));
        for (Index ii = i0; ii < i1; ++ii)
          for (Index jj = j0; jj < j1; ++jj) out += x.data.row(x.row_index(b, ii, jj));
        out /= Scalar((i1 - i0) * (j1 - j0));
      }
    }
  }
  return y;
}

template <class Scalar>
Tensor4<Scalar> adaptive_avg_pool_backward(const Tensor4<Scalar>& dy, Index in_h, Index in_w) {
  Tensor4<Scalar> dx = Tensor4<Scalar>::zero(dy.batch, in_h, in_w, dy.channels);
  for (Index b = 0; b < dy.batch; ++b) {
    for (Index i = 0; i < dy.height; ++i) {
      const Index i0 = (i * in_h) / dy.height;
      const Index i1 = ((i + 1) * in_h + dy.height - 1) / dy.height;
      for (Index j = 0; j < dy.width; ++j) {
        const Index j0 = (j * in_w) / dy.width;
        const Index j1 = ((j + 1) * in_w + dy.width - 1) / dy.width;
        const Scalar scale = Scalar(1) / Scalar((i1 - i0) * (j1 - j0));
        for (Index ii = i0; ii < i1; ++ii)
          for (Index jj = j0; jj < j1; ++jj)
            dx.data.row(dx.row_index(b, ii, jj)) += scale * dy.data.row(dy.row_index(b, i, j));
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Bilinear upsampling (export path only, no gradient)
// ---------------------------------------------------------------------------

/// Upsample a single-channel map [h x w] to [out_h x out_w], half-pixel
/// centers convention.
template <class Scalar>
Matrix<Scalar> bilinear_upsample(const Matrix<Scalar>& map, Index out_h, Index out_w) {
  const Index h = map.rows(), w = map.cols();
  Matrix<Scalar> out(out_h, out_w);
  for (Index i = 0; i < out_h; ++i) {
    double y = (static_cast<double>(i) + 0.5) * static_cast<double>(h) / static_cast<double>(out_h) - 0.5;
    y = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
    const Index y0 = static_cast<Index>(std::floor(y));
    const Index y1 = std::min(y0 + 1, h - 1);
    const double fy = y - static_cast<double>(y0);
    for (Index j = 0; j < out_w; ++j) {
      double x = (static_cast<double>(j) + 0.5) * static_cast<double>(w) / static_cast<double>(out_w) - 0.5;
      x = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
      const Index x0 = static_cast<Index>(std::floor(x));
      const Index x1 = std::min(x0 + 1, w - 1);
      const double fx = x - static_cast<double>(x0);
      const double v = (1 - fy) * ((1 - fx) * map(y0, x0) + fx * map(y0, x1)) +
                       fy * ((1 - fx) * map(y1, x0) + fx * map(y1, x1));
      out(i, j) = static_cast<Scalar>(v);
    }
  }
  return out;
}

}  // namespace mgmrn
