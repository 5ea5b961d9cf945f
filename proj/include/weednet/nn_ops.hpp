#pragma once

// Layer primitives: valid-padding stride-1 2D convolution with dilation,
// 2x2/stride-2 max pooling, dense, ReLU and softmax, each with its adjoint.
// Convolution ships two routes: a naive loop reference and an im2col+matmul
// fast path; both accumulate in double and must agree to 1e-6.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "weednet/error.hpp"
#include "weednet/tensor.hpp"

namespace weednet {

// Square kernel, stride 1, valid padding. Weights are stored
// [kernel, kernel, in_channels, out_channels], bias [out_channels].
struct ConvSpec {
  Index kernel = 0;
  Index in_channels = 0;
  Index out_channels = 0;
  Index dilation = 1;

  Index effective_kernel() const { return (kernel - 1) * dilation + 1; }
};

// 2x2 window, stride 2, floor rounding; odd trailing row/column dropped.
struct PoolSpec {
  static constexpr Index window = 2;
  static constexpr Index stride = 2;
};

struct DenseSpec {
  Index in_features = 0;
  Index out_features = 0;
};

// Adjoints of one layer application. d_weights/d_bias stay empty for layers
// without parameters.
template <class T>
struct LayerGrads {
  TensorT<T> d_input;
  TensorT<T> d_weights;
  TensorT<T> d_bias;
};

enum class ConvImpl { naive, im2col };

// Output spatial extent of a valid-padding stride-1 convolution.
inline Index conv_output_extent(Index input_extent, Index kernel, Index dilation) {
  if (kernel < 1 || dilation < 1) {
    throw ShapeError("kernel and dilation must be >= 1, got kernel=" +
                     std::to_string(kernel) + " dilation=" + std::to_string(dilation));
  }
  const Index effective = (kernel - 1) * dilation + 1;
  if (input_extent < effective) {
    throw ShapeError("effective kernel " + std::to_string(effective) +
                     " exceeds input extent " + std::to_string(input_extent));
  }
  return input_extent - dilation * (kernel - 1);
}

inline Index conv_param_count(const ConvSpec& s) {
  return s.out_channels * (s.kernel * s.kernel * s.in_channels + 1);
}

inline Index dense_param_count(const DenseSpec& s) {
  return s.in_features * s.out_features + s.out_features;
}

namespace detail {

template <class T>
void check_conv_args(const TensorT<T>& input, const ConvSpec& spec,
                     const TensorT<T>& weights, const TensorT<T>& bias) {
  if (input.rank() != 4) {
    throw ShapeError("conv2d expects input [B,H,W,C], got " + input.shape().str());
  }
  if (input.extent(3) != spec.in_channels) {
    throw ShapeError("conv2d input channels " + std::to_string(input.extent(3)) +
                     " do not match spec in_channels " + std::to_string(spec.in_channels));
  }
  const Shape want_w{spec.kernel, spec.kernel, spec.in_channels, spec.out_channels};
  if (weights.shape() != want_w) {
    throw ShapeError("conv2d weights shape " + weights.shape().str() + " != " +
                     want_w.str());
  }
  if (bias.shape() != Shape{spec.out_channels}) {
    throw ShapeError("conv2d bias shape " + bias.shape().str() + " != [" +
                     std::to_string(spec.out_channels) + "]");
  }
}

// Unrolled input patches for one batch item: [out_h*out_w, k*k*cin] in double.
template <class T>
void fill_im2col(const T* img, Index h, Index w, Index cin, const ConvSpec& spec,
                 Index out_h, Index out_w, RowMatD& cols) {
  const Index k = spec.kernel, d = spec.dilation;
  for (Index y = 0; y < out_h; ++y) {
    for (Index x = 0; x < out_w; ++x) {
      double* row = cols.data() + (y * out_w + x) * cols.cols();
      for (Index u = 0; u < k; ++u) {
        const T* src = img + ((y + u * d) * w + x) * cin;
        for (Index v = 0; v < k; ++v) {
          const T* px = src + v * d * cin;
          for (Index ci = 0; ci < cin; ++ci) *row++ = static_cast<double>(px[ci]);
        }
      }
    }
  }
}

}  // namespace detail

// out[b,y,x,co] = bias[co] + sum_{u,v,ci} input[b, y+u*d, x+v*d, ci] * w[u,v,ci,co]
template <class T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const ConvSpec& spec,
                          const TensorT<T>& weights, const TensorT<T>& bias,
                          ConvImpl impl = ConvImpl::im2col) {
  detail::check_conv_args(input, spec, weights, bias);
  const Index batch = input.extent(0), h = input.extent(1), w = input.extent(2);
  const Index cin = spec.in_channels, cout = spec.out_channels;
  const Index k = spec.kernel, d = spec.dilation;
  const Index out_h = conv_output_extent(h, k, d);
  const Index out_w = conv_output_extent(w, k, d);
  TensorT<T> out(Shape{batch, out_h, out_w, cout});

  if (impl == ConvImpl::naive) {
    for (Index b = 0; b < batch; ++b) {
      const T* img = input.ptr() + b * h * w * cin;
      T* dst = out.ptr() + b * out_h * out_w * cout;
      for (Index y = 0; y < out_h; ++y) {
        for (Index x = 0; x < out_w; ++x) {
          for (Index co = 0; co < cout; ++co) {
            double acc = static_cast<double>(bias[co]);
            for (Index u = 0; u < k; ++u) {
              for (Index v = 0; v < k; ++v) {
                const T* px = img + ((y + u * d) * w + (x + v * d)) * cin;
                const T* wp = weights.ptr() + ((u * k + v) * cin) * cout + co;
                for (Index ci = 0; ci < cin; ++ci) {
                  acc += static_cast<double>(px[ci]) * static_cast<double>(wp[ci * cout]);
                }
              }
            }
            dst[(y * out_w + x) * cout + co] = static_cast<T>(acc);
          }
        }
      }
    }
    return out;
  }

  // Fast path: per-image im2col followed by one GEMM.
  Eigen::Map<const detail::RowMat<T>> wmat(weights.ptr(), k * k * cin, cout);
  detail::RowMatD wmat_d = wmat.template cast<double>();
  Eigen::Map<const detail::RowMat<T>> bvec(bias.ptr(), 1, cout);
  Eigen::RowVectorXd bias_d = bvec.template cast<double>();
  detail::RowMatD cols(out_h * out_w, k * k * cin);
  for (Index b = 0; b < batch; ++b) {
    detail::fill_im2col(input.ptr() + b * h * w * cin, h, w, cin, spec, out_h, out_w, cols);
    detail::RowMatD prod = cols * wmat_d;
    prod.rowwise() += bias_d;
    Eigen::Map<detail::RowMat<T>>(out.ptr() + b * out_h * out_w * cout,
                                  out_h * out_w, cout) = prod.template cast<T>();
  }
  return out;
}

template <class T>
LayerGrads<T> conv2d_backward(const TensorT<T>& input, const ConvSpec& spec,
                              const TensorT<T>& weights, const TensorT<T>& upstream) {
  const Index batch = input.extent(0), h = input.extent(1), w = input.extent(2);
  const Index cin = spec.in_channels, cout = spec.out_channels;
  const Index k = spec.kernel, d = spec.dilation;
  const Index out_h = conv_output_extent(h, k, d);
  const Index out_w = conv_output_extent(w, k, d);
  TensorT<T> dummy_bias(Shape{cout});
  detail::check_conv_args(input, spec, weights, dummy_bias);
  if (upstream.shape() != Shape{batch, out_h, out_w, cout}) {
    throw ShapeError("conv2d_backward upstream shape " + upstream.shape().str() +
                     " does not match forward output " +
                     Shape{batch, out_h, out_w, cout}.str());
  }

  Eigen::Map<const detail::RowMat<T>> wmat(weights.ptr(), k * k * cin, cout);
  detail::RowMatD wmat_d = wmat.template cast<double>();

  detail::RowMatD dw = detail::RowMatD::Zero(k * k * cin, cout);
  Eigen::RowVectorXd db = Eigen::RowVectorXd::Zero(cout);
  LayerGrads<T> grads;
  grads.d_input = TensorT<T>(input.shape());

  detail::RowMatD cols(out_h * out_w, k * k * cin);
  std::vector<double> dimg(static_cast<std::size_t>(h * w * cin));
  for (Index b = 0; b < batch; ++b) {
    Eigen::Map<const detail::RowMat<T>> up(upstream.ptr() + b * out_h * out_w * cout,
                                           out_h * out_w, cout);
    detail::RowMatD up_d = up.template cast<double>();
    db += up_d.colwise().sum();

    detail::fill_im2col(input.ptr() + b * h * w * cin, h, w, cin, spec, out_h, out_w, cols);
    dw.noalias() += cols.transpose() * up_d;

    // col2im scatter of upstream * W^T back onto the input grid.
    detail::RowMatD dcol = up_d * wmat_d.transpose();
    std::fill(dimg.begin(), dimg.end(), 0.0);
    for (Index y = 0; y < out_h; ++y) {
      for (Index x = 0; x < out_w; ++x) {
        const double* row = dcol.data() + (y * out_w + x) * dcol.cols();
        for (Index u = 0; u < k; ++u) {
          double* dst = dimg.data() + ((y + u * d) * w + x) * cin;
          for (Index v = 0; v < k; ++v) {
            double* px = dst + v * d * cin;
            for (Index ci = 0; ci < cin; ++ci) px[ci] += *row++;
          }
        }
      }
    }
    T* out = grads.d_input.ptr() + b * h * w * cin;
    for (std::size_t i = 0; i < dimg.size(); ++i) out[i] = static_cast<T>(dimg[i]);
  }

  grads.d_weights = TensorT<T>(weights.shape());
  Eigen::Map<detail::RowMat<T>>(grads.d_weights.ptr(), k * k * cin, cout) =
      dw.template cast<T>();
  grads.d_bias = TensorT<T>(Shape{cout});
  for (Index co = 0; co < cout; ++co) grads.d_bias[co] = static_cast<T>(db[co]);
  return grads;
}

// Output cell = max of its 2x2 window; argmax records the flat input index of
// the winner (first in scan order on ties) for the backward routing.
template <class T>
std::pair<TensorT<T>, std::vector<Index>> maxpool_forward(const TensorT<T>& input) {
  if (input.rank() != 4) {
    throw ShapeError("maxpool expects input [B,H,W,C], got " + input.shape().str());
  }
  const Index batch = input.extent(0), h = input.extent(1), w = input.extent(2),
              c = input.extent(3);
  if (h < PoolSpec::window || w < PoolSpec::window) {
    throw ShapeError("maxpool input " + input.shape().str() + " smaller than 2x2 window");
  }
  const Index out_h = h / 2, out_w = w / 2;
  TensorT<T> out(Shape{batch, out_h, out_w, c});
  std::vector<Index> argmax(static_cast<std::size_t>(batch * out_h * out_w * c));
  const T* src = input.ptr();
  T* dst = out.ptr();
  for (Index b = 0; b < batch; ++b) {
    for (Index y = 0; y < out_h; ++y) {
      for (Index x = 0; x < out_w; ++x) {
        for (Index ch = 0; ch < c; ++ch) {
          Index best = ((b * h + 2 * y) * w + 2 * x) * c + ch;
          T best_val = src[best];
          for (Index u = 0; u < 2; ++u) {
            for (Index v = 0; v < 2; ++v) {
              const Index idx = ((b * h + 2 * y + u) * w + 2 * x + v) * c + ch;
              if (src[idx] > best_val) {
                best_val = src[idx];
                best = idx;
              }
            }
          }
          const Index o = ((b * out_h + y) * out_w + x) * c + ch;
          dst[o] = best_val;
          argmax[static_cast<std::size_t>(o)] = best;
        }
      }
    }
  }
  return {std::move(out), std::move(argmax)};
}

// Routes each upstream cell to its recorded argmax position, zero elsewhere.
template <class T>
TensorT<T> maxpool_backward(const std::vector<Index>& argmax, const Shape& input_shape,
                            const TensorT<T>& upstream) {
  if (static_cast<Index>(argmax.size()) != upstream.size()) {
    throw ShapeError("maxpool_backward upstream size " + std::to_string(upstream.size()) +
                     " does not match recorded argmax count " +
                     std::to_string(argmax.size()));
  }
  TensorT<T> d_input(input_shape);
  for (Index i = 0; i < upstream.size(); ++i) {
    d_input[argmax[static_cast<std::size_t>(i)]] += upstream[i];
  }
  return d_input;
}

// out = input * W + bias, row-wise over the batch.
template <class T>
TensorT<T> dense_forward(const TensorT<T>& input, const TensorT<T>& weights,
                         const TensorT<T>& bias) {
  if (input.rank() != 2 || weights.rank() != 2) {
    throw ShapeError("dense expects input [B,F] and weights [F,G], got " +
                     input.shape().str() + " and " + weights.shape().str());
  }
  if (input.extent(1) != weights.extent(0)) {
    throw ShapeError("dense input features " + std::to_string(input.extent(1)) +
                     " do not match weights " + weights.shape().str());
  }
  if (bias.shape() != Shape{weights.extent(1)}) {
    throw ShapeError("dense bias shape " + bias.shape().str() + " != [" +
                     std::to_string(weights.extent(1)) + "]");
  }
  TensorT<T> out = matmul(input, weights);
  const Index batch = out.extent(0), g = out.extent(1);
  for (Index b = 0; b < batch; ++b) {
    for (Index j = 0; j < g; ++j) out[b * g + j] += bias[j];
  }
  return out;
}

// d_W = input^T * upstream, d_bias = column sums, d_input = upstream * W^T.
template <class T>
LayerGrads<T> dense_backward(const TensorT<T>& input, const TensorT<T>& weights,
                             const TensorT<T>& upstream) {
  const Index batch = input.extent(0), f = input.extent(1), g = weights.extent(1);
  if (weights.extent(0) != f) {
    throw ShapeError("dense_backward weights " + weights.shape().str() +
                     " do not match input " + input.shape().str());
  }
  if (upstream.shape() != Shape{batch, g}) {
    throw ShapeError("dense_backward upstream shape " + upstream.shape().str() +
                     " != " + Shape{batch, g}.str());
  }
  Eigen::Map<const detail::RowMat<T>> in(input.ptr(), batch, f);
  Eigen::Map<const detail::RowMat<T>> wm(weights.ptr(), f, g);
  Eigen::Map<const detail::RowMat<T>> up(upstream.ptr(), batch, g);
  detail::RowMatD in_d = in.template cast<double>();
  detail::RowMatD up_d = up.template cast<double>();

  LayerGrads<T> grads;
  grads.d_weights = TensorT<T>(weights.shape());
  Eigen::Map<detail::RowMat<T>>(grads.d_weights.ptr(), f, g) =
      (in_d.transpose() * up_d).template cast<T>();
  grads.d_bias = TensorT<T>(Shape{g});
  Eigen::RowVectorXd db = up_d.colwise().sum();
  for (Index j = 0; j < g; ++j) grads.d_bias[j] = static_cast<T>(db[j]);
  grads.d_input = TensorT<T>(input.shape());
  Eigen::Map<detail::RowMat<T>>(grads.d_input.ptr(), batch, f) =
      (up_d * wm.template cast<double>().transpose()).template cast<T>();
  return grads;
}

template <class T>
TensorT<T> relu(const TensorT<T>& input) {
  TensorT<T> out(input.shape());
  for (Index i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
  return out;
}

// Subgradient at 0 is 0: upstream passes only where input is strictly positive.
template <class T>
TensorT<T> relu_backward(const TensorT<T>& input, const TensorT<T>& upstream) {
  if (input.shape() != upstream.shape()) {
    throw ShapeError("relu_backward shape mismatch: " + input.shape().str() + " vs " +
                     upstream.shape().str());
  }
  TensorT<T> out(input.shape());
  for (Index i = 0; i < input.size(); ++i) {
    out[i] = input[i] > T(0) ? upstream[i] : T(0);
  }
  return out;
}

// Row-wise exp-normalize with max subtraction; rows sum to 1.
template <class T>
TensorT<T> softmax(const TensorT<T>& logits) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax expects logits [B,K], got " + logits.shape().str());
  }
  const Index batch = logits.extent(0), k = logits.extent(1);
  TensorT<T> out(logits.shape());
  std::vector<double> row(static_cast<std::size_t>(k));
  for (Index b = 0; b < batch; ++b) {
    const T* src = logits.ptr() + b * k;
    double max_logit = static_cast<double>(src[0]);
    for (Index j = 1; j < k; ++j) {
      max_logit = std::max(max_logit, static_cast<double>(src[j]));
    }
    double total = 0.0;
    for (Index j = 0; j < k; ++j) {
      row[static_cast<std::size_t>(j)] = std::exp(static_cast<double>(src[j]) - max_logit);
      total += row[static_cast<std::size_t>(j)];
    }
    T* dst = out.ptr() + b * k;
    for (Index j = 0; j < k; ++j) {
      dst[j] = static_cast<T>(row[static_cast<std::size_t>(j)] / total);
    }
  }
  return out;
}

}  // namespace weednet
