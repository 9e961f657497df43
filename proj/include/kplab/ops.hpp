#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "kplab/tape.hpp"
#include "kplab/tensor.hpp"

// Differentiable tensor operations. Every op records itself on the tape of
// its tracked inputs (if any) and validates shapes up front.
namespace kplab::ops {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor abs(const Tensor& x);  // subgradient 0 at 0
Tensor square(const Tensor& x);

// Reductions to a {1} scalar.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x[m,n] + bias[n] broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
// x[C,H,W] + bias[C] broadcast over the spatial extent.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

// Cross-correlation (no kernel flip) with zero padding.
// input [C_in,H,W], kernels [C_out,C_in,kh,kw] -> [C_out,H',W'],
// H' = (H + 2*padding - kh) / stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernels, std::size_t stride, std::size_t padding);

// [C,H,W] -> [C,H*f,W*f], nearest neighbour.
Tensor upsample_nearest(const Tensor& x, std::size_t factor);
// [C,H,W] -> [C,H/f,W/f], mean over f x f blocks; H and W must divide.
Tensor avg_pool(const Tensor& x, std::size_t factor);

Tensor softmax_axis(const Tensor& x, std::size_t axis);
Tensor log_softmax_axis(const Tensor& x, std::size_t axis);

// Mean over slices along `axis` of sum target * (log target - log_pred),
// with 0 log 0 = 0. `target` is treated as a constant.
Tensor kl_div(const Tensor& log_pred, const Tensor& target, std::size_t axis);

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// featmap [C,H,W], coords in normalized [0,1]^2 (clamped) -> [N,C].
// Normalized x maps to the continuous column x*W - 0.5, so (i+0.5)/W is the
// centre of column i. Gradient flows to the feature map only.
Tensor bilinear_sample(const Tensor& featmap, std::span<const Point2> coords);

// Row gather: x[m,n] -> [idx.size(), n].
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx);
// Euclidean norm of each row: x[m,n] -> [m]; gradient 0 on zero rows.
Tensor row_norm(const Tensor& x);
// [m,p] ++ [m,q] -> [m,p+q]
Tensor concat_cols(const Tensor& a, const Tensor& b);

}  // namespace kplab::ops
