#pragma once

#include "msd/tensor.hpp"

namespace msd::ops {

// Linear algebra and elementwise arithmetic. Elementwise binaries require
// identical shapes; the only broadcast is add_bias.
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                 // rank 2
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// x of shape [B, C, ...] plus bias of shape [C] along axis 1.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// Adjoint of add_bias in its bias argument: sums every axis except 1.
Tensor bias_reduce(const Tensor& x);

/// Row-wise log-softmax of a rank-2 tensor.
Tensor log_softmax(const Tensor& logits);

// Reductions.
Tensor sum(const Tensor& a);   // scalar
Tensor mean(const Tensor& a);  // scalar
Tensor dot(const Tensor& a, const Tensor& b);
Tensor l2_norm(const Tensor& a);
Tensor row_sum(const Tensor& a);                   // [m,n] -> [m]
Tensor broadcast_cols(const Tensor& v, std::size_t n);  // [m] -> [m,n]
Tensor expand(const Tensor& s, Shape shape);       // scalar -> shape

// 3x3 convolution, stride 1, zero padding 1. x: [B,Cin,H,W], w: [Cout,Cin,3,3].
Tensor conv2d_3x3(const Tensor& x, const Tensor& w);
/// Adjoint of conv2d_3x3 in x: g [B,Cout,H,W], w -> [B,Cin,H,W].
Tensor conv2d_3x3_input_grad(const Tensor& g, const Tensor& w);
/// Adjoint of conv2d_3x3 in w: x [B,Cin,H,W], g [B,Cout,H,W] -> [Cout,Cin,3,3].
Tensor conv2d_3x3_weight_grad(const Tensor& x, const Tensor& g);

/// 2x2 mean pooling, stride 2, on [B,C,H,W] with even H and W.
Tensor mean_pool2x2(const Tensor& x);
/// Adjoint of mean_pool2x2: spreads each value/4 over its 2x2 window.
Tensor mean_pool2x2_adjoint(const Tensor& g);

}  // namespace msd::ops
