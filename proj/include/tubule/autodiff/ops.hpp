#pragma once

#include <array>
#include <cstddef>

#include "tubule/autodiff/tensor.hpp"

// Differentiable operators. 5-D tensors use the N,C,D,H,W layout.

namespace tubule::ad {

using Triple = std::array<std::size_t, 3>;

/// Direct cross-correlation. `bias` may be an undefined tensor.
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& k, const Tensor<T>& bias, Triple padding = {0, 0, 0},
                 Triple stride = {1, 1, 1});

/// Per (n, c) normalisation with biased variance, then gamma/beta.
template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5);

/// 2x2x2 pooling with stride 2. Odd extents are padded by replicating the
/// last slice, so every output extent is ceil(n/2). Max routes the gradient
/// to the first maximum in z,y,x scan order.
template <class T>
Tensor<T> max_pool2(const Tensor<T>& x);
template <class T>
Tensor<T> avg_pool2(const Tensor<T>& x);

/// Trilinear resampling, align-corners-false: output index i samples input
/// coordinate (i + 0.5) * in / out - 0.5, clamped to [0, in - 1].
template <class T>
Tensor<T> trilinear_resize(const Tensor<T>& x, Triple dhw);

template <class T>
Tensor<T> relu(const Tensor<T>& x);
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x);
/// |x|^p; the derivative at x == 0 is taken as 0.
template <class T>
Tensor<T> abs_pow(const Tensor<T>& x, double p);
template <class T>
Tensor<T> log(const Tensor<T>& x);
/// Gradient passes only where lo <= x <= hi.
template <class T>
Tensor<T> clamp(const Tensor<T>& x, double lo, double hi);
/// a * x + b
template <class T>
Tensor<T> affine(const Tensor<T>& x, double a, double b);

// Elementwise on equal shapes; a one-element operand broadcasts.
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs);
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end);

/// [N,C,...] -> [N,1,...]
template <class T>
Tensor<T> channel_sum(const Tensor<T>& x);
/// Softmax across C at every voxel.
template <class T>
Tensor<T> channel_softmax(const Tensor<T>& x);
/// Softmax across all D*H*W positions of each (n, c).
template <class T>
Tensor<T> spatial_softmax(const Tensor<T>& x);

template <class T>
Tensor<T> sum(const Tensor<T>& x);
template <class T>
Tensor<T> mean(const Tensor<T>& x);
/// Sum of squares.
template <class T>
Tensor<T> frobenius_sq(const Tensor<T>& x);

/// Direction-wise spatial integration of A with learned weights d[D], h[H],
/// w[W]:
///   Zd[i] = sum_j h_j sum_k w_k A[i,j,k]
///   Zh[j] = sum_i d_i sum_k w_k A[i,j,k]
///   Zw[k] = sum_i d_i sum_j h_j A[i,j,k]
/// and the result is Zd[i] + Zh[j] + Zw[k] broadcast to A's shape.
template <class T>
Tensor<T> spatial_integration(const Tensor<T>& a, const Tensor<T>& d, const Tensor<T>& h, const Tensor<T>& w);

}  // namespace tubule::ad
