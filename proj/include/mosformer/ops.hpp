#pragma once

#include <cstdint>
#include <vector>

#include "mosformer/tensor.hpp"

namespace mosf {

// ---- elementwise / structural ----

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T c);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> gelu(const Tensor<T>& a);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape new_shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t dim);
template <typename T> Tensor<T> narrow(const Tensor<T>& a, std::size_t dim, std::size_t start, std::size_t len);

// out[i] = idx[i] < 0 ? 0 : a.data[idx[i]]. Backward scatter-adds through the
// same map, so any permutation / pad / crop / roll is expressible.
template <typename T>
Tensor<T> gather(const Tensor<T>& a, std::vector<std::int64_t> idx, Shape out_shape);

// x: [rows, d], bias: [d]
template <typename T> Tensor<T> add_bias_rows(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T> Tensor<T> sum_all(const Tensor<T>& a);
template <typename T> Tensor<T> mean_all(const Tensor<T>& a);

// ---- linear algebra ----

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// a: [G, m, k]; b: [G, k, n] (or [G, n, k] when trans_b). Output alpha*(a@b).
template <typename T>
Tensor<T> batched_matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_b = false, T alpha = T(1));

// ---- normalization / attention math ----

template <typename T> Tensor<T> softmax_lastdim(const Tensor<T>& x);

// Normalizes over the last dim; gamma/beta have that extent.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));

// x: [N,C,H,W]. Training mode uses batch statistics; eval mode uses the
// running buffers. Buffers only move when update_running is set.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                       Tensor<T>& running_var, bool training, bool update_running, T momentum = T(0.9),
                       T eps = T(1e-5));

// scores laid out [B*nwin, heads, T, T]; bias [heads, T, T] broadcasts over
// the leading groups and receives the summed gradient.
template <typename T>
Tensor<T> add_head_bias(const Tensor<T>& scores, const Tensor<T>& bias, std::size_t groups, std::size_t heads);

// mask [nwin, T, T] is an additive constant: scores [B, nwin, heads, T, T]
// flattened; backward is a pass-through.
template <typename T>
Tensor<T> add_window_mask(const Tensor<T>& scores, const std::vector<T>& mask, std::size_t batch, std::size_t nwin,
                          std::size_t heads, std::size_t tokens);

// ---- convolution / resampling ----

// x: [N,C,H,W], w: [O,C,kh,kw], bias: optional [O].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride, std::size_t pad);

template <typename T> Tensor<T> upsample_bilinear2x(const Tensor<T>& x);

// Zero-pads bottom/right so H,W become divisible by the window size.
template <typename T> Tensor<T> pad2d_bottom_right(const Tensor<T>& x, std::size_t pad_h, std::size_t pad_w);
template <typename T> Tensor<T> crop2d_top_left(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

}  // namespace mosf
