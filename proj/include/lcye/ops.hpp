#pragma once

#include <vector>

#include "lcye/autograd.hpp"

// Differentiable tensor operations. Image tensors are B x C x H x W; matrix
// operations take rank-2 tensors. Every op checks shapes and throws
// std::invalid_argument on mismatch.
namespace lcye::ag {

// Elementwise, identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// x (B x ...) plus p (1 x ...), broadcasting p over the batch.
Var add_batch_broadcast(const Var& x, const Var& p);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

/// mask (B x 1 x H x W) times x (B x C x H x W), broadcasting over channels.
Var mul_channel_broadcast(const Var& mask, const Var& x);
/// Elementwise product with a constant tensor of the same shape.
Var mul_const(const Var& a, const Tensor& c);

Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var square(const Var& a);
Var sqrt(const Var& a);
/// x^p for x >= 0; the derivative at x = 0 is taken as 0.
Var pow_scalar(const Var& a, double p);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
/// NaN passes through unchanged.
Var clamp(const Var& a, double lo, double hi);

Var sum(const Var& a);
Var mean(const Var& a);
/// B x ... -> B, averaging all trailing elements.
Var mean_per_sample(const Var& a);
/// (x - mean) / sqrt(var + eps), statistics over all entries of each sample.
Var standardize_per_sample(const Var& a, double eps = 1e-5);

// Spatial ops.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
Var upsample_nearest2x(const Var& x);
/// Bilinear resampling with half-pixel centers (align_corners = false).
Var resize_bilinear(const Var& x, int out_h, int out_w);
Var crop(const Var& x, int top, int left, int h, int w);
Var avg_pool2x(const Var& x);
/// Depthwise correlation with a fixed k x k kernel, no padding.
Var filter2d_valid(const Var& x, const Tensor& kernel);
Var global_max_pool(const Var& x);
Var global_avg_pool(const Var& x);

/// Batch statistics over every axis but 1. `batch_mean`/`batch_var` receive the
/// per-channel mean and unbiased variance for running-average updates.
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps, Tensor* batch_mean,
                     Tensor* batch_var);
Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean, const Tensor& var,
                    double eps);

// Matrix ops.
Var linear(const Var& x, const Var& weight, const Var& bias);
Var matmul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);
/// L2-normalizes rows; rows with norm below `eps` map to zero.
Var row_normalize(const Var& a, double eps = 1e-12);
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
/// Divides each row by its sum.
Var rows_div_sum(const Var& a);
/// Squared Euclidean distances between all row pairs of a B x D matrix.
Var pairwise_sq_dist(const Var& e);
/// Picks elements by flat index into a rank-1 result.
Var gather(const Var& a, const std::vector<std::size_t>& flat_index);

// Layout.
Var reshape(const Var& a, Shape shape);
/// Concatenates along axis 1; inputs agree on axis 0 and on trailing axes.
Var concat1(const std::vector<Var>& parts);
/// B x C x H x W -> (B*H*W) x C.
Var to_rows(const Var& x);
/// Inverse of to_rows.
Var from_rows(const Var& rows, int batch, int h, int w);

}  // namespace lcye::ag
