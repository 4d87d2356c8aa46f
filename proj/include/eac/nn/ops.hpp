#pragma once

// Differentiable primitives. Each one computes its value eagerly and records
// itself on the tape of its first operand.

#include <cstdint>
#include <span>

#include "eac/nn/tape.hpp"

namespace eac::nn {

// 2-D product a[m,k] * b[k,n].
Var matmul(Var a, Var b);
Var add(Var a, Var b);
// x[..., in] * w[in, out] + b[out].
Var linear(Var x, Var w, Var b);
Var relu(Var x);
Var reshape(Var x, Shape shape);
// h[..., n, d] + p[n, d], broadcasting p over the leading axes.
Var add_node_prompt(Var h, Var p);
// a_hat[n, n] * h_s * w for every slice h_s of h[..., n, d_in].
Var graph_conv_spatial(const Tensor& a_hat, Var h, Var w);
// sum_k T_k(l_tilde) * h_s * thetas[k], with T_0 = I, T_1 = l_tilde and
// T_k = 2 l_tilde T_{k-1} - T_{k-2}. K_order = thetas.size() - 1.
Var graph_conv_cheb(const Tensor& l_tilde, Var h, std::span<const Var> thetas);
// Convolution along the time axis of x[B, T, n, d] with w[K, d, e] (K odd)
// and bias b[e]; zero padding keeps the output length T.
Var temporal_conv(Var x, Var w, Var b);
// x[B, T, n, d] -> mean over T -> [B, n, d].
Var mean_pool_time(Var x);
// Inverted dropout; p == 0 returns x itself.
Var dropout(Var x, double p, std::uint64_t seed);
Var mse_loss(Var pred, const Tensor& target);
// Row-wise concatenation of 2-D blocks with equal column counts.
Var concat_rows(std::span<const Var> blocks);
// [..., a, b] -> [..., b, a].
Var swap_last_two(Var x);

}  // namespace eac::nn
