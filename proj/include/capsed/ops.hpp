#pragma once

#include <vector>

#include "capsed/rng.hpp"
#include "capsed/tape.hpp"

namespace capsed::ops {

// Every op validates shapes, checks its output for NaN/Inf (an error state,
// never silent) and, when any input requires gradients, wires an adjoint
// closure onto the tape.

// ---- elementwise / basic ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scalar_mul(Var a, double s);
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, std::vector<index_t> shape);
Var detach(Var a);  // identity, blocks gradients

Var relu(Var a);
Var tanh_act(Var a);
Var sigmoid(Var a);

// Inverted dropout: at train time zeroes each element with probability rate
// and scales survivors by 1/(1-rate); identity at inference. rate in [0,1).
Var dropout(Var a, double rate, bool train, Rng& rng);

// lambda * sum over params of sum(p^2)
Var l2_penalty(const std::vector<Var>& params, double lambda);

// Numerically stable softmax along `axis` (max subtraction).
Var softmax_axis(Var a, size_t axis);

// ---- dense / conv / pooling ----
// input [.., Din] x weight [Din, Dout] + bias [Dout] -> [.., Dout].
// Pass an invalid Var{} for bias to omit it.
Var dense(Var input, Var weight, Var bias);

// 'same' zero padding: floor((k-1)/2) leading, ceil((k-1)/2) trailing.
// input [T,F,Cin], kernels [k1,k2,Cin,Cout], bias [Cout] (optional) -> [T,F,Cout].
Var conv2d(Var input, Var kernels, Var bias);

// Max pooling over p consecutive frequency bins; time axis untouched;
// gradient routes to the first maximal element of each pool window.
// input [T,F,Q] -> [T,floor(F/p),Q].
Var max_pool_freq(Var input, index_t p);

// Per-channel batch normalization over the window's T*F samples (train) or
// the running averages (inference). Running stats are updated in place at
// train time with momentum 0.9.
struct BatchNormBuffers {
    Tensor running_mean;  // [C]
    Tensor running_var;   // [C]
    bool initialized = false;
};
Var batchnorm(Var input, Var gamma, Var beta, BatchNormBuffers& buffers, bool train,
              double momentum = 0.9, double eps = 1e-5);

// ---- capsule primitives ----
// v = (|s|^2/(1+|s|^2)) * s/|s| with |s| = sqrt(sum s^2 + 1e-12), applied to
// each vector along the last axis.
Var squash_lastdim(Var s);

// u_hat[t,i,j,:] = W[i,j] * u[t,i,:]
// u [T,N,M], W [N,K,M,G] -> [T,N,K,G]
Var caps_predict(Var u, Var W);

// s[t,j,:] = sum_i alpha[t,i,j] * u_hat[t,i,j,:]
// u_hat [T,N,K,G], alpha [T,N,K] -> [T,K,G]
Var caps_weighted_sum(Var u_hat, Var alpha);

// a[t,i,j] = u_hat[t,i,j,:] . v[t,j,:]
// u_hat [T,N,K,G], v [T,K,G] -> [T,N,K]
Var caps_agreement(Var u_hat, Var v);

// Euclidean norms along the last axis, plain sqrt(sum v^2) so corner values
// are exact; gradient defined as zero at an exactly-zero vector.
// [.., G] -> [..]
Var capsule_norms(Var v);

// Margin loss from capsule norms: per frame and class
//   T_k max(0, m_plus - n)^2 + lambda (1 - T_k) max(0, n - m_minus)^2
// summed over classes, averaged over the first n_valid frames.
// norms [T,K], targets [T,K] in {0,1}.
Var margin_loss_from_norms(Var norms, const Tensor& targets, index_t n_valid,
                           double m_plus = 0.9, double m_minus = 0.1, double lambda = 0.5);

// Frame-wise binary cross-entropy on logits, summed over classes, averaged
// over the first n_valid frames. logits [T,K], targets [T,K].
Var bce_with_logits(Var logits, const Tensor& targets, index_t n_valid);

}  // namespace capsed::ops
