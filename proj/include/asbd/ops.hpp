#ifndef ASBD_OPS_HPP
#define ASBD_OPS_HPP

#include "asbd/attention_mask.hpp"
#include "asbd/rng.hpp"
#include "asbd/tensor.hpp"

#include <span>
#include <vector>

// Differentiable primitives. Every op checks its output for NaN/Inf and, when
// a tape is active and some input requires a gradient, records a backward
// closure on that tape.
namespace asbd {

// [m,k]x[k,n], or equal-rank batched [...,m,k]x[...,k,n] with equal leading dims.
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

// Output axis i takes input axis axes[i].
template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, const std::vector<int>& axes);

// Swaps the last two axes.
template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape);

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

// x + y where y's shape is a trailing suffix of x's shape (bias, positional table).
template <typename Scalar>
Tensor<Scalar> add_broadcast(const Tensor<Scalar>& x, const Tensor<Scalar>& y);

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x);

// Smallest |input| relu has seen on this thread since the last reset. Gradient
// checks use it to reject points too close to the kink.
void reset_relu_margin();
double relu_margin();

// Sum of all entries, as a scalar tensor.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x);

// Max-subtracted softmax along `axis` (negative counts from the end).
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, int axis);

template <typename Scalar>
Tensor<Scalar> log_softmax(const Tensor<Scalar>& x, int axis);

// Softmax over the last axis of [B,H,Tq,Tk] scores; forbidden keys get
// exactly zero weight. Throws ContractError if some row allows no key.
template <typename Scalar>
Tensor<Scalar> masked_softmax(const Tensor<Scalar>& scores, const AttentionMask& mask);

// Normalizes over the last axis with population variance.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          Scalar eps = Scalar(1e-5));

// [V,d] table, [B,T] ids -> [B,T,d]. Backward scatter-adds rows.
template <typename Scalar>
Tensor<Scalar> embedding_lookup(const Tensor<Scalar>& table, const TokenMatrix& ids);

// [V,d] table, n ids -> [n,d].
template <typename Scalar>
Tensor<Scalar> embedding_lookup(const Tensor<Scalar>& table, std::span<const int> ids);

// Mean negative log-likelihood over rows of [..., V] logits whose target is
// not `ignore_id`. With every row ignored the loss is 0 with zero gradient.
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const int> targets, int ignore_id);

// Inverted dropout; rate 0 returns x itself.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double rate, Rng& rng);

}  // namespace asbd

#endif  // ASBD_OPS_HPP
