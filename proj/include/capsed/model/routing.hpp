#pragma once

#include "capsed/ops.hpp"
#include "capsed/tape.hpp"

namespace capsed {

// Coupling-logit state for routing-by-agreement. In reset mode beta starts
// at zero for every window; in persistent mode the final beta of a window's
// last frame is carried to the next window of the same stream (values only,
// no gradient across windows).
struct RoutingState {
    Tensor beta;  // [N,K]

    static RoutingState zeros(index_t n_in, index_t k_total) {
        return RoutingState{Tensor::zeros({n_in, k_total})};
    }
    bool empty() const { return beta.empty(); }
};

struct RoutingResult {
    Var v;             // [T,K,G] squashed output capsules
    Var alpha_last;    // [T,N,K] couplings of the final iteration
    Tensor beta_last;  // [N,K] final beta of the last frame (carry-out)
};

// Routing-by-agreement, unrolled on the tape, batched over the leading T
// axis (each frame routes independently from the same initial beta):
//   repeat r times:
//     alpha = softmax over output capsules of beta
//     s_j   = sum_i alpha_ij u_hat_j|i
//     v_j   = squash(s_j)
//     beta += u_hat . v
// u_hat [T,N,K,G]; beta0 [N,K] (zeros when absent).
RoutingResult route_frames(Var u_hat, int iterations, const Tensor* beta0,
                           bool stop_alpha_gradient = false);

// Single-instance routing: u_hat [N,K,G] -> v [K,G]; state.beta is the
// initial logits going in and the final logits coming out.
Var route(Var u_hat, int iterations, RoutingState& state, bool stop_alpha_gradient = false);

}  // namespace capsed
