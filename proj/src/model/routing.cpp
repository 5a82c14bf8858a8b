#include "capsed/model/routing.hpp"

#include <cstring>

#include "capsed/common.hpp"

namespace capsed {

RoutingResult route_frames(Var u_hat, int iterations, const Tensor* beta0,
                           bool stop_alpha_gradient) {
    const auto& hs = u_hat.shape();
    if (hs.size() != 4) throw ShapeError("route: u_hat must be [T,N,K,G]");
    if (iterations < 1) throw ShapeError("route: iterations must be >= 1");
    const index_t T = hs[0], N = hs[1], K = hs[2];
    Tape& tape = *u_hat.tape;

    Tensor beta_init({T, N, K});
    if (beta0) {
        if (beta0->shape() != std::vector<index_t>{N, K})
            throw ShapeError("route: carried beta must be [N,K]");
        for (index_t t = 0; t < T; ++t)
            std::memcpy(beta_init.data() + t * N * K, beta0->data(),
                        static_cast<size_t>(N * K) * sizeof(double));
    }
    Var beta = tape.constant(std::move(beta_init));

    Var v{};
    Var alpha{};
    for (int it = 0; it < iterations; ++it) {
        alpha = ops::softmax_axis(beta, 2);
        if (stop_alpha_gradient) alpha = ops::detach(alpha);
        Var s = ops::caps_weighted_sum(u_hat, alpha);
        v = ops::squash_lastdim(s);
        Var agreement = ops::caps_agreement(u_hat, v);
        beta = ops::add(beta, agreement);
    }

    const Tensor& bfinal = beta.value();
    Tensor beta_last({N, K});
    std::memcpy(beta_last.data(), bfinal.data() + (T - 1) * N * K,
                static_cast<size_t>(N * K) * sizeof(double));
    return RoutingResult{v, alpha, std::move(beta_last)};
}

Var route(Var u_hat, int iterations, RoutingState& state, bool stop_alpha_gradient) {
    const auto& hs = u_hat.shape();
    if (hs.size() != 3) throw ShapeError("route: u_hat must be [N,K,G]");
    const index_t N = hs[0], K = hs[1], G = hs[2];
    if (state.empty()) state = RoutingState::zeros(N, K);
    Var batched = ops::reshape(u_hat, {1, N, K, G});
    RoutingResult res = route_frames(batched, iterations, &state.beta, stop_alpha_gradient);
    state.beta = res.beta_last;
    return ops::reshape(res.v, {K, G});
}

}  // namespace capsed
