#pragma once

#include <vector>

#include "capsed/tape.hpp"

namespace capsed {

struct OptimizerConfig {
    double lr = 1.0;
    double rho = 0.95;
    double eps = 1e-6;
    int batch_size = 20;
    int max_epochs = 100;
    int patience = 20;

    void validate() const;
};

// AdaDelta with per-parameter accumulators:
//   E[g^2] <- rho E[g^2] + (1-rho) g^2
//   dx      = -sqrt(E[dx^2]+eps)/sqrt(E[g^2]+eps) * g
//   E[dx^2] <- rho E[dx^2] + (1-rho) dx^2
//   p      += lr * dx
class AdaDelta {
public:
    AdaDelta(std::vector<Parameter*> params, const OptimizerConfig& cfg);

    // Applies one update from Parameter::grad. Non-finite gradients abort
    // with a diagnostic naming the parameter.
    void step();

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> acc_grad_sq_, acc_delta_sq_;
    OptimizerConfig cfg_;
};

}  // namespace capsed
