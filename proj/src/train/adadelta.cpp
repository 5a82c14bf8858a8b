#include "capsed/train/adadelta.hpp"

#include <cmath>

#include "capsed/common.hpp"
#include "capsed/kernels/kernels.hpp"

namespace capsed {

void OptimizerConfig::validate() const {
    if (lr <= 0 || rho <= 0 || eps <= 0) throw ShapeError("optimizer: lr/rho/eps must be positive");
    if (rho >= 1.0) throw ShapeError("optimizer: rho must be < 1");
    if (batch_size < 1 || max_epochs < 1 || patience < 1)
        throw ShapeError("optimizer: batch_size/max_epochs/patience must be >= 1");
    if (patience > max_epochs) throw ShapeError("optimizer: patience must be <= max_epochs");
}

AdaDelta::AdaDelta(std::vector<Parameter*> params, const OptimizerConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    for (const Parameter* p : params_) {
        acc_grad_sq_.push_back(Tensor::zeros(p->value.shape()));
        acc_delta_sq_.push_back(Tensor::zeros(p->value.shape()));
    }
}

void AdaDelta::step() {
    const auto& ks = kernels::active();
    for (size_t i = 0; i < params_.size(); ++i) {
        Parameter* p = params_[i];
        if (p->grad.empty() || !p->grad.same_shape(p->value))
            throw ShapeError("adadelta: missing gradient for " + p->name);
        const size_t n = static_cast<size_t>(p->grad.size());
        if (!std::isfinite(ks.sum(p->grad.data(), n))) {
            for (index_t j = 0; j < p->grad.size(); ++j)
                if (!std::isfinite(p->grad[j]))
                    throw NumericError("adadelta: non-finite gradient in " + p->name +
                                       " at flat index " + std::to_string(j) +
                                       "; epoch aborted");
        }
        ks.adadelta(p->value.data(), p->grad.data(), acc_grad_sq_[i].data(),
                    acc_delta_sq_[i].data(), cfg_.rho, cfg_.eps, cfg_.lr, n);
    }
}

}  // namespace capsed
