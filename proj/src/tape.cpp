#include "capsed/tape.hpp"

#include "capsed/common.hpp"
#include "capsed/kernels/kernels.hpp"

namespace capsed {

void Tape::backward(const Var& loss) {
    if (loss.tape != this || loss.id < 0 || loss.id >= static_cast<index_t>(nodes_.size()))
        throw ShapeError("backward: loss is not a node of this tape");
    if (!value(loss).is_scalar())
        throw ShapeError("backward: loss must be a scalar tensor");
    if (backward_done_)
        throw NumericError("backward: tape already backpropagated; build a fresh tape");
    backward_done_ = true;

    grad_ref(loss.id)[0] = 1.0;
    for (index_t id = loss.id; id >= 0; --id) {
        Node& n = node(id);
        if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
        n.backward();
    }

    const auto& ks = kernels::active();
    for (index_t id : leaves_) {
        Node& n = node(id);
        if (!n.param) continue;
        Parameter& p = *n.param;
        if (p.grad.empty() || !p.grad.same_shape(p.value)) p.zero_grad();
        if (!n.grad.empty())
            ks.axpy(1.0, n.grad.data(), p.grad.data(), static_cast<size_t>(p.grad.size()));
    }
}

}  // namespace capsed
