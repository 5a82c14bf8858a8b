#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "capsed/tensor.hpp"

namespace capsed {

class Tape;

// Handle to a tensor recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    index_t id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor& value() const;
    const std::vector<index_t>& shape() const { return value().shape(); }
};

// Trainable (or merely tracked) tensor owned by the caller, typically a model
// weight. backward() accumulates into grad across any number of tapes, which
// is how batch members sum their contributions.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;  // empty until zero_grad()/backward
    bool requires_grad = true;

    Parameter() = default;
    Parameter(std::string n, Tensor v, bool rq = true)
        : name(std::move(n)), value(std::move(v)), requires_grad(rq) {}

    void zero_grad() {
        if (grad.empty() || !grad.same_shape(value))
            grad = Tensor::zeros(value.shape());
        else
            grad.fill(0.0);
    }
};

// Record of one forward execution. Ops append nodes; backward() replays
// adjoints in reverse creation order (a reverse topological order, since ops
// only consume earlier nodes). Confined to one thread.
class Tape {
public:
    struct Node {
        Tensor value;
        Tensor grad;  // lazily allocated during backward
        bool requires_grad = false;
        std::function<void()> backward;
        Parameter* param = nullptr;  // set for leaves bound to a Parameter
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf bound to an external parameter; value is snapshotted.
    Var leaf(Parameter& p) {
        Var v = push(p.value, p.requires_grad);
        node(v.id).param = &p;
        if (p.requires_grad) leaves_.push_back(v.id);
        return v;
    }

    // Tape-owned leaf (e.g. the input window). Tracked if requires_grad.
    Var input(Tensor t, bool requires_grad = false) {
        Var v = push(std::move(t), requires_grad);
        if (requires_grad) leaves_.push_back(v.id);
        return v;
    }

    Var constant(Tensor t) { return push(std::move(t), false); }

    // Used by ops: appends a node; the op wires node(id).backward afterwards.
    Var push(Tensor value, bool requires_grad) {
        nodes_.emplace_back();
        Node& n = nodes_.back();
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        return Var{this, static_cast<index_t>(nodes_.size()) - 1};
    }

    Node& node(index_t id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(index_t id) const { return nodes_[static_cast<size_t>(id)]; }

    const Tensor& value(const Var& v) const { return node(v.id).value; }
    bool requires_grad(const Var& v) const { return node(v.id).requires_grad; }

    // Gradient buffer of a node, allocated (zeros) on first use.
    Tensor& grad_ref(index_t id) {
        Node& n = node(id);
        if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
        return n.grad;
    }

    bool grad_present(index_t id) const { return !node(id).grad.empty(); }

    // Gradient of a node after backward (zeros if the loss does not depend
    // on it).
    Tensor grad(const Var& v) const {
        const Node& n = node(v.id);
        return n.grad.empty() ? Tensor::zeros(n.value.shape()) : n.grad;
    }

    // Reverse pass from a scalar loss. Populates Parameter::grad for every
    // requires_grad leaf (zeros where the loss is insensitive). A second
    // call on the same tape is an error.
    void backward(const Var& loss);

    size_t num_nodes() const { return nodes_.size(); }
    bool backward_done() const { return backward_done_; }

private:
    std::deque<Node> nodes_;
    std::vector<index_t> leaves_;
    bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

}  // namespace capsed
