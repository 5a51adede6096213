#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "concurl/tensor.hpp"

namespace concurl {

// A trainable leaf. The gradient accumulates across backward passes until
// zero_grad() is called.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

// Handle to a node recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Tensor& grad() const;
    bool requires_grad() const;
};

// Records differentiable operations in execution order. backward() walks the
// record once in reverse, so every op is visited exactly once and fan-out
// gradients add up at the shared input.
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value) { return push(std::move(value), false, {}, nullptr); }

    Var leaf(Parameter& param) { return push(param.value, true, {}, &param); }

    Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
        bool needs = false;
        for (const auto& in : inputs) {
            needs = needs || nodes_[in.id].requires_grad;
        }
        return push(std::move(value), needs, needs ? std::move(backward) : Backward{}, nullptr);
    }

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // Adds `g` into the gradient slot of `v` (no-op for constants).
    void accumulate(Var v, const Tensor& g) {
        auto& node = nodes_[v.id];
        if (!node.requires_grad) {
            return;
        }
        if (node.grad.empty()) {
            node.grad = g;
        } else {
            node.grad += g;
        }
    }

    void backward(Var loss) {
        if (value(loss).size() != 1) {
            throw DimensionError("backward requires a scalar loss, got shape " +
                                 shape_string(value(loss).shape()));
        }
        for (auto& node : nodes_) {
            node.grad = Tensor();
        }
        if (!nodes_[loss.id].requires_grad) {
            return;
        }
        nodes_[loss.id].grad = Tensor(value(loss).shape(), Real(1));
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            auto& node = nodes_[i];
            if (!node.requires_grad || node.grad.empty()) {
                continue;
            }
            if (node.backward) {
                // Copy: the callback may append to other nodes' grads only.
                const Tensor g = node.grad;
                node.backward(*this, g);
            }
        }
        for (auto& node : nodes_) {
            if (node.param != nullptr && !node.grad.empty()) {
                if (node.param->grad.empty()) {
                    node.param->grad = Tensor(node.param->value.shape());
                }
                node.param->grad += node.grad;
            }
        }
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Backward backward;
        Parameter* param = nullptr;
    };

    Var push(Tensor value, bool requires_grad, Backward backward, Parameter* param) {
        nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, std::move(backward), param});
        return Var{this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }
inline const Tensor& Var::grad() const { return tape->grad(*this); }
inline bool Var::requires_grad() const { return tape->requires_grad(*this); }

}  // namespace concurl
