#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "voxgrad/errors.hpp"
#include "voxgrad/tensor.hpp"

namespace voxgrad {

// Gating rule applied at every ReLU node of one backward pass. Standard keeps
// the true derivative; Deconv gates on the sign of the incoming gradient;
// Guided requires both the saved input and the incoming gradient positive.
enum class ReluMode { kStandard, kDeconv, kGuided };

using VarId = std::uint32_t;

// Dynamic recording of one forward computation. Nodes are appended in
// execution order, so the reverse sweep visits a valid topological order
// without sorting. A tape is single-threaded and consumed by exactly one
// backward pass.
class Tape {
  public:
    using BackwardFn = std::function<void(Tape&, VarId self)>;

    // Leaf whose gradient is accumulated into `t.grad` after backward().
    // `t` must outlive the tape.
    VarId leaf(Tensor& t) {
        Node node;
        node.external = &t;
        node.sink = &t;
        node.wants_grad = true;
        nodes_.push_back(std::move(node));
        return static_cast<VarId>(nodes_.size() - 1);
    }

    // Participates in the forward pass but never receives a gradient. Ops
    // skip the corresponding partial entirely.
    VarId constant(const Tensor& t) {
        Node node;
        node.external = &t;
        nodes_.push_back(std::move(node));
        return static_cast<VarId>(nodes_.size() - 1);
    }

    VarId record(Tensor value, std::initializer_list<VarId> parents, BackwardFn fn) {
        Node node;
        node.owned = std::move(value);
        node.backward = std::move(fn);
        for (VarId p : parents) node.wants_grad = node.wants_grad || nodes_[p].wants_grad;
        nodes_.push_back(std::move(node));
        return static_cast<VarId>(nodes_.size() - 1);
    }

    const Tensor& value(VarId id) const {
        const Node& n = nodes_[id];
        return n.external ? *n.external : n.owned;
    }

    bool wants_grad(VarId id) const { return nodes_[id].wants_grad; }

    // Gradient accumulation buffer for a node, allocated on first touch.
    std::vector<double>& grad_accum(VarId id) {
        Node& n = nodes_[id];
        if (n.grad.size() != value(id).numel()) n.grad.assign(value(id).numel(), 0.0);
        return n.grad;
    }

    // Gradient of a node as seen during the reverse sweep; empty when the
    // node does not influence the output.
    const std::vector<double>& grad(VarId id) const { return nodes_[id].grad; }

    ReluMode relu_mode() const { return mode_; }

    // Reverse sweep from a scalar output under the given ReLU rule. Each
    // registered leaf tensor receives its accumulated gradient (zeros when
    // disconnected from the output).
    void backward(VarId output, ReluMode mode = ReluMode::kStandard) {
        if (consumed_) throw ConfigError("tape: backward called on a consumed tape");
        if (output >= nodes_.size()) throw ConfigError("tape: unknown output var");
        if (value(output).numel() != 1) {
            throw ConfigError("tape: backward requires a scalar output, got shape " +
                              shape_str(value(output).shape));
        }
        consumed_ = true;
        mode_ = mode;
        grad_accum(output)[0] = 1.0;
        for (std::size_t i = output + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward && !n.grad.empty()) n.backward(*this, static_cast<VarId>(i));
        }
        for (Node& n : nodes_) {
            if (!n.sink) continue;
            n.sink->ensure_grad();
            if (n.grad.empty()) continue;
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.sink->grad[i] += n.grad[i];
        }
    }

    bool consumed() const { return consumed_; }
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor owned;
        const Tensor* external = nullptr;
        Tensor* sink = nullptr;
        std::vector<double> grad;
        BackwardFn backward;
        bool wants_grad = false;
    };

    std::vector<Node> nodes_;
    ReluMode mode_ = ReluMode::kStandard;
    bool consumed_ = false;
};

}  // namespace voxgrad
