#pragma once

#include "trifuse/params.hpp"
#include "trifuse/tensor.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace trifuse {

class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid as long as
/// the tape is alive.
class Var {
public:
    Var() = default;

    const Matrix& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    /// Convenience for 1x1 values.
    double scalar() const;

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Record of executed differentiable operations.
///
/// A tape is single use: build it with one forward pass, call backward()
/// at most once, then discard it. Training tapes write gradients straight
/// into the bound ParamStore; inference tapes never allocate gradients.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    /// Tape without parameters (constants only).
    Tape() = default;
    static Tape inference(const ParamStore& params);
    static Tape training(ParamStore& params);

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    Var constant(Matrix value);
    Var constant(const Vector& v) { return constant(as_row(v)); }
    /// Leaf bound to a named parameter. Repeated lookups return the same node.
    Var param(const std::string& name);

    bool is_training() const { return trainable_ != nullptr; }
    const ParamStore* params() const { return params_; }

    /// Appends an operation. `inputs` decide whether the node needs a
    /// gradient; `fn` receives this tape and the new node id during
    /// backward and must route grad(self) into its inputs via accumulate().
    Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
    Var record(Matrix value, std::span<const Var> inputs, BackwardFn fn);

    const Matrix& value(std::size_t id) const;
    const Matrix& grad(std::size_t id) const;
    bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    template <typename Expr>
    void accumulate(std::size_t id, const Expr& g)
    {
        if (!nodes_[id].requires_grad) {
            return;
        }
        grad_slot(id).noalias() += g;
    }

    /// Reverse sweep from a 1x1 loss. Zeroes the bound store's gradient
    /// buffers first, so parameters off the loss path end with exact zeros.
    void backward(const Var& loss);
    bool backward_done() const { return backward_done_; }

    std::size_t size() const { return nodes_.size(); }

    /// Hash over the sign pattern of every ReLU input seen so far. Two
    /// forward passes with equal signatures took the same linear piece.
    std::uint64_t relu_signature() const { return relu_signature_; }
    void note_relu_pattern(const Matrix& pre_activation);

    /// Owner check used by every op.
    void require_owned(const Var& v, const char* op) const;

private:
    struct Node {
        Matrix own_value;
        const Matrix* ext_value = nullptr;
        Matrix own_grad;
        Matrix* ext_grad = nullptr;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Matrix& grad_slot(std::size_t id);

    std::deque<Node> nodes_;
    const ParamStore* params_ = nullptr;
    ParamStore* trainable_ = nullptr;
    std::unordered_map<std::string, std::size_t> param_nodes_;
    bool backward_done_ = false;
    std::uint64_t relu_signature_ = 0;
};

// Differentiable operations. Inputs are batches (one sample per row)
// unless noted. Every op validates shapes and throws ShapeError naming
// the offending shapes.

/// x W^T + b with x: Bxn, W: mxn, b: 1xm.
Var dense(const Var& x, const Var& w, const Var& b);
/// x W^T.
Var matmul_nt(const Var& x, const Var& w);
Var add_row(const Var& x, const Var& row);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var exp(const Var& x);
Var square(const Var& x);

/// Row-wise broadcast: s is Bx1, a is BxK.
Var scale_rows(const Var& a, const Var& s);
Var divide_rows(const Var& a, const Var& d);

Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
/// Row-major reinterpretation, e.g. Bx(T*d) <-> (B*T)xd.
Var reshape(const Var& x, Index rows, Index cols);

Var sum(const Var& x);
Var mean(const Var& x);
Var softmax_rows(const Var& x);

/// softmax(Q K^T / sqrt(d)) V applied independently to consecutive blocks
/// of `tokens` rows. Q, K, V: (B*tokens) x d.
Var token_attention(const Var& q, const Var& k, const Var& v, Index tokens);
/// Single sequence: Q, K, V are T x d.
Var scaled_dot_attention(const Var& q, const Var& k, const Var& v);

// Value-level helpers used by tests and the bindings.
Matrix sigmoid_value(const Matrix& x);
Vector softmax_value(const Vector& x);

} // namespace trifuse
