#include "trifuse/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace trifuse {

const Matrix& Var::value() const
{
    if (tape_ == nullptr) {
        throw std::logic_error("use of an unbound Var");
    }
    return tape_->value(id_);
}

double Var::scalar() const
{
    const auto& v = value();
    if (v.size() != 1) {
        throw ShapeError("expected a 1x1 value, got " + shape_str(v));
    }
    return v(0, 0);
}

Tape Tape::inference(const ParamStore& params)
{
    Tape t;
    t.params_ = &params;
    return t;
}

Tape Tape::training(ParamStore& params)
{
    Tape t;
    t.params_ = &params;
    t.trainable_ = &params;
    return t;
}

Var Tape::constant(Matrix value)
{
    Node n;
    n.own_value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::param(const std::string& name)
{
    if (params_ == nullptr) {
        throw std::logic_error("tape has no parameter store; cannot look up '" + name + "'");
    }
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) {
        return Var(this, it->second);
    }
    const auto& entry = params_->entry(name);
    Node n;
    n.ext_value = &entry.value;
    if (trainable_ != nullptr) {
        n.ext_grad = &trainable_->entry(name).grad;
        n.requires_grad = true;
    }
    nodes_.push_back(std::move(n));
    param_nodes_.emplace(name, nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn)
{
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn fn)
{
    Node n;
    n.own_value = std::move(value);
    for (const auto& in : inputs) {
        require_owned(in, "record");
        n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (n.requires_grad) {
        n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

const Matrix& Tape::value(std::size_t id) const
{
    const auto& n = nodes_.at(id);
    return n.ext_value != nullptr ? *n.ext_value : n.own_value;
}

const Matrix& Tape::grad(std::size_t id) const
{
    const auto& n = nodes_.at(id);
    return n.ext_grad != nullptr ? *n.ext_grad : n.own_grad;
}

Matrix& Tape::grad_slot(std::size_t id)
{
    auto& n = nodes_[id];
    if (n.ext_grad != nullptr) {
        return *n.ext_grad;
    }
    if (n.own_grad.size() == 0) {
        const auto& v = value(id);
        n.own_grad = Matrix::Zero(v.rows(), v.cols());
    }
    return n.own_grad;
}

void Tape::require_owned(const Var& v, const char* op) const
{
    if (v.tape() != this) {
        throw std::logic_error(std::string(op) + ": operand belongs to a different tape");
    }
}

void Tape::backward(const Var& loss)
{
    require_owned(loss, "backward");
    if (backward_done_) {
        throw std::logic_error("backward already ran on this tape; run a new forward pass first");
    }
    const auto& lv = value(loss.id());
    if (lv.size() != 1) {
        throw ShapeError("backward needs a 1x1 loss, got " + shape_str(lv));
    }
    backward_done_ = true;
    if (trainable_ != nullptr) {
        trainable_->zero_grad();
    }
    if (!nodes_[loss.id()].requires_grad) {
        return;
    }
    grad_slot(loss.id()).setOnes();
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (!n.requires_grad || !n.backward) {
            continue;
        }
        if (n.ext_grad == nullptr && n.own_grad.size() == 0) {
            continue; // no gradient reached this node
        }
        n.backward(*this, i);
    }
}

void Tape::note_relu_pattern(const Matrix& pre)
{
    std::uint64_t h = relu_signature_ ^ 0x51ED27U;
    const double* p = pre.data();
    for (Index i = 0; i < pre.size(); ++i) {
        h = (h * 1099511628211ULL) ^ static_cast<std::uint64_t>(p[i] > 0.0);
    }
    relu_signature_ = mix_seed(h);
}

namespace {

Tape& owner(const Var& a, const char* op)
{
    if (!a.valid()) {
        throw std::logic_error(std::string(op) + ": unbound operand");
    }
    return *a.tape();
}

Tape& owner(const Var& a, const Var& b, const char* op)
{
    Tape& t = owner(a, op);
    t.require_owned(b, op);
    return t;
}

void require_same_shape(const Var& a, const Var& b, const char* op)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.value()) + " and " +
                         shape_str(b.value()) + " differ");
    }
}

constexpr double kSigmoidFloor = 1e-150;
const double kSigmoidCeil = std::nextafter(1.0, 0.0);

double sigmoid_scalar(double x)
{
    double y;
    if (x >= 0.0) {
        y = 1.0 / (1.0 + std::exp(-x));
    } else {
        const double e = std::exp(x);
        y = e / (1.0 + e);
    }
    // Keep the output strictly inside (0, 1); the floor keeps y^2 normal.
    return std::clamp(y, kSigmoidFloor, kSigmoidCeil);
}

} // namespace

Var matmul_nt(const Var& x, const Var& w)
{
    Tape& t = owner(x, w, "matmul_nt");
    if (x.cols() != w.cols()) {
        throw ShapeError("matmul_nt: input " + shape_str(x.value()) + " does not match weight " +
                         shape_str(w.value()));
    }
    Matrix y = x.value() * w.value().transpose();
    const auto xi = x.id();
    const auto wi = w.id();
    return t.record(std::move(y), {x, w}, [xi, wi](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        if (tp.needs_grad(xi)) {
            tp.accumulate(xi, g * tp.value(wi));
        }
        if (tp.needs_grad(wi)) {
            tp.accumulate(wi, g.transpose() * tp.value(xi));
        }
    });
}

Var add_row(const Var& x, const Var& row)
{
    Tape& t = owner(x, row, "add_row");
    if (row.rows() != 1 || row.cols() != x.cols()) {
        throw ShapeError("add_row: row " + shape_str(row.value()) + " does not broadcast over " +
                         shape_str(x.value()));
    }
    Matrix y = x.value().rowwise() + row.value().row(0);
    const auto xi = x.id();
    const auto ri = row.id();
    return t.record(std::move(y), {x, row}, [xi, ri](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        tp.accumulate(xi, g);
        if (tp.needs_grad(ri)) {
            tp.accumulate(ri, g.colwise().sum());
        }
    });
}

Var dense(const Var& x, const Var& w, const Var& b)
{
    Tape& t = owner(x, w, "dense");
    t.require_owned(b, "dense");
    if (x.cols() != w.cols()) {
        throw ShapeError("dense: input " + shape_str(x.value()) + " does not match weight " +
                         shape_str(w.value()));
    }
    if (b.rows() != 1 || b.cols() != w.rows()) {
        throw ShapeError("dense: bias " + shape_str(b.value()) + " does not match weight " +
                         shape_str(w.value()));
    }
    Matrix y = x.value() * w.value().transpose();
    y.rowwise() += b.value().row(0);
    const auto xi = x.id();
    const auto wi = w.id();
    const auto bi = b.id();
    return t.record(std::move(y), {x, w, b}, [xi, wi, bi](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        if (tp.needs_grad(xi)) {
            tp.accumulate(xi, g * tp.value(wi));
        }
        if (tp.needs_grad(wi)) {
            tp.accumulate(wi, g.transpose() * tp.value(xi));
        }
        if (tp.needs_grad(bi)) {
            tp.accumulate(bi, g.colwise().sum());
        }
    });
}

Var add(const Var& a, const Var& b)
{
    Tape& t = owner(a, b, "add");
    require_same_shape(a, b, "add");
    Matrix y = a.value() + b.value();
    const auto ai = a.id();
    const auto bi = b.id();
    return t.record(std::move(y), {a, b}, [ai, bi](Tape& tp, std::size_t self) {
        tp.accumulate(ai, tp.grad(self));
        tp.accumulate(bi, tp.grad(self));
    });
}

Var sub(const Var& a, const Var& b)
{
    Tape& t = owner(a, b, "sub");
    require_same_shape(a, b, "sub");
    Matrix y = a.value() - b.value();
    const auto ai = a.id();
    const auto bi = b.id();
    return t.record(std::move(y), {a, b}, [ai, bi](Tape& tp, std::size_t self) {
        tp.accumulate(ai, tp.grad(self));
        tp.accumulate(bi, -tp.grad(self));
    });
}

Var hadamard(const Var& a, const Var& b)
{
    Tape& t = owner(a, b, "hadamard");
    require_same_shape(a, b, "hadamard");
    Matrix y = a.value().cwiseProduct(b.value());
    const auto ai = a.id();
    const auto bi = b.id();
    return t.record(std::move(y), {a, b}, [ai, bi](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        tp.accumulate(ai, g.cwiseProduct(tp.value(bi)));
        tp.accumulate(bi, g.cwiseProduct(tp.value(ai)));
    });
}

Var scale(const Var& a, double s)
{
    Tape& t = owner(a, "scale");
    Matrix y = a.value() * s;
    const auto ai = a.id();
    return t.record(std::move(y), {a},
                    [ai, s](Tape& tp, std::size_t self) { tp.accumulate(ai, tp.grad(self) * s); });
}

Var relu(const Var& x)
{
    Tape& t = owner(x, "relu");
    t.note_relu_pattern(x.value());
    Matrix y = x.value().cwiseMax(0.0);
    const auto xi = x.id();
    return t.record(std::move(y), {x}, [xi](Tape& tp, std::size_t self) {
        const Matrix& in = tp.value(xi);
        tp.accumulate(xi, tp.grad(self).cwiseProduct(
                              in.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; })));
    });
}

Matrix sigmoid_value(const Matrix& x) { return x.unaryExpr(&sigmoid_scalar); }

Var sigmoid(const Var& x)
{
    Tape& t = owner(x, "sigmoid");
    Matrix y = sigmoid_value(x.value());
    const auto xi = x.id();
    return t.record(std::move(y), {x}, [xi](Tape& tp, std::size_t self) {
        const Matrix& s = tp.value(self);
        tp.accumulate(xi, tp.grad(self).cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
    });
}

Var exp(const Var& x)
{
    Tape& t = owner(x, "exp");
    Matrix y = x.value().array().exp().matrix();
    const auto xi = x.id();
    return t.record(std::move(y), {x}, [xi](Tape& tp, std::size_t self) {
        tp.accumulate(xi, tp.grad(self).cwiseProduct(tp.value(self)));
    });
}

Var square(const Var& x)
{
    Tape& t = owner(x, "square");
    Matrix y = x.value().cwiseAbs2();
    const auto xi = x.id();
    return t.record(std::move(y), {x}, [xi](Tape& tp, std::size_t self) {
        tp.accumulate(xi, 2.0 * tp.grad(self).cwiseProduct(tp.value(xi)));
    });
}

Var scale_rows(const Var& a, const Var& s)
{
    Tape& t = owner(a, s, "scale_rows");
    if (s.cols() != 1 || s.rows() != a.rows()) {
        throw ShapeError("scale_rows: scale " + shape_str(s.value()) + " does not match " +
                         shape_str(a.value()));
    }
    Matrix y = a.value().array().colwise() * s.value().col(0).array();
    const auto ai = a.id();
    const auto si = s.id();
    return t.record(std::move(y), {a, s}, [ai, si](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        if (tp.needs_grad(ai)) {
            Matrix ga = g.array().colwise() * tp.value(si).col(0).array();
            tp.accumulate(ai, ga);
        }
        if (tp.needs_grad(si)) {
            tp.accumulate(si, g.cwiseProduct(tp.value(ai)).rowwise().sum());
        }
    });
}

Var divide_rows(const Var& a, const Var& d)
{
    Tape& t = owner(a, d, "divide_rows");
    if (d.cols() != 1 || d.rows() != a.rows()) {
        throw ShapeError("divide_rows: divisor " + shape_str(d.value()) + " does not match " +
                         shape_str(a.value()));
    }
    Matrix y = a.value().array().colwise() / d.value().col(0).array();
    const auto ai = a.id();
    const auto di = d.id();
    return t.record(std::move(y), {a, d}, [ai, di](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        const auto dv = tp.value(di).col(0).array();
        if (tp.needs_grad(ai)) {
            Matrix ga = g.array().colwise() / dv;
            tp.accumulate(ai, ga);
        }
        if (tp.needs_grad(di)) {
            // d(a/d)/dd = -y/d
            Eigen::ArrayXd gd = -(g.cwiseProduct(tp.value(self)).rowwise().sum().array() / dv);
            tp.accumulate(di, gd.matrix());
        }
    });
}

Var concat_cols(std::initializer_list<Var> parts)
{
    return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_cols(std::span<const Var> parts)
{
    if (parts.empty()) {
        throw std::invalid_argument("concat_cols: no inputs");
    }
    Tape& t = owner(parts[0], "concat_cols");
    const Index rows = parts[0].rows();
    Index cols = 0;
    for (const auto& p : parts) {
        t.require_owned(p, "concat_cols");
        if (p.rows() != rows) {
            throw ShapeError("concat_cols: " + shape_str(p.value()) + " has " +
                             std::to_string(p.rows()) + " rows, expected " + std::to_string(rows));
        }
        cols += p.cols();
    }
    Matrix y(rows, cols);
    std::vector<std::pair<std::size_t, Index>> slots;
    Index off = 0;
    for (const auto& p : parts) {
        y.middleCols(off, p.cols()) = p.value();
        slots.emplace_back(p.id(), off);
        off += p.cols();
    }
    return t.record(std::move(y), parts, [slots](Tape& tp, std::size_t self) {
        const Matrix& g = tp.grad(self);
        for (const auto& [id, start] : slots) {
            if (tp.needs_grad(id)) {
                tp.accumulate(id, g.middleCols(start, tp.value(id).cols()));
            }
        }
    });
}

Var reshape(const Var& x, Index rows, Index cols)
{
    Tape& t = owner(x, "reshape");
    if (rows * cols != x.value().size()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.value()) + " as " +
                         shape_str(rows, cols));
    }
    Matrix y = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
    const auto xi = x.id();
    return t.record(std::move(y), {x}, [xi](Tape& tp, std::size_t self) {
        const Matrix& in = tp.value(xi);
        tp.accumulate(xi, Eigen::Map<const Matrix>(tp.grad(self).data(), in.rows(), in.cols()));
    });
}

Var sum(const Var& x)
{
    Tape& t = owner(x, "sum");
    Matrix y(1, 1);
    y(0, 0) = x.value().sum();
    const auto xi = x.id();
    return t.record(std::move(y), {x}, [xi](Tape& tp, std::size_t self) {
        const Matrix& in = tp.value(xi);
        tp.accumulate(xi, Matrix::Constant(in.rows(), in.cols(), tp.grad(self)(0, 0)));
    });
}

Var mean(const Var& x)
{
    const auto n = static_cast<double>(x.value().size());
    if (n == 0) {
        throw ShapeError("mean of an empty value");
    }
    return scale(sum(x), 1.0 / n);
}

namespace {

void softmax_rows_inplace(Matrix& m)
{
    for (Index r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
    }
}

} // namespace

Vector softmax_value(const Vector& x)
{
    if (x.size() == 0) {
        throw ShapeError("softmax of an empty vector");
    }
    Matrix m = as_row(x);
    softmax_rows_inplace(m);
    return row_vector(m);
}

Var softmax_rows(const Var& x)
{
    Tape& t = owner(x, "softmax_rows");
    if (x.cols() < 1) {
        throw ShapeError("softmax_rows: need at least one column");
    }
    Matrix y = x.value();
    softmax_rows_inplace(y);
    const auto xi = x.id();
    return t.record(std::move(y), {x}, [xi](Tape& tp, std::size_t self) {
        const Matrix& s = tp.value(self);
        const Matrix& g = tp.grad(self);
        Eigen::VectorXd dot = g.cwiseProduct(s).rowwise().sum();
        Matrix gx = s.cwiseProduct((g.colwise() - dot));
        tp.accumulate(xi, gx);
    });
}

Var token_attention(const Var& q, const Var& k, const Var& v, Index tokens)
{
    Tape& t = owner(q, k, "token_attention");
    t.require_owned(v, "token_attention");
    if (tokens < 1) {
        throw ShapeError("token_attention: token count must be positive");
    }
    if (q.rows() != k.rows() || q.rows() != v.rows() || q.cols() != k.cols() ||
        q.cols() != v.cols()) {
        throw ShapeError("token_attention: Q " + shape_str(q.value()) + ", K " +
                         shape_str(k.value()) + ", V " + shape_str(v.value()) + " disagree");
    }
    if (q.cols() < 1 || q.rows() % tokens != 0) {
        throw ShapeError("token_attention: " + std::to_string(q.rows()) +
                         " rows are not a multiple of " + std::to_string(tokens) + " tokens");
    }
    const Index blocks = q.rows() / tokens;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    const Matrix& Q = q.value();
    const Matrix& K = k.value();
    const Matrix& V = v.value();

    Matrix weights(q.rows(), tokens); // stacked per-block attention matrices
    Matrix out(q.rows(), q.cols());
    for (Index b = 0; b < blocks; ++b) {
        const Index r0 = b * tokens;
        Matrix s = Q.middleRows(r0, tokens) * K.middleRows(r0, tokens).transpose() * inv_sqrt_d;
        softmax_rows_inplace(s);
        out.middleRows(r0, tokens).noalias() = s * V.middleRows(r0, tokens);
        weights.middleRows(r0, tokens) = s;
    }

    const auto qi = q.id();
    const auto ki = k.id();
    const auto vi = v.id();
    return t.record(std::move(out), {q, k, v},
                    [qi, ki, vi, tokens, blocks, inv_sqrt_d,
                     weights = std::move(weights)](Tape& tp, std::size_t self) {
                        const Matrix& g = tp.grad(self);
                        const Matrix& Qv = tp.value(qi);
                        const Matrix& Kv = tp.value(ki);
                        const Matrix& Vv = tp.value(vi);
                        Matrix gq = Matrix::Zero(Qv.rows(), Qv.cols());
                        Matrix gk = Matrix::Zero(Kv.rows(), Kv.cols());
                        Matrix gv = Matrix::Zero(Vv.rows(), Vv.cols());
                        for (Index b = 0; b < blocks; ++b) {
                            const Index r0 = b * tokens;
                            const auto A = weights.middleRows(r0, tokens);
                            const auto gO = g.middleRows(r0, tokens);
                            gv.middleRows(r0, tokens).noalias() = A.transpose() * gO;
                            Matrix gA = gO * Vv.middleRows(r0, tokens).transpose();
                            Eigen::VectorXd dot = gA.cwiseProduct(A).rowwise().sum();
                            Matrix gS = A.cwiseProduct(gA.colwise() - dot) * inv_sqrt_d;
                            gq.middleRows(r0, tokens).noalias() = gS * Kv.middleRows(r0, tokens);
                            gk.middleRows(r0, tokens).noalias() =
                                gS.transpose() * Qv.middleRows(r0, tokens);
                        }
                        tp.accumulate(qi, gq);
                        tp.accumulate(ki, gk);
                        tp.accumulate(vi, gv);
                    });
}

Var scaled_dot_attention(const Var& q, const Var& k, const Var& v)
{
    return token_attention(q, k, v, q.rows());
}

} // namespace trifuse
