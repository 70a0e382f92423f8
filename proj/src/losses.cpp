#include "trifuse/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace trifuse {

namespace {

void require_smoothing(double eps)
{
    if (!(eps >= 0.0 && eps < 1.0)) {
        throw std::invalid_argument("label smoothing must be in [0, 1), got " +
                                    std::to_string(eps));
    }
}

void require_gamma(double gamma)
{
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
        throw std::invalid_argument("focal gamma must be finite and >= 0, got " +
                                    std::to_string(gamma));
    }
}

Eigen::RowVectorXd log_softmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& p)
{
    const double mx = p.maxCoeff();
    const double lse = mx + std::log((p.array() - mx).exp().sum());
    return (p.array() - lse).matrix();
}

// Returns the loss of one row and writes d loss / d logits into `grad`.
double focal_row(const Eigen::Ref<const Eigen::RowVectorXd>& logits,
                 const Eigen::Ref<const Eigen::RowVectorXd>& target, double gamma,
                 Eigen::Ref<Eigen::RowVectorXd> grad)
{
    const Eigen::RowVectorXd logq = log_softmax_row(logits);
    const Eigen::RowVectorXd q = logq.array().exp().matrix();
    double loss = 0.0;
    double a_sum = 0.0;
    for (Index k = 0; k < q.size(); ++k) {
        const double t = target(k);
        if (t == 0.0) {
            grad(k) = 0.0;
            continue;
        }
        const double one_minus = std::max(0.0, 1.0 - q(k));
        const double mod = gamma == 0.0 ? 1.0 : std::pow(one_minus, gamma);
        loss -= t * mod * logq(k);
        double a = -mod;
        if (gamma != 0.0 && one_minus > 0.0) {
            a += gamma * q(k) * std::pow(one_minus, gamma - 1.0) * logq(k);
        }
        a *= t;
        grad(k) = a;
        a_sum += a;
    }
    grad -= a_sum * q;
    return loss;
}

} // namespace

Vector smoothed_target(std::uint32_t label, Index num_classes, double smoothing)
{
    require_smoothing(smoothing);
    if (num_classes < 1) {
        throw std::invalid_argument("smoothed_target: need at least one class");
    }
    if (static_cast<Index>(label) >= num_classes) {
        throw std::out_of_range("label " + std::to_string(label) + " is outside [0, " +
                                std::to_string(num_classes) + ")");
    }
    Vector t = Vector::Constant(num_classes, smoothing / static_cast<double>(num_classes));
    t(label) += 1.0 - smoothing;
    return t;
}

Matrix smoothed_targets(std::span<const std::uint32_t> labels, Index num_classes,
                        double smoothing)
{
    Matrix out(static_cast<Index>(labels.size()), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out.row(static_cast<Index>(i)) =
            smoothed_target(labels[i], num_classes, smoothing).transpose();
    }
    return out;
}

Matrix smooth(const Matrix& targets, double smoothing)
{
    require_smoothing(smoothing);
    return (targets * (1.0 - smoothing)).array() + smoothing / static_cast<double>(targets.cols());
}

double focal_loss(const Vector& logits, std::uint32_t label, double gamma, double smoothing)
{
    return focal_loss(logits, smoothed_target(label, logits.size(), smoothing), gamma);
}

double focal_loss(const Vector& logits, const Vector& target, double gamma)
{
    require_gamma(gamma);
    if (logits.size() != target.size() || logits.size() == 0) {
        throw ShapeError("focal_loss: logits of size " + std::to_string(logits.size()) +
                         " vs target of size " + std::to_string(target.size()));
    }
    Eigen::RowVectorXd grad(logits.size());
    return focal_row(logits.transpose(), target.transpose(), gamma, grad);
}

Var focal_loss(const Var& logits, const Matrix& targets, double gamma)
{
    require_gamma(gamma);
    Tape* tape = logits.tape();
    if (tape == nullptr) {
        throw std::logic_error("focal_loss: unbound logits");
    }
    const Matrix& p = logits.value();
    if (p.rows() != targets.rows() || p.cols() != targets.cols() || p.rows() == 0) {
        throw ShapeError("focal_loss: logits " + shape_str(p) + " vs targets " +
                         shape_str(targets));
    }
    const double inv_batch = 1.0 / static_cast<double>(p.rows());
    Matrix grad(p.rows(), p.cols());
    double total = 0.0;
    for (Index r = 0; r < p.rows(); ++r) {
        total += focal_row(p.row(r), targets.row(r), gamma, grad.row(r));
    }
    grad *= inv_batch;
    Matrix y(1, 1);
    y(0, 0) = total * inv_batch;
    const auto xi = logits.id();
    return tape->record(std::move(y), {logits},
                        [xi, grad = std::move(grad)](Tape& tp, std::size_t self) {
                            tp.accumulate(xi, grad * tp.grad(self)(0, 0));
                        });
}

double uncertainty_weighted_total(std::span<const double> losses,
                                  std::span<const double> log_variances)
{
    if (losses.size() != log_variances.size()) {
        throw std::invalid_argument("uncertainty_weighted_total: " +
                                    std::to_string(losses.size()) + " losses but " +
                                    std::to_string(log_variances.size()) + " log-variances");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        total += 0.5 * std::exp(-log_variances[i]) * losses[i] + 0.5 * log_variances[i];
    }
    return total;
}

Var uncertainty_weighted_total(const Var& losses, const Var& log_variances)
{
    if (losses.rows() != 1 || log_variances.rows() != 1 ||
        losses.cols() != log_variances.cols()) {
        throw std::invalid_argument("uncertainty_weighted_total: losses " +
                                    shape_str(losses.value()) + " vs log-variances " +
                                    shape_str(log_variances.value()));
    }
    const Var precision = exp(scale(log_variances, -1.0));
    return add(scale(sum(hadamard(precision, losses)), 0.5), scale(sum(log_variances), 0.5));
}

void register_log_variances(ParamStore& params, std::size_t num_heads)
{
    if (num_heads == 0) {
        throw std::invalid_argument("register_log_variances: no loss heads");
    }
    params.add(kLogVarianceParam, Matrix::Zero(1, static_cast<Index>(num_heads)));
}

Var head_logits(const ForwardResult& forward, LossHead head)
{
    switch (head) {
    case LossHead::Face:
        return forward.pathways[index_of(ModalityId::Face)].logits;
    case LossHead::Gesture:
        return forward.pathways[index_of(ModalityId::Gesture)].logits;
    case LossHead::Voice:
        return forward.pathways[index_of(ModalityId::Voice)].logits;
    case LossHead::Fusion:
        return forward.fusion.p_fusion;
    case LossHead::Ensemble:
        return forward.fusion.p_ensemble;
    case LossHead::Final:
        return forward.fusion.p_final;
    case LossHead::Confidence:
        return forward.fusion.p_conf;
    case LossHead::Correction:
        return forward.fusion.p_corr;
    }
    throw std::invalid_argument("unknown loss head");
}

MultiTaskLoss multitask_loss(Tape& tape, const ForwardResult& forward, const Matrix& targets,
                             const LossConfig& cfg)
{
    if (cfg.loss_heads.empty()) {
        throw std::invalid_argument("multitask_loss: no loss heads configured");
    }
    const Var s = tape.param(kLogVarianceParam);
    if (s.cols() != static_cast<Index>(cfg.loss_heads.size())) {
        throw ShapeError("multitask_loss: " + std::to_string(cfg.loss_heads.size()) +
                         " heads but log-variance has shape " + shape_str(s.value()));
    }
    MultiTaskLoss out;
    std::vector<Var> terms;
    terms.reserve(cfg.loss_heads.size());
    for (LossHead h : cfg.loss_heads) {
        terms.push_back(focal_loss(head_logits(forward, h), targets, cfg.focal_gamma));
        out.head_losses.push_back(terms.back().scalar());
    }
    out.total = uncertainty_weighted_total(concat_cols(terms), s);
    return out;
}

} // namespace trifuse
