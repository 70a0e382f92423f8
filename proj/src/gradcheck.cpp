#include "trifuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace trifuse {

namespace {

struct Evaluation {
    double loss;
    std::uint64_t signature;
};

Evaluation evaluate(const ParamStore& params, const LossBuilder& loss_fn)
{
    Tape tape = Tape::inference(params);
    const Var loss = loss_fn(tape);
    return {loss.scalar(), tape.relu_signature()};
}

std::vector<Index> pick_elements(Index size, std::size_t limit, std::mt19937_64& rng)
{
    std::vector<Index> idx(static_cast<std::size_t>(size));
    std::iota(idx.begin(), idx.end(), Index{0});
    if (limit == 0 || limit >= idx.size()) {
        return idx;
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(limit);
    std::sort(idx.begin(), idx.end());
    return idx;
}

} // namespace

GradCheckResult grad_check(ParamStore& params, const std::vector<std::string>& names,
                           const LossBuilder& loss_fn, const GradCheckOptions& options)
{
    if (!(options.step > 0.0)) {
        throw std::invalid_argument("grad_check step must be positive");
    }

    std::uint64_t base_signature = 0;
    {
        Tape tape = Tape::training(params);
        const Var loss = loss_fn(tape);
        tape.backward(loss);
        base_signature = tape.relu_signature();
    }
    std::vector<Matrix> analytic;
    analytic.reserve(names.size());
    for (const auto& name : names) {
        analytic.push_back(params.grad(name));
    }

    GradCheckResult result;
    std::mt19937_64 rng(mix_seed(options.seed));
    const double h = options.step;
    for (std::size_t p = 0; p < names.size(); ++p) {
        Matrix& theta = params.value(names[p]);
        for (Index i : pick_elements(theta.size(), options.max_elements_per_param, rng)) {
            const double original = theta.data()[i];
            theta.data()[i] = original + h;
            const auto plus = evaluate(params, loss_fn);
            theta.data()[i] = original - h;
            const auto minus = evaluate(params, loss_fn);
            theta.data()[i] = original;

            if (plus.signature != base_signature || minus.signature != base_signature) {
                ++result.skipped_at_kinks;
                continue;
            }
            const double numeric = (plus.loss - minus.loss) / (2.0 * h);
            const double a = analytic[p].data()[i];
            const double denom =
                std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
            const double rel = std::abs(a - numeric) / denom;
            ++result.checked;
            if (rel > result.max_relative_error || result.worst_index < 0) {
                result.max_relative_error = std::max(rel, result.max_relative_error);
                if (rel >= result.max_relative_error) {
                    result.worst_param = names[p];
                    result.worst_index = i;
                    result.worst_analytic = a;
                    result.worst_numeric = numeric;
                }
            }
        }
    }
    return result;
}

} // namespace trifuse
