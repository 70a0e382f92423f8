#include "trifuse/augment.hpp"

#include "trifuse/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace trifuse {

namespace {

void require_std(double std)
{
    if (!(std >= 0.0) || !std::isfinite(std)) {
        throw std::invalid_argument("noise std must be finite and >= 0, got " +
                                    std::to_string(std));
    }
}

void require_rate(double rate)
{
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw std::invalid_argument("dropout rate must be in [0, 1), got " + std::to_string(rate));
    }
}

void require_prob(double prob)
{
    if (!(prob >= 0.0 && prob <= 1.0)) {
        throw std::invalid_argument("mask probability must be in [0, 1], got " +
                                    std::to_string(prob));
    }
}

void require_alpha(double alpha)
{
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw std::invalid_argument("mixup alpha must be finite and > 0, got " +
                                    std::to_string(alpha));
    }
}

template <typename Dense>
void noise_inplace(Dense& x, double std, Rng& rng)
{
    require_std(std);
    if (std == 0.0) {
        return;
    }
    std::normal_distribution<double> n(0.0, std);
    for (Index i = 0; i < x.size(); ++i) {
        x.data()[i] += n(rng);
    }
}

template <typename Dense>
void dropout_inplace(Dense& x, double rate, Rng& rng)
{
    require_rate(rate);
    if (rate == 0.0) {
        return;
    }
    std::bernoulli_distribution drop(rate);
    const double keep = 1.0 / (1.0 - rate);
    for (Index i = 0; i < x.size(); ++i) {
        x.data()[i] = drop(rng) ? 0.0 : x.data()[i] * keep;
    }
}

} // namespace

Vector gaussian_noise(const Vector& x, double std, Rng& rng)
{
    Vector y = x;
    noise_inplace(y, std, rng);
    return y;
}

void add_gaussian_noise(Matrix& x, double std, Rng& rng) { noise_inplace(x, std, rng); }

Vector feature_dropout(const Vector& x, double rate, Rng& rng)
{
    Vector y = x;
    dropout_inplace(y, rate, rng);
    return y;
}

void apply_feature_dropout(Matrix& x, double rate, Rng& rng) { dropout_inplace(x, rate, rng); }

MaskEvent draw_mask_event(double prob, Rng& rng)
{
    require_prob(prob);
    MaskEvent e;
    if (prob == 0.0 || !std::bernoulli_distribution(prob)(rng)) {
        return e;
    }
    e.applied = true;
    // Bit patterns 1..6 are exactly the non-empty proper subsets.
    e.lost = ModalityMask::from_bits(
        static_cast<std::uint8_t>(std::uniform_int_distribution<int>(1, 6)(rng)));
    e.partial = std::bernoulli_distribution(0.5)(rng);
    e.fraction = e.partial ? std::uniform_real_distribution<double>(0.0, 1.0)(rng) : 1.0;
    return e;
}

void apply_mask_event(ModalityBatch& batch, Index row, Index count, const MaskEvent& event,
                      Rng& rng)
{
    if (!event.applied) {
        return;
    }
    for (auto m : kModalities) {
        if (!event.lost.has(m)) {
            continue;
        }
        Matrix& x = batch[index_of(m)];
        if (row < 0 || count < 0 || row + count > x.rows()) {
            throw ShapeError("apply_mask_event: rows [" + std::to_string(row) + ", " +
                             std::to_string(row + count) + ") outside batch of " +
                             std::to_string(x.rows()));
        }
        if (!event.partial) {
            x.middleRows(row, count).setZero();
            continue;
        }
        const Index dim = x.cols();
        const auto zeroed = std::clamp<Index>(
            static_cast<Index>(std::ceil(event.fraction * static_cast<double>(dim))), 1, dim);
        std::vector<Index> cols(static_cast<std::size_t>(dim));
        std::iota(cols.begin(), cols.end(), Index{0});
        std::shuffle(cols.begin(), cols.end(), rng);
        for (Index c = 0; c < zeroed; ++c) {
            x.block(row, cols[static_cast<std::size_t>(c)], count, 1).setZero();
        }
    }
}

MaskedSample modality_mask(const ModalityBatch& sample, double prob, Rng& rng)
{
    MaskedSample out{sample, ModalityMask::all()};
    const MaskEvent e = draw_mask_event(prob, rng);
    apply_mask_event(out.sample, 0, out.sample[0].rows(), e, rng);
    if (e.applied) {
        out.mask = ModalityMask::from_bits(static_cast<std::uint8_t>(~e.lost.bits() & 7U));
    }
    return out;
}

std::vector<ModalityMask> mask_batch(ModalityBatch& batch, double prob,
                                     MaskGranularity granularity, Rng& rng)
{
    const Index rows = batch[0].rows();
    std::vector<ModalityMask> intact(static_cast<std::size_t>(rows), ModalityMask::all());
    auto intact_after = [](const MaskEvent& e) {
        return e.applied ? ModalityMask::from_bits(static_cast<std::uint8_t>(~e.lost.bits() & 7U))
                         : ModalityMask::all();
    };
    if (granularity == MaskGranularity::Batch) {
        const MaskEvent e = draw_mask_event(prob, rng);
        apply_mask_event(batch, 0, rows, e, rng);
        std::fill(intact.begin(), intact.end(), intact_after(e));
        return intact;
    }
    for (Index r = 0; r < rows; ++r) {
        const MaskEvent e = draw_mask_event(prob, rng);
        apply_mask_event(batch, r, 1, e, rng);
        intact[static_cast<std::size_t>(r)] = intact_after(e);
    }
    return intact;
}

double sample_beta(double alpha, Rng& rng)
{
    require_alpha(alpha);
    std::gamma_distribution<double> g(alpha, 1.0);
    const double x = g(rng);
    const double y = g(rng);
    if (x + y == 0.0) {
        return std::bernoulli_distribution(0.5)(rng) ? 1.0 : 0.0;
    }
    return x / (x + y);
}

MixedSample mixup_with_lambda(const EmbeddingTriplet& a, const EmbeddingTriplet& b, double lambda)
{
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
        throw std::invalid_argument("mixup lambda must be in [0, 1], got " +
                                    std::to_string(lambda));
    }
    MixedSample out;
    for (auto m : kModalities) {
        if (a[m].size() != b[m].size()) {
            throw ShapeError("mixup: " + std::string(modality_name(m)) +
                             " embeddings differ in size");
        }
        out.embeddings[index_of(m)] = lambda * a[m] + (1.0 - lambda) * b[m];
    }
    out.label_a = a.identity;
    out.label_b = b.identity;
    out.lambda = lambda;
    return out;
}

MixedSample mixup(const EmbeddingTriplet& a, const EmbeddingTriplet& b, double alpha, Rng& rng)
{
    return mixup_with_lambda(a, b, sample_beta(alpha, rng));
}

double mixup_batch(ModalityBatch& batch, Matrix& targets, double alpha, Rng& rng)
{
    const Index rows = targets.rows();
    for (const auto& x : batch) {
        if (x.rows() != rows) {
            throw ShapeError("mixup_batch: inputs and targets disagree on batch size");
        }
    }
    const double lambda = sample_beta(alpha, rng);
    std::vector<Index> perm(static_cast<std::size_t>(rows));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    auto mix = [&](Matrix& m) {
        Matrix partner(m.rows(), m.cols());
        for (Index r = 0; r < rows; ++r) {
            partner.row(r) = m.row(perm[static_cast<std::size_t>(r)]);
        }
        m = lambda * m + (1.0 - lambda) * partner;
    };
    for (auto& x : batch) {
        mix(x);
    }
    mix(targets);
    return lambda;
}

void augment_batch(ModalityBatch& batch, Matrix& targets, const AugmentConfig& cfg,
                   const std::array<double, kModalityCount>& feature_scale, double intensity,
                   Rng& rng)
{
    if (!(intensity >= 0.0 && intensity <= 1.0)) {
        throw std::invalid_argument("augmentation intensity must be in [0, 1]");
    }
    if (cfg.mixup_alpha > 0.0) {
        mixup_batch(batch, targets, cfg.mixup_alpha, rng);
    }
    for (std::size_t i = 0; i < kModalityCount; ++i) {
        add_gaussian_noise(batch[i], cfg.noise_std * feature_scale[i] * intensity, rng);
    }
    for (auto& x : batch) {
        apply_feature_dropout(x, cfg.dropout_rate * intensity, rng);
    }
    mask_batch(batch, cfg.mask_prob * intensity, cfg.mask_granularity, rng);
}

} // namespace trifuse
