#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqdistill/errors.hpp"
#include "seqdistill/matrix.hpp"

namespace seqdistill {

// Floor applied to probabilities before any log: keeps KL and cross-entropy
// finite when the student assigns numerically-zero mass.
inline constexpr double kProbabilityFloor = 1e-12;

// Tolerance on |sum - 1| when validating probability vectors.
inline constexpr double kSimplexTolerance = 1e-6;

// Scalar loss value plus its exact gradient with respect to the student logits.
struct LossReport {
    double value = 0.0;
    std::vector<double> grad_logits;
};

// Soft target for one sample: the teacher's class posterior, and the hard
// label when one is available.
struct TeacherTarget {
    std::vector<double> posterior;
    std::optional<std::uint32_t> hard_label;
};

inline void require_simplex(std::span<const double> p, const std::string& who) {
    double sum = 0.0;
    for (double x : p) {
        if (!(x >= 0.0))
            throw DomainError(who + ": probability entries must be non-negative");
        sum += x;
    }
    if (std::abs(sum - 1.0) > kSimplexTolerance)
        throw DomainError(who + ": probabilities sum to " + std::to_string(sum) + ", expected 1");
}

// KL(P || Q) in nats. P entries equal to zero contribute nothing; Q is
// clamped below at kProbabilityFloor before the log.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size())
        throw ShapeError("kl_divergence: length mismatch " + std::to_string(p.size()) +
                         " vs " + std::to_string(q.size()));
    require_simplex(p, "kl_divergence(P)");
    require_simplex(q, "kl_divergence(Q)");
    double sum = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        if (p[j] == 0.0) continue;
        sum += p[j] * std::log(p[j] / std::max(q[j], kProbabilityFloor));
    }
    return sum;
}

// Softens a teacher posterior by power renormalization p^(1/T). When the
// posterior came out of a softmax this equals dividing the teacher logits
// by T before re-normalizing.
inline std::vector<double> soften_posterior(std::span<const double> posterior, double temperature) {
    if (!(temperature > 0.0))
        throw DomainError("soften_posterior: temperature must be positive");
    std::vector<double> out(posterior.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < posterior.size(); ++j) {
        out[j] = posterior[j] > 0.0 ? std::pow(posterior[j], 1.0 / temperature) : 0.0;
        sum += out[j];
    }
    for (double& x : out) x /= sum;
    return out;
}

// Distillation term: KL between the temperature-softened teacher posterior
// and the temperature-softened student distribution. Gradient w.r.t. the
// raw student logits is (q_soft - p_soft) / T.
inline LossReport distillation_loss(const TeacherTarget& target, std::span<const double> logits,
                                    double temperature) {
    if (target.posterior.size() != logits.size())
        throw ShapeError("distillation_loss: posterior length " + std::to_string(target.posterior.size()) +
                         " vs logits length " + std::to_string(logits.size()));
    if (!(temperature > 0.0))
        throw DomainError("distillation_loss: temperature must be positive");
    require_simplex(target.posterior, "distillation_loss");

    std::vector<double> p_soft = soften_posterior(target.posterior, temperature);
    std::vector<double> q_soft = softmax_with_temperature(logits, temperature);

    LossReport report;
    report.value = kl_divergence(p_soft, q_soft);
    report.grad_logits.resize(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j)
        report.grad_logits[j] = (q_soft[j] - p_soft[j]) / temperature;
    return report;
}

// Categorical cross entropy -log softmax(logits)[label], gradient
// softmax(logits) - onehot(label).
inline LossReport cross_entropy(std::uint32_t hard_label, std::span<const double> logits) {
    if (hard_label >= logits.size())
        throw DomainError("cross_entropy: label " + std::to_string(hard_label) +
                          " out of range for " + std::to_string(logits.size()) + " classes");
    std::vector<double> q = softmax_with_temperature(logits, 1.0);
    LossReport report;
    report.value = -std::log(std::max(q[hard_label], kProbabilityFloor));
    report.grad_logits = std::move(q);
    report.grad_logits[hard_label] -= 1.0;
    return report;
}

// Two conventions exist for the soft-term weight: (T/2)^2 and T^2/2. Both
// are supported; (T/2)^2 is the default.
enum class SoftWeight { half_t_squared, t_squared_over_2 };

inline double soft_term_weight(double temperature, SoftWeight interpretation) {
    return interpretation == SoftWeight::half_t_squared
               ? (temperature / 2.0) * (temperature / 2.0)
               : temperature * temperature / 2.0;
}

inline double combine_loss_values(double soft_value, double hard_value, double temperature,
                                  SoftWeight interpretation = SoftWeight::half_t_squared) {
    return soft_term_weight(temperature, interpretation) * soft_value + 0.5 * hard_value;
}

// Supervised objective: weighted sum of the distillation term and categorical
// cross entropy at T=1.
inline LossReport combined_loss(const TeacherTarget& target, std::span<const double> logits,
                                double temperature,
                                SoftWeight interpretation = SoftWeight::half_t_squared) {
    if (!target.hard_label.has_value())
        throw StateError("combined_loss: target carries no hard label");
    LossReport soft = distillation_loss(target, logits, temperature);
    LossReport hard = cross_entropy(*target.hard_label, logits);
    const double w = soft_term_weight(temperature, interpretation);

    LossReport report;
    report.value = w * soft.value + 0.5 * hard.value;
    report.grad_logits.resize(logits.size());
    for (std::size_t j = 0; j < logits.size(); ++j)
        report.grad_logits[j] = w * soft.grad_logits[j] + 0.5 * hard.grad_logits[j];
    return report;
}

// Ablation variant: squared L2 distance between the student's T=1
// distribution and the raw teacher posterior, chain-ruled through softmax.
inline LossReport l2_distillation_loss(const TeacherTarget& target, std::span<const double> logits) {
    if (target.posterior.size() != logits.size())
        throw ShapeError("l2_distillation_loss: posterior length " +
                         std::to_string(target.posterior.size()) + " vs logits length " +
                         std::to_string(logits.size()));
    require_simplex(target.posterior, "l2_distillation_loss");

    std::vector<double> q = softmax_with_temperature(logits, 1.0);
    LossReport report;
    std::vector<double> residual(q.size());
    double dot_rq = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) {
        const double d = q[j] - target.posterior[j];
        report.value += d * d;
        residual[j] = 2.0 * d;
        dot_rq += residual[j] * q[j];
    }
    report.grad_logits.resize(q.size());
    for (std::size_t j = 0; j < q.size(); ++j)
        report.grad_logits[j] = q[j] * (residual[j] - dot_rq);
    return report;
}

// Mean value and mean gradient over a batch. Mean rather than sum keeps the
// learning rate batch-size invariant.
inline LossReport batch_reduce(std::span<const LossReport> reports) {
    if (reports.empty())
        throw DomainError("batch_reduce: empty batch");
    const std::size_t n = reports.front().grad_logits.size();
    LossReport out;
    out.grad_logits.assign(n, 0.0);
    for (const LossReport& r : reports) {
        if (r.grad_logits.size() != n)
            throw ShapeError("batch_reduce: gradient length mismatch");
        out.value += r.value;
        for (std::size_t j = 0; j < n; ++j) out.grad_logits[j] += r.grad_logits[j];
    }
    const double inv = 1.0 / static_cast<double>(reports.size());
    out.value *= inv;
    for (double& g : out.grad_logits) g *= inv;
    return out;
}

} // namespace seqdistill
