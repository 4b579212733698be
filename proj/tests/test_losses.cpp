#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "seqdistill/losses.hpp"
#include "seqdistill/rng.hpp"

using namespace seqdistill;

namespace {

std::vector<double> random_simplex(Rng& rng, std::size_t n, double floor = 0.01) {
    std::vector<double> p(n);
    double sum = 0.0;
    for (double& x : p) {
        x = floor + rng.uniform01();
        sum += x;
    }
    for (double& x : p) x /= sum;
    return p;
}

// Central-difference oracle for any loss over logits.
void check_gradient(const std::function<LossReport(std::span<const double>)>& loss,
                    std::vector<double> logits, double rel_tol = 1e-6) {
    const double eps = 1e-6;
    LossReport report = loss(logits);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double saved = logits[i];
        logits[i] = saved + eps;
        const double plus = loss(logits).value;
        logits[i] = saved - eps;
        const double minus = loss(logits).value;
        logits[i] = saved;
        const double fd = (plus - minus) / (2 * eps);
        const double an = report.grad_logits[i];
        CHECK(std::abs(an - fd) <= rel_tol * std::max(std::abs(an), std::abs(fd)) + 1e-8);
    }
}

} // namespace

TEST_CASE("kl_divergence identity, worked example and clamp") {
    std::vector<double> p{0.4, 0.6};
    CHECK(kl_divergence(p, p) <= 1e-12);

    std::vector<double> p2{0.5, 0.5}, q2{0.25, 0.75};
    CHECK(kl_divergence(p2, q2) ==
          doctest::Approx(0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0)).epsilon(1e-12));
    CHECK(kl_divergence(p2, q2) == doctest::Approx(0.143841).epsilon(1e-5));

    std::vector<double> p3{1.0, 0.0}, q3{0.0, 1.0};
    const double v = kl_divergence(p3, q3);
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(-std::log(1e-12)).epsilon(1e-12));
    CHECK(v == doctest::Approx(27.631).epsilon(1e-4));
}

TEST_CASE("kl_divergence rejects bad input") {
    std::vector<double> p{0.5, 0.5};
    std::vector<double> q3{0.2, 0.3, 0.5};
    CHECK_THROWS_AS((void)kl_divergence(p, q3), ShapeError);
    std::vector<double> not_simplex{0.5, 0.3};
    CHECK_THROWS_AS((void)kl_divergence(p, not_simplex), DomainError);
    std::vector<double> negative{1.2, -0.2};
    CHECK_THROWS_AS((void)kl_divergence(negative, p), DomainError);
}

TEST_CASE("kl_divergence non-negative over 1000 random pairs, zero iff equal") {
    Rng rng(314);
    for (int trial = 0; trial < 1000; ++trial) {
        auto p = random_simplex(rng, 2 + rng.below(6));
        auto q = random_simplex(rng, p.size());
        CHECK(kl_divergence(p, q) >= 0.0);
        CHECK(kl_divergence(p, p) <= 1e-12);
        double linf = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) linf = std::max(linf, std::abs(p[i] - q[i]));
        if (linf > 0.01) CHECK(kl_divergence(p, q) > 1e-9);
    }
}

TEST_CASE("distillation_loss matches hand computation at T=1") {
    // teacher uniform over 2 classes, student logits [ln 2, 0]
    TeacherTarget target{{0.5, 0.5}, std::nullopt};
    std::vector<double> logits{std::log(2.0), 0.0};
    LossReport r = distillation_loss(target, logits, 1.0);
    CHECK(r.value == doctest::Approx(0.058891).epsilon(1e-4));
    CHECK(r.grad_logits[0] == doctest::Approx(2.0 / 3.0 - 0.5).epsilon(1e-12));
    CHECK(r.grad_logits[1] == doctest::Approx(1.0 / 3.0 - 0.5).epsilon(1e-12));
}

TEST_CASE("distillation_loss vanishes when teacher and student agree") {
    // Power softening maps a T=1 posterior onto the student's tempered
    // distribution, so the zero of the loss is posterior == softmax(logits).
    for (double t : {1.0, 2.0, 5.0}) {
        std::vector<double> logits{0.3, -0.7, 1.1};
        auto posterior = softmax_with_temperature(logits, 1.0);
        LossReport r = distillation_loss({posterior, std::nullopt}, logits, t);
        CHECK(r.value <= 1e-9);
        for (double g : r.grad_logits) CHECK(std::abs(g) <= 1e-9);
    }
}

TEST_CASE("distillation_loss gradient matches finite differences on 20 random triples") {
    Rng rng(123);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + rng.below(5);
        auto posterior = random_simplex(rng, n);
        std::vector<double> logits(n);
        for (double& z : logits) z = rng.uniform(-2, 2);
        const double t = std::vector<double>{1, 2, 5, 10}[trial % 4];
        check_gradient(
            [&](std::span<const double> z) {
                return distillation_loss({posterior, std::nullopt}, z, t);
            },
            logits);
    }
}

TEST_CASE("distillation_loss is shift invariant") {
    Rng rng(88);
    auto posterior = random_simplex(rng, 4);
    std::vector<double> logits{0.2, -1.0, 0.7, 2.0};
    std::vector<double> shifted(logits);
    for (double& z : shifted) z += 13.5;
    for (double t : {1.0, 5.0}) {
        const double a = distillation_loss({posterior, std::nullopt}, logits, t).value;
        const double b = distillation_loss({posterior, std::nullopt}, shifted, t).value;
        CHECK(a == doctest::Approx(b).epsilon(1e-12));
    }
}

TEST_CASE("distillation_loss domain errors") {
    TeacherTarget target{{0.5, 0.5}, std::nullopt};
    std::vector<double> logits{0.0, 0.0};
    CHECK_THROWS_AS((void)distillation_loss(target, logits, 0.0), DomainError);
    std::vector<double> three{0.0, 0.0, 0.0};
    CHECK_THROWS_AS((void)distillation_loss(target, three, 1.0), ShapeError);
}

TEST_CASE("cross_entropy values and gradient simplex property") {
    std::vector<double> confident{50.0, 0.0, 0.0};
    CHECK(cross_entropy(0, confident).value <= 1e-12);

    std::vector<double> uniform{1.0, 1.0, 1.0, 1.0};
    CHECK(cross_entropy(2, uniform).value == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> z(5);
        for (double& x : z) x = rng.uniform(-4, 4);
        LossReport r = cross_entropy(static_cast<std::uint32_t>(rng.below(5)), z);
        double sum = 0.0;
        for (double g : r.grad_logits) sum += g;
        CHECK(std::abs(sum) <= 1e-12);
    }
    CHECK_THROWS_AS((void)cross_entropy(4, uniform), DomainError);
}

TEST_CASE("cross_entropy gradient matches finite differences") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> z(4);
        for (double& x : z) x = rng.uniform(-3, 3);
        const auto label = static_cast<std::uint32_t>(rng.below(4));
        check_gradient([&](std::span<const double> logits) { return cross_entropy(label, logits); },
                       z);
    }
}

TEST_CASE("combined loss weighting arithmetic") {
    CHECK(soft_term_weight(5.0, SoftWeight::half_t_squared) == doctest::Approx(6.25));
    CHECK(soft_term_weight(5.0, SoftWeight::t_squared_over_2) == doctest::Approx(12.5));
    CHECK(combine_loss_values(0.2, 1.0, 5.0) == doctest::Approx(1.75).epsilon(1e-12));
    CHECK(combine_loss_values(0.2, 1.0, 2.0) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(combine_loss_values(0.0, 0.0, 7.0) == doctest::Approx(0.0));
}

TEST_CASE("combined_loss equals weighted sum of its parts") {
    Rng rng(17);
    for (double t : {1.0, 2.0, 5.0, 10.0}) {
        auto posterior = random_simplex(rng, 4);
        std::vector<double> logits(4);
        for (double& z : logits) z = rng.uniform(-2, 2);
        const auto label = static_cast<std::uint32_t>(rng.below(4));
        TeacherTarget target{posterior, label};

        LossReport combined = combined_loss(target, logits, t);
        LossReport soft = distillation_loss(target, logits, t);
        LossReport hard = cross_entropy(label, logits);
        const double w = soft_term_weight(t, SoftWeight::half_t_squared);
        CHECK(combined.value == doctest::Approx(w * soft.value + 0.5 * hard.value).epsilon(1e-12));
        for (std::size_t j = 0; j < logits.size(); ++j)
            CHECK(combined.grad_logits[j] ==
                  doctest::Approx(w * soft.grad_logits[j] + 0.5 * hard.grad_logits[j]).epsilon(1e-12));

        check_gradient([&](std::span<const double> z) { return combined_loss(target, z, t); },
                       logits);
    }
}

TEST_CASE("combined_loss with one-hot teacher at T=1 reduces to KL/4 + CE/2") {
    std::vector<double> logits{0.6, -0.4, 0.1};
    TeacherTarget target{{0.0, 1.0, 0.0}, 1};
    LossReport r = combined_loss(target, logits, 1.0);
    const double kl = distillation_loss(target, logits, 1.0).value;
    const double ce = cross_entropy(1, logits).value;
    CHECK(r.value == doctest::Approx(0.25 * kl + 0.5 * ce).epsilon(1e-12));
}

TEST_CASE("combined_loss without hard label is a state error") {
    TeacherTarget target{{0.5, 0.5}, std::nullopt};
    std::vector<double> logits{0.0, 0.0};
    CHECK_THROWS_AS((void)combined_loss(target, logits, 2.0), StateError);
}

TEST_CASE("l2_distillation_loss values and gradient") {
    std::vector<double> logits{0.8, -0.2, 0.5};
    auto q = softmax_with_temperature(logits, 1.0);
    CHECK(l2_distillation_loss({q, std::nullopt}, logits).value <= 1e-15);

    std::vector<double> equal_logits{1.0, 1.0};
    TeacherTarget onehot{{1.0, 0.0}, std::nullopt};
    CHECK(l2_distillation_loss(onehot, equal_logits).value == doctest::Approx(0.5).epsilon(1e-12));

    Rng rng(33);
    for (int trial = 0; trial < 10; ++trial) {
        auto posterior = random_simplex(rng, 5);
        std::vector<double> z(5);
        for (double& x : z) x = rng.uniform(-2, 2);
        check_gradient(
            [&](std::span<const double> logits_) {
                return l2_distillation_loss({posterior, std::nullopt}, logits_);
            },
            z);
    }
}

TEST_CASE("batch_reduce means values and gradients") {
    LossReport a{1.0, {1.0, -1.0}};
    LossReport b{3.0, {0.0, 2.0}};

    std::vector<LossReport> single{a};
    LossReport r1 = batch_reduce(single);
    CHECK(r1.value == doctest::Approx(1.0));
    CHECK(r1.grad_logits[0] == doctest::Approx(1.0));

    std::vector<LossReport> both{a, b};
    LossReport r2 = batch_reduce(both);
    CHECK(r2.value == doctest::Approx(2.0));
    CHECK(r2.grad_logits[0] == doctest::Approx(0.5));
    CHECK(r2.grad_logits[1] == doctest::Approx(0.5));

    CHECK_THROWS_AS((void)batch_reduce({}), DomainError);

    // Linearity: mean of gradients equals gradient of the mean.
    Rng rng(55);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<LossReport> reports;
        std::vector<double> mean_grad(3, 0.0);
        const std::size_t count = 1 + rng.below(6);
        for (std::size_t i = 0; i < count; ++i) {
            LossReport r{rng.uniform01(), {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)}};
            for (std::size_t j = 0; j < 3; ++j) mean_grad[j] += r.grad_logits[j];
            reports.push_back(std::move(r));
        }
        for (double& g : mean_grad) g /= static_cast<double>(count);
        LossReport reduced = batch_reduce(reports);
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(reduced.grad_logits[j] == doctest::Approx(mean_grad[j]).epsilon(1e-12));
    }
}
