#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "seqdistill/losses.hpp"
#include "seqdistill/lstm.hpp"
#include "seqdistill/matrix.hpp"
#include "seqdistill/rng.hpp"

namespace seqdistill {

// Finite-difference verification of the BPTT gradients. The oracle side uses
// nothing but forward passes and loss values, so it stays independent of
// stack_backward.

struct GradCheckOptions {
    double tolerance = 1e-4; // relative
    double abs_floor = 1e-7; // absolute slack for near-zero gradients
    double epsilon = 1e-6;   // central-difference step
    std::size_t timesteps = 3;
    std::size_t channels = 4;
    std::size_t hidden = 5;
    std::size_t num_classes = 3;
    double dropout = 0.5;
};

struct GradCheckCase {
    std::string name;
    std::size_t checked = 0;
    double worst_ratio = 0.0; // |analytic - fd| / (tol*max(|a|,|fd|) + floor); pass iff <= 1
    bool pass = false;
};

inline bool all_passed(const std::vector<GradCheckCase>& cases) {
    for (const GradCheckCase& c : cases)
        if (!c.pass) return false;
    return true;
}

namespace detail {

using LogitLoss = std::function<LossReport(std::span<const double>)>;

inline GradCheckCase check_one_config(const std::string& name, const StackConfig& config,
                                      const LogitLoss& loss, std::uint64_t seed,
                                      const GradCheckOptions& opt) {
    GradCheckCase result;
    result.name = name;
    result.pass = true;

    LstmStack stack = init_stack(config, derive_seed(seed, 0x9c1u));
    Rng rng(derive_seed(seed, 0x51edu));
    Matrix signal(opt.timesteps, opt.channels);
    for (double& v : signal.values()) v = rng.uniform(-1.0, 1.0);
    const std::uint64_t mask_seed = derive_seed(seed, 0x3a5u);

    auto loss_value = [&]() {
        ForwardResult fr = stack_forward(signal, stack, /*training=*/true, mask_seed);
        return loss(fr.logits).value;
    };

    ForwardResult fr = stack_forward(signal, stack, /*training=*/true, mask_seed);
    LossReport report = loss(fr.logits);
    StackGradients grads = stack_backward(*fr.trace, report.grad_logits, stack);

    auto params = stack.parameters();
    auto analytic = grads.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t i = 0; i < params[p].values.size(); ++i) {
            const double saved = params[p].values[i];
            params[p].values[i] = saved + opt.epsilon;
            const double plus = loss_value();
            params[p].values[i] = saved - opt.epsilon;
            const double minus = loss_value();
            params[p].values[i] = saved;

            const double fd = (plus - minus) / (2.0 * opt.epsilon);
            const double an = analytic[p].values[i];
            const double allowance = opt.tolerance * std::max(std::abs(an), std::abs(fd)) + opt.abs_floor;
            const double ratio = std::abs(an - fd) / allowance;
            result.worst_ratio = std::max(result.worst_ratio, ratio);
            if (ratio > 1.0) result.pass = false;
            ++result.checked;
        }
    }
    return result;
}

} // namespace detail

// Runs every depth 1..4 x {unidirectional, bidirectional} x loss-mode
// combination on a tiny instance with frozen dropout masks.
inline std::vector<GradCheckCase> run_gradient_checks(std::uint64_t seed,
                                                      const GradCheckOptions& opt = {}) {
    std::vector<GradCheckCase> cases;

    Rng target_rng(derive_seed(seed, 0x7a26u));
    std::vector<double> posterior(opt.num_classes);
    double sum = 0.0;
    for (double& x : posterior) {
        x = target_rng.uniform(0.05, 1.0);
        sum += x;
    }
    for (double& x : posterior) x /= sum;
    const auto label = static_cast<std::uint32_t>(target_rng.below(opt.num_classes));

    struct LossMode {
        std::string name;
        detail::LogitLoss fn;
    };
    std::vector<LossMode> losses;
    for (double t : {1.0, 2.0, 5.0, 10.0})
        losses.push_back({"kl_T" + std::to_string(static_cast<int>(t)),
                          [posterior, t](std::span<const double> z) {
                              return distillation_loss({posterior, std::nullopt}, z, t);
                          }});
    losses.push_back({"cross_entropy", [label](std::span<const double> z) {
                          return cross_entropy(label, z);
                      }});
    losses.push_back({"combined_T5", [posterior, label](std::span<const double> z) {
                          return combined_loss({posterior, label}, z, 5.0);
                      }});
    losses.push_back({"l2", [posterior](std::span<const double> z) {
                          return l2_distillation_loss({posterior, std::nullopt}, z);
                      }});

    std::size_t case_index = 0;
    for (std::size_t depth = 1; depth <= 4; ++depth) {
        for (bool bidirectional : {false, true}) {
            StackConfig config;
            config.depth = depth;
            config.hidden = opt.hidden;
            config.bidirectional = bidirectional;
            config.recurrent_dropout = opt.dropout;
            config.num_classes = opt.num_classes;
            config.input_channels = opt.channels;
            for (const LossMode& mode : losses) {
                const std::string name = "depth" + std::to_string(depth) +
                                         (bidirectional ? "_bi" : "_uni") + "_" + mode.name;
                cases.push_back(detail::check_one_config(
                    name, config, mode.fn, derive_seed(seed, 0xca5eu, case_index), opt));
                ++case_index;
            }
        }
    }
    return cases;
}

} // namespace seqdistill
