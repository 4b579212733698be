#pragma once

#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "seqdistill/dataio.hpp"
#include "seqdistill/errors.hpp"
#include "seqdistill/losses.hpp"
#include "seqdistill/lstm.hpp"
#include "seqdistill/rng.hpp"
#include "seqdistill/teacher.hpp"
#include "seqdistill/tensorfile.hpp"

namespace seqdistill {

enum class TrainMode { supervised_kd, unsupervised_kd, hard_only, l2_kd };

inline bool mode_needs_posteriors(TrainMode m) { return m != TrainMode::hard_only; }
inline bool mode_needs_labels(TrainMode m) { return m != TrainMode::unsupervised_kd; }

inline const char* train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::supervised_kd: return "supervised_kd";
        case TrainMode::unsupervised_kd: return "unsupervised_kd";
        case TrainMode::hard_only: return "hard_only";
        case TrainMode::l2_kd: return "l2_kd";
    }
    return "?";
}

struct TrainConfig {
    TrainMode mode = TrainMode::supervised_kd;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batch_size = 32;
    std::size_t epochs = 1;
    double temperature = 5.0;
    std::uint64_t seed = 0;
    SoftWeight weight_interpretation = SoftWeight::half_t_squared;
    std::size_t threads = 1;

    void validate() const {
        if (batch_size == 0) throw DomainError("TrainConfig: batch_size must be >= 1");
        if (!(temperature > 0.0)) throw DomainError("TrainConfig: temperature must be positive");
        if (!(learning_rate > 0.0)) throw DomainError("TrainConfig: learning_rate must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw DomainError("TrainConfig: betas must be in [0,1)");
        if (threads == 0) throw DomainError("TrainConfig: threads must be >= 1");
    }

    std::uint64_t digest() const {
        // FNV-1a over the canonical field encoding; epochs and threads are
        // excluded so a resumed run matches the original.
        std::uint64_t hash = 1469598103934665603ULL;
        auto mix = [&hash](std::uint64_t v) {
            for (int i = 0; i < 8; ++i) {
                hash ^= (v >> (8 * i)) & 0xff;
                hash *= 1099511628211ULL;
            }
        };
        mix(static_cast<std::uint64_t>(mode));
        mix(std::bit_cast<std::uint64_t>(learning_rate));
        mix(std::bit_cast<std::uint64_t>(beta1));
        mix(std::bit_cast<std::uint64_t>(beta2));
        mix(std::bit_cast<std::uint64_t>(epsilon));
        mix(batch_size);
        mix(std::bit_cast<std::uint64_t>(temperature));
        mix(seed);
        mix(static_cast<std::uint64_t>(weight_interpretation));
        return hash;
    }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamSlot {
    std::vector<double> m, v;
};

struct AdamState {
    std::vector<AdamSlot> slots; // aligned with LstmStack::parameters() order
    std::uint64_t step = 0;
};

inline AdamState make_adam_state(const LstmStack& stack) {
    AdamState state;
    for (const ConstParamRef& ref : stack.parameters())
        state.slots.push_back({std::vector<double>(ref.values.size(), 0.0),
                               std::vector<double>(ref.values.size(), 0.0)});
    return state;
}

// One bias-corrected Adam update on a flat parameter span.
inline void adam_apply(std::span<double> param, std::span<const double> grad, AdamSlot& slot,
                       std::uint64_t step, double lr, double beta1, double beta2, double eps) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        slot.m[i] = beta1 * slot.m[i] + (1.0 - beta1) * grad[i];
        slot.v[i] = beta2 * slot.v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double m_hat = slot.m[i] / bc1;
        const double v_hat = slot.v[i] / bc2;
        param[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

// Applies Adam across every stack parameter. A non-finite gradient refuses
// the whole update before touching any state.
inline void adam_step(LstmStack& stack, const StackGradients& grads, AdamState& state,
                      const TrainConfig& cfg) {
    auto params = stack.parameters();
    auto gradients = grads.parameters();
    if (params.size() != gradients.size() || params.size() != state.slots.size())
        throw ShapeError("adam_step: parameter/gradient/state layout mismatch");
    for (std::size_t i = 0; i < gradients.size(); ++i) {
        if (gradients[i].values.size() != params[i].values.size())
            throw ShapeError("adam_step: tensor " + params[i].name + " shape mismatch");
        if (!all_finite(gradients[i].values))
            throw NumericError("adam_step: non-finite gradient in " + gradients[i].name +
                               ", update refused");
    }
    ++state.step;
    for (std::size_t i = 0; i < params.size(); ++i)
        adam_apply(params[i].values, gradients[i].values, state.slots[i], state.step,
                   cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

inline double evaluate(const Corpus& corpus, const LstmStack& stack) {
    if (corpus.samples.empty()) throw DomainError("evaluate: empty corpus");
    std::size_t correct = 0;
    for (const EegSample& s : corpus.samples) {
        ForwardResult fr = stack_forward(s.signal, stack, /*training=*/false);
        std::size_t argmax = 0;
        for (std::size_t j = 1; j < fr.logits.size(); ++j)
            if (fr.logits[j] > fr.logits[argmax]) argmax = j;
        if (argmax == s.class_id) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(corpus.samples.size());
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochStats {
    double train_loss = 0.0;
    double test_accuracy = std::numeric_limits<double>::quiet_NaN(); // NaN when no eval set
    double wall_seconds = 0.0;
};

struct TrainLog {
    std::vector<EpochStats> epochs;
    std::uint64_t label_reads = 0;     // hard labels touched by the training loss
    std::uint64_t posterior_reads = 0; // teacher posteriors touched by the training loss

    // Hash of the deterministic content (losses and accuracies, not wall
    // clock); equal seeds and configs must give equal digests.
    std::uint64_t digest() const {
        std::uint64_t hash = 1469598103934665603ULL;
        auto mix = [&hash](std::uint64_t v) {
            for (int i = 0; i < 8; ++i) {
                hash ^= (v >> (8 * i)) & 0xff;
                hash *= 1099511628211ULL;
            }
        };
        for (const EpochStats& e : epochs) {
            mix(std::bit_cast<std::uint64_t>(e.train_loss));
            mix(std::bit_cast<std::uint64_t>(e.test_accuracy));
        }
        mix(label_reads);
        mix(posterior_reads);
        return hash;
    }
};

namespace detail {

struct SampleWork {
    LossReport report;
    StackGradients grads;
};

} // namespace detail

// Runs epochs [first_epoch, last_epoch) of shuffled mini-batch training,
// mutating the stack and Adam state in place. Shuffles and dropout masks are
// derived from (seed, epoch, sample index) alone, so a run resumed from a
// checkpoint at an epoch boundary reproduces the uninterrupted run exactly.
// last_epoch defaults to cfg.epochs.
inline TrainLog fit(const Corpus& train, const PosteriorTable* posteriors, LstmStack& stack,
                    AdamState& adam, const TrainConfig& cfg, const Corpus* eval_set = nullptr,
                    std::size_t first_epoch = 0,
                    std::size_t last_epoch = std::numeric_limits<std::size_t>::max()) {
    cfg.validate();
    if (train.samples.empty()) throw DomainError("fit: empty training corpus");
    if (last_epoch == std::numeric_limits<std::size_t>::max()) last_epoch = cfg.epochs;

    const std::size_t n_classes = stack.config.num_classes;
    if (mode_needs_posteriors(cfg.mode)) {
        if (posteriors == nullptr)
            throw DataError("fit: mode " + std::string(train_mode_name(cfg.mode)) +
                            " requires teacher posteriors");
        for (const EegSample& s : train.samples) {
            if (!posteriors->contains(s.image_id))
                throw DataError("fit: no teacher posterior for training image " +
                                std::to_string(s.image_id));
            if (posteriors->at(s.image_id).size() != n_classes)
                throw ShapeError("fit: posterior for image " + std::to_string(s.image_id) +
                                 " has length " + std::to_string(posteriors->at(s.image_id).size()) +
                                 ", stack expects " + std::to_string(n_classes));
        }
    }
    if (mode_needs_labels(cfg.mode))
        for (const EegSample& s : train.samples)
            if (s.class_id >= n_classes)
                throw DataError("fit: label " + std::to_string(s.class_id) + " of image " +
                                std::to_string(s.image_id) + " out of range for " +
                                std::to_string(n_classes) + " classes");

    TrainLog log;
    std::atomic<std::uint64_t> label_reads{0}, posterior_reads{0};

    auto sample_loss = [&](const EegSample& s, std::span<const double> logits) -> LossReport {
        auto hard_label = [&]() {
            label_reads.fetch_add(1, std::memory_order_relaxed);
            return s.class_id;
        };
        auto posterior = [&]() -> const std::vector<double>& {
            posterior_reads.fetch_add(1, std::memory_order_relaxed);
            return posteriors->at(s.image_id);
        };
        switch (cfg.mode) {
            case TrainMode::supervised_kd:
                return combined_loss({posterior(), hard_label()}, logits, cfg.temperature,
                                     cfg.weight_interpretation);
            case TrainMode::unsupervised_kd:
                return distillation_loss({posterior(), std::nullopt}, logits, cfg.temperature);
            case TrainMode::hard_only:
                return cross_entropy(hard_label(), logits);
            case TrainMode::l2_kd: {
                LossReport soft = l2_distillation_loss({posterior(), std::nullopt}, logits);
                LossReport hard = cross_entropy(hard_label(), logits);
                const double w = soft_term_weight(cfg.temperature, cfg.weight_interpretation);
                LossReport out;
                out.value = w * soft.value + 0.5 * hard.value;
                out.grad_logits.resize(logits.size());
                for (std::size_t j = 0; j < logits.size(); ++j)
                    out.grad_logits[j] = w * soft.grad_logits[j] + 0.5 * hard.grad_logits[j];
                return out;
            }
        }
        throw StateError("fit: unknown training mode");
    };

    const std::size_t n = train.samples.size();
    for (std::size_t epoch = first_epoch; epoch < last_epoch; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(cfg.seed, 0x5f0fu, epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
            const std::size_t end = std::min(n, begin + cfg.batch_size);
            const std::size_t batch = end - begin;
            std::vector<detail::SampleWork> work(batch);

            auto run_range = [&](std::size_t lo, std::size_t hi) {
                for (std::size_t bi = lo; bi < hi; ++bi) {
                    const std::size_t idx = order[begin + bi];
                    const EegSample& s = train.samples[idx];
                    const std::uint64_t mask_seed =
                        derive_seed(derive_seed(cfg.seed, 0xd809u, epoch), idx);
                    ForwardResult fr = stack_forward(s.signal, stack, /*training=*/true, mask_seed);
                    work[bi].report = sample_loss(s, fr.logits);
                    work[bi].grads = stack_backward(*fr.trace, work[bi].report.grad_logits, stack);
                }
            };
            if (cfg.threads <= 1 || batch == 1) {
                run_range(0, batch);
            } else {
                const std::size_t n_threads = std::min(cfg.threads, batch);
                std::vector<std::thread> pool;
                const std::size_t chunk = (batch + n_threads - 1) / n_threads;
                for (std::size_t t = 0; t < n_threads; ++t) {
                    const std::size_t lo = t * chunk;
                    const std::size_t hi = std::min(batch, lo + chunk);
                    if (lo < hi) pool.emplace_back(run_range, lo, hi);
                }
                for (std::thread& th : pool) th.join();
            }

            // Fixed in-batch reduction order keeps results independent of the
            // thread count.
            StackGradients batch_grads = zeros_like(stack);
            for (std::size_t bi = 0; bi < batch; ++bi) {
                accumulate(batch_grads, work[bi].grads);
                loss_sum += work[bi].report.value;
            }
            scale(batch_grads, 1.0 / static_cast<double>(batch));
            adam_step(stack, batch_grads, adam, cfg);
        }

        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(n);
        if (eval_set != nullptr) stats.test_accuracy = evaluate(*eval_set, stack);
        stats.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.epochs.push_back(stats);
    }
    log.label_reads = label_reads.load();
    log.posterior_reads = posterior_reads.load();
    return log;
}

// ---------------------------------------------------------------------------
// Checkpoints: the CGNT container with stack parameters, adam.m.* / adam.v.*
// tensors and meta.* records (stack shape, step count, config digest).
// ---------------------------------------------------------------------------

struct Checkpoint {
    LstmStack stack;
    std::optional<AdamState> adam;
    std::uint64_t epochs_completed = 0;
    std::uint64_t train_config_digest = 0;
};

namespace detail {

inline NamedTensor scalar_tensor(const std::string& name, double value) {
    NamedTensor t;
    t.name = name;
    t.values = Matrix(1, 1);
    t.values(0, 0) = value;
    return t;
}

inline NamedTensor span_tensor(const std::string& name, std::span<const double> values) {
    NamedTensor t;
    t.name = name;
    t.values = Matrix(1, values.size());
    std::copy(values.begin(), values.end(), t.values.values().begin());
    return t;
}

} // namespace detail

inline void save_checkpoint(const std::string& path, const LstmStack& stack,
                            const AdamState* adam = nullptr, std::uint64_t epochs_completed = 0,
                            std::uint64_t train_config_digest = 0) {
    const StackConfig& cfg = stack.config;
    std::vector<NamedTensor> tensors;
    tensors.push_back(detail::scalar_tensor("meta.config.depth", static_cast<double>(cfg.depth)));
    tensors.push_back(detail::scalar_tensor("meta.config.hidden", static_cast<double>(cfg.hidden)));
    tensors.push_back(
        detail::scalar_tensor("meta.config.bidirectional", cfg.bidirectional ? 1.0 : 0.0));
    tensors.push_back(detail::scalar_tensor("meta.config.recurrent_dropout", cfg.recurrent_dropout));
    tensors.push_back(
        detail::scalar_tensor("meta.config.num_classes", static_cast<double>(cfg.num_classes)));
    tensors.push_back(
        detail::scalar_tensor("meta.config.input_channels", static_cast<double>(cfg.input_channels)));
    tensors.push_back(
        detail::scalar_tensor("meta.epochs_completed", static_cast<double>(epochs_completed)));
    tensors.push_back(detail::scalar_tensor("meta.train_config_digest.lo",
                                            static_cast<double>(train_config_digest & 0xffffffffULL)));
    tensors.push_back(detail::scalar_tensor("meta.train_config_digest.hi",
                                            static_cast<double>(train_config_digest >> 32)));

    auto params = stack.parameters();
    for (const ConstParamRef& ref : params) tensors.push_back(detail::span_tensor(ref.name, ref.values));
    if (adam != nullptr) {
        if (adam->slots.size() != params.size())
            throw ShapeError("save_checkpoint: Adam state does not match stack layout");
        tensors.push_back(detail::scalar_tensor("meta.adam.step", static_cast<double>(adam->step)));
        for (std::size_t i = 0; i < params.size(); ++i) {
            tensors.push_back(detail::span_tensor("adam.m." + params[i].name,
                                                  {adam->slots[i].m.data(), adam->slots[i].m.size()}));
            tensors.push_back(detail::span_tensor("adam.v." + params[i].name,
                                                  {adam->slots[i].v.data(), adam->slots[i].v.size()}));
        }
    }
    write_tensor_file(tensors, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::vector<NamedTensor> tensors = read_tensor_file(path);
    std::map<std::string, const NamedTensor*> by_name;
    for (const NamedTensor& t : tensors) by_name[t.name] = &t;

    auto scalar = [&](const std::string& name) -> double {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw FormatError("load_checkpoint: missing record '" + name + "' in " + path);
        return it->second->values(0, 0);
    };

    StackConfig cfg;
    cfg.depth = static_cast<std::size_t>(scalar("meta.config.depth"));
    cfg.hidden = static_cast<std::size_t>(scalar("meta.config.hidden"));
    cfg.bidirectional = scalar("meta.config.bidirectional") != 0.0;
    cfg.recurrent_dropout = scalar("meta.config.recurrent_dropout");
    cfg.num_classes = static_cast<std::size_t>(scalar("meta.config.num_classes"));
    cfg.input_channels = static_cast<std::size_t>(scalar("meta.config.input_channels"));

    Checkpoint ckpt;
    ckpt.stack = init_stack(cfg, 0);
    ckpt.epochs_completed = static_cast<std::uint64_t>(scalar("meta.epochs_completed"));
    ckpt.train_config_digest =
        static_cast<std::uint64_t>(scalar("meta.train_config_digest.lo")) |
        (static_cast<std::uint64_t>(scalar("meta.train_config_digest.hi")) << 32);

    auto fill = [&](const std::string& name, std::span<double> dst) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw FormatError("load_checkpoint: missing tensor '" + name + "' in " + path);
        auto src = it->second->values.values();
        if (src.size() != dst.size())
            throw FormatError("load_checkpoint: tensor '" + name + "' has " +
                              std::to_string(src.size()) + " values, expected " +
                              std::to_string(dst.size()));
        std::copy(src.begin(), src.end(), dst.begin());
    };

    auto params = ckpt.stack.parameters();
    for (ParamRef& ref : params) fill(ref.name, ref.values);

    if (by_name.count("meta.adam.step")) {
        AdamState adam = make_adam_state(ckpt.stack);
        adam.step = static_cast<std::uint64_t>(scalar("meta.adam.step"));
        for (std::size_t i = 0; i < params.size(); ++i) {
            fill("adam.m." + params[i].name, {adam.slots[i].m.data(), adam.slots[i].m.size()});
            fill("adam.v." + params[i].name, {adam.slots[i].v.data(), adam.slots[i].v.size()});
        }
        ckpt.adam = std::move(adam);
    }
    return ckpt;
}

} // namespace seqdistill
