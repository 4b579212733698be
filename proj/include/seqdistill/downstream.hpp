#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "seqdistill/dataio.hpp"
#include "seqdistill/errors.hpp"
#include "seqdistill/lstm.hpp"
#include "seqdistill/rng.hpp"
#include "seqdistill/teacher.hpp"
#include "seqdistill/trainer.hpp"

namespace seqdistill {

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

struct FeatureRow {
    std::vector<double> values;
    std::uint32_t class_id = 0;
    std::uint32_t subject_id = 0;
    std::uint32_t image_id = 0;
};

struct FeatureSet {
    std::vector<FeatureRow> rows;
    std::size_t dim = 0;
};

struct WindowSpec {
    std::size_t width = 200;
    std::size_t stride = 100;
};

// One feature vector per sample, or per excerpt when a window is given
// (labels inherited from the parent sample). Dropout is off; extraction is
// deterministic and independent of batch composition.
inline FeatureSet extract_features(const Corpus& corpus, const LstmStack& stack,
                                   const std::optional<WindowSpec>& window = std::nullopt) {
    FeatureSet set;
    set.dim = stack.config.feature_dim();
    for (const EegSample& s : corpus.samples) {
        auto emit = [&](const Matrix& signal) {
            ForwardResult fr = stack_forward(signal, stack, /*training=*/false);
            set.rows.push_back({std::move(fr.features), s.class_id, s.subject_id, s.image_id});
        };
        if (window.has_value()) {
            for (const Matrix& excerpt : window_excerpts(s.signal, window->width, window->stride))
                emit(excerpt);
        } else {
            emit(s.signal);
        }
    }
    return set;
}

// Text export, one vector per line:
//   image_id TAB subject_id TAB class_id TAB v_0 TAB ... TAB v_{dim-1}
inline void write_features(const FeatureSet& set, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_features: cannot open " + path + " for writing");
    char buf[40];
    for (const FeatureRow& row : set.rows) {
        out << row.image_id << '\t' << row.subject_id << '\t' << row.class_id;
        for (double v : row.values) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << '\t' << buf;
        }
        out << '\n';
    }
    if (!out) throw IoError("write_features: write failed for " + path);
}

// ---------------------------------------------------------------------------
// k-nearest neighbours
// ---------------------------------------------------------------------------

struct KnnResult {
    std::uint32_t class_id = 0;
    std::map<std::uint32_t, std::size_t> votes; // label -> count among the k nearest
};

// Euclidean k-NN with majority voting. Label ties break by smallest mean
// neighbour distance, then lowest class id.
inline KnnResult knn_classify(const FeatureSet& train, std::span<const double> query,
                              std::size_t k) {
    if (k == 0) throw DomainError("knn_classify: k must be >= 1");
    if (k > train.rows.size())
        throw DomainError("knn_classify: k=" + std::to_string(k) + " exceeds training size " +
                          std::to_string(train.rows.size()));
    if (query.size() != train.dim)
        throw ShapeError("knn_classify: query length " + std::to_string(query.size()) +
                         " vs feature dim " + std::to_string(train.dim));

    std::vector<std::pair<double, std::size_t>> dist(train.rows.size());
    for (std::size_t i = 0; i < train.rows.size(); ++i) {
        double acc = 0.0;
        const std::vector<double>& x = train.rows[i].values;
        for (std::size_t j = 0; j < query.size(); ++j) {
            const double d = x[j] - query[j];
            acc += d * d;
        }
        dist[i] = {std::sqrt(acc), i};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());

    KnnResult result;
    std::map<std::uint32_t, double> dist_sum;
    for (std::size_t i = 0; i < k; ++i) {
        const std::uint32_t label = train.rows[dist[i].second].class_id;
        result.votes[label] += 1;
        dist_sum[label] += dist[i].first;
    }
    bool first = true;
    std::size_t best_count = 0;
    double best_mean = 0.0;
    for (const auto& [label, count] : result.votes) {
        const double mean = dist_sum[label] / static_cast<double>(count);
        if (first || count > best_count || (count == best_count && mean < best_mean)) {
            first = false;
            best_count = count;
            best_mean = mean;
            result.class_id = label;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Linear one-vs-rest SVM
// ---------------------------------------------------------------------------

struct LinearSvmModel {
    std::vector<std::uint32_t> classes; // score row -> class id, sorted
    Matrix weights;                     // classes.size() x dim
    std::vector<double> bias;

    std::vector<double> scores(std::span<const double> x) const {
        std::vector<double> out(bias);
        matvec_acc(weights, x, out);
        return out;
    }
    std::uint32_t predict(std::span<const double> x) const {
        const std::vector<double> s = scores(x);
        std::size_t best = 0;
        for (std::size_t i = 1; i < s.size(); ++i)
            if (s[i] > s[best]) best = i;
        return classes[best];
    }
};

// Hinge-loss one-vs-rest linear classifier trained by Pegasos-style
// stochastic subgradient descent. The step 1/(reg*t + 1) keeps Pegasos
// asymptotics with a bounded first step; the bias is left unregularized.
// Deterministic per seed.
inline LinearSvmModel linear_svm_train(const FeatureSet& train, double reg, std::size_t epochs,
                                       std::uint64_t seed) {
    if (!(reg > 0.0)) throw DomainError("linear_svm_train: reg must be positive");
    std::set<std::uint32_t> labels;
    for (const FeatureRow& row : train.rows) labels.insert(row.class_id);
    if (labels.size() < 2)
        throw DomainError("linear_svm_train: need at least 2 classes, got " +
                          std::to_string(labels.size()));

    LinearSvmModel model;
    model.classes.assign(labels.begin(), labels.end());
    model.weights = Matrix(model.classes.size(), train.dim);
    model.bias.assign(model.classes.size(), 0.0);

    std::vector<std::size_t> order(train.rows.size());
    std::uint64_t t = 0;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(derive_seed(seed, 0x53f7u, epoch));
        rng.shuffle(order);
        for (std::size_t idx : order) {
            const FeatureRow& row = train.rows[idx];
            ++t;
            const double eta = 1.0 / (reg * static_cast<double>(t) + 1.0);
            const double shrink = 1.0 - eta * reg;
            for (std::size_t c = 0; c < model.classes.size(); ++c) {
                const double y = row.class_id == model.classes[c] ? 1.0 : -1.0;
                double margin = model.bias[c];
                auto w = model.weights.row(c);
                for (std::size_t j = 0; j < train.dim; ++j) margin += w[j] * row.values[j];
                margin *= y;
                for (std::size_t j = 0; j < train.dim; ++j) w[j] *= shrink;
                if (margin < 1.0) {
                    for (std::size_t j = 0; j < train.dim; ++j) w[j] += eta * y * row.values[j];
                    model.bias[c] += eta * y;
                }
            }
        }
    }
    return model;
}

// ---------------------------------------------------------------------------
// Majority voting over excerpts
// ---------------------------------------------------------------------------

enum class TieBreak { summed_probability, lowest_class_id };

struct VotingPolicy {
    TieBreak tie_break = TieBreak::summed_probability;
};

struct ExcerptPrediction {
    std::uint32_t class_id = 0;
    std::vector<double> scores; // aligned with the score_classes list
};

// The class predicted most often wins. Ties break per policy: by the largest
// total score mass across all excerpts (then lowest class id), or directly by
// lowest class id.
inline std::uint32_t majority_vote(std::span<const ExcerptPrediction> predictions,
                                   std::span<const std::uint32_t> score_classes,
                                   VotingPolicy policy = {}) {
    if (predictions.empty()) throw DomainError("majority_vote: no excerpt predictions");
    std::map<std::uint32_t, std::size_t> counts;
    for (const ExcerptPrediction& p : predictions) {
        if (p.scores.size() != score_classes.size())
            throw ShapeError("majority_vote: score vector length " + std::to_string(p.scores.size()) +
                             " vs " + std::to_string(score_classes.size()) + " score classes");
        counts[p.class_id] += 1;
    }
    std::size_t top_count = 0;
    for (const auto& [label, count] : counts) top_count = std::max(top_count, count);
    std::vector<std::uint32_t> tied;
    for (const auto& [label, count] : counts)
        if (count == top_count) tied.push_back(label);
    if (tied.size() == 1 || policy.tie_break == TieBreak::lowest_class_id)
        return tied.front(); // map iteration is ordered, front() is the lowest id

    std::map<std::uint32_t, double> mass;
    for (const ExcerptPrediction& p : predictions)
        for (std::size_t i = 0; i < score_classes.size(); ++i) mass[score_classes[i]] += p.scores[i];
    std::uint32_t best = tied.front();
    for (std::uint32_t label : tied)
        if (mass[label] > mass[best]) best = label;
    return best;
}

// ---------------------------------------------------------------------------
// Unseen-category evaluation
// ---------------------------------------------------------------------------

enum class ClassifierKind { knn, svm };

struct UnseenEvalConfig {
    WindowSpec window{32, 16};
    ClassifierKind classifier = ClassifierKind::knn;
    double fit_ratio = 0.5; // share of unseen images used to fit the classifier
    std::size_t knn_k = 5;
    double svm_reg = 1e-3;
    std::size_t svm_epochs = 60;
};

struct UnseenEvalResult {
    double accuracy = 0.0;
    std::size_t eval_samples = 0;
    TrainLog train_log;
};

// End-to-end unseen-category protocol: distill on the seen classes without
// labels, extract excerpt features from a labeled subset of the unseen
// classes, fit a light classifier, and score each held-out signal by majority
// vote over its excerpts.
inline UnseenEvalResult unseen_category_eval(const Corpus& seen, const Corpus& unseen,
                                             const PosteriorTable& posteriors,
                                             const StackConfig& stack_cfg,
                                             const TrainConfig& train_cfg,
                                             const UnseenEvalConfig& eval_cfg) {
    TrainConfig cfg = train_cfg;
    cfg.mode = TrainMode::unsupervised_kd; // the protocol trains without labels

    LstmStack stack = init_stack(stack_cfg, derive_seed(cfg.seed, 0x1417u));
    AdamState adam = make_adam_state(stack);
    UnseenEvalResult result;
    result.train_log = fit(seen, &posteriors, stack, adam, cfg);

    SplitPlan plan = grouped_split(unseen, eval_cfg.fit_ratio, derive_seed(cfg.seed, 0x00e7u));
    Corpus fit_part = select_by_images(unseen, plan.train_image_ids);
    Corpus eval_part = select_by_images(unseen, plan.test_image_ids);

    FeatureSet fit_features = extract_features(fit_part, stack, eval_cfg.window);

    std::set<std::uint32_t> label_set;
    for (const FeatureRow& row : fit_features.rows) label_set.insert(row.class_id);
    std::vector<std::uint32_t> score_classes(label_set.begin(), label_set.end());

    LinearSvmModel svm;
    std::size_t k = 0;
    if (eval_cfg.classifier == ClassifierKind::svm) {
        svm = linear_svm_train(fit_features, eval_cfg.svm_reg, eval_cfg.svm_epochs,
                               derive_seed(cfg.seed, 0x5f31u));
        score_classes = svm.classes;
    } else {
        k = std::min(eval_cfg.knn_k, fit_features.rows.size());
    }

    std::size_t correct = 0;
    for (const EegSample& s : eval_part.samples) {
        std::vector<ExcerptPrediction> predictions;
        for (const Matrix& excerpt :
             window_excerpts(s.signal, eval_cfg.window.width, eval_cfg.window.stride)) {
            ForwardResult fr = stack_forward(excerpt, stack, /*training=*/false);
            ExcerptPrediction pred;
            if (eval_cfg.classifier == ClassifierKind::svm) {
                std::vector<double> scores = svm.scores(fr.features);
                pred.class_id = svm.predict(fr.features);
                pred.scores = softmax_with_temperature(scores, 1.0);
            } else {
                KnnResult knn = knn_classify(fit_features, fr.features, k);
                pred.class_id = knn.class_id;
                pred.scores.assign(score_classes.size(), 0.0);
                for (std::size_t c = 0; c < score_classes.size(); ++c) {
                    auto it = knn.votes.find(score_classes[c]);
                    if (it != knn.votes.end())
                        pred.scores[c] = static_cast<double>(it->second) / static_cast<double>(k);
                }
            }
            predictions.push_back(std::move(pred));
        }
        const std::uint32_t voted = majority_vote(predictions, score_classes);
        if (voted == s.class_id) ++correct;
    }
    result.eval_samples = eval_part.samples.size();
    result.accuracy = result.eval_samples == 0
                          ? 0.0
                          : static_cast<double>(correct) / static_cast<double>(result.eval_samples);
    return result;
}

} // namespace seqdistill
