// seqdistill: teacher-student distillation for multichannel time series.
//
// Subcommands: gen-synthetic, train, eval, extract, unseen, gradcheck.
// Exit codes: 0 success, 1 runtime/data error, 2 usage error.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "seqdistill/dataio.hpp"
#include "seqdistill/downstream.hpp"
#include "seqdistill/gradcheck.hpp"
#include "seqdistill/losses.hpp"
#include "seqdistill/lstm.hpp"
#include "seqdistill/teacher.hpp"
#include "seqdistill/trainer.hpp"

using json = nlohmann::ordered_json;
using namespace seqdistill;

namespace {

std::uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::uint64_t hash = 1469598103934665603ULL;
    char buffer[1 << 15];
    while (in.read(buffer, sizeof buffer) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            hash ^= static_cast<unsigned char>(buffer[i]);
            hash *= 1099511628211ULL;
        }
        if (in.eof()) break;
    }
    return hash;
}

std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Reproducibility record written for every run: command, resolved
// configuration, input digests, output digests, results.
class RunManifest {
  public:
    explicit RunManifest(std::string command) {
        doc_["command"] = std::move(command);
        doc_["config"] = json::object();
        doc_["inputs"] = json::array();
        doc_["outputs"] = json::array();
        doc_["results"] = json::object();
    }

    json& config() { return doc_["config"]; }
    json& results() { return doc_["results"]; }

    void add_input(const std::string& role, const std::string& path) {
        doc_["inputs"].push_back({{"role", role}, {"path", path}, {"fnv1a64", hex64(fnv1a64_file(path))}});
    }
    void add_output(const std::string& role, const std::string& path) {
        doc_["outputs"].push_back(
            {{"role", role}, {"path", path}, {"fnv1a64", hex64(fnv1a64_file(path))}});
    }

    void write(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write manifest " + path);
        out << doc_.dump(2) << "\n";
    }

  private:
    json doc_;
};

std::string default_manifest_path(const std::string& command, const std::string& out_path) {
    if (!out_path.empty()) return out_path + ".manifest.json";
    return command + ".manifest.json";
}

TrainMode parse_mode(const std::string& name) {
    if (name == "supervised") return TrainMode::supervised_kd;
    if (name == "unsupervised") return TrainMode::unsupervised_kd;
    if (name == "hard") return TrainMode::hard_only;
    if (name == "l2") return TrainMode::l2_kd;
    throw CLI::ValidationError("--mode", "unknown mode '" + name + "'");
}

PosteriorTable posterior_table_for_corpus(const Corpus& corpus, const SyntheticTeacher& teacher) {
    PosteriorTable table;
    table.teacher_name = "synthetic";
    table.num_classes = teacher.config().num_classes;
    for (const EegSample& s : corpus.samples)
        if (!table.rows.count(s.image_id)) table.rows[s.image_id] = teacher.posterior(s.class_id);
    return table;
}

// Shared model/optimizer flags for train-like commands.
struct StackFlags {
    std::size_t depth = 2;
    std::size_t hidden = 64;
    bool bidirectional = true;
    double dropout = 0.5;

    void attach(CLI::App* cmd) {
        cmd->add_option("--depth", depth, "BLSTM stack depth")->check(CLI::Range(1, 4));
        cmd->add_option("--hidden", hidden, "hidden units per direction")
            ->check(CLI::PositiveNumber);
        cmd->add_flag("--bidirectional,!--unidirectional", bidirectional,
                      "bidirectional layers (default on)");
        cmd->add_option("--dropout", dropout, "recurrent dropout probability")
            ->check(CLI::Range(0.0, 0.999));
    }

    StackConfig to_config(std::size_t num_classes, std::size_t channels) const {
        StackConfig cfg;
        cfg.depth = depth;
        cfg.hidden = hidden;
        cfg.bidirectional = bidirectional;
        cfg.recurrent_dropout = dropout;
        cfg.num_classes = num_classes;
        cfg.input_channels = channels;
        return cfg;
    }
};

struct OptimFlags {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t batch = 32;
    std::size_t epochs = 1;
    double temperature = 5.0;
    std::string weight_convention = "half-T-squared";
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    void attach(CLI::App* cmd, bool epochs_required) {
        cmd->add_option("--lr", lr, "learning rate")->check(CLI::PositiveNumber);
        cmd->add_option("--beta1", beta1, "Adam beta1 (momentum)")->check(CLI::Range(0.0, 0.9999));
        cmd->add_option("--beta2", beta2, "Adam beta2")->check(CLI::Range(0.0, 0.9999));
        cmd->add_option("--epsilon", epsilon, "Adam epsilon")->check(CLI::PositiveNumber);
        cmd->add_option("--batch", batch, "mini-batch size")->check(CLI::PositiveNumber);
        auto* ep = cmd->add_option("--epochs", epochs, "training epochs")
                       ->check(CLI::PositiveNumber);
        if (epochs_required) ep->required();
        cmd->add_option("--temperature", temperature, "distillation temperature")
            ->check(CLI::PositiveNumber);
        cmd->add_option("--weight-convention", weight_convention,
                        "soft-term weight reading of the combined loss")
            ->check(CLI::IsMember({"half-T-squared", "T-squared-over-2"}));
        cmd->add_option("--seed", seed, "run seed");
        cmd->add_option("--threads", threads, "worker threads (1 = bit-deterministic)")
            ->check(CLI::PositiveNumber);
    }

    TrainConfig to_config(TrainMode mode) const {
        TrainConfig cfg;
        cfg.mode = mode;
        cfg.learning_rate = lr;
        cfg.beta1 = beta1;
        cfg.beta2 = beta2;
        cfg.epsilon = epsilon;
        cfg.batch_size = batch;
        cfg.epochs = epochs;
        cfg.temperature = temperature;
        cfg.seed = seed;
        cfg.weight_interpretation = weight_convention == "half-T-squared"
                                        ? SoftWeight::half_t_squared
                                        : SoftWeight::t_squared_over_2;
        cfg.threads = threads;
        return cfg;
    }

    void record(json& config) const {
        config["lr"] = lr;
        config["beta1"] = beta1;
        config["beta2"] = beta2;
        config["epsilon"] = epsilon;
        config["batch"] = batch;
        config["epochs"] = epochs;
        config["temperature"] = temperature;
        config["weight_convention"] = weight_convention;
        config["seed"] = seed;
        config["threads"] = threads;
    }
};

void record_stack(json& config, const StackFlags& flags) {
    config["depth"] = flags.depth;
    config["hidden"] = flags.hidden;
    config["bidirectional"] = flags.bidirectional;
    config["dropout"] = flags.dropout;
}

int cmd_gen_synthetic(const std::string& manifest_path, const SyntheticCorpusConfig& corpus_cfg,
                      double fidelity, double confusion_temperature, const std::string& out,
                      const std::string& posteriors_out) {
    RunManifest manifest("gen-synthetic");
    manifest.config() = {{"classes", corpus_cfg.num_classes},
                         {"images_per_class", corpus_cfg.images_per_class},
                         {"subjects", corpus_cfg.subjects},
                         {"timesteps", corpus_cfg.timesteps},
                         {"channels", corpus_cfg.channels},
                         {"noise", corpus_cfg.noise_sigma},
                         {"fidelity", fidelity},
                         {"confusion_temperature", confusion_temperature},
                         {"seed", corpus_cfg.seed},
                         {"out", out},
                         {"posteriors_out", posteriors_out}};

    Corpus corpus = generate_synthetic_corpus(corpus_cfg);
    write_corpus(corpus, out);

    SyntheticTeacherConfig teacher_cfg;
    teacher_cfg.num_classes = corpus_cfg.num_classes;
    teacher_cfg.fidelity = fidelity;
    teacher_cfg.confusion_temperature = confusion_temperature;
    teacher_cfg.seed = derive_seed(corpus_cfg.seed, 0x7e11u);
    SyntheticTeacher teacher(teacher_cfg);
    save_posteriors(posterior_table_for_corpus(corpus, teacher), posteriors_out);

    manifest.add_output("corpus", out);
    manifest.add_output("posteriors", posteriors_out);
    manifest.results() = {{"samples", corpus.samples.size()},
                          {"classes", corpus.num_classes},
                          {"subjects", corpus.num_subjects}};
    manifest.write(manifest_path);

    std::cout << "wrote " << corpus.samples.size() << " samples to " << out << "\n";
    std::cout << "wrote posterior manifest to " << posteriors_out << "\n";
    return 0;
}

int cmd_train(const std::string& manifest_path, const std::string& mode_name,
              const std::string& corpus_path, const std::string& posteriors_path,
              const StackFlags& stack_flags, const OptimFlags& optim, double split_ratio,
              const std::string& out) {
    RunManifest manifest("train");
    manifest.config()["mode"] = mode_name;
    manifest.config()["corpus"] = corpus_path;
    manifest.config()["posteriors"] = posteriors_path;
    manifest.config()["split_ratio"] = split_ratio;
    manifest.config()["out"] = out;
    record_stack(manifest.config(), stack_flags);
    optim.record(manifest.config());

    const TrainMode mode = parse_mode(mode_name);
    Corpus corpus = read_corpus(corpus_path);
    manifest.add_input("corpus", corpus_path);
    if (corpus.samples.empty()) throw DataError("train: corpus is empty");

    PosteriorTable posteriors;
    if (mode_needs_posteriors(mode)) {
        posteriors = load_posteriors(posteriors_path);
        manifest.add_input("posteriors", posteriors_path);
    }
    const std::size_t num_classes =
        mode_needs_posteriors(mode) ? posteriors.num_classes : corpus.num_classes;

    SplitPlan plan = grouped_split(corpus, split_ratio, derive_seed(optim.seed, 0x5e17u));
    Corpus train_part = select_by_images(corpus, plan.train_image_ids);
    Corpus test_part = select_by_images(corpus, plan.test_image_ids);

    StackConfig stack_cfg = stack_flags.to_config(num_classes, corpus.samples[0].signal.cols());
    TrainConfig train_cfg = optim.to_config(mode);
    LstmStack stack = init_stack(stack_cfg, derive_seed(optim.seed, 0x57a2u));
    AdamState adam = make_adam_state(stack);

    TrainLog log = fit(train_part, mode_needs_posteriors(mode) ? &posteriors : nullptr, stack,
                       adam, train_cfg, &test_part);
    for (std::size_t e = 0; e < log.epochs.size(); ++e)
        std::cout << "epoch " << (e + 1) << "  loss " << log.epochs[e].train_loss
                  << "  test_accuracy " << log.epochs[e].test_accuracy << "\n";

    save_checkpoint(out, stack, &adam, train_cfg.epochs, train_cfg.digest());
    manifest.add_output("checkpoint", out);

    // Deterministic columns only, so a re-run with the same flags reproduces
    // the file byte for byte.
    const std::string log_path = out + ".trainlog.tsv";
    {
        std::ofstream log_out(log_path);
        log_out << "epoch\ttrain_loss\ttest_accuracy\n";
        char buf[64];
        for (std::size_t e = 0; e < log.epochs.size(); ++e) {
            std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\n", e + 1,
                          log.epochs[e].train_loss, log.epochs[e].test_accuracy);
            log_out << buf;
        }
    }
    manifest.add_output("trainlog", log_path);

    manifest.results() = {{"train_samples", train_part.samples.size()},
                          {"test_samples", test_part.samples.size()},
                          {"final_train_loss", log.epochs.back().train_loss},
                          {"final_test_accuracy", log.epochs.back().test_accuracy},
                          {"label_reads", log.label_reads},
                          {"posterior_reads", log.posterior_reads},
                          {"train_log_digest", hex64(log.digest())}};
    manifest.write(manifest_path);

    std::cout << "final test accuracy " << log.epochs.back().test_accuracy << "\n";
    std::cout << "label_reads=" << log.label_reads << " posterior_reads=" << log.posterior_reads
              << "\n";
    std::cout << "checkpoint written to " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& manifest_path, const std::string& checkpoint_path,
             const std::string& corpus_path) {
    RunManifest manifest("eval");
    manifest.config() = {{"checkpoint", checkpoint_path}, {"corpus", corpus_path}};
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    Corpus corpus = read_corpus(corpus_path);
    manifest.add_input("checkpoint", checkpoint_path);
    manifest.add_input("corpus", corpus_path);

    const double accuracy = evaluate(corpus, ckpt.stack);
    manifest.results() = {{"accuracy", accuracy}, {"samples", corpus.samples.size()}};
    manifest.write(manifest_path);
    std::cout << "accuracy " << accuracy << "\n";
    return 0;
}

int cmd_extract(const std::string& manifest_path, const std::string& checkpoint_path,
                const std::string& corpus_path, const std::string& out, std::size_t window,
                std::size_t stride) {
    RunManifest manifest("extract");
    manifest.config() = {{"checkpoint", checkpoint_path},
                         {"corpus", corpus_path},
                         {"out", out},
                         {"window", window},
                         {"stride", stride}};
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    Corpus corpus = read_corpus(corpus_path);
    manifest.add_input("checkpoint", checkpoint_path);
    manifest.add_input("corpus", corpus_path);

    std::optional<WindowSpec> spec;
    if (window > 0) spec = WindowSpec{window, stride};
    FeatureSet features = extract_features(corpus, ckpt.stack, spec);
    write_features(features, out);
    manifest.add_output("features", out);
    manifest.results() = {{"vectors", features.rows.size()}, {"dim", features.dim}};
    manifest.write(manifest_path);
    std::cout << "wrote " << features.rows.size() << " feature vectors (dim " << features.dim
              << ") to " << out << "\n";
    return 0;
}

int cmd_unseen(const std::string& manifest_path, const std::string& corpus_path,
               const std::string& posteriors_path, const std::vector<std::uint32_t>& holdout,
               const StackFlags& stack_flags, const OptimFlags& optim,
               const std::string& classifier, std::size_t window, std::size_t stride,
               double fit_ratio, std::size_t knn_k, double svm_reg, std::size_t svm_epochs) {
    RunManifest manifest("unseen");
    manifest.config()["corpus"] = corpus_path;
    manifest.config()["posteriors"] = posteriors_path;
    manifest.config()["holdout_classes"] = holdout;
    manifest.config()["classifier"] = classifier;
    manifest.config()["window"] = window;
    manifest.config()["stride"] = stride;
    manifest.config()["fit_ratio"] = fit_ratio;
    manifest.config()["knn_k"] = knn_k;
    manifest.config()["svm_reg"] = svm_reg;
    manifest.config()["svm_epochs"] = svm_epochs;
    record_stack(manifest.config(), stack_flags);
    optim.record(manifest.config());

    Corpus corpus = read_corpus(corpus_path);
    PosteriorTable posteriors = load_posteriors(posteriors_path);
    manifest.add_input("corpus", corpus_path);
    manifest.add_input("posteriors", posteriors_path);
    if (corpus.samples.empty()) throw DataError("unseen: corpus is empty");

    HoldoutResult split = holdout_classes(corpus, {holdout.begin(), holdout.end()});
    StackConfig stack_cfg =
        stack_flags.to_config(posteriors.num_classes, corpus.samples[0].signal.cols());
    TrainConfig train_cfg = optim.to_config(TrainMode::unsupervised_kd);

    UnseenEvalConfig eval_cfg;
    eval_cfg.window = {window, stride};
    eval_cfg.classifier = classifier == "svm" ? ClassifierKind::svm : ClassifierKind::knn;
    eval_cfg.fit_ratio = fit_ratio;
    eval_cfg.knn_k = knn_k;
    eval_cfg.svm_reg = svm_reg;
    eval_cfg.svm_epochs = svm_epochs;

    UnseenEvalResult result =
        unseen_category_eval(split.seen, split.unseen, posteriors, stack_cfg, train_cfg, eval_cfg);
    manifest.results() = {{"accuracy", result.accuracy},
                          {"eval_samples", result.eval_samples},
                          {"label_reads", result.train_log.label_reads}};
    manifest.write(manifest_path);
    std::cout << "unseen-category accuracy " << result.accuracy << " over " << result.eval_samples
              << " held-out signals\n";
    return 0;
}

int cmd_gradcheck(const std::string& manifest_path, std::uint64_t seed, double tolerance,
                  double epsilon) {
    RunManifest manifest("gradcheck");
    manifest.config() = {{"seed", seed}, {"tolerance", tolerance}, {"epsilon", epsilon}};

    GradCheckOptions opt;
    opt.tolerance = tolerance;
    opt.epsilon = epsilon;
    std::vector<GradCheckCase> cases = run_gradient_checks(seed, opt);
    std::size_t failed = 0;
    for (const GradCheckCase& c : cases) {
        std::cout << (c.pass ? "ok   " : "FAIL ") << c.name << "  (" << c.checked
                  << " params, worst " << c.worst_ratio << " of allowance)\n";
        if (!c.pass) ++failed;
    }
    manifest.results() = {{"cases", cases.size()}, {"failed", failed}};
    manifest.write(manifest_path);
    if (failed != 0) {
        std::cout << failed << " case(s) exceeded tolerance " << tolerance << "\n";
        return 1;
    }
    std::cout << "all gradients within " << tolerance << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"teacher-student distillation for multichannel time series"};
    app.require_subcommand(1);

    // gen-synthetic
    auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic corpus plus teacher posteriors");
    SyntheticCorpusConfig corpus_cfg;
    double fidelity = 0.85, confusion_temperature = 1.0;
    std::string gen_out, gen_posteriors_out, gen_manifest;
    gen->add_option("--classes", corpus_cfg.num_classes)->check(CLI::PositiveNumber);
    gen->add_option("--images-per-class", corpus_cfg.images_per_class)->check(CLI::PositiveNumber);
    gen->add_option("--subjects", corpus_cfg.subjects)->check(CLI::PositiveNumber);
    gen->add_option("--timesteps", corpus_cfg.timesteps)->check(CLI::PositiveNumber);
    gen->add_option("--channels", corpus_cfg.channels)->check(CLI::PositiveNumber);
    gen->add_option("--noise", corpus_cfg.noise_sigma, "noise standard deviation")
        ->check(CLI::NonNegativeNumber);
    gen->add_option("--fidelity", fidelity, "teacher mass on the true class")
        ->check(CLI::Range(1e-9, 1.0));
    gen->add_option("--confusion-temperature", confusion_temperature)->check(CLI::PositiveNumber);
    gen->add_option("--seed", corpus_cfg.seed);
    gen->add_option("--out", gen_out, "corpus container path")->required();
    gen->add_option("--posteriors-out", gen_posteriors_out, "posterior manifest path");
    gen->add_option("--manifest", gen_manifest, "run manifest path");

    // train
    auto* train = app.add_subcommand("train", "train a student on a corpus with a grouped split");
    std::string train_mode, train_corpus, train_posteriors, train_out, train_manifest;
    StackFlags train_stack;
    OptimFlags train_optim;
    double split_ratio = 0.7;
    train->add_option("--mode", train_mode, "supervised | unsupervised | hard | l2")
        ->required()
        ->check(CLI::IsMember({"supervised", "unsupervised", "hard", "l2"}));
    train->add_option("--corpus", train_corpus)->required();
    train->add_option("--posteriors", train_posteriors, "teacher posterior manifest");
    train->add_option("--split-ratio", split_ratio)->check(CLI::Range(1e-6, 0.999999));
    train->add_option("--out", train_out, "checkpoint path")->required();
    train->add_option("--manifest", train_manifest, "run manifest path");
    train_stack.attach(train);
    train_optim.attach(train, /*epochs_required=*/true);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
    std::string eval_checkpoint, eval_corpus, eval_manifest;
    eval_cmd->add_option("--checkpoint", eval_checkpoint)->required();
    eval_cmd->add_option("--corpus", eval_corpus)->required();
    eval_cmd->add_option("--manifest", eval_manifest, "run manifest path");

    // extract
    auto* extract = app.add_subcommand("extract", "export feature vectors as tab-separated text");
    std::string ext_checkpoint, ext_corpus, ext_out, ext_manifest;
    std::size_t ext_window = 0, ext_stride = 100;
    extract->add_option("--checkpoint", ext_checkpoint)->required();
    extract->add_option("--corpus", ext_corpus)->required();
    extract->add_option("--out", ext_out)->required();
    extract->add_option("--window", ext_window, "excerpt width (0 = whole signal)");
    extract->add_option("--stride", ext_stride)->check(CLI::PositiveNumber);
    extract->add_option("--manifest", ext_manifest, "run manifest path");

    // unseen
    auto* unseen = app.add_subcommand("unseen", "unseen-category evaluation with excerpt voting");
    std::string uns_corpus, uns_posteriors, uns_classifier = "knn", uns_manifest;
    std::vector<std::uint32_t> uns_holdout;
    StackFlags uns_stack;
    OptimFlags uns_optim;
    std::size_t uns_window = 32, uns_stride = 16, uns_knn_k = 5, uns_svm_epochs = 60;
    double uns_fit_ratio = 0.5, uns_svm_reg = 1e-3;
    unseen->add_option("--corpus", uns_corpus)->required();
    unseen->add_option("--posteriors", uns_posteriors)->required();
    unseen->add_option("--holdout-classes", uns_holdout, "classes to hold out (comma separated)")
        ->required()
        ->delimiter(',');
    unseen->add_option("--classifier", uns_classifier)->check(CLI::IsMember({"knn", "svm"}));
    unseen->add_option("--window", uns_window)->check(CLI::PositiveNumber);
    unseen->add_option("--stride", uns_stride)->check(CLI::PositiveNumber);
    unseen->add_option("--fit-ratio", uns_fit_ratio)->check(CLI::Range(1e-6, 0.999999));
    unseen->add_option("--knn-k", uns_knn_k)->check(CLI::PositiveNumber);
    unseen->add_option("--svm-reg", uns_svm_reg)->check(CLI::PositiveNumber);
    unseen->add_option("--svm-epochs", uns_svm_epochs)->check(CLI::PositiveNumber);
    unseen->add_option("--manifest", uns_manifest, "run manifest path");
    uns_stack.attach(unseen);
    uns_optim.attach(unseen, /*epochs_required=*/true);

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::uint64_t gc_seed = 0;
    double gc_tolerance = 1e-4, gc_epsilon = 1e-6;
    std::string gc_manifest;
    gradcheck->add_option("--seed", gc_seed);
    gradcheck->add_option("--tolerance", gc_tolerance)->check(CLI::PositiveNumber);
    gradcheck->add_option("--epsilon", gc_epsilon)->check(CLI::PositiveNumber);
    gradcheck->add_option("--manifest", gc_manifest, "run manifest path");

    try {
        app.parse(argc, argv);

        if (gen->parsed()) {
            if (gen_posteriors_out.empty()) gen_posteriors_out = gen_out + ".posteriors.tsv";
            if (gen_manifest.empty()) gen_manifest = default_manifest_path("gen-synthetic", gen_out);
            return cmd_gen_synthetic(gen_manifest, corpus_cfg, fidelity, confusion_temperature,
                                     gen_out, gen_posteriors_out);
        }
        if (train->parsed()) {
            const TrainMode mode = parse_mode(train_mode);
            if (mode_needs_posteriors(mode) && train_posteriors.empty())
                throw CLI::RequiredError("--posteriors (required for mode '" + train_mode + "')");
            if (train_manifest.empty()) train_manifest = default_manifest_path("train", train_out);
            return cmd_train(train_manifest, train_mode, train_corpus, train_posteriors,
                             train_stack, train_optim, split_ratio, train_out);
        }
        if (eval_cmd->parsed()) {
            if (eval_manifest.empty()) eval_manifest = default_manifest_path("eval", "");
            return cmd_eval(eval_manifest, eval_checkpoint, eval_corpus);
        }
        if (extract->parsed()) {
            if (ext_manifest.empty()) ext_manifest = default_manifest_path("extract", ext_out);
            return cmd_extract(ext_manifest, ext_checkpoint, ext_corpus, ext_out, ext_window,
                               ext_stride);
        }
        if (unseen->parsed()) {
            if (uns_manifest.empty()) uns_manifest = default_manifest_path("unseen", "");
            return cmd_unseen(uns_manifest, uns_corpus, uns_posteriors, uns_holdout, uns_stack,
                              uns_optim, uns_classifier, uns_window, uns_stride, uns_fit_ratio,
                              uns_knn_k, uns_svm_reg, uns_svm_epochs);
        }
        if (gradcheck->parsed()) {
            if (gc_manifest.empty()) gc_manifest = default_manifest_path("gradcheck", "");
            return cmd_gradcheck(gc_manifest, gc_seed, gc_tolerance, gc_epsilon);
        }
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // prints help, exit 0
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e); // prints the parse diagnostic
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
