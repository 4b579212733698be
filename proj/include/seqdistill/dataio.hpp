#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "seqdistill/errors.hpp"
#include "seqdistill/matrix.hpp"
#include "seqdistill/rng.hpp"

namespace seqdistill {

// One recorded signal: (timesteps x channels) matrix plus identity. All six
// subjects' recordings of one image share that image's id.
struct EegSample {
    Matrix signal;
    std::uint32_t class_id = 0;
    std::uint32_t subject_id = 0;
    std::uint32_t image_id = 0;
};

struct Corpus {
    std::vector<EegSample> samples;
    std::uint32_t num_classes = 0;
    std::uint32_t num_subjects = 0;
};

// Image-level train/test partition. Disjoint by construction; the split is
// grouped, so every subject's recording of one image lands on the same side.
struct SplitPlan {
    std::vector<std::uint32_t> train_image_ids; // sorted
    std::vector<std::uint32_t> test_image_ids;  // sorted
    double ratio = 0.0;
};

// Stratified grouped split: per class, image ids are shuffled and the first
// round(ratio * n) go to the training side. Deterministic per seed.
inline SplitPlan grouped_split(const Corpus& corpus, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0))
        throw DomainError("grouped_split: ratio must be in (0,1), got " + std::to_string(ratio));

    std::map<std::uint32_t, std::set<std::uint32_t>> images_by_class;
    for (const EegSample& s : corpus.samples) images_by_class[s.class_id].insert(s.image_id);

    SplitPlan plan;
    plan.ratio = ratio;
    Rng rng(derive_seed(seed, 0x59717u));
    for (const auto& [class_id, image_set] : images_by_class) {
        if (image_set.size() < 2)
            throw SplitError("grouped_split: class " + std::to_string(class_id) + " has only " +
                             std::to_string(image_set.size()) + " image(s), cannot split");
        std::vector<std::uint32_t> images(image_set.begin(), image_set.end());
        rng.shuffle(images);
        auto n_train = static_cast<std::size_t>(
            std::llround(ratio * static_cast<double>(images.size())));
        n_train = std::clamp<std::size_t>(n_train, 1, images.size() - 1);
        plan.train_image_ids.insert(plan.train_image_ids.end(), images.begin(),
                                    images.begin() + static_cast<std::ptrdiff_t>(n_train));
        plan.test_image_ids.insert(plan.test_image_ids.end(),
                                   images.begin() + static_cast<std::ptrdiff_t>(n_train),
                                   images.end());
    }
    std::sort(plan.train_image_ids.begin(), plan.train_image_ids.end());
    std::sort(plan.test_image_ids.begin(), plan.test_image_ids.end());
    return plan;
}

// Materializes the subset of a corpus whose image ids are in `image_ids`
// (which must be sorted).
inline Corpus select_by_images(const Corpus& corpus, std::span<const std::uint32_t> image_ids) {
    Corpus out;
    out.num_classes = corpus.num_classes;
    out.num_subjects = corpus.num_subjects;
    for (const EegSample& s : corpus.samples)
        if (std::binary_search(image_ids.begin(), image_ids.end(), s.image_id))
            out.samples.push_back(s);
    return out;
}

struct HoldoutResult {
    Corpus seen;   // classes remapped to 0..n_seen-1
    Corpus unseen; // original class ids kept
    std::map<std::uint32_t, std::uint32_t> seen_class_map; // original -> remapped
};

// Partitions a corpus by class membership for the unseen-category protocol.
inline HoldoutResult holdout_classes(const Corpus& corpus, const std::set<std::uint32_t>& held_out) {
    if (held_out.empty())
        throw DomainError("holdout_classes: held-out set must be non-empty");
    std::set<std::uint32_t> present;
    for (const EegSample& s : corpus.samples) present.insert(s.class_id);
    for (std::uint32_t c : held_out)
        if (!present.count(c))
            throw DomainError("holdout_classes: class " + std::to_string(c) + " not in corpus");

    HoldoutResult result;
    std::uint32_t next_id = 0;
    for (std::uint32_t c : present)
        if (!held_out.count(c)) result.seen_class_map[c] = next_id++;
    if (result.seen_class_map.empty())
        throw DomainError("holdout_classes: held-out set covers every class");

    result.seen.num_classes = next_id;
    result.seen.num_subjects = corpus.num_subjects;
    result.unseen.num_classes = corpus.num_classes;
    result.unseen.num_subjects = corpus.num_subjects;
    for (const EegSample& s : corpus.samples) {
        if (held_out.count(s.class_id)) {
            result.unseen.samples.push_back(s);
        } else {
            EegSample remapped = s;
            remapped.class_id = result.seen_class_map.at(s.class_id);
            result.seen.samples.push_back(remapped);
        }
    }
    return result;
}

// Overlapping excerpts of `width` timesteps at the given stride. Windows
// start at 0, stride, 2*stride, ...; when the last full window stops short
// of the sequence end an extra end-aligned window is appended, so the union
// always covers every timestep.
inline std::vector<Matrix> window_excerpts(const Matrix& signal, std::size_t width,
                                           std::size_t stride) {
    const std::size_t steps = signal.rows();
    if (width == 0 || width > steps)
        throw DomainError("window_excerpts: width " + std::to_string(width) +
                          " invalid for " + std::to_string(steps) + " timesteps");
    if (stride == 0) throw DomainError("window_excerpts: stride must be positive");

    std::vector<std::size_t> starts;
    for (std::size_t start = 0; start + width <= steps; start += stride) starts.push_back(start);
    if (starts.back() + width < steps) starts.push_back(steps - width);

    std::vector<Matrix> windows;
    windows.reserve(starts.size());
    for (std::size_t start : starts) {
        Matrix w(width, signal.cols());
        for (std::size_t t = 0; t < width; ++t)
            std::copy(signal.row(start + t).begin(), signal.row(start + t).end(), w.row(t).begin());
        windows.push_back(std::move(w));
    }
    return windows;
}

struct SyntheticCorpusConfig {
    std::size_t num_classes = 8;
    std::size_t images_per_class = 60;
    std::size_t subjects = 1;
    std::size_t timesteps = 64;
    std::size_t channels = 8;
    double noise_sigma = 0.25;
    std::uint64_t seed = 0;
};

// Synthetic multichannel corpus: each class owns a fixed set of sinusoidal
// components (random channel mixing, frequency, phase); each image perturbs
// the phases; each subject contributes a gain and additive Gaussian noise.
// Values are quantized to float32 at generation time so the in-memory corpus
// matches the on-disk container exactly.
inline Corpus generate_synthetic_corpus(const SyntheticCorpusConfig& cfg) {
    if (cfg.num_classes == 0 || cfg.images_per_class == 0 || cfg.subjects == 0 ||
        cfg.timesteps == 0 || cfg.channels == 0)
        throw DomainError("generate_synthetic_corpus: all counts must be positive");
    if (cfg.noise_sigma < 0.0)
        throw DomainError("generate_synthetic_corpus: noise_sigma must be non-negative");

    constexpr std::size_t kComponents = 3;
    struct Component {
        std::vector<double> mixing; // per channel
        double omega;
        double phase;
    };

    Rng rng(derive_seed(cfg.seed, 0xc025u));

    std::vector<std::vector<Component>> class_components(cfg.num_classes);
    for (auto& comps : class_components) {
        comps.resize(kComponents);
        for (Component& comp : comps) {
            comp.mixing.resize(cfg.channels);
            for (double& m : comp.mixing) m = rng.normal(0.0, 1.0);
            const double max_cycles = std::max(2.0, static_cast<double>(cfg.timesteps) / 8.0);
            const double cycles = rng.uniform(0.5, max_cycles);
            comp.omega = 2.0 * 3.14159265358979323846 * cycles / static_cast<double>(cfg.timesteps);
            comp.phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        }
    }
    std::vector<double> subject_gain(cfg.subjects);
    for (double& g : subject_gain) g = rng.uniform(0.7, 1.3);

    const double amp = 1.0 / std::sqrt(static_cast<double>(kComponents));
    Corpus corpus;
    corpus.num_classes = static_cast<std::uint32_t>(cfg.num_classes);
    corpus.num_subjects = static_cast<std::uint32_t>(cfg.subjects);
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        for (std::size_t img = 0; img < cfg.images_per_class; ++img) {
            std::array<double, kComponents> jitter{};
            for (double& j : jitter) j = rng.uniform(-0.5, 0.5);
            const auto image_id = static_cast<std::uint32_t>(c * cfg.images_per_class + img);
            for (std::size_t subj = 0; subj < cfg.subjects; ++subj) {
                EegSample sample;
                sample.class_id = static_cast<std::uint32_t>(c);
                sample.subject_id = static_cast<std::uint32_t>(subj);
                sample.image_id = image_id;
                sample.signal = Matrix(cfg.timesteps, cfg.channels);
                for (std::size_t t = 0; t < cfg.timesteps; ++t) {
                    auto row = sample.signal.row(t);
                    for (std::size_t k = 0; k < kComponents; ++k) {
                        const Component& comp = class_components[c][k];
                        const double wave =
                            amp * std::sin(comp.omega * static_cast<double>(t) + comp.phase + jitter[k]);
                        for (std::size_t ch = 0; ch < cfg.channels; ++ch)
                            row[ch] += comp.mixing[ch] * wave;
                    }
                    for (std::size_t ch = 0; ch < cfg.channels; ++ch) {
                        double v = subject_gain[subj] * row[ch];
                        if (cfg.noise_sigma > 0.0) v += rng.normal(0.0, cfg.noise_sigma);
                        row[ch] = static_cast<double>(static_cast<float>(v));
                    }
                }
                corpus.samples.push_back(std::move(sample));
            }
        }
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Corpus container: little-endian binary.
//   magic "EEGC" | version u16 = 1 | n_samples u32
//   per sample: timesteps u32 | channels u32 | class_id u32 | subject_id u32 |
//               image_id u32 | timesteps*channels float32, row-major
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class ByteReader {
  public:
    ByteReader(const std::string& bytes, const std::string& what)
        : bytes_(bytes), what_(what) {}

    std::uint16_t u16() { return static_cast<std::uint16_t>(u8() | (u8() << 8)); }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string raw(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t position() const { return pos_; }
    bool exhausted() const { return pos_ == bytes_.size(); }

  private:
    std::uint32_t u8() {
        need(1);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    void need(std::size_t n) {
        if (pos_ + n > bytes_.size())
            throw FormatError(what_ + ": truncated at byte offset " + std::to_string(pos_) +
                              " (need " + std::to_string(n) + " more, have " +
                              std::to_string(bytes_.size() - pos_) + ")");
    }
    const std::string& bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline std::string slurp_file(const std::string& path, const std::string& who) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(who + ": cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void spill_file(const std::string& path, const std::string& bytes, const std::string& who) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(who + ": cannot open " + path + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(who + ": write failed for " + path);
}

} // namespace detail

inline constexpr char kCorpusMagic[4] = {'E', 'E', 'G', 'C'};
inline constexpr std::uint16_t kCorpusVersion = 1;

inline void write_corpus(const Corpus& corpus, const std::string& path) {
    std::string out;
    out.append(kCorpusMagic, 4);
    detail::put_u16(out, kCorpusVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(corpus.samples.size()));
    for (const EegSample& s : corpus.samples) {
        detail::put_u32(out, static_cast<std::uint32_t>(s.signal.rows()));
        detail::put_u32(out, static_cast<std::uint32_t>(s.signal.cols()));
        detail::put_u32(out, s.class_id);
        detail::put_u32(out, s.subject_id);
        detail::put_u32(out, s.image_id);
        for (double v : s.signal.values()) detail::put_f32(out, static_cast<float>(v));
    }
    detail::spill_file(path, out, "write_corpus");
}

inline Corpus read_corpus(const std::string& path) {
    const std::string bytes = detail::slurp_file(path, "read_corpus");
    detail::ByteReader reader(bytes, "read_corpus");
    if (reader.raw(4) != std::string(kCorpusMagic, 4))
        throw FormatError("read_corpus: bad magic in " + path);
    const std::uint16_t version = reader.u16();
    if (version != kCorpusVersion)
        throw FormatError("read_corpus: unsupported version " + std::to_string(version));

    Corpus corpus;
    const std::uint32_t n_samples = reader.u32();
    corpus.samples.reserve(n_samples);
    std::uint32_t max_class = 0, max_subject = 0;
    for (std::uint32_t i = 0; i < n_samples; ++i) {
        EegSample s;
        const std::uint32_t timesteps = reader.u32();
        const std::uint32_t channels = reader.u32();
        if (timesteps == 0 || channels == 0)
            throw FormatError("read_corpus: sample " + std::to_string(i) +
                              " has empty shape at byte offset " + std::to_string(reader.position()));
        s.class_id = reader.u32();
        s.subject_id = reader.u32();
        s.image_id = reader.u32();
        s.signal = Matrix(timesteps, channels);
        for (double& v : s.signal.values()) v = static_cast<double>(reader.f32());
        max_class = std::max(max_class, s.class_id);
        max_subject = std::max(max_subject, s.subject_id);
        corpus.samples.push_back(std::move(s));
    }
    if (!reader.exhausted())
        throw FormatError("read_corpus: trailing bytes at offset " + std::to_string(reader.position()));
    // The container does not carry class/subject counts; infer them.
    corpus.num_classes = corpus.samples.empty() ? 0 : max_class + 1;
    corpus.num_subjects = corpus.samples.empty() ? 0 : max_subject + 1;
    return corpus;
}

} // namespace seqdistill
