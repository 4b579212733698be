#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "seqdistill/errors.hpp"
#include "seqdistill/losses.hpp"
#include "seqdistill/matrix.hpp"
#include "seqdistill/rng.hpp"

namespace seqdistill {

// Teacher posteriors keyed by image id. Immutable after load; the ordered map
// makes writes deterministic.
struct PosteriorTable {
    std::string teacher_name;
    std::size_t num_classes = 0;
    std::map<std::uint32_t, std::vector<double>> rows;

    const std::vector<double>& at(std::uint32_t image_id) const {
        auto it = rows.find(image_id);
        if (it == rows.end())
            throw DataError("PosteriorTable: no posterior for image " + std::to_string(image_id));
        return it->second;
    }
    bool contains(std::uint32_t image_id) const { return rows.count(image_id) != 0; }
};

// Manifest format: UTF-8 text, one record per line,
//   <image_id> TAB <p_0> <p_1> ... <p_{K-1}>
// with '#' starting a comment line. A "# teacher: <name>" comment is written
// and recognized on load.
inline PosteriorTable load_posteriors(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_posteriors: cannot open " + path);

    PosteriorTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string tag = "# teacher: ";
            if (line.rfind(tag, 0) == 0) table.teacher_name = line.substr(tag.size());
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError("load_posteriors: line " + std::to_string(line_no) +
                             ": missing tab separator");
        std::uint32_t image_id = 0;
        const std::string id_token = line.substr(0, tab);
        try {
            // stoul tolerates signs and whitespace; the format does not.
            if (id_token.empty() ||
                id_token.find_first_not_of("0123456789") != std::string::npos)
                throw std::invalid_argument("non-digit characters");
            unsigned long parsed = std::stoul(id_token);
            if (parsed > 0xffffffffUL) throw std::out_of_range("exceeds u32");
            image_id = static_cast<std::uint32_t>(parsed);
        } catch (const std::exception&) {
            throw ParseError("load_posteriors: line " + std::to_string(line_no) +
                             ": bad image id '" + id_token + "'");
        }

        std::istringstream probs(line.substr(tab + 1));
        std::vector<double> p;
        std::string token;
        while (probs >> token) {
            try {
                std::size_t used = 0;
                p.push_back(std::stod(token, &used));
                if (used != token.size()) throw std::invalid_argument("trailing characters");
            } catch (const std::exception&) {
                throw ParseError("load_posteriors: line " + std::to_string(line_no) +
                                 ": bad probability '" + token + "'");
            }
        }
        if (p.empty())
            throw ParseError("load_posteriors: line " + std::to_string(line_no) + ": no probabilities");
        if (table.num_classes == 0) table.num_classes = p.size();
        if (p.size() != table.num_classes)
            throw ParseError("load_posteriors: line " + std::to_string(line_no) + ": expected " +
                             std::to_string(table.num_classes) + " probabilities, got " +
                             std::to_string(p.size()));

        double sum = 0.0;
        for (double x : p) {
            if (!(x >= 0.0) || !std::isfinite(x))
                throw ValidationError("load_posteriors: line " + std::to_string(line_no) +
                                      ": negative or non-finite probability");
            sum += x;
        }
        if (std::abs(sum - 1.0) > kSimplexTolerance)
            throw ValidationError("load_posteriors: line " + std::to_string(line_no) +
                                  " (image " + std::to_string(image_id) + "): probabilities sum to " +
                                  std::to_string(sum));
        if (!table.rows.emplace(image_id, std::move(p)).second)
            throw ValidationError("load_posteriors: line " + std::to_string(line_no) +
                                  ": duplicate image id " + std::to_string(image_id));
    }
    return table;
}

inline void save_posteriors(const PosteriorTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("save_posteriors: cannot open " + path + " for writing");
    if (!table.teacher_name.empty()) out << "# teacher: " << table.teacher_name << "\n";
    char buf[40];
    for (const auto& [image_id, p] : table.rows) {
        out << image_id << '\t';
        for (std::size_t j = 0; j < p.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", p[j]);
            out << buf << (j + 1 < p.size() ? " " : "");
        }
        out << '\n';
    }
    if (!out) throw IoError("save_posteriors: write failed for " + path);
}

// Stand-in for an external vision teacher. `fidelity` is the probability
// mass placed on the true class; the remainder spreads over the other
// classes proportionally to exp(similarity / confusion_temperature) against
// a seed-deterministic symmetric class-similarity structure. That structure
// is what gives the posteriors transferable inter-class information; plain
// noise would carry none.
struct SyntheticTeacherConfig {
    std::size_t num_classes = 8;
    double fidelity = 0.85;
    double confusion_temperature = 1.0;
    std::uint64_t seed = 0;
};

class SyntheticTeacher {
  public:
    explicit SyntheticTeacher(const SyntheticTeacherConfig& cfg) : cfg_(cfg) {
        if (cfg.num_classes == 0)
            throw DomainError("SyntheticTeacher: num_classes must be positive");
        if (!(cfg.fidelity > 0.0 && cfg.fidelity <= 1.0))
            throw DomainError("SyntheticTeacher: fidelity must be in (0,1]");
        if (!(cfg.confusion_temperature > 0.0))
            throw DomainError("SyntheticTeacher: confusion_temperature must be positive");
        similarity_ = Matrix(cfg.num_classes, cfg.num_classes);
        Rng rng(derive_seed(cfg.seed, 0x7eacu));
        for (std::size_t a = 0; a < cfg.num_classes; ++a)
            for (std::size_t b = a + 1; b < cfg.num_classes; ++b) {
                const double s = rng.normal();
                similarity_(a, b) = s;
                similarity_(b, a) = s;
            }
    }

    std::vector<double> posterior(std::uint32_t true_class) const {
        if (true_class >= cfg_.num_classes)
            throw DomainError("SyntheticTeacher: class " + std::to_string(true_class) +
                              " out of range for " + std::to_string(cfg_.num_classes) + " classes");
        std::vector<double> p(cfg_.num_classes, 0.0);
        p[true_class] = cfg_.fidelity;
        if (cfg_.num_classes == 1 || cfg_.fidelity == 1.0) {
            p[true_class] = 1.0;
            return p;
        }
        double sum = 0.0;
        for (std::size_t k = 0; k < cfg_.num_classes; ++k)
            if (k != true_class) sum += std::exp(similarity_(k, true_class) / cfg_.confusion_temperature);
        for (std::size_t k = 0; k < cfg_.num_classes; ++k)
            if (k != true_class)
                p[k] = (1.0 - cfg_.fidelity) *
                       std::exp(similarity_(k, true_class) / cfg_.confusion_temperature) / sum;
        return p;
    }

    const SyntheticTeacherConfig& config() const { return cfg_; }

  private:
    SyntheticTeacherConfig cfg_;
    Matrix similarity_;
};

inline std::vector<double> synthetic_posterior(std::uint32_t true_class,
                                               const SyntheticTeacherConfig& cfg) {
    return SyntheticTeacher(cfg).posterior(true_class);
}

} // namespace seqdistill
