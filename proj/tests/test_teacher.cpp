#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "seqdistill/teacher.hpp"

using namespace seqdistill;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/seqdistill_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

} // namespace

TEST_CASE("posterior manifest round trip preserves full precision") {
    TempFile file("posteriors.tsv");
    PosteriorTable table;
    table.teacher_name = "external-cnn";
    table.num_classes = 3;
    table.rows[0] = {0.1234567890123456, 0.5, 0.3765432109876544};
    table.rows[7] = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    table.rows[42] = {1.0, 0.0, 0.0};
    save_posteriors(table, file.path);

    PosteriorTable loaded = load_posteriors(file.path);
    CHECK(loaded.teacher_name == "external-cnn");
    CHECK(loaded.num_classes == 3);
    CHECK(loaded.rows.size() == 3);
    for (const auto& [id, p] : table.rows) {
        REQUIRE(loaded.contains(id));
        for (std::size_t j = 0; j < p.size(); ++j) CHECK(loaded.at(id)[j] == p[j]);
    }
}

TEST_CASE("load_posteriors accepts comments and validates rows") {
    TempFile file("posteriors_bad_sum.tsv");
    {
        std::ofstream out(file.path);
        out << "# a comment\n";
        out << "0\t0.5 0.5\n";
        out << "1\t0.5 0.3\n";
    }
    CHECK_THROWS_WITH_AS((void)load_posteriors(file.path), doctest::Contains("line 3"),
                         ValidationError);
}

TEST_CASE("load_posteriors reports malformed rows with their line number") {
    TempFile file("posteriors_malformed.tsv");
    {
        std::ofstream out(file.path);
        out << "0\t0.5 0.5\n";
        out << "not_a_number\t0.5 0.5\n";
    }
    CHECK_THROWS_WITH_AS((void)load_posteriors(file.path), doctest::Contains("line 2"), ParseError);

    TempFile file2("posteriors_no_tab.tsv");
    {
        std::ofstream out(file2.path);
        out << "0 0.5 0.5\n";
    }
    CHECK_THROWS_AS((void)load_posteriors(file2.path), ParseError);

    TempFile file4("posteriors_negative_id.tsv");
    {
        std::ofstream out(file4.path);
        out << "-3\t0.5 0.5\n";
    }
    CHECK_THROWS_AS((void)load_posteriors(file4.path), ParseError);

    TempFile file3("posteriors_ragged.tsv");
    {
        std::ofstream out(file3.path);
        out << "0\t0.5 0.5\n";
        out << "1\t0.2 0.3 0.5\n";
    }
    CHECK_THROWS_WITH_AS((void)load_posteriors(file3.path), doctest::Contains("line 2"), ParseError);
}

TEST_CASE("load_posteriors missing file is an io error") {
    CHECK_THROWS_AS((void)load_posteriors("/tmp/seqdistill_does_not_exist.tsv"), IoError);
}

TEST_CASE("load_posteriors rejects duplicate image ids") {
    TempFile file("posteriors_dup.tsv");
    {
        std::ofstream out(file.path);
        out << "3\t0.5 0.5\n";
        out << "3\t0.4 0.6\n";
    }
    CHECK_THROWS_WITH_AS((void)load_posteriors(file.path), doctest::Contains("duplicate"),
                         ValidationError);
}

TEST_CASE("synthetic teacher: fidelity one gives exact one-hot") {
    SyntheticTeacherConfig cfg;
    cfg.num_classes = 4;
    cfg.fidelity = 1.0;
    cfg.seed = 3;
    auto p = synthetic_posterior(2, cfg);
    CHECK(p[2] == 1.0);
    CHECK(p[0] == 0.0);
    CHECK(p[1] == 0.0);
    CHECK(p[3] == 0.0);
}

TEST_CASE("synthetic teacher: fidelity mass and remainder") {
    SyntheticTeacherConfig cfg;
    cfg.num_classes = 4;
    cfg.fidelity = 0.7;
    cfg.seed = 5;
    auto p = synthetic_posterior(1, cfg);
    CHECK(p[1] == doctest::Approx(0.7).epsilon(1e-12));
    double rest = p[0] + p[2] + p[3];
    CHECK(rest == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("synthetic teacher is deterministic per seed") {
    SyntheticTeacherConfig cfg;
    cfg.num_classes = 6;
    cfg.fidelity = 0.8;
    cfg.seed = 11;
    auto a = synthetic_posterior(3, cfg);
    auto b = synthetic_posterior(3, cfg);
    CHECK(a == b);
    cfg.seed = 12;
    auto c = synthetic_posterior(3, cfg);
    CHECK(a != c);
}

TEST_CASE("synthetic teacher posteriors are simplex points with correct argmax") {
    for (std::uint64_t seed : {1ull, 9ull, 77ull}) {
        for (double fidelity : {0.51, 0.7, 0.85, 0.99}) {
            SyntheticTeacherConfig cfg;
            cfg.num_classes = 8;
            cfg.fidelity = fidelity;
            cfg.seed = seed;
            SyntheticTeacher teacher(cfg);
            for (std::uint32_t c = 0; c < 8; ++c) {
                auto p = teacher.posterior(c);
                double sum = 0.0;
                std::size_t argmax = 0;
                for (std::size_t j = 0; j < p.size(); ++j) {
                    CHECK(p[j] >= 0.0);
                    sum += p[j];
                    if (p[j] > p[argmax]) argmax = j;
                }
                CHECK(std::abs(sum - 1.0) <= 1e-6);
                CHECK(argmax == c);
            }
        }
    }
}

TEST_CASE("synthetic teacher rejects invalid configuration") {
    SyntheticTeacherConfig cfg;
    cfg.num_classes = 4;
    cfg.fidelity = 0.0;
    CHECK_THROWS_AS(SyntheticTeacher{cfg}, DomainError);
    cfg.fidelity = 1.2;
    CHECK_THROWS_AS(SyntheticTeacher{cfg}, DomainError);
    cfg.fidelity = 0.8;
    cfg.confusion_temperature = 0.0;
    CHECK_THROWS_AS(SyntheticTeacher{cfg}, DomainError);
    cfg.confusion_temperature = 1.0;
    SyntheticTeacher teacher(cfg);
    CHECK_THROWS_AS((void)teacher.posterior(4), DomainError);
}
