#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>

#include <json.hpp>

#ifndef SEQDISTILL_CLI_PATH
#error "SEQDISTILL_CLI_PATH must be defined"
#endif

namespace {

const std::string kCli = SEQDISTILL_CLI_PATH;
const std::string kDir = "/tmp/seqdistill_cli_test";

int run(const std::string& args) {
    const std::string command = kCli + " " + args + " >/dev/null 2>&1";
    const int status = std::system(command.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool exists(const std::string& path) { return std::ifstream(path).good(); }

struct Workspace {
    Workspace() {
        if (std::system(("rm -rf " + kDir + " && mkdir -p " + kDir).c_str()) != 0)
            throw std::runtime_error("cannot prepare " + kDir);
    }
};

const std::string kGenFlags =
    " --classes 3 --images-per-class 6 --subjects 1 --timesteps 12 --channels 3"
    " --noise 0.1 --fidelity 0.9 --seed 5 ";

} // namespace

TEST_CASE("gen-synthetic writes corpus, posteriors, and manifest; reruns are byte-identical") {
    Workspace ws;
    const std::string corpus = kDir + "/corpus.eegc";
    CHECK(run("gen-synthetic" + kGenFlags + "--out " + corpus) == 0);
    CHECK(exists(corpus));
    CHECK(exists(corpus + ".posteriors.tsv"));
    CHECK(exists(corpus + ".manifest.json"));

    const std::string first = slurp(corpus);
    const std::string first_posteriors = slurp(corpus + ".posteriors.tsv");
    const std::string first_manifest = slurp(corpus + ".manifest.json");
    CHECK(run("gen-synthetic" + kGenFlags + "--out " + corpus) == 0);
    CHECK(slurp(corpus) == first);
    CHECK(slurp(corpus + ".posteriors.tsv") == first_posteriors);
    CHECK(slurp(corpus + ".manifest.json") == first_manifest);

    auto manifest = nlohmann::json::parse(first_manifest);
    CHECK(manifest["command"] == "gen-synthetic");
    CHECK(manifest["results"]["samples"] == 18);
}

TEST_CASE("invalid flag values are usage errors with exit code 2") {
    Workspace ws;
    CHECK(run("gen-synthetic --noise -1 --out " + kDir + "/x.eegc") == 2);
    CHECK(run("train --corpus nowhere.eegc --out " + kDir + "/x.cgnt") == 2); // --mode missing
    CHECK(run("definitely-not-a-command") == 2);
    CHECK(run("train --mode supervised --corpus c.eegc --epochs 1 --out o.cgnt") ==
          2); // KD mode without --posteriors
}

TEST_CASE("train/eval/extract round trip on a tiny corpus") {
    Workspace ws;
    const std::string corpus = kDir + "/corpus.eegc";
    const std::string ckpt = kDir + "/model.cgnt";
    REQUIRE(run("gen-synthetic" + kGenFlags + "--out " + corpus) == 0);

    CHECK(run("train --mode hard --corpus " + corpus + " --out " + ckpt +
              " --depth 1 --hidden 6 --unidirectional --dropout 0 --epochs 4 --batch 6"
              " --lr 0.01 --seed 3") == 0);
    CHECK(exists(ckpt));
    CHECK(exists(ckpt + ".trainlog.tsv"));
    CHECK(exists(ckpt + ".manifest.json"));

    auto manifest = nlohmann::json::parse(slurp(ckpt + ".manifest.json"));
    CHECK(manifest["results"]["posterior_reads"] == 0);

    const std::string eval_manifest = kDir + "/eval.manifest.json";
    CHECK(run("eval --checkpoint " + ckpt + " --corpus " + corpus + " --manifest " +
              eval_manifest) == 0);
    auto eval_doc = nlohmann::json::parse(slurp(eval_manifest));
    const double accuracy = eval_doc["results"]["accuracy"];
    CHECK(accuracy >= 0.0);
    CHECK(accuracy <= 1.0);

    const std::string features = kDir + "/features.tsv";
    CHECK(run("extract --checkpoint " + ckpt + " --corpus " + corpus + " --out " + features +
              " --window 6 --stride 3") == 0);
    CHECK(exists(features));
    std::ifstream in(features);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 18 * 3); // 12 steps, width 6, stride 3 -> 3 excerpts per signal

    const std::string whole = kDir + "/features_whole.tsv";
    CHECK(run("extract --checkpoint " + ckpt + " --corpus " + corpus + " --out " + whole) == 0);
    std::ifstream in2(whole);
    lines = 0;
    while (std::getline(in2, line)) ++lines;
    CHECK(lines == 18); // one vector per signal without a window
}

TEST_CASE("single-threaded training reruns are byte-identical") {
    Workspace ws;
    const std::string corpus = kDir + "/corpus.eegc";
    const std::string ckpt = kDir + "/model.cgnt";
    REQUIRE(run("gen-synthetic" + kGenFlags + "--out " + corpus) == 0);
    const std::string train_flags = "train --mode supervised --corpus " + corpus +
                                    " --posteriors " + corpus + ".posteriors.tsv --out " + ckpt +
                                    " --depth 1 --hidden 4 --dropout 0.3 --epochs 3 --batch 6"
                                    " --seed 9 --threads 1";
    REQUIRE(run(train_flags) == 0);
    const std::string first_ckpt = slurp(ckpt);
    const std::string first_log = slurp(ckpt + ".trainlog.tsv");
    const std::string first_manifest = slurp(ckpt + ".manifest.json");
    REQUIRE(run(train_flags) == 0);
    CHECK(slurp(ckpt) == first_ckpt);
    CHECK(slurp(ckpt + ".trainlog.tsv") == first_log);
    CHECK(slurp(ckpt + ".manifest.json") == first_manifest);
}

TEST_CASE("unsupervised training reports zero label reads") {
    Workspace ws;
    const std::string corpus = kDir + "/corpus.eegc";
    const std::string ckpt = kDir + "/model.cgnt";
    REQUIRE(run("gen-synthetic" + kGenFlags + "--out " + corpus) == 0);
    CHECK(run("train --mode unsupervised --corpus " + corpus + " --posteriors " + corpus +
              ".posteriors.tsv --out " + ckpt +
              " --depth 1 --hidden 4 --dropout 0 --epochs 2 --batch 6 --seed 3") == 0);
    auto manifest = nlohmann::json::parse(slurp(ckpt + ".manifest.json"));
    CHECK(manifest["results"]["label_reads"] == 0);
}

TEST_CASE("missing checkpoint is a runtime error with exit code 1") {
    Workspace ws;
    const std::string corpus = kDir + "/corpus.eegc";
    REQUIRE(run("gen-synthetic" + kGenFlags + "--out " + corpus) == 0);
    CHECK(run("eval --checkpoint " + kDir + "/missing.cgnt --corpus " + corpus) == 1);
}

TEST_CASE("unseen subcommand prints an accuracy and writes its manifest") {
    Workspace ws;
    const std::string corpus = kDir + "/corpus.eegc";
    const std::string manifest_path = kDir + "/unseen.manifest.json";
    REQUIRE(run("gen-synthetic" + kGenFlags + "--out " + corpus) == 0);
    CHECK(run("unseen --corpus " + corpus + " --posteriors " + corpus +
              ".posteriors.tsv --holdout-classes 0,1 --classifier knn --window 6 --stride 3"
              " --depth 1 --hidden 4 --dropout 0 --epochs 1 --batch 6 --seed 2 --knn-k 3"
              " --manifest " + manifest_path) == 0);
    auto doc = nlohmann::json::parse(slurp(manifest_path));
    const double accuracy = doc["results"]["accuracy"];
    CHECK(accuracy >= 0.0);
    CHECK(accuracy <= 1.0);
    CHECK(doc["results"]["label_reads"] == 0);
}

TEST_CASE("gradcheck subcommand passes at the default tolerance") {
    Workspace ws;
    const std::string manifest_path = kDir + "/gradcheck.manifest.json";
    CHECK(run("gradcheck --seed 1 --manifest " + manifest_path) == 0);
    auto doc = nlohmann::json::parse(slurp(manifest_path));
    CHECK(doc["results"]["failed"] == 0);
    CHECK(doc["results"]["cases"] == 56); // 4 depths x 2 directions x 7 losses
}
