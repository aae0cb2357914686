#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "seic/embedding.hpp"
#include "seic/synth.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
};

RunResult run(const std::string& args) {
    std::string cmd = std::string(SEIC_CLI_PATH) + " " + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    RunResult r;
    char buf[4096];
    while (size_t n = fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
    int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path work_dir() {
    fs::path d = fs::temp_directory_path() / "seic_cli_test";
    fs::create_directories(d);
    return d;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

void write_nouns(const fs::path& path, int n) {
    std::ofstream os(path);
    for (int i = 0; i < n; ++i) os << "noun" << i << "\n";
}

}  // namespace

TEST_CASE("--print-config emits the resolved JSON config") {
    auto r = run("--print-config");
    REQUIRE(r.code == 0);
    auto j = nlohmann::json::parse(r.out);
    CHECK(j["stage2"]["lr"].get<double>() == 0.005);
    CHECK(j["pairgen"]["k1"].get<int>() == 200);
    CHECK(j["lora"]["rank"].get<int>() == 128);
}

TEST_CASE("dotted overrides reach the resolved config") {
    auto r = run("--print-config synth --stage2.lr 0.001 --balance.mode entropy");
    REQUIRE(r.code == 0);
    auto j = nlohmann::json::parse(r.out);
    CHECK(j["stage2"]["lr"].get<double>() == 0.001);
    CHECK(j["balance"]["mode"].get<std::string>() == "entropy");
}

TEST_CASE("unknown override keys exit with code 2") {
    auto r = run("synth --stage2.learning_rate 0.001");
    CHECK(r.code == 2);
    CHECK(r.out.find("unknown config key") != std::string::npos);
}

TEST_CASE("missing input files exit with code 3") {
    auto d = work_dir();
    auto r = run("align --paths.embeddings " + q(d / "does_not_exist.emb") + " --paths.out_dir " + q(d));
    CHECK(r.code == 3);
}

TEST_CASE("enhance without a checkpoint exits with code 2") {
    auto d = work_dir();
    auto r = run("enhance --paths.embeddings " + q(d / "whatever.emb") + " --paths.out_dir " + q(d));
    CHECK(r.code == 2);
    CHECK(r.out.find("checkpoint") != std::string::npos);
}

TEST_CASE("full pipeline: synth, pairgen, align, evaluate, enhance, report") {
    auto d = work_dir() / "pipeline";
    fs::remove_all(d);
    fs::create_directories(d);

    // synth
    auto rs = run("synth --synth.N 150 --synth.D 8 --synth.K 3 --synth.separation_deg 70 --synth.noise_std 0.12"
                  " --paths.out_dir " + q(d));
    REQUIRE(rs.code == 0);
    REQUIRE(fs::exists(d / "synth.emb"));
    REQUIRE(fs::exists(d / "labels.txt"));
    auto emb = seic::read_embeddings((d / "synth.emb").string());
    CHECK(emb.rows() == 150);
    CHECK(emb.dim() == 8);
    CHECK(seic::read_labels((d / "labels.txt").string()).size() == 150);

    // pairgen with a hash-stub noun vocabulary
    write_nouns(d / "nouns.txt", 60);
    auto rp = run("pairgen --paths.embeddings " + q(d / "synth.emb") + " --paths.nouns " + q(d / "nouns.txt") +
                  " --pairgen.K 3 --pairgen.k1 10 --pairgen.k2 4 --paths.out_dir " + q(d));
    REQUIRE(rp.code == 0);
    REQUIRE(fs::exists(d / "pairs_image.emb"));
    REQUIRE(fs::exists(d / "pairs_text.emb"));
    REQUIRE(fs::exists(d / "candidates.json"));
    CHECK(rp.out.find("candidate subset size") != std::string::npos);

    // align
    auto ra = run("align --paths.embeddings " + q(d / "pairs_image.emb") + " --paths.text_embeddings " +
                  q(d / "pairs_text.emb") + " --paths.labels " + q(d / "labels.txt") +
                  " --pairgen.K 3 --stage2.epochs 8 --stage2.batch 64 --paths.out_dir " + q(d));
    REQUIRE(ra.code == 0);
    REQUIRE(fs::exists(d / "stage2.ckpt"));
    REQUIRE(fs::exists(d / "history_stage2.csv"));
    REQUIRE(fs::exists(d / "report.json"));
    CHECK(ra.out.find("acc") != std::string::npos);
    {
        std::ifstream is(d / "report.json");
        auto j = nlohmann::json::parse(is);
        CHECK(j.contains("acc"));
        CHECK(j["labels"].size() == 150);
    }

    // evaluate against the saved checkpoint
    auto re = run("evaluate --paths.checkpoint " + q(d / "stage2.ckpt") + " --paths.embeddings " +
                  q(d / "pairs_image.emb") + " --paths.labels " + q(d / "labels.txt") + " --paths.out_dir " + q(d));
    REQUIRE(re.code == 0);
    CHECK(re.out.find("acc") != std::string::npos);

    // enhance from the stage-2 checkpoint
    auto den = d / "enhance";
    fs::create_directories(den);
    auto rn = run("enhance --paths.checkpoint " + q(d / "stage2.ckpt") + " --paths.embeddings " + q(d / "synth.emb") +
                  " --paths.labels " + q(d / "labels.txt") +
                  " --lora.rank 2 --stage3.epochs 2 --stage3.batch 64 --paths.out_dir " + q(den));
    REQUIRE(rn.code == 0);
    REQUIRE(fs::exists(den / "stage3.ckpt"));
    REQUIRE(fs::exists(den / "history_stage3.csv"));
    REQUIRE(fs::exists(den / "report.json"));

    // collapse mode is refused without the gate flag
    auto rc = run("enhance --paths.checkpoint " + q(d / "stage2.ckpt") + " --paths.embeddings " + q(d / "synth.emb") +
                  " --stage3.self_mode align_loss --lora.rank 2 --stage3.epochs 1 --stage3.batch 64" +
                  " --paths.out_dir " + q(den));
    CHECK(rc.code == 2);

    // aggregate report over the two run dirs
    auto dr = d / "agg";
    auto rr = run("report " + q(d) + " " + q(den) + " --paths.out_dir " + q(dr));
    REQUIRE(rr.code == 0);
    REQUIRE(fs::exists(dr / "ablation.md"));
    REQUIRE(fs::exists(dr / "curves.csv"));
    {
        std::ifstream is(dr / "ablation.md");
        std::string md((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        CHECK(md.find("| run | ACC | NMI | ARI | hist_std |") != std::string::npos);
        CHECK(md.find("ACC mean") != std::string::npos);
    }
}

TEST_CASE("report on a directory without artifacts exits with code 3") {
    auto d = work_dir() / "empty_run";
    fs::create_directories(d);
    auto r = run("report " + q(d) + " --paths.out_dir " + q(work_dir()));
    CHECK(r.code == 3);
}
