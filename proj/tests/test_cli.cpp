#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcie/io/image.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path temp_dir() {
    fs::path dir =
        fs::temp_directory_path() / ("mcie_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
    return dir;
}

RunResult run(const std::string& args) {
    static int counter = 0;
    fs::path out = fs::temp_directory_path() / ("mcie_cli_out_" + std::to_string(counter));
    fs::path err = fs::temp_directory_path() / ("mcie_cli_err_" + std::to_string(counter));
    ++counter;
    std::string cmd = std::string(MCIE_BIN) + " " + args + " > " + out.string() + " 2> " +
                      err.string();
    int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    fs::remove(out);
    fs::remove(err);
    return r;
}

void write_tiny_config(const fs::path& path) {
    nlohmann::json cfg = {{"d", 16},           {"n_layers", 1},     {"box_freqs", 4},
                          {"box_queries", 1},  {"box_blocks", 1},   {"src_queries", 4},
                          {"src_blocks", 1},   {"sampler_steps", 2}, {"phase1_steps", 24},
                          {"phase2_steps", 16}, {"batch_size", 2},   {"bench_n", 3}};
    std::ofstream(path) << cfg.dump(2);
}

}  // namespace

TEST_CASE("corpus generation is reproducible per seed") {
    fs::path dir = temp_dir();
    RunResult a = run("gen-data -n 8 --max-subs 3 --multiturn 2 --seed 41 --out " +
                      (dir / "a").string());
    RunResult b = run("gen-data -n 8 --max-subs 3 --multiturn 2 --seed 41 --out " +
                      (dir / "b").string());
    RunResult c = run("gen-data -n 8 --max-subs 3 --multiturn 2 --seed 42 --out " +
                      (dir / "c").string());
    REQUIRE(a.exit_code == 0);
    REQUIRE(b.exit_code == 0);
    REQUIRE(c.exit_code == 0);

    CHECK(slurp(dir / "a/manifest.jsonl") == slurp(dir / "b/manifest.jsonl"));
    CHECK(slurp(dir / "a/multiturn.jsonl") == slurp(dir / "b/multiturn.jsonl"));
    CHECK(slurp(dir / "a/sample00000.src.ppm") == slurp(dir / "b/sample00000.src.ppm"));
    CHECK(slurp(dir / "a/sample00003.tgt.ppm") == slurp(dir / "b/sample00003.tgt.ppm"));
    CHECK(slurp(dir / "a/rec00000/im0.ppm") == slurp(dir / "b/rec00000/im0.ppm"));
    CHECK(slurp(dir / "a/manifest.jsonl") != slurp(dir / "c/manifest.jsonl"));

    CHECK(a.out.find("manifest ") != std::string::npos);
    CHECK(a.out.find("multiturn ") != std::string::npos);

    int lines = 0;
    std::ifstream is(dir / "a/manifest.jsonl");
    for (std::string line; std::getline(is, line);) {
        ++lines;
        nlohmann::json row = nlohmann::json::parse(line);
        CHECK(row.at("provenance") == "synthetic");
        CHECK(fs::exists(dir / "a" / row.at("src").get<std::string>()));
        CHECK(fs::exists(dir / "a" / row.at("tgt").get<std::string>()));
    }
    CHECK(lines == 8);
}

TEST_CASE("decompose prints parseable instruction json") {
    RunResult r = run("decompose \"add a red square to the top left and remove the blue circle\"");
    REQUIRE(r.exit_code == 0);
    nlohmann::json j = nlohmann::json::parse(r.out);
    CHECK(j.at("raw_text").get<std::string>() ==
          "add a red square to the top left and remove the blue circle");
    REQUIRE(j.at("subs").size() == 2);
    CHECK(j["subs"][0].at("op") == "ADD");
    CHECK(j["subs"][1].at("op") == "REMOVE");
    CHECK(j["subs"][0].at("bbox").size() == 4);
}

TEST_CASE("select-bbox ranks the candidate covering the change") {
    fs::path dir = temp_dir();
    mcie::io::Image src(16, 16, 3, 0.2);
    mcie::io::Image tgt = src;
    for (int r = 2; r < 6; ++r) {
        for (int c = 2; c < 6; ++c) tgt.at(r, c, 0) = 0.9;
    }
    mcie::io::write_ppm((dir / "src.ppm").string(), src);
    mcie::io::write_ppm((dir / "tgt.ppm").string(), tgt);
    std::ofstream(dir / "cands.json")
        << "[[0.5, 0.5, 1.0, 1.0], [0.125, 0.125, 0.375, 0.375], [0.0, 0.5, 0.5, 1.0]]";

    RunResult r = run("select-bbox " + (dir / "src.ppm").string() + " " +
                      (dir / "tgt.ppm").string() + " " + (dir / "cands.json").string());
    REQUIRE(r.exit_code == 0);
    nlohmann::json j = nlohmann::json::parse(r.out);
    CHECK(j.at("index").get<int>() == 1);
    REQUIRE(j.at("scores").size() == 3);
    double best = j["scores"][1].get<double>();
    CHECK(best == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(j["scores"][0].get<double>() < best);
    CHECK(j["scores"][2].get<double>() < best);
}

TEST_CASE("exit codes follow the error taxonomy") {
    CHECK(run("").exit_code == 2);
    CHECK(run("no-such-command").exit_code == 2);
    CHECK(run("--help").exit_code == 0);
    CHECK(run("decompose").exit_code == 2);

    RunResult missing = run("edit missing.ckpt missing.ppm \"add a thing\" out.ppm");
    CHECK(missing.exit_code == 3);
    CHECK(missing.err.find("error: data:") != std::string::npos);

    fs::path dir = temp_dir();
    std::ofstream(dir / "bad.json") << "{\"not_a_real_key\": 1}";
    RunResult badcfg = run("decompose \"add a thing\" --config " + (dir / "bad.json").string());
    CHECK(badcfg.exit_code == 3);
    CHECK(badcfg.err.find("not_a_real_key") != std::string::npos);

    std::ofstream(dir / "tiny.json") << "{\"d\": 16}";
    RunResult badjudge = run("evaluate x.ckpt y.jsonl z.json --judge vibes --config " +
                             (dir / "tiny.json").string());
    CHECK(badjudge.exit_code == 2);
    CHECK(badjudge.err.find("error: usage:") != std::string::npos);
}

TEST_CASE("mllm decompose round trips through the mock transport") {
    fs::path dir = temp_dir();
    nlohmann::json cfg = {
        {"transport", "mock"},
        {"mllm_mock_reply",
         "{\"subs\": [{\"text\": \"add a red square\", \"op\": \"ADD\", "
         "\"bbox\": [0.1, 0.1, 0.4, 0.4]}]}"}};
    std::ofstream(dir / "mock.json") << cfg.dump();
    RunResult r =
        run("decompose \"add a red square\" --mllm --config " + (dir / "mock.json").string());
    REQUIRE(r.exit_code == 0);
    nlohmann::json j = nlohmann::json::parse(r.out);
    REQUIRE(j.at("subs").size() == 1);
    CHECK(j["subs"][0].at("op") == "ADD");
    CHECK(j["subs"][0]["bbox"][2].get<double>() == doctest::Approx(0.4));
}

TEST_CASE("train edit evaluate report ablate work end to end") {
    fs::path dir = temp_dir();
    write_tiny_config(dir / "tiny.json");
    std::string cfg = " --config " + (dir / "tiny.json").string();

    REQUIRE(run("gen-data -n 6 --max-subs 3 --min-subs 2 --multiturn 2 --seed 17 --out " +
                (dir / "corpus").string())
                .exit_code == 0);

    RunResult tr = run("train " + (dir / "corpus/manifest.jsonl").string() + " " +
                       (dir / "corpus/multiturn.jsonl").string() + " " +
                       (dir / "run/model.ckpt").string() + cfg + " --seed 3");
    REQUIRE(tr.exit_code == 0);
    CHECK(fs::exists(dir / "run/model.ckpt"));
    CHECK(fs::exists(dir / "run/model-phase1.ckpt"));
    CHECK(fs::exists(dir / "run/model-phase2.ckpt"));
    CHECK(tr.out.find("checkpoint ") != std::string::npos);
    CHECK(tr.err.find("loss") != std::string::npos);

    RunResult ed = run("edit " + (dir / "run/model.ckpt").string() + " " +
                       (dir / "corpus/sample00000.src.ppm").string() +
                       " \"change the red square to blue; add a green circle\" " +
                       (dir / "run/out.ppm").string() + " --dump-attention --seed 4");
    REQUIRE(ed.exit_code == 0);
    mcie::io::Image edited = mcie::io::read_ppm((dir / "run/out.ppm").string());
    CHECK(edited.h == 16);
    CHECK(edited.w == 16);
    CHECK(fs::exists(dir / "run/out.attn0.pgm"));
    CHECK(fs::exists(dir / "run/out.attn1.pgm"));
    CHECK(slurp(dir / "run/out.attn0.pgm").rfind("P5", 0) == 0);

    RunResult ed2 = run("edit " + (dir / "run/model.ckpt").string() + " " +
                        (dir / "corpus/sample00000.src.ppm").string() +
                        " \"change the red square to blue; add a green circle\" " +
                        (dir / "run/out2.ppm").string() + " --seed 4");
    REQUIRE(ed2.exit_code == 0);
    CHECK(slurp(dir / "run/out.ppm") == slurp(dir / "run/out2.ppm"));

    RunResult ev = run("evaluate " + (dir / "run/model.ckpt").string() + " " +
                       (dir / "corpus/manifest.jsonl").string() + " " +
                       (dir / "run/mcie.report.json").string() + cfg + " --seed 5");
    REQUIRE(ev.exit_code == 0);
    nlohmann::json report = nlohmann::json::parse(slurp(dir / "run/mcie.report.json"));
    CHECK(report.at("method") == "mcie");
    CHECK(report.at("n") == 6);
    CHECK(report.at("metrics").size() == 6);
    CHECK(ev.out.find("clip_i") != std::string::npos);

    RunResult rep = run("report " + (dir / "run/mcie.report.json").string());
    REQUIRE(rep.exit_code == 0);
    CHECK(rep.out.find("mcie") != std::string::npos);
    CHECK(rep.out.find("dino_i") != std::string::npos);

    RunResult abl = run("ablate " + (dir / "corpus/multiturn.jsonl").string() + " " +
                        (dir / "abl").string() + cfg + " --seed 6");
    REQUIRE(abl.exit_code == 0);
    for (const char* name : {"full", "no-saca", "no-bcca"}) {
        fs::path path = dir / "abl" / (std::string(name) + ".report.json");
        REQUIRE(fs::exists(path));
        nlohmann::json r = nlohmann::json::parse(slurp(path));
        CHECK(r.at("method") == name);
    }
    CHECK(abl.out.find("no-saca") != std::string::npos);
    CHECK(abl.out.find("no-bcca") != std::string::npos);
}
