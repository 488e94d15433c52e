#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mcie/bench/bench.hpp"
#include "mcie/editor/editor.hpp"
#include "mcie/instr/decompose.hpp"
#include "mcie/mllm/mllm.hpp"
#include "mcie/num/checkpoint.hpp"
#include "mcie/pipe/datapipe.hpp"

namespace fs = std::filesystem;
using namespace mcie;

namespace {

struct AppState {
    std::uint64_t seed = 0;
    std::string config_path;

    int grid_h = 16, grid_w = 16;
    int d = 32, n_layers = 2;
    double lambda_fuse = 0.5;
    std::string mask_mode = "literal";
    int box_freqs = 8, box_queries = 2, box_blocks = 2;
    int src_queries = 16, src_blocks = 4;
    bool force_full_fusion = false;

    int t_total = 1000, sampler_steps = 20;
    int phase1_steps = 2000, phase2_steps = 1000;
    double lr = 1e-3;
    int batch_size = 4;

    int bench_n = 400;
    std::uint64_t bench_seed = 7777;

    std::string transport = "mock";
    std::string mllm_endpoint, mllm_model, mllm_fixture, mllm_mock_reply;
    double mllm_timeout_s = 30.0;
    int mllm_retries = 0;
};

void apply_config_file(AppState& s) {
    if (s.config_path.empty()) return;
    std::ifstream is(s.config_path);
    if (!is) throw data_error("cannot open config: " + s.config_path);
    nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw data_error("config is not a json object: " + s.config_path);
    }
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "seed") s.seed = value.get<std::uint64_t>();
            else if (key == "grid_h") s.grid_h = value.get<int>();
            else if (key == "grid_w") s.grid_w = value.get<int>();
            else if (key == "d") s.d = value.get<int>();
            else if (key == "n_layers") s.n_layers = value.get<int>();
            else if (key == "lambda_fuse") s.lambda_fuse = value.get<double>();
            else if (key == "mask_mode") s.mask_mode = value.get<std::string>();
            else if (key == "box_freqs") s.box_freqs = value.get<int>();
            else if (key == "box_queries") s.box_queries = value.get<int>();
            else if (key == "box_blocks") s.box_blocks = value.get<int>();
            else if (key == "src_queries") s.src_queries = value.get<int>();
            else if (key == "src_blocks") s.src_blocks = value.get<int>();
            else if (key == "force_full_fusion") s.force_full_fusion = value.get<bool>();
            else if (key == "t_total") s.t_total = value.get<int>();
            else if (key == "sampler_steps") s.sampler_steps = value.get<int>();
            else if (key == "phase1_steps") s.phase1_steps = value.get<int>();
            else if (key == "phase2_steps") s.phase2_steps = value.get<int>();
            else if (key == "lr") s.lr = value.get<double>();
            else if (key == "batch_size") s.batch_size = value.get<int>();
            else if (key == "bench_n") s.bench_n = value.get<int>();
            else if (key == "bench_seed") s.bench_seed = value.get<std::uint64_t>();
            else if (key == "transport") s.transport = value.get<std::string>();
            else if (key == "mllm_endpoint") s.mllm_endpoint = value.get<std::string>();
            else if (key == "mllm_model") s.mllm_model = value.get<std::string>();
            else if (key == "mllm_fixture") s.mllm_fixture = value.get<std::string>();
            else if (key == "mllm_mock_reply") s.mllm_mock_reply = value.get<std::string>();
            else if (key == "mllm_timeout_s") s.mllm_timeout_s = value.get<double>();
            else if (key == "mllm_retries") s.mllm_retries = value.get<int>();
            else throw data_error("unknown config key: " + key);
        } catch (const nlohmann::json::exception& ex) {
            throw data_error("config key " + key + ": " + ex.what());
        }
    }
}

editor::EditorConfig editor_config(const AppState& s) {
    editor::EditorConfig cfg;
    cfg.d = s.d;
    cfg.n_layers = s.n_layers;
    cfg.grid_h = s.grid_h;
    cfg.grid_w = s.grid_w;
    cfg.lambda_fuse = s.lambda_fuse;
    cfg.mask_mode = parse_mask_mode(s.mask_mode);
    cfg.box_freqs = s.box_freqs;
    cfg.box_queries = s.box_queries;
    cfg.box_blocks = s.box_blocks;
    cfg.src_queries = s.src_queries;
    cfg.src_blocks = s.src_blocks;
    cfg.force_full_fusion = s.force_full_fusion;
    return cfg;
}

editor::DiffusionSchedule schedule_for(int t_total, int sampler_steps) {
    return editor::DiffusionSchedule::make(t_total, 1e-4, 2e-2, sampler_steps);
}

nlohmann::json checkpoint_header(const editor::EditorConfig& cfg, int t_total,
                                 int sampler_steps) {
    return {{"arch",
             {{"d", cfg.d},
              {"n_layers", cfg.n_layers},
              {"grid_h", cfg.grid_h},
              {"grid_w", cfg.grid_w},
              {"lambda_fuse", cfg.lambda_fuse},
              {"mask_mode", mask_mode_name(cfg.mask_mode)},
              {"box_freqs", cfg.box_freqs},
              {"box_queries", cfg.box_queries},
              {"box_blocks", cfg.box_blocks},
              {"src_queries", cfg.src_queries},
              {"src_blocks", cfg.src_blocks}}},
            {"schedule", {{"t_total", t_total}, {"sampler_steps", sampler_steps}}}};
}

struct LoadedModel {
    editor::EditorModel model;
    editor::DiffusionSchedule sched;
};

LoadedModel load_model(const std::string& ckpt_path) {
    nlohmann::json meta =
        nlohmann::json::parse(num::read_checkpoint_meta(ckpt_path), nullptr, false);
    if (meta.is_discarded() || !meta.contains("arch") || !meta.contains("schedule")) {
        throw data_error("checkpoint lacks an architecture header: " + ckpt_path);
    }
    const nlohmann::json& a = meta.at("arch");
    editor::EditorConfig cfg;
    cfg.d = a.at("d").get<int>();
    cfg.n_layers = a.at("n_layers").get<int>();
    cfg.grid_h = a.at("grid_h").get<int>();
    cfg.grid_w = a.at("grid_w").get<int>();
    cfg.lambda_fuse = a.at("lambda_fuse").get<double>();
    cfg.mask_mode = parse_mask_mode(a.at("mask_mode").get<std::string>());
    cfg.box_freqs = a.at("box_freqs").get<int>();
    cfg.box_queries = a.at("box_queries").get<int>();
    cfg.box_blocks = a.at("box_blocks").get<int>();
    cfg.src_queries = a.at("src_queries").get<int>();
    cfg.src_blocks = a.at("src_blocks").get<int>();

    const nlohmann::json& sch = meta.at("schedule");
    LoadedModel loaded{editor::EditorModel(cfg, 0),
                       schedule_for(sch.at("t_total").get<int>(),
                                    sch.at("sampler_steps").get<int>())};
    num::load_checkpoint(ckpt_path, loaded.model.params());
    return loaded;
}

mllm::MllmClient make_client(const AppState& s) {
    mllm::MllmConfig cfg = mllm::config_from_env();
    if (!s.mllm_endpoint.empty()) cfg.endpoint = s.mllm_endpoint;
    if (!s.mllm_model.empty()) cfg.model = s.mllm_model;
    cfg.transport = mllm::parse_transport(s.transport);
    cfg.fixture_path = s.mllm_fixture;
    cfg.mock_reply = s.mllm_mock_reply;
    cfg.timeout_s = s.mllm_timeout_s;
    cfg.retries = s.mllm_retries;
    return mllm::MllmClient(cfg);
}

instr::ComplexInstruction decompose_with(const AppState& s, const std::string& instruction,
                                         bool use_mllm) {
    if (use_mllm) return mllm::decompose_mllm(make_client(s), instruction);
    return instr::decompose_rules(instruction, instr::Lexicon::defaults());
}

std::vector<bench::BenchSample> bench_from_manifest(const std::string& manifest) {
    std::vector<bench::BenchSample> samples;
    for (editor::TrainSample& t : pipe::load_corpus(manifest)) {
        samples.push_back({std::move(t.src), std::move(t.tgt), std::move(t.ins)});
    }
    if (samples.empty()) throw data_error("manifest holds no samples: " + manifest);
    return samples;
}

int run_gen_data(const AppState& s, int n, int max_subs, int min_subs, const std::string& out,
                 int multiturn, int min_turns, int max_turns) {
    fs::create_directories(out);
    auto corpus = pipe::generate_synthetic_corpus(n, max_subs, s.seed, min_subs);
    std::string manifest = pipe::write_corpus(out, corpus, "synthetic");
    std::printf("manifest %s\n", manifest.c_str());
    std::printf("samples %d\n", n);

    int n_records = multiturn < 0 ? std::max(1, n / 10) : multiturn;
    if (n_records > 0) {
        auto records = pipe::generate_multiturn(n_records, min_turns, max_turns, s.seed);
        std::vector<pipe::ManifestEntry> windows;
        for (const pipe::SyntheticMultiTurn& rec : records) {
            fs::create_directories(fs::path(out) / rec.record.id);
            for (std::size_t j = 0; j < rec.record.images.size(); ++j) {
                io::write_ppm((fs::path(out) / rec.record.images[j]).string(),
                              pipe::render_scene(rec.scenes[j]));
            }
            for (pipe::ComplexEditSample& w : pipe::expand_multiturn(rec.record)) {
                pipe::ManifestEntry entry;
                entry.src = w.src_image;
                entry.tgt = w.tgt_image;
                entry.ins = std::move(w.ins);
                entry.provenance = "multiturn";
                windows.push_back(std::move(entry));
            }
        }
        std::string mt_manifest = (fs::path(out) / "multiturn.jsonl").string();
        pipe::save_manifest(mt_manifest, windows);
        std::printf("multiturn %s\n", mt_manifest.c_str());
        std::printf("windows %zu\n", windows.size());
    }
    return 0;
}

int run_decompose(const AppState& s, const std::string& instruction, bool use_mllm) {
    instr::ComplexInstruction ins = decompose_with(s, instruction, use_mllm);
    std::printf("%s\n", instr::to_json(ins).dump(2).c_str());
    return 0;
}

int run_select_bbox(const AppState&, const std::string& src_path, const std::string& tgt_path,
                    const std::string& candidates_path) {
    io::Image src = io::read_ppm(src_path);
    io::Image tgt = io::read_ppm(tgt_path);

    std::ifstream is(candidates_path);
    if (!is) throw data_error("cannot open candidates: " + candidates_path);
    nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
    if (j.is_discarded() || !j.is_array()) {
        throw data_error("candidates must be a json array of boxes: " + candidates_path);
    }
    std::vector<instr::BBox> candidates;
    for (const nlohmann::json& box : j) {
        if (!box.is_array() || box.size() != 4) {
            throw data_error("each candidate is [x0, y0, x1, y1]: " + candidates_path);
        }
        candidates.push_back({box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
                              box[3].get<double>()});
    }

    enc::ToyEmbedder scorer;
    std::vector<double> scores = pipe::bbox_scores(src, tgt, candidates, scorer);
    int index = pipe::select_bbox(src, tgt, candidates, scorer);
    nlohmann::json outcome = {{"index", index}, {"scores", scores}};
    std::printf("%s\n", outcome.dump().c_str());
    return 0;
}

int run_train(const AppState& s, const std::string& corpus1, const std::string& corpus2,
              const std::string& out_ckpt) {
    auto simple = pipe::load_corpus(corpus1);
    auto complex_corpus = pipe::load_corpus(corpus2);

    editor::EditorConfig cfg = editor_config(s);
    editor::EditorModel model(cfg, s.seed);
    editor::DiffusionSchedule sched = schedule_for(s.t_total, s.sampler_steps);

    editor::TrainOptions opt;
    opt.lr = s.lr;
    opt.batch_size = s.batch_size;
    opt.log_every = 100;
    opt.verbose = true;

    fs::path out(out_ckpt);
    fs::path dir = out.parent_path().empty() ? fs::path(".") : out.parent_path();
    fs::create_directories(dir);
    editor::TwoPhaseResult result =
        editor::train_two_phase(model, sched, simple, complex_corpus, s.phase1_steps,
                                s.phase2_steps, opt, s.seed, dir.string(), out.stem().string());

    num::save_checkpoint(out_ckpt, model.params(),
                         checkpoint_header(cfg, s.t_total, s.sampler_steps).dump());
    std::printf("phase1 %s\n", result.phase1_path.c_str());
    std::printf("phase2 %s\n", result.phase2_path.c_str());
    std::printf("checkpoint %s\n", out_ckpt.c_str());
    return 0;
}

int run_edit(const AppState& s, const std::string& ckpt, const std::string& src_path,
             const std::string& instruction, const std::string& out_path, bool use_mllm,
             bool dump_attention, const double* lambda_override) {
    LoadedModel loaded = load_model(ckpt);
    loaded.model.set_force_full_fusion(s.force_full_fusion);
    if (lambda_override) loaded.model.set_lambda(*lambda_override);
    io::Image src = io::read_ppm(src_path);
    instr::ComplexInstruction ins = decompose_with(s, instruction, use_mllm);

    io::Image edited = editor::euler_ancestral_sample(loaded.model, loaded.sched, src, ins,
                                                      loaded.sched.sampler_steps, s.seed);
    io::write_ppm(out_path, edited);
    std::printf("edited %s\n", out_path.c_str());

    if (dump_attention) {
        auto maps = loaded.model.attention_heatmaps(src, ins, 1.0, loaded.sched.t_total);
        fs::path base(out_path);
        for (std::size_t i = 0; i < maps.size(); ++i) {
            fs::path pgm = base.parent_path() /
                           (base.stem().string() + ".attn" + std::to_string(i) + ".pgm");
            io::write_pgm(pgm.string(), maps[i], loaded.model.config().grid_h,
                          loaded.model.config().grid_w);
            std::printf("attention %zu %s\n", i, pgm.string().c_str());
        }
    }
    return 0;
}

int run_evaluate(const AppState& s, const std::string& ckpt, const std::string& manifest,
                 const std::string& out_report, const std::string& judge_name,
                 const std::string& method) {
    if (judge_name != "procedural" && judge_name != "mllm") {
        throw usage_error("judge must be procedural or mllm, got " + judge_name);
    }
    LoadedModel loaded = load_model(ckpt);
    std::vector<bench::BenchSample> samples = bench_from_manifest(manifest);

    bench::EvalOptions opts;
    opts.sampler_steps = loaded.sched.sampler_steps;
    opts.seed = s.seed;
    opts.method = method;

    std::optional<mllm::MllmClient> client;
    std::optional<mllm::MllmJudge> judge;
    if (judge_name == "mllm") {
        client.emplace(make_client(s));
        judge.emplace(*client);
        opts.judge = &*judge;
    }

    bench::MethodReport report = bench::evaluate_model(loaded.model, loaded.sched, samples, opts);
    std::ofstream os(out_report);
    if (!os) throw data_error("cannot write report: " + out_report);
    os << bench::report_to_json(report).dump(2) << "\n";
    std::printf("report %s\n", out_report.c_str());
    std::printf("%s", bench::render_table({report}).c_str());
    return 0;
}

int run_report(const std::vector<std::string>& paths) {
    std::vector<bench::MethodReport> reports;
    for (const std::string& path : paths) {
        std::ifstream is(path);
        if (!is) throw data_error("cannot open report: " + path);
        nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
        if (j.is_discarded()) throw data_error("report is not json: " + path);
        reports.push_back(bench::report_from_json(j));
    }
    std::printf("%s", bench::render_table(reports).c_str());
    return 0;
}

int run_ablate(const AppState& s, const std::string& corpus_path, const std::string& out_dir,
               int bench_n) {
    auto simple = pipe::load_corpus(corpus_path);
    std::vector<editor::TrainSample> complex_corpus;
    for (const editor::TrainSample& t : simple) {
        if (t.ins.subs.size() >= 2) complex_corpus.push_back(t);
    }
    if (complex_corpus.empty()) {
        throw data_error("ablation needs multi-edit samples in the corpus");
    }
    fs::create_directories(out_dir);

    editor::DiffusionSchedule sched = schedule_for(s.t_total, s.sampler_steps);
    auto benchmark = bench::make_benchmark(bench_n, s.bench_seed);

    editor::TrainOptions opt;
    opt.lr = s.lr;
    opt.batch_size = s.batch_size;
    opt.verbose = false;

    struct Variant {
        const char* name;
        double lambda_fuse;
    };
    const Variant variants[] = {{"full", s.lambda_fuse}, {"no-saca", 0.0}, {"no-bcca", 1.0}};

    std::vector<bench::MethodReport> reports;
    for (const Variant& v : variants) {
        std::fprintf(stderr, "training %s\n", v.name);
        editor::EditorConfig cfg = editor_config(s);
        cfg.lambda_fuse = v.lambda_fuse;
        editor::EditorModel model(cfg, s.seed);
        editor::train_two_phase(model, sched, simple, complex_corpus, s.phase1_steps,
                                s.phase2_steps, opt, s.seed, out_dir, v.name);

        bench::EvalOptions opts;
        opts.sampler_steps = s.sampler_steps;
        opts.seed = s.seed;
        opts.method = v.name;
        bench::MethodReport report = bench::evaluate_model(model, sched, benchmark, opts);
        reports.push_back(report);

        std::string path = (fs::path(out_dir) / (std::string(v.name) + ".report.json")).string();
        std::ofstream os(path);
        if (!os) throw data_error("cannot write report: " + path);
        os << bench::report_to_json(report).dump(2) << "\n";
        std::printf("report %s\n", path.c_str());
    }
    std::printf("%s", bench::render_table(reports).c_str());
    return 0;
}

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Usage: return 2;
        case ErrorKind::Data: return 3;
        case ErrorKind::Contract: return 3;
        case ErrorKind::Numeric: return 4;
        case ErrorKind::Transport: return 5;
    }
    return 3;
}

std::string one_line(std::string text) {
    for (char& ch : text) {
        if (ch == '\n' || ch == '\r') ch = ' ';
    }
    return text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale complex-instruction image editing"};
    app.require_subcommand(1);

    AppState state;
    std::uint64_t flag_seed = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--seed", flag_seed, "rng seed (overrides the config file)");
        sub->add_option("--config", state.config_path, "json config file");
        return sub;
    };
    auto finalize = [&](CLI::App* sub) {
        apply_config_file(state);
        if (sub->count("--seed")) state.seed = flag_seed;
    };

    int gen_n = 1000, gen_max_subs = 4, gen_min_subs = 1;
    int gen_multiturn = -1, gen_min_turns = 2, gen_max_turns = 4;
    std::string gen_out;
    CLI::App* gen = add_common(app.add_subcommand("gen-data", "synthesize a training corpus"));
    gen->add_option("-n,--n", gen_n, "number of samples");
    gen->add_option("--max-subs", gen_max_subs, "max sub-edits per sample");
    gen->add_option("--min-subs", gen_min_subs, "min sub-edits per sample");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--multiturn", gen_multiturn, "multi-turn record count (-1 for n/10)");
    gen->add_option("--min-turns", gen_min_turns, "min turns per record");
    gen->add_option("--max-turns", gen_max_turns, "max turns per record");

    std::string dec_instruction;
    bool dec_mllm = false;
    CLI::App* dec = add_common(app.add_subcommand("decompose", "split an instruction"));
    dec->add_option("instruction", dec_instruction, "complex instruction")->required();
    dec->add_flag("--mllm", dec_mllm, "use the mllm client instead of rules");

    std::string sel_src, sel_tgt, sel_candidates;
    CLI::App* sel = add_common(app.add_subcommand("select-bbox", "pick the least-damage box"));
    sel->add_option("src", sel_src, "source image (ppm)")->required();
    sel->add_option("tgt", sel_tgt, "target image (ppm)")->required();
    sel->add_option("candidates", sel_candidates, "json array of boxes")->required();

    std::string train_c1, train_c2, train_out;
    CLI::App* tr = add_common(app.add_subcommand("train", "two-phase training"));
    tr->add_option("corpus1", train_c1, "phase-1 manifest")->required();
    tr->add_option("corpus2", train_c2, "phase-2 manifest")->required();
    tr->add_option("out-ckpt", train_out, "final checkpoint path")->required();

    std::string edit_ckpt, edit_src, edit_instruction, edit_out;
    bool edit_mllm = false, edit_dump = false;
    double edit_lambda = 0.5;
    CLI::App* ed = add_common(app.add_subcommand("edit", "apply an instruction to an image"));
    ed->add_option("ckpt", edit_ckpt, "checkpoint")->required();
    ed->add_option("scene", edit_src, "source image (ppm)")->required();
    ed->add_option("instruction", edit_instruction, "complex instruction")->required();
    ed->add_option("out", edit_out, "edited image path (ppm)")->required();
    ed->add_flag("--mllm", edit_mllm, "decompose through the mllm client");
    ed->add_flag("--dump-attention", edit_dump, "write per-sub attention heatmaps (pgm)");
    ed->add_option("--lambda", edit_lambda, "override the checkpoint's fusion weight");

    std::string eval_ckpt, eval_manifest, eval_out, eval_judge = "procedural",
                eval_method = "mcie";
    CLI::App* ev = add_common(app.add_subcommand("evaluate", "score a model on a benchmark"));
    ev->add_option("ckpt", eval_ckpt, "checkpoint")->required();
    ev->add_option("bench-manifest", eval_manifest, "benchmark manifest")->required();
    ev->add_option("out-report", eval_out, "report json path")->required();
    ev->add_option("--judge", eval_judge, "procedural|mllm");
    ev->add_option("--method", eval_method, "method name for the report");

    std::vector<std::string> report_paths;
    CLI::App* rep = add_common(app.add_subcommand("report", "tabulate method reports"));
    rep->add_option("reports", report_paths, "report json files")->required()->expected(-1);

    std::string abl_corpus, abl_out;
    int abl_bench_n = -1;
    CLI::App* abl = add_common(app.add_subcommand("ablate", "train and score fusion variants"));
    abl->add_option("corpus", abl_corpus, "training manifest")->required();
    abl->add_option("out", abl_out, "output directory")->required();
    abl->add_option("--bench-n", abl_bench_n, "benchmark size (-1 for the config value)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: usage: %s\n", one_line(e.what()).c_str());
        return 2;
    }

    try {
        if (gen->parsed()) {
            finalize(gen);
            return run_gen_data(state, gen_n, gen_max_subs, gen_min_subs, gen_out, gen_multiturn,
                                gen_min_turns, gen_max_turns);
        }
        if (dec->parsed()) {
            finalize(dec);
            return run_decompose(state, dec_instruction, dec_mllm);
        }
        if (sel->parsed()) {
            finalize(sel);
            return run_select_bbox(state, sel_src, sel_tgt, sel_candidates);
        }
        if (tr->parsed()) {
            finalize(tr);
            return run_train(state, train_c1, train_c2, train_out);
        }
        if (ed->parsed()) {
            finalize(ed);
            return run_edit(state, edit_ckpt, edit_src, edit_instruction, edit_out, edit_mllm,
                            edit_dump, ed->count("--lambda") ? &edit_lambda : nullptr);
        }
        if (ev->parsed()) {
            finalize(ev);
            return run_evaluate(state, eval_ckpt, eval_manifest, eval_out, eval_judge,
                                eval_method);
        }
        if (rep->parsed()) {
            finalize(rep);
            return run_report(report_paths);
        }
        if (abl->parsed()) {
            finalize(abl);
            return run_ablate(state, abl_corpus, abl_out,
                              abl_bench_n < 0 ? state.bench_n : abl_bench_n);
        }
        throw usage_error("no command given");
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", e.kind_name(), one_line(e.what()).c_str());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: contract: %s\n", one_line(e.what()).c_str());
        return 3;
    }
}
