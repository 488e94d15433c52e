#include "mcie/pipe/datapipe.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace fs = std::filesystem;

namespace mcie::pipe {

namespace {

constexpr int kSampleRetries = 20;

std::string zero_pad(int value, int width) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%0*d", width, value);
    return buf;
}

instr::ComplexInstruction merge_subs(const std::vector<instr::SubInstruction>& subs) {
    instr::ComplexInstruction ins;
    for (std::size_t i = 0; i < subs.size(); ++i) {
        instr::SubInstruction s = subs[i];
        s.index = static_cast<int>(i);
        if (i) ins.raw_text += "; ";
        ins.raw_text += s.text;
        ins.subs.push_back(std::move(s));
    }
    return ins;
}

}  // namespace

std::vector<CorpusSample> generate_synthetic_corpus(int n_samples, int max_subs,
                                                    std::uint64_t seed, int min_subs) {
    if (n_samples < 0) throw contract_error("sample count must be non-negative");
    if (min_subs < 1 || max_subs < min_subs || max_subs > kMaxEditSubs) {
        throw contract_error("sub-edit bounds must satisfy 1 <= min <= max <= " +
                             std::to_string(kMaxEditSubs));
    }
    std::vector<CorpusSample> corpus;
    corpus.reserve(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        CorpusSample sample;
        bool built = false;
        for (int attempt = 0; attempt < kSampleRetries && !built; ++attempt) {
            sample = CorpusSample();
            sample.src = sample_scene(rng);
            int k = min_subs + static_cast<int>(rng.uniform_int(
                                   static_cast<std::uint64_t>(max_subs - min_subs + 1)));
            std::vector<int> taken;
            std::vector<instr::BBox> placed;
            int next_id = sample.src.next_id;
            int pending_adds = 0;
            built = true;
            for (int j = 0; j < k; ++j) {
                EditOp edit;
                if (!sample_edit(sample.src, taken, placed, rng, &edit, pending_adds)) {
                    built = false;
                    break;
                }
                if (edit.op == instr::OpType::Add) {
                    edit.object_id = next_id++;
                    ++pending_adds;
                }
                taken.push_back(edit.object_id);
                placed.push_back(edit.bbox);
                sample.edits.push_back(edit);
            }
        }
        if (!built) throw data_error("could not assemble sample " + std::to_string(i));
        sample.tgt = sample.src;
        for (const EditOp& edit : sample.edits) sample.tgt = apply_edit(sample.tgt, edit);
        std::vector<instr::SubInstruction> subs;
        for (std::size_t j = 0; j < sample.edits.size(); ++j) {
            subs.push_back(to_sub(sample.edits[j], static_cast<int>(j)));
        }
        sample.ins = merge_subs(subs);
        corpus.push_back(std::move(sample));
    }
    return corpus;
}

editor::TrainSample to_train_sample(const CorpusSample& sample) {
    return {render_scene(sample.src), render_scene(sample.tgt), sample.ins};
}

std::vector<editor::TrainSample> render_corpus(const std::vector<CorpusSample>& corpus) {
    std::vector<editor::TrainSample> out;
    out.reserve(corpus.size());
    for (const CorpusSample& s : corpus) out.push_back(to_train_sample(s));
    return out;
}

std::vector<SyntheticMultiTurn> generate_multiturn(int n_records, int min_turns, int max_turns,
                                                   std::uint64_t seed) {
    if (n_records < 0) throw contract_error("record count must be non-negative");
    if (min_turns < 2 || max_turns < min_turns || max_turns > instr::kMaxSubs) {
        throw contract_error("turn bounds must satisfy 2 <= min <= max <= " +
                             std::to_string(instr::kMaxSubs));
    }
    std::vector<SyntheticMultiTurn> records;
    records.reserve(static_cast<std::size_t>(n_records));
    for (int i = 0; i < n_records; ++i) {
        Rng rng(derive_seed(seed, 0x6d740000ull + static_cast<std::uint64_t>(i)));
        SyntheticMultiTurn rec;
        rec.record.id = "rec" + zero_pad(i, 5);
        rec.scenes.push_back(sample_scene(rng));
        int n_turns = min_turns + static_cast<int>(rng.uniform_int(
                                      static_cast<std::uint64_t>(max_turns - min_turns + 1)));
        for (int j = 0; j < n_turns; ++j) {
            EditOp edit;
            if (!sample_edit(rec.scenes.back(), {}, {}, rng, &edit)) {
                throw data_error("record " + rec.record.id + " ran out of feasible edits");
            }
            rec.edits.push_back(edit);
            rec.record.turns.push_back(to_sub(edit, j));
            rec.scenes.push_back(apply_edit(rec.scenes.back(), edit));
        }
        for (int j = 0; j <= n_turns; ++j) {
            rec.record.images.push_back(rec.record.id + "/im" + std::to_string(j) + ".ppm");
        }
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<ComplexEditSample> expand_multiturn(const MultiTurnRecord& record) {
    int n = static_cast<int>(record.turns.size());
    if (n < 2) throw data_error("record " + record.id + " needs at least 2 turns");
    if (record.images.size() != record.turns.size() + 1) {
        throw data_error("record " + record.id + " must hold one more image than turns");
    }
    std::vector<ComplexEditSample> out;
    out.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (int start = 0; start < n; ++start) {
        for (int len = 2; start + len <= n; ++len) {
            ComplexEditSample s;
            s.src_image = record.images[static_cast<std::size_t>(start)];
            s.tgt_image = record.images[static_cast<std::size_t>(start + len)];
            s.ins = merge_subs({record.turns.begin() + start, record.turns.begin() + start + len});
            s.record_id = record.id;
            s.window_start = start;
            s.window_len = len;
            out.push_back(std::move(s));
        }
    }
    return out;
}

double box_iou(const instr::BBox& a, const instr::BBox& b) {
    double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    double inter = std::max(0.0, iw) * std::max(0.0, ih);
    double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

namespace {

std::vector<std::string> words_of(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

bool is_article(const std::string& w) { return w == "a" || w == "an" || w == "the"; }

// The tokens of the leading noun phrase with determiners and palette
// color adjectives stripped out.
std::set<std::string> noun_tokens(const std::string& text, const instr::Lexicon& lex) {
    std::set<std::string> nouns;
    for (const std::string& w : words_of(text)) {
        if (lex.is_verb(w) || is_article(w) || lex.number_words.count(w)) continue;
        bool stop = std::find(lex.phrase_stops.begin(), lex.phrase_stops.end(), w) !=
                    lex.phrase_stops.end();
        if (stop) break;
        if (is_palette_color(w)) continue;
        nouns.insert(w);
    }
    return nouns;
}

}  // namespace

ConflictReport detect_conflicts(const instr::ComplexInstruction& ins, const instr::Lexicon& lex) {
    std::vector<std::set<std::string>> nouns;
    nouns.reserve(ins.subs.size());
    for (const instr::SubInstruction& s : ins.subs) nouns.push_back(noun_tokens(s.text, lex));
    for (std::size_t i = 0; i < ins.subs.size(); ++i) {
        for (std::size_t j = i + 1; j < ins.subs.size(); ++j) {
            if (box_iou(ins.subs[i].bbox, ins.subs[j].bbox) <= 0.3) continue;
            for (const std::string& n : nouns[i]) {
                if (nouns[j].count(n)) {
                    return {true, static_cast<int>(i), static_cast<int>(j), n};
                }
            }
        }
    }
    return {};
}

namespace {

io::Image zero_inside(const io::Image& img, const instr::BBox& box) {
    io::Image out = img;
    for (int r = 0; r < img.h; ++r) {
        for (int col = 0; col < img.w; ++col) {
            if (!box.contains((col + 0.5) / img.w, (r + 0.5) / img.h)) continue;
            for (int ch = 0; ch < img.c; ++ch) out.at(r, col, ch) = 0.0;
        }
    }
    return out;
}

double dot(const num::Tensor& a, const num::Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.value()[i] * b.value()[i];
    return s;
}

}  // namespace

std::vector<double> bbox_scores(const io::Image& src, const io::Image& tgt,
                                const std::vector<instr::BBox>& candidates,
                                const enc::Embedder& scorer) {
    if (candidates.empty()) throw data_error("no candidate boxes to select from");
    if (src.h != tgt.h || src.w != tgt.w || src.c != tgt.c) {
        throw data_error("source and target images must share a shape");
    }
    num::NoGradGuard guard;
    std::vector<double> scores;
    scores.reserve(candidates.size());
    for (const instr::BBox& box : candidates) {
        box.validate();
        num::Tensor es = scorer.embed(zero_inside(src, box));
        num::Tensor et = scorer.embed(zero_inside(tgt, box));
        if (es.size() != et.size()) throw contract_error("embedder output sizes differ");
        scores.push_back(dot(es, et));
    }
    return scores;
}

int select_bbox(const io::Image& src, const io::Image& tgt,
                const std::vector<instr::BBox>& candidates, const enc::Embedder& scorer) {
    std::vector<double> scores = bbox_scores(src, tgt, candidates, scorer);
    double best = *std::max_element(scores.begin(), scores.end());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (scores[i] >= best - 1e-9) return static_cast<int>(i);
    }
    return 0;
}

bool passes_filter(const QualityScores& scores) {
    if (scores.image_quality < 1 || scores.image_quality > 5 || scores.complexity < 1 ||
        scores.complexity > 5) {
        throw data_error("quality scores must lie in 1..5");
    }
    return scores.instruction_consistent && scores.image_quality > 3 && scores.complexity > 3;
}

std::vector<ManifestEntry> postprocess_filter(const std::vector<ManifestEntry>& entries) {
    std::vector<ManifestEntry> kept;
    for (const ManifestEntry& e : entries) {
        if (!e.has_scores) throw data_error("cannot filter an unscored entry: " + e.src);
        if (passes_filter(e.scores)) kept.push_back(e);
    }
    return kept;
}

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot open manifest for writing: " + path);
    for (const ManifestEntry& e : entries) {
        nlohmann::json row = instr::to_json(e.ins);
        row["instruction"] = e.ins.raw_text;
        row.erase("raw_text");
        row["src"] = e.src;
        row["tgt"] = e.tgt;
        row["provenance"] = e.provenance;
        if (e.has_scores) {
            row["scores"] = {{"instruction_consistent", e.scores.instruction_consistent},
                             {"image_quality", e.scores.image_quality},
                             {"complexity", e.scores.complexity}};
        }
        out << row.dump() << "\n";
    }
    if (!out) throw data_error("failed writing manifest: " + path);
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open manifest: " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json row;
        try {
            row = nlohmann::json::parse(line);
            ManifestEntry e;
            e.src = row.at("src").get<std::string>();
            e.tgt = row.at("tgt").get<std::string>();
            e.provenance = row.at("provenance").get<std::string>();
            nlohmann::json ij = {{"raw_text", row.at("instruction").get<std::string>()},
                                 {"subs", row.at("subs")}};
            e.ins = instr::instruction_from_json(ij);
            if (row.contains("scores")) {
                const nlohmann::json& s = row.at("scores");
                e.scores.instruction_consistent = s.at("instruction_consistent").get<bool>();
                e.scores.image_quality = s.at("image_quality").get<int>();
                e.scores.complexity = s.at("complexity").get<int>();
                e.has_scores = true;
            }
            entries.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw data_error(path + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return entries;
}

std::string write_corpus(const std::string& dir, const std::vector<CorpusSample>& corpus,
                         const std::string& provenance) {
    fs::create_directories(dir);
    std::vector<ManifestEntry> entries;
    entries.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        std::string stem = "sample" + zero_pad(static_cast<int>(i), 5);
        ManifestEntry e;
        e.src = stem + ".src.ppm";
        e.tgt = stem + ".tgt.ppm";
        e.ins = corpus[i].ins;
        e.provenance = provenance;
        io::write_ppm((fs::path(dir) / e.src).string(), render_scene(corpus[i].src));
        io::write_ppm((fs::path(dir) / e.tgt).string(), render_scene(corpus[i].tgt));
        entries.push_back(std::move(e));
    }
    std::string manifest = (fs::path(dir) / "manifest.jsonl").string();
    save_manifest(manifest, entries);
    return manifest;
}

std::vector<editor::TrainSample> load_corpus(const std::string& manifest_path) {
    fs::path base = fs::path(manifest_path).parent_path();
    std::vector<ManifestEntry> entries = load_manifest(manifest_path);
    std::vector<editor::TrainSample> samples;
    samples.reserve(entries.size());
    for (const ManifestEntry& e : entries) {
        samples.push_back({io::read_ppm((base / e.src).string()),
                           io::read_ppm((base / e.tgt).string()), e.ins});
    }
    return samples;
}

}  // namespace mcie::pipe
