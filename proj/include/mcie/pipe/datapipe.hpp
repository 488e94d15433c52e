#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcie/editor/editor.hpp"
#include "mcie/enc/encoders.hpp"
#include "mcie/instr/lexicon.hpp"
#include "mcie/instr/types.hpp"
#include "mcie/pipe/scene.hpp"

namespace mcie::pipe {

constexpr int kMaxEditSubs = 4;

// One source/target scene pair with its ground-truth complex instruction.
// Sub-instruction boxes come from construction, not from grounding rules,
// and the target differs from the source only inside their union.
struct CorpusSample {
    Scene src, tgt;
    std::vector<EditOp> edits;
    instr::ComplexInstruction ins;
};

// Per-sample streams are derived from seed, so sample i is reproducible
// independent of n_samples. Edits reference the source state and touch
// pairwise disjoint boxes; min_subs tightens the 1..max_subs draw.
std::vector<CorpusSample> generate_synthetic_corpus(int n_samples, int max_subs,
                                                    std::uint64_t seed, int min_subs = 1);

editor::TrainSample to_train_sample(const CorpusSample& sample);
std::vector<editor::TrainSample> render_corpus(const std::vector<CorpusSample>& corpus);

// n single edits over an evolving scene; scenes holds the n+1 states and
// edits[j].object_id tracks lineage (Change keeps an id alive, Remove
// retires it, Add mints one). Later turns may revisit an object, so
// windows of this data can conflict, unlike generate_synthetic_corpus.
struct MultiTurnRecord {
    std::string id;
    std::vector<std::string> images;  // n + 1 refs
    std::vector<instr::SubInstruction> turns;
};

struct SyntheticMultiTurn {
    MultiTurnRecord record;
    std::vector<Scene> scenes;
    std::vector<EditOp> edits;
};

std::vector<SyntheticMultiTurn> generate_multiturn(int n_records, int min_turns, int max_turns,
                                                   std::uint64_t seed);

// One training pair cut from a multi-turn record: turns [window_start,
// window_start + window_len) merged into a single complex instruction.
struct ComplexEditSample {
    std::string src_image, tgt_image;
    instr::ComplexInstruction ins;
    std::string record_id;
    int window_start = 0, window_len = 0;
};

// Every contiguous window of length 2..n, n(n-1)/2 in total, ordered by
// start then length. Requires |images| == |turns| + 1 and n >= 2.
std::vector<ComplexEditSample> expand_multiturn(const MultiTurnRecord& record);

// Intersection over union of two boxes; 0 when either has zero area.
double box_iou(const instr::BBox& a, const instr::BBox& b);

struct ConflictReport {
    bool conflict = false;
    int first = -1, second = -1;  // offending sub indices
    std::string shared_noun;
};

// Deterministic screen: two subs conflict when their boxes overlap with
// IoU > 0.3 and their noun phrases share a token (verbs, articles,
// number words, and palette color adjectives do not count). Approximates
// "the same object is modified twice".
ConflictReport detect_conflicts(const instr::ComplexInstruction& ins, const instr::Lexicon& lex);

// Exterior-preservation score per candidate: both images are zeroed inside
// the box, embedded, and compared by cosine similarity.
std::vector<double> bbox_scores(const io::Image& src, const io::Image& tgt,
                                const std::vector<instr::BBox>& candidates,
                                const enc::Embedder& scorer);

// Picks the candidate box whose exterior changed least. Scores within
// 1e-9 of the maximum count as tied and the lowest index wins; cosine
// scores carry ulp-level noise, so exact comparison would break ties
// arbitrarily.
int select_bbox(const io::Image& src, const io::Image& tgt,
                const std::vector<instr::BBox>& candidates, const enc::Embedder& scorer);

struct QualityScores {
    bool instruction_consistent = false;
    int image_quality = 0;  // 1..5
    int complexity = 0;     // 1..5
};

// Keep gate: consistent and both scores strictly above 3.
bool passes_filter(const QualityScores& scores);

// One JSON line per entry: src, tgt, instruction, subs, provenance, and
// scores when present. Image paths are stored relative to the manifest.
struct ManifestEntry {
    std::string src, tgt;
    instr::ComplexInstruction ins;
    std::string provenance;
    bool has_scores = false;
    QualityScores scores;
};

std::vector<ManifestEntry> postprocess_filter(const std::vector<ManifestEntry>& entries);

void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> load_manifest(const std::string& path);

// Renders a corpus to <dir>/sampleNNNNN.{src,tgt}.ppm plus
// <dir>/manifest.jsonl, and loads such a directory back into memory.
std::string write_corpus(const std::string& dir, const std::vector<CorpusSample>& corpus,
                         const std::string& provenance);
std::vector<editor::TrainSample> load_corpus(const std::string& manifest_path);

}  // namespace mcie::pipe
