#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "mcie/enc/encoders.hpp"
#include "mcie/instr/lexicon.hpp"
#include "mcie/pipe/datapipe.hpp"

using namespace mcie;
using namespace mcie::pipe;

namespace fs = std::filesystem;

namespace {

const instr::Lexicon& lex() {
    static instr::Lexicon l = instr::Lexicon::defaults();
    return l;
}

bool center_in(const instr::BBox& box, int r, int c, int h, int w) {
    return box.contains((c + 0.5) / w, (r + 0.5) / h);
}

bool images_equal(const io::Image& a, const io::Image& b) {
    return a.h == b.h && a.w == b.w && a.c == b.c && a.data == b.data;
}

// Window enumeration oracle: collect (start, len) by set semantics.
std::set<std::pair<int, int>> brute_force_windows(int n) {
    std::set<std::pair<int, int>> wins;
    for (int start = 0; start < n; ++start)
        for (int stop = start + 2; stop <= n; ++stop) wins.insert({start, stop - start});
    return wins;
}

MultiTurnRecord dummy_record(int n) {
    MultiTurnRecord rec;
    rec.id = "dummy";
    for (int j = 0; j < n; ++j) {
        instr::SubInstruction s;
        s.text = "remove the red square";
        s.op = instr::OpType::Remove;
        s.bbox = {0.0, 0.0, 0.25, 0.25};
        s.index = j;
        rec.turns.push_back(s);
    }
    for (int j = 0; j <= n; ++j) rec.images.push_back("im" + std::to_string(j) + ".ppm");
    return rec;
}

std::string temp_dir(const char* tag) {
    fs::path p = fs::temp_directory_path() / (std::string("mcie_datapipe_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("palette colors are 8-bit exact and uniquely named") {
    CHECK(palette().size() == 8);
    std::set<std::string> names;
    for (const PaletteColor& c : palette()) {
        names.insert(c.name);
        for (double v : {c.r, c.g, c.b}) {
            bool representable = v == 0.0 || v == 1.0 || v == 128.0 / 255.0;
            CHECK(representable);
        }
    }
    CHECK(names.size() == 8);
    CHECK(palette_color("red").r == 1.0);
    CHECK_THROWS_AS((void)palette_color("mauve"), Error);
    CHECK(is_palette_color("cyan"));
    CHECK_FALSE(is_palette_color("car"));
}

TEST_CASE("square rendering fills exactly the covered cells") {
    Scene scene;
    scene.background = "gray";
    scene.objects.push_back({"square", "red", {0.25, 0.25, 0.5, 0.75}, 0});
    io::Image img = render_scene(scene);
    const PaletteColor& red = palette_color("red");
    const PaletteColor& bg = palette_color("gray");
    for (int r = 0; r < 16; ++r) {
        for (int c = 0; c < 16; ++c) {
            bool inside = center_in(scene.objects[0].bbox, r, c, 16, 16);
            const PaletteColor& want = inside ? red : bg;
            CHECK(img.at(r, c, 0) == want.r);
            CHECK(img.at(r, c, 1) == want.g);
            CHECK(img.at(r, c, 2) == want.b);
        }
    }
}

TEST_CASE("circle and triangle stay inside their boxes and cover cells") {
    for (const char* shape : {"circle", "triangle"}) {
        Scene scene;
        scene.background = "gray";
        scene.objects.push_back({shape, "blue", {0.25, 0.25, 0.625, 0.625}, 0});
        io::Image img = render_scene(scene);
        int painted = 0;
        for (int r = 0; r < 16; ++r) {
            for (int c = 0; c < 16; ++c) {
                bool is_blue = img.at(r, c, 2) == 1.0 && img.at(r, c, 0) == 0.0;
                if (is_blue) {
                    ++painted;
                    CHECK(center_in(scene.objects[0].bbox, r, c, 16, 16));
                }
            }
        }
        CHECK(painted >= 4);
        // Strict subset of the 6x6-cell box: the corners stay background.
        CHECK(painted < 36);
    }
}

TEST_CASE("rendered scenes survive a ppm round trip bit for bit") {
    Rng rng(99);
    Scene scene = sample_scene(rng);
    io::Image img = render_scene(scene);
    std::string dir = temp_dir("ppm");
    io::write_ppm(dir + "/scene.ppm", img);
    CHECK(images_equal(io::read_ppm(dir + "/scene.ppm"), img));
    fs::remove_all(dir);
}

TEST_CASE("edit text follows the op templates") {
    EditOp add{instr::OpType::Add, "square", "orange", "", {0, 0, 0.25, 0.25}, 3};
    CHECK(edit_text(add) == "add an orange square");
    add.color = "red";
    CHECK(edit_text(add) == "add a red square");
    EditOp rem{instr::OpType::Remove, "circle", "blue", "", {0, 0, 0.25, 0.25}, 1};
    CHECK(edit_text(rem) == "remove the blue circle");
    EditOp chg{instr::OpType::Change, "triangle", "green", "yellow", {0, 0, 0.25, 0.25}, 2};
    CHECK(edit_text(chg) == "change the green triangle to yellow");
    instr::SubInstruction s = to_sub(chg, 5);
    CHECK(s.index == 5);
    CHECK(s.op == instr::OpType::Change);
    CHECK(s.bbox == chg.bbox);
}

TEST_CASE("apply_edit mutates exactly the targeted object") {
    Rng rng(4);
    Scene scene = sample_scene(rng);
    REQUIRE(scene.objects.size() >= 2);
    const SceneObject first = scene.objects[0];

    EditOp rem{instr::OpType::Remove, first.shape, first.color, "", first.bbox, first.id};
    Scene removed = apply_edit(scene, rem);
    CHECK(removed.objects.size() == scene.objects.size() - 1);
    CHECK(removed.find(first.id) == nullptr);

    EditOp chg{instr::OpType::Change, first.shape, first.color, "magenta", first.bbox, first.id};
    Scene changed = apply_edit(scene, chg);
    CHECK(changed.find(first.id)->color == "magenta");
    CHECK(changed.find(first.id)->bbox == first.bbox);

    EditOp missing{instr::OpType::Remove, "square", "red", "", first.bbox, 999};
    CHECK_THROWS_AS((void)apply_edit(scene, missing), Error);
}

TEST_CASE("synthetic corpus respects sub-count bounds and box disjointness") {
    std::vector<CorpusSample> corpus = generate_synthetic_corpus(40, 4, 2024);
    REQUIRE(corpus.size() == 40);
    bool saw_multi = false;
    for (const CorpusSample& s : corpus) {
        REQUIRE(!s.ins.subs.empty());
        CHECK(s.ins.subs.size() <= 4);
        CHECK(s.ins.subs.size() == s.edits.size());
        saw_multi = saw_multi || s.ins.subs.size() >= 2;
        for (std::size_t i = 0; i < s.ins.subs.size(); ++i) {
            for (std::size_t j = i + 1; j < s.ins.subs.size(); ++j) {
                CHECK_FALSE(s.ins.subs[i].bbox.overlaps(s.ins.subs[j].bbox));
            }
        }
        ConflictReport report = detect_conflicts(s.ins, lex());
        CHECK_FALSE(report.conflict);
    }
    CHECK(saw_multi);

    for (const CorpusSample& s : generate_synthetic_corpus(10, 4, 7, 2)) {
        CHECK(s.ins.subs.size() >= 2);
    }
    CHECK_THROWS_AS((void)generate_synthetic_corpus(1, 5, 7), Error);
    CHECK_THROWS_AS((void)generate_synthetic_corpus(1, 0, 7), Error);
    CHECK_THROWS_AS((void)generate_synthetic_corpus(-1, 2, 7), Error);
}

TEST_CASE("target scenes differ from sources only inside the edit union") {
    for (const CorpusSample& s : generate_synthetic_corpus(25, 4, 31337)) {
        io::Image src = render_scene(s.src);
        io::Image tgt = render_scene(s.tgt);
        for (const instr::SubInstruction& sub : s.ins.subs) {
            double inside_diff = 0.0;
            for (int r = 0; r < src.h; ++r)
                for (int c = 0; c < src.w; ++c)
                    if (center_in(sub.bbox, r, c, src.h, src.w))
                        for (int ch = 0; ch < 3; ++ch)
                            inside_diff += std::abs(src.at(r, c, ch) - tgt.at(r, c, ch));
            CHECK(inside_diff > 0.0);
        }
        for (int r = 0; r < src.h; ++r) {
            for (int c = 0; c < src.w; ++c) {
                bool in_union = false;
                for (const instr::SubInstruction& sub : s.ins.subs)
                    in_union = in_union || center_in(sub.bbox, r, c, src.h, src.w);
                if (in_union) continue;
                for (int ch = 0; ch < 3; ++ch) CHECK(src.at(r, c, ch) == tgt.at(r, c, ch));
            }
        }
    }
}

TEST_CASE("corpus edits reference the source scene state") {
    for (const CorpusSample& s : generate_synthetic_corpus(30, 4, 555)) {
        CHECK(s.src.background == s.tgt.background);
        for (const SceneObject& o : s.src.objects) CHECK(o.color != s.src.background);
        for (const EditOp& e : s.edits) {
            if (e.op == instr::OpType::Add) {
                CHECK(s.src.find(e.object_id) == nullptr);
                const SceneObject* added = s.tgt.find(e.object_id);
                REQUIRE(added != nullptr);
                CHECK(added->shape == e.shape);
                CHECK(added->color == e.color);
                CHECK(added->bbox == e.bbox);
                CHECK(e.color != s.src.background);
            } else {
                const SceneObject* target = s.src.find(e.object_id);
                REQUIRE(target != nullptr);
                CHECK(target->shape == e.shape);
                CHECK(target->color == e.color);
                CHECK(target->bbox == e.bbox);
                if (e.op == instr::OpType::Change) {
                    CHECK(e.new_color != e.color);
                    CHECK(e.new_color != s.src.background);
                    CHECK(s.tgt.find(e.object_id)->color == e.new_color);
                } else {
                    CHECK(s.tgt.find(e.object_id) == nullptr);
                }
            }
        }
        std::string joined;
        for (std::size_t i = 0; i < s.ins.subs.size(); ++i) {
            if (i) joined += "; ";
            joined += s.ins.subs[i].text;
            CHECK(s.ins.subs[i].index == static_cast<int>(i));
        }
        CHECK(s.ins.raw_text == joined);
    }
}

TEST_CASE("corpus generation is reproducible and prefix-stable") {
    std::vector<CorpusSample> a = generate_synthetic_corpus(12, 3, 777);
    std::vector<CorpusSample> b = generate_synthetic_corpus(12, 3, 777);
    std::vector<CorpusSample> prefix = generate_synthetic_corpus(5, 3, 777);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].ins.raw_text == b[i].ins.raw_text);
        CHECK(images_equal(render_scene(a[i].src), render_scene(b[i].src)));
        CHECK(images_equal(render_scene(a[i].tgt), render_scene(b[i].tgt)));
    }
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        CHECK(prefix[i].ins.raw_text == a[i].ins.raw_text);
        CHECK(images_equal(render_scene(prefix[i].src), render_scene(a[i].src)));
    }
    CHECK(generate_synthetic_corpus(8, 3, 778)[0].ins.raw_text != a[0].ins.raw_text);
}

TEST_CASE("multi-turn expansion matches the brute-force window set") {
    for (int n = 2; n <= 8; ++n) {
        MultiTurnRecord rec = dummy_record(n);
        std::vector<ComplexEditSample> out = expand_multiturn(rec);
        CHECK(static_cast<int>(out.size()) == n * (n - 1) / 2);
        std::set<std::pair<int, int>> got;
        for (const ComplexEditSample& s : out) {
            got.insert({s.window_start, s.window_len});
            CHECK(s.src_image == rec.images[static_cast<std::size_t>(s.window_start)]);
            CHECK(s.tgt_image ==
                  rec.images[static_cast<std::size_t>(s.window_start + s.window_len)]);
            CHECK(static_cast<int>(s.ins.subs.size()) == s.window_len);
            for (int j = 0; j < s.window_len; ++j) CHECK(s.ins.subs[static_cast<std::size_t>(j)].index == j);
        }
        CHECK(got == brute_force_windows(n));
    }
}

TEST_CASE("expansion length histogram for four and six turns") {
    std::map<int, int> hist4;
    for (const ComplexEditSample& s : expand_multiturn(dummy_record(4))) ++hist4[s.window_len];
    CHECK(hist4 == std::map<int, int>{{2, 3}, {3, 2}, {4, 1}});

    std::map<int, int> hist6;
    std::vector<ComplexEditSample> out6 = expand_multiturn(dummy_record(6));
    for (const ComplexEditSample& s : out6) ++hist6[s.window_len];
    CHECK(out6.size() == 15);
    CHECK(hist6 == std::map<int, int>{{2, 5}, {3, 4}, {4, 3}, {5, 2}, {6, 1}});
}

TEST_CASE("expansion rejects malformed records") {
    MultiTurnRecord one = dummy_record(2);
    one.turns.pop_back();
    CHECK_THROWS_AS((void)expand_multiturn(one), Error);
    MultiTurnRecord bad = dummy_record(3);
    bad.images.pop_back();
    CHECK_THROWS_AS((void)expand_multiturn(bad), Error);
}

TEST_CASE("window instructions concatenate turn texts in order") {
    std::vector<SyntheticMultiTurn> recs = generate_multiturn(3, 3, 4, 11);
    for (const SyntheticMultiTurn& rec : recs) {
        CHECK(rec.scenes.size() == rec.record.turns.size() + 1);
        CHECK(rec.record.images.size() == rec.record.turns.size() + 1);
        // Re-applying the edits reproduces the stored scene states.
        Scene cur = rec.scenes.front();
        for (std::size_t j = 0; j < rec.edits.size(); ++j) {
            cur = apply_edit(cur, rec.edits[j]);
            CHECK(images_equal(render_scene(cur), render_scene(rec.scenes[j + 1])));
        }
        for (const ComplexEditSample& s : expand_multiturn(rec.record)) {
            std::string joined;
            for (int j = 0; j < s.window_len; ++j) {
                if (j) joined += "; ";
                joined += rec.record.turns[static_cast<std::size_t>(s.window_start + j)].text;
            }
            CHECK(s.ins.raw_text == joined);
            CHECK(s.record_id == rec.record.id);
        }
    }
}

TEST_CASE("box iou agrees with closed-form cases") {
    instr::BBox a{0.0, 0.0, 1.0, 0.5};
    CHECK(box_iou(a, a) == 1.0);
    CHECK(box_iou(a, {0.0, 0.5, 1.0, 1.0}) == 0.0);
    CHECK(box_iou(a, {0.0, 0.2, 1.0, 0.7}) == doctest::Approx(0.3 / 0.7).epsilon(1e-12));
    CHECK(box_iou(a, {0.0, 0.35, 1.0, 0.85}) == doctest::Approx(0.15 / 0.85).epsilon(1e-12));
    CHECK(box_iou({0.1, 0.1, 0.1, 0.9}, {0.0, 0.0, 1.0, 1.0}) == 0.0);
    instr::BBox b{0.25, 0.0, 0.75, 0.5};
    CHECK(box_iou(a, b) == box_iou(b, a));
}

TEST_CASE("conflict screen pairs overlapping boxes with a shared noun") {
    instr::BBox box{0.1, 0.1, 0.4, 0.4};
    instr::ComplexInstruction ins;
    ins.subs.push_back({"change the car to red", instr::OpType::Change, box, 0});
    ins.subs.push_back({"remove the car", instr::OpType::Remove, box, 1});
    ConflictReport report = detect_conflicts(ins, lex());
    CHECK(report.conflict);
    CHECK(report.first == 0);
    CHECK(report.second == 1);
    CHECK(report.shared_noun == "car");

    ins.subs[1].text = "remove the tree";
    CHECK_FALSE(detect_conflicts(ins, lex()).conflict);

    ins.subs[1].text = "remove the car";
    ins.subs[1].bbox = {0.6, 0.6, 0.9, 0.9};
    CHECK_FALSE(detect_conflicts(ins, lex()).conflict);

    // Boxes overlapping with IoU below the 0.3 bar do not pair up.
    ins.subs[0].bbox = {0.0, 0.0, 1.0, 0.5};
    ins.subs[1].bbox = {0.0, 0.35, 1.0, 0.85};
    CHECK_FALSE(detect_conflicts(ins, lex()).conflict);
    ins.subs[1].bbox = {0.0, 0.2, 1.0, 0.7};
    CHECK(detect_conflicts(ins, lex()).conflict);
}

TEST_CASE("shared color adjectives alone do not flag a conflict") {
    instr::BBox box{0.1, 0.1, 0.4, 0.4};
    instr::ComplexInstruction ins;
    ins.subs.push_back({"add a red square", instr::OpType::Add, box, 0});
    ins.subs.push_back({"remove the red circle", instr::OpType::Remove, box, 1});
    CHECK_FALSE(detect_conflicts(ins, lex()).conflict);
    ins.subs[1].text = "remove the red square";
    CHECK(detect_conflicts(ins, lex()).conflict);
    CHECK(detect_conflicts(ins, lex()).shared_noun == "square");
}

TEST_CASE("conflict screen tracks object lineage on expanded windows") {
    std::vector<SyntheticMultiTurn> recs = generate_multiturn(40, 2, 5, 90210);
    int checked = 0, agreed = 0, truth_conflicts = 0;
    for (const SyntheticMultiTurn& rec : recs) {
        for (const ComplexEditSample& s : expand_multiturn(rec.record)) {
            if (checked == 100) break;
            std::set<int> ids;
            bool truth = false;
            for (int j = 0; j < s.window_len; ++j) {
                int id = rec.edits[static_cast<std::size_t>(s.window_start + j)].object_id;
                truth = truth || !ids.insert(id).second;
            }
            bool flagged = detect_conflicts(s.ins, lex()).conflict;
            ++checked;
            agreed += truth == flagged ? 1 : 0;
            truth_conflicts += truth ? 1 : 0;
        }
    }
    REQUIRE(checked == 100);
    // Both classes must appear, otherwise agreement is vacuous.
    CHECK(truth_conflicts > 5);
    CHECK(truth_conflicts < 95);
    CHECK(agreed >= 95);
}

TEST_CASE("select_bbox finds the candidate covering the change") {
    enc::ToyEmbedder scorer;
    Rng rng(62);
    Scene scene = sample_scene(rng);
    io::Image src = render_scene(scene);

    std::vector<instr::BBox> candidates = {{0.0, 0.0, 0.25, 0.25},
                                           {0.375, 0.375, 0.625, 0.625},
                                           {0.75, 0.75, 1.0, 1.0}};
    SUBCASE("identical images tie everywhere and pick index 0") {
        CHECK(select_bbox(src, src, candidates, scorer) == 0);
    }
    SUBCASE("single candidate is returned outright") {
        io::Image tgt = src;
        tgt.at(0, 0, 0) = 1.0 - tgt.at(0, 0, 0);
        CHECK(select_bbox(src, tgt, {candidates[0]}, scorer) == 0);
    }
    SUBCASE("the box hiding the whole change wins") {
        for (std::size_t want = 0; want < candidates.size(); ++want) {
            io::Image tgt = src;
            for (int r = 0; r < src.h; ++r)
                for (int c = 0; c < src.w; ++c)
                    if (center_in(candidates[want], r, c, src.h, src.w))
                        tgt.at(r, c, 1) = 1.0 - tgt.at(r, c, 1);
            CHECK(select_bbox(src, tgt, candidates, scorer) == static_cast<int>(want));
        }
    }
    SUBCASE("duplicate best candidates resolve to the lowest index") {
        io::Image tgt = src;
        for (int r = 0; r < src.h; ++r)
            for (int c = 0; c < src.w; ++c)
                if (center_in(candidates[2], r, c, src.h, src.w)) tgt.at(r, c, 1) = 0.37;
        std::vector<instr::BBox> dup = {candidates[0], candidates[2], candidates[2]};
        CHECK(select_bbox(src, tgt, dup, scorer) == 1);
    }
    SUBCASE("salted corpus edits ground to their true box") {
        for (int trial = 0; trial < 20; ++trial) {
            CorpusSample s = generate_synthetic_corpus(1, 1, 4000 + trial).front();
            io::Image a = render_scene(s.src);
            io::Image b = render_scene(s.tgt);
            std::vector<instr::BBox> cands = candidates;
            std::size_t truth = trial % (cands.size() + 1);
            cands.insert(cands.begin() + static_cast<std::ptrdiff_t>(truth),
                         s.ins.subs[0].bbox);
            // Candidate layout may overlap the true box; skip those trials.
            bool disjoint = true;
            for (std::size_t i = 0; i < cands.size(); ++i)
                if (i != truth && cands[i].overlaps(s.ins.subs[0].bbox)) disjoint = false;
            if (!disjoint) continue;
            CHECK(select_bbox(a, b, cands, scorer) == static_cast<int>(truth));
        }
    }
    SUBCASE("contract violations") {
        io::Image small(8, 8, 3);
        CHECK_THROWS_AS((void)select_bbox(src, small, candidates, scorer), Error);
        CHECK_THROWS_AS((void)select_bbox(src, src, {}, scorer), Error);
    }
}

TEST_CASE("quality filter keeps only consistent high scorers") {
    CHECK(passes_filter({true, 4, 4}));
    CHECK(passes_filter({true, 5, 4}));
    CHECK_FALSE(passes_filter({true, 3, 5}));
    CHECK_FALSE(passes_filter({true, 5, 3}));
    CHECK_FALSE(passes_filter({false, 5, 5}));
    CHECK_THROWS_AS((void)passes_filter({true, 6, 4}), Error);
    CHECK_THROWS_AS((void)passes_filter({true, 4, 0}), Error);

    ManifestEntry keep;
    keep.src = "a.ppm";
    keep.tgt = "b.ppm";
    keep.ins.raw_text = "add a red square";
    keep.ins.subs.push_back({"add a red square", instr::OpType::Add, {0, 0, 0.5, 0.5}, 0});
    keep.provenance = "synthetic";
    keep.has_scores = true;
    keep.scores = {true, 4, 5};
    ManifestEntry drop = keep;
    drop.scores = {true, 3, 5};
    ManifestEntry unscored = keep;
    unscored.has_scores = false;

    std::vector<ManifestEntry> kept = postprocess_filter({keep, drop});
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].scores.image_quality == 4);
    CHECK_THROWS_AS((void)postprocess_filter({unscored}), Error);
}

TEST_CASE("manifest round trip preserves every field") {
    std::string dir = temp_dir("manifest");
    ManifestEntry a;
    a.src = "x.src.ppm";
    a.tgt = "x.tgt.ppm";
    a.ins.raw_text = "add a red square; remove the blue circle";
    a.ins.subs.push_back({"add a red square", instr::OpType::Add, {0, 0, 0.25, 0.5}, 0});
    a.ins.subs.push_back({"remove the blue circle", instr::OpType::Remove, {0.5, 0.5, 1, 1}, 1});
    a.provenance = "expanded";
    a.has_scores = true;
    a.scores = {true, 5, 4};
    ManifestEntry b;
    b.src = "y.src.ppm";
    b.tgt = "y.tgt.ppm";
    b.ins.raw_text = "change the green triangle to cyan";
    b.ins.subs.push_back({b.ins.raw_text, instr::OpType::Change, {0.25, 0.25, 0.75, 0.75}, 0});
    b.provenance = "synthetic";

    std::string path = dir + "/manifest.jsonl";
    save_manifest(path, {a, b});
    std::vector<ManifestEntry> back = load_manifest(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].src == a.src);
    CHECK(back[0].tgt == a.tgt);
    CHECK(back[0].provenance == "expanded");
    CHECK(back[0].ins.raw_text == a.ins.raw_text);
    REQUIRE(back[0].ins.subs.size() == 2);
    CHECK(back[0].ins.subs[1].op == instr::OpType::Remove);
    CHECK(back[0].ins.subs[1].bbox == a.ins.subs[1].bbox);
    CHECK(back[0].has_scores);
    CHECK(back[0].scores.image_quality == 5);
    CHECK(back[0].scores.complexity == 4);
    CHECK(back[0].scores.instruction_consistent);
    CHECK_FALSE(back[1].has_scores);
    CHECK(back[1].ins.subs[0].op == instr::OpType::Change);

    std::string bytes = slurp(path);
    save_manifest(path, {a, b});
    CHECK(slurp(path) == bytes);

    std::ofstream bad(dir + "/bad.jsonl");
    bad << "{\"src\": \"x\"}\n";
    bad.close();
    CHECK_THROWS_WITH_AS((void)load_manifest(dir + "/bad.jsonl"),
                         doctest::Contains(":1:"), Error);
    CHECK_THROWS_AS((void)load_manifest(dir + "/absent.jsonl"), Error);
    fs::remove_all(dir);
}

TEST_CASE("corpus export is byte-reproducible and loads back") {
    std::vector<CorpusSample> corpus = generate_synthetic_corpus(5, 3, 321);
    std::string dir1 = temp_dir("corpus1");
    std::string dir2 = temp_dir("corpus2");
    std::string m1 = write_corpus(dir1, corpus, "synthetic");
    std::string m2 = write_corpus(dir2, generate_synthetic_corpus(5, 3, 321), "synthetic");
    CHECK(slurp(m1) == slurp(m2));
    for (int i = 0; i < 5; ++i) {
        std::string stem = "sample0000" + std::to_string(i);
        CHECK(slurp(dir1 + "/" + stem + ".src.ppm") == slurp(dir2 + "/" + stem + ".src.ppm"));
        CHECK(slurp(dir1 + "/" + stem + ".tgt.ppm") == slurp(dir2 + "/" + stem + ".tgt.ppm"));
    }
    std::vector<editor::TrainSample> loaded = load_corpus(m1);
    REQUIRE(loaded.size() == corpus.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        CHECK(images_equal(loaded[i].src, render_scene(corpus[i].src)));
        CHECK(images_equal(loaded[i].tgt, render_scene(corpus[i].tgt)));
        CHECK(loaded[i].ins.raw_text == corpus[i].ins.raw_text);
        CHECK(loaded[i].ins.subs.size() == corpus[i].ins.subs.size());
    }
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

TEST_CASE("candidate scores expose what selection ranks") {
    Rng rng(4100);
    Scene scene = sample_scene(rng);
    io::Image src = render_scene(scene);

    std::vector<instr::BBox> candidates = {
        {0.0, 0.0, 0.5, 0.5}, {0.5, 0.0, 1.0, 0.5}, {0.0, 0.5, 0.5, 1.0}};

    // Change pixels inside candidate 1 only.
    io::Image tgt = src;
    for (int r = 0; r < src.h; ++r) {
        for (int c = 0; c < src.w; ++c) {
            if (!center_in(candidates[1], r, c, src.h, src.w)) continue;
            for (int ch = 0; ch < 3; ++ch) tgt.at(r, c, ch) = 1.0 - tgt.at(r, c, ch);
        }
    }

    enc::ToyEmbedder scorer;
    std::vector<double> scores = bbox_scores(src, tgt, candidates, scorer);
    REQUIRE(scores.size() == candidates.size());
    int best = select_bbox(src, tgt, candidates, scorer);
    CHECK(best == 1);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        CHECK(scores[i] <= scores[static_cast<std::size_t>(best)]);
        CHECK(scores[i] >= -1.0);
        CHECK(scores[i] <= 1.0 + 1e-12);
    }
    // Zeroing candidate 1 removes every difference, so its score is unity.
    CHECK(scores[1] == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS((void)bbox_scores(src, tgt, {}, scorer), Error);
}
