#include <catch2/catch_amalgamated.hpp>

#include "conceptfaith/importance.hpp"
#include "conceptfaith/procgen.hpp"

using namespace conceptfaith;

namespace {

CAV gap_cav(std::vector<double> v, const std::string& concept_name = "c") {
    CAV cav;
    cav.vector = std::move(v);
    cav.pooling = Pooling::Gap;
    cav.provenance = {concept_name, "real", "toy-cnn", "conv2", "full", 0};
    return cav;
}

GradientSet grads_from_rows(const std::vector<std::vector<double>>& rows, int h, int w, int c) {
    GradientSet set;
    set.key = {"k", "real"};
    set.model_id = "toy-cnn";
    set.layer = "conv2";
    for (const auto& row : rows) {
        Tensor3 t(h, w, c);
        t.data = row;
        set.tensors.push_back(std::move(t));
        set.image_order.push_back("img" + std::to_string(set.image_order.size()));
    }
    return set;
}

ImportanceRecord record(const std::string& concept_name, const std::string& source, const std::string& inputs,
                        double score, ImportanceMethod method = ImportanceMethod::Tcav) {
    ImportanceRecord rec;
    rec.concept_name = concept_name;
    rec.class_name = concept_name + "_class";
    rec.model_id = "toy-cnn";
    rec.layer = "conv2";
    rec.cav_source = source;
    rec.inputs = inputs;
    rec.method = method;
    rec.score = score;
    return rec;
}

}  // namespace

TEST_CASE("tcav score counts positive dot products") {
    const CAV cav = gap_cav({1.0, 0.0});
    // all positive
    CHECK(tcav_score(cav, grads_from_rows({{1, 0}, {2, -1}, {0.5, 9}}, 1, 1, 2)) == 1.0);
    // (+, +, -, -) pattern
    CHECK(tcav_score(cav, grads_from_rows({{1, 0}, {2, 0}, {-1, 0}, {-3, 0}}, 1, 1, 2)) == 0.5);
    // zero dot counts as non-positive
    CHECK(tcav_score(cav, grads_from_rows({{0, 5}, {1, 0}}, 1, 1, 2)) == 0.5);
}

TEST_CASE("tcav score equals the sign-count oracle on random instances") {
    KeyedRng rng(2718);
    for (int trial = 0; trial < 20; ++trial) {
        const int c = 2 + static_cast<int>(rng.next_below(6));
        std::vector<double> v(c);
        for (auto& x : v) x = rng.uniform(-1.0, 1.0);
        const CAV cav = gap_cav(v);
        std::vector<std::vector<double>> rows(100);
        std::size_t positive = 0;
        for (auto& row : rows) {
            row.resize(c);
            for (auto& x : row) x = rng.uniform(-1.0, 1.0);
            double d = 0.0;
            for (int i = 0; i < c; ++i) d += row[i] * v[i];
            if (d > 0.0) ++positive;
        }
        const double expected = static_cast<double>(positive) / 100.0;
        CHECK(tcav_score(cav, grads_from_rows(rows, 1, 1, c)) == expected);
    }
}

TEST_CASE("tcav score is invariant under positive CAV scaling") {
    KeyedRng rng(31);
    std::vector<std::vector<double>> rows(50, std::vector<double>(4));
    for (auto& row : rows)
        for (auto& x : row) x = rng.uniform(-1.0, 1.0);
    const GradientSet grads = grads_from_rows(rows, 1, 1, 4);
    const CAV base = gap_cav({0.3, -0.2, 0.9, 0.1});
    const double s = tcav_score(base, grads);
    for (double lambda : {1e-3, 1.0, 1e3}) {
        CAV scaled = base;
        for (auto& x : scaled.vector) x *= lambda;
        CHECK(tcav_score(scaled, grads) == s);
    }
}

TEST_CASE("tcav pools gradients to match a gap CAV") {
    // gradient varies spatially; gap average is (1, -1)
    Tensor3 g(1, 2, 2);
    g.at(0, 0, 0) = 3.0;
    g.at(0, 1, 0) = -1.0;
    g.at(0, 0, 1) = -3.0;
    g.at(0, 1, 1) = 1.0;
    GradientSet set;
    set.key = {"k", "real"};
    set.model_id = "toy-cnn";
    set.layer = "conv2";
    set.tensors.push_back(g);
    set.image_order.push_back("img0");
    CHECK(tcav_score(gap_cav({1.0, 0.0}), set) == 1.0);
    CHECK(tcav_score(gap_cav({0.0, 1.0}), set) == 0.0);
}

TEST_CASE("concept map normalizations") {
    const CAV cav = gap_cav({1.0, 0.0});

    // uniformly positive response -> all ones
    Tensor3 uniform(2, 2, 2);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) uniform.at(y, x, 0) = 2.5;
    ConceptMap map = concept_map(cav, uniform);
    for (double v : map.values) CHECK(v == 1.0);

    // orthogonal activations -> all zeros
    Tensor3 ortho(2, 2, 2);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) ortho.at(y, x, 1) = 4.0;
    map = concept_map(cav, ortho);
    for (double v : map.values) CHECK(v == 0.0);

    // one location with twice the response: 1.0 there, 0.5 elsewhere
    Tensor3 peaked(1, 3, 2);
    peaked.at(0, 0, 0) = 1.0;
    peaked.at(0, 1, 0) = 2.0;
    peaked.at(0, 2, 0) = 1.0;
    map = concept_map(cav, peaked);
    CHECK(map.at(0, 0) == 0.5);
    CHECK(map.at(0, 1) == 1.0);
    CHECK(map.at(0, 2) == 0.5);

    // range invariant: always within [0,1]
    for (double v : map.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("visual-tcav attribution edge cases") {
    const CAV cav = gap_cav({1.0});

    ActivationSet acts;
    acts.key = {"k", "real"};
    acts.model_id = "toy-cnn";
    acts.layer = "conv2";
    Tensor3 a(2, 2, 1);
    for (auto& v : a.data) v = 1.0;
    acts.tensors.push_back(a);
    acts.image_order.push_back("img0");

    // zero attributions -> zero score
    AttributionMap zero;
    zero.attributions = Tensor3(2, 2, 1);
    CHECK(visual_tcav_attribution(cav, {zero}, acts) == 0.0);

    // all attribution mass inside a full concept map -> exactly one
    AttributionMap inside;
    inside.attributions = Tensor3(2, 2, 1);
    inside.attributions.at(0, 0, 0) = 0.3;
    inside.attributions.at(1, 1, 0) = 0.7;
    CHECK(visual_tcav_attribution(cav, {inside}, acts) == 1.0);

    // all-nonpositive CAV names the concept
    const CAV negative = gap_cav({-1.0}, "grass");
    CHECK_THROWS_WITH(visual_tcav_attribution(negative, {inside}, acts),
                      Catch::Matchers::ContainsSubstring("grass"));
}

TEST_CASE("visual-tcav stays within the unit interval") {
    KeyedRng rng(47);
    const int c = 5, h = 3, w = 3;
    ActivationSet acts;
    acts.key = {"k", "real"};
    acts.model_id = "toy-cnn";
    acts.layer = "conv2";
    std::vector<AttributionMap> igs;
    for (int i = 0; i < 12; ++i) {
        Tensor3 a(h, w, c), ig(h, w, c);
        for (auto& v : a.data) v = rng.uniform(-1.0, 2.0);
        for (auto& v : ig.data) v = rng.uniform(-0.5, 1.0);
        acts.tensors.push_back(std::move(a));
        acts.image_order.push_back("img" + std::to_string(i));
        AttributionMap m;
        m.attributions = std::move(ig);
        igs.push_back(std::move(m));
    }
    std::vector<double> v(c);
    for (auto& x : v) x = rng.uniform(-0.2, 1.0);
    const double s = visual_tcav_attribution(gap_cav(v), igs, acts);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
}

TEST_CASE("importance delta is a symmetric absolute difference") {
    const auto a = record("striped", "gen:mock", "original", 0.7);
    const auto b = record("striped", "real", "original", 0.7);
    CHECK(importance_delta(a, b) == 0.0);

    const auto c = record("striped", "gen:mock", "original", 0.2);
    const auto d = record("striped", "real", "original", 0.5);
    CHECK(importance_delta(c, d) == Catch::Approx(0.3).margin(1e-15));
    CHECK(importance_delta(c, d) == importance_delta(d, c));

    const auto other = record("dotted", "real", "original", 0.5);
    CHECK_THROWS_AS(importance_delta(c, other), ValidationError);
    auto removed = record("striped", "real", "removed", 0.5);
    CHECK_THROWS_AS(importance_delta(c, removed), ValidationError);
}

TEST_CASE("removal delta is signed and antisymmetric in the pair") {
    const auto original = record("striped", "real", "original", 0.6);
    const auto removed = record("striped", "real", "removed", 0.45);
    CHECK(removal_delta(original, removed) == Catch::Approx(0.15).margin(1e-15));

    const auto original_lo = record("striped", "real", "original", 0.45);
    const auto removed_hi = record("striped", "real", "removed", 0.6);
    CHECK(removal_delta(original_lo, removed_hi) == Catch::Approx(-0.15).margin(1e-15));

    CHECK_THROWS_AS(removal_delta(removed, original), ValidationError);  // wrong roles
    const auto gen_removed = record("striped", "gen:mock", "removed", 0.4);
    CHECK_THROWS_AS(removal_delta(original, gen_removed), ValidationError);  // source mismatch
}

TEST_CASE("identity removal gives zero deltas end to end") {
    const fs::path root = fs::temp_directory_path() / "cf_imp_identity";
    fs::remove_all(root);
    fs::create_directories(root / "class");
    for (int i = 0; i < 5; ++i)
        write_pnm((root / "class" / ("i" + zero_pad(i + 1, 3) + ".pgm")).string(),
                  render_texture(TextureFamily::Striped, 600 + i, {32, 1.0}));

    ImageSet originals;
    originals.key = {"striped_class", "real"};
    originals.paths = list_files(root / "class", image_extensions());
    ImageSet removed = originals;  // same files: the identity edit
    removed.key = {"striped", "removed"};

    ToyCnnConfig cfg;
    cfg.class_names = {"striped_class", "dotted_class", "plain_class"};
    ToyCnnAdapter adapter{ToyCnn(cfg)};

    CHECK(probability_drop(adapter, "striped_class", originals, removed) == 0.0);

    const ActivationSet real_acts = adapter.extract_activations("conv2", originals, 1);
    ActivationSet neg_acts = real_acts;  // any anchor works for this check
    for (auto& t : neg_acts.tensors)
        for (auto& v : t.data) v += 0.25;
    const CAV cav = compute_cav_dom(real_acts, neg_acts, Pooling::Gap);

    const ImportanceRecord before =
        concept_importance(cav, originals, adapter, "conv2", "striped_class", ImportanceMethod::Tcav);
    const ImportanceRecord after =
        concept_importance(cav, removed, adapter, "conv2", "striped_class", ImportanceMethod::Tcav);
    CHECK(before.inputs == "original");
    CHECK(after.inputs == "removed");
    CHECK(removal_delta(before, after) == 0.0);

    fs::remove_all(root);
}

TEST_CASE("probability drop validates alignment and class names") {
    ToyCnnConfig cfg;
    cfg.class_names = {"a", "b"};
    ToyCnnAdapter adapter{ToyCnn(cfg)};
    ImageSet x, y;
    x.key = {"a", "real"};
    x.paths = {"one.pgm", "two.pgm"};
    y.key = {"c", "removed"};
    y.paths = {"one.pgm"};
    CHECK_THROWS_AS(probability_drop(adapter, "a", x, y), ValidationError);
    y.paths = {"one.pgm", "two.pgm"};
    CHECK_THROWS_AS(probability_drop(adapter, "zebra", x, y), ValidationError);
}

TEST_CASE("concept importance rejects an empty class set") {
    ToyCnnConfig cfg;
    cfg.class_names = {"a", "b"};
    ToyCnnAdapter adapter{ToyCnn(cfg)};
    ImageSet empty;
    empty.key = {"a", "real"};
    const CAV cav = gap_cav({1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0});
    CHECK_THROWS_AS(concept_importance(cav, empty, adapter, "conv2", "a", ImportanceMethod::Tcav),
                    ValidationError);
}
