#include <catch2/catch_amalgamated.hpp>

#include "conceptfaith/cav.hpp"
#include "conceptfaith/procgen.hpp"

using namespace conceptfaith;

namespace {

ActivationSet make_set(const std::string& id, const std::string& source, int h, int w, int c,
                       const std::vector<std::vector<double>>& rows) {
    ActivationSet set;
    set.key = {id, source};
    set.model_id = "toy-cnn";
    set.layer = "conv2";
    for (const auto& row : rows) {
        Tensor3 t(h, w, c);
        t.data = row;
        set.tensors.push_back(std::move(t));
        set.image_order.push_back(id + "#" + std::to_string(set.image_order.size()));
    }
    return set;
}

// Gaussian cluster around a channel-space mean; spatially constant.
ActivationSet gaussian_set(const std::string& id, const std::vector<double>& mean, double sigma, int n, int h,
                           int w, KeyedRng& rng) {
    std::vector<std::vector<double>> rows;
    const int c = static_cast<int>(mean.size());
    for (int i = 0; i < n; ++i) {
        std::vector<double> channel(mean);
        for (auto& v : channel) {
            const double u1 = std::max(rng.next_double(), 1e-12);
            const double u2 = rng.next_double();
            v += sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.28318530717959 * u2);
        }
        std::vector<double> row(static_cast<std::size_t>(h) * w * c);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch) row[(static_cast<std::size_t>(y) * w + x) * c + ch] = channel[ch];
        rows.push_back(std::move(row));
    }
    return make_set(id, "real", h, w, c, rows);
}

// Elementwise mean-difference oracle, independent of the pooling helpers.
std::vector<double> dom_oracle(const ActivationSet& pos, const ActivationSet& neg, Pooling pooling) {
    auto pool = [&](const Tensor3& t) {
        if (pooling == Pooling::Flatten) return t.data;
        std::vector<double> out(t.c, 0.0);
        for (int y = 0; y < t.h; ++y)
            for (int x = 0; x < t.w; ++x)
                for (int ch = 0; ch < t.c; ++ch) out[ch] += t.at(y, x, ch);
        for (auto& v : out) v /= t.h * t.w;
        return out;
    };
    std::vector<double> acc;
    for (const auto& t : pos.tensors) {
        const auto row = pool(t);
        if (acc.empty()) acc.assign(row.size(), 0.0);
        for (std::size_t i = 0; i < row.size(); ++i) acc[i] += row[i];
    }
    for (auto& v : acc) v /= static_cast<double>(pos.tensors.size());
    std::vector<double> negacc(acc.size(), 0.0);
    for (const auto& t : neg.tensors) {
        const auto row = pool(t);
        for (std::size_t i = 0; i < row.size(); ++i) negacc[i] += row[i];
    }
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] -= negacc[i] / static_cast<double>(neg.tensors.size());
    return acc;
}

ActivationSet random_set(const std::string& id, int n, int h, int w, int c, KeyedRng& rng) {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < n; ++i) {
        std::vector<double> row(static_cast<std::size_t>(h) * w * c);
        for (auto& v : row) v = rng.uniform(-1.0, 1.0);
        rows.push_back(std::move(row));
    }
    return make_set(id, "real", h, w, c, rows);
}

}  // namespace

TEST_CASE("difference of means on singletons is p - q") {
    const ActivationSet pos = make_set("c", "real", 1, 1, 3, {{1.0, 2.0, 3.0}});
    const ActivationSet neg = make_set("neg", "real", 1, 1, 3, {{0.5, 0.5, 4.0}});
    const CAV cav = compute_cav_dom(pos, neg, Pooling::Gap);
    CHECK(cav.vector == std::vector<double>{0.5, 1.5, -1.0});
    CHECK(cav.provenance.concept_name == "c");
}

TEST_CASE("equal means produce a zero-norm error, never a vector") {
    const ActivationSet pos = make_set("c", "real", 1, 1, 2, {{1.0, 2.0}, {3.0, 4.0}});
    const ActivationSet neg = make_set("neg", "real", 1, 1, 2, {{3.0, 4.0}, {1.0, 2.0}});
    CHECK_THROWS_WITH(compute_cav_dom(pos, neg, Pooling::Gap),
                      Catch::Matchers::ContainsSubstring("zero-norm"));
}

TEST_CASE("difference of means matches the brute-force oracle on random fixtures") {
    KeyedRng rng(314159);
    for (int trial = 0; trial < 30; ++trial) {
        const int n_pos = 2 + static_cast<int>(rng.next_below(15));
        const int n_neg = 2 + static_cast<int>(rng.next_below(15));
        const int c = 1 + static_cast<int>(rng.next_below(8));
        const int h = 1 + static_cast<int>(rng.next_below(3));
        const int w = 1 + static_cast<int>(rng.next_below(3));
        const ActivationSet pos = random_set("p", n_pos, h, w, c, rng);
        const ActivationSet neg = random_set("n", n_neg, h, w, c, rng);
        for (Pooling pooling : {Pooling::Gap, Pooling::Flatten}) {
            const CAV cav = compute_cav_dom(pos, neg, pooling);
            const std::vector<double> expected = dom_oracle(pos, neg, pooling);
            REQUIRE(cav.vector.size() == expected.size());
            for (std::size_t i = 0; i < expected.size(); ++i) {
                const double denom = std::max(std::abs(expected[i]), 1e-30);
                CHECK(std::abs(cav.vector[i] - expected[i]) / denom < 1e-9);
            }
        }
    }
}

TEST_CASE("shape and provenance mismatches are rejected") {
    const ActivationSet a = make_set("c", "real", 1, 1, 2, {{1.0, 2.0}});
    ActivationSet b = make_set("n", "real", 1, 2, 2, {{1.0, 2.0, 3.0, 4.0}});
    CHECK_THROWS_AS(compute_cav_dom(a, b, Pooling::Flatten), ValidationError);
    b = make_set("n", "real", 1, 1, 2, {{0.0, 0.0}});
    b.layer = "conv1";
    CHECK_THROWS_AS(compute_cav_dom(a, b, Pooling::Gap), ValidationError);
}

TEST_CASE("cosine similarity basics") {
    auto cav_of = [](std::vector<double> v) {
        CAV cav;
        cav.vector = std::move(v);
        cav.pooling = Pooling::Gap;
        cav.provenance = {"c", "real", "toy-cnn", "conv2", "full", 0};
        return cav;
    };
    const CAV v = cav_of({0.3, -0.7, 2.0});
    CHECK(cosine_similarity(v, v) == Catch::Approx(1.0).margin(1e-15));
    CHECK(cosine_similarity(cav_of({1, 0}), cav_of({0, 1})) == 0.0);
    CHECK(cosine_similarity(cav_of({1, 1}), cav_of({1, 0})) ==
          Catch::Approx(0.70710678118654752).margin(1e-9));

    // symmetry is exact
    const CAV a = cav_of({0.2, 1.4, -0.3});
    const CAV b = cav_of({-1.0, 0.4, 0.9});
    CHECK(cosine_similarity(a, b) == cosine_similarity(b, a));

    // scale invariance within 1e-12
    for (double lambda : {1e-3, 1.0, 1e3}) {
        CAV scaled = a;
        for (auto& x : scaled.vector) x *= lambda;
        CHECK(std::abs(cosine_similarity(scaled, b) - cosine_similarity(a, b)) < 1e-12);
    }

    CAV mixed = b;
    mixed.pooling = Pooling::Flatten;
    CHECK_THROWS_AS(cosine_similarity(a, mixed), ValidationError);
}

TEST_CASE("alignment of a set with itself is exactly one") {
    KeyedRng rng(8);
    const ActivationSet real = random_set("c", 6, 2, 2, 4, rng);
    const ActivationSet neg = random_set("n", 6, 2, 2, 4, rng);
    ActivationSet gen = real;
    gen.key = {"c", "gen:mock"};
    CHECK(representation_alignment(gen, real, neg, Pooling::Gap) == Catch::Approx(1.0).margin(1e-15));
    CHECK(representation_alignment(gen, real, neg, Pooling::Flatten) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("alignment of orthogonally rotated clusters vanishes as noise does") {
    KeyedRng rng(9);
    const int c = 6;
    std::vector<double> real_mean(c, 0.0), gen_mean(c, 0.0), neg_mean(c, 0.0);
    real_mean[0] = 1.0;  // rotated 90 degrees from gen around the neg mean
    gen_mean[1] = 1.0;
    for (double sigma : {0.3, 0.03}) {
        const ActivationSet real = gaussian_set("c", real_mean, sigma, 40, 1, 1, rng);
        ActivationSet gen = gaussian_set("c", gen_mean, sigma, 40, 1, 1, rng);
        gen.key = {"c", "gen:mock"};
        const ActivationSet neg = gaussian_set("neg", neg_mean, sigma, 40, 1, 1, rng);
        const double rho = std::abs(representation_alignment(gen, real, neg, Pooling::Gap));
        if (sigma == 0.3) CHECK(rho < 0.5);
        if (sigma == 0.03) CHECK(rho < 0.05);
    }
}

TEST_CASE("scale invariance of alignment under activation scaling") {
    KeyedRng rng(10);
    const ActivationSet real = random_set("c", 5, 2, 2, 3, rng);
    ActivationSet gen = random_set("c", 5, 2, 2, 3, rng);
    gen.key = {"c", "gen:mock"};
    const ActivationSet neg = random_set("n", 5, 2, 2, 3, rng);
    const double base = representation_alignment(gen, real, neg, Pooling::Gap);

    auto scaled = [](ActivationSet set, double lambda) {
        for (auto& t : set.tensors)
            for (auto& v : t.data) v *= lambda;
        return set;
    };
    const double lambda = 37.5;
    const double after = representation_alignment(scaled(gen, lambda), scaled(real, lambda),
                                                  scaled(neg, lambda), Pooling::Gap);
    CHECK(after == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("gap and flatten agree on 1x1 spatial maps") {
    KeyedRng rng(11);
    const ActivationSet pos = random_set("c", 4, 1, 1, 5, rng);
    const ActivationSet neg = random_set("n", 4, 1, 1, 5, rng);
    const CAV g = compute_cav_dom(pos, neg, Pooling::Gap);
    const CAV f = compute_cav_dom(pos, neg, Pooling::Flatten);
    CHECK(g.vector == f.vector);
}

TEST_CASE("intra-similarity of an all-identical set is exactly one with zero spread") {
    std::vector<std::vector<double>> rows(8, std::vector<double>{1.0, 2.0, 3.0});
    const ActivationSet acts = make_set("c", "real", 1, 1, 3, rows);
    const ActivationSet neg = make_set("n", "real", 1, 1, 3, {{0.0, 0.0, 0.0}, {0.2, 0.1, 0.0}});
    const IntraSimilarityCurve curve = intra_similarity_curve(acts, neg, {2, 4}, 5, 123, Pooling::Gap);
    REQUIRE(curve.points.size() == 2);
    for (const auto& pt : curve.points) {
        CHECK(pt.mean == Catch::Approx(1.0).margin(1e-12));
        CHECK(pt.stddev == Catch::Approx(0.0).margin(1e-12));
        CHECK(pt.repeats == 5);
    }
}

TEST_CASE("intra-similarity curves are reproducible under a fixed seed") {
    KeyedRng rng(12);
    const ActivationSet acts = random_set("c", 32, 1, 1, 6, rng);
    const ActivationSet neg = random_set("n", 16, 1, 1, 6, rng);
    const IntraSimilarityCurve a = intra_similarity_curve(acts, neg, {2, 4, 8, 16}, 7, 999, Pooling::Gap);
    const IntraSimilarityCurve b = intra_similarity_curve(acts, neg, {2, 4, 8, 16}, 7, 999, Pooling::Gap);
    REQUIRE(a.points.size() == b.points.size());
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        CHECK(a.points[i].mean == b.points[i].mean);
        CHECK(a.points[i].stddev == b.points[i].stddev);
    }
    const IntraSimilarityCurve c = intra_similarity_curve(acts, neg, {2, 4, 8, 16}, 7, 1000, Pooling::Gap);
    CHECK(a.points[0].mean != c.points[0].mean);
}

TEST_CASE("intra-similarity grows with subset size on gaussian sets") {
    KeyedRng rng(13);
    std::vector<double> mean(16, 0.0);
    mean[0] = 1.0;
    mean[3] = -0.5;
    const ActivationSet acts = gaussian_set("c", mean, 0.6, 128, 1, 1, rng);
    const ActivationSet neg = gaussian_set("n", std::vector<double>(16, 0.0), 0.6, 64, 1, 1, rng);
    const IntraSimilarityCurve curve = intra_similarity_curve(acts, neg, {4, 64}, 40, 77, Pooling::Gap);
    CHECK(curve.points[1].mean > curve.points[0].mean);
    CHECK(curve.points[0].mean < 1.0);
    CHECK(curve.points[1].mean < 1.0);
}

TEST_CASE("intra-similarity validates sizes") {
    KeyedRng rng(14);
    const ActivationSet acts = random_set("c", 10, 1, 1, 3, rng);
    const ActivationSet neg = random_set("n", 4, 1, 1, 3, rng);
    CHECK_THROWS_AS(intra_similarity_curve(acts, neg, {2, 6}, 3, 1, Pooling::Gap), ValidationError);
    CHECK_THROWS_AS(intra_similarity_curve(acts, neg, {4, 2}, 3, 1, Pooling::Gap), ValidationError);
    CHECK_THROWS_AS(intra_similarity_curve(acts, neg, {2, 4}, 0, 1, Pooling::Gap), ValidationError);
    CHECK(default_subset_sizes(64) == std::vector<std::size_t>{2, 4, 8, 16, 32});
    CHECK(default_subset_sizes(50) == std::vector<std::size_t>{2, 4, 8, 16, 25});
}

TEST_CASE("embedding alignment and intra-similarity with the mock embedder") {
    const fs::path root = fs::temp_directory_path() / "cf_cav_clip";
    fs::remove_all(root);
    fs::create_directories(root / "a");
    fs::create_directories(root / "b");
    fs::create_directories(root / "ortho");

    for (int i = 0; i < 3; ++i) {
        const Image img = render_texture(TextureFamily::Striped, 100 + i, {32, 1.0});
        write_pnm((root / "a" / ("i" + std::to_string(i) + ".pgm")).string(), img);
        write_pnm((root / "b" / ("i" + std::to_string(i) + ".pgm")).string(), img);
    }
    // two images whose downsampled embeddings are orthogonal
    Image left(32, 32, 1), right(32, 32, 1);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 16; ++x) {
            left.at(y, x, 0) = 255;
            right.at(y, x + 16, 0) = 255;
        }
    write_pnm((root / "ortho" / "left.pgm").string(), left);
    write_pnm((root / "ortho" / "right.pgm").string(), right);

    MockEmbedder embedder(8);
    ImageSet a, b;
    a.key = {"c", "gen:mock"};
    a.paths = list_files(root / "a", image_extensions());
    b.key = {"c", "real"};
    b.paths = list_files(root / "b", image_extensions());
    CHECK(clip_alignment(a, b, embedder) == Catch::Approx(1.0).margin(1e-12));
    CHECK(clip_intra_similarity(a, embedder) <= 1.0);

    ImageSet lset, rset;
    lset.key = {"l", "real"};
    lset.paths = {(root / "ortho" / "left.pgm").string()};
    rset.key = {"r", "real"};
    rset.paths = {(root / "ortho" / "right.pgm").string()};
    CHECK(clip_alignment(lset, rset, embedder) == Catch::Approx(0.0).margin(1e-12));

    ImageSet both;
    both.key = {"lr", "real"};
    both.paths = {lset.paths[0], rset.paths[0]};
    CHECK(clip_intra_similarity(both, embedder) == Catch::Approx(0.0).margin(1e-12));
    CHECK_THROWS_AS(clip_intra_similarity(lset, embedder), ValidationError);

    fs::remove_all(root);
}

TEST_CASE("identical embeddings give intra-similarity one") {
    const fs::path root = fs::temp_directory_path() / "cf_cav_clip_same";
    fs::remove_all(root);
    fs::create_directories(root);
    const Image img = render_texture(TextureFamily::Dotted, 5, {32, 1.0});
    for (int i = 0; i < 3; ++i) write_pnm((root / ("i" + std::to_string(i) + ".pgm")).string(), img);
    ImageSet set;
    set.key = {"c", "real"};
    set.paths = list_files(root, image_extensions());
    CHECK(clip_intra_similarity(set, MockEmbedder(8)) == Catch::Approx(1.0).margin(1e-12));
    fs::remove_all(root);
}

TEST_CASE("cav store round-trips vectors and provenance") {
    const fs::path dir = fs::temp_directory_path() / "cf_cav_store";
    fs::remove_all(dir);
    CAV cav;
    cav.vector = {0.25, -1.5, 3.25};
    cav.pooling = Pooling::Flatten;
    cav.provenance = {"striped", "gen:mock", "toy-cnn", "conv1", "bootstrap", 42};
    save_cav(dir, cav, "striped_test");
    const CAV back = load_cav(dir, "striped_test");
    CHECK(back.vector == cav.vector);
    CHECK(back.pooling == cav.pooling);
    CHECK(back.provenance.concept_name == "striped");
    CHECK(back.provenance.seed == 42);
    fs::remove_all(dir);
}
