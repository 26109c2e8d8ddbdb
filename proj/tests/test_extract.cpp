#include <catch2/catch_amalgamated.hpp>

#include "conceptfaith/extract.hpp"
#include "conceptfaith/procgen.hpp"

using namespace conceptfaith;

namespace {

struct Corpus {
    fs::path root;

    explicit Corpus(const std::string& tag) {
        root = fs::temp_directory_path() / ("cf_extract_" + tag);
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Corpus() { fs::remove_all(root); }

    ImageSet render_set(const std::string& name, TextureFamily family, int count, std::uint64_t key) const {
        fs::create_directories(root / name);
        for (int i = 0; i < count; ++i)
            write_pnm((root / name / ("img_" + zero_pad(i + 1, 3) + ".pgm")).string(),
                      render_texture(family, hash_combine(key, i), {32, 1.0}));
        ImageSet set;
        set.key = {name, "real"};
        set.paths = list_files(root / name, image_extensions());
        return set;
    }

    ImageSet constant_black(const std::string& name, int count) const {
        fs::create_directories(root / name);
        Image img(32, 32, 1);
        for (int i = 0; i < count; ++i)
            write_pnm((root / name / ("img_" + zero_pad(i + 1, 3) + ".pgm")).string(), img);
        ImageSet set;
        set.key = {name, "real"};
        set.paths = list_files(root / name, image_extensions());
        return set;
    }
};

ToyCnnAdapter make_adapter(bool with_conv3 = true, std::uint64_t seed = 11) {
    ToyCnnConfig cfg;
    cfg.class_names = {"striped_class", "dotted_class", "plain_class"};
    cfg.with_conv3 = with_conv3;
    cfg.init_seed = seed;
    return ToyCnnAdapter(ToyCnn(cfg));
}

}  // namespace

TEST_CASE("toy-cnn activation shapes at both cut points") {
    Corpus corpus("shapes");
    const ImageSet images = corpus.render_set("striped", TextureFamily::Striped, 8, 1);
    ToyCnnAdapter adapter = make_adapter();

    const ActivationSet conv2 = extract_activations(adapter, "conv2", images);
    REQUIRE(conv2.size() == 8);
    CHECK(conv2.tensors[0].h == 8);
    CHECK(conv2.tensors[0].w == 8);
    CHECK(conv2.tensors[0].c == 16);

    const ActivationSet conv1 = extract_activations(adapter, "conv1", images);
    CHECK(conv1.tensors[0].h == 16);
    CHECK(conv1.tensors[0].w == 16);
    CHECK(conv1.tensors[0].c == 8);

    CHECK(conv2.image_order == images.paths);
}

TEST_CASE("constant-black batch yields identical activation rows") {
    Corpus corpus("black");
    const ImageSet images = corpus.constant_black("black", 5);
    ToyCnnAdapter adapter = make_adapter();
    const ActivationSet acts = extract_activations(adapter, "conv2", images);
    for (std::size_t i = 1; i < acts.size(); ++i) CHECK(acts.tensors[i].data == acts.tensors[0].data);
}

TEST_CASE("unknown layer and bad class are rejected") {
    Corpus corpus("badlayer");
    const ImageSet images = corpus.render_set("x", TextureFamily::Dotted, 2, 2);
    ToyCnnAdapter adapter = make_adapter();
    CHECK_THROWS_WITH(extract_activations(adapter, "conv99", images),
                      Catch::Matchers::ContainsSubstring("conv99"));
    CHECK_THROWS_AS(class_probability(adapter, images, 17), ValidationError);
}

TEST_CASE("decode failure names the file") {
    Corpus corpus("decode");
    fs::create_directories(corpus.root / "bad");
    write_file(corpus.root / "bad" / "broken.pgm", "not an image");
    ImageSet set;
    set.key = {"bad", "real"};
    set.paths = {(corpus.root / "bad" / "broken.pgm").string()};
    ToyCnnAdapter adapter = make_adapter();
    CHECK_THROWS_WITH(extract_activations(adapter, "conv2", set),
                      Catch::Matchers::ContainsSubstring("broken.pgm"));
}

TEST_CASE("class probabilities are a softmax") {
    Corpus corpus("probs");
    const ImageSet images = corpus.render_set("striped", TextureFamily::Striped, 4, 3);
    ToyCnnAdapter adapter = make_adapter();
    for (const auto& path : images.paths) {
        const auto p = adapter.probabilities_for(path);
        double total = 0.0;
        for (double v : p) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            total += v;
        }
        CHECK(total == Catch::Approx(1.0).margin(1e-12));
    }
    const ProbabilitySeries series = class_probability(adapter, images, 0);
    CHECK(series.values.size() == 4);
    CHECK(series.mean == Catch::Approx(mean_of(series.values)));
}

TEST_CASE("identical images give a zero-variance probability series") {
    Corpus corpus("novar");
    const ImageSet images = corpus.constant_black("same", 5);
    ToyCnnAdapter adapter = make_adapter();
    const ProbabilitySeries series = class_probability(adapter, images, 1);
    CHECK(stddev_of(series.values) == 0.0);
}

TEST_CASE("linear-head gradient is the fc weight over the pooling factor") {
    Corpus corpus("linear");
    const ImageSet images = corpus.render_set("striped", TextureFamily::Striped, 1, 4);
    ToyCnnAdapter adapter = make_adapter(/*with_conv3=*/false, 21);
    const ToyCnn& net = adapter.net();

    const GradientSet grads = class_gradients_at_layer(adapter, "conv2", images, 1);
    const Tensor3& g = grads.tensors[0];
    const double pool = 1.0 / (g.h * g.w);
    for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x)
            for (int c = 0; c < g.c; ++c)
                CHECK(g.at(y, x, c) == Catch::Approx(net.fc_w[1 * 16 + c] * pool).margin(1e-15));
}

TEST_CASE("identical images yield identical gradients") {
    Corpus corpus("gradsame");
    const ImageSet images = corpus.constant_black("same", 3);
    ToyCnnAdapter adapter = make_adapter();
    const GradientSet grads = class_gradients_at_layer(adapter, "conv1", images, 2);
    CHECK(grads.tensors[1].data == grads.tensors[0].data);
    CHECK(grads.tensors[2].data == grads.tensors[0].data);
    CHECK(grads.tensors[0].same_shape(adapter.activations_for(images.paths[0], "conv1")));
}

TEST_CASE("gradients match central finite differences") {
    Corpus corpus("fd");
    const ImageSet images = corpus.render_set("striped", TextureFamily::Striped, 2, 5);
    ToyCnnAdapter adapter = make_adapter();
    KeyedRng rng(99);
    for (const std::string layer : {"conv1", "conv2"}) {
        const Tensor3 act = adapter.activations_for(images.paths[0], layer);
        const Tensor3 grad = adapter.logit_gradient(layer, act, 1, GradientTarget::Logit);
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t i = rng.next_below(act.data.size());
            const double h = 1e-5 * std::max(1.0, std::abs(act.data[i]));
            Tensor3 plus = act, minus = act;
            plus.data[i] += h;
            minus.data[i] -= h;
            const double fd = (adapter.logits_from_layer(layer, plus)[1] -
                               adapter.logits_from_layer(layer, minus)[1]) /
                              (2 * h);
            const double rel =
                std::abs(grad.data[i] - fd) / std::max({std::abs(grad.data[i]), std::abs(fd), 1e-8});
            CHECK(rel < 1e-3);
        }
    }
}

TEST_CASE("softmax-target gradients differ from logit gradients") {
    Corpus corpus("softgrad");
    const ImageSet images = corpus.render_set("striped", TextureFamily::Striped, 1, 6);
    ToyCnnAdapter adapter = make_adapter();
    const Tensor3 act = adapter.activations_for(images.paths[0], "conv2");
    const Tensor3 a = adapter.logit_gradient("conv2", act, 0, GradientTarget::Logit);
    const Tensor3 b = adapter.logit_gradient("conv2", act, 0, GradientTarget::Softmax);
    CHECK(a.data != b.data);
}

TEST_CASE("integrated gradients with the input as its own baseline is exactly zero") {
    Corpus corpus("igself");
    const ImageSet images = corpus.render_set("s", TextureFamily::Striped, 1, 7);
    ToyCnnAdapter adapter = make_adapter();
    const AttributionMap map =
        adapter.integrated_gradients_at_layer("conv2", images.paths[0], 0, 16, IgBaseline::Self);
    for (double v : map.attributions.data) CHECK(v == 0.0);
    CHECK(map.completeness_residual == 0.0);
}

TEST_CASE("integrated gradients are exact for a purely linear head") {
    Corpus corpus("iglinear");
    const ImageSet images = corpus.render_set("s", TextureFamily::Striped, 3, 8);
    ToyCnnAdapter adapter = make_adapter(/*with_conv3=*/false, 31);
    for (int steps : {1, 3, 32}) {
        const AttributionMap map =
            adapter.integrated_gradients_at_layer("conv2", images.paths[0], 2, steps, IgBaseline::Zero);
        CHECK(map.completeness_residual < 1e-6);
    }
}

TEST_CASE("integrated gradients residual shrinks with more steps") {
    Corpus corpus("igconv");
    const ImageSet images = corpus.render_set("s", TextureFamily::Striped, 4, 9);
    // Nonzero conv3 biases put relu kinks on the integration path.
    ToyCnnConfig cfg;
    cfg.class_names = {"a", "b", "c"};
    cfg.init_seed = 41;
    ToyCnn net(cfg);
    KeyedRng rng(55);
    for (auto& b : net.conv3.b) b = rng.uniform(-0.2, 0.2);
    for (auto& b : net.fc_b) b = rng.uniform(-0.1, 0.1);
    ToyCnnAdapter adapter(std::move(net));

    for (const auto& path : images.paths) {
        const double r64 = adapter.integrated_gradients_at_layer("conv2", path, 0, 64).completeness_residual;
        const double r512 = adapter.integrated_gradients_at_layer("conv2", path, 0, 512).completeness_residual;
        CHECK(r512 <= r64);
    }
}

TEST_CASE("extraction is bit-deterministic across calls and batch sizes") {
    Corpus corpus("det");
    const ImageSet images = corpus.render_set("s", TextureFamily::Checker, 6, 10);
    ToyCnnAdapter adapter = make_adapter();
    const ActivationSet a = extract_activations(adapter, "conv2", images, 1);
    const ActivationSet b = extract_activations(adapter, "conv2", images, 4);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.tensors[i].data == b.tensors[i].data);
}

TEST_CASE("activation store round-trips and the archive adapter serves it") {
    Corpus corpus("store");
    const ImageSet images = corpus.render_set("striped", TextureFamily::Striped, 4, 11);
    ToyCnnAdapter adapter = make_adapter();
    const ActivationSet acts = extract_activations(adapter, "conv2", images);

    const fs::path store = corpus.root / "store" / "toy-cnn";
    save_activation_set(store, acts);
    const ActivationSet loaded = load_activation_set(store, images.key, "toy-cnn", "conv2");
    REQUIRE(loaded.size() == acts.size());
    for (std::size_t i = 0; i < acts.size(); ++i) CHECK(loaded.tensors[i].data == acts.tensors[i].data);

    nlohmann::json model_manifest{{"model_id", "toy-cnn"},
                                  {"input_size", {32, 32}},
                                  {"class_names", {"striped_class", "dotted_class", "plain_class"}},
                                  {"layers", {"conv1", "conv2"}},
                                  {"preprocessing", adapter.preprocessing_id()}};
    write_file(store / "model.json", model_manifest.dump());

    ArchiveAdapter archive((corpus.root / "store").string(), "toy-cnn");
    CHECK(archive.class_index("dotted_class") == 1);
    const ActivationSet served = archive.extract_activations("conv2", images, 1);
    CHECK(served.tensors[2].data == acts.tensors[2].data);

    // unknown set errors with an actionable message
    ImageSet other = images;
    other.key = {"dotted", "real"};
    CHECK_THROWS_WITH(archive.extract_activations("conv2", other, 1),
                      Catch::Matchers::ContainsSubstring("no activation archive"));
    // per-image execution is rejected
    CHECK_THROWS_AS(archive.probabilities_for(images.paths[0]), ValidationError);
}
