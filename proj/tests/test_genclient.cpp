#include <catch2/catch_amalgamated.hpp>

#include <thread>

#include "conceptfaith/genclient.hpp"

using namespace conceptfaith;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("cf_gen_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ConceptSpec striped_spec() {
    ConceptSpec spec;
    spec.name = "striped";
    spec.concept_type = ConceptType::Texture;
    spec.source_dataset = "procedural";
    spec.relevant_class = "striped_class";
    return spec;
}

JobOptions fast_options() {
    JobOptions options;
    options.backoff_ms = 0;
    return options;
}

// Fails permanently once `fail_after` items have been produced.
class FaultInjectingProvider : public GenProvider {
public:
    FaultInjectingProvider(std::size_t fail_after) : fail_after_(fail_after) {}
    std::string id() const override { return "faulty"; }
    std::string generate_one(const std::string& prompt, std::int64_t seed, std::size_t index) override {
        if (produced_ >= fail_after_) throw IoError("injected permanent failure");
        ++produced_;
        return inner_.generate_one(prompt, seed, index);
    }

private:
    MockProvider inner_;
    std::size_t fail_after_;
    std::size_t produced_ = 0;
};

std::string dir_bytes(const fs::path& dir) {
    std::string all;
    for (const auto& p : list_files(dir, image_extensions())) all += p.substr(p.rfind('/')) + read_file(p);
    return all;
}

}  // namespace

TEST_CASE("mock generation is deterministic and writes a manifest") {
    TempDir tmp("mockdet");
    MockProvider provider;
    GenerationJob job{striped_spec(), "mock", 6, 77, (tmp.path / "a").string()};
    const ImageSet a = generate_concept_images(job, provider, fast_options());
    CHECK(a.paths.size() == 6);
    CHECK(a.key.source == "gen:mock");
    CHECK(a.seed == 77);

    job.output_dir = (tmp.path / "b").string();
    const ImageSet b = generate_concept_images(job, provider, fast_options());
    CHECK(dir_bytes(tmp.path / "a") == dir_bytes(tmp.path / "b"));

    const auto manifest = load_manifest(tmp.path / "a");
    REQUIRE(manifest.size() == 6);
    CHECK(manifest.front().provider == "mock");
    CHECK(manifest.front().seed == 77);
    CHECK(contains(manifest.front().prompt, "striped"));
    CHECK(manifest.front().filename.rfind("gen_", 0) == 0);
}

TEST_CASE("generation of zero images is a precondition error") {
    TempDir tmp("zero");
    MockProvider provider;
    GenerationJob job{striped_spec(), "mock", 0, 1, tmp.path.string()};
    CHECK_THROWS_AS(generate_concept_images(job, provider, fast_options()), ValidationError);
}

TEST_CASE("partial provider failure reports completed count and resumes") {
    TempDir tmp("fault");
    FaultInjectingProvider faulty(3);
    GenerationJob job{striped_spec(), "mock", 5, 9, tmp.path.string()};
    try {
        generate_concept_images(job, faulty, fast_options());
        FAIL("expected ProviderError");
    } catch (const ProviderError& e) {
        CHECK(e.completed == 3);
    }
    CHECK(load_manifest(tmp.path).size() == 3);

    // a working provider resumes and only fills the gap
    MockProvider good;
    JobOptions resume = fast_options();
    resume.resume = true;
    const ImageSet set = generate_concept_images(job, good, resume);
    CHECK(set.paths.size() == 5);
    CHECK(load_manifest(tmp.path).size() == 5);
}

TEST_CASE("starting over an existing manifest without resume is an error") {
    TempDir tmp("noresume");
    MockProvider provider;
    GenerationJob job{striped_spec(), "mock", 2, 1, tmp.path.string()};
    generate_concept_images(job, provider, fast_options());
    CHECK_THROWS_WITH(generate_concept_images(job, provider, fast_options()),
                      Catch::Matchers::ContainsSubstring("resume"));
}

TEST_CASE("generation runs with a worker pool") {
    TempDir tmp("pool");
    MockProvider provider;
    GenerationJob job{striped_spec(), "mock", 12, 5, (tmp.path / "pool").string()};
    JobOptions options = fast_options();
    options.workers = 4;
    const ImageSet pooled = generate_concept_images(job, provider, options);
    CHECK(pooled.paths.size() == 12);

    job.output_dir = (tmp.path / "seq").string();
    const ImageSet seq = generate_concept_images(job, provider, fast_options());
    CHECK(dir_bytes(tmp.path / "pool") == dir_bytes(tmp.path / "seq"));
}

TEST_CASE("identity editor output is byte-equal to its input") {
    TempDir tmp("identity");
    // input class images
    fs::create_directories(tmp.path / "class");
    MockProvider provider;
    for (int i = 0; i < 4; ++i)
        write_file(tmp.path / "class" / ("c_" + zero_pad(i + 1, 3) + ".pgm"),
                   provider.generate_one("plain background", 3, i + 1));

    ImageSet class_images;
    class_images.key = {"striped_class", "real"};
    class_images.paths = list_files(tmp.path / "class", image_extensions());

    IdentityEditor editor;
    RemovalJob job{striped_spec(), "identity", class_images, (tmp.path / "removed").string()};
    const ImageSet removed = remove_concept_from_images(job, editor, fast_options());
    REQUIRE(removed.paths.size() == class_images.paths.size());
    for (std::size_t i = 0; i < removed.paths.size(); ++i)
        CHECK(read_file(removed.paths[i]) == read_file(class_images.paths[i]));

    const auto manifest = load_manifest(tmp.path / "removed");
    REQUIRE(manifest.size() == 4);
    CHECK(manifest.front().source_image.has_value());
    CHECK(*manifest.front().source_image == class_images.paths.front());
    CHECK(contains(manifest.front().prompt, "Completely remove the concept of striped"));
}

TEST_CASE("removal rejects empty inputs and mismatched classes") {
    TempDir tmp("removal_err");
    IdentityEditor editor;
    ImageSet empty;
    empty.key = {"striped_class", "real"};
    RemovalJob job{striped_spec(), "identity", empty, (tmp.path / "x").string()};
    CHECK_THROWS_AS(remove_concept_from_images(job, editor, fast_options()), ValidationError);

    ImageSet wrong;
    wrong.key = {"dotted_class", "real"};
    wrong.paths = {"whatever.pgm"};
    RemovalJob bad{striped_spec(), "identity", wrong, (tmp.path / "y").string()};
    CHECK_THROWS_WITH(remove_concept_from_images(bad, editor, fast_options()),
                      Catch::Matchers::ContainsSubstring("striped_class"));
}

TEST_CASE("erase editor reduces texture contrast") {
    MockProvider provider;
    const std::string src = provider.generate_one("striped texture", 1, 1);
    MockEditor eraser(1.0);
    const std::string out = eraser.edit_one("remove striped", src, 1, 1);
    const Image before = decode_pnm(src, "src");
    const Image after = decode_pnm(out, "out");
    const auto spread = [](const Image& img) {
        const auto g = to_gray(img);
        double lo = 1.0, hi = 0.0;
        for (double v : g) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        return hi - lo;
    };
    CHECK(spread(after) < 0.3 * spread(before));
}

TEST_CASE("local command provider round-trips through a shell script") {
    TempDir tmp("local");
    // Script contract: <cmd> <prompt_file> <out_dir> <seed> <index_file>;
    // writes <out_dir>/<index>.pnm per index.
    const fs::path script = tmp.path / "gen.sh";
    write_file(script, "#!/bin/sh\nwhile read i; do printf 'P5\\n1 1\\n255\\nA' > \"$2/$i.pnm\"; done < \"$4\"\n");
    fs::permissions(script, fs::perms::owner_all);

    LocalCommandProvider provider("local", script.string());
    GenerationJob job{striped_spec(), "local", 3, 4, (tmp.path / "out").string()};
    const ImageSet set = generate_concept_images(job, provider, fast_options());
    CHECK(set.paths.size() == 3);
    for (const auto& p : set.paths) CHECK(read_file(p) == "P5\n1 1\n255\nA");
}

TEST_CASE("http provider generates and edits through a local server") {
    httplib::Server server;
    std::atomic<int> generate_calls{0};
    MockProvider render;

    server.Post("/v1/images/generate", [&](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        ++generate_calls;
        if (generate_calls <= 2) {  // transient failure, retried
            res.status = 500;
            return;
        }
        if (req.get_header_value("Authorization") != "Bearer sesame") {
            res.status = 401;
            return;
        }
        res.set_content(render.generate_one(body.at("prompt"), body.at("seed"), body.at("index")),
                        "image/x-portable-anymap");
    });
    server.Post("/v1/images/edit", [&](const httplib::Request& req, httplib::Response& res) {
        const auto body = nlohmann::json::parse(req.body);
        // echo the source back as JSON base64
        nlohmann::json out{{"image_b64", body.at("source_b64")}};
        res.set_content(out.dump(), "application/json");
    });

    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&] { server.listen_after_bind(); });
    while (!server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(5));

    setenv("CONCEPTFAITH_TEST_KEY", "sesame", 1);
    HttpProviderConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
    cfg.api_key_env = "CONCEPTFAITH_TEST_KEY";
    HttpProvider provider("remote", cfg);

    TempDir tmp("http");
    GenerationJob job{striped_spec(), "remote", 3, 11, (tmp.path / "out").string()};
    const ImageSet set = generate_concept_images(job, provider, fast_options());
    CHECK(set.paths.size() == 3);
    CHECK(generate_calls >= 5);  // 2 failures + 3 successes

    const std::string source = render.generate_one("x", 1, 1);
    CHECK(provider.edit_one("remove", source, 1, 1) == source);

    server.stop();
    server_thread.join();
}
