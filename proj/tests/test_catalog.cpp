#include <catch2/catch_amalgamated.hpp>

#include <nlohmann/json.hpp>

#include "conceptfaith/catalog.hpp"
#include "conceptfaith/procgen.hpp"

using namespace conceptfaith;

namespace {

struct Fixture {
    fs::path root;

    explicit Fixture(const std::string& tag) {
        root = fs::temp_directory_path() / ("cf_catalog_" + tag);
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Fixture() { fs::remove_all(root); }

    void render(const std::string& rel, TextureFamily family, int count, std::uint64_t key) const {
        fs::create_directories(root / rel);
        for (int i = 0; i < count; ++i)
            write_pnm((root / rel / ("img_" + zero_pad(i + 1, 3) + ".pgm")).string(),
                      render_texture(family, hash_combine(key, i), {32, 1.0}));
    }

    std::string write_catalog(const nlohmann::json& doc) const {
        const fs::path path = root / "catalog.json";
        write_file(path, doc.dump(2));
        return path.string();
    }

    nlohmann::json base_catalog() const {
        return nlohmann::json{
            {"concepts",
             {{{"name", "striped"},
               {"type", "texture"},
               {"dataset", "procedural"},
               {"relevant_class", "striped_class"},
               {"real_dir", "real/striped"}},
              {{"name", "dotted"},
               {"type", "texture"},
               {"dataset", "procedural"},
               {"relevant_class", "dotted_class"},
               {"real_dir", "real/dotted"}}}},
            {"classes",
             {{"striped_class", {{"dir", "classes/striped"}}}, {"dotted_class", {{"dir", "classes/dotted"}}}}},
            {"negatives", {{"dir", "negatives"}}},
            {"generated_root", "gen"},
            {"removed_root", "removed"}};
    }

    void populate() const {
        render("real/striped", TextureFamily::Striped, 6, 1);
        render("real/dotted", TextureFamily::Dotted, 5, 2);
        render("classes/striped", TextureFamily::Striped, 4, 3);
        render("classes/dotted", TextureFamily::Dotted, 4, 4);
        render("negatives", TextureFamily::Plain, 5, 5);
    }
};

}  // namespace

TEST_CASE("load_catalog loads and is idempotent") {
    Fixture fx("load");
    fx.populate();
    const std::string path = fx.write_catalog(fx.base_catalog());
    const ConceptCatalog a = load_catalog(path);
    const ConceptCatalog b = load_catalog(path);
    CHECK(a == b);
    REQUIRE(a.concepts.size() == 2);
    CHECK(a.concepts[0].real_count == 6);  // derived from the directory
    CHECK(a.concepts[0].concept_type == ConceptType::Texture);

    // real key loads for every concept in a validated catalog
    for (const auto& spec : a.concepts) {
        const ImageSet set = load_image_set(a, {spec.name, "real"});
        CHECK(set.paths.size() == spec.real_count);
        CHECK(std::is_sorted(set.paths.begin(), set.paths.end()));
    }
}

TEST_CASE("load_catalog rejects an empty concept list") {
    Fixture fx("empty");
    fx.populate();
    nlohmann::json doc = fx.base_catalog();
    doc["concepts"] = nlohmann::json::array();
    CHECK_THROWS_WITH(load_catalog(fx.write_catalog(doc)), Catch::Matchers::ContainsSubstring("no concepts"));
}

TEST_CASE("load_catalog names the row with an unknown class") {
    Fixture fx("badclass");
    fx.populate();
    nlohmann::json doc = fx.base_catalog();
    doc["concepts"][1]["relevant_class"] = "qwerty";
    CHECK_THROWS_WITH(load_catalog(fx.write_catalog(doc)),
                      Catch::Matchers::ContainsSubstring("dotted") &&
                          Catch::Matchers::ContainsSubstring("qwerty"));
}

TEST_CASE("load_catalog rejects unknown fields") {
    Fixture fx("strict");
    fx.populate();
    nlohmann::json doc = fx.base_catalog();
    doc["concepts"][0]["shiny"] = true;
    CHECK_THROWS_AS(load_catalog(fx.write_catalog(doc)), ParseError);
    doc = fx.base_catalog();
    doc["surprise"] = 1;
    CHECK_THROWS_AS(load_catalog(fx.write_catalog(doc)), ParseError);
}

TEST_CASE("load_catalog rejects an empty image directory") {
    Fixture fx("emptydir");
    fx.populate();
    fs::create_directories(fx.root / "real/empty");
    nlohmann::json doc = fx.base_catalog();
    doc["concepts"][0]["real_dir"] = "real/empty";
    CHECK_THROWS_WITH(load_catalog(fx.write_catalog(doc)), Catch::Matchers::ContainsSubstring("striped"));
}

TEST_CASE("validate_catalog reports a declared-count mismatch") {
    Fixture fx("count");
    fx.populate();
    ConceptCatalog catalog = load_catalog(fx.write_catalog(fx.base_catalog()));
    // delete one file after load; the loaded catalog now declares one more
    fs::remove(fs::path(catalog.concepts[0].real_image_dir) / "img_001.pgm");
    const ValidationReport report = validate_catalog(catalog);
    REQUIRE_FALSE(report.ok());
    bool found = false;
    for (const auto& v : report.violations)
        if (contains(v, "real_count 6") && contains(v, "found 5")) found = true;
    CHECK(found);
}

TEST_CASE("validate_catalog flags negative-pool leakage by content hash") {
    Fixture fx("leak");
    fx.populate();
    ConceptCatalog catalog = load_catalog(fx.write_catalog(fx.base_catalog()));
    // copy a striped concept image into the negatives dir under another name
    fs::copy_file(fs::path(catalog.concepts[0].real_image_dir) / "img_002.pgm",
                  fx.root / "negatives" / "zz_rename.pgm");
    const ValidationReport report = validate_catalog(catalog);
    REQUIRE_FALSE(report.ok());
    bool found = false;
    for (const auto& v : report.violations)
        if (contains(v, "duplicates concept 'striped'")) found = true;
    CHECK(found);
}

TEST_CASE("validate_catalog passes a consistent catalog") {
    Fixture fx("ok");
    fx.populate();
    const ConceptCatalog catalog = load_catalog(fx.write_catalog(fx.base_catalog()));
    CHECK(validate_catalog(catalog).ok());
}

TEST_CASE("image set keys resolve per source") {
    Fixture fx("keys");
    fx.populate();
    fx.render("gen/mock/striped", TextureFamily::Striped, 3, 9);
    fx.render("removed/striped", TextureFamily::Plain, 4, 10);
    const ConceptCatalog catalog = load_catalog(fx.write_catalog(fx.base_catalog()));

    CHECK(load_image_set(catalog, {"striped", "gen:mock"}).paths.size() == 3);
    CHECK(load_image_set(catalog, {"striped", "removed"}).paths.size() == 4);
    CHECK(load_image_set(catalog, {"striped_class", "real"}).paths.size() == 4);
    CHECK_THROWS_AS(load_image_set(catalog, {"nope", "real"}), ValidationError);
    CHECK_THROWS_AS(load_image_set(catalog, {"striped", "gen:absent"}), IoError);

    const ImageSetKey key = parse_set_key("striped:gen:mock");
    CHECK(key.id == "striped");
    CHECK(key.provider() == "mock");
    CHECK_THROWS_AS(parse_set_key("noseparator"), ParseError);
    CHECK_THROWS_AS(parse_set_key("a:b"), ParseError);
}

TEST_CASE("empty generated directory is an error, not an empty set") {
    Fixture fx("emptyset");
    fx.populate();
    fs::create_directories(fx.root / "gen/mock/striped");
    const ConceptCatalog catalog = load_catalog(fx.write_catalog(fx.base_catalog()));
    CHECK_THROWS_WITH(load_image_set(catalog, {"striped", "gen:mock"}),
                      Catch::Matchers::ContainsSubstring("empty image set"));
}

TEST_CASE("sample_negatives is seeded and excludes the relevant class") {
    Fixture fx("negs");
    fx.populate();
    const ConceptCatalog catalog = load_catalog(fx.write_catalog(fx.base_catalog()));
    const ImageSet a = sample_negatives(catalog, "striped", 3, 11);
    const ImageSet b = sample_negatives(catalog, "striped", 3, 11);
    CHECK(a.paths == b.paths);
    CHECK(a.paths.size() == 3);
    for (const auto& p : a.paths) CHECK(contains(p, "classes/dotted"));
    const ImageSet c = sample_negatives(catalog, "striped", 3, 12);
    CHECK(c.paths != a.paths);
}
