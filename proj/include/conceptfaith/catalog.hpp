#pragma once
// Concept/class corpus catalog: loading, validation, and image-set addressing.
//
// Catalog file (strict JSON, UTF-8; unknown fields are errors):
//   {
//     "concepts": [
//       {"name": "striped", "type": "texture", "dataset": "DTD",
//        "relevant_class": "zebra", "real_dir": "dtd/striped", "real_count": 120}
//     ],
//     "classes": {"zebra": {"dir": "imagenet/zebra", "count": 50}},
//     "negatives": {"dir": "negatives"},
//     "generated_root": "gen",      // optional: (c, gen:P) -> gen/P/c
//     "removed_root": "removed"     // optional: (c, removed) -> removed/c
//   }
// "real_count"/"count" are optional; when present they are validated against
// the directory. Class entries may be a plain string (the dir). Relative
// paths resolve against the catalog file's directory.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptfaith/common.hpp"
#include "conceptfaith/image.hpp"

namespace conceptfaith {

enum class ConceptType { Texture, Object };

inline const char* concept_type_name(ConceptType t) {
    return t == ConceptType::Texture ? "texture" : "object";
}

inline ConceptType parse_concept_type(const std::string& s, const std::string& where) {
    if (s == "texture") return ConceptType::Texture;
    if (s == "object") return ConceptType::Object;
    throw ValidationError("concept '" + where + "': type must be texture or object, got '" + s + "'");
}

struct ConceptSpec {
    std::string name;
    ConceptType concept_type = ConceptType::Texture;
    std::string source_dataset;
    std::string relevant_class;
    std::string real_image_dir;
    std::size_t real_count = 0;  // resolved at load when absent from the file

    bool operator==(const ConceptSpec&) const = default;
};

struct ClassEntry {
    std::string dir;
    std::optional<std::size_t> declared_count;

    bool operator==(const ClassEntry&) const = default;
};

struct ConceptCatalog {
    std::vector<ConceptSpec> concepts;
    std::map<std::string, ClassEntry> classes;
    std::string negatives_dir;
    std::string generated_root;  // empty = gen keys unresolvable
    std::string removed_root;    // empty = removed keys unresolvable

    bool operator==(const ConceptCatalog&) const = default;

    const ConceptSpec& concept_named(const std::string& name) const {
        for (const auto& c : concepts)
            if (c.name == name) return c;
        throw ValidationError("unknown concept '" + name + "'");
    }
    bool has_concept(const std::string& name) const {
        for (const auto& c : concepts)
            if (c.name == name) return true;
        return false;
    }
};

// (concept-or-class id, source) where source is "real", "removed", or
// "gen:<provider>".
struct ImageSetKey {
    std::string id;
    std::string source = "real";

    bool operator==(const ImageSetKey&) const = default;

    bool is_generated() const { return source.rfind("gen:", 0) == 0; }
    std::string provider() const { return is_generated() ? source.substr(4) : ""; }
    std::string to_string() const { return id + ":" + source; }
};

inline ImageSetKey parse_set_key(const std::string& text) {
    const auto pos = text.find(':');
    if (pos == std::string::npos || pos == 0 || pos + 1 >= text.size())
        throw ParseError("bad image-set key '" + text + "', want <id>:<real|removed|gen:provider>");
    ImageSetKey key{text.substr(0, pos), text.substr(pos + 1)};
    if (key.source != "real" && key.source != "removed" && !key.is_generated())
        throw ParseError("bad image-set source '" + key.source + "' in key '" + text + "'");
    return key;
}

struct ImageSet {
    ImageSetKey key;
    std::vector<std::string> paths;            // lexicographically ordered
    std::optional<std::int64_t> seed;

    std::size_t size() const { return paths.size(); }
};

struct ValidationReport {
    std::vector<std::string> violations;

    bool ok() const { return violations.empty(); }
};

namespace detail {

inline void reject_unknown_fields(const nlohmann::json& obj, const std::vector<std::string>& known,
                                  const std::string& where) {
    for (const auto& [k, v] : obj.items()) {
        (void)v;
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw ParseError("unknown field '" + k + "' in " + where);
    }
}

inline std::string resolve_path(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

}  // namespace detail

// Data-level checks; violations are returned, never thrown, and the catalog
// is not mutated.
inline ValidationReport validate_catalog(const ConceptCatalog& catalog) {
    ValidationReport report;
    auto note = [&](const std::string& msg) { report.violations.push_back(msg); };

    if (catalog.concepts.empty()) note("no concepts");

    for (const auto& c : catalog.concepts) {
        if (!catalog.classes.count(c.relevant_class))
            note("concept '" + c.name + "': relevant_class '" + c.relevant_class + "' not in classes");
        if (!fs::is_directory(c.real_image_dir)) {
            note("concept '" + c.name + "': real_dir is not a directory: " + c.real_image_dir);
            continue;
        }
        const auto files = list_files(c.real_image_dir, image_extensions());
        if (files.empty()) note("concept '" + c.name + "': empty image set in " + c.real_image_dir);
        if (c.real_count != files.size())
            note("concept '" + c.name + "': real_count " + std::to_string(c.real_count) + " but found " +
                 std::to_string(files.size()) + " images");
    }

    for (const auto& [name, entry] : catalog.classes) {
        if (!fs::is_directory(entry.dir)) {
            note("class '" + name + "': dir is not a directory: " + entry.dir);
            continue;
        }
        const auto files = list_files(entry.dir, image_extensions());
        if (files.empty()) note("class '" + name + "': empty image set in " + entry.dir);
        if (entry.declared_count && *entry.declared_count != files.size())
            note("class '" + name + "': count " + std::to_string(*entry.declared_count) + " but found " +
                 std::to_string(files.size()) + " images");
    }

    if (!catalog.negatives_dir.empty()) {
        if (!fs::is_directory(catalog.negatives_dir)) {
            note("negatives: dir is not a directory: " + catalog.negatives_dir);
        } else {
            const auto negs = list_files(catalog.negatives_dir, image_extensions());
            if (negs.empty()) note("negatives: empty pool in " + catalog.negatives_dir);
            // Disjointness is by content hash: the same picture under two
            // names still leaks.
            std::map<std::uint64_t, std::string> neg_hashes;
            for (const auto& p : negs) neg_hashes[file_content_hash(p)] = p;
            for (const auto& c : catalog.concepts) {
                if (!fs::is_directory(c.real_image_dir)) continue;
                for (const auto& p : list_files(c.real_image_dir, image_extensions())) {
                    auto it = neg_hashes.find(file_content_hash(p));
                    if (it != neg_hashes.end())
                        note("negatives: " + it->second + " duplicates concept '" + c.name + "' image " + p);
                }
            }
        }
    } else {
        note("negatives: no pool configured");
    }

    return report;
}

inline ConceptCatalog load_catalog(const std::string& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("catalog " + path + ": " + e.what());
    }
    if (!doc.is_object()) throw ParseError("catalog " + path + ": top level must be an object");
    detail::reject_unknown_fields(doc, {"concepts", "classes", "negatives", "generated_root", "removed_root"},
                                  "catalog");

    const fs::path base = fs::path(path).parent_path();
    ConceptCatalog catalog;

    if (!doc.contains("concepts") || !doc["concepts"].is_array())
        throw ParseError("catalog " + path + ": missing 'concepts' array");
    for (const auto& row : doc["concepts"]) {
        detail::reject_unknown_fields(row, {"name", "type", "dataset", "relevant_class", "real_dir", "real_count"},
                                      "concept row");
        ConceptSpec spec;
        try {
            spec.name = trim(row.at("name").get<std::string>());
            spec.concept_type = parse_concept_type(row.at("type").get<std::string>(), spec.name);
            spec.source_dataset = row.at("dataset").get<std::string>();
            spec.relevant_class = row.at("relevant_class").get<std::string>();
            spec.real_image_dir = detail::resolve_path(base, row.at("real_dir").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("concept row: ") + e.what());
        }
        if (spec.name.empty()) throw ValidationError("concept row with empty name");
        if (row.contains("real_count")) {
            spec.real_count = row["real_count"].get<std::size_t>();
        } else if (fs::is_directory(spec.real_image_dir)) {
            spec.real_count = list_files(spec.real_image_dir, image_extensions()).size();
        }
        for (const auto& existing : catalog.concepts)
            if (existing.name == spec.name) throw ValidationError("duplicate concept '" + spec.name + "'");
        catalog.concepts.push_back(std::move(spec));
    }

    if (doc.contains("classes")) {
        if (!doc["classes"].is_object()) throw ParseError("catalog 'classes' must be an object");
        for (const auto& [name, val] : doc["classes"].items()) {
            ClassEntry entry;
            if (val.is_string()) {
                entry.dir = detail::resolve_path(base, val.get<std::string>());
            } else {
                detail::reject_unknown_fields(val, {"dir", "count"}, "class '" + name + "'");
                entry.dir = detail::resolve_path(base, val.at("dir").get<std::string>());
                if (val.contains("count")) entry.declared_count = val["count"].get<std::size_t>();
            }
            catalog.classes.emplace(name, std::move(entry));
        }
    }

    if (doc.contains("negatives")) {
        const auto& neg = doc["negatives"];
        if (neg.is_string()) {
            catalog.negatives_dir = detail::resolve_path(base, neg.get<std::string>());
        } else {
            detail::reject_unknown_fields(neg, {"dir"}, "negatives");
            catalog.negatives_dir = detail::resolve_path(base, neg.at("dir").get<std::string>());
        }
    }
    if (doc.contains("generated_root"))
        catalog.generated_root = detail::resolve_path(base, doc["generated_root"].get<std::string>());
    if (doc.contains("removed_root"))
        catalog.removed_root = detail::resolve_path(base, doc["removed_root"].get<std::string>());

    const ValidationReport report = validate_catalog(catalog);
    if (!report.ok()) throw ValidationError("catalog " + path + ": " + report.violations.front());
    return catalog;
}

// Resolve a set key to its directory without touching the filesystem.
inline std::string image_set_dir(const ConceptCatalog& catalog, const ImageSetKey& key) {
    if (key.source == "real") {
        if (catalog.has_concept(key.id)) return catalog.concept_named(key.id).real_image_dir;
        auto it = catalog.classes.find(key.id);
        if (it != catalog.classes.end()) return it->second.dir;
        throw ValidationError("unknown key '" + key.to_string() + "': no such concept or class");
    }
    if (key.source == "removed") {
        require(catalog.has_concept(key.id), "unknown key '" + key.to_string() + "': no such concept");
        require(!catalog.removed_root.empty(), "catalog has no removed_root; cannot resolve " + key.to_string());
        return (fs::path(catalog.removed_root) / key.id).string();
    }
    require(catalog.has_concept(key.id), "unknown key '" + key.to_string() + "': no such concept");
    require(!catalog.generated_root.empty(), "catalog has no generated_root; cannot resolve " + key.to_string());
    return (fs::path(catalog.generated_root) / key.provider() / key.id).string();
}

inline ImageSet load_image_set(const ConceptCatalog& catalog, const ImageSetKey& key) {
    const std::string dir = image_set_dir(catalog, key);
    if (!fs::is_directory(dir)) throw IoError("unreadable directory for " + key.to_string() + ": " + dir);
    ImageSet set;
    set.key = key;
    set.paths = list_files(dir, image_extensions());
    if (set.paths.empty()) throw ValidationError("empty image set for " + key.to_string() + " in " + dir);
    const fs::path manifest = fs::path(dir) / "manifest.jsonl";
    if (fs::exists(manifest)) {
        // First manifest record carries the job seed, when one was recorded.
        std::ifstream in(manifest);
        std::string line;
        if (std::getline(in, line) && !trim(line).empty()) {
            try {
                const auto rec = nlohmann::json::parse(line);
                if (rec.contains("seed")) set.seed = rec["seed"].get<std::int64_t>();
            } catch (const nlohmann::json::exception&) {
                // tolerated: a foreign manifest does not invalidate the set
            }
        }
    }
    return set;
}

// Default negative pool when the catalog configures none: a fixed seeded
// sample from the union of class images, excluding the concept's relevant
// class.
inline ImageSet sample_negatives(const ConceptCatalog& catalog, const std::string& concept_name,
                                 std::size_t count, std::uint64_t seed) {
    const ConceptSpec& spec = catalog.concept_named(concept_name);
    std::vector<std::string> pool;
    for (const auto& [name, entry] : catalog.classes) {
        if (name == spec.relevant_class) continue;
        if (!fs::is_directory(entry.dir)) continue;
        for (auto& p : list_files(entry.dir, image_extensions())) pool.push_back(std::move(p));
    }
    require(!pool.empty(), "no class images available to sample negatives for '" + concept_name + "'");
    std::sort(pool.begin(), pool.end());
    KeyedRng rng(hash_combine(seed, fnv1a64(concept_name)));
    for (std::size_t i = pool.size(); i > 1; --i)
        std::swap(pool[i - 1], pool[rng.next_below(i)]);
    if (pool.size() > count) pool.resize(count);
    std::sort(pool.begin(), pool.end());
    ImageSet set;
    set.key = {concept_name, "real"};
    set.key.id = "neg(" + concept_name + ")";
    set.paths = std::move(pool);
    set.seed = static_cast<std::int64_t>(seed);
    return set;
}

}  // namespace conceptfaith
