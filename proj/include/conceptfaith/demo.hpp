#pragma once
// Self-contained demo workspace: a procedural concept/class corpus, a trained
// toy-cnn, and a ready-to-run config. Everything runs offline; this is also
// the fixture for the end-to-end tests.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptfaith/extract.hpp"
#include "conceptfaith/procgen.hpp"
#include "conceptfaith/report.hpp"

namespace conceptfaith {

struct DemoOptions {
    std::string root;
    std::uint64_t seed = 4242;
    int real_per_concept = 64;
    int class_image_count = 40;
    int negative_count = 48;
    std::size_t gen_count = 64;
    int train_epochs = 80;
    int workers = 4;
    bool figures = false;
};

struct DemoWorkspace {
    std::string config_path;
    std::string catalog_path;
    std::string weights_path;    // first model
    std::string weights_path_b;  // second model (independent init and training)
    TrainStats train_stats;
    TrainStats train_stats_b;
};

namespace demo_detail {

struct Family {
    TextureFamily family;
    const char* name;
    double erase_strength;
};

inline const std::vector<Family>& concept_families() {
    // Erase strengths spread across concepts so removal effects vary without
    // saturating the classifier's probability drop.
    static const std::vector<Family> families = {
        {TextureFamily::Striped, "striped", 0.70}, {TextureFamily::Dotted, "dotted", 0.58},
        {TextureFamily::Checker, "checker", 0.46}, {TextureFamily::Grid, "grid", 0.34},
        {TextureFamily::Blobs, "blobs", 0.22},
    };
    return families;
}

inline void render_dir(const fs::path& dir, TextureFamily family, int count, std::uint64_t key_base,
                       const ProcgenOptions& opt) {
    fs::create_directories(dir);
    for (int i = 0; i < count; ++i) {
        const Image img = render_texture(family, hash_combine(key_base, static_cast<std::uint64_t>(i)), opt);
        write_pnm((dir / ("img_" + zero_pad(static_cast<std::size_t>(i) + 1, 4) + ".pgm")).string(), img);
    }
}

// The negative pool mixes every family: "random images" rather than a single
// background class, which anchors the difference-of-means CAVs.
inline void render_mixed_dir(const fs::path& dir, int count, std::uint64_t key_base) {
    fs::create_directories(dir);
    const TextureFamily all[] = {TextureFamily::Striped, TextureFamily::Dotted,  TextureFamily::Checker,
                                 TextureFamily::Grid,    TextureFamily::Blobs,   TextureFamily::Plain,
                                 TextureFamily::Noise};
    for (int i = 0; i < count; ++i) {
        const Image img =
            render_texture(all[i % 7], hash_combine(key_base, static_cast<std::uint64_t>(i) * 977 + 13), {64, 1.0});
        write_pnm((dir / ("img_" + zero_pad(static_cast<std::size_t>(i) + 1, 4) + ".pgm")).string(), img);
    }
}

}  // namespace demo_detail

inline DemoWorkspace build_demo_workspace(const DemoOptions& options) {
    const fs::path root(options.root);
    fs::create_directories(root);
    const auto& families = demo_detail::concept_families();

    // Concept image sets are clean close-ups; class images are harder scenes
    // (lower contrast, more noise) so per-image gradients vary.
    const ProcgenOptions concept_opt{64, 1.0, 1.0, 1.0};
    const ProcgenOptions class_opt{64, 1.0, 2.5, 0.7};
    for (const auto& fam : families) {
        demo_detail::render_dir(root / "real" / fam.name, fam.family, options.real_per_concept,
                                hash_combine(options.seed, fnv1a64(std::string("real|") + fam.name)),
                                concept_opt);
        demo_detail::render_dir(root / "classes" / (std::string(fam.name) + "_class"), fam.family,
                                options.class_image_count,
                                hash_combine(options.seed, fnv1a64(std::string("class|") + fam.name)),
                                class_opt);
    }
    demo_detail::render_dir(root / "classes" / "plain_class", TextureFamily::Plain, options.class_image_count,
                            hash_combine(options.seed, fnv1a64("class|plain")), class_opt);
    demo_detail::render_mixed_dir(root / "negatives", options.negative_count,
                                  hash_combine(options.seed, fnv1a64("negatives")));

    // Catalog.
    nlohmann::json catalog;
    catalog["concepts"] = nlohmann::json::array();
    for (const auto& fam : families)
        catalog["concepts"].push_back({{"name", fam.name},
                                       {"type", "texture"},
                                       {"dataset", "procedural"},
                                       {"relevant_class", std::string(fam.name) + "_class"},
                                       {"real_dir", "real/" + std::string(fam.name)}});
    catalog["classes"] = nlohmann::json::object();
    for (const auto& fam : families)
        catalog["classes"][std::string(fam.name) + "_class"] = {
            {"dir", "classes/" + std::string(fam.name) + "_class"}};
    catalog["classes"]["plain_class"] = {{"dir", "classes/plain_class"}};
    catalog["negatives"] = {{"dir", "negatives"}};
    catalog["generated_root"] = "gen";
    catalog["removed_root"] = "removed";
    const fs::path catalog_path = root / "catalog.json";
    write_file_atomic(catalog_path, catalog.dump(2) + "\n");

    // Train two independently seeded toy classifiers on the class images, so
    // the analysis pools cells across more than one backbone.
    ToyCnnConfig net_cfg;
    for (const auto& fam : families) net_cfg.class_names.push_back(std::string(fam.name) + "_class");
    net_cfg.class_names.push_back("plain_class");

    std::vector<Tensor3> inputs;
    std::vector<int> labels;
    {
        ToyCnnAdapter pre{ToyCnn(ToyCnnConfig{32, true, net_cfg.class_names, 1})};  // preprocessing only
        for (std::size_t c = 0; c < net_cfg.class_names.size(); ++c) {
            const auto paths = list_files(root / "classes" / net_cfg.class_names[c], image_extensions());
            for (const auto& p : paths) {
                inputs.push_back(pre.preprocess(read_pnm(p)));
                labels.push_back(static_cast<int>(c));
            }
        }
    }

    auto train_one = [&](const char* tag, const fs::path& path, TrainStats& stats) {
        ToyCnnConfig cfg = net_cfg;
        cfg.init_seed = hash_combine(options.seed, fnv1a64(std::string("init|") + tag));
        ToyCnn net(cfg);
        TrainOptions train_options;
        train_options.epochs = options.train_epochs;
        train_options.learning_rate = 5e-3;
        train_options.seed = hash_combine(options.seed, fnv1a64(std::string("train|") + tag));
        stats = net.train(inputs, labels, train_options);
        net.save(path.string());
    };
    TrainStats stats, stats_b;
    const fs::path weights_path = root / "toy_a.bin";
    const fs::path weights_path_b = root / "toy_b.bin";
    train_one("a", weights_path, stats);
    train_one("b", weights_path_b, stats_b);

    // Run config.
    nlohmann::json strength_by_concept;
    for (const auto& fam : families) strength_by_concept[fam.name] = fam.erase_strength;
    nlohmann::json config{
        {"catalog", "catalog.json"},
        {"output_dir", "out"},
        {"providers", {"mock"}},
        {"provider_config", {{"mock", {{"kind", "mock"}, {"size", 64}, {"diversity", 0.6}}}}},
        {"editor", "erase"},
        {"editor_config",
         {{"erase", {{"kind", "erase"}, {"strength", 1.0}, {"strength_by_concept", strength_by_concept}}}}},
        {"models",
         {{{"id", "toy-a"}, {"kind", "toy"}, {"weights", "toy_a.bin"}, {"layers", {"conv1", "conv2"}}},
          {{"id", "toy-b"}, {"kind", "toy"}, {"weights", "toy_b.bin"}, {"layers", {"conv1", "conv2"}}}}},
        {"methods", {"tcav", "visual-tcav"}},
        {"gen_count", options.gen_count},
        {"bootstrap", {{"replicates", 5}, {"ratio", 1.0}, {"seed", 101}}},
        {"intra", {{"repeats", 12}, {"seed", 202}}},
        {"ig_steps", 50},
        {"seed", options.seed},
        {"figures", options.figures},
        {"embedder", {{"kind", "mock"}, {"grid", 8}}},
        {"workers", options.workers}};
    const fs::path config_path = root / "config.json";
    write_file_atomic(config_path, config.dump(2) + "\n");

    return {config_path.string(), catalog_path.string(), weights_path.string(), weights_path_b.string(),
            stats, stats_b};
}

}  // namespace conceptfaith
