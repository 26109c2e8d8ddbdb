// conceptfaith CLI: drives concept image generation, counterfactual removal,
// activation extraction, CAV computation, and the four analysis pipelines
// from a single config file. `init-demo` builds a self-contained offline
// workspace to try the whole thing.

#include <CLI11.hpp>
#include <iostream>

#include "conceptfaith/demo.hpp"
#include "conceptfaith/report.hpp"

using namespace conceptfaith;

namespace {

RunConfig load_config(const std::string& path, std::uint64_t seed_override, bool seed_set, bool figures) {
    RunConfig config = RunConfig::load(path);
    if (seed_set) config.seed = seed_override;
    if (figures) config.figures = true;
    return config;
}

int finish(const Pipeline& pipeline) {
    for (const auto& err : pipeline.cell_errors()) std::cerr << "error: " << err << "\n";
    if (!pipeline.cell_errors().empty()) {
        std::cerr << pipeline.cell_errors().size() << " cell(s) failed\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conceptfaith: evaluate how faithfully synthetic concept image sets replicate real ones"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed_override = 0;
    bool figures = false;

    auto add_common = [&](CLI::App* cmd, bool with_figures = false) {
        cmd->add_option("--config", config_path, "run config file")->required();
        cmd->add_option("--seed", seed_override, "override the config seed");
        if (with_figures) cmd->add_flag("--figures", figures, "emit SVG figures alongside tables");
    };

    // generate
    auto* gen_cmd = app.add_subcommand("generate", "generate synthetic concept images");
    std::string gen_provider, gen_concept;
    std::size_t gen_count = 0;
    bool gen_resume = false;
    add_common(gen_cmd);
    gen_cmd->add_option("--provider", gen_provider, "only this provider");
    gen_cmd->add_option("--concept", gen_concept, "only this concept");
    gen_cmd->add_option("--count", gen_count, "override images per concept");
    gen_cmd->add_flag("--resume", gen_resume, "continue a partially completed job");

    // remove
    auto* rm_cmd = app.add_subcommand("remove", "edit concepts out of class images");
    std::string rm_concept;
    bool rm_resume = false;
    add_common(rm_cmd);
    rm_cmd->add_option("--concept", rm_concept, "only this concept");
    rm_cmd->add_flag("--resume", rm_resume, "continue a partially completed job");

    // extract
    auto* ex_cmd = app.add_subcommand("extract", "extract layer activations into the store");
    std::string ex_model, ex_layer, ex_set;
    add_common(ex_cmd);
    ex_cmd->add_option("--model", ex_model, "model id from the config")->required();
    ex_cmd->add_option("--layer", ex_layer, "layer name")->required();
    ex_cmd->add_option("--set", ex_set, "image-set key, e.g. striped:real or striped:gen:mock")->required();

    // cav
    auto* cav_cmd = app.add_subcommand("cav", "compute and store a concept activation vector");
    std::string cav_concept, cav_source = "real", cav_model, cav_layer, cav_pooling = "gap";
    add_common(cav_cmd);
    cav_cmd->add_option("--concept", cav_concept)->required();
    cav_cmd->add_option("--source", cav_source, "real or gen:<provider>");
    cav_cmd->add_option("--model", cav_model)->required();
    cav_cmd->add_option("--layer", cav_layer)->required();
    cav_cmd->add_option("--pooling", cav_pooling, "gap or flatten");

    // analysis pipelines
    auto* rq1_cmd = app.add_subcommand("rq1", "concept representation alignment");
    add_common(rq1_cmd, true);
    auto* rq2_cmd = app.add_subcommand("rq2", "concept representation intra-similarity");
    add_common(rq2_cmd, true);
    auto* rq3_cmd = app.add_subcommand("rq3", "downstream importance comparison");
    add_common(rq3_cmd, true);
    auto* rq4_cmd = app.add_subcommand("rq4", "counterfactual removal analysis");
    add_common(rq4_cmd, true);
    auto* report_cmd = app.add_subcommand("report", "run every stage and emit all tables");
    add_common(report_cmd, true);

    // validate
    auto* val_cmd = app.add_subcommand("validate", "validate a catalog file");
    std::string val_catalog;
    val_cmd->add_option("--catalog", val_catalog, "catalog file")->required();

    // init-demo
    auto* demo_cmd = app.add_subcommand("init-demo", "build an offline demo workspace");
    std::string demo_out;
    std::uint64_t demo_seed = 4242;
    std::size_t demo_gen_count = 64;
    int demo_epochs = 80;
    demo_cmd->add_option("--out", demo_out, "workspace directory")->required();
    demo_cmd->add_option("--seed", demo_seed);
    demo_cmd->add_option("--gen-count", demo_gen_count, "synthetic images per concept");
    demo_cmd->add_option("--epochs", demo_epochs, "toy classifier training epochs");

    CLI11_PARSE(app, argc, argv);
    const bool seed_set = app.count_all() && (gen_cmd->count("--seed") || rm_cmd->count("--seed") ||
                                              ex_cmd->count("--seed") || cav_cmd->count("--seed") ||
                                              rq1_cmd->count("--seed") || rq2_cmd->count("--seed") ||
                                              rq3_cmd->count("--seed") || rq4_cmd->count("--seed") ||
                                              report_cmd->count("--seed"));

    try {
        if (val_cmd->parsed()) {
            try {
                load_catalog(val_catalog);
                std::cout << "catalog ok\n";
                return 0;
            } catch (const std::exception& e) {
                std::cerr << e.what() << "\n";
                return 1;
            }
        }
        if (demo_cmd->parsed()) {
            DemoOptions options;
            options.root = demo_out;
            options.seed = demo_seed;
            options.gen_count = demo_gen_count;
            options.train_epochs = demo_epochs;
            const DemoWorkspace ws = build_demo_workspace(options);
            std::cout << "demo workspace at " << demo_out << "\n"
                      << "  toy-cnn train accuracy " << format_double(ws.train_stats.accuracy, 4)
                      << ", mean true-class probability " << format_double(ws.train_stats.mean_true_prob, 4)
                      << "\n"
                      << "run: conceptfaith report --config " << ws.config_path << "\n";
            return 0;
        }

        RunConfig config = load_config(config_path, seed_override, seed_set, figures);
        if (gen_cmd->parsed() && gen_count > 0) config.gen_count = gen_count;
        Pipeline pipeline(config);

        if (gen_cmd->parsed()) {
            pipeline.generate(gen_provider, gen_concept, gen_resume);
            std::cout << "generation complete\n";
            return finish(pipeline);
        }
        if (rm_cmd->parsed()) {
            pipeline.remove(rm_concept, rm_resume);
            std::cout << "removal complete\n";
            return finish(pipeline);
        }
        if (ex_cmd->parsed()) {
            const ImageSet images = load_image_set(pipeline.catalog(), parse_set_key(ex_set));
            const ActivationSet& set = pipeline.activations(images, ex_model, ex_layer);
            std::cout << "stored " << set.size() << " activation tensors for " << ex_set << " at " << ex_layer
                      << "\n";
            return 0;
        }
        if (cav_cmd->parsed()) {
            const ImageSet pos = load_image_set(pipeline.catalog(), parse_set_key(cav_concept + ":" + cav_source));
            const ImageSet neg = pipeline.negatives_for(cav_concept);
            const ActivationSet& pos_acts = pipeline.activations(pos, cav_model, cav_layer);
            const ActivationSet& neg_acts = pipeline.activations(neg, cav_model, cav_layer);
            const CAV cav = compute_cav_dom(pos_acts, neg_acts, parse_pooling(cav_pooling));
            const std::string stem = sanitize_key(cav_concept + ":" + cav_source) + "__" +
                                     sanitize_key(cav_model) + "__" + sanitize_key(cav_layer) + "__" +
                                     cav_pooling;
            save_cav(fs::path(config.output_dir) / "cavs", cav, stem);
            std::cout << "stored CAV " << stem << " (dim " << cav.dim() << ", norm "
                      << format_double(cav.norm(), 6) << ")\n";
            return 0;
        }
        if (rq1_cmd->parsed()) {
            pipeline.run_rq1();
            std::cout << "wrote " << config.output_dir << "/tables/alignment.tsv\n";
            return finish(pipeline);
        }
        if (rq2_cmd->parsed()) {
            pipeline.run_rq2();
            std::cout << "wrote " << config.output_dir << "/tables/intra_similarity.tsv\n";
            return finish(pipeline);
        }
        if (rq3_cmd->parsed()) {
            pipeline.run_rq3();
            std::cout << "wrote " << config.output_dir << "/tables/importance.tsv\n";
            return finish(pipeline);
        }
        if (rq4_cmd->parsed()) {
            pipeline.run_rq4();
            std::cout << "wrote " << config.output_dir << "/tables/removal.tsv\n";
            return finish(pipeline);
        }
        if (report_cmd->parsed()) {
            pipeline.run_report();
            std::cout << "report complete under " << config.output_dir << "\n";
            return finish(pipeline);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
