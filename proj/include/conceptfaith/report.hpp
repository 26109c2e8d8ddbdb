#pragma once
// End-to-end orchestration: a RunConfig drives generation, removal,
// extraction, and the four analysis pipelines, emitting tables (the
// contract), optional figures (views over tables), and appendix-layout
// summaries. Stage outputs are cached by content hash so unchanged reruns
// recompute nothing.

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptfaith/catalog.hpp"
#include "conceptfaith/cav.hpp"
#include "conceptfaith/embedder.hpp"
#include "conceptfaith/extract.hpp"
#include "conceptfaith/genclient.hpp"
#include "conceptfaith/importance.hpp"
#include "conceptfaith/stats.hpp"
#include "conceptfaith/svg.hpp"
#include "conceptfaith/table.hpp"

namespace conceptfaith {

inline const char* kVersion = "0.1.0";

struct ModelConfig {
    std::string id;
    std::string kind = "toy";  // toy | archive
    std::string weights;       // toy
    std::string store;         // archive
    std::vector<std::string> layers;
};

struct RunConfig {
    std::string catalog_path;
    std::string output_dir;
    std::vector<std::string> providers;
    nlohmann::json provider_config = nlohmann::json::object();
    std::string editor_id = "identity";
    nlohmann::json editor_config = nlohmann::json::object();
    std::vector<ModelConfig> models;
    std::vector<ImportanceMethod> methods = {ImportanceMethod::Tcav, ImportanceMethod::VisualTcav};
    std::size_t gen_count = 64;
    BootstrapSpec bootstrap{5, 1.0, true, 101};
    struct {
        std::vector<std::size_t> sizes;  // empty = powers-of-two default
        int repeats = 20;
        std::uint64_t seed = 202;
    } intra;
    struct {
        std::size_t sample_count = 48;
        std::uint64_t seed = 303;
    } negatives;
    int ig_steps = 50;
    std::uint64_t seed = 1;
    bool figures = false;
    nlohmann::json embedder = {{"kind", "mock"}};
    int workers = 1;

    nlohmann::json raw;

    static RunConfig load(const std::string& path) {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(read_file(path));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("config " + path + ": " + e.what());
        }
        detail::reject_unknown_fields(
            doc,
            {"catalog", "output_dir", "providers", "provider_config", "editor", "editor_config", "models",
             "methods", "gen_count", "bootstrap", "intra", "negatives", "ig_steps", "seed", "figures",
             "embedder", "workers"},
            "config");
        const fs::path base = fs::path(path).parent_path();
        RunConfig cfg;
        cfg.raw = doc;
        cfg.catalog_path = detail::resolve_path(base, doc.at("catalog").get<std::string>());
        cfg.output_dir = detail::resolve_path(base, doc.at("output_dir").get<std::string>());
        if (doc.contains("providers")) cfg.providers = doc["providers"].get<std::vector<std::string>>();
        if (doc.contains("provider_config")) cfg.provider_config = doc["provider_config"];
        if (doc.contains("editor")) cfg.editor_id = doc["editor"].get<std::string>();
        if (doc.contains("editor_config")) cfg.editor_config = doc["editor_config"];
        if (!doc.contains("models") || doc["models"].empty())
            throw ParseError("config " + path + ": at least one model is required");
        for (const auto& m : doc["models"]) {
            detail::reject_unknown_fields(m, {"id", "kind", "weights", "store", "layers"}, "model entry");
            ModelConfig mc;
            mc.id = m.at("id").get<std::string>();
            mc.kind = m.value("kind", "toy");
            if (m.contains("weights")) mc.weights = detail::resolve_path(base, m["weights"].get<std::string>());
            if (m.contains("store")) mc.store = detail::resolve_path(base, m["store"].get<std::string>());
            mc.layers = m.at("layers").get<std::vector<std::string>>();
            cfg.models.push_back(std::move(mc));
        }
        if (doc.contains("methods")) {
            cfg.methods.clear();
            for (const auto& m : doc["methods"]) cfg.methods.push_back(parse_method(m.get<std::string>()));
        }
        cfg.gen_count = doc.value("gen_count", cfg.gen_count);
        if (doc.contains("bootstrap")) {
            const auto& b = doc["bootstrap"];
            detail::reject_unknown_fields(b, {"replicates", "ratio", "with_replacement", "seed"}, "bootstrap");
            cfg.bootstrap.replicates = b.value("replicates", cfg.bootstrap.replicates);
            cfg.bootstrap.sampling_ratio = b.value("ratio", cfg.bootstrap.sampling_ratio);
            cfg.bootstrap.with_replacement = b.value("with_replacement", true);
            cfg.bootstrap.seed = b.value("seed", cfg.bootstrap.seed);
        }
        if (doc.contains("intra")) {
            const auto& i = doc["intra"];
            detail::reject_unknown_fields(i, {"sizes", "repeats", "seed"}, "intra");
            if (i.contains("sizes")) cfg.intra.sizes = i["sizes"].get<std::vector<std::size_t>>();
            cfg.intra.repeats = i.value("repeats", cfg.intra.repeats);
            cfg.intra.seed = i.value("seed", cfg.intra.seed);
        }
        if (doc.contains("negatives")) {
            const auto& n = doc["negatives"];
            detail::reject_unknown_fields(n, {"sample_count", "seed"}, "negatives");
            cfg.negatives.sample_count = n.value("sample_count", cfg.negatives.sample_count);
            cfg.negatives.seed = n.value("seed", cfg.negatives.seed);
        }
        cfg.ig_steps = doc.value("ig_steps", cfg.ig_steps);
        cfg.seed = doc.value("seed", cfg.seed);
        cfg.figures = doc.value("figures", false);
        if (doc.contains("embedder")) cfg.embedder = doc["embedder"];
        cfg.workers = doc.value("workers", 1);
        return cfg;
    }
};

inline Pooling method_pooling(ImportanceMethod m) {
    return m == ImportanceMethod::Tcav ? Pooling::Flatten : Pooling::Gap;
}

class Pipeline {
public:
    explicit Pipeline(RunConfig config) : config_(std::move(config)) {
        catalog_ = load_catalog(config_.catalog_path);
        for (const auto& mc : config_.models) {
            std::unique_ptr<ModelAdapter> adapter;
            if (mc.kind == "toy") {
                require(!mc.weights.empty(), "model '" + mc.id + "': toy adapter needs a weights file");
                adapter = std::make_unique<ToyCnnAdapter>(ToyCnnAdapter::from_weights(mc.weights, mc.id));
            } else if (mc.kind == "archive") {
                require(!mc.store.empty(), "model '" + mc.id + "': archive adapter needs a store dir");
                adapter = std::make_unique<ArchiveAdapter>(mc.store, mc.id);
            } else {
                throw ParseError("model '" + mc.id + "': unknown kind '" + mc.kind + "'");
            }
            for (const auto& layer : mc.layers)
                require(adapter->has_layer(layer), "model '" + mc.id + "' has no layer '" + layer + "'");
            adapters_.push_back(std::move(adapter));
        }
        embedder_ = make_embedder(config_.embedder);
        fs::create_directories(fs::path(config_.output_dir) / "tables");
    }

    const RunConfig& config() const { return config_; }
    const ConceptCatalog& catalog() const { return catalog_; }
    const std::vector<std::string>& cell_errors() const { return cell_errors_; }
    int stages_recomputed() const { return stages_recomputed_; }

    // --- generation / removal stages ---------------------------------------

    void generate(const std::string& only_provider = "", const std::string& only_concept = "",
                  bool resume = true) {
        if (config_.providers.empty()) return;
        require(!catalog_.generated_root.empty(), "catalog has no generated_root; nowhere to put images");
        for (const auto& provider_id : config_.providers) {
            if (!only_provider.empty() && provider_id != only_provider) continue;
            auto provider = make_gen_provider(provider_id, provider_cfg(provider_id));
            for (const auto& spec : catalog_.concepts) {
                if (!only_concept.empty() && spec.name != only_concept) continue;
                const fs::path dir = fs::path(catalog_.generated_root) / provider_id / spec.name;
                if (detail::completed_indices(dir).size() >= config_.gen_count) continue;
                GenerationJob job;
                job.concept_spec = spec;
                job.provider = provider_id;
                job.count = config_.gen_count;
                job.seed = job_seed("gen", provider_id, spec.name);
                job.output_dir = dir.string();
                JobOptions options;
                options.resume = resume;
                options.workers = config_.workers;
                generate_concept_images(job, *provider, options);
            }
        }
    }

    void remove(const std::string& only_concept = "", bool resume = true) {
        require(!catalog_.removed_root.empty(), "catalog has no removed_root; nowhere to put edited images");
        for (const auto& spec : catalog_.concepts) {
            if (!only_concept.empty() && spec.name != only_concept) continue;
            const ImageSet class_images = load_image_set(catalog_, {spec.relevant_class, "real"});
            const fs::path dir = fs::path(catalog_.removed_root) / spec.name;
            if (detail::completed_indices(dir).size() >= class_images.paths.size()) continue;
            auto editor = make_edit_provider(config_.editor_id, editor_cfg_for(spec.name));
            RemovalJob job;
            job.concept_spec = spec;
            job.editor = config_.editor_id;
            job.class_images = class_images;
            job.output_dir = dir.string();
            JobOptions options;
            options.resume = resume;
            remove_concept_from_images(job, *editor, options);
        }
    }

    // --- cached extraction --------------------------------------------------

    const ActivationSet& activations(const ImageSet& set, const ModelAdapter& adapter, const std::string& layer) {
        const std::string key = set.key.to_string() + "|" + adapter.model_id() + "|" + layer;
        auto it = act_cache_.find(key);
        if (it != act_cache_.end()) return it->second;

        const fs::path store = fs::path(config_.output_dir) / "activations";
        const std::string stem = activation_archive_stem(set.key, adapter.model_id(), layer);
        if (fs::exists(store / (stem + ".json"))) {
            try {
                ActivationSet cached = load_activation_set(store, set.key, adapter.model_id(), layer);
                if (cached.image_order == set.paths)
                    return act_cache_.emplace(key, std::move(cached)).first->second;
            } catch (const std::exception&) {
                // fall through to recompute
            }
        }
        ActivationSet fresh = adapter.extract_activations(layer, set, config_.workers);
        save_activation_set(store, fresh);
        return act_cache_.emplace(key, std::move(fresh)).first->second;
    }

    const ActivationSet& activations(const ImageSet& set, const std::string& model_id, const std::string& layer) {
        for (auto& adapter : adapters_)
            if (adapter->model_id() == model_id) return activations(set, *adapter, layer);
        throw ValidationError("no configured model '" + model_id + "'");
    }

    ImageSet negatives_for(const std::string& concept_name) {
        if (!catalog_.negatives_dir.empty()) {
            ImageSet set;
            set.key = {"negatives", "real"};
            set.paths = list_files(catalog_.negatives_dir, image_extensions());
            require(!set.paths.empty(), "negative pool is empty");
            return set;
        }
        return sample_negatives(catalog_, concept_name, config_.negatives.sample_count, config_.negatives.seed);
    }

    // --- RQ pipelines --------------------------------------------------------

    ResultTable run_rq1() {
        const std::string stage = "rq1";
        if (stage_is_fresh(stage, {"alignment.tsv"})) return load_table("alignment.tsv");
        ++stages_recomputed_;

        ResultTable table({"concept", "class", "provider", "model", "layer", "pooling", "rho", "rho_boot_mean",
                           "rho_boot_std", "clip_rho", "seed"});
        std::map<std::string, double> clip_cache;
        const std::set<Pooling> poolings = configured_poolings();

        for (const auto& spec : catalog_.concepts) {
            for (const auto& provider_id : config_.providers) {
                const std::string cell_base = "concept=" + spec.name + " provider=" + provider_id;
                double clip_rho = 0.0;
                bool clip_ok = false;
                try {
                    const std::string ck = spec.name + "|" + provider_id;
                    if (!clip_cache.count(ck)) {
                        const ImageSet gen_images = load_image_set(catalog_, {spec.name, "gen:" + provider_id});
                        const ImageSet real_images = load_image_set(catalog_, {spec.name, "real"});
                        clip_cache[ck] = clip_alignment(gen_images, real_images, *embedder_);
                    }
                    clip_rho = clip_cache[spec.name + "|" + provider_id];
                    clip_ok = true;
                } catch (const std::exception& e) {
                    cell_errors_.push_back("rq1 " + cell_base + " clip: " + e.what());
                }
                for (const auto& adapter : adapters_) {
                    for (const auto& layer : layers_of(adapter->model_id())) {
                        for (Pooling pooling : poolings) {
                            try {
                                const ImageSet gen_images =
                                    load_image_set(catalog_, {spec.name, "gen:" + provider_id});
                                const ImageSet real_images = load_image_set(catalog_, {spec.name, "real"});
                                const ImageSet neg_images = negatives_for(spec.name);
                                const ActivationSet& gen = activations(gen_images, *adapter, layer);
                                const ActivationSet& real = activations(real_images, *adapter, layer);
                                const ActivationSet& neg = activations(neg_images, *adapter, layer);

                                const double rho = representation_alignment(gen, real, neg, pooling);

                                const CAV real_cav = compute_cav_dom(real, neg, pooling);
                                std::vector<std::vector<double>> gen_rows(gen.size());
                                for (std::size_t i = 0; i < gen.size(); ++i)
                                    gen_rows[i] = pooled_row(gen.tensors[i], pooling);
                                const std::vector<double> neg_mean = mean_row(neg, pooling);
                                BootstrapSpec bs = config_.bootstrap;
                                bs.seed = job_seed("rq1-boot", provider_id,
                                                   spec.name + "|" + adapter->model_id() + "|" + layer);
                                std::vector<double> boot;
                                for (const auto& idx : bootstrap_indices(gen_rows.size(), bs)) {
                                    CAV cav_b = resampled_cav(gen_rows, neg_mean, idx, pooling, gen, spec.name);
                                    boot.push_back(cosine_similarity(cav_b, real_cav));
                                }
                                table.add_row({spec.name, spec.relevant_class, provider_id, adapter->model_id(),
                                               layer, pooling_name(pooling), format_double(rho),
                                               format_double(mean_of(boot)), format_double(stddev_of(boot)),
                                               clip_ok ? format_double(clip_rho) : "-",
                                               std::to_string(config_.seed)});
                            } catch (const std::exception& e) {
                                cell_errors_.push_back("rq1 " + cell_base + " model=" + adapter->model_id() +
                                                       " layer=" + layer + ": " + e.what());
                            }
                        }
                    }
                }
            }
        }
        save_table(table, "alignment.tsv");
        stamp_stage(stage);
        return table;
    }

    // Returns (curves, clip intra-similarity).
    std::pair<ResultTable, ResultTable> run_rq2() {
        const std::string stage = "rq2";
        if (stage_is_fresh(stage, {"intra_similarity.tsv", "clip_intra.tsv"}))
            return {load_table("intra_similarity.tsv"), load_table("clip_intra.tsv")};
        ++stages_recomputed_;

        ResultTable curves(
            {"concept", "source", "model", "layer", "pooling", "u", "mean", "std", "repeats", "seed"});
        ResultTable clip({"concept", "source", "value"});
        const std::set<Pooling> poolings = configured_poolings();

        for (const auto& spec : catalog_.concepts) {
            std::vector<std::string> sources = {"real"};
            for (const auto& p : config_.providers) sources.push_back("gen:" + p);
            for (const auto& source : sources) {
                const std::string cell_base = "concept=" + spec.name + " source=" + source;
                try {
                    const ImageSet images = load_image_set(catalog_, {spec.name, source});
                    if (images.paths.size() >= 2)
                        clip.add_row({spec.name, source,
                                      format_double(clip_intra_similarity(images, *embedder_))});
                } catch (const std::exception& e) {
                    cell_errors_.push_back("rq2 " + cell_base + " clip: " + e.what());
                }
                for (const auto& adapter : adapters_) {
                    for (const auto& layer : layers_of(adapter->model_id())) {
                        for (Pooling pooling : poolings) {
                            try {
                                const ImageSet images = load_image_set(catalog_, {spec.name, source});
                                const ImageSet neg_images = negatives_for(spec.name);
                                const ActivationSet& acts = activations(images, *adapter, layer);
                                const ActivationSet& neg = activations(neg_images, *adapter, layer);
                                const std::vector<std::size_t> sizes =
                                    config_.intra.sizes.empty() ? default_subset_sizes(acts.size())
                                                                : config_.intra.sizes;
                                const std::uint64_t cell_seed =
                                    hash_combine(config_.intra.seed,
                                                 fnv1a64(spec.name + "|" + source + "|" + adapter->model_id() +
                                                         "|" + layer + "|" + pooling_name(pooling)));
                                const IntraSimilarityCurve curve = intra_similarity_curve(
                                    acts, neg, sizes, config_.intra.repeats, cell_seed, pooling);
                                for (const auto& pt : curve.points)
                                    curves.add_row({spec.name, source, adapter->model_id(), layer,
                                                    pooling_name(pooling), std::to_string(pt.u),
                                                    format_double(pt.mean), format_double(pt.stddev),
                                                    std::to_string(pt.repeats), std::to_string(cell_seed)});
                            } catch (const std::exception& e) {
                                cell_errors_.push_back("rq2 " + cell_base + " model=" + adapter->model_id() +
                                                       " layer=" + layer + ": " + e.what());
                            }
                        }
                    }
                }
            }
        }
        save_table(curves, "intra_similarity.tsv");
        save_table(clip, "clip_intra.tsv");
        stamp_stage(stage);
        return {curves, clip};
    }

    struct Rq3Result {
        ResultTable importance;
        ResultTable deltas;
        ResultTable ks;
    };

    Rq3Result run_rq3() {
        const std::string stage = "rq3";
        if (stage_is_fresh(stage, {"importance.tsv", "importance_deltas.tsv", "importance_ks.tsv"}))
            return {load_table("importance.tsv"), load_table("importance_deltas.tsv"),
                    load_table("importance_ks.tsv")};
        ++stages_recomputed_;

        ResultTable importance({"concept", "class", "model", "layer", "method", "cav_source", "inputs",
                                "replicate", "score", "seed"});
        ResultTable deltas(
            {"concept", "class", "model", "layer", "method", "provider", "replicate", "delta", "seed"});
        // KS pools cells per provider x method: real scores vs replicate-mean
        // generated scores.
        std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> ks_samples;

        for (const auto& spec : catalog_.concepts) {
            for (const auto& adapter : adapters_) {
                for (const auto& layer : layers_of(adapter->model_id())) {
                    for (ImportanceMethod method : config_.methods) {
                        const std::string cell_base = "concept=" + spec.name + " model=" + adapter->model_id() +
                                                      " layer=" + layer + " method=" + method_name(method);
                        try {
                            const Pooling pooling = method_pooling(method);
                            const ImageSet class_images =
                                load_image_set(catalog_, {spec.relevant_class, "real"});
                            const ImageSet real_images = load_image_set(catalog_, {spec.name, "real"});
                            const ImageSet neg_images = negatives_for(spec.name);
                            const ActivationSet& real_acts = activations(real_images, *adapter, layer);
                            const ActivationSet& neg_acts = activations(neg_images, *adapter, layer);

                            const CAV real_cav = compute_cav_dom(real_acts, neg_acts, pooling);
                            const double s_real =
                                score_cav(real_cav, *adapter, layer, spec.relevant_class, class_images, method);
                            importance.add_row({spec.name, spec.relevant_class, adapter->model_id(), layer,
                                                method_name(method), "real", "original", "-",
                                                format_double(s_real), std::to_string(config_.seed)});

                            for (const auto& provider_id : config_.providers) {
                                const ImageSet gen_images =
                                    load_image_set(catalog_, {spec.name, "gen:" + provider_id});
                                const ActivationSet& gen_acts = activations(gen_images, *adapter, layer);
                                std::vector<std::vector<double>> gen_rows(gen_acts.size());
                                for (std::size_t i = 0; i < gen_acts.size(); ++i)
                                    gen_rows[i] = pooled_row(gen_acts.tensors[i], pooling);
                                const std::vector<double> neg_mean = mean_row(neg_acts, pooling);

                                BootstrapSpec bs = config_.bootstrap;
                                bs.seed = job_seed("rq3-boot", provider_id,
                                                   spec.name + "|" + adapter->model_id() + "|" + layer + "|" +
                                                       method_name(method));
                                std::vector<double> replicate_scores;
                                int replicate = 0;
                                for (const auto& idx : bootstrap_indices(gen_rows.size(), bs)) {
                                    ++replicate;
                                    const CAV cav_b =
                                        resampled_cav(gen_rows, neg_mean, idx, pooling, gen_acts, spec.name);
                                    const double s_gen = score_cav(cav_b, *adapter, layer, spec.relevant_class,
                                                                   class_images, method);
                                    replicate_scores.push_back(s_gen);
                                    importance.add_row({spec.name, spec.relevant_class, adapter->model_id(),
                                                        layer, method_name(method), "gen:" + provider_id,
                                                        "original", std::to_string(replicate),
                                                        format_double(s_gen), std::to_string(bs.seed)});
                                    deltas.add_row({spec.name, spec.relevant_class, adapter->model_id(), layer,
                                                    method_name(method), provider_id, std::to_string(replicate),
                                                    format_double(std::abs(s_gen - s_real)),
                                                    std::to_string(bs.seed)});
                                }
                                auto& samples = ks_samples[provider_id + "|" + method_name(method)];
                                samples.first.push_back(s_real);
                                samples.second.push_back(mean_of(replicate_scores));
                            }
                        } catch (const std::exception& e) {
                            cell_errors_.push_back("rq3 " + cell_base + ": " + e.what());
                        }
                    }
                }
            }
        }

        ResultTable ks({"provider", "method", "statistic", "p_value", "n1", "n2"});
        for (const auto& [key, samples] : ks_samples) {
            const auto sep = key.find('|');
            try {
                const TestResult r = ks_two_sample(samples.first, samples.second);
                ks.add_row({key.substr(0, sep), key.substr(sep + 1), format_double(r.statistic),
                            format_double(r.p_value), std::to_string(r.n1), std::to_string(r.n2)});
            } catch (const std::exception& e) {
                cell_errors_.push_back("rq3 ks " + key + ": " + e.what());
            }
        }

        save_table(importance, "importance.tsv");
        save_table(deltas, "importance_deltas.tsv");
        save_table(ks, "importance_ks.tsv");
        stamp_stage(stage);
        return {importance, deltas, ks};
    }

    struct Rq4Result {
        ResultTable removal;
        ResultTable stats;
    };

    Rq4Result run_rq4() {
        const std::string stage = "rq4";
        if (stage_is_fresh(stage, {"removal.tsv", "removal_stats.tsv"}))
            return {load_table("removal.tsv"), load_table("removal_stats.tsv")};
        ++stages_recomputed_;

        ResultTable removal({"concept", "class", "model", "layer", "method", "cav_source", "s_original",
                             "s_removed", "delta_rm", "delta_p", "seed"});

        for (const auto& spec : catalog_.concepts) {
            for (const auto& adapter : adapters_) {
                double delta_p = 0.0;
                bool delta_p_ok = false;
                try {
                    const ImageSet originals = load_image_set(catalog_, {spec.relevant_class, "real"});
                    const ImageSet removed = load_image_set(catalog_, {spec.name, "removed"});
                    delta_p = probability_drop(*adapter, spec.relevant_class, originals, removed,
                                               config_.workers);
                    delta_p_ok = true;
                } catch (const std::exception& e) {
                    cell_errors_.push_back("rq4 concept=" + spec.name + " model=" + adapter->model_id() +
                                           " delta_p: " + e.what());
                }
                for (const auto& layer : layers_of(adapter->model_id())) {
                    for (ImportanceMethod method : config_.methods) {
                        const std::string cell_base = "concept=" + spec.name + " model=" + adapter->model_id() +
                                                      " layer=" + layer + " method=" + method_name(method);
                        try {
                            const Pooling pooling = method_pooling(method);
                            const ImageSet class_images =
                                load_image_set(catalog_, {spec.relevant_class, "real"});
                            const ImageSet removed_images = load_image_set(catalog_, {spec.name, "removed"});
                            const ImageSet neg_images = negatives_for(spec.name);
                            const ActivationSet& neg_acts = activations(neg_images, *adapter, layer);

                            std::vector<CAV> cavs;
                            const ImageSet real_images = load_image_set(catalog_, {spec.name, "real"});
                            cavs.push_back(
                                compute_cav_dom(activations(real_images, *adapter, layer), neg_acts, pooling));
                            for (const auto& provider_id : config_.providers) {
                                const ImageSet gen_images =
                                    load_image_set(catalog_, {spec.name, "gen:" + provider_id});
                                cavs.push_back(
                                    compute_cav_dom(activations(gen_images, *adapter, layer), neg_acts, pooling));
                            }

                            for (const CAV& cav : cavs) {
                                const double s_orig = score_cav(cav, *adapter, layer, spec.relevant_class,
                                                                class_images, method);
                                const double s_rm = score_cav(cav, *adapter, layer, spec.relevant_class,
                                                              removed_images, method);
                                removal.add_row({spec.name, spec.relevant_class, adapter->model_id(), layer,
                                                 method_name(method), cav.provenance.source,
                                                 format_double(s_orig), format_double(s_rm),
                                                 format_double(s_orig - s_rm),
                                                 delta_p_ok ? format_double(delta_p) : "-",
                                                 std::to_string(config_.seed)});
                            }
                        } catch (const std::exception& e) {
                            cell_errors_.push_back("rq4 " + cell_base + ": " + e.what());
                        }
                    }
                }
            }
        }

        // Monotonic-relationship statistics on the real-CAV rows.
        ResultTable stats({"method", "n", "spearman_rho", "spearman_p", "logistic_L", "logistic_k",
                           "logistic_x0", "rmse", "converged", "status"});
        for (ImportanceMethod method : config_.methods) {
            std::vector<double> xs, ys;
            for (std::size_t r = 0; r < removal.rows.size(); ++r) {
                if (removal.cell(r, "cav_source") != "real") continue;
                if (removal.cell(r, "method") != method_name(method)) continue;
                if (removal.cell(r, "delta_p") == "-") continue;
                xs.push_back(removal.numeric(r, "delta_rm"));
                ys.push_back(removal.numeric(r, "delta_p"));
            }
            std::string status = "ok";
            std::vector<std::string> row{method_name(method), std::to_string(xs.size()), "-", "-", "-", "-",
                                         "-",                 "-",                      "-", ""};
            try {
                const TestResult sp = spearman(xs, ys);
                row[2] = format_double(sp.statistic);
                row[3] = format_double(sp.p_value);
                const LogisticFit fit = fit_logistic(xs, ys);
                row[4] = format_double(fit.L);
                row[5] = format_double(fit.k);
                row[6] = format_double(fit.x0);
                row[7] = format_double(fit.rmse);
                row[8] = fit.degenerate ? "degenerate" : (fit.converged ? "yes" : "no");
            } catch (const std::exception& e) {
                status = std::string("error: ") + e.what();
            }
            row[9] = status;
            stats.add_row(std::move(row));
        }

        save_table(removal, "removal.tsv");
        save_table(stats, "removal_stats.tsv");
        stamp_stage(stage);
        return {removal, stats};
    }

    // --- appendix-layout summaries ------------------------------------------

    void emit_appendix_tables(const ResultTable& alignment, const ResultTable& importance) {
        for (ImportanceMethod method : config_.methods) {
            const Pooling pooling = method_pooling(method);
            // Alignment: provider rows, aggregated over model x layer.
            ResultTable filtered({"class", "concept", "source", "value"});
            for (std::size_t r = 0; r < alignment.rows.size(); ++r) {
                if (alignment.cell(r, "pooling") != pooling_name(pooling)) continue;
                filtered.add_row({alignment.cell(r, "class"), alignment.cell(r, "concept"),
                                  alignment.cell(r, "provider"), alignment.cell(r, "rho")});
            }
            write_appendix(filtered, "appendix_alignment_" + std::string(method_name(method)),
                           "Average alignment rho per concept (" + std::string(method_name(method)) + ")");

            // Importance: Real plus provider rows, aggregated over
            // model x layer (x replicate for generated sources).
            ResultTable imp({"class", "concept", "source", "value"});
            for (std::size_t r = 0; r < importance.rows.size(); ++r) {
                if (importance.cell(r, "method") != method_name(method)) continue;
                if (importance.cell(r, "inputs") != "original") continue;
                const std::string& src = importance.cell(r, "cav_source");
                imp.add_row({importance.cell(r, "class"), importance.cell(r, "concept"),
                             src == "real" ? "Real" : src.substr(4), importance.cell(r, "score")});
            }
            write_appendix(imp, "appendix_importance_" + std::string(method_name(method)),
                           "Average importance score per concept (" + std::string(method_name(method)) + ")");
        }
    }

    // --- figures --------------------------------------------------------------

    void emit_figures(const ResultTable& alignment, const ResultTable& curves, const ResultTable& deltas,
                      const ResultTable& removal, const ResultTable& removal_stats) {
        const fs::path dir = fs::path(config_.output_dir) / "figures";
        fs::create_directories(dir);

        {
            std::vector<svgplot::Group> groups;
            for (const auto& provider : config_.providers) {
                svgplot::Group g{provider, {}};
                for (std::size_t r = 0; r < alignment.rows.size(); ++r)
                    if (alignment.cell(r, "provider") == provider) g.values.push_back(alignment.numeric(r, "rho"));
                if (!g.values.empty()) groups.push_back(std::move(g));
            }
            if (!groups.empty())
                write_file_atomic(dir / "rq1_alignment_box.svg",
                                  svgplot::box_plot(groups, "Alignment of concept representations", "rho"));
        }
        {
            std::vector<std::string> sources = {"real"};
            for (const auto& p : config_.providers) sources.push_back("gen:" + p);
            std::vector<svgplot::Series> series;
            for (const auto& source : sources) {
                ResultTable sub({"source", "u", "mean"});
                for (std::size_t r = 0; r < curves.rows.size(); ++r)
                    if (curves.cell(r, "source") == source)
                        sub.add_row({source, curves.cell(r, "u"), curves.cell(r, "mean")});
                if (sub.rows.empty()) continue;
                const ResultTable agg = aggregate(sub, {"u"}, "mean");
                svgplot::Series sr;
                sr.label = source;
                std::vector<std::pair<double, std::pair<double, double>>> pts;
                for (std::size_t r = 0; r < agg.rows.size(); ++r)
                    pts.push_back({agg.numeric(r, "u"), {agg.numeric(r, "mean"), agg.numeric(r, "std")}});
                std::sort(pts.begin(), pts.end());
                for (const auto& [u, my] : pts) {
                    sr.x.push_back(u);
                    sr.y.push_back(my.first);
                    sr.err.push_back(my.second);
                }
                series.push_back(std::move(sr));
            }
            if (!series.empty())
                write_file_atomic(dir / "rq2_intra_similarity.svg",
                                  svgplot::line_plot(series, "Concept representation intra-similarity",
                                                     "subset size u", "rho(u)"));
        }
        {
            std::vector<svgplot::Group> groups;
            for (const auto& provider : config_.providers) {
                svgplot::Group g{provider, {}};
                for (std::size_t r = 0; r < deltas.rows.size(); ++r)
                    if (deltas.cell(r, "provider") == provider) g.values.push_back(deltas.numeric(r, "delta"));
                if (!g.values.empty()) groups.push_back(std::move(g));
            }
            if (!groups.empty())
                write_file_atomic(dir / "rq3_delta_box.svg",
                                  svgplot::box_plot(groups, "Importance score variation", "|delta s|"));
        }
        {
            std::vector<svgplot::Group> groups;
            std::vector<std::string> sources = {"real"};
            for (const auto& p : config_.providers) sources.push_back("gen:" + p);
            for (const auto& source : sources) {
                svgplot::Group g{source, {}};
                for (std::size_t r = 0; r < removal.rows.size(); ++r)
                    if (removal.cell(r, "cav_source") == source) g.values.push_back(removal.numeric(r, "delta_rm"));
                if (g.values.size() >= 2) groups.push_back(std::move(g));
            }
            if (!groups.empty())
                write_file_atomic(dir / "rq4_removal_violin.svg",
                                  svgplot::violin_plot(groups, "Importance variation after removal", "delta s rm"));

            std::vector<double> xs, ys;
            for (std::size_t r = 0; r < removal.rows.size(); ++r) {
                if (removal.cell(r, "cav_source") != "real" || removal.cell(r, "delta_p") == "-") continue;
                xs.push_back(removal.numeric(r, "delta_rm"));
                ys.push_back(removal.numeric(r, "delta_p"));
            }
            std::function<double(double)> overlay;
            for (std::size_t r = 0; r < removal_stats.rows.size(); ++r) {
                if (removal_stats.cell(r, "status") != "ok") continue;
                const double L = removal_stats.numeric(r, "logistic_L");
                const double k = removal_stats.numeric(r, "logistic_k");
                const double x0 = removal_stats.numeric(r, "logistic_x0");
                overlay = [L, k, x0](double x) { return detail::logistic_value(L, k, x0, x); };
                break;
            }
            if (!xs.empty())
                write_file_atomic(dir / "rq4_scatter.svg",
                                  svgplot::scatter_plot(xs, ys, overlay, "Removal validation", "delta s rm",
                                                        "delta P"));
        }
    }

    // --- full run -------------------------------------------------------------

    bool run_report() {
        generate();
        remove();
        const ResultTable alignment = run_rq1();
        const auto [curves, clip] = run_rq2();
        const Rq3Result rq3 = run_rq3();
        const Rq4Result rq4 = run_rq4();
        emit_appendix_tables(alignment, rq3.importance);
        if (config_.figures) emit_figures(alignment, curves, rq3.deltas, rq4.removal, rq4.stats);

        nlohmann::json manifest{{"version", kVersion},
                                {"config_hash", format_hash(fnv1a64(config_.raw.dump()))},
                                {"catalog_hash", format_hash(file_content_hash(config_.catalog_path))},
                                {"inputs_hash", format_hash(inputs_hash())},
                                {"cell_errors", cell_errors_}};
        write_file_atomic(fs::path(config_.output_dir) / "run.json", manifest.dump(2) + "\n");
        return cell_errors_.empty();
    }

private:
    nlohmann::json provider_cfg(const std::string& provider_id) const {
        if (config_.provider_config.contains(provider_id)) return config_.provider_config[provider_id];
        return nlohmann::json{{"kind", "mock"}};
    }

    nlohmann::json editor_cfg_for(const std::string& concept_name) const {
        nlohmann::json cfg = config_.editor_config.contains(config_.editor_id)
                                 ? config_.editor_config[config_.editor_id]
                                 : nlohmann::json{{"kind", config_.editor_id == "erase" ? "erase" : "identity"}};
        if (cfg.contains("strength_by_concept")) {
            if (cfg["strength_by_concept"].contains(concept_name))
                cfg["strength"] = cfg["strength_by_concept"][concept_name];
            cfg.erase("strength_by_concept");
        }
        return cfg;
    }

    std::vector<std::string> layers_of(const std::string& model_id) const {
        for (const auto& mc : config_.models)
            if (mc.id == model_id) return mc.layers;
        throw ValidationError("no configured model '" + model_id + "'");
    }

    std::set<Pooling> configured_poolings() const {
        std::set<Pooling> out;
        for (ImportanceMethod m : config_.methods) out.insert(method_pooling(m));
        return out;
    }

    std::int64_t job_seed(const std::string& stage, const std::string& provider,
                          const std::string& concept_name) const {
        const std::uint64_t h =
            hash_combine(config_.seed, fnv1a64(stage + "|" + provider + "|" + concept_name));
        return static_cast<std::int64_t>(h & 0x7fffffffffffffffull);
    }

    CAV resampled_cav(const std::vector<std::vector<double>>& rows, const std::vector<double>& neg_mean,
                      const std::vector<std::size_t>& indices, Pooling pooling, const ActivationSet& source_set,
                      const std::string& concept_name) const {
        CAV cav;
        cav.pooling = pooling;
        cav.vector.assign(neg_mean.size(), 0.0);
        for (std::size_t idx : indices)
            for (std::size_t j = 0; j < cav.vector.size(); ++j) cav.vector[j] += rows[idx][j];
        for (std::size_t j = 0; j < cav.vector.size(); ++j)
            cav.vector[j] = cav.vector[j] / static_cast<double>(indices.size()) - neg_mean[j];
        cav.provenance = {concept_name, source_set.key.source, source_set.model_id, source_set.layer,
                          "bootstrap", 0};
        require(cav.norm() > 0.0, "zero-norm bootstrap CAV for " + concept_name);
        return cav;
    }

    double score_cav(const CAV& cav, const ModelAdapter& adapter, const std::string& layer,
                     const std::string& class_name, const ImageSet& class_images, ImportanceMethod method) {
        const int class_id = adapter.class_index(class_name);
        const std::string cache_key = class_images.key.to_string() + "|" + adapter.model_id() + "|" + layer +
                                      "|" + std::to_string(class_id);
        if (method == ImportanceMethod::Tcav) {
            auto it = grad_cache_.find(cache_key);
            if (it == grad_cache_.end())
                it = grad_cache_
                         .emplace(cache_key, adapter.class_gradients_at_layer(layer, class_images, class_id,
                                                                              GradientTarget::Logit,
                                                                              config_.workers))
                         .first;
            return tcav_score(cav, it->second);
        }
        auto it = ig_cache_.find(cache_key);
        if (it == ig_cache_.end())
            it = ig_cache_
                     .emplace(cache_key,
                              integrated_gradients_set(adapter, layer, class_images, class_id, config_.ig_steps,
                                                       IgBaseline::Zero, config_.workers))
                     .first;
        const ActivationSet& acts = activations(class_images, adapter, layer);
        return visual_tcav_attribution(cav, it->second, acts);
    }

    // --- table/stage plumbing ---------------------------------------------

    fs::path table_path(const std::string& name) const {
        return fs::path(config_.output_dir) / "tables" / name;
    }

    void save_table(const ResultTable& table, const std::string& name) const { table.save(table_path(name)); }

    ResultTable load_table(const std::string& name) const { return ResultTable::load(table_path(name)); }

    static std::string format_hash(std::uint64_t h) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

    // Everything the analysis stages read: catalog file, model weights or
    // archive manifests, generation/removal manifests, and the config itself.
    std::uint64_t inputs_hash() const {
        std::uint64_t h = fnv1a64(config_.raw.dump());
        h = hash_combine(h, file_content_hash(config_.catalog_path));
        for (const auto& mc : config_.models) {
            if (!mc.weights.empty() && fs::exists(mc.weights))
                h = hash_combine(h, file_content_hash(mc.weights));
            if (!mc.store.empty()) {
                const fs::path mm = fs::path(mc.store) / mc.id / "model.json";
                if (fs::exists(mm)) h = hash_combine(h, file_content_hash(mm));
            }
        }
        auto fold_manifest = [&](const fs::path& dir) {
            const fs::path m = dir / "manifest.jsonl";
            if (fs::exists(m)) h = hash_combine(h, file_content_hash(m));
        };
        for (const auto& spec : catalog_.concepts) {
            if (!catalog_.generated_root.empty())
                for (const auto& p : config_.providers)
                    fold_manifest(fs::path(catalog_.generated_root) / p / spec.name);
            if (!catalog_.removed_root.empty()) fold_manifest(fs::path(catalog_.removed_root) / spec.name);
        }
        return h;
    }

    bool stage_is_fresh(const std::string& stage, const std::vector<std::string>& outputs) {
        const fs::path stamp = fs::path(config_.output_dir) / ".stamps" / (stage + ".json");
        if (!fs::exists(stamp)) return false;
        for (const auto& out : outputs)
            if (!fs::exists(table_path(out))) return false;
        try {
            const nlohmann::json doc = nlohmann::json::parse(read_file(stamp));
            return doc.value("inputs_hash", "") == format_hash(inputs_hash());
        } catch (const std::exception&) {
            return false;
        }
    }

    void stamp_stage(const std::string& stage) const {
        nlohmann::json doc{{"inputs_hash", format_hash(inputs_hash())}, {"version", kVersion}};
        write_file_atomic(fs::path(config_.output_dir) / ".stamps" / (stage + ".json"), doc.dump(2) + "\n");
    }

    // Appendix layout: one block per class, concepts as columns, one row per
    // source, cells mean+-std aggregated over everything else.
    void write_appendix(const ResultTable& rows, const std::string& stem, const std::string& title) const {
        const ResultTable agg = aggregate(rows, {"class", "concept", "source"}, "value");
        agg.save(table_path(stem + ".tsv"));

        std::map<std::string, std::map<std::string, std::map<std::string, std::string>>> cells;
        std::set<std::string> sources;
        for (std::size_t r = 0; r < agg.rows.size(); ++r) {
            char cell[64];
            std::snprintf(cell, sizeof(cell), "%.3f+-%.3f", agg.numeric(r, "mean"), agg.numeric(r, "std"));
            cells[agg.cell(r, "class")][agg.cell(r, "concept")][agg.cell(r, "source")] = cell;
            sources.insert(agg.cell(r, "source"));
        }
        std::vector<std::string> source_order;
        if (sources.count("Real")) source_order.push_back("Real");
        for (const auto& s : sources)
            if (s != "Real") source_order.push_back(s);

        std::string text = "# " + title + "\n";
        for (const auto& [class_name, concepts] : cells) {
            text += "\nClass: " + class_name + "\n";
            text += "| source |";
            for (const auto& [concept_name, by_source] : concepts) {
                (void)by_source;
                text += " " + concept_name + " |";
            }
            text += "\n|---|";
            for (std::size_t i = 0; i < concepts.size(); ++i) text += "---|";
            text += "\n";
            for (const auto& source : source_order) {
                text += "| " + source + " |";
                for (const auto& [concept_name, by_source] : concepts) {
                    const auto it = by_source.find(source);
                    text += " " + (it == by_source.end() ? std::string("-") : it->second) + " |";
                }
                text += "\n";
            }
        }
        write_file_atomic(table_path(stem + ".md"), text);
    }

    RunConfig config_;
    ConceptCatalog catalog_;
    std::vector<std::unique_ptr<ModelAdapter>> adapters_;
    std::unique_ptr<Embedder> embedder_;
    std::map<std::string, ActivationSet> act_cache_;
    std::map<std::string, GradientSet> grad_cache_;
    std::map<std::string, std::vector<AttributionMap>> ig_cache_;
    std::vector<std::string> cell_errors_;
    int stages_recomputed_ = 0;
};

// Spec-level operation surface.
inline ResultTable run_rq1(const RunConfig& config) { return Pipeline(config).run_rq1(); }
inline std::pair<ResultTable, ResultTable> run_rq2(const RunConfig& config) { return Pipeline(config).run_rq2(); }
inline Pipeline::Rq3Result run_rq3(const RunConfig& config) { return Pipeline(config).run_rq3(); }
inline Pipeline::Rq4Result run_rq4(const RunConfig& config) { return Pipeline(config).run_rq4(); }

}  // namespace conceptfaith
