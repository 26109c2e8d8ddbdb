#pragma once
// Model adapters: expose layer activations, class probabilities, class-logit
// gradients at a layer, and integrated-gradient attributions at a layer.
//
// Two adapter families:
//  - compute adapters (the bundled toy-cnn) run the model per image;
//  - archive adapters serve precomputed tensors from the activation store,
//    which is how full-scale backbones plug in (see README for the exporter
//    contract).
//
// Store layout per (set, model, layer): <name>.bin (raw little-endian f64,
// image-major, row-major (h, w, c)) + <name>.json sidecar
// {shape, dtype, image_order, model_id, layer, preprocessing}.

#include <atomic>
#include <cstring>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "conceptfaith/catalog.hpp"
#include "conceptfaith/image.hpp"
#include "conceptfaith/tensor.hpp"
#include "conceptfaith/toycnn.hpp"

namespace conceptfaith {

struct ActivationSet {
    ImageSetKey key;
    std::string model_id;
    std::string layer;
    std::vector<Tensor3> tensors;
    std::vector<std::string> image_order;

    std::size_t size() const { return tensors.size(); }
};

using GradientSet = ActivationSet;

struct AttributionMap {
    Tensor3 attributions;
    double completeness_residual = 0.0;
};

struct ProbabilitySeries {
    int class_id = 0;
    std::vector<double> values;
    double mean = 0.0;
};

enum class GradientTarget { Logit, Softmax };
enum class IgBaseline { Zero, Self };

namespace detail {

// Deterministic parallel map: slot i is written only by the worker that
// computed item i, so scheduling cannot change results.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> cursor{0};
    std::exception_ptr first_error;
    std::mutex err_mu;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = cursor.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    const int count = std::min<int>(threads, static_cast<int>(n));
    for (int t = 1; t < count; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace detail

class ModelAdapter {
public:
    virtual ~ModelAdapter() = default;

    virtual std::string model_id() const = 0;
    virtual std::pair<int, int> input_size() const = 0;
    virtual int class_count() const = 0;
    virtual std::vector<std::string> layers() const = 0;
    virtual int class_index(const std::string& name) const = 0;
    virtual std::string preprocessing_id() const = 0;

    bool has_layer(const std::string& layer) const {
        const auto ls = layers();
        return std::find(ls.begin(), ls.end(), layer) != ls.end();
    }

    // Per-image primitives; archive adapters reject these and serve the
    // set-level operations below instead.
    virtual Tensor3 activations_for(const std::string& path, const std::string& layer) const = 0;
    virtual std::vector<double> probabilities_for(const std::string& path) const = 0;
    virtual std::vector<double> logits_from_layer(const std::string& layer, const Tensor3& act) const = 0;
    virtual Tensor3 logit_gradient(const std::string& layer, const Tensor3& act, int class_id,
                                   GradientTarget target) const = 0;

    virtual ActivationSet extract_activations(const std::string& layer, const ImageSet& images,
                                              int batch = 1) const {
        check_layer(layer);
        require(batch >= 1, "batch must be >= 1");
        ActivationSet out;
        out.key = images.key;
        out.model_id = model_id();
        out.layer = layer;
        out.image_order = images.paths;
        out.tensors.resize(images.paths.size());
        detail::parallel_for(images.paths.size(), batch, [&](std::size_t i) {
            out.tensors[i] = activations_for(images.paths[i], layer);
            if (!out.tensors[i].all_finite())
                throw ValidationError("non-finite activation for " + images.paths[i]);
        });
        return out;
    }

    virtual ProbabilitySeries class_probability(const ImageSet& images, int class_id, int batch = 1) const {
        require(class_id >= 0 && class_id < class_count(),
                "invalid class " + std::to_string(class_id) + " for model " + model_id());
        ProbabilitySeries out;
        out.class_id = class_id;
        out.values.resize(images.paths.size());
        detail::parallel_for(images.paths.size(), batch, [&](std::size_t i) {
            out.values[i] = probabilities_for(images.paths[i])[class_id];
        });
        out.mean = mean_of(out.values);
        return out;
    }

    virtual GradientSet class_gradients_at_layer(const std::string& layer, const ImageSet& images, int class_id,
                                                 GradientTarget target = GradientTarget::Logit,
                                                 int batch = 1) const {
        check_layer(layer);
        require(class_id >= 0 && class_id < class_count(),
                "invalid class " + std::to_string(class_id) + " for model " + model_id());
        GradientSet out;
        out.key = images.key;
        out.model_id = model_id();
        out.layer = layer;
        out.image_order = images.paths;
        out.tensors.resize(images.paths.size());
        detail::parallel_for(images.paths.size(), batch, [&](std::size_t i) {
            const Tensor3 act = activations_for(images.paths[i], layer);
            out.tensors[i] = logit_gradient(layer, act, class_id, target);
        });
        return out;
    }

    // IG in activation space:
    //   attribution = (a - a0) .* mean_{i=1..m} dlogit_k/da at a0 + (i/m)(a - a0)
    //   residual    = |sum(attribution) - (logit_k(a) - logit_k(a0))|
    virtual AttributionMap integrated_gradients_at_layer(const std::string& layer, const std::string& image_path,
                                                         int class_id, int steps,
                                                         IgBaseline baseline = IgBaseline::Zero) const {
        check_layer(layer);
        require(steps >= 1, "integrated gradients needs steps >= 1");
        require(class_id >= 0 && class_id < class_count(),
                "invalid class " + std::to_string(class_id) + " for model " + model_id());
        const Tensor3 a = activations_for(image_path, layer);
        Tensor3 a0(a.h, a.w, a.c);
        if (baseline == IgBaseline::Self) a0 = a;

        Tensor3 mean_grad(a.h, a.w, a.c);
        Tensor3 point(a.h, a.w, a.c);
        for (int i = 1; i <= steps; ++i) {
            const double t = static_cast<double>(i) / steps;
            for (std::size_t j = 0; j < point.data.size(); ++j)
                point.data[j] = a0.data[j] + t * (a.data[j] - a0.data[j]);
            const Tensor3 g = logit_gradient(layer, point, class_id, GradientTarget::Logit);
            for (std::size_t j = 0; j < mean_grad.data.size(); ++j) mean_grad.data[j] += g.data[j];
        }

        AttributionMap out;
        out.attributions = Tensor3(a.h, a.w, a.c);
        double total = 0.0;
        for (std::size_t j = 0; j < a.data.size(); ++j) {
            out.attributions.data[j] = (a.data[j] - a0.data[j]) * mean_grad.data[j] / steps;
            total += out.attributions.data[j];
        }
        const double span = logits_from_layer(layer, a)[class_id] - logits_from_layer(layer, a0)[class_id];
        out.completeness_residual = std::abs(total - span);
        return out;
    }

protected:
    void check_layer(const std::string& layer) const {
        if (!has_layer(layer))
            throw ValidationError("unknown layer '" + layer + "' for model " + model_id());
    }
};

// Spec-level operation surface; thin forwarders over the adapter.
inline ActivationSet extract_activations(const ModelAdapter& adapter, const std::string& layer,
                                         const ImageSet& images, int batch = 1) {
    return adapter.extract_activations(layer, images, batch);
}
inline ProbabilitySeries class_probability(const ModelAdapter& adapter, const ImageSet& images, int class_id,
                                           int batch = 1) {
    return adapter.class_probability(images, class_id, batch);
}
inline GradientSet class_gradients_at_layer(const ModelAdapter& adapter, const std::string& layer,
                                            const ImageSet& images, int class_id,
                                            GradientTarget target = GradientTarget::Logit, int batch = 1) {
    return adapter.class_gradients_at_layer(layer, images, class_id, target, batch);
}
inline AttributionMap integrated_gradients_at_layer(const ModelAdapter& adapter, const std::string& layer,
                                                    const std::string& image_path, int class_id, int steps,
                                                    IgBaseline baseline = IgBaseline::Zero) {
    return adapter.integrated_gradients_at_layer(layer, image_path, class_id, steps, baseline);
}

inline std::vector<AttributionMap> integrated_gradients_set(const ModelAdapter& adapter, const std::string& layer,
                                                            const ImageSet& images, int class_id, int steps,
                                                            IgBaseline baseline = IgBaseline::Zero,
                                                            int batch = 1) {
    std::vector<AttributionMap> out(images.paths.size());
    detail::parallel_for(images.paths.size(), batch, [&](std::size_t i) {
        out[i] = adapter.integrated_gradients_at_layer(layer, images.paths[i], class_id, steps, baseline);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Toy adapter.

class ToyCnnAdapter : public ModelAdapter {
public:
    explicit ToyCnnAdapter(ToyCnn net, std::string id = "toy-cnn") : net_(std::move(net)), id_(std::move(id)) {}

    static ToyCnnAdapter from_weights(const std::string& path, std::string id = "toy-cnn") {
        return ToyCnnAdapter(ToyCnn::load(path), std::move(id));
    }

    const ToyCnn& net() const { return net_; }

    std::string model_id() const override { return id_; }
    std::pair<int, int> input_size() const override { return {net_.config.input_size, net_.config.input_size}; }
    int class_count() const override { return net_.class_count(); }
    std::vector<std::string> layers() const override { return net_.cut_points(); }
    int class_index(const std::string& name) const override { return net_.class_index(name); }
    std::string preprocessing_id() const override {
        return "gray-box-resize-" + std::to_string(net_.config.input_size);
    }

    Tensor3 preprocess(const Image& img) const {
        const int n = net_.config.input_size;
        Tensor3 t(n, n, 1);
        t.data = resize_gray(to_gray(img), img.width, img.height, n, n);
        return t;
    }

    Tensor3 activations_for(const std::string& path, const std::string& layer) const override {
        return net_.activations(preprocess(read_pnm(path)), layer);
    }
    std::vector<double> probabilities_for(const std::string& path) const override {
        return net_.probabilities(preprocess(read_pnm(path)));
    }
    std::vector<double> logits_from_layer(const std::string& layer, const Tensor3& act) const override {
        return net_.logits_from(layer, act);
    }
    Tensor3 logit_gradient(const std::string& layer, const Tensor3& act, int class_id,
                           GradientTarget target) const override {
        return net_.logit_gradient(layer, act, class_id, target == GradientTarget::Softmax);
    }

private:
    ToyCnn net_;
    std::string id_;
};

// ---------------------------------------------------------------------------
// Activation store.

inline std::string sanitize_key(const std::string& s) {
    std::string out = s;
    for (char& c : out)
        if (c == ':' || c == '/' || c == '\\') c = '+';
    return out;
}

inline std::string activation_archive_stem(const ImageSetKey& key, const std::string& model_id,
                                           const std::string& layer) {
    return sanitize_key(key.to_string()) + "__" + sanitize_key(model_id) + "__" + sanitize_key(layer);
}

inline void save_activation_set(const fs::path& dir, const ActivationSet& set) {
    require(!set.tensors.empty(), "refusing to store an empty activation set");
    fs::create_directories(dir);
    const std::string stem = activation_archive_stem(set.key, set.model_id, set.layer);
    const Tensor3& first = set.tensors.front();
    std::string bin;
    bin.reserve(set.tensors.size() * first.data.size() * sizeof(double));
    for (const auto& t : set.tensors) {
        require(t.same_shape(first), "ragged activation set cannot be stored");
        bin.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(double));
    }
    write_file_atomic(dir / (stem + ".bin"), bin);
    nlohmann::json manifest{{"shape", {set.tensors.size(), first.h, first.w, first.c}},
                            {"dtype", "float64"},
                            {"image_order", set.image_order},
                            {"model_id", set.model_id},
                            {"layer", set.layer},
                            {"set_key", set.key.to_string()}};
    write_file_atomic(dir / (stem + ".json"), manifest.dump(2) + "\n");
}

inline ActivationSet load_activation_set(const fs::path& dir, const ImageSetKey& key, const std::string& model_id,
                                         const std::string& layer) {
    const std::string stem = activation_archive_stem(key, model_id, layer);
    const fs::path meta_path = dir / (stem + ".json");
    if (!fs::exists(meta_path))
        throw IoError("no activation archive " + meta_path.string() +
                      "; extract it first (conceptfaith extract or the exporter recipe)");
    nlohmann::json meta = nlohmann::json::parse(read_file(meta_path));
    const auto shape = meta.at("shape").get<std::vector<std::size_t>>();
    require(shape.size() == 4, "bad archive shape in " + meta_path.string());
    if (meta.value("dtype", "") != "float64") throw ParseError("unsupported dtype in " + meta_path.string());

    ActivationSet set;
    set.key = key;
    set.model_id = meta.at("model_id").get<std::string>();
    set.layer = meta.at("layer").get<std::string>();
    set.image_order = meta.at("image_order").get<std::vector<std::string>>();
    require(set.image_order.size() == shape[0], "archive image_order does not match shape");

    const std::string bin = read_file(dir / (stem + ".bin"));
    const std::size_t per = shape[1] * shape[2] * shape[3];
    require(bin.size() == shape[0] * per * sizeof(double), "archive size mismatch for " + stem);
    set.tensors.resize(shape[0]);
    for (std::size_t i = 0; i < shape[0]; ++i) {
        Tensor3 t(static_cast<int>(shape[1]), static_cast<int>(shape[2]), static_cast<int>(shape[3]));
        std::memcpy(t.data.data(), bin.data() + i * per * sizeof(double), per * sizeof(double));
        set.tensors[i] = std::move(t);
    }
    return set;
}

// ---------------------------------------------------------------------------
// Archive-backed adapter: serves precomputed tensors for full-scale
// backbones. Model manifest (<store>/<model>/model.json):
//   {"model_id", "input_size": [h, w], "class_names": [...],
//    "layers": [...], "preprocessing": "..."}
// Activation archives live in <store>/<model>/, gradient archives use layer
// name "<layer>@grad:<class>", probability tables "<set>__<model>__probs.json".

class ArchiveAdapter : public ModelAdapter {
public:
    ArchiveAdapter(std::string store_dir, const std::string& model)
        : store_(fs::path(store_dir) / model) {
        const fs::path manifest = store_ / "model.json";
        if (!fs::exists(manifest))
            throw IoError("archive model '" + model + "' missing manifest " + manifest.string());
        nlohmann::json doc = nlohmann::json::parse(read_file(manifest));
        model_id_ = doc.at("model_id").get<std::string>();
        const auto sz = doc.at("input_size").get<std::vector<int>>();
        require(sz.size() == 2, "bad input_size in " + manifest.string());
        input_ = {sz[0], sz[1]};
        class_names_ = doc.at("class_names").get<std::vector<std::string>>();
        layers_ = doc.at("layers").get<std::vector<std::string>>();
        preprocessing_ = doc.value("preprocessing", "external");
    }

    std::string model_id() const override { return model_id_; }
    std::pair<int, int> input_size() const override { return input_; }
    int class_count() const override { return static_cast<int>(class_names_.size()); }
    std::vector<std::string> layers() const override { return layers_; }
    std::string preprocessing_id() const override { return preprocessing_; }

    int class_index(const std::string& name) const override {
        for (std::size_t i = 0; i < class_names_.size(); ++i)
            if (class_names_[i] == name) return static_cast<int>(i);
        throw ValidationError("archive model '" + model_id_ + "' has no class '" + name + "'");
    }

    Tensor3 activations_for(const std::string&, const std::string&) const override { return reject(); }
    std::vector<double> probabilities_for(const std::string&) const override {
        reject();
        return {};
    }
    std::vector<double> logits_from_layer(const std::string&, const Tensor3&) const override {
        reject();
        return {};
    }
    Tensor3 logit_gradient(const std::string&, const Tensor3&, int, GradientTarget) const override {
        return reject();
    }

    ActivationSet extract_activations(const std::string& layer, const ImageSet& images, int) const override {
        check_layer(layer);
        ActivationSet set = load_activation_set(store_, images.key, model_id_, layer);
        require(set.image_order == images.paths,
                "archive image order differs from the image set for " + images.key.to_string());
        return set;
    }

    GradientSet class_gradients_at_layer(const std::string& layer, const ImageSet& images, int class_id,
                                         GradientTarget target, int) const override {
        check_layer(layer);
        const std::string kind = target == GradientTarget::Logit ? "grad" : "sgrad";
        return load_activation_set(store_, images.key, model_id_,
                                   layer + "@" + kind + ":" + std::to_string(class_id));
    }

    ProbabilitySeries class_probability(const ImageSet& images, int class_id, int) const override {
        require(class_id >= 0 && class_id < class_count(), "invalid class for " + model_id_);
        const fs::path path =
            store_ / (sanitize_key(images.key.to_string()) + "__" + sanitize_key(model_id_) + "__probs.json");
        if (!fs::exists(path)) throw IoError("no probability table " + path.string());
        nlohmann::json doc = nlohmann::json::parse(read_file(path));
        const auto order = doc.at("image_order").get<std::vector<std::string>>();
        require(order == images.paths, "probability table order mismatch for " + images.key.to_string());
        ProbabilitySeries series;
        series.class_id = class_id;
        for (const auto& row : doc.at("probabilities")) series.values.push_back(row.at(class_id).get<double>());
        series.mean = mean_of(series.values);
        return series;
    }

    AttributionMap integrated_gradients_at_layer(const std::string& layer, const std::string& image_path,
                                                 int class_id, int steps, IgBaseline) const override {
        check_layer(layer);
        const std::string ig_layer = layer + "@ig:" + std::to_string(class_id) + ":m" + std::to_string(steps);
        // Archived IG sets are keyed by the class set they were computed on;
        // scan the store for one holding this image.
        for (const auto& entry : fs::directory_iterator(store_)) {
            const std::string name = entry.path().filename().string();
            if (name.find("__" + sanitize_key(ig_layer) + ".json") == std::string::npos) continue;
            nlohmann::json meta = nlohmann::json::parse(read_file(entry.path()));
            const auto order = meta.at("image_order").get<std::vector<std::string>>();
            const auto it = std::find(order.begin(), order.end(), image_path);
            if (it == order.end()) continue;
            ActivationSet set = load_activation_set(store_, parse_set_key(meta.at("set_key").get<std::string>()),
                                                    model_id_, ig_layer);
            AttributionMap map;
            map.attributions = set.tensors[static_cast<std::size_t>(it - order.begin())];
            map.completeness_residual =
                meta.value("residuals", std::vector<double>(order.size(), 0.0))[it - order.begin()];
            return map;
        }
        throw IoError("no archived integrated gradients for " + image_path + " at " + ig_layer);
    }

private:
    [[noreturn]] Tensor3 reject() const {
        throw ValidationError("model '" + model_id_ +
                              "' is archive-backed; per-image execution requires the exporter recipe");
    }

    fs::path store_;
    std::string model_id_;
    std::pair<int, int> input_ = {0, 0};
    std::vector<std::string> class_names_;
    std::vector<std::string> layers_;
    std::string preprocessing_;
};

}  // namespace conceptfaith
