#pragma once
// Concept importance scores and the removal/substitution delta metrics.
//
// tcav: fraction of class images whose class-logit gradient has a positive
// dot product with the CAV. visual-tcav: CAV-weighted, concept-map-masked
// integrated-gradient attributions summed over space, averaged over the set.

#include <optional>
#include <string>
#include <vector>

#include "conceptfaith/cav.hpp"
#include "conceptfaith/extract.hpp"

namespace conceptfaith {

enum class ImportanceMethod { Tcav, VisualTcav };

inline const char* method_name(ImportanceMethod m) {
    return m == ImportanceMethod::Tcav ? "tcav" : "visual-tcav";
}

inline ImportanceMethod parse_method(const std::string& s) {
    if (s == "tcav") return ImportanceMethod::Tcav;
    if (s == "visual-tcav") return ImportanceMethod::VisualTcav;
    throw ParseError("unknown importance method '" + s + "'");
}

struct ImportanceRecord {
    std::string concept_name;
    std::string class_name;
    std::string model_id;
    std::string layer;
    std::string cav_source;         // real | gen:<provider>
    std::string inputs = "original";  // original | removed
    ImportanceMethod method = ImportanceMethod::Tcav;
    double score = 0.0;
    std::optional<int> replicate;
};

// s = |{i : grad_i . v > 0}| / N. Strict inequality: a zero dot counts as
// non-positive.
inline double tcav_score(const CAV& cav, const GradientSet& grads) {
    require(!grads.tensors.empty(), "tcav_score over an empty gradient set");
    std::size_t positive = 0;
    for (const auto& g : grads.tensors) {
        const std::vector<double> row = pooled_row(g, cav.pooling);
        require(row.size() == cav.dim(), "gradient dimension does not match CAV (pooling " +
                                             std::string(pooling_name(cav.pooling)) + ")");
        if (dot(row, cav.vector) > 0.0) ++positive;
    }
    return static_cast<double>(positive) / static_cast<double>(grads.tensors.size());
}

struct ConceptMap {
    int h = 0, w = 0;
    std::vector<double> values;  // in [0,1]

    double at(int y, int x) const { return values[static_cast<std::size_t>(y) * w + x]; }
};

// Per-location relu response to the unit CAV, max-normalized; all zeros when
// nothing responds.
inline ConceptMap concept_map(const CAV& cav, const Tensor3& acts) {
    require(cav.pooling == Pooling::Gap, "concept_map needs a pooled (gap) CAV");
    require(static_cast<int>(cav.dim()) == acts.c, "concept_map channel mismatch");
    require(cav.norm() > 0.0, "concept_map with zero-norm CAV");
    const std::vector<double> unit = l2_normalized(cav.vector);

    ConceptMap map;
    map.h = acts.h;
    map.w = acts.w;
    map.values.assign(static_cast<std::size_t>(acts.h) * acts.w, 0.0);
    double peak = 0.0;
    for (int y = 0; y < acts.h; ++y)
        for (int x = 0; x < acts.w; ++x) {
            double r = 0.0;
            for (int ch = 0; ch < acts.c; ++ch) r += acts.at(y, x, ch) * unit[ch];
            r = std::max(0.0, r);
            map.values[static_cast<std::size_t>(y) * acts.w + x] = r;
            peak = std::max(peak, r);
        }
    if (peak > 0.0)
        for (double& v : map.values) v /= peak;
    return map;
}

// Single-image attribution score:
//   (i)   w = relu(v) / sum(relu(v))            (pooled-CAV weights)
//   (ii)  ig normalized by the global sum of its positive entries
//   (iii) S(y,x) = sum_ch w_ch * ig_norm(y,x,ch)
//   (iv)  s = sum_{y,x} S(y,x) * concept_map(y,x)
inline double visual_tcav_attribution_image(const CAV& cav, const AttributionMap& ig, const Tensor3& acts) {
    require(cav.pooling == Pooling::Gap, "visual-tcav needs a pooled (gap) CAV");
    require(ig.attributions.same_shape(acts), "attribution/activation shape mismatch");
    require(static_cast<int>(cav.dim()) == acts.c, "CAV channel mismatch");

    std::vector<double> weights(cav.dim(), 0.0);
    double weight_sum = 0.0;
    for (std::size_t i = 0; i < cav.dim(); ++i) {
        weights[i] = std::max(0.0, cav.vector[i]);
        weight_sum += weights[i];
    }
    require(weight_sum > 0.0,
            "CAV for '" + cav.provenance.concept_name + "' has no positive component; weights undefined");
    for (double& w : weights) w /= weight_sum;

    double positive_mass = 0.0;
    for (double v : ig.attributions.data) positive_mass += std::max(0.0, v);
    if (positive_mass == 0.0) return 0.0;

    const ConceptMap map = concept_map(cav, acts);
    double score = 0.0;
    for (int y = 0; y < acts.h; ++y)
        for (int x = 0; x < acts.w; ++x) {
            double s = 0.0;
            for (int ch = 0; ch < acts.c; ++ch)
                s += weights[ch] * ig.attributions.at(y, x, ch) / positive_mass;
            score += s * map.at(y, x);
        }
    return score;
}

// Set-level score: mean over images, clamped to [0,1].
inline double visual_tcav_attribution(const CAV& cav, const std::vector<AttributionMap>& igs,
                                      const ActivationSet& acts) {
    require(!acts.tensors.empty(), "visual-tcav over an empty set");
    require(igs.size() == acts.tensors.size(), "attribution/activation set size mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < igs.size(); ++i)
        acc += visual_tcav_attribution_image(cav, igs[i], acts.tensors[i]);
    return std::clamp(acc / static_cast<double>(igs.size()), 0.0, 1.0);
}

struct ImportanceOptions {
    int ig_steps = 50;
    IgBaseline baseline = IgBaseline::Zero;
    GradientTarget target = GradientTarget::Logit;
    int batch = 1;
};

// One record: extract what the method needs from the class images and score
// the CAV against it.
inline ImportanceRecord concept_importance(const CAV& cav, const ImageSet& class_images,
                                           const ModelAdapter& adapter, const std::string& layer,
                                           const std::string& class_name, ImportanceMethod method,
                                           const ImportanceOptions& options = {}) {
    require(!class_images.paths.empty(), "concept_importance over an empty class image set");
    const int class_id = adapter.class_index(class_name);

    ImportanceRecord rec;
    rec.concept_name = cav.provenance.concept_name;
    rec.class_name = class_name;
    rec.model_id = adapter.model_id();
    rec.layer = layer;
    rec.cav_source = cav.provenance.source;
    rec.inputs = class_images.key.source == "removed" ? "removed" : "original";
    rec.method = method;

    if (method == ImportanceMethod::Tcav) {
        const GradientSet grads =
            adapter.class_gradients_at_layer(layer, class_images, class_id, options.target, options.batch);
        rec.score = tcav_score(cav, grads);
    } else {
        const ActivationSet acts = adapter.extract_activations(layer, class_images, options.batch);
        const std::vector<AttributionMap> igs = integrated_gradients_set(
            adapter, layer, class_images, class_id, options.ig_steps, options.baseline, options.batch);
        rec.score = visual_tcav_attribution(cav, igs, acts);
    }
    return rec;
}

namespace detail {

inline void check_same_key(const ImportanceRecord& a, const ImportanceRecord& b, bool require_same_inputs) {
    require(a.concept_name == b.concept_name && a.class_name == b.class_name && a.model_id == b.model_id &&
                a.layer == b.layer && a.method == b.method,
            "importance records key mismatch: (" + a.concept_name + "," + a.class_name + "," + a.model_id + "," +
                a.layer + "," + method_name(a.method) + ") vs (" + b.concept_name + "," + b.class_name + "," +
                b.model_id + "," + b.layer + "," + method_name(b.method) + ")");
    if (require_same_inputs)
        require(a.inputs == b.inputs, "importance records differ in inputs: " + a.inputs + " vs " + b.inputs);
}

}  // namespace detail

// Delta s_c = |s_gen - s_real|.
inline double importance_delta(const ImportanceRecord& gen, const ImportanceRecord& real) {
    detail::check_same_key(gen, real, true);
    return std::abs(gen.score - real.score);
}

// Delta s^rm = s - s_rm (signed).
inline double removal_delta(const ImportanceRecord& original, const ImportanceRecord& removed) {
    detail::check_same_key(original, removed, false);
    require(original.cav_source == removed.cav_source,
            "removal_delta across CAV sources: " + original.cav_source + " vs " + removed.cav_source);
    require(original.inputs == "original" && removed.inputs == "removed",
            "removal_delta expects an (original, removed) record pair");
    return original.score - removed.score;
}

// Delta P_kc = mean_k f(originals) - mean_k f(removed). Sign may be negative
// when editing raises the class probability.
inline double probability_drop(const ModelAdapter& adapter, const std::string& class_name,
                               const ImageSet& originals, const ImageSet& removed, int batch = 1) {
    require(originals.paths.size() == removed.paths.size(),
            "probability_drop needs aligned sets (" + std::to_string(originals.paths.size()) + " vs " +
                std::to_string(removed.paths.size()) + ")");
    const int class_id = adapter.class_index(class_name);
    const ProbabilitySeries before = adapter.class_probability(originals, class_id, batch);
    const ProbabilitySeries after = adapter.class_probability(removed, class_id, batch);
    return before.mean - after.mean;
}

}  // namespace conceptfaith
