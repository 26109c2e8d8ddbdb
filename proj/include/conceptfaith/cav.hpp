#pragma once
// Concept activation vectors by difference of means, over flattened or
// GAP-pooled activations, plus the alignment and intra-similarity metrics
// and the embedding-based validation counterparts.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptfaith/embedder.hpp"
#include "conceptfaith/extract.hpp"

namespace conceptfaith {

enum class Pooling { Gap, Flatten };

inline const char* pooling_name(Pooling p) { return p == Pooling::Gap ? "gap" : "flatten"; }

inline Pooling parse_pooling(const std::string& s) {
    if (s == "gap") return Pooling::Gap;
    if (s == "flatten") return Pooling::Flatten;
    throw ParseError("unknown pooling '" + s + "'");
}

struct CavProvenance {
    std::string concept_name;
    std::string source;  // real | gen:<provider>
    std::string model_id;
    std::string layer;
    std::string subset;  // e.g. "full", "bootstrap:3", "half:1"
    std::int64_t seed = 0;
};

// Stored unnormalized; consumers normalize where their math needs it.
struct CAV {
    std::vector<double> vector;
    Pooling pooling = Pooling::Gap;
    CavProvenance provenance;

    double norm() const { return norm2(vector); }
    std::size_t dim() const { return vector.size(); }
};

// Per-image rows in the CAV space: GAP to C entries or flatten to h*w*C.
inline std::vector<double> pooled_row(const Tensor3& t, Pooling pooling) {
    if (pooling == Pooling::Gap) return t.global_average_pool();
    return t.data;
}

inline std::vector<double> mean_row(const ActivationSet& set, Pooling pooling) {
    require(!set.tensors.empty(), "empty activation set for " + set.key.to_string());
    std::vector<double> acc = pooled_row(set.tensors.front(), pooling);
    for (std::size_t i = 1; i < set.tensors.size(); ++i) {
        const std::vector<double> row = pooled_row(set.tensors[i], pooling);
        for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += row[j];
    }
    for (double& v : acc) v /= static_cast<double>(set.tensors.size());
    return acc;
}

namespace detail {

inline void check_compatible(const ActivationSet& a, const ActivationSet& b, const std::string& what) {
    require(!a.tensors.empty() && !b.tensors.empty(), what + ": empty activation set");
    require(a.model_id == b.model_id && a.layer == b.layer,
            what + ": sets come from different model/layer (" + a.model_id + "/" + a.layer + " vs " +
                b.model_id + "/" + b.layer + ")");
    require(a.tensors.front().same_shape(b.tensors.front()), what + ": activation shape mismatch");
}

}  // namespace detail

// v = mean(pos rows) - mean(neg rows). Zero norm is an error, never a value.
inline CAV compute_cav_dom(const ActivationSet& pos, const ActivationSet& neg, Pooling pooling) {
    detail::check_compatible(pos, neg, "compute_cav_dom");
    CAV cav;
    cav.pooling = pooling;
    cav.vector = mean_row(pos, pooling);
    const std::vector<double> neg_mean = mean_row(neg, pooling);
    for (std::size_t i = 0; i < cav.vector.size(); ++i) cav.vector[i] -= neg_mean[i];
    cav.provenance = {pos.key.id, pos.key.source, pos.model_id, pos.layer, "full", 0};
    require(cav.norm() > 0.0, "zero-norm CAV for " + pos.key.to_string() + " at " + pos.layer);
    return cav;
}

inline double cosine_similarity(const CAV& a, const CAV& b) {
    require(a.pooling == b.pooling, "cosine over mixed pooling modes");
    require(a.dim() == b.dim(), "cosine over mismatched dimensions");
    require(a.provenance.model_id == b.provenance.model_id && a.provenance.layer == b.provenance.layer,
            "cosine across model/layer boundaries");
    const double na = a.norm(), nb = b.norm();
    require(na > 0.0 && nb > 0.0, "cosine with zero-norm operand");
    return dot(a.vector, b.vector) / (na * nb);
}

// rho_c: cosine between the generated-set CAV and the real-set CAV, both
// anchored on the same negatives.
inline double representation_alignment(const ActivationSet& gen, const ActivationSet& real,
                                       const ActivationSet& neg, Pooling pooling) {
    return cosine_similarity(compute_cav_dom(gen, neg, pooling), compute_cav_dom(real, neg, pooling));
}

struct IntraSimilarityPoint {
    std::size_t u = 0;
    double mean = 0.0;
    double stddev = 0.0;
    int repeats = 0;
};

struct IntraSimilarityCurve {
    std::vector<IntraSimilarityPoint> points;
    std::string source;
    Pooling pooling = Pooling::Gap;
    std::uint64_t seed = 0;
};

// Powers of two up to floor(N/2), always including floor(N/2).
inline std::vector<std::size_t> default_subset_sizes(std::size_t n) {
    const std::size_t cap = n / 2;
    require(cap >= 2, "set too small for intra-similarity");
    std::vector<std::size_t> sizes;
    for (std::size_t u = 2; u <= cap; u *= 2) sizes.push_back(u);
    if (sizes.empty() || sizes.back() != cap) sizes.push_back(cap);
    return sizes;
}

// rho_c(u): cosine between CAVs built from two disjoint random subsets of
// size u, against the full negative set. Sampling draws 2u indices without
// replacement and splits them, so the pair never overlaps.
inline IntraSimilarityCurve intra_similarity_curve(const ActivationSet& acts, const ActivationSet& neg,
                                                   const std::vector<std::size_t>& sizes, int repeats,
                                                   std::uint64_t seed, Pooling pooling) {
    detail::check_compatible(acts, neg, "intra_similarity_curve");
    require(repeats >= 1, "repeats must be >= 1");
    require(!sizes.empty(), "no subset sizes given");
    for (std::size_t i = 1; i < sizes.size(); ++i)
        require(sizes[i] > sizes[i - 1], "subset sizes must be strictly increasing");
    const std::size_t n = acts.tensors.size();
    require(sizes.back() <= n / 2, "subset size " + std::to_string(sizes.back()) + " exceeds floor(N/2) for N=" +
                                       std::to_string(n));

    std::vector<std::vector<double>> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = pooled_row(acts.tensors[i], pooling);
    const std::vector<double> neg_mean = mean_row(neg, pooling);
    const std::size_t dim = neg_mean.size();

    KeyedRng rng(seed);
    std::vector<std::size_t> indices(n);

    IntraSimilarityCurve curve;
    curve.source = acts.key.source;
    curve.pooling = pooling;
    curve.seed = seed;

    for (std::size_t u : sizes) {
        std::vector<double> cosines;
        cosines.reserve(repeats);
        for (int r = 0; r < repeats; ++r) {
            for (std::size_t i = 0; i < n; ++i) indices[i] = i;
            for (std::size_t i = 0; i < 2 * u; ++i)
                std::swap(indices[i], indices[i + rng.next_below(n - i)]);

            // The 2u drawn indices are a permutation prefix, hence pairwise
            // distinct; assert it anyway since disjointness is the contract.
            std::vector<std::size_t> drawn(indices.begin(), indices.begin() + 2 * u);
            std::sort(drawn.begin(), drawn.end());
            require(std::adjacent_find(drawn.begin(), drawn.end()) == drawn.end(), "subset pair overlap");

            std::vector<double> va(dim, 0.0), vb(dim, 0.0);
            for (std::size_t i = 0; i < u; ++i) {
                for (std::size_t j = 0; j < dim; ++j) {
                    va[j] += rows[indices[i]][j];
                    vb[j] += rows[indices[u + i]][j];
                }
            }
            for (std::size_t j = 0; j < dim; ++j) {
                va[j] = va[j] / static_cast<double>(u) - neg_mean[j];
                vb[j] = vb[j] / static_cast<double>(u) - neg_mean[j];
            }
            const double na = norm2(va), nb = norm2(vb);
            require(na > 0.0 && nb > 0.0, "zero-norm subset CAV at u=" + std::to_string(u));
            cosines.push_back(dot(va, vb) / (na * nb));
        }
        curve.points.push_back({u, mean_of(cosines), stddev_of(cosines), repeats});
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Embedding-space validation.

// Cosine between the mean L2-normalized embeddings of the two sets.
inline double clip_alignment(const ImageSet& gen, const ImageSet& real, const Embedder& embedder) {
    auto mean_unit = [&](const ImageSet& set) {
        const auto embs = embedder.embed(set.paths);
        require(!embs.empty(), "embedder returned nothing for " + set.key.to_string());
        std::vector<double> acc(embs.front().size(), 0.0);
        for (const auto& e : embs) {
            const std::vector<double> u = l2_normalized(e);
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += u[i];
        }
        for (double& v : acc) v /= static_cast<double>(embs.size());
        return acc;
    };
    const std::vector<double> a = mean_unit(gen), b = mean_unit(real);
    const double na = norm2(a), nb = norm2(b);
    require(na > 0.0 && nb > 0.0, "zero-norm mean embedding");
    return dot(a, b) / (na * nb);
}

// Mean pairwise cosine over all unordered pairs of L2-normalized embeddings;
// a subset-size-free intra-similarity statistic.
inline double clip_intra_similarity(const ImageSet& images, const Embedder& embedder) {
    require(images.paths.size() >= 2, "clip_intra_similarity needs at least two images");
    const auto embs = embedder.embed(images.paths);
    std::vector<std::vector<double>> units;
    units.reserve(embs.size());
    for (const auto& e : embs) units.push_back(l2_normalized(e));
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < units.size(); ++i)
        for (std::size_t j = i + 1; j < units.size(); ++j) {
            acc += dot(units[i], units[j]);
            ++pairs;
        }
    return acc / static_cast<double>(pairs);
}

// ---------------------------------------------------------------------------
// CAV store: raw vector plus a provenance manifest.

inline void save_cav(const fs::path& dir, const CAV& cav, const std::string& stem) {
    fs::create_directories(dir);
    std::string bin(reinterpret_cast<const char*>(cav.vector.data()), cav.vector.size() * sizeof(double));
    write_file_atomic(dir / (stem + ".bin"), bin);
    nlohmann::json meta{{"dim", cav.vector.size()},
                        {"pooling", pooling_name(cav.pooling)},
                        {"concept", cav.provenance.concept_name},
                        {"source", cav.provenance.source},
                        {"model_id", cav.provenance.model_id},
                        {"layer", cav.provenance.layer},
                        {"subset", cav.provenance.subset},
                        {"seed", cav.provenance.seed}};
    write_file_atomic(dir / (stem + ".json"), meta.dump(2) + "\n");
}

inline CAV load_cav(const fs::path& dir, const std::string& stem) {
    nlohmann::json meta = nlohmann::json::parse(read_file(dir / (stem + ".json")));
    CAV cav;
    cav.pooling = parse_pooling(meta.at("pooling").get<std::string>());
    cav.provenance = {meta.at("concept").get<std::string>(), meta.at("source").get<std::string>(),
                      meta.at("model_id").get<std::string>(), meta.at("layer").get<std::string>(),
                      meta.at("subset").get<std::string>(), meta.at("seed").get<std::int64_t>()};
    const std::string bin = read_file(dir / (stem + ".bin"));
    const std::size_t dim = meta.at("dim").get<std::size_t>();
    require(bin.size() == dim * sizeof(double), "CAV archive size mismatch for " + stem);
    cav.vector.resize(dim);
    std::memcpy(cav.vector.data(), bin.data(), bin.size());
    return cav;
}

}  // namespace conceptfaith
