#pragma once
// Bundled toy convolutional classifier. Small enough to train on procedural
// fixtures in seconds, yet exposes everything the pipeline needs from a real
// backbone: named cut points, forward execution from a cut point, and exact
// gradients of a class logit with respect to cut-point activations.
//
// Architecture (32x32 grayscale input):
//   conv1 5x5 s2 p2 -> relu   [cut "conv1", 16x16x8]
//   conv2 3x3 s2 p1 -> relu   [cut "conv2", 8x8x16]
//   conv3 3x3 s1 p1 -> relu   (optional; disable for a linear head)
//   global average pool -> fully connected -> logits

#include <cstring>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptfaith/common.hpp"
#include "conceptfaith/tensor.hpp"

namespace conceptfaith {

struct ConvLayer {
    int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
    std::vector<double> w;  // [out_c][in_c][k][k]
    std::vector<double> b;  // [out_c]

    double& wt(int oc, int ic, int ky, int kx) {
        return w[((static_cast<std::size_t>(oc) * in_c + ic) * k + ky) * k + kx];
    }
    double wt(int oc, int ic, int ky, int kx) const {
        return w[((static_cast<std::size_t>(oc) * in_c + ic) * k + ky) * k + kx];
    }
    int out_size(int in) const { return (in + 2 * pad - k) / stride + 1; }
};

namespace detail {

inline Tensor3 conv_forward(const ConvLayer& layer, const Tensor3& in) {
    const int oh = layer.out_size(in.h), ow = layer.out_size(in.w);
    Tensor3 out(oh, ow, layer.out_c);
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
            for (int oc = 0; oc < layer.out_c; ++oc) {
                double acc = layer.b[oc];
                for (int ky = 0; ky < layer.k; ++ky) {
                    const int y = oy * layer.stride - layer.pad + ky;
                    if (y < 0 || y >= in.h) continue;
                    for (int kx = 0; kx < layer.k; ++kx) {
                        const int x = ox * layer.stride - layer.pad + kx;
                        if (x < 0 || x >= in.w) continue;
                        for (int ic = 0; ic < layer.in_c; ++ic)
                            acc += in.at(y, x, ic) * layer.wt(oc, ic, ky, kx);
                    }
                }
                out.at(oy, ox, oc) = acc;
            }
    return out;
}

inline Tensor3 conv_backward_input(const ConvLayer& layer, const Tensor3& dout, int ih, int iw) {
    Tensor3 din(ih, iw, layer.in_c);
    for (int oy = 0; oy < dout.h; ++oy)
        for (int ox = 0; ox < dout.w; ++ox)
            for (int oc = 0; oc < layer.out_c; ++oc) {
                const double g = dout.at(oy, ox, oc);
                if (g == 0.0) continue;
                for (int ky = 0; ky < layer.k; ++ky) {
                    const int y = oy * layer.stride - layer.pad + ky;
                    if (y < 0 || y >= ih) continue;
                    for (int kx = 0; kx < layer.k; ++kx) {
                        const int x = ox * layer.stride - layer.pad + kx;
                        if (x < 0 || x >= iw) continue;
                        for (int ic = 0; ic < layer.in_c; ++ic)
                            din.at(y, x, ic) += g * layer.wt(oc, ic, ky, kx);
                    }
                }
            }
    return din;
}

inline void conv_backward_params(const ConvLayer& layer, const Tensor3& in, const Tensor3& dout,
                                 std::vector<double>& dw, std::vector<double>& db) {
    for (int oy = 0; oy < dout.h; ++oy)
        for (int ox = 0; ox < dout.w; ++ox)
            for (int oc = 0; oc < layer.out_c; ++oc) {
                const double g = dout.at(oy, ox, oc);
                if (g == 0.0) continue;
                db[oc] += g;
                for (int ky = 0; ky < layer.k; ++ky) {
                    const int y = oy * layer.stride - layer.pad + ky;
                    if (y < 0 || y >= in.h) continue;
                    for (int kx = 0; kx < layer.k; ++kx) {
                        const int x = ox * layer.stride - layer.pad + kx;
                        if (x < 0 || x >= in.w) continue;
                        for (int ic = 0; ic < layer.in_c; ++ic)
                            dw[((static_cast<std::size_t>(oc) * layer.in_c + ic) * layer.k + ky) * layer.k + kx] +=
                                g * in.at(y, x, ic);
                    }
                }
            }
}

inline void relu_inplace(Tensor3& t) {
    for (double& v : t.data)
        if (v < 0.0) v = 0.0;
}

// Masks dpre by the sign of the pre-activation.
inline void relu_backward_inplace(Tensor3& dpre, const Tensor3& pre) {
    for (std::size_t i = 0; i < dpre.data.size(); ++i)
        if (pre.data[i] <= 0.0) dpre.data[i] = 0.0;
}

}  // namespace detail

inline std::vector<double> softmax(const std::vector<double>& logits) {
    std::vector<double> p(logits.size());
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - m));
    for (double& v : p) v /= z;
    return p;
}

struct ToyCnnConfig {
    int input_size = 32;
    bool with_conv3 = true;
    std::vector<std::string> class_names;
    std::uint64_t init_seed = 1;
};

struct TrainOptions {
    int epochs = 40;
    int batch_size = 32;
    double learning_rate = 3e-3;
    std::uint64_t seed = 7;
};

struct TrainStats {
    double loss = 0.0;
    double accuracy = 0.0;
    double mean_true_prob = 0.0;
    int epochs_run = 0;
};

class ToyCnn {
public:
    ConvLayer conv1, conv2, conv3;
    std::vector<double> fc_w;  // [class][channel]
    std::vector<double> fc_b;
    ToyCnnConfig config;

    ToyCnn() = default;

    explicit ToyCnn(ToyCnnConfig cfg) : config(std::move(cfg)) {
        require(config.class_names.size() >= 2, "toy-cnn needs at least two classes");
        conv1 = {1, 8, 5, 2, 2, {}, {}};
        conv2 = {8, 16, 3, 2, 1, {}, {}};
        conv3 = {16, 16, 3, 1, 1, {}, {}};
        KeyedRng rng(config.init_seed);
        init_conv(conv1, rng);
        init_conv(conv2, rng);
        if (config.with_conv3) init_conv(conv3, rng);
        const int head_in = head_channels();
        fc_w.assign(static_cast<std::size_t>(class_count()) * head_in, 0.0);
        fc_b.assign(class_count(), 0.0);
        const double scale = std::sqrt(2.0 / head_in);
        for (double& v : fc_w) v = scale * gaussian(rng);
    }

    int class_count() const { return static_cast<int>(config.class_names.size()); }
    int head_channels() const { return config.with_conv3 ? conv3.out_c : conv2.out_c; }

    int class_index(const std::string& name) const {
        for (std::size_t i = 0; i < config.class_names.size(); ++i)
            if (config.class_names[i] == name) return static_cast<int>(i);
        throw ValidationError("toy-cnn has no class '" + name + "'");
    }

    std::vector<std::string> cut_points() const { return {"conv1", "conv2"}; }

    // --- forward -----------------------------------------------------------

    Tensor3 activations(const Tensor3& input, const std::string& layer) const {
        check_input(input);
        Tensor3 a1 = detail::conv_forward(conv1, input);
        detail::relu_inplace(a1);
        if (layer == "conv1") return a1;
        Tensor3 a2 = detail::conv_forward(conv2, a1);
        detail::relu_inplace(a2);
        if (layer == "conv2") return a2;
        throw ValidationError("toy-cnn has no layer '" + layer + "'");
    }

    std::vector<double> logits(const Tensor3& input) const {
        return logits_from("conv2", activations(input, "conv2"));
    }

    std::vector<double> probabilities(const Tensor3& input) const { return softmax(logits(input)); }

    // Head execution from a cut-point activation.
    std::vector<double> logits_from(const std::string& layer, const Tensor3& act) const {
        Tensor3 a2 = act;
        if (layer == "conv1") {
            a2 = detail::conv_forward(conv2, act);
            detail::relu_inplace(a2);
        } else if (layer != "conv2") {
            throw ValidationError("toy-cnn has no layer '" + layer + "'");
        }
        std::vector<double> pooled;
        if (config.with_conv3) {
            Tensor3 a3 = detail::conv_forward(conv3, a2);
            detail::relu_inplace(a3);
            pooled = a3.global_average_pool();
        } else {
            pooled = a2.global_average_pool();
        }
        return fc_forward(pooled);
    }

    // Gradient of logit k (or softmax output k) w.r.t. the activation at the
    // cut point.
    Tensor3 logit_gradient(const std::string& layer, const Tensor3& act, int class_id,
                           bool softmax_target = false) const {
        require(class_id >= 0 && class_id < class_count(),
                "invalid class id " + std::to_string(class_id));

        // Forward from the cut, caching pre-activations for relu masks.
        Tensor3 a2 = act, a2pre;
        const bool through_conv2 = (layer == "conv1");
        if (through_conv2) {
            a2pre = detail::conv_forward(conv2, act);
            a2 = a2pre;
            detail::relu_inplace(a2);
        } else if (layer != "conv2") {
            throw ValidationError("toy-cnn has no layer '" + layer + "'");
        }
        Tensor3 a3, a3pre;
        std::vector<double> pooled;
        if (config.with_conv3) {
            a3pre = detail::conv_forward(conv3, a2);
            a3 = a3pre;
            detail::relu_inplace(a3);
            pooled = a3.global_average_pool();
        } else {
            pooled = a2.global_average_pool();
        }

        // Seed at the logits.
        std::vector<double> dlogits(class_count(), 0.0);
        if (softmax_target) {
            const std::vector<double> p = softmax(fc_forward(pooled));
            for (int j = 0; j < class_count(); ++j)
                dlogits[j] = p[class_id] * ((j == class_id ? 1.0 : 0.0) - p[j]);
        } else {
            dlogits[class_id] = 1.0;
        }

        // fc -> pooled
        const int head_in = head_channels();
        std::vector<double> dpooled(head_in, 0.0);
        for (int j = 0; j < class_count(); ++j)
            for (int c = 0; c < head_in; ++c)
                dpooled[c] += dlogits[j] * fc_w[static_cast<std::size_t>(j) * head_in + c];

        // gap -> feature map
        Tensor3 dtail;
        if (config.with_conv3) {
            dtail = Tensor3(a3.h, a3.w, a3.c);
            const double inv = 1.0 / (static_cast<double>(a3.h) * a3.w);
            for (int y = 0; y < a3.h; ++y)
                for (int x = 0; x < a3.w; ++x)
                    for (int c = 0; c < a3.c; ++c) dtail.at(y, x, c) = dpooled[c] * inv;
            detail::relu_backward_inplace(dtail, a3pre);
            dtail = detail::conv_backward_input(conv3, dtail, a2.h, a2.w);
        } else {
            dtail = Tensor3(a2.h, a2.w, a2.c);
            const double inv = 1.0 / (static_cast<double>(a2.h) * a2.w);
            for (int y = 0; y < a2.h; ++y)
                for (int x = 0; x < a2.w; ++x)
                    for (int c = 0; c < a2.c; ++c) dtail.at(y, x, c) = dpooled[c] * inv;
        }

        if (!through_conv2) return dtail;
        detail::relu_backward_inplace(dtail, a2pre);
        return detail::conv_backward_input(conv2, dtail, act.h, act.w);
    }

    // --- training ----------------------------------------------------------

    TrainStats train(const std::vector<Tensor3>& inputs, const std::vector<int>& labels,
                     const TrainOptions& options = {}) {
        require(inputs.size() == labels.size() && !inputs.empty(), "bad training set");
        AdamState adam(*this, options.learning_rate);
        KeyedRng rng(options.seed);
        std::vector<std::size_t> order(inputs.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

        TrainStats stats;
        for (int epoch = 0; epoch < options.epochs; ++epoch) {
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[rng.next_below(i)]);
            for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
                const std::size_t end = std::min(order.size(), start + options.batch_size);
                adam.zero();
                for (std::size_t s = start; s < end; ++s)
                    accumulate_gradients(inputs[order[s]], labels[order[s]], adam);
                adam.step(*this, static_cast<double>(end - start));
            }
            stats = evaluate(inputs, labels);
            stats.epochs_run = epoch + 1;
        }
        return stats;
    }

    TrainStats evaluate(const std::vector<Tensor3>& inputs, const std::vector<int>& labels) const {
        TrainStats stats;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const std::vector<double> p = probabilities(inputs[i]);
            const int pred = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
            stats.loss += -std::log(std::max(p[labels[i]], 1e-300));
            stats.accuracy += pred == labels[i] ? 1.0 : 0.0;
            stats.mean_true_prob += p[labels[i]];
        }
        const double n = static_cast<double>(inputs.size());
        stats.loss /= n;
        stats.accuracy /= n;
        stats.mean_true_prob /= n;
        return stats;
    }

    // --- persistence -------------------------------------------------------

    void save(const std::string& path) const {
        nlohmann::json header{{"format", "toycnn-v1"},
                              {"input_size", config.input_size},
                              {"with_conv3", config.with_conv3},
                              {"class_names", config.class_names},
                              {"init_seed", config.init_seed}};
        std::string out = header.dump() + "\n";
        auto put = [&](const std::vector<double>& v) {
            out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
        };
        put(conv1.w); put(conv1.b);
        put(conv2.w); put(conv2.b);
        if (config.with_conv3) { put(conv3.w); put(conv3.b); }
        put(fc_w); put(fc_b);
        write_file_atomic(path, out);
    }

    static ToyCnn load(const std::string& path) {
        const std::string bytes = read_file(path);
        const std::size_t nl = bytes.find('\n');
        if (nl == std::string::npos) throw ParseError("toy-cnn weights " + path + ": missing header");
        nlohmann::json header;
        try {
            header = nlohmann::json::parse(bytes.substr(0, nl));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("toy-cnn weights " + path + ": " + e.what());
        }
        if (header.value("format", "") != "toycnn-v1")
            throw ParseError("toy-cnn weights " + path + ": unknown format");
        ToyCnnConfig cfg;
        cfg.input_size = header.at("input_size").get<int>();
        cfg.with_conv3 = header.at("with_conv3").get<bool>();
        cfg.class_names = header.at("class_names").get<std::vector<std::string>>();
        cfg.init_seed = header.at("init_seed").get<std::uint64_t>();
        ToyCnn net(cfg);
        std::size_t pos = nl + 1;
        auto get = [&](std::vector<double>& v) {
            const std::size_t want = v.size() * sizeof(double);
            if (bytes.size() - pos < want) throw ParseError("toy-cnn weights " + path + ": truncated");
            std::memcpy(v.data(), bytes.data() + pos, want);
            pos += want;
        };
        get(net.conv1.w); get(net.conv1.b);
        get(net.conv2.w); get(net.conv2.b);
        if (cfg.with_conv3) { get(net.conv3.w); get(net.conv3.b); }
        get(net.fc_w); get(net.fc_b);
        return net;
    }

private:
    struct AdamState {
        std::vector<std::vector<double>*> params;
        std::vector<std::vector<double>> grads, m, v;
        double lr;
        int t = 0;

        AdamState(ToyCnn& net, double lr_) : lr(lr_) {
            params = {&net.conv1.w, &net.conv1.b, &net.conv2.w, &net.conv2.b};
            if (net.config.with_conv3) {
                params.push_back(&net.conv3.w);
                params.push_back(&net.conv3.b);
            }
            params.push_back(&net.fc_w);
            params.push_back(&net.fc_b);
            for (auto* p : params) {
                grads.emplace_back(p->size(), 0.0);
                m.emplace_back(p->size(), 0.0);
                v.emplace_back(p->size(), 0.0);
            }
        }

        void zero() {
            for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0);
        }

        void step(ToyCnn&, double batch) {
            ++t;
            const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
            const double bc1 = 1.0 - std::pow(b1, t), bc2 = 1.0 - std::pow(b2, t);
            for (std::size_t p = 0; p < params.size(); ++p)
                for (std::size_t i = 0; i < params[p]->size(); ++i) {
                    const double g = grads[p][i] / batch;
                    m[p][i] = b1 * m[p][i] + (1 - b1) * g;
                    v[p][i] = b2 * v[p][i] + (1 - b2) * g * g;
                    (*params[p])[i] -= lr * (m[p][i] / bc1) / (std::sqrt(v[p][i] / bc2) + eps);
                }
        }
    };

    static double gaussian(KeyedRng& rng) {
        const double u1 = std::max(rng.next_double(), 1e-12);
        const double u2 = rng.next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.28318530717959 * u2);
    }

    static void init_conv(ConvLayer& layer, KeyedRng& rng) {
        layer.w.assign(static_cast<std::size_t>(layer.out_c) * layer.in_c * layer.k * layer.k, 0.0);
        layer.b.assign(layer.out_c, 0.0);
        const double scale = std::sqrt(2.0 / (layer.in_c * layer.k * layer.k));
        for (double& v : layer.w) v = scale * gaussian(rng);
    }

    void check_input(const Tensor3& input) const {
        require(input.h == config.input_size && input.w == config.input_size && input.c == 1,
                "toy-cnn expects " + std::to_string(config.input_size) + "x" +
                    std::to_string(config.input_size) + "x1 input");
    }

    std::vector<double> fc_forward(const std::vector<double>& pooled) const {
        const int head_in = head_channels();
        std::vector<double> out(fc_b);
        for (int j = 0; j < class_count(); ++j)
            for (int c = 0; c < head_in; ++c)
                out[j] += fc_w[static_cast<std::size_t>(j) * head_in + c] * pooled[c];
        return out;
    }

    void accumulate_gradients(const Tensor3& input, int label, AdamState& adam) const {
        // forward with caches
        Tensor3 a1pre = detail::conv_forward(conv1, input);
        Tensor3 a1 = a1pre;
        detail::relu_inplace(a1);
        Tensor3 a2pre = detail::conv_forward(conv2, a1);
        Tensor3 a2 = a2pre;
        detail::relu_inplace(a2);
        Tensor3 a3pre, a3;
        std::vector<double> pooled;
        if (config.with_conv3) {
            a3pre = detail::conv_forward(conv3, a2);
            a3 = a3pre;
            detail::relu_inplace(a3);
            pooled = a3.global_average_pool();
        } else {
            pooled = a2.global_average_pool();
        }
        const std::vector<double> p = softmax(fc_forward(pooled));

        // cross-entropy backward
        std::vector<double> dlogits = p;
        dlogits[label] -= 1.0;

        // Slot order fixed by AdamState: conv1.w/b, conv2.w/b, [conv3.w/b,] fc_w/b.
        const int head_in = head_channels();
        const std::size_t fc_slot = config.with_conv3 ? 6 : 4;
        std::vector<double>& dfc_w = adam.grads[fc_slot];
        std::vector<double>& dfc_b = adam.grads[fc_slot + 1];
        std::vector<double> dpooled(head_in, 0.0);
        for (int j = 0; j < class_count(); ++j) {
            dfc_b[j] += dlogits[j];
            for (int c = 0; c < head_in; ++c) {
                dfc_w[static_cast<std::size_t>(j) * head_in + c] += dlogits[j] * pooled[c];
                dpooled[c] += dlogits[j] * fc_w[static_cast<std::size_t>(j) * head_in + c];
            }
        }

        const Tensor3& feat = config.with_conv3 ? a3 : a2;
        Tensor3 dfeat(feat.h, feat.w, feat.c);
        const double inv = 1.0 / (static_cast<double>(feat.h) * feat.w);
        for (int y = 0; y < feat.h; ++y)
            for (int x = 0; x < feat.w; ++x)
                for (int c = 0; c < feat.c; ++c) dfeat.at(y, x, c) = dpooled[c] * inv;

        Tensor3 da2;
        if (config.with_conv3) {
            detail::relu_backward_inplace(dfeat, a3pre);
            detail::conv_backward_params(conv3, a2, dfeat, adam.grads[4], adam.grads[5]);
            da2 = detail::conv_backward_input(conv3, dfeat, a2.h, a2.w);
        } else {
            da2 = dfeat;
        }
        detail::relu_backward_inplace(da2, a2pre);
        detail::conv_backward_params(conv2, a1, da2, adam.grads[2], adam.grads[3]);
        Tensor3 da1 = detail::conv_backward_input(conv2, da2, a1.h, a1.w);
        detail::relu_backward_inplace(da1, a1pre);
        detail::conv_backward_params(conv1, input, da1, adam.grads[0], adam.grads[1]);
    }
};

}  // namespace conceptfaith
