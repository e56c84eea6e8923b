#pragma once

// The backward-pass rule engine. Every attribution method is a choice of
// ReLU gate plugged into one shared backward walk over an ActivationTrace;
// affine and pooling layers propagate as in standard backprop unless the
// proportional redistribution rule or the padding trick is switched on.
//
// Gates, with R the gradient arriving at the ReLU output a = max(z, 0):
//   vanilla       I(z > 0) * R
//   deconv        I(R > 0) * R
//   guided        I(z > 0) * I(R > 0) * R
//   PR1           I(a*R  > tau) * R        (the rectified-gradient rule)
//   PR2           I(|a*R| > tau) * R
//   PR3           I(a > tau) * R
//   PR4           I(R > tau) * R
// tau is the q-th percentile of the layer's scores, recomputed per image and
// per layer; q = 0 is the constant tau = 0 (which reproduces guided * input
// after the final zero threshold).

#include "rglab/nn.hpp"
#include "rglab/tensor.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>

namespace rglab {

enum class Method { Saliency, GradInput, Deconv, GuidedBP, SmoothGrad, IntegGrad, RectGrad };
enum class Rule { PR1, PR2, PR3, PR4, RectGradMod };

inline const std::vector<std::pair<Method, std::string>>& method_names() {
    static const std::vector<std::pair<Method, std::string>> names = {
        {Method::Saliency, "saliency"},   {Method::GradInput, "grad_input"},
        {Method::Deconv, "deconv"},       {Method::GuidedBP, "guided_bp"},
        {Method::SmoothGrad, "smoothgrad"}, {Method::IntegGrad, "integgrad"},
        {Method::RectGrad, "rectgrad"},
    };
    return names;
}

inline std::string method_name(Method m) {
    for (const auto& [method, name] : method_names())
        if (method == m) return name;
    return "?";
}

inline Method parse_method(const std::string& s) {
    for (const auto& [method, name] : method_names())
        if (name == s) return method;
    std::string valid;
    for (const auto& [method, name] : method_names()) valid += (valid.empty() ? "" : ", ") + name;
    throw std::invalid_argument("unknown method '" + s + "' (valid: " + valid + ")");
}

inline Rule parse_rule(const std::string& s) {
    if (s == "pr1") return Rule::PR1;
    if (s == "pr2") return Rule::PR2;
    if (s == "pr3") return Rule::PR3;
    if (s == "pr4") return Rule::PR4;
    if (s == "mod") return Rule::RectGradMod;
    throw std::invalid_argument("unknown rule '" + s + "' (valid: pr1, pr2, pr3, pr4, mod)");
}

inline std::string rule_name(Rule r) {
    switch (r) {
        case Rule::PR1: return "pr1";
        case Rule::PR2: return "pr2";
        case Rule::PR3: return "pr3";
        case Rule::PR4: return "pr4";
        case Rule::RectGradMod: return "mod";
    }
    return "?";
}

struct AttributionConfig {
    Method method = Method::RectGrad;
    Rule rule = Rule::PR1;           // rectgrad only
    float q = 98.0f;                 // threshold percentile
    std::optional<bool> use_padding_trick;     // default: on for rectgrad
    bool use_prr = false;
    std::optional<bool> final_zero_threshold;  // default: on for rectgrad
    std::optional<float> final_threshold_q;    // extra percentile threshold on the map
    int smoothgrad_n = 50;
    float smoothgrad_sigma = 0.3f;   // 0.15 * input value range of 2
    std::uint64_t smoothgrad_seed = 0;
    int integgrad_steps = 50;
    std::optional<Tensor> integgrad_baseline;  // default: all-zeros image

    bool padding_trick_enabled() const { return use_padding_trick.value_or(method == Method::RectGrad); }
    bool final_zero_enabled() const { return final_zero_threshold.value_or(method == Method::RectGrad); }

    void validate() const {
        if (q < 0.0f || q > 100.0f)
            throw std::invalid_argument("attribution: q=" + std::to_string(q) + " outside [0,100]");
        if (final_threshold_q && (*final_threshold_q < 0.0f || *final_threshold_q > 100.0f))
            throw std::invalid_argument("attribution: final_threshold_q outside [0,100]");
        if (smoothgrad_n < 1) throw std::invalid_argument("attribution: smoothgrad_n must be >= 1");
        if (integgrad_steps < 1) throw std::invalid_argument("attribution: integgrad_steps must be >= 1");
    }
};

struct AttributionMap {
    Tensor values;  // input-shaped (CxHxW), signed unless a threshold was applied
    Method method = Method::Saliency;
};

// ---------------------------------------------------------------------------
// Gates

inline Tensor rectgrad_gate(const Tensor& a, const Tensor& R, float tau) {
    check_same_shape(a, R, "rectgrad_gate");
    Tensor out(R.shape);
    for (std::size_t i = 0; i < R.size(); ++i)
        out.data[i] = a.data[i] * R.data[i] > tau ? R.data[i] : 0.0f;
    return out;
}

inline Tensor deconv_gate(const Tensor& R) {
    Tensor out(R.shape);
    for (std::size_t i = 0; i < R.size(); ++i) out.data[i] = R.data[i] > 0.0f ? R.data[i] : 0.0f;
    return out;
}

inline Tensor guided_gate(const Tensor& z, const Tensor& R) {
    check_same_shape(z, R, "guided_gate");
    Tensor out(R.shape);
    for (std::size_t i = 0; i < R.size(); ++i)
        out.data[i] = (z.data[i] > 0.0f && R.data[i] > 0.0f) ? R.data[i] : 0.0f;
    return out;
}

inline Tensor rule_gate(Rule rule, const Tensor& a, const Tensor& R, float tau) {
    check_same_shape(a, R, "rule_gate");
    Tensor out(R.shape);
    switch (rule) {
        case Rule::PR1:
            for (std::size_t i = 0; i < R.size(); ++i)
                out.data[i] = a.data[i] * R.data[i] > tau ? R.data[i] : 0.0f;
            break;
        case Rule::PR2:
            for (std::size_t i = 0; i < R.size(); ++i)
                out.data[i] = std::abs(a.data[i] * R.data[i]) > tau ? R.data[i] : 0.0f;
            break;
        case Rule::PR3:
            for (std::size_t i = 0; i < R.size(); ++i)
                out.data[i] = a.data[i] > tau ? R.data[i] : 0.0f;
            break;
        case Rule::PR4:
            for (std::size_t i = 0; i < R.size(); ++i)
                out.data[i] = R.data[i] > tau ? R.data[i] : 0.0f;
            break;
        case Rule::RectGradMod:
            throw std::invalid_argument("rule_gate: the modified rule is a per-layer schedule, not a gate");
    }
    return out;
}

// The score pool the percentile threshold is taken over, per rule.
inline std::vector<float> rule_criterion(Rule rule, const Tensor& a, const Tensor& R) {
    check_same_shape(a, R, "rule_criterion");
    std::vector<float> s(R.size());
    switch (rule) {
        case Rule::PR1:
            for (std::size_t i = 0; i < R.size(); ++i) s[i] = a.data[i] * R.data[i];
            break;
        case Rule::PR2:
            for (std::size_t i = 0; i < R.size(); ++i) s[i] = std::abs(a.data[i] * R.data[i]);
            break;
        case Rule::PR3:
            s.assign(a.data.begin(), a.data.end());
            break;
        case Rule::PR4:
            s.assign(R.data.begin(), R.data.end());
            break;
        case Rule::RectGradMod:
            throw std::invalid_argument("rule_criterion: the modified rule is a per-layer schedule");
    }
    return s;
}

// ---------------------------------------------------------------------------
// Pooling and padding variants

// Splits each window's incoming gradient proportional to the window's
// activations; an all-zero window propagates nothing.
inline Tensor prr_pool_backward(const Tensor& grad_out, const Tensor& window_activations) {
    if (window_activations.rank() != 4)
        throw std::invalid_argument("prr_pool_backward: activations must be NCHW, got " +
                                    shape_str(window_activations.shape));
    const int n = window_activations.dim(0), c = window_activations.dim(1);
    const int h = window_activations.dim(2), w = window_activations.dim(3);
    const std::vector<int> want{n, c, h / 2, w / 2};
    if (grad_out.shape != want)
        throw std::invalid_argument("prr_pool_backward: grad_out " + shape_str(grad_out.shape) +
                                    " does not match pooled shape " + shape_str(want));
    Tensor g({n, c, h, w});
    std::size_t o = 0;
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * h * w;
            for (int oh = 0; oh < h / 2; ++oh)
                for (int ow = 0; ow < w / 2; ++ow) {
                    const std::size_t tl = base + static_cast<std::size_t>(2 * oh) * w + 2 * ow;
                    const std::size_t idx[4] = {tl, tl + 1, tl + static_cast<std::size_t>(w),
                                                tl + static_cast<std::size_t>(w) + 1};
                    const float a0 = window_activations.data[idx[0]];
                    const float a1 = window_activations.data[idx[1]];
                    const float a2 = window_activations.data[idx[2]];
                    const float a3 = window_activations.data[idx[3]];
                    const float sum = a0 + a1 + a2 + a3;
                    const float grad = grad_out.data[o++];
                    if (sum > 0.0f) {
                        g.data[idx[0]] = grad * a0 / sum;
                        g.data[idx[1]] = grad * a1 / sum;
                        g.data[idx[2]] = grad * a2 / sum;
                        g.data[idx[3]] = grad * a3 / sum;
                    }
                }
        }
    return g;
}

// Zero a border ring of the given width on the two trailing spatial dims.
inline Tensor padding_mask(const Tensor& grad, int pad_width) {
    if (grad.rank() < 2)
        throw std::invalid_argument("padding_mask: need spatial dims, got " + shape_str(grad.shape));
    const int h = grad.dim(grad.rank() - 2), w = grad.dim(grad.rank() - 1);
    if (pad_width < 0 || (pad_width > 0 && 2 * pad_width >= std::min(h, w)))
        throw std::invalid_argument("padding_mask: width " + std::to_string(pad_width) +
                                    " covers the whole " + std::to_string(h) + "x" +
                                    std::to_string(w) + " map");
    if (pad_width == 0) return grad;
    Tensor out = grad;
    const std::size_t planes = grad.size() / (static_cast<std::size_t>(h) * w);
    for (std::size_t p = 0; p < planes; ++p) {
        float* plane = out.data.data() + p * h * w;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (y < pad_width || y >= h - pad_width || x < pad_width || x >= w - pad_width)
                    plane[static_cast<std::size_t>(y) * w + x] = 0.0f;
    }
    return out;
}

// Keep entries strictly above the q-th percentile of the map's values.
inline Tensor final_threshold(const Tensor& map, float q) {
    const float tau = percentile(map.data, q);
    Tensor out(map.shape);
    for (std::size_t i = 0; i < map.size(); ++i)
        out.data[i] = map.data[i] > tau ? map.data[i] : 0.0f;
    return out;
}

// x * R, thresholded at zero (the final input rule).
inline Tensor apply_final_zero_threshold(const Tensor& input, const Tensor& R) {
    check_same_shape(input, R, "final zero threshold");
    Tensor out(input.shape);
    for (std::size_t i = 0; i < input.size(); ++i) {
        const float v = input.data[i] * R.data[i];
        out.data[i] = v > 0.0f ? v : 0.0f;
    }
    return out;
}

// ---------------------------------------------------------------------------
// The shared backward walk

// layer index, z (gate input), a (gate output), R (incoming gradient) -> outgoing
using ReluGate = std::function<Tensor(int, const Tensor&, const Tensor&, const Tensor&)>;

inline ReluGate vanilla_relu_gate() {
    return [](int, const Tensor& z, const Tensor&, const Tensor& R) { return relu_backward(R, z); };
}

struct BackpropOptions {
    bool use_prr = false;
    bool padding_trick = false;
};

// Walks the trace backwards from a seed gradient on the logits down to the
// input. Affine and pooling layers are the standard adjoints; every ReLU is
// delegated to the gate.
inline Tensor backprop_to_input(const NetworkSpec& spec, const Checkpoint& ckpt,
                                const ActivationTrace& trace, const Tensor& seed_grad,
                                const ReluGate& gate, const BackpropOptions& opts = {}) {
    if (trace.outputs.size() != spec.layers.size())
        throw std::invalid_argument("backprop_to_input: trace has " +
                                    std::to_string(trace.outputs.size()) + " layers, spec has " +
                                    std::to_string(spec.layers.size()));
    Tensor grad = seed_grad;
    for (int l = spec.layer_count() - 1; l >= 0; --l) {
        const Tensor& in = l == 0 ? trace.input : trace.outputs[l - 1];
        switch (spec.layers[l].kind) {
            case LayerKind::Conv: {
                grad = conv2d_backward(grad, in, ckpt.weights[l], spec.layers[l].pad).input;
                if (opts.padding_trick && spec.layers[l].pad == Padding::Same &&
                    spec.layers[l].kernel > 1)
                    grad = padding_mask(grad, (spec.layers[l].kernel - 1) / 2);
                break;
            }
            case LayerKind::Dense:
                grad = dense_backward(grad, in, ckpt.weights[l]).input;
                break;
            case LayerKind::ReLU:
                grad = gate(l, in, trace.outputs[l], grad);
                break;
            case LayerKind::MaxPool:
                grad = opts.use_prr ? prr_pool_backward(grad, in)
                                    : maxpool2x2_backward(grad, trace.pool_argmax.at(l), in.shape);
                break;
        }
    }
    return grad;
}

namespace detail {

inline Tensor onehot_seed(const Tensor& logits, int class_index) {
    if (logits.rank() != 2 || class_index < 0 || class_index >= logits.dim(1))
        throw std::invalid_argument("attribution: class index " + std::to_string(class_index) +
                                    " invalid for logits " + shape_str(logits.shape));
    Tensor seed = Tensor::zeros(logits.shape);
    seed.data[static_cast<std::size_t>(class_index)] = 1.0f;
    return seed;
}

inline ReluGate rectgrad_rule_gate(Rule rule, float q) {
    // RectGradMod: PR1 at the topmost gate (first one reached walking
    // backwards), PR2 below it.
    auto first = std::make_shared<bool>(true);
    return [rule, q, first](int, const Tensor&, const Tensor& a, const Tensor& R) {
        Rule effective = rule;
        if (rule == Rule::RectGradMod) {
            effective = *first ? Rule::PR1 : Rule::PR2;
            *first = false;
        }
        const auto scores = rule_criterion(effective, a, R);
        const float tau = q == 0.0f ? 0.0f : percentile(scores, q);
        return rule_gate(effective, a, R, tau);
    };
}

inline Tensor squeeze_batch(Tensor t) {
    if (t.rank() == 4 && t.dim(0) == 1) t.shape.erase(t.shape.begin());
    return t;
}

inline Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "elementwise_mul");
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Methods

// Gradient of the class logit with respect to the image, with a pluggable
// ReLU gate. The image keeps its batch dim (1xCxHxW).
inline Tensor class_gradient(const NetworkSpec& spec, const Checkpoint& ckpt, const Tensor& image,
                             int class_index, const ReluGate& gate, const BackpropOptions& opts = {}) {
    ActivationTrace trace = forward_traced(spec, ckpt, image);
    Tensor seed = detail::onehot_seed(trace.logits(), class_index);
    return backprop_to_input(spec, ckpt, trace, seed, gate, opts);
}

inline AttributionMap attribute(const NetworkSpec& spec, const Checkpoint& ckpt,
                                const Tensor& image_in, int class_index,
                                const AttributionConfig& config) {
    config.validate();
    Tensor image = image_in;
    if (image.rank() == 3) image.shape.insert(image.shape.begin(), 1);
    if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != spec.in_channels ||
        image.dim(2) != spec.in_h || image.dim(3) != spec.in_w)
        throw std::invalid_argument("attribute: image shape " + shape_str(image_in.shape) +
                                    " does not match the network input");

    const BackpropOptions opts{config.use_prr, config.padding_trick_enabled()};
    Tensor raw;       // the method's own map before any final threshold
    Tensor grad;      // gradient at the input, when the method has one

    switch (config.method) {
        case Method::Saliency:
        case Method::GradInput:
        case Method::Deconv:
        case Method::GuidedBP:
        case Method::RectGrad: {
            ReluGate gate;
            if (config.method == Method::RectGrad)
                gate = detail::rectgrad_rule_gate(config.rule, config.q);
            else if (config.method == Method::Deconv)
                gate = [](int, const Tensor&, const Tensor&, const Tensor& R) { return deconv_gate(R); };
            else if (config.method == Method::GuidedBP)
                gate = [](int, const Tensor& z, const Tensor&, const Tensor& R) { return guided_gate(z, R); };
            else
                gate = vanilla_relu_gate();
            grad = class_gradient(spec, ckpt, image, class_index, gate, opts);
            raw = config.method == Method::GradInput || config.method == Method::RectGrad
                      ? detail::elementwise_mul(image, grad)
                      : grad;
            break;
        }
        case Method::SmoothGrad: {
            if (config.smoothgrad_sigma == 0.0f) {
                // all samples coincide with the image; the mean is the plain gradient
                grad = class_gradient(spec, ckpt, image, class_index, vanilla_relu_gate(), opts);
                raw = grad;
                break;
            }
            std::mt19937 rng(static_cast<std::uint32_t>(config.smoothgrad_seed * 0x9e3779b9ull + 3));
            std::normal_distribution<float> noise(0.0f, 1.0f);
            Tensor mean = Tensor::zeros(image.shape);
            for (int s = 0; s < config.smoothgrad_n; ++s) {
                Tensor noisy = image;
                for (auto& v : noisy.data) v += config.smoothgrad_sigma * noise(rng);
                Tensor g = class_gradient(spec, ckpt, noisy, class_index, vanilla_relu_gate(), opts);
                for (std::size_t i = 0; i < mean.size(); ++i) mean.data[i] += g.data[i];
            }
            for (auto& v : mean.data) v /= static_cast<float>(config.smoothgrad_n);
            grad = std::move(mean);
            raw = grad;
            break;
        }
        case Method::IntegGrad: {
            Tensor baseline = config.integgrad_baseline.value_or(Tensor::zeros(image.shape));
            if (baseline.rank() == 3) baseline.shape.insert(baseline.shape.begin(), 1);
            check_same_shape(baseline, image, "integrated gradients baseline");
            Tensor mean = Tensor::zeros(image.shape);
            const int m = config.integgrad_steps;
            for (int s = 0; s < m; ++s) {
                const float alpha = static_cast<float>(s) / static_cast<float>(m);  // left Riemann
                Tensor point(image.shape);
                for (std::size_t i = 0; i < point.size(); ++i)
                    point.data[i] = baseline.data[i] + alpha * (image.data[i] - baseline.data[i]);
                Tensor g = class_gradient(spec, ckpt, point, class_index, vanilla_relu_gate(), opts);
                for (std::size_t i = 0; i < mean.size(); ++i) mean.data[i] += g.data[i];
            }
            for (auto& v : mean.data) v /= static_cast<float>(m);
            grad = std::move(mean);
            raw = Tensor(image.shape);
            for (std::size_t i = 0; i < raw.size(); ++i)
                raw.data[i] = (image.data[i] - baseline.data[i]) * grad.data[i];
            break;
        }
    }

    Tensor map;
    if (config.final_zero_enabled()) {
        // IntegGrad's map is already an input-scaled product; clip it at zero.
        map = config.method == Method::IntegGrad
                  ? [&] {
                        Tensor t(raw.shape);
                        for (std::size_t i = 0; i < raw.size(); ++i)
                            t.data[i] = raw.data[i] > 0.0f ? raw.data[i] : 0.0f;
                        return t;
                    }()
                  : apply_final_zero_threshold(image, grad);
    } else {
        map = raw;
    }
    if (config.final_threshold_q) map = final_threshold(map, *config.final_threshold_q);
    return AttributionMap{detail::squeeze_batch(std::move(map)), config.method};
}

// Convenience wrappers for the two stochastic baselines.
inline AttributionMap smoothgrad(const NetworkSpec& spec, const Checkpoint& ckpt,
                                 const Tensor& image, int class_index, int n, float sigma,
                                 std::uint64_t seed = 0) {
    AttributionConfig cfg;
    cfg.method = Method::SmoothGrad;
    cfg.smoothgrad_n = n;
    cfg.smoothgrad_sigma = sigma;
    cfg.smoothgrad_seed = seed;
    return attribute(spec, ckpt, image, class_index, cfg);
}

inline AttributionMap integrated_gradients(const NetworkSpec& spec, const Checkpoint& ckpt,
                                           const Tensor& image, int class_index, int steps,
                                           std::optional<Tensor> baseline = std::nullopt) {
    AttributionConfig cfg;
    cfg.method = Method::IntegGrad;
    cfg.integgrad_steps = steps;
    cfg.integgrad_baseline = std::move(baseline);
    return attribute(spec, ckpt, image, class_index, cfg);
}

}  // namespace rglab
