#pragma once

// Dense float32 tensor and the numeric kernels (conv, pool, dense,
// activations, percentile) everything else is built from. All kernels are
// pure functions; scratch buffers are thread_local so callers may
// parallelize across batch items.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rglab {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor shape has non-positive dimension " + std::to_string(d));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(shape_numel(shape), 0.0f) {}
    Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape))
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, float v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    std::size_t size() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

    float& operator[](std::size_t i) { return data[i]; }
    float operator[](std::size_t i) const { return data[i]; }

    // NCHW accessor
    float& at4(int n, int c, int h, int w) {
        return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    float at4(int n, int c, int h, int w) const {
        return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
}

// ---------------------------------------------------------------------------
// Convolution, stride 1

enum class Padding { Same, Valid };

namespace detail {

inline int conv_pad(const Tensor& weights, Padding pad) {
    return pad == Padding::Same ? (weights.dim(2) - 1) / 2 : 0;
}

inline void check_conv_shapes(const Tensor& input, const Tensor& weights, const Tensor* bias,
                              Padding pad) {
    if (input.rank() != 4)
        throw std::invalid_argument("conv2d: input must be NCHW, got " + shape_str(input.shape));
    if (weights.rank() != 4)
        throw std::invalid_argument("conv2d: weights must be OIHW, got " + shape_str(weights.shape));
    if (weights.dim(2) != weights.dim(3))
        throw std::invalid_argument("conv2d: only square kernels supported, got " + shape_str(weights.shape));
    if (input.dim(1) != weights.dim(1))
        throw std::invalid_argument("conv2d: input channels " + std::to_string(input.dim(1)) +
                                    " != weight input channels " + std::to_string(weights.dim(1)));
    if (bias && (bias->rank() != 1 || bias->dim(0) != weights.dim(0)))
        throw std::invalid_argument("conv2d: bias shape " + shape_str(bias->shape) +
                                    " does not match " + std::to_string(weights.dim(0)) + " output channels");
    const int k = weights.dim(2);
    if (pad == Padding::Valid && (input.dim(2) < k || input.dim(3) < k))
        throw std::invalid_argument("conv2d: kernel " + std::to_string(k) + " does not fit input " +
                                    shape_str(input.shape) + " with VALID padding");
}

// One image CHW -> column matrix (C*K*K) x (HO*WO)
inline void im2col(const float* img, int c_in, int h, int w, int k, int pad, int ho, int wo,
                   float* cols) {
    for (int c = 0; c < c_in; ++c) {
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                float* row = cols + (static_cast<std::size_t>(c) * k * k + kh * k + kw) *
                                        (static_cast<std::size_t>(ho) * wo);
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh - pad + kh;
                    if (ih < 0 || ih >= h) {
                        std::fill(row + static_cast<std::size_t>(oh) * wo,
                                  row + static_cast<std::size_t>(oh + 1) * wo, 0.0f);
                        continue;
                    }
                    const float* src = img + (static_cast<std::size_t>(c) * h + ih) * w;
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow - pad + kw;
                        row[static_cast<std::size_t>(oh) * wo + ow] =
                            (iw >= 0 && iw < w) ? src[iw] : 0.0f;
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add columns back into a CHW image
inline void col2im(const float* cols, int c_in, int h, int w, int k, int pad, int ho, int wo,
                   float* img) {
    std::fill(img, img + static_cast<std::size_t>(c_in) * h * w, 0.0f);
    for (int c = 0; c < c_in; ++c) {
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                const float* row = cols + (static_cast<std::size_t>(c) * k * k + kh * k + kw) *
                                              (static_cast<std::size_t>(ho) * wo);
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh - pad + kh;
                    if (ih < 0 || ih >= h) continue;
                    float* dst = img + (static_cast<std::size_t>(c) * h + ih) * w;
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow - pad + kw;
                        if (iw >= 0 && iw < w) dst[iw] += row[static_cast<std::size_t>(oh) * wo + ow];
                    }
                }
            }
        }
    }
}

inline std::vector<float>& conv_scratch() {
    thread_local std::vector<float> buf;
    return buf;
}

}  // namespace detail

inline Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                             Padding pad) {
    detail::check_conv_shapes(input, weights, &bias, pad);
    const int n = input.dim(0), c_in = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int c_out = weights.dim(0), k = weights.dim(2);
    const int p = detail::conv_pad(weights, pad);
    const int ho = pad == Padding::Same ? h : h - k + 1;
    const int wo = pad == Padding::Same ? w : w - k + 1;

    Tensor out({n, c_out, ho, wo});
    auto& cols = detail::conv_scratch();
    cols.resize(static_cast<std::size_t>(c_in) * k * k * ho * wo);

    ConstMatMap wmat(weights.data.data(), c_out, c_in * k * k);
    for (int i = 0; i < n; ++i) {
        detail::im2col(input.data.data() + static_cast<std::size_t>(i) * c_in * h * w, c_in, h, w,
                       k, p, ho, wo, cols.data());
        ConstMatMap cmat(cols.data(), c_in * k * k, ho * wo);
        MatMap omat(out.data.data() + static_cast<std::size_t>(i) * c_out * ho * wo, c_out, ho * wo);
        omat.noalias() = wmat * cmat;
        omat.colwise() += Eigen::Map<const Eigen::VectorXf>(bias.data.data(), c_out);
    }
    return out;
}

struct Conv2dGrads {
    Tensor input;
    Tensor weights;
    Tensor bias;
};

inline Conv2dGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                                   const Tensor& weights, Padding pad) {
    detail::check_conv_shapes(input, weights, nullptr, pad);
    const int n = input.dim(0), c_in = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int c_out = weights.dim(0), k = weights.dim(2);
    const int p = detail::conv_pad(weights, pad);
    const int ho = pad == Padding::Same ? h : h - k + 1;
    const int wo = pad == Padding::Same ? w : w - k + 1;
    const std::vector<int> want{n, c_out, ho, wo};
    if (grad_out.shape != want)
        throw std::invalid_argument("conv2d_backward: grad_out shape " + shape_str(grad_out.shape) +
                                    " does not match forward output " + shape_str(want));

    Conv2dGrads g{Tensor({n, c_in, h, w}), Tensor::zeros(weights.shape), Tensor::zeros({c_out})};
    auto& scratch = detail::conv_scratch();
    const std::size_t col_sz = static_cast<std::size_t>(c_in) * k * k * ho * wo;
    scratch.resize(2 * col_sz);
    float* cols = scratch.data();
    float* gcols = scratch.data() + col_sz;

    ConstMatMap wmat(weights.data.data(), c_out, c_in * k * k);
    MatMap gwmat(g.weights.data.data(), c_out, c_in * k * k);
    Eigen::Map<Eigen::VectorXf> gbias(g.bias.data.data(), c_out);
    for (int i = 0; i < n; ++i) {
        detail::im2col(input.data.data() + static_cast<std::size_t>(i) * c_in * h * w, c_in, h, w,
                       k, p, ho, wo, cols);
        ConstMatMap cmat(cols, c_in * k * k, ho * wo);
        ConstMatMap gomat(grad_out.data.data() + static_cast<std::size_t>(i) * c_out * ho * wo,
                          c_out, ho * wo);
        gwmat.noalias() += gomat * cmat.transpose();
        gbias.noalias() += gomat.rowwise().sum();
        MatMap gcmat(gcols, c_in * k * k, ho * wo);
        gcmat.noalias() = wmat.transpose() * gomat;
        detail::col2im(gcols, c_in, h, w, k, p, ho, wo,
                       g.input.data.data() + static_cast<std::size_t>(i) * c_in * h * w);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Max pooling, 2x2 window, stride 2. Argmax keeps the flat input index of the
// winner per window; first element in scan order wins ties.

struct PoolResult {
    Tensor output;
    std::vector<std::int64_t> argmax;  // one entry per output element
};

inline PoolResult maxpool2x2_forward(const Tensor& input) {
    if (input.rank() != 4)
        throw std::invalid_argument("maxpool2x2: input must be NCHW, got " + shape_str(input.shape));
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("maxpool2x2: spatial dims must be even, got " +
                                    shape_str(input.shape));
    PoolResult r{Tensor({n, c, h / 2, w / 2}), {}};
    r.argmax.resize(r.output.size());
    std::size_t o = 0;
    for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * h * w;
            for (int oh = 0; oh < h / 2; ++oh) {
                for (int ow = 0; ow < w / 2; ++ow) {
                    const std::size_t tl = base + static_cast<std::size_t>(2 * oh) * w + 2 * ow;
                    const std::int64_t idx[4] = {
                        static_cast<std::int64_t>(tl), static_cast<std::int64_t>(tl + 1),
                        static_cast<std::int64_t>(tl + w), static_cast<std::int64_t>(tl + w + 1)};
                    int best = 0;
                    for (int j = 1; j < 4; ++j)
                        if (input.data[idx[j]] > input.data[idx[best]]) best = j;
                    r.output.data[o] = input.data[idx[best]];
                    r.argmax[o] = idx[best];
                    ++o;
                }
            }
        }
    }
    return r;
}

inline Tensor maxpool2x2_backward(const Tensor& grad_out, const std::vector<std::int64_t>& argmax,
                                  const std::vector<int>& input_shape) {
    if (grad_out.size() != argmax.size())
        throw std::invalid_argument("maxpool2x2_backward: grad_out has " +
                                    std::to_string(grad_out.size()) + " elements but argmax has " +
                                    std::to_string(argmax.size()));
    Tensor g(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) {
        const auto idx = argmax[i];
        if (idx < 0 || static_cast<std::size_t>(idx) >= g.size())
            throw std::invalid_argument("maxpool2x2_backward: stale argmax index " +
                                        std::to_string(idx) + " for input " + shape_str(input_shape));
        g.data[static_cast<std::size_t>(idx)] += grad_out.data[i];
    }
    return g;
}

// ---------------------------------------------------------------------------
// Dense (rows = batch, any trailing dims flattened to features)

namespace detail {

inline std::pair<int, int> dense_view(const Tensor& t) {
    const int n = t.dim(0);
    int feat = 1;
    for (int i = 1; i < t.rank(); ++i) feat *= t.dim(i);
    return {n, feat};
}

}  // namespace detail

// weights are (out_features, in_features), bias (out_features)
inline Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    const auto [n, feat] = detail::dense_view(input);
    if (weights.rank() != 2 || weights.dim(1) != feat)
        throw std::invalid_argument("dense_forward: weights " + shape_str(weights.shape) +
                                    " incompatible with " + std::to_string(feat) + " input features");
    const int out = weights.dim(0);
    if (bias.rank() != 1 || bias.dim(0) != out)
        throw std::invalid_argument("dense_forward: bias " + shape_str(bias.shape) +
                                    " does not match " + std::to_string(out) + " outputs");
    Tensor y({n, out});
    ConstMatMap x(input.data.data(), n, feat);
    ConstMatMap wm(weights.data.data(), out, feat);
    MatMap ym(y.data.data(), n, out);
    ym.noalias() = x * wm.transpose();
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias.data.data(), out);
    return y;
}

struct DenseGrads {
    Tensor input;  // same shape as forward input
    Tensor weights;
    Tensor bias;
};

inline DenseGrads dense_backward(const Tensor& grad_out, const Tensor& input,
                                 const Tensor& weights) {
    const auto [n, feat] = detail::dense_view(input);
    const int out = weights.dim(0);
    if (grad_out.rank() != 2 || grad_out.dim(0) != n || grad_out.dim(1) != out)
        throw std::invalid_argument("dense_backward: grad_out " + shape_str(grad_out.shape) +
                                    " does not match batch " + std::to_string(n) + " x " +
                                    std::to_string(out));
    DenseGrads g{Tensor(input.shape), Tensor(weights.shape), Tensor({out})};
    ConstMatMap x(input.data.data(), n, feat);
    ConstMatMap wm(weights.data.data(), out, feat);
    ConstMatMap gy(grad_out.data.data(), n, out);
    MatMap(g.input.data.data(), n, feat).noalias() = gy * wm;
    MatMap(g.weights.data.data(), out, feat).noalias() = gy.transpose() * x;
    Eigen::Map<Eigen::VectorXf>(g.bias.data.data(), out).noalias() = gy.colwise().sum();
    return g;
}

// ---------------------------------------------------------------------------
// Activations and loss

inline Tensor relu_forward(const Tensor& z) {
    Tensor a(z.shape);
    for (std::size_t i = 0; i < z.size(); ++i) a.data[i] = z.data[i] > 0.0f ? z.data[i] : 0.0f;
    return a;
}

// Vanilla backprop gate: grad * I(z > 0)
inline Tensor relu_backward(const Tensor& grad_out, const Tensor& z) {
    check_same_shape(grad_out, z, "relu_backward");
    Tensor g(z.shape);
    for (std::size_t i = 0; i < z.size(); ++i)
        g.data[i] = z.data[i] > 0.0f ? grad_out.data[i] : 0.0f;
    return g;
}

struct SoftmaxCrossEntropy {
    float loss;        // mean over the batch
    Tensor grad;       // d loss / d logits, includes the 1/N factor
    Tensor softmax;    // per-row probabilities
};

inline SoftmaxCrossEntropy softmax_cross_entropy(const Tensor& logits,
                                                 const std::vector<int>& labels) {
    if (logits.rank() != 2)
        throw std::invalid_argument("softmax_cross_entropy: logits must be NxK, got " +
                                    shape_str(logits.shape));
    const int n = logits.dim(0), k = logits.dim(1);
    if (static_cast<int>(labels.size()) != n)
        throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for batch of " + std::to_string(n));
    SoftmaxCrossEntropy r{0.0f, Tensor({n, k}), Tensor({n, k})};
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= k)
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                                        " out of range [0," + std::to_string(k) + ")");
        const float* row = logits.data.data() + static_cast<std::size_t>(i) * k;
        float m = row[0];
        for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
        double sum = 0.0;
        for (int j = 0; j < k; ++j) sum += std::exp(static_cast<double>(row[j]) - m);
        const double logsum = std::log(sum);
        loss += logsum - (static_cast<double>(row[labels[i]]) - m);
        for (int j = 0; j < k; ++j) {
            const float p = static_cast<float>(std::exp(static_cast<double>(row[j]) - m) / sum);
            r.softmax.data[static_cast<std::size_t>(i) * k + j] = p;
            r.grad.data[static_cast<std::size_t>(i) * k + j] =
                (p - (j == labels[i] ? 1.0f : 0.0f)) / static_cast<float>(n);
        }
    }
    r.loss = static_cast<float>(loss / n);
    return r;
}

// ---------------------------------------------------------------------------
// Percentile: linear interpolation between closest ranks; q=0 -> min,
// q=100 -> max. All values enter the pool, including exact zeros.

inline float percentile(std::span<const float> values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile: empty input");
    if (q < 0.0 || q > 100.0)
        throw std::invalid_argument("percentile: q=" + std::to_string(q) + " outside [0,100]");
    std::vector<float> s(values.begin(), values.end());
    std::sort(s.begin(), s.end());
    const double idx = (static_cast<double>(s.size()) - 1.0) * q / 100.0;
    const std::size_t lo = static_cast<std::size_t>(idx);
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    const double w = idx - static_cast<double>(lo);
    return static_cast<float>(static_cast<double>(s[lo]) +
                              w * (static_cast<double>(s[hi]) - static_cast<double>(s[lo])));
}

inline float percentile(const std::vector<float>& values, double q) {
    return percentile(std::span<const float>(values), q);
}

}  // namespace rglab
