#pragma once

// Network definition, traced forward pass, Adam training loop and weight
// checkpointing. The forward path always runs image by image so results are
// bitwise independent of batch size; training fans per-image gradients out
// over a fixed number of chunks and reduces them in chunk order, which keeps
// runs deterministic regardless of how many worker threads exist.

#include "rglab/tensor.hpp"

#include <atomic>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <thread>
#include <utility>

namespace rglab {

enum class LayerKind { Conv, ReLU, MaxPool, Dense };

struct LayerDesc {
    LayerKind kind;
    int out_channels = 0;      // Conv
    int kernel = 3;            // Conv
    Padding pad = Padding::Same;
    int width = 0;             // Dense

    static LayerDesc conv(int out_channels, int kernel = 3, Padding pad = Padding::Same) {
        return {LayerKind::Conv, out_channels, kernel, pad, 0};
    }
    static LayerDesc relu() { return {LayerKind::ReLU}; }
    static LayerDesc maxpool() { return {LayerKind::MaxPool}; }
    static LayerDesc dense(int width) { return {LayerKind::Dense, 0, 0, Padding::Same, width}; }
};

struct NetworkSpec {
    std::vector<LayerDesc> layers;
    int in_channels = 3;
    int in_h = 32;
    int in_w = 32;

    int layer_count() const { return static_cast<int>(layers.size()); }

    // Shape of each layer's output (excluding batch dim), also validates chaining.
    std::vector<std::vector<int>> layer_shapes() const {
        std::vector<std::vector<int>> shapes;
        std::vector<int> cur{in_channels, in_h, in_w};
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& d = layers[l];
            switch (d.kind) {
                case LayerKind::Conv: {
                    if (cur.size() != 3)
                        throw std::invalid_argument("layer " + std::to_string(l) +
                                                    ": conv after flattening layer");
                    const int k = d.kernel;
                    const int h = d.pad == Padding::Same ? cur[1] : cur[1] - k + 1;
                    const int w = d.pad == Padding::Same ? cur[2] : cur[2] - k + 1;
                    cur = {d.out_channels, h, w};
                    break;
                }
                case LayerKind::MaxPool:
                    if (cur.size() != 3 || cur[1] % 2 || cur[2] % 2)
                        throw std::invalid_argument("layer " + std::to_string(l) +
                                                    ": maxpool needs even spatial dims");
                    cur = {cur[0], cur[1] / 2, cur[2] / 2};
                    break;
                case LayerKind::Dense: {
                    int feat = 1;
                    for (int v : cur) feat *= v;
                    (void)feat;
                    cur = {d.width};
                    break;
                }
                case LayerKind::ReLU:
                    break;
            }
            shapes.push_back(cur);
        }
        return shapes;
    }
};

// Appendix-style CIFAR-10 stack: two 3x3/32 convs, pool, two 3x3/64 convs,
// pool, dense 256, dense 10, ReLU after every conv and the first dense.
inline NetworkSpec cifar_cnn_spec() {
    NetworkSpec s;
    s.layers = {
        LayerDesc::conv(32), LayerDesc::relu(),
        LayerDesc::conv(32), LayerDesc::relu(),
        LayerDesc::maxpool(),
        LayerDesc::conv(64), LayerDesc::relu(),
        LayerDesc::conv(64), LayerDesc::relu(),
        LayerDesc::maxpool(),
        LayerDesc::dense(256), LayerDesc::relu(),
        LayerDesc::dense(10),
    };
    return s;
}

struct Checkpoint {
    // Parallel to NetworkSpec::layers; empty tensors for parameterless layers.
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;
    int epoch = 0;
    float test_accuracy = 0.0f;

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& t : weights) n += t.size();
        for (const auto& t : biases) n += t.size();
        return n;
    }
};

// He-normal init scaled by fan-in; biases zero.
inline Checkpoint init_checkpoint(const NetworkSpec& spec, std::uint64_t seed) {
    Checkpoint c;
    c.weights.resize(spec.layers.size());
    c.biases.resize(spec.layers.size());
    std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)));
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::vector<int> cur{spec.in_channels, spec.in_h, spec.in_w};
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const auto& d = spec.layers[l];
        if (d.kind == LayerKind::Conv) {
            const int fan_in = cur[0] * d.kernel * d.kernel;
            const float std_dev = std::sqrt(2.0f / static_cast<float>(fan_in));
            Tensor w({d.out_channels, cur[0], d.kernel, d.kernel});
            for (auto& v : w.data) v = std_dev * normal(rng);
            c.weights[l] = std::move(w);
            c.biases[l] = Tensor::zeros({d.out_channels});
            const int h = d.pad == Padding::Same ? cur[1] : cur[1] - d.kernel + 1;
            const int w2 = d.pad == Padding::Same ? cur[2] : cur[2] - d.kernel + 1;
            cur = {d.out_channels, h, w2};
        } else if (d.kind == LayerKind::Dense) {
            int feat = 1;
            for (int v : cur) feat *= v;
            const float std_dev = std::sqrt(2.0f / static_cast<float>(feat));
            Tensor w({d.width, feat});
            for (auto& v : w.data) v = std_dev * normal(rng);
            c.weights[l] = std::move(w);
            c.biases[l] = Tensor::zeros({d.width});
            cur = {d.width};
        } else if (d.kind == LayerKind::MaxPool) {
            cur = {cur[0], cur[1] / 2, cur[2] / 2};
        }
    }
    return c;
}

struct Model {
    NetworkSpec spec;
    Checkpoint checkpoint;
};

inline Model build_cifar_cnn(std::uint64_t seed) {
    Model m{cifar_cnn_spec(), {}};
    m.checkpoint = init_checkpoint(m.spec, seed);
    return m;
}

// Per-layer record of one forward pass over a single image (batch dim 1).
// For a ReLU layer l, z = outputs[l-1] and a = outputs[l].
struct ActivationTrace {
    Tensor input;                                      // 1xCxHxW
    std::vector<Tensor> outputs;                       // one per layer
    std::map<int, std::vector<std::int64_t>> pool_argmax;

    const Tensor& logits() const { return outputs.back(); }
};

namespace detail {

inline void check_input_batch(const NetworkSpec& spec, const Tensor& batch, bool check_range) {
    const std::vector<int> want{batch.rank() == 4 ? batch.dim(0) : -1, spec.in_channels, spec.in_h,
                                spec.in_w};
    if (batch.rank() != 4 || batch.dim(1) != spec.in_channels || batch.dim(2) != spec.in_h ||
        batch.dim(3) != spec.in_w)
        throw std::invalid_argument("forward: batch shape " + shape_str(batch.shape) +
                                    " does not match Nx" + std::to_string(spec.in_channels) + "x" +
                                    std::to_string(spec.in_h) + "x" + std::to_string(spec.in_w));
    if (check_range) {
        for (float v : batch.data)
            if (!(v >= -1.0f - 1e-5f && v <= 1.0f + 1e-5f))
                throw std::invalid_argument("forward: input value " + std::to_string(v) +
                                            " outside [-1,1]");
    }
}

inline Tensor image_slice(const Tensor& batch, int i) {
    const int c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    Tensor img({1, c, h, w});
    const std::size_t n = img.size();
    std::copy_n(batch.data.begin() + static_cast<std::ptrdiff_t>(n) * i, n, img.data.begin());
    return img;
}

}  // namespace detail

// Traced forward over a single image (1xCxHxW). The trace is what every
// attribution rule reads.
inline ActivationTrace forward_traced(const NetworkSpec& spec, const Checkpoint& ckpt,
                                      const Tensor& image) {
    ActivationTrace tr;
    tr.input = image;
    tr.outputs.reserve(spec.layers.size());
    const Tensor* cur = &tr.input;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const auto& d = spec.layers[l];
        switch (d.kind) {
            case LayerKind::Conv:
                tr.outputs.push_back(conv2d_forward(*cur, ckpt.weights[l], ckpt.biases[l], d.pad));
                break;
            case LayerKind::ReLU:
                tr.outputs.push_back(relu_forward(*cur));
                break;
            case LayerKind::MaxPool: {
                auto r = maxpool2x2_forward(*cur);
                tr.pool_argmax[static_cast<int>(l)] = std::move(r.argmax);
                tr.outputs.push_back(std::move(r.output));
                break;
            }
            case LayerKind::Dense:
                tr.outputs.push_back(dense_forward(*cur, ckpt.weights[l], ckpt.biases[l]));
                break;
        }
        cur = &tr.outputs.back();
    }
    return tr;
}

// Forward pass over a batch, logits only. Runs image by image.
inline Tensor forward(const NetworkSpec& spec, const Checkpoint& ckpt, const Tensor& batch,
                      bool validate_range = true) {
    detail::check_input_batch(spec, batch, validate_range);
    const int n = batch.dim(0);
    const auto shapes = spec.layer_shapes();
    const int classes = shapes.back()[0];
    Tensor logits({n, classes});
    for (int i = 0; i < n; ++i) {
        ActivationTrace tr = forward_traced(spec, ckpt, detail::image_slice(batch, i));
        std::copy_n(tr.logits().data.begin(), classes,
                    logits.data.begin() + static_cast<std::ptrdiff_t>(i) * classes);
    }
    return logits;
}

struct ParamGrads {
    std::vector<Tensor> weights;
    std::vector<Tensor> biases;

    static ParamGrads zeros_like(const Checkpoint& c) {
        ParamGrads g;
        g.weights.reserve(c.weights.size());
        g.biases.reserve(c.biases.size());
        for (const auto& t : c.weights) g.weights.push_back(t.size() ? Tensor::zeros(t.shape) : Tensor{});
        for (const auto& t : c.biases) g.biases.push_back(t.size() ? Tensor::zeros(t.shape) : Tensor{});
        return g;
    }

    void add(const ParamGrads& o) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            for (std::size_t i = 0; i < weights[l].size(); ++i) weights[l].data[i] += o.weights[l].data[i];
            for (std::size_t i = 0; i < biases[l].size(); ++i) biases[l].data[i] += o.biases[l].data[i];
        }
    }
};

// Standard backprop through one traced image. Returns parameter gradients and
// the gradient with respect to the input image.
struct BackwardResult {
    ParamGrads grads;
    Tensor grad_input;
};

inline BackwardResult backward(const NetworkSpec& spec, const Checkpoint& ckpt,
                               const ActivationTrace& tr, const Tensor& grad_logits) {
    BackwardResult res{ParamGrads::zeros_like(ckpt), {}};
    Tensor grad = grad_logits;
    for (int l = spec.layer_count() - 1; l >= 0; --l) {
        const Tensor& in = l == 0 ? tr.input : tr.outputs[l - 1];
        switch (spec.layers[l].kind) {
            case LayerKind::Conv: {
                auto g = conv2d_backward(grad, in, ckpt.weights[l], spec.layers[l].pad);
                res.grads.weights[l] = std::move(g.weights);
                res.grads.biases[l] = std::move(g.bias);
                grad = std::move(g.input);
                break;
            }
            case LayerKind::Dense: {
                auto g = dense_backward(grad, in, ckpt.weights[l]);
                res.grads.weights[l] = std::move(g.weights);
                res.grads.biases[l] = std::move(g.bias);
                grad = std::move(g.input);
                break;
            }
            case LayerKind::ReLU:
                grad = relu_backward(grad, in);
                break;
            case LayerKind::MaxPool:
                grad = maxpool2x2_backward(grad, tr.pool_argmax.at(l), in.shape);
                break;
        }
    }
    res.grad_input = std::move(grad);
    return res;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    int epochs = 20;
    int batch_size = 128;
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 0 || batch_size <= 0 || lr < 0.0f || beta1 < 0.0f || beta1 >= 1.0f ||
            beta2 < 0.0f || beta2 >= 1.0f || eps <= 0.0f)
            throw std::invalid_argument("train config has non-positive or out-of-range values");
    }
};

struct EpochLog {
    int epoch;
    float train_loss;
    float test_accuracy;
};

struct AdamState {
    ParamGrads m;
    ParamGrads v;
    std::int64_t t = 0;

    explicit AdamState(const Checkpoint& c) : m(ParamGrads::zeros_like(c)), v(ParamGrads::zeros_like(c)) {}

    void step(Checkpoint& ckpt, const ParamGrads& g, const TrainConfig& cfg) {
        ++t;
        const float c1 = 1.0f - std::pow(cfg.beta1, static_cast<float>(t));
        const float c2 = 1.0f - std::pow(cfg.beta2, static_cast<float>(t));
        auto update = [&](Tensor& w, Tensor& mw, Tensor& vw, const Tensor& gw) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                const float gi = gw.data[i];
                mw.data[i] = cfg.beta1 * mw.data[i] + (1.0f - cfg.beta1) * gi;
                vw.data[i] = cfg.beta2 * vw.data[i] + (1.0f - cfg.beta2) * gi * gi;
                const float mhat = mw.data[i] / c1;
                const float vhat = vw.data[i] / c2;
                w.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            }
        };
        for (std::size_t l = 0; l < ckpt.weights.size(); ++l) {
            if (!ckpt.weights[l].size()) continue;
            update(ckpt.weights[l], m.weights[l], v.weights[l], g.weights[l]);
            update(ckpt.biases[l], m.biases[l], v.biases[l], g.biases[l]);
        }
    }
};

namespace detail {

// Fixed chunk count so the gradient reduction order (and therefore the float
// result) does not depend on how many cores the host has.
constexpr int kGradChunks = 16;

template <typename Fn>
inline void run_chunks(int n_items, int n_chunks, Fn fn) {
    n_chunks = std::min(n_chunks, std::max(n_items, 1));
    std::vector<std::pair<int, int>> ranges;
    for (int c = 0; c < n_chunks; ++c) {
        const int begin = static_cast<int>(static_cast<std::int64_t>(n_items) * c / n_chunks);
        const int end = static_cast<int>(static_cast<std::int64_t>(n_items) * (c + 1) / n_chunks);
        if (begin < end) ranges.emplace_back(begin, end);
    }
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (hw == 1 || ranges.size() <= 1) {
        for (std::size_t c = 0; c < ranges.size(); ++c) fn(static_cast<int>(c), ranges[c].first, ranges[c].second);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    const unsigned workers = std::min<unsigned>(hw, static_cast<unsigned>(ranges.size()));
    for (unsigned wk = 0; wk < workers; ++wk)
        pool.emplace_back([&] {
            for (std::size_t c = next.fetch_add(1); c < ranges.size(); c = next.fetch_add(1))
                fn(static_cast<int>(c), ranges[c].first, ranges[c].second);
        });
    for (auto& th : pool) th.join();
}

}  // namespace detail

// Mean cross-entropy loss and summed parameter gradients over a batch given
// by dataset indices. Gradients come back already scaled for the mean loss.
inline std::pair<float, ParamGrads> batch_gradients(const NetworkSpec& spec, const Checkpoint& ckpt,
                                                    const Tensor& images, const std::vector<int>& labels,
                                                    const std::vector<int>& batch_idx) {
    const int bs = static_cast<int>(batch_idx.size());
    std::vector<ParamGrads> chunk_grads(detail::kGradChunks, ParamGrads::zeros_like(ckpt));
    std::vector<double> chunk_loss(detail::kGradChunks, 0.0);
    detail::run_chunks(bs, detail::kGradChunks, [&](int chunk, int begin, int end) {
        for (int i = begin; i < end; ++i) {
            const int idx = batch_idx[i];
            Tensor img = detail::image_slice(images, idx);
            ActivationTrace tr = forward_traced(spec, ckpt, img);
            auto sce = softmax_cross_entropy(tr.logits(), {labels[idx]});
            chunk_loss[chunk] += sce.loss;
            auto back = backward(spec, ckpt, tr, sce.grad);
            chunk_grads[chunk].add(back.grads);
        }
    });
    ParamGrads total = std::move(chunk_grads[0]);
    double loss = chunk_loss[0];
    for (int c = 1; c < detail::kGradChunks; ++c) {
        total.add(chunk_grads[c]);
        loss += chunk_loss[c];
    }
    // per-image grads carry 1/1 factors; rescale to the batch mean
    const float scale = 1.0f / static_cast<float>(bs);
    for (auto& t : total.weights)
        for (auto& v : t.data) v *= scale;
    for (auto& t : total.biases)
        for (auto& v : t.data) v *= scale;
    return {static_cast<float>(loss / bs), std::move(total)};
}

inline std::vector<int> predict(const NetworkSpec& spec, const Checkpoint& ckpt,
                                const Tensor& images, int batch_size = 128) {
    const int n = images.dim(0);
    std::vector<int> preds(n);
    const auto shapes = spec.layer_shapes();
    const int classes = shapes.back()[0];
    detail::run_chunks(n, detail::kGradChunks, [&](int, int begin, int end) {
        for (int i = begin; i < end; ++i) {
            ActivationTrace tr = forward_traced(spec, ckpt, detail::image_slice(images, i));
            const float* row = tr.logits().data.data();
            int best = 0;
            for (int j = 1; j < classes; ++j)
                if (row[j] > row[best]) best = j;
            preds[i] = best;
        }
    });
    (void)batch_size;
    return preds;
}

inline float accuracy(const NetworkSpec& spec, const Checkpoint& ckpt, const Tensor& images,
                      const std::vector<int>& labels) {
    const auto preds = predict(spec, ckpt, images);
    int hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
    return static_cast<float>(hit) / static_cast<float>(preds.size());
}

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochLog> log;
};

inline TrainResult train(const NetworkSpec& spec, Checkpoint init, const Tensor& train_images,
                         const std::vector<int>& train_labels, const Tensor& test_images,
                         const std::vector<int>& test_labels, const TrainConfig& cfg,
                         const std::function<void(const EpochLog&)>& on_epoch = nullptr) {
    cfg.validate();
    if (!train_images.size() || train_labels.empty())
        throw std::invalid_argument("train: empty dataset");
    const int n = train_images.dim(0);
    TrainResult res{std::move(init), {}};
    AdamState adam(res.checkpoint);
    std::mt19937 shuffle_rng(static_cast<std::uint32_t>(cfg.seed * 0x9e3779b9ull + 1));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        int steps = 0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            const int end = std::min(n, start + cfg.batch_size);
            std::vector<int> batch(order.begin() + start, order.begin() + end);
            auto [loss, grads] = batch_gradients(spec, res.checkpoint, train_images, train_labels, batch);
            adam.step(res.checkpoint, grads, cfg);
            epoch_loss += loss;
            ++steps;
        }
        EpochLog log{epoch, static_cast<float>(epoch_loss / std::max(steps, 1)),
                     test_images.size() ? accuracy(spec, res.checkpoint, test_images, test_labels)
                                        : 0.0f};
        res.checkpoint.epoch = epoch;
        res.checkpoint.test_accuracy = log.test_accuracy;
        res.log.push_back(log);
        if (on_epoch) on_epoch(log);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoint file format: little-endian, magic "RGLB", version, layer count,
// then per layer a has-params flag and the weight/bias tensors (rank, dims,
// raw float payload), then epoch and test accuracy.

namespace detail {

constexpr char kCkptMagic[4] = {'R', 'G', 'L', 'B'};
constexpr std::uint32_t kCkptVersion = 1;

class Reader {
  public:
    Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw std::runtime_error("cannot open checkpoint file " + path);
    }
    void read(void* dst, std::size_t n, const char* what) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw std::runtime_error("checkpoint " + path_ + " truncated at offset " +
                                     std::to_string(offset_ + static_cast<std::size_t>(in_.gcount())) +
                                     " while reading " + what);
        offset_ += n;
    }
    template <typename T>
    T scalar(const char* what) {
        T v;
        read(&v, sizeof(T), what);
        return v;
    }
    std::size_t offset() const { return offset_; }

  private:
    std::ifstream in_;
    std::string path_;
    std::size_t offset_ = 0;
};

inline void write_tensor(std::ofstream& out, const Tensor& t) {
    const std::uint32_t rank = static_cast<std::uint32_t>(t.shape.size());
    out.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (int d : t.shape) {
        const std::uint32_t dim = static_cast<std::uint32_t>(d);
        out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
    }
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

inline Tensor read_tensor(Reader& r) {
    const auto rank = r.scalar<std::uint32_t>("tensor rank");
    if (rank > 8) throw std::runtime_error("checkpoint tensor rank " + std::to_string(rank) + " not plausible");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(r.scalar<std::uint32_t>("tensor dim"));
    Tensor t(shape);
    r.read(t.data.data(), t.data.size() * sizeof(float), "tensor payload");
    return t;
}

}  // namespace detail

inline void save_weights(const Checkpoint& ckpt, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write checkpoint file " + tmp);
        out.write(detail::kCkptMagic, 4);
        const std::uint32_t version = detail::kCkptVersion;
        out.write(reinterpret_cast<const char*>(&version), sizeof(version));
        const std::uint32_t layers = static_cast<std::uint32_t>(ckpt.weights.size());
        out.write(reinterpret_cast<const char*>(&layers), sizeof(layers));
        for (std::size_t l = 0; l < ckpt.weights.size(); ++l) {
            const std::uint8_t has = ckpt.weights[l].size() ? 1 : 0;
            out.write(reinterpret_cast<const char*>(&has), 1);
            if (has) {
                detail::write_tensor(out, ckpt.weights[l]);
                detail::write_tensor(out, ckpt.biases[l]);
            }
        }
        const std::int32_t epoch = ckpt.epoch;
        out.write(reinterpret_cast<const char*>(&epoch), sizeof(epoch));
        out.write(reinterpret_cast<const char*>(&ckpt.test_accuracy), sizeof(float));
        if (!out) throw std::runtime_error("short write on checkpoint file " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_weights(const std::string& path) {
    detail::Reader r(path);
    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, detail::kCkptMagic, 4) != 0)
        throw std::runtime_error("checkpoint " + path + " has bad magic (not an RGLB file)");
    const auto version = r.scalar<std::uint32_t>("version");
    if (version != detail::kCkptVersion)
        throw std::runtime_error("checkpoint " + path + " has unsupported version " +
                                 std::to_string(version));
    const auto layers = r.scalar<std::uint32_t>("layer count");
    Checkpoint c;
    c.weights.resize(layers);
    c.biases.resize(layers);
    for (std::uint32_t l = 0; l < layers; ++l) {
        const auto has = r.scalar<std::uint8_t>("has-params flag");
        if (has) {
            c.weights[l] = detail::read_tensor(r);
            c.biases[l] = detail::read_tensor(r);
        }
    }
    c.epoch = r.scalar<std::int32_t>("epoch");
    c.test_accuracy = r.scalar<float>("test accuracy");
    return c;
}

}  // namespace rglab
