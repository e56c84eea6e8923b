#pragma once

// The quantitative protocol: training-dataset occlusion (random corner
// patch), feature-map occlusion curves, background/total-variation noise
// metrics, ROAR/KAR with retraining, and the FGSM class-sensitivity probe.

#include "rglab/attribution.hpp"
#include "rglab/data.hpp"
#include "rglab/nn.hpp"

#include <algorithm>
#include <array>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace rglab {

// ---------------------------------------------------------------------------
// Training dataset occlusion (corner patch)

struct PatchRecord {
    int row0 = 0, col0 = 0, size = 10;
    Tensor values01;  // 3 x size x size, sampled uniformly from [0,1]
    std::uint64_t seed = 0;
};

inline PatchRecord make_patch(std::uint64_t seed) {
    PatchRecord p;
    p.seed = seed;
    p.values01 = Tensor({3, p.size, p.size});
    std::mt19937 rng(static_cast<std::uint32_t>(seed * 0x9e3779b9ull + 101));
    std::uniform_real_distribution<float> uni(0.0f, 1.0f);
    for (auto& v : p.values01.data) v = uni(rng);
    return p;
}

// Writes the same patch into every image (values mapped to the [-1,1] space
// the dataset lives in).
inline void apply_patch(Dataset& ds, const PatchRecord& p) {
    const int n = ds.count();
    for (int i = 0; i < n; ++i) {
        float* img = ds.images.data.data() + static_cast<std::size_t>(i) * 3072;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < p.size; ++y)
                for (int x = 0; x < p.size; ++x)
                    img[(static_cast<std::size_t>(c) * 32 + p.row0 + y) * 32 + p.col0 + x] =
                        2.0f * p.values01.data[(static_cast<std::size_t>(c) * p.size + y) * p.size + x] -
                        1.0f;
    }
}

inline PatchRecord inject_patch(Dataset& ds, std::uint64_t seed) {
    PatchRecord p = make_patch(seed);
    apply_patch(ds, p);
    return p;
}

struct PatchSum {
    float sum_abs = 0.0f;
    float fraction = 0.0f;
};

// Sum of |attribution| inside the patch region of a channel-reduced map,
// plus its share of the whole map's absolute mass.
inline PatchSum patch_attribution_sum(const Tensor& map2d, const PatchRecord& p) {
    if (map2d.rank() != 2)
        throw std::invalid_argument("patch_attribution_sum: need a channel-reduced HxW map, got " +
                                    shape_str(map2d.shape));
    const int h = map2d.dim(0), w = map2d.dim(1);
    double inside = 0.0, total = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = std::abs(map2d.data[static_cast<std::size_t>(y) * w + x]);
            total += v;
            if (y >= p.row0 && y < p.row0 + p.size && x >= p.col0 && x < p.col0 + p.size) inside += v;
        }
    PatchSum s;
    s.sum_abs = static_cast<float>(inside);
    s.fraction = total > 0.0 ? static_cast<float>(inside / total) : 0.0f;
    return s;
}

// ---------------------------------------------------------------------------
// Noise metrics

inline float background_attribution(const Tensor& map2d, const SegmentationMask& mask) {
    if (map2d.rank() != 2 || map2d.dim(0) != mask.h || map2d.dim(1) != mask.w)
        throw std::invalid_argument("background_attribution: map " + shape_str(map2d.shape) +
                                    " does not match the mask");
    double sum = 0.0;
    for (std::size_t i = 0; i < map2d.size(); ++i)
        if (!mask.cells[i]) sum += std::abs(map2d.data[i]);
    return static_cast<float>(sum);
}

// Anisotropic total variation of a channel-reduced map.
inline float total_variation(const Tensor& map2d) {
    if (map2d.rank() != 2)
        throw std::invalid_argument("total_variation: need an HxW map, got " + shape_str(map2d.shape));
    const int h = map2d.dim(0), w = map2d.dim(1);
    double tv = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float v = map2d.data[static_cast<std::size_t>(y) * w + x];
            if (y + 1 < h) tv += std::abs(map2d.data[(static_cast<std::size_t>(y) + 1) * w + x] - v);
            if (x + 1 < w) tv += std::abs(map2d.data[static_cast<std::size_t>(y) * w + x + 1] - v);
        }
    return static_cast<float>(tv);
}

// ---------------------------------------------------------------------------
// Feature map occlusion

// (class logit) - (largest logit among the other classes)
inline float logit_margin(const Tensor& logits, int cls) {
    const int k = logits.rank() == 2 ? logits.dim(1) : logits.dim(0);
    const float* row = logits.data.data();
    float other = -std::numeric_limits<float>::infinity();
    for (int j = 0; j < k; ++j)
        if (j != cls) other = std::max(other, row[j]);
    return row[cls] - other;
}

// Resume the forward pass after `layer_index` given that layer's (possibly
// modified) output.
inline Tensor forward_from(const NetworkSpec& spec, const Checkpoint& ckpt, int layer_index,
                           const Tensor& activation) {
    Tensor cur = activation;
    for (int l = layer_index + 1; l < spec.layer_count(); ++l) {
        switch (spec.layers[l].kind) {
            case LayerKind::Conv:
                cur = conv2d_forward(cur, ckpt.weights[l], ckpt.biases[l], spec.layers[l].pad);
                break;
            case LayerKind::ReLU:
                cur = relu_forward(cur);
                break;
            case LayerKind::MaxPool:
                cur = maxpool2x2_forward(cur).output;
                break;
            case LayerKind::Dense:
                cur = dense_forward(cur, ckpt.weights[l], ckpt.biases[l]);
                break;
        }
    }
    return cur;
}

enum class OccludeRegion { Foreground, Background };

struct OcclusionCurve {
    std::vector<int> x;    // number of occluded spatial sites, starting at 0
    std::vector<float> y;  // mean margin over trials
};

// Zero out spatial sites of the chosen type at one layer, one site at a time
// in a random order, and record the logit margin after each step. The mask is
// downsampled to the layer grid by nearest neighbor; occlusion clears all
// channels at a site.
inline OcclusionCurve feature_map_occlusion_curve(const NetworkSpec& spec, const Checkpoint& ckpt,
                                                  const Tensor& image, int label,
                                                  const SegmentationMask& mask, int layer_index,
                                                  OccludeRegion which, int trials = 50,
                                                  std::uint64_t seed = 0) {
    const auto shapes = spec.layer_shapes();
    if (layer_index < 0 || layer_index >= spec.layer_count())
        throw std::invalid_argument("feature_map_occlusion: layer index " +
                                    std::to_string(layer_index) + " out of range");
    if (shapes[layer_index].size() != 3)
        throw std::invalid_argument("feature_map_occlusion: layer " + std::to_string(layer_index) +
                                    " has no spatial grid");
    if (trials < 1) throw std::invalid_argument("feature_map_occlusion: trials must be >= 1");
    const int lc = shapes[layer_index][0], lh = shapes[layer_index][1], lw = shapes[layer_index][2];

    Tensor img = image;
    if (img.rank() == 3) img.shape.insert(img.shape.begin(), 1);
    ActivationTrace trace = forward_traced(spec, ckpt, img);

    // sites of the requested type on the layer grid
    std::vector<std::pair<int, int>> sites;
    for (int y = 0; y < lh; ++y)
        for (int x = 0; x < lw; ++x) {
            const int my = y * mask.h / lh, mx = x * mask.w / lw;
            const bool fg = mask.cells[static_cast<std::size_t>(my) * mask.w + mx] != 0;
            if ((which == OccludeRegion::Foreground) == fg) sites.emplace_back(y, x);
        }

    OcclusionCurve curve;
    curve.x.resize(sites.size() + 1);
    std::iota(curve.x.begin(), curve.x.end(), 0);
    std::vector<double> acc(sites.size() + 1, 0.0);
    const float base_margin = logit_margin(trace.logits(), label);
    for (int t = 0; t < trials; ++t) {
        std::vector<std::pair<int, int>> order = sites;
        std::mt19937 rng(static_cast<std::uint32_t>(seed * 0x9e3779b9ull + 7 * t + 13));
        std::shuffle(order.begin(), order.end(), rng);
        Tensor acts = trace.outputs[layer_index];
        acc[0] += base_margin;
        for (std::size_t k = 0; k < order.size(); ++k) {
            const auto [y, x] = order[k];
            for (int c = 0; c < lc; ++c)
                acts.data[(static_cast<std::size_t>(c) * lh + y) * lw + x] = 0.0f;
            acc[k + 1] += logit_margin(forward_from(spec, ckpt, layer_index, acts), label);
        }
    }
    curve.y.resize(acc.size());
    for (std::size_t i = 0; i < acc.size(); ++i)
        curve.y[i] = static_cast<float>(acc[i] / trials);
    return curve;
}

// ---------------------------------------------------------------------------
// ROAR / KAR

// Scores one image's spatial sites; higher = more important. The index is
// unique per image across the splits so stochastic estimators stay
// deterministic.
struct Estimator {
    std::string name;
    std::function<Tensor(int index, const Tensor& image)> site_scores;  // returns HxW
};

// |channel-summed attribution| with respect to the model's predicted class.
inline Estimator attribution_estimator(std::string name, const NetworkSpec& spec,
                                       const Checkpoint& ckpt, AttributionConfig config) {
    return Estimator{
        std::move(name), [&spec, &ckpt, config](int, const Tensor& image) {
            ActivationTrace tr = forward_traced(spec, ckpt, image);
            const float* row = tr.logits().data.data();
            int pred = 0;
            for (int j = 1; j < tr.logits().dim(1); ++j)
                if (row[j] > row[pred]) pred = j;
            AttributionMap map = attribute(spec, ckpt, image, pred, config);
            Tensor flat = channel_sum(map.values);
            for (auto& v : flat.data) v = std::abs(v);
            return flat;
        }};
}

inline Estimator random_estimator(std::uint64_t seed) {
    return Estimator{"random", [seed](int index, const Tensor& image) {
                         const int h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
                         Tensor scores({h, w});
                         std::mt19937 rng(static_cast<std::uint32_t>(
                             (seed * 0x9e3779b97f4a7c15ull) ^ (static_cast<std::uint64_t>(index) * 0xbf58476d1ce4e5b9ull)));
                         std::uniform_real_distribution<float> uni(0.0f, 1.0f);
                         for (auto& v : scores.data) v = uni(rng);
                         return scores;
                     }};
}

enum class RankMode { Roar, Kar };

struct RoarKarResult {
    std::string estimator;
    RankMode mode = RankMode::Roar;
    std::vector<float> fractions;
    std::vector<float> mean_accuracy;
    std::vector<std::vector<float>> per_retrain_accuracy;
    float auc = 0.0f;   // trapezoid over (fraction, accuracy), normalized by the span
    float aoc = 0.0f;   // 1 - auc
};

inline float curve_auc(const std::vector<float>& fractions, const std::vector<float>& accuracy) {
    if (fractions.size() != accuracy.size() || fractions.size() < 2)
        throw std::invalid_argument("curve_auc: need at least two (fraction, accuracy) points");
    std::vector<std::size_t> order(fractions.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return fractions[a] < fractions[b]; });
    double area = 0.0;
    for (std::size_t i = 1; i < order.size(); ++i) {
        const double dx = fractions[order[i]] - fractions[order[i - 1]];
        area += dx * 0.5 * (accuracy[order[i]] + accuracy[order[i - 1]]);
    }
    const double span = fractions[order.back()] - fractions[order.front()];
    if (span <= 0.0) throw std::invalid_argument("curve_auc: zero fraction span");
    return static_cast<float>(area / span);
}

namespace detail {

// Per-image site order, ascending by (score, site index). KAR replaces a
// prefix of this order, ROAR a suffix, so the two occlude complementary sets.
inline std::vector<int> ranked_sites(const Tensor& scores) {
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores.data[a] != scores.data[b]) return scores.data[a] < scores.data[b];
        return a < b;
    });
    return order;
}

inline std::array<float, 3> channel_means(const Dataset& ds) {
    std::array<double, 3> sum{0.0, 0.0, 0.0};
    const int n = ds.count();
    for (int i = 0; i < n; ++i) {
        const float* img = ds.images.data.data() + static_cast<std::size_t>(i) * 3072;
        for (int c = 0; c < 3; ++c)
            for (int p = 0; p < 1024; ++p) sum[c] += img[c * 1024 + p];
    }
    std::array<float, 3> mean{};
    for (int c = 0; c < 3; ++c)
        mean[c] = n ? static_cast<float>(sum[c] / (static_cast<double>(n) * 1024)) : 0.0f;
    return mean;
}

inline void replace_sites(Dataset& ds, const std::vector<std::vector<int>>& site_lists,
                          const std::array<float, 3>& fill) {
    const int n = ds.count();
    for (int i = 0; i < n; ++i) {
        float* img = ds.images.data.data() + static_cast<std::size_t>(i) * 3072;
        for (int site : site_lists[i])
            for (int c = 0; c < 3; ++c) img[c * 1024 + site] = fill[c];
    }
}

}  // namespace detail

// Replace a fraction of each image's pixels (most important for ROAR, least
// for KAR) with the per-channel training mean in both splits, retrain a fresh
// CNN per fraction and retrain seed, and report mean test accuracy.
inline RoarKarResult roar_kar(const NetworkSpec& arch, const Dataset& train_ds,
                              const Dataset& test_ds, const Estimator& estimator,
                              std::vector<float> fractions, RankMode mode, int retrains,
                              const TrainConfig& train_config) {
    for (float f : fractions)
        if (!(f > 0.0f && f < 1.0f))
            throw std::invalid_argument("roar_kar: fraction " + std::to_string(f) +
                                        " outside (0,1)");
    if (retrains < 1) throw std::invalid_argument("roar_kar: retrains must be >= 1");
    std::sort(fractions.begin(), fractions.end());

    const int n_train = train_ds.count(), n_test = test_ds.count();
    const int sites = 32 * 32;
    std::vector<std::vector<int>> train_rank(n_train), test_rank(n_test);
    for (int i = 0; i < n_train; ++i)
        train_rank[i] = detail::ranked_sites(
            estimator.site_scores(i, rglab::detail::image_slice(train_ds.images, i)));
    for (int i = 0; i < n_test; ++i)
        test_rank[i] = detail::ranked_sites(
            estimator.site_scores(n_train + i, rglab::detail::image_slice(test_ds.images, i)));

    const auto fill = detail::channel_means(train_ds);

    RoarKarResult res;
    res.estimator = estimator.name;
    res.mode = mode;
    res.fractions = fractions;
    for (float f : fractions) {
        const int k = static_cast<int>(std::lround(static_cast<double>(f) * sites));
        auto pick = [&](const std::vector<int>& rank) {
            // ascending order: KAR drops the least important prefix, ROAR the
            // most important suffix
            return mode == RankMode::Kar ? std::vector<int>(rank.begin(), rank.begin() + k)
                                         : std::vector<int>(rank.end() - k, rank.end());
        };
        std::vector<std::vector<int>> train_sites(n_train), test_sites(n_test);
        for (int i = 0; i < n_train; ++i) train_sites[i] = pick(train_rank[i]);
        for (int i = 0; i < n_test; ++i) test_sites[i] = pick(test_rank[i]);
        Dataset mod_train = train_ds, mod_test = test_ds;
        detail::replace_sites(mod_train, train_sites, fill);
        detail::replace_sites(mod_test, test_sites, fill);

        std::vector<float> accs;
        for (int r = 0; r < retrains; ++r) {
            TrainConfig cfg = train_config;
            cfg.seed = train_config.seed + 1000 * static_cast<std::uint64_t>(r) + 7;
            Checkpoint init = init_checkpoint(arch, cfg.seed * 31 + 5);
            auto result = train(arch, std::move(init), mod_train.images, mod_train.labels,
                                Tensor{}, {}, cfg);
            accs.push_back(accuracy(arch, result.checkpoint, mod_test.images, mod_test.labels));
        }
        float mean = 0.0f;
        for (float a : accs) mean += a;
        mean /= static_cast<float>(accs.size());
        res.per_retrain_accuracy.push_back(std::move(accs));
        res.mean_accuracy.push_back(mean);
    }
    res.auc = curve_auc(res.fractions, res.mean_accuracy);
    res.aoc = 1.0f - res.auc;
    return res;
}

// ---------------------------------------------------------------------------
// FGSM probe

// x' = clip(x + eps * sign(d loss / d x), -1, 1) with the true-label
// cross-entropy loss.
inline Tensor fgsm(const NetworkSpec& spec, const Checkpoint& ckpt, const Tensor& image, int label,
                   float epsilon = 0.01f) {
    Tensor img = image;
    const bool squeeze = img.rank() == 3;
    if (squeeze) img.shape.insert(img.shape.begin(), 1);
    ActivationTrace tr = forward_traced(spec, ckpt, img);
    auto sce = softmax_cross_entropy(tr.logits(), {label});
    Tensor grad = backprop_to_input(spec, ckpt, tr, sce.grad, vanilla_relu_gate());
    Tensor adv(img.shape);
    for (std::size_t i = 0; i < img.size(); ++i) {
        const float s = grad.data[i] > 0.0f ? 1.0f : (grad.data[i] < 0.0f ? -1.0f : 0.0f);
        adv.data[i] = std::clamp(img.data[i] + epsilon * s, -1.0f, 1.0f);
    }
    if (squeeze) adv.shape.erase(adv.shape.begin());
    return adv;
}

}  // namespace rglab
