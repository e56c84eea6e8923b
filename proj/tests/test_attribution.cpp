#include "rglab/attribution.hpp"

#include "testutil.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>

using namespace rglab;
using testutil::finite_diff;
using testutil::max_abs_diff;
using testutil::max_rel_err;
using testutil::random_tensor;

namespace {

constexpr float kInf = std::numeric_limits<float>::infinity();

// Random small ReLU net: 2-4 affine layers, widths <= 16, optionally starting
// with a conv + pool block. Inputs are 1-channel 4x4 images.
Model random_small_net(std::mt19937& rng, bool with_conv) {
    NetworkSpec s;
    s.in_channels = 1;
    s.in_h = 4;
    s.in_w = 4;
    if (with_conv) {
        std::uniform_int_distribution<int> ch(2, 4);
        s.layers.push_back(LayerDesc::conv(ch(rng)));
        s.layers.push_back(LayerDesc::relu());
        s.layers.push_back(LayerDesc::maxpool());
    }
    std::uniform_int_distribution<int> hidden(1, 2), width(4, 16);
    const int n_hidden = hidden(rng);
    for (int i = 0; i < n_hidden; ++i) {
        s.layers.push_back(LayerDesc::dense(width(rng)));
        s.layers.push_back(LayerDesc::relu());
    }
    s.layers.push_back(LayerDesc::dense(5));
    return Model{s, init_checkpoint(s, rng())};
}

AttributionConfig bare_config(Method m) {
    AttributionConfig cfg;
    cfg.method = m;
    cfg.use_padding_trick = false;
    cfg.use_prr = false;
    cfg.final_zero_threshold = false;
    return cfg;
}

}  // namespace

TEST_CASE("rectgrad_gate") {
    Tensor a({2}, {1.0f, 2.0f});
    Tensor R({2}, {3.0f, -1.0f});
    SECTION("tau = 0 keeps positive products") {
        Tensor out = rectgrad_gate(a, R, 0.0f);
        REQUIRE(out.data == std::vector<float>{3.0f, 0.0f});
    }
    SECTION("tau from a percentile of the scores") {
        // scores of [3, -2]: 50th percentile = 0.5
        const float tau = percentile(std::vector<float>{3.0f, -2.0f}, 50.0);
        REQUIRE(tau == 0.5f);
        Tensor out = rectgrad_gate(a, R, tau);
        REQUIRE(out.data == std::vector<float>{3.0f, 0.0f});
    }
    SECTION("tau = +inf blocks everything") {
        Tensor out = rectgrad_gate(a, R, kInf);
        REQUIRE(out.data == std::vector<float>{0.0f, 0.0f});
    }
    SECTION("shape mismatch rejected") {
        REQUIRE_THROWS_AS(rectgrad_gate(Tensor({3}), R, 0.0f), std::invalid_argument);
    }
}

TEST_CASE("deconv and guided gates") {
    REQUIRE(deconv_gate(Tensor({2}, {2.0f, -3.0f})).data == std::vector<float>{2.0f, 0.0f});
    REQUIRE(guided_gate(Tensor({2}, {-1.0f, 2.0f}), Tensor({2}, {5.0f, 4.0f})).data ==
            std::vector<float>{0.0f, 4.0f});
    // strict > on R: zero gradient does not pass
    REQUIRE(guided_gate(Tensor({2}, {1.0f, 1.0f}), Tensor({2}, {-1.0f, 0.0f})).data ==
            std::vector<float>{0.0f, 0.0f});
}

TEST_CASE("propagation rule candidates pick different units on the toy example") {
    // gradients (1, 10, -100, 1000), activations (3, 2, 1, 0), q = 74 keeps
    // the single top unit by each rule's own criterion
    Tensor a({4}, {3.0f, 2.0f, 1.0f, 0.0f});
    Tensor R({4}, {1.0f, 10.0f, -100.0f, 1000.0f});
    auto survivors = [](const Tensor& gated) {
        std::vector<int> idx;
        for (int i = 0; i < 4; ++i)
            if (gated.data[i] != 0.0f) idx.push_back(i);
        return idx;
    };
    auto run = [&](Rule rule) {
        const auto scores = rule_criterion(rule, a, R);
        const float tau = percentile(scores, 74.0);
        return survivors(rule_gate(rule, a, R, tau));
    };
    REQUIRE(run(Rule::PR1) == std::vector<int>{1});  // largest signed contribution a*R = 20
    REQUIRE(run(Rule::PR2) == std::vector<int>{2});  // largest |a*R| = 100
    REQUIRE(run(Rule::PR3) == std::vector<int>{0});  // largest activation
    REQUIRE(run(Rule::PR4) == std::vector<int>{3});  // largest gradient
}

TEST_CASE("rule gates degenerate cases") {
    std::mt19937 rng(3);
    Tensor a = random_tensor({10}, rng, 0.0f, 2.0f);
    Tensor R = random_tensor({10}, rng);
    SECTION("tau = -inf is the identity") {
        for (Rule rule : {Rule::PR1, Rule::PR2, Rule::PR3, Rule::PR4})
            REQUIRE(rule_gate(rule, a, R, -kInf).data == R.data);
    }
    SECTION("PR2 equals PR1 when all products are nonnegative") {
        Tensor rp = R;
        for (auto& v : rp.data) v = std::abs(v);
        REQUIRE(rule_gate(Rule::PR1, a, rp, 0.3f).data == rule_gate(Rule::PR2, a, rp, 0.3f).data);
    }
    SECTION("the modified rule is not a pointwise gate") {
        REQUIRE_THROWS_AS(rule_gate(Rule::RectGradMod, a, R, 0.0f), std::invalid_argument);
    }
}

TEST_CASE("proportional redistribution rule") {
    SECTION("splits proportional to activations") {
        Tensor acts({1, 1, 2, 2}, {1.0f, 3.0f, 0.0f, 0.0f});
        Tensor g({1, 1, 1, 1}, {4.0f});
        Tensor out = prr_pool_backward(g, acts);
        REQUIRE(out.data == std::vector<float>{1.0f, 3.0f, 0.0f, 0.0f});
    }
    SECTION("all-zero window propagates nothing") {
        Tensor acts = Tensor::zeros({1, 1, 2, 2});
        Tensor g({1, 1, 1, 1}, {4.0f});
        Tensor out = prr_pool_backward(g, acts);
        for (float v : out.data) REQUIRE(v == 0.0f);
    }
    SECTION("conserves the gradient per window") {
        std::mt19937 rng(5);
        Tensor acts = random_tensor({2, 3, 6, 6}, rng, 0.0f, 1.0f);
        Tensor g = random_tensor({2, 3, 3, 3}, rng);
        Tensor out = prr_pool_backward(g, acts);
        std::size_t o = 0;
        for (int n = 0; n < 2; ++n)
            for (int c = 0; c < 3; ++c)
                for (int oh = 0; oh < 3; ++oh)
                    for (int ow = 0; ow < 3; ++ow) {
                        double sum = 0.0;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                sum += out.at4(n, c, 2 * oh + dy, 2 * ow + dx);
                        REQUIRE(std::abs(sum - g.data[o++]) < 1e-6);
                    }
    }
    SECTION("shape mismatch rejected") {
        REQUIRE_THROWS_AS(prr_pool_backward(Tensor({1, 1, 2, 2}), Tensor({1, 1, 2, 2})),
                          std::invalid_argument);
    }
}

TEST_CASE("padding_mask") {
    SECTION("width 1 keeps only the inner square") {
        Tensor g = Tensor::full({1, 1, 4, 4}, 1.0f);
        Tensor out = padding_mask(g, 1);
        int kept = 0;
        for (float v : out.data) kept += v == 1.0f;
        REQUIRE(kept == 4);
        REQUIRE(out.at4(0, 0, 1, 1) == 1.0f);
        REQUIRE(out.at4(0, 0, 0, 0) == 0.0f);
    }
    SECTION("width 0 is the identity") {
        std::mt19937 rng(7);
        Tensor g = random_tensor({1, 2, 3, 3}, rng);
        REQUIRE(padding_mask(g, 0).data == g.data);
    }
    SECTION("a map entirely inside the border goes to zero") {
        Tensor g = Tensor::full({1, 1, 4, 4}, 2.0f);
        // width 1 on a 2x2 map would cover everything: rejected instead
        REQUIRE_THROWS_AS(padding_mask(Tensor({1, 1, 2, 2}), 1), std::invalid_argument);
        // 4x4 with only border support: mask zeroes all of it
        for (int y = 1; y < 3; ++y)
            for (int x = 1; x < 3; ++x) g.at4(0, 0, y, x) = 0.0f;
        Tensor out = padding_mask(g, 1);
        for (float v : out.data) REQUIRE(v == 0.0f);
    }
}

TEST_CASE("final_threshold") {
    SECTION("drops entries at or below the percentile") {
        Tensor m({4}, {1.0f, 2.0f, 3.0f, 4.0f});
        // 50th percentile of [1,2,3,4] is 2.5
        REQUIRE(final_threshold(m, 50.0f).data == std::vector<float>{0.0f, 0.0f, 3.0f, 4.0f});
    }
    SECTION("q = 100 zeroes everything") {
        Tensor m({3}, {1.0f, 5.0f, 2.0f});
        for (float v : final_threshold(m, 100.0f).data) REQUIRE(v == 0.0f);
    }
    SECTION("q = 0 zeroes only the minima") {
        Tensor m({4}, {1.0f, 1.0f, 3.0f, 4.0f});
        REQUIRE(final_threshold(m, 0.0f).data == std::vector<float>{0.0f, 0.0f, 3.0f, 4.0f});
    }
}

TEST_CASE("saliency of a linear model is the class weight row") {
    NetworkSpec s;
    s.in_channels = 1;
    s.in_h = 2;
    s.in_w = 2;
    s.layers = {LayerDesc::dense(3)};
    std::mt19937 rng(11);
    Checkpoint ck = init_checkpoint(s, 13);
    Tensor img = random_tensor({1, 1, 2, 2}, rng);
    for (int cls = 0; cls < 3; ++cls) {
        AttributionMap map = attribute(s, ck, img, cls, bare_config(Method::Saliency));
        for (int j = 0; j < 4; ++j)
            REQUIRE(map.values.data[j] == ck.weights[0].data[cls * 4 + j]);
    }
}

TEST_CASE("saliency matches finite differences of the class logit") {
    // FD disagrees at isolated pixels whose perturbation crosses a ReLU or
    // pooling kink; nearly all pixels must agree.
    std::mt19937 rng(17);
    int good = 0, total = 0;
    for (int trial = 0; trial < 4; ++trial) {
        Model m = random_small_net(rng, trial >= 2);
        Tensor img = random_tensor({1, 1, 4, 4}, rng);
        const int cls = 2;
        auto logit = [&](const Tensor& x) {
            return static_cast<double>(forward_traced(m.spec, m.checkpoint, x).logits().data[cls]);
        };
        AttributionMap map = attribute(m.spec, m.checkpoint, img, cls, bare_config(Method::Saliency));
        Tensor fd = finite_diff(logit, img, 1e-2f);
        float scale = 0.0f;
        for (float v : map.values.data) scale = std::max(scale, std::abs(v));
        const float floor_ = std::max(0.05f * scale, 1e-3f);
        for (std::size_t i = 0; i < fd.size(); ++i) {
            good += testutil::rel_close(map.values.data[i], fd.data[i], 1e-2f, floor_);
            ++total;
        }
    }
    REQUIRE(good >= static_cast<int>(0.95 * total));
}

TEST_CASE("Proposition 2: rectgrad at tau=0 equals guided bp * input after final zero threshold") {
    std::mt19937 rng(23);
    for (int net = 0; net < 20; ++net) {
        Model m = random_small_net(rng, net % 3 == 0);
        for (int rep = 0; rep < 10; ++rep) {
            Tensor img = random_tensor({1, 1, 4, 4}, rng);
            std::uniform_int_distribution<int> cls(0, 4);
            const int c = cls(rng);

            AttributionConfig rect = bare_config(Method::RectGrad);
            rect.q = 0.0f;  // constant tau = 0
            rect.final_zero_threshold = true;
            AttributionMap lhs = attribute(m.spec, m.checkpoint, img, c, rect);

            AttributionConfig guided = bare_config(Method::GuidedBP);
            guided.final_zero_threshold = true;
            AttributionMap rhs = attribute(m.spec, m.checkpoint, img, c, guided);

            REQUIRE(max_abs_diff(lhs.values, rhs.values) <= 1e-6);
        }
    }
}

TEST_CASE("Proposition 1: deconv * input equals the epsilon-shifted rule after final zero threshold") {
    constexpr float kEps = 1e-6f;
    std::mt19937 rng(29);
    for (int net = 0; net < 20; ++net) {
        Model m = random_small_net(rng, net % 4 == 0);
        for (int rep = 0; rep < 10; ++rep) {
            Tensor img = random_tensor({1, 1, 4, 4}, rng);
            const int c = 1;

            AttributionConfig deconv = bare_config(Method::Deconv);
            deconv.final_zero_threshold = true;
            AttributionMap lhs = attribute(m.spec, m.checkpoint, img, c, deconv);

            // modified rule: I((a + eps) * R > 0) * R at every gate
            ReluGate eps_gate = [](int, const Tensor&, const Tensor& a, const Tensor& R) {
                Tensor out(R.shape);
                for (std::size_t i = 0; i < R.size(); ++i)
                    out.data[i] = (a.data[i] + kEps) * R.data[i] > 0.0f ? R.data[i] : 0.0f;
                return out;
            };
            ActivationTrace tr = forward_traced(m.spec, m.checkpoint, img);
            Tensor seed = Tensor::zeros(tr.logits().shape);
            seed.data[c] = 1.0f;
            Tensor R = backprop_to_input(m.spec, m.checkpoint, tr, seed, eps_gate);
            Tensor rhs = apply_final_zero_threshold(img, R);
            rhs.shape = lhs.values.shape;

            REQUIRE(max_abs_diff(lhs.values, rhs) <= 1e-6);
        }
    }
}

TEST_CASE("percentile plateau: maps are identical while the zero fraction dominates") {
    // Build a net whose importance scores are >= 70% exactly zero and
    // positive otherwise: nonnegative weights, 3/4 of the hidden biases very
    // negative, positive inputs.
    NetworkSpec s;
    s.in_channels = 1;
    s.in_h = 4;
    s.in_w = 4;
    s.layers = {LayerDesc::dense(16), LayerDesc::relu(), LayerDesc::dense(16), LayerDesc::relu(),
                LayerDesc::dense(4)};
    Checkpoint ck = init_checkpoint(s, 31);
    std::mt19937 rng(37);
    std::uniform_real_distribution<float> pos(0.05f, 0.5f);
    for (auto& t : ck.weights)
        for (auto& v : t.data) v = pos(rng);
    for (int l : {0, 2}) {
        for (int u = 0; u < 16; ++u) ck.biases[l].data[u] = u < 12 ? -100.0f : 0.1f;
    }
    Tensor img = random_tensor({1, 1, 4, 4}, rng, 0.1f, 1.0f);

    // sanity: at each ReLU layer at least 70% of importance scores are zero
    ActivationTrace tr = forward_traced(s, ck, img);
    for (int l : {1, 3}) {
        int zeros = 0;
        for (float v : tr.outputs[l].data) zeros += v == 0.0f;
        REQUIRE(zeros >= 12);
    }

    std::vector<Tensor> maps;
    for (float q : {0.0f, 30.0f, 50.0f, 70.0f}) {
        AttributionConfig cfg = bare_config(Method::RectGrad);
        cfg.q = q;
        cfg.final_zero_threshold = true;
        maps.push_back(attribute(s, ck, img, 0, cfg).values);
    }
    for (std::size_t i = 1; i < maps.size(); ++i) REQUIRE(maps[i].data == maps[0].data);
    bool any_nonzero = false;
    for (float v : maps[0].data) any_nonzero |= v != 0.0f;
    REQUIRE(any_nonzero);
}

TEST_CASE("gate sparsity bound after percentile thresholding") {
    std::mt19937 rng(41);
    std::uniform_real_distribution<float> act(0.0f, 1.0f);
    std::uniform_int_distribution<int> quant(-4, 4);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 50;
        Tensor a({n}), R({n});
        for (int i = 0; i < n; ++i) {
            a.data[i] = act(rng);
            R.data[i] = static_cast<float>(quant(rng));  // generates ties
        }
        for (float q : {20.0f, 50.0f, 80.0f, 98.0f}) {
            std::vector<float> scores(n);
            for (int i = 0; i < n; ++i) scores[i] = a.data[i] * R.data[i];
            const float tau = percentile(scores, q);
            Tensor gated = rectgrad_gate(a, R, tau);
            int survivors = 0, ties = 0;
            for (int i = 0; i < n; ++i) {
                survivors += gated.data[i] != 0.0f || (R.data[i] != 0.0f && scores[i] > tau);
                ties += scores[i] == tau;
            }
            const int bound = static_cast<int>(std::ceil((100.0 - q) / 100.0 * n)) + ties;
            REQUIRE(survivors <= bound);
        }
    }
}

TEST_CASE("smoothgrad") {
    std::mt19937 rng(43);
    Model m = random_small_net(rng, false);
    Tensor img = random_tensor({1, 1, 4, 4}, rng);

    SECTION("sigma = 0 equals saliency for any n") {
        AttributionMap sal = attribute(m.spec, m.checkpoint, img, 0, bare_config(Method::Saliency));
        AttributionMap sg = smoothgrad(m.spec, m.checkpoint, img, 0, 7, 0.0f);
        REQUIRE(sg.values.data == sal.values.data);
    }
    SECTION("n = 1 with a fixed seed is the saliency of the one perturbed image") {
        const std::uint64_t seed = 99;
        AttributionMap sg = smoothgrad(m.spec, m.checkpoint, img, 0, 1, 0.25f, seed);
        // replicate the internal noise stream
        std::mt19937 noise_rng(static_cast<std::uint32_t>(seed * 0x9e3779b9ull + 3));
        std::normal_distribution<float> noise(0.0f, 1.0f);
        Tensor noisy = img;
        for (auto& v : noisy.data) v += 0.25f * noise(noise_rng);
        AttributionMap sal = attribute(m.spec, m.checkpoint, noisy, 0, bare_config(Method::Saliency));
        REQUIRE(sg.values.data == sal.values.data);
    }
    SECTION("linear model: equals saliency for any sigma and n") {
        NetworkSpec s;
        s.in_channels = 1;
        s.in_h = 2;
        s.in_w = 2;
        s.layers = {LayerDesc::dense(3)};
        Checkpoint ck = init_checkpoint(s, 5);
        Tensor x = random_tensor({1, 1, 2, 2}, rng);
        AttributionMap sal = attribute(s, ck, x, 1, bare_config(Method::Saliency));
        AttributionMap sg = smoothgrad(s, ck, x, 1, 9, 0.5f, 7);
        REQUIRE(max_abs_diff(sg.values, sal.values) < 1e-6);
    }
}

TEST_CASE("integrated gradients") {
    std::mt19937 rng(47);
    SECTION("baseline equal to the input gives zeros") {
        Model m = random_small_net(rng, false);
        Tensor img = random_tensor({1, 1, 4, 4}, rng);
        AttributionMap map = integrated_gradients(m.spec, m.checkpoint, img, 0, 16, img);
        for (float v : map.values.data) REQUIRE(v == 0.0f);
    }
    SECTION("linear model: equals grad * input for any step count") {
        NetworkSpec s;
        s.in_channels = 1;
        s.in_h = 2;
        s.in_w = 2;
        s.layers = {LayerDesc::dense(3)};
        Checkpoint ck = init_checkpoint(s, 7);
        Tensor x = random_tensor({1, 1, 2, 2}, rng);
        AttributionMap gi = attribute(s, ck, x, 2, bare_config(Method::GradInput));
        for (int steps : {1, 4, 33}) {
            AttributionMap ig = integrated_gradients(s, ck, x, 2, steps);
            REQUIRE(max_abs_diff(ig.values, gi.values) < 1e-6);
        }
    }
    SECTION("completeness gap shrinks with more steps") {
        Model m = random_small_net(rng, false);
        Tensor img = random_tensor({1, 1, 4, 4}, rng);
        const int cls = 3;
        auto logit_at = [&](const Tensor& x) {
            return forward_traced(m.spec, m.checkpoint, x).logits().data[cls];
        };
        const double span = static_cast<double>(logit_at(img)) -
                            static_cast<double>(logit_at(Tensor::zeros(img.shape)));
        auto gap = [&](int steps) {
            AttributionMap map = integrated_gradients(m.spec, m.checkpoint, img, cls, steps);
            double total = 0.0;
            for (float v : map.values.data) total += v;
            return std::abs(total - span);
        };
        const double g512 = gap(512), g1024 = gap(1024);
        REQUIRE(g1024 <= g512 + 1e-6);
        REQUIRE(g1024 < 0.05 * std::max(1.0, std::abs(span)));
    }
}

TEST_CASE("rectgradmod applies PR1 at the top gate and PR2 below") {
    std::mt19937 rng(53);
    NetworkSpec s;
    s.in_channels = 1;
    s.in_h = 4;
    s.in_w = 4;
    s.layers = {LayerDesc::dense(12), LayerDesc::relu(), LayerDesc::dense(12), LayerDesc::relu(),
                LayerDesc::dense(4)};
    Checkpoint ck = init_checkpoint(s, 59);
    Tensor img = random_tensor({1, 1, 4, 4}, rng);
    const float q = 60.0f;

    AttributionConfig cfg = bare_config(Method::RectGrad);
    cfg.rule = Rule::RectGradMod;
    cfg.q = q;
    AttributionMap got = attribute(s, ck, img, 0, cfg);

    // manual schedule: PR1 at layer 3 (topmost ReLU), PR2 at layer 1
    ReluGate manual = [&](int layer, const Tensor&, const Tensor& a, const Tensor& R) {
        const Rule rule = layer == 3 ? Rule::PR1 : Rule::PR2;
        const auto scores = rule_criterion(rule, a, R);
        return rule_gate(rule, a, R, percentile(scores, q));
    };
    ActivationTrace tr = forward_traced(s, ck, img);
    Tensor seed = Tensor::zeros(tr.logits().shape);
    seed.data[0] = 1.0f;
    Tensor R = backprop_to_input(s, ck, tr, seed, manual);
    Tensor want(got.values.shape);
    for (std::size_t i = 0; i < want.size(); ++i) want.data[i] = img.data[i] * R.data[i];
    REQUIRE(got.values.data == want.data);
}

TEST_CASE("padding trick zeroes the map border of a same-padded conv net") {
    std::mt19937 rng(61);
    NetworkSpec s;
    s.in_channels = 2;
    s.in_h = 8;
    s.in_w = 8;
    s.layers = {LayerDesc::conv(4), LayerDesc::relu(), LayerDesc::maxpool(), LayerDesc::dense(6),
                LayerDesc::relu(), LayerDesc::dense(3)};
    Checkpoint ck = init_checkpoint(s, 67);
    Tensor img = random_tensor({1, 2, 8, 8}, rng);

    AttributionConfig with = bare_config(Method::RectGrad);
    with.q = 50.0f;
    with.use_padding_trick = true;
    AttributionMap masked = attribute(s, ck, img, 0, with);
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                if (y == 0 || y == 7 || x == 0 || x == 7)
                    REQUIRE(masked.values.data[(static_cast<std::size_t>(c) * 8 + y) * 8 + x] == 0.0f);

    AttributionConfig without = with;
    without.use_padding_trick = false;
    AttributionMap open = attribute(s, ck, img, 0, without);
    bool border_nonzero = false;
    for (int c = 0; c < 2; ++c)
        for (int x = 0; x < 8; ++x)
            border_nonzero |= open.values.data[static_cast<std::size_t>(c) * 64 + x] != 0.0f;
    REQUIRE(border_nonzero);
}

TEST_CASE("attribute error handling") {
    Model m = build_cifar_cnn(3);
    Tensor img = Tensor::zeros({3, 32, 32});
    SECTION("invalid class index") {
        REQUIRE_THROWS_WITH(attribute(m.spec, m.checkpoint, img, 10, AttributionConfig{}),
                            Catch::Matchers::ContainsSubstring("class index"));
        REQUIRE_THROWS_AS(attribute(m.spec, m.checkpoint, img, -1, AttributionConfig{}),
                          std::invalid_argument);
    }
    SECTION("wrong image shape") {
        REQUIRE_THROWS_AS(attribute(m.spec, m.checkpoint, Tensor({3, 16, 16}), 0, AttributionConfig{}),
                          std::invalid_argument);
    }
    SECTION("config validation") {
        AttributionConfig bad;
        bad.q = 101.0f;
        REQUIRE_THROWS_AS(attribute(m.spec, m.checkpoint, img, 0, bad), std::invalid_argument);
        bad = AttributionConfig{};
        bad.smoothgrad_n = 0;
        bad.method = Method::SmoothGrad;
        REQUIRE_THROWS_AS(attribute(m.spec, m.checkpoint, img, 0, bad), std::invalid_argument);
    }
    SECTION("method names round-trip and unknown names are rejected") {
        for (const auto& [method, name] : method_names()) REQUIRE(parse_method(name) == method);
        REQUIRE_THROWS_WITH(parse_method("deeplift"), Catch::Matchers::ContainsSubstring("valid:"));
        REQUIRE_THROWS_AS(parse_rule("pr9"), std::invalid_argument);
    }
}

TEST_CASE("rectgrad without the final rule returns signed input * gradient") {
    std::mt19937 rng(71);
    Model m = random_small_net(rng, false);
    Tensor img = random_tensor({1, 1, 4, 4}, rng);
    AttributionConfig cfg = bare_config(Method::RectGrad);
    cfg.q = 50.0f;
    AttributionMap map = attribute(m.spec, m.checkpoint, img, 0, cfg);
    bool has_negative = false;
    for (float v : map.values.data) has_negative |= v < 0.0f;
    AttributionConfig cfg_thresh = cfg;
    cfg_thresh.final_zero_threshold = true;
    AttributionMap clipped = attribute(m.spec, m.checkpoint, img, 0, cfg_thresh);
    for (float v : clipped.values.data) REQUIRE(v >= 0.0f);
    // the signed map must carry at least as much mass
    double mass_signed = 0.0, mass_clipped = 0.0;
    for (float v : map.values.data) mass_signed += std::abs(v);
    for (float v : clipped.values.data) mass_clipped += std::abs(v);
    REQUIRE(mass_clipped <= mass_signed + 1e-6);
    (void)has_negative;
}
