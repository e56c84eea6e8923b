#include "rglab/nn.hpp"

#include "rglab/data.hpp"
#include "testutil.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

using namespace rglab;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("build_cifar_cnn matches the layer table") {
    Model m = build_cifar_cnn(42);
    const auto shapes = m.spec.layer_shapes();
    REQUIRE(shapes.back() == std::vector<int>{10});
    // conv32, conv32, pool, conv64, conv64, pool, dense256, dense10
    // with ReLU after every conv and after dense256
    REQUIRE(m.spec.layer_count() == 13);

    SECTION("parameter count equals the hand-computed table total") {
        // conv(3->32): 32*3*3*3 + 32      conv(32->32): 32*32*3*3 + 32
        // conv(32->64): 64*32*3*3 + 64    conv(64->64): 64*64*3*3 + 64
        // dense(64*8*8->256): 256*4096 + 256   dense(256->10): 10*256 + 10
        const std::size_t expected = (32 * 3 * 3 * 3 + 32) + (32 * 32 * 3 * 3 + 32) +
                                     (64 * 32 * 3 * 3 + 64) + (64 * 64 * 3 * 3 + 64) +
                                     (256 * 4096 + 256) + (10 * 256 + 10);
        REQUIRE(m.checkpoint.parameter_count() == expected);
    }
    SECTION("fixed seed reproduces weights exactly") {
        Model m2 = build_cifar_cnn(42);
        for (std::size_t l = 0; l < m.checkpoint.weights.size(); ++l)
            REQUIRE(m.checkpoint.weights[l].data == m2.checkpoint.weights[l].data);
        Model m3 = build_cifar_cnn(43);
        REQUIRE(m.checkpoint.weights[0].data != m3.checkpoint.weights[0].data);
    }
    SECTION("biases start at zero") {
        for (const auto& b : m.checkpoint.biases)
            for (float v : b.data) REQUIRE(v == 0.0f);
    }
    SECTION("logit shape for a batch of 8") {
        std::mt19937 rng(1);
        Tensor batch = random_tensor({8, 3, 32, 32}, rng);
        Tensor logits = forward(m.spec, m.checkpoint, batch);
        REQUIRE(logits.shape == std::vector<int>{8, 10});
    }
}

TEST_CASE("forward") {
    Model m = build_cifar_cnn(7);
    std::mt19937 rng(3);

    SECTION("zero-weight checkpoint yields zero logits") {
        Checkpoint zero = m.checkpoint;
        for (auto& t : zero.weights) std::fill(t.data.begin(), t.data.end(), 0.0f);
        Tensor batch = random_tensor({2, 3, 32, 32}, rng);
        Tensor logits = forward(m.spec, zero, batch);
        for (float v : logits.data) REQUIRE(v == 0.0f);
    }
    SECTION("identical images produce identical logit rows") {
        Tensor img = random_tensor({1, 3, 32, 32}, rng);
        Tensor batch({2, 3, 32, 32});
        std::copy(img.data.begin(), img.data.end(), batch.data.begin());
        std::copy(img.data.begin(), img.data.end(), batch.data.begin() + 3072);
        Tensor logits = forward(m.spec, m.checkpoint, batch);
        for (int j = 0; j < 10; ++j) REQUIRE(logits.data[j] == logits.data[10 + j]);
    }
    SECTION("batch results do not depend on batch composition") {
        Tensor batch = random_tensor({5, 3, 32, 32}, rng);
        Tensor all = forward(m.spec, m.checkpoint, batch);
        for (int i = 0; i < 5; ++i) {
            Tensor one({1, 3, 32, 32});
            std::copy_n(batch.data.begin() + static_cast<std::ptrdiff_t>(i) * 3072, 3072,
                        one.data.begin());
            Tensor logit = forward(m.spec, m.checkpoint, one);
            for (int j = 0; j < 10; ++j) REQUIRE(logit.data[j] == all.data[i * 10 + j]);
        }
    }
    SECTION("matches a layer-by-layer composition of the tensor kernels") {
        Tensor img = random_tensor({1, 3, 32, 32}, rng);
        const auto& ck = m.checkpoint;
        Tensor x = conv2d_forward(img, ck.weights[0], ck.biases[0], Padding::Same);
        x = relu_forward(x);
        x = conv2d_forward(x, ck.weights[2], ck.biases[2], Padding::Same);
        x = relu_forward(x);
        x = maxpool2x2_forward(x).output;
        x = conv2d_forward(x, ck.weights[5], ck.biases[5], Padding::Same);
        x = relu_forward(x);
        x = conv2d_forward(x, ck.weights[7], ck.biases[7], Padding::Same);
        x = relu_forward(x);
        x = maxpool2x2_forward(x).output;
        x = dense_forward(x, ck.weights[10], ck.biases[10]);
        x = relu_forward(x);
        x = dense_forward(x, ck.weights[12], ck.biases[12]);

        Tensor logits = forward(m.spec, m.checkpoint, img);
        REQUIRE(max_abs_diff(logits, x) == 0.0);
    }
    SECTION("shape and range violations are rejected") {
        REQUIRE_THROWS_WITH(forward(m.spec, m.checkpoint, Tensor({1, 3, 16, 16})),
                            Catch::Matchers::ContainsSubstring("does not match"));
        Tensor bad = Tensor::full({1, 3, 32, 32}, 2.0f);
        REQUIRE_THROWS_WITH(forward(m.spec, m.checkpoint, bad),
                            Catch::Matchers::ContainsSubstring("outside [-1,1]"));
    }
}

TEST_CASE("activation trace invariants") {
    Model m = build_cifar_cnn(11);
    std::mt19937 rng(5);
    Tensor img = random_tensor({1, 3, 32, 32}, rng);
    ActivationTrace tr = forward_traced(m.spec, m.checkpoint, img);
    REQUIRE(tr.outputs.size() == m.spec.layers.size());
    for (int l = 0; l < m.spec.layer_count(); ++l) {
        if (m.spec.layers[l].kind != LayerKind::ReLU) continue;
        const Tensor& z = tr.outputs[l - 1];
        const Tensor& a = tr.outputs[l];
        REQUIRE(a.same_shape(z));
        for (std::size_t i = 0; i < z.size(); ++i)
            REQUIRE(a.data[i] == std::max(z.data[i], 0.0f));
    }
}

TEST_CASE("training mechanics") {
    Dataset ds = synthetic_dataset(40, 123);
    Model m = build_cifar_cnn(9);

    SECTION("lr = 0 leaves weights unchanged") {
        TrainConfig cfg;
        cfg.epochs = 1;
        cfg.batch_size = 16;
        cfg.lr = 0.0f;
        cfg.seed = 1;
        auto res = train(m.spec, m.checkpoint, ds.images, ds.labels, Tensor{}, {}, cfg);
        for (std::size_t l = 0; l < m.checkpoint.weights.size(); ++l)
            REQUIRE(res.checkpoint.weights[l].data == m.checkpoint.weights[l].data);
    }
    SECTION("one small Adam step decreases the example's loss") {
        Tensor img = dataset_subset(ds, 1).images;
        std::vector<int> label{ds.labels[0]};
        auto before = softmax_cross_entropy(forward(m.spec, m.checkpoint, img), label);
        TrainConfig cfg;
        cfg.lr = 1e-4f;
        Checkpoint ck = m.checkpoint;
        AdamState adam(ck);
        auto [loss, grads] = batch_gradients(m.spec, ck, img, {label[0]}, {0});
        adam.step(ck, grads, cfg);
        auto after = softmax_cross_entropy(forward(m.spec, ck, img), label);
        REQUIRE(after.loss < before.loss);
    }
    SECTION("training is deterministic for a fixed seed") {
        TrainConfig cfg;
        cfg.epochs = 1;
        cfg.batch_size = 20;
        cfg.seed = 77;
        auto r1 = train(m.spec, m.checkpoint, ds.images, ds.labels, Tensor{}, {}, cfg);
        auto r2 = train(m.spec, m.checkpoint, ds.images, ds.labels, Tensor{}, {}, cfg);
        for (std::size_t l = 0; l < r1.checkpoint.weights.size(); ++l)
            REQUIRE(r1.checkpoint.weights[l].data == r2.checkpoint.weights[l].data);
    }
    SECTION("empty dataset is rejected") {
        TrainConfig cfg;
        REQUIRE_THROWS_AS(train(m.spec, m.checkpoint, Tensor{}, {}, Tensor{}, {}, cfg),
                          std::invalid_argument);
    }
}

TEST_CASE("memorizes a small subset", "[slow]") {
    Dataset ds = synthetic_dataset(200, 321);
    Model m = build_cifar_cnn(13);
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 50;
    cfg.seed = 5;
    auto res = train(m.spec, m.checkpoint, ds.images, ds.labels, Tensor{}, {}, cfg);
    REQUIRE(accuracy(m.spec, res.checkpoint, ds.images, ds.labels) >= 0.95f);
}

TEST_CASE("checkpoint round trip") {
    Model m = build_cifar_cnn(21);
    m.checkpoint.epoch = 4;
    m.checkpoint.test_accuracy = 0.625f;
    const std::string path = temp_path("rglab_ckpt_test.rglb");

    SECTION("save then load is bitwise identical") {
        save_weights(m.checkpoint, path);
        Checkpoint loaded = load_weights(path);
        REQUIRE(loaded.weights.size() == m.checkpoint.weights.size());
        for (std::size_t l = 0; l < loaded.weights.size(); ++l) {
            REQUIRE(loaded.weights[l].shape == m.checkpoint.weights[l].shape);
            REQUIRE(loaded.weights[l].data == m.checkpoint.weights[l].data);
            REQUIRE(loaded.biases[l].data == m.checkpoint.biases[l].data);
        }
        REQUIRE(loaded.epoch == 4);
        REQUIRE(loaded.test_accuracy == 0.625f);
    }
    SECTION("truncated file reports the failure offset") {
        save_weights(m.checkpoint, path);
        const auto full = std::filesystem::file_size(path);
        std::filesystem::resize_file(path, full - 1);
        REQUIRE_THROWS_WITH(load_weights(path), Catch::Matchers::ContainsSubstring("truncated at offset"));
        std::filesystem::resize_file(path, 10);
        REQUIRE_THROWS_WITH(load_weights(path), Catch::Matchers::ContainsSubstring("truncated"));
    }
    SECTION("wrong magic is a format error") {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "NOPEnope";
        out.close();
        REQUIRE_THROWS_WITH(load_weights(path), Catch::Matchers::ContainsSubstring("bad magic"));
    }
    std::filesystem::remove(path);
}
