#include <algorithm>
#include <cstdint>
#include <doctest.h>
#include <stdexcept>

#include <cmath>
#include <vector>

#include "keymem/classifier.hpp"
#include "keymem/gradcheck.hpp"
#include "keymem/rng.hpp"

using namespace keymem;

namespace {

HeadConfig small_config() {
    HeadConfig c;
    c.d_model = 3;
    c.n_probe_max = 2;
    c.hidden_dim = 5;
    c.activation = Activation::kGelu;
    return c;
}

Vec random_features(const HeadConfig& c, Rng& rng) {
    Vec f(c.input_dim());
    for (double& v : f) v = rng.normal();
    return f;
}

FusedKnowledge fused_of(const Vec& doc, const Vec& graph) { return fuse(doc, graph); }

}  // namespace

TEST_CASE("symmetric initialization predicts exactly one half") {
    Rng rng(70);
    HeadConfig cfg = small_config();
    HeadParams head = init_head(cfg, rng);
    for (int trial = 0; trial < 10; ++trial) {
        Vec f = random_features(cfg, rng);
        CHECK(head_predict(head, f) == 0.5);
        CHECK(head_loss(head, f, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
        CHECK(head_loss(head, f, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    }

    HeadParams live = init_head(cfg, rng, false);
    bool moved = false;
    for (int trial = 0; trial < 10 && !moved; ++trial) {
        moved = head_predict(live, random_features(cfg, rng)) != 0.5;
    }
    CHECK(moved);
}

TEST_CASE("loss agrees with a direct softmax cross-entropy computation") {
    Rng rng(71);
    HeadConfig cfg = small_config();
    HeadParams head = init_head(cfg, rng, false);
    for (int trial = 0; trial < 20; ++trial) {
        Vec f = random_features(cfg, rng);
        Vec logits = head_logits(head, f);
        const int label = trial % 2;
        const double z = std::exp(logits[0]) + std::exp(logits[1]);
        const double expected = -std::log(std::exp(logits[label]) / z);
        CHECK(head_loss(head, f, label) == doctest::Approx(expected).epsilon(1e-12));
        CHECK(head_predict(head, f) == doctest::Approx(std::exp(logits[1]) / z).epsilon(1e-12));
    }
    Vec f = random_features(cfg, rng);
    CHECK_THROWS_AS(head_loss(head, f, 2), std::invalid_argument);
    CHECK_THROWS_AS(head_loss(head, f, -1), std::invalid_argument);
}

TEST_CASE("head gradients match finite differences") {
    Rng rng(72);
    HeadConfig cfg = small_config();
    HeadParams head = init_head(cfg, rng, false);
    Vec f = random_features(cfg, rng);
    const int label = 1;

    HeadCache cache;
    head_loss(head, f, label, &cache);
    HeadParams grads = zero_like(head);
    Vec d_features = head_loss_backward(head, cache, label, &grads);

    SUBCASE("parameter tensors") {
        auto param_tensors = head_refs(head);
        auto grad_tensors = head_refs(grads);
        for (std::size_t t = 0; t < param_tensors.size(); ++t) {
            INFO("tensor ", param_tensors[t].name);
            Vec point(param_tensors[t].data, param_tensors[t].data + param_tensors[t].size);
            Vec analytic(grad_tensors[t].data, grad_tensors[t].data + grad_tensors[t].size);
            auto f_loss = [&, t](const Vec& x) {
                HeadParams cand = head;
                auto refs = head_refs(cand);
                std::copy(x.begin(), x.end(), refs[t].data);
                return head_loss(cand, f, label);
            };
            CHECK(finite_diff_check(f_loss, analytic, point) < 1e-6);
        }
    }
    SUBCASE("feature vector") {
        auto f_loss = [&](const Vec& x) { return head_loss(head, x, label); };
        CHECK(finite_diff_check(f_loss, d_features, f) < 1e-6);
    }
}

TEST_CASE("feature assembly mean-pools valid rows and lays out fused slots") {
    Matrix h(4, 3);
    // Rows: [1,2,3], [10,20,30], [100,200,300], [5,5,5]; mask drops row 2.
    double vals[4][3] = {{1, 2, 3}, {10, 20, 30}, {100, 200, 300}, {5, 5, 5}};
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 3; ++c) h.at(r, c) = vals[r][c];
    }
    std::vector<std::uint8_t> mask = {1, 1, 0, 1};

    Vec doc1 = {1.0, 0.0, 0.0};
    Vec graph1 = {0.0, 2.0, 0.0};
    std::vector<FusedKnowledge> fused = {fused_of(doc1, graph1)};

    Vec out = assemble_features(h, mask, fused, 2);
    REQUIRE(out.size() == 3 + 2 * 6);
    CHECK(out[0] == doctest::Approx((1.0 + 10.0 + 5.0) / 3.0).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx((2.0 + 20.0 + 5.0) / 3.0).epsilon(1e-14));
    CHECK(out[2] == doctest::Approx((3.0 + 30.0 + 5.0) / 3.0).epsilon(1e-14));
    // First slot holds the fused vector, second slot stays zero-filled.
    for (std::size_t i = 0; i < 6; ++i) CHECK(out[3 + i] == fused[0].vector[i]);
    for (std::size_t i = 0; i < 6; ++i) CHECK(out[9 + i] == 0.0);
}

TEST_CASE("feature assembly rejects bad inputs") {
    Matrix h(2, 3, 1.0);
    std::vector<std::uint8_t> mask = {1, 1};
    std::vector<FusedKnowledge> none;

    CHECK_THROWS_AS(assemble_features(h, {1}, none, 1), std::invalid_argument);
    CHECK_THROWS_AS(assemble_features(h, {0, 0}, none, 1), std::invalid_argument);

    FusedKnowledge f = fused_of({1.0, 0.0, 0.0}, {0.0, 1.0, 0.0});
    std::vector<FusedKnowledge> two = {f, f};
    CHECK_THROWS_AS(assemble_features(h, mask, two, 1), std::invalid_argument);

    FusedKnowledge wrong = fused_of({1.0, 0.0}, {0.0, 1.0});
    std::vector<FusedKnowledge> bad = {wrong};
    CHECK_THROWS_AS(assemble_features(h, mask, bad, 1), std::invalid_argument);

    Vec features(3 + 1 * 6, 0.0);
    HeadConfig cfg;
    cfg.d_model = 3;
    cfg.n_probe_max = 2;
    cfg.hidden_dim = 4;
    Rng rng(73);
    HeadParams head = init_head(cfg, rng);
    CHECK_THROWS_AS(head_logits(head, features), std::invalid_argument);
}

TEST_CASE("single head trains to separate a toy feature rule") {
    Rng rng(74);
    HeadConfig cfg;
    cfg.d_model = 2;
    cfg.n_probe_max = 0;
    cfg.hidden_dim = 8;
    HeadParams head = init_head(cfg, rng, false);

    // Label is whether the first feature exceeds the second.
    auto sample = [&](Vec& f, int& y) {
        f = {rng.normal(), rng.normal()};
        y = f[0] > f[1] ? 1 : 0;
    };

    const double lr = 0.05;
    for (int step = 0; step < 1500; ++step) {
        Vec f;
        int y;
        sample(f, y);
        HeadCache cache;
        head_loss(head, f, y, &cache);
        HeadParams grads = zero_like(head);
        head_loss_backward(head, cache, y, &grads);
        for (std::size_t i = 0; i < head.w1.size(); ++i) head.w1.data[i] -= lr * grads.w1.data[i];
        for (std::size_t i = 0; i < head.b1.size(); ++i) head.b1[i] -= lr * grads.b1[i];
        for (std::size_t i = 0; i < head.w2.size(); ++i) head.w2.data[i] -= lr * grads.w2.data[i];
        for (std::size_t i = 0; i < head.b2.size(); ++i) head.b2[i] -= lr * grads.b2[i];
    }

    int correct = 0;
    for (int n = 0; n < 200; ++n) {
        Vec f;
        int y;
        sample(f, y);
        const int pred = head_predict(head, f) > 0.5 ? 1 : 0;
        correct += pred == y;
    }
    CHECK(correct >= 180);
}

TEST_CASE("config validation rejects zero dimensions") {
    HeadConfig cfg;
    cfg.d_model = 0;
    cfg.hidden_dim = 4;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.d_model = 4;
    cfg.hidden_dim = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    HeadConfig ok;
    ok.d_model = 4;
    ok.n_probe_max = 0;
    ok.hidden_dim = 2;
    CHECK(ok.input_dim() == 4);
    ok.n_probe_max = 3;
    CHECK(ok.input_dim() == 4 + 3 * 8);
}
