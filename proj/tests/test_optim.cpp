#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cnnf/optim.hpp"
#include "cnnf/rng.hpp"
#include "support/testutil.hpp"

using namespace cnnf;
using cnnf::testing::bitwise_equal;
using cnnf::testing::fill_uniform;

TEST_CASE("uniform logits give cross-entropy ln(10)") {
    Tensor logits(Shape{4, 10}, 0.7f);  // any constant row is uniform after softmax
    std::vector<std::int64_t> labels{0, 3, 9, 5};
    const auto res = softmax_crossentropy(logits, labels);
    CHECK(std::abs(res.loss - std::log(10.0)) <= 1e-12);
    CHECK(std::abs(res.loss - 2.302585092994046) < 1e-6);
}

TEST_CASE("cross-entropy is invariant to constant logit shifts") {
    Rng rng = make_stream(5, Stream::kInit);
    TensorD logits(Shape{3, 7});
    for (std::int64_t i = 0; i < logits.size(); ++i) logits[i] = rng.next_double() * 2.0 - 1.0;
    std::vector<std::int64_t> labels{2, 0, 6};
    const auto base = softmax_crossentropy(logits, labels);
    TensorD shifted = logits;
    for (std::int64_t i = 0; i < shifted.size(); ++i) shifted[i] += 30.0;
    const auto moved = softmax_crossentropy(shifted, labels);
    CHECK(std::abs(base.loss - moved.loss) <= 1e-12);
    for (std::int64_t i = 0; i < base.dlogits.size(); ++i) {
        CHECK(std::abs(base.dlogits[i] - moved.dlogits[i]) <= 1e-12);
    }
}

TEST_CASE("cross-entropy handles extreme logits without overflow") {
    Tensor logits(Shape{1, 3});
    logits[0] = 1000.0f;
    logits[1] = -1000.0f;
    logits[2] = 0.0f;
    const auto res = softmax_crossentropy(logits, {0});
    CHECK(std::isfinite(res.loss));
    CHECK(res.loss < 1e-6);  // the true class dominates completely
    CHECK(res.dlogits.all_finite());
}

TEST_CASE("cross-entropy gradient rows sum to zero and match finite differences") {
    Rng rng = make_stream(6, Stream::kInit);
    TensorD logits(Shape{2, 5});
    for (std::int64_t i = 0; i < logits.size(); ++i) logits[i] = rng.next_double() * 2.0 - 1.0;
    std::vector<std::int64_t> labels{4, 1};
    const auto res = softmax_crossentropy(logits, labels);
    for (std::int64_t r = 0; r < 2; ++r) {
        double row_sum = 0.0;
        for (std::int64_t j = 0; j < 5; ++j) row_sum += res.dlogits.at2(r, j);
        CHECK(std::abs(row_sum) <= 1e-12);
    }
    const double eps = 1e-6;
    for (std::int64_t i = 0; i < logits.size(); ++i) {
        TensorD plus = logits, minus = logits;
        plus[i] += eps;
        minus[i] -= eps;
        const double numeric =
            (softmax_crossentropy(plus, labels).loss - softmax_crossentropy(minus, labels).loss) /
            (2.0 * eps);
        CHECK(std::abs(numeric - res.dlogits[i]) <= 1e-6);
    }
}

TEST_CASE("cross-entropy rejects bad labels and shapes") {
    Tensor logits(Shape{2, 4});
    CHECK_THROWS_AS(softmax_crossentropy(logits, {0, 4}), ValueError);
    CHECK_THROWS_AS(softmax_crossentropy(logits, {0, -1}), ValueError);
    CHECK_THROWS_AS(softmax_crossentropy(logits, {0}), ShapeError);
    Tensor flat(Shape{8});
    CHECK_THROWS_AS(softmax_crossentropy(flat, {0}), ShapeError);
}

TEST_CASE("accuracy counts argmax hits with first-index tie breaking") {
    Tensor logits(Shape{4, 3});
    const float rows[4][3] = {
        {0.1f, 0.9f, 0.0f},  // -> 1
        {2.0f, 1.0f, 2.0f},  // tie between 0 and 2 -> 0
        {0.0f, 0.0f, 5.0f},  // -> 2
        {1.0f, 0.0f, 0.0f},  // -> 0
    };
    for (std::int64_t r = 0; r < 4; ++r)
        for (std::int64_t c = 0; c < 3; ++c) logits.at2(r, c) = rows[r][c];
    CHECK(accuracy(logits, {1, 0, 2, 0}) == doctest::Approx(1.0));
    CHECK(accuracy(logits, {1, 2, 2, 0}) == doctest::Approx(0.75));
    CHECK(accuracy(logits, {0, 1, 1, 1}) == doctest::Approx(0.0));
}

TEST_CASE("Adam first step moves each weight by lr*g/(|g|+eps)") {
    // Weights start at zero so the stored float delta resolves well below
    // the 1e-9 comparison (float spacing near 1e-3 is ~1e-10).
    Tensor theta(Shape{5});
    Tensor grad(Shape{5});
    const float g[5] = {0.5f, -2.0f, 1e-3f, -1e-6f, 3.0f};
    for (std::int64_t i = 0; i < 5; ++i) grad[i] = g[i];
    AdamConfig cfg;
    AdamState adam(cfg);
    adam.step({{"w", &theta, &grad}});
    CHECK(adam.t() == 1);
    for (std::int64_t i = 0; i < 5; ++i) {
        // With bias correction, the first update is exactly
        // -lr * g / (|g| + eps) regardless of beta values.
        const double expect =
            -cfg.lr * static_cast<double>(g[i]) / (std::abs(static_cast<double>(g[i])) + cfg.eps);
        CHECK(std::abs(static_cast<double>(theta[i]) - expect) <= 1e-9);
    }
}

TEST_CASE("Adam leaves weights alone when gradients are zero") {
    Tensor theta(Shape{3});
    theta[0] = 1.0f;
    theta[1] = -2.0f;
    theta[2] = 0.5f;
    Tensor grad(Shape{3});
    AdamState adam;
    const Tensor before = theta;
    for (int i = 0; i < 3; ++i) adam.step({{"w", &theta, &grad}});
    CHECK(bitwise_equal(theta, before));
}

TEST_CASE("Adam treats mirrored gradients symmetrically") {
    Tensor theta(Shape{2});
    Tensor grad(Shape{2});
    theta[0] = theta[1] = 0.0f;
    AdamState adam;
    for (int step = 0; step < 10; ++step) {
        grad[0] = 0.3f + 0.01f * static_cast<float>(step);
        grad[1] = -grad[0];
        adam.step({{"w", &theta, &grad}});
    }
    CHECK(theta[0] == -theta[1]);
}

TEST_CASE("Adam drives a quadratic bowl to its minimum") {
    // f(theta) = 0.5 * theta^2, gradient theta; minimum at zero.
    Tensor theta(Shape{4});
    theta[0] = 3.0f;
    theta[1] = -1.5f;
    theta[2] = 0.25f;
    theta[3] = -4.0f;
    Tensor grad(Shape{4});
    AdamState adam(AdamConfig{0.05, 0.9, 0.999, 1e-8});
    for (int step = 0; step < 400; ++step) {
        for (std::int64_t i = 0; i < 4; ++i) grad[i] = theta[i];
        adam.step({{"w", &theta, &grad}});
    }
    for (std::int64_t i = 0; i < 4; ++i) CHECK(std::abs(static_cast<double>(theta[i])) < 1e-2);
}

TEST_CASE("Adam moment restore reproduces an uninterrupted run") {
    auto run_steps = [](AdamState& adam, Tensor& theta, int from, int to) {
        Tensor grad(Shape{3});
        for (int step = from; step < to; ++step) {
            for (std::int64_t i = 0; i < 3; ++i)
                grad[i] = theta[i] * 0.7f + static_cast<float>(step % 3) * 0.1f;
            adam.step({{"w", &theta, &grad}});
        }
    };
    Tensor theta_full(Shape{3});
    theta_full[0] = 1.0f;
    theta_full[1] = -1.0f;
    theta_full[2] = 2.0f;
    AdamState full;
    run_steps(full, theta_full, 0, 20);

    Tensor theta_split = theta_full;
    theta_split[0] = 1.0f;
    theta_split[1] = -1.0f;
    theta_split[2] = 2.0f;
    AdamState first;
    run_steps(first, theta_split, 0, 12);
    AdamState second;
    second.restore(first.t(), first.first_moments(), first.second_moments());
    run_steps(second, theta_split, 12, 20);
    CHECK(bitwise_equal(theta_full, theta_split));
}

TEST_CASE("Adam rejects gradient shape changes between steps") {
    Tensor theta(Shape{3}), grad(Shape{3});
    AdamState adam;
    adam.step({{"w", &theta, &grad}});
    Tensor theta2(Shape{4}), grad2(Shape{4});
    CHECK_THROWS_AS(adam.step({{"w", &theta2, &grad2}}), ShapeError);
}

TEST_CASE("repeated Adam runs are bitwise reproducible") {
    auto train = [] {
        Tensor theta(Shape{6});
        Tensor grad(Shape{6});
        Rng rng = make_stream(77, Stream::kInit);
        fill_uniform(theta, rng);
        AdamState adam;
        for (int step = 0; step < 50; ++step) {
            for (std::int64_t i = 0; i < 6; ++i)
                grad[i] = theta[i] * 0.9f + static_cast<float>(rng.next_double() - 0.5);
            adam.step({{"w", &theta, &grad}});
        }
        return theta;
    };
    CHECK(bitwise_equal(train(), train()));
}
