#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "edulm/error.hpp"
#include "edulm/ops.hpp"
#include "edulm/optim.hpp"
#include "edulm/rng.hpp"
#include "oracles.hpp"

using namespace edulm;
using edulm::testing::check_gradients;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng &rng, double spread = 1.0) {
    std::vector<T> data(shape_numel(shape));
    for (auto &v : data) {
        v = static_cast<T>(spread * rng.normal());
    }
    return Tensor<T>(std::move(shape), std::move(data));
}

std::vector<double> to_vec(const Tensor<double> &t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("tensor construction enforces shape invariants") {
    CHECK_THROWS_AS(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
    CHECK_THROWS_AS(Tensor<float>({0}, {}), ShapeError);
    CHECK_THROWS_AS(Tensor<float>({1}, {std::numeric_limits<float>::quiet_NaN()}), NumericError);
    Tensor<float> t({2, 2}, {1, 2, 3, 4});
    CHECK(t.at({1, 0}) == 3.0f);
    CHECK_FALSE(t.has_grad());
}

TEST_CASE("matmul") {
    SUBCASE("identity") {
        Tensor<double> eye({2, 2}, {1, 0, 0, 1});
        Tensor<double> b({2, 2}, {5, -6, 7, 8});
        CHECK(to_vec(matmul(eye, b)) == to_vec(b));
    }
    SUBCASE("hand arithmetic") {
        Tensor<double> a({2, 2}, {1, 2, 3, 4});
        Tensor<double> b({2, 1}, {0, 1});
        const auto c = matmul(a, b);
        CHECK(c.shape() == Shape{2, 1});
        CHECK(to_vec(c) == std::vector<double>{2, 4});
    }
    SUBCASE("dimension mismatch") {
        CHECK_THROWS_AS(matmul(Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({2, 3})), ShapeError);
    }
    SUBCASE("random shapes agree with the triple-loop oracle") {
        Rng rng(11);
        for (int trial = 0; trial < 40; ++trial) {
            const std::size_t m = 1 + rng.uniform_index(16), k = 1 + rng.uniform_index(16),
                              n = 1 + rng.uniform_index(16);
            auto a = random_tensor<float>({m, k}, rng);
            auto b = random_tensor<float>({k, n}, rng);
            const auto c = matmul(a, b);
            const auto ref = edulm::testing::naive_matmul({a.data().begin(), a.data().end()},
                                                          {b.data().begin(), b.data().end()}, m, k, n);
            double max_ref = 0, max_err = 0;
            for (std::size_t i = 0; i < ref.size(); ++i) {
                max_ref = std::max(max_ref, std::abs(ref[i]));
                max_err = std::max(max_err, std::abs(c.data()[i] - ref[i]));
            }
            CHECK(max_err / max_ref <= 1e-5);
        }
        Rng r2(5);
        auto a = random_tensor<float>({5, 7}, r2);
        auto b = random_tensor<float>({7, 3}, r2);
        const auto c = matmul(a, b);
        const auto ref = edulm::testing::naive_matmul({a.data().begin(), a.data().end()},
                                                      {b.data().begin(), b.data().end()}, 5, 7, 3);
        // error relative to the matrix scale; single entries can cancel to ~0
        double max_ref = 0, max_err = 0;
        for (std::size_t i = 0; i < ref.size(); ++i) {
            max_ref = std::max(max_ref, std::abs(ref[i]));
            max_err = std::max(max_err, std::abs(c.data()[i] - ref[i]));
        }
        CHECK(max_err / max_ref <= 1e-5);
    }
}

TEST_CASE("softmax") {
    const auto uniform = softmax(Tensor<float>({3}, {0, 0, 0}), 0);
    for (float v : uniform.data()) {
        CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-7));
    }
    const auto big = softmax(Tensor<float>({2}, {1000, 0}), 0);
    CHECK(big.data()[0] == doctest::Approx(1.0));
    CHECK(big.data()[1] < 1e-30);
    const auto ref = edulm::testing::reference_softmax({1, 2, 3});
    const auto got = softmax(Tensor<float>({3}, {1, 2, 3}), 0);
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(got.data()[i] - ref[i]) <= 1e-6);
    }
    CHECK_THROWS_AS(softmax(Tensor<float>({3}, {1, 2, 3}), 1), ShapeError);

    // rows sum to one along any axis
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        auto x = random_tensor<float>({3, 4, 5}, rng, 10.0);
        const std::size_t axis = rng.uniform_index(3);
        const auto y = softmax(x, axis);
        const Shape &s = x.shape();
        std::vector<double> sums(x.numel() / s[axis], 0.0);
        for (std::size_t a = 0; a < s[0]; ++a) {
            for (std::size_t b = 0; b < s[1]; ++b) {
                for (std::size_t c = 0; c < s[2]; ++c) {
                    std::size_t key = axis == 0 ? b * s[2] + c : axis == 1 ? a * s[2] + c : a * s[1] + b;
                    sums[key] += y.at({a, b, c});
                }
            }
        }
        for (double total : sums) {
            CHECK(std::abs(total - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("layer_norm") {
    Tensor<double> gain({4}, {1.5, -2, 0.5, 3});
    Tensor<double> bias({4}, {0.1, 0.2, 0.3, 0.4});
    const auto constant = layer_norm(Tensor<double>({1, 4}, {7, 7, 7, 7}), gain, bias, 1e-12);
    CHECK(to_vec(constant) == to_vec(bias));

    const auto two = layer_norm(Tensor<double>({1, 2}, {1, 3}), Tensor<double>({2}, {1, 1}),
                                Tensor<double>({2}, {0, 0}), 1e-12);
    CHECK(two.data()[0] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(two.data()[1] == doctest::Approx(1.0).epsilon(1e-9));

    Rng rng(9);
    auto row = random_tensor<float>({1, 16}, rng, 3.0);
    const auto out = layer_norm(row, Tensor<float>::full({16}, 1.0f), Tensor<float>::zeros({16}), 1e-12);
    long double mu = 0, var = 0;
    for (float v : row.data()) {
        mu += v;
    }
    mu /= 16;
    for (float v : row.data()) {
        var += (v - mu) * (v - mu);
    }
    var /= 16;
    for (std::size_t j = 0; j < 16; ++j) {
        const double ref = static_cast<double>((row.data()[j] - mu) / std::sqrt(var));
        CHECK(std::abs(out.data()[j] - ref) <= 1e-5);
    }
    CHECK_THROWS_AS(layer_norm(row, Tensor<float>::zeros({3}), Tensor<float>::zeros({16}), 1e-12), ShapeError);
}

TEST_CASE("gelu") {
    CHECK(gelu(Tensor<double>::scalar(0.0)).item() == 0.0);
    const long double oracle = 0.5L * (1.0L + std::erf(1.0L / std::sqrt(2.0L)));
    CHECK(gelu(Tensor<double>::scalar(1.0)).item() == doctest::Approx(static_cast<double>(oracle)).epsilon(1e-12));
    CHECK(gelu(Tensor<float>::scalar(1.0f)).item() == doctest::Approx(0.841345).epsilon(1e-6));
    CHECK(std::abs(gelu(Tensor<float>::scalar(-10.0f)).item()) <= 1e-6);
    CHECK(gelu(Tensor<double>::scalar(1.0), GeluMode::tanh).item() == doctest::Approx(0.841192).epsilon(1e-5));
}

TEST_CASE("cross_entropy") {
    const std::vector<std::int32_t> one{2};
    const auto uniform = cross_entropy(Tensor<double>({1, 4}, {0, 0, 0, 0}), one);
    CHECK(uniform.loss.item() == doctest::Approx(std::log(4.0)));

    Tensor<double> logits({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    const std::vector<std::int32_t> ignored{kIgnoreIndex, kIgnoreIndex};
    const auto empty = cross_entropy(logits, ignored);
    CHECK(empty.all_ignored());
    CHECK(empty.loss.item() == 0.0);
    empty.loss.backward();
    for (double g : logits.grad()) {
        CHECK(g == 0.0);
    }

    const std::vector<std::int32_t> bad{3, 0};
    CHECK_THROWS_AS(cross_entropy(logits, bad), InputError);

    Rng rng(21);
    auto x = random_tensor<double>({3, 5}, rng, 2.0);
    const std::vector<std::int32_t> targets{4, 0, 2};
    long double ref = 0;
    for (std::size_t r = 0; r < 3; ++r) {
        std::vector<double> row(x.data().begin() + static_cast<long>(r * 5), x.data().begin() + static_cast<long>(r * 5 + 5));
        ref -= edulm::testing::reference_log_softmax(row)[static_cast<std::size_t>(targets[r])];
    }
    ref /= 3;
    CHECK(std::abs(cross_entropy(x, targets).loss.item() - static_cast<double>(ref)) <= 1e-6);
    auto xf = cast<float>(x);
    CHECK(std::abs(cross_entropy(xf, targets).loss.item() - static_cast<double>(ref)) <= 1e-6);
}

TEST_CASE("backward: analytic cases") {
    Tensor<double> x({2, 3}, {1, -2, 3, 0.5, 4, -1}, true);
    sum(x).backward();
    for (double g : x.grad()) {
        CHECK(g == 1.0);
    }
    x.zero_grad();
    scale(sum(mul(x, x)), 0.5).backward();
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(x.grad()[i] == doctest::Approx(x.data()[i]));
    }
    CHECK_THROWS_AS(x.backward(), UsageError);
}

TEST_CASE("backward: every op matches central finite differences") {
    Rng rng(2024);
    auto check = [](std::vector<Tensor<double>> inputs, auto &&fn) {
        const auto result = check_gradients(inputs, fn);
        INFO("worst element: " << result.worst);
        CHECK(result.max_relative_error <= 1e-4);
    };
    // project to a scalar through fixed random weights so every output element matters
    auto weigh = [](const Tensor<double> &y) {
        std::vector<double> w(y.numel());
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
        }
        return sum(mul(y, Tensor<double>(y.shape(), w)));
    };

    check({random_tensor<double>({4, 3}, rng), random_tensor<double>({3, 5}, rng)},
          [&](auto &in) { return weigh(matmul(in[0], in[1])); });
    check({random_tensor<double>({3, 4}, rng)}, [&](auto &in) { return weigh(transpose(in[0])); });
    check({random_tensor<double>({3, 4}, rng), random_tensor<double>({3, 4}, rng)},
          [&](auto &in) { return weigh(sub(add(in[0], in[1]), mul(in[0], in[1]))); });
    check({random_tensor<double>({4, 3}, rng), random_tensor<double>({3}, rng)},
          [&](auto &in) { return weigh(add_row_bias(in[0], in[1])); });
    check({random_tensor<double>({4, 3}, rng), random_tensor<double>({3, 2}, rng), random_tensor<double>({2}, rng)},
          [&](auto &in) { return weigh(linear(in[0], in[1], in[2])); });
    check({random_tensor<double>({2, 5}, rng, 2.0)}, [&](auto &in) { return weigh(gelu(in[0])); });
    check({random_tensor<double>({2, 5}, rng, 2.0)}, [&](auto &in) { return weigh(gelu(in[0], GeluMode::tanh)); });
    check({random_tensor<double>({2, 5}, rng)}, [&](auto &in) { return weigh(edulm::tanh(in[0])); });
    check({random_tensor<double>({2, 3, 4}, rng)}, [&](auto &in) { return weigh(softmax(in[0], 1)); });
    check({random_tensor<double>({3, 4}, rng)}, [&](auto &in) { return weigh(log_softmax(in[0])); });
    check({random_tensor<double>({3, 6}, rng), random_tensor<double>({6}, rng), random_tensor<double>({6}, rng)},
          [&](auto &in) { return weigh(layer_norm(in[0], in[1], in[2], 1e-12)); });
    check({random_tensor<double>({5, 3}, rng)}, [&](auto &in) {
        const std::vector<std::size_t> idx{4, 0, 4, 2};
        return weigh(gather_rows(in[0], idx));
    });
    check({random_tensor<double>({3, 4}, rng)}, [&](auto &in) { return weigh(reshape(in[0], {2, 6})); });
    check({random_tensor<double>({3, 4}, rng)}, [&](auto &in) { return mean(in[0]); });
    check({random_tensor<double>({3, 4}, rng), random_tensor<double>({3, 4}, rng)},
          [&](auto &in) { return weigh(cosine_similarity_rows(in[0], in[1])); });
    check({random_tensor<double>({4, 6}, rng, 2.0)}, [&](auto &in) {
        const std::vector<std::int32_t> t{1, kIgnoreIndex, 5, 0};
        return cross_entropy(in[0], t).loss;
    });
    check({random_tensor<double>({6, 4}, rng), random_tensor<double>({6, 4}, rng), random_tensor<double>({6, 4}, rng)},
          [&](auto &in) {
              const std::vector<std::uint8_t> mask{1, 1, 0, 1, 0, 0};
              return weigh(multi_head_attention(in[0], in[1], in[2], mask, 2, 3, 2));
          });
    check({random_tensor<double>({3, 4}, rng)}, [&](auto &in) {
        Rng drop(7);
        return weigh(dropout(in[0], 0.3, drop));
    });
}

TEST_CASE("attention") {
    Rng rng(4);
    auto q = random_tensor<double>({4, 3}, rng);
    auto k = random_tensor<double>({4, 3}, rng);
    auto v = random_tensor<double>({4, 3}, rng);
    SUBCASE("single unmasked position returns its value row") {
        const std::vector<std::uint8_t> mask{0, 0, 1, 0};
        const auto out = attention(q, k, v, mask);
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t e = 0; e < 3; ++e) {
                CHECK(out.at({i, e}) == doctest::Approx(v.at({2, e})).epsilon(1e-12));
            }
        }
    }
    SUBCASE("identical keys average the unmasked values") {
        Tensor<double> same({4, 3}, std::vector<double>(12, 0.3));
        const std::vector<std::uint8_t> mask{1, 1, 0, 1};
        const auto out = attention(q, same, v, mask);
        for (std::size_t e = 0; e < 3; ++e) {
            const double expected = (v.at({0, e}) + v.at({1, e}) + v.at({3, e})) / 3.0;
            CHECK(out.at({0, e}) == doctest::Approx(expected).epsilon(1e-12));
        }
    }
    SUBCASE("masked key gets negligible weight even with a huge score") {
        // key 1 aligns strongly with every query
        std::vector<double> kd(12, 0.0);
        for (std::size_t e = 0; e < 3; ++e) {
            kd[3 + e] = 50.0;
        }
        Tensor<double> ones_q({4, 3}, std::vector<double>(12, 1.0));
        std::vector<double> vd(12, 0.0);
        vd[3] = 1.0;  // only key 1 carries signal in column 0
        const std::vector<std::uint8_t> mask{1, 0, 1, 1};
        const auto out = attention(ones_q, Tensor<double>({4, 3}, kd), Tensor<double>({4, 3}, vd), mask);
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(out.at({i, 0}) < 1e-6);
        }
    }
    SUBCASE("all-masked row is a numeric error") {
        const std::vector<std::uint8_t> mask{0, 0, 0, 0};
        CHECK_THROWS_AS(attention(q, k, v, mask), NumericError);
    }
}

TEST_CASE("adam") {
    SUBCASE("zero gradient from fresh state leaves parameters bitwise unchanged") {
        Rng rng(1);
        std::vector<Tensor<float>> params{random_tensor<float>({3, 3}, rng), random_tensor<float>({4}, rng)};
        std::vector<std::vector<float>> before;
        for (auto &p : params) {
            before.emplace_back(p.data().begin(), p.data().end());
            p.mutable_grad();  // allocate zeros
        }
        AdamState<float> state;
        for (int i = 0; i < 3; ++i) {
            adam_step<float>(params, state, OptimizerHyper{});
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            CHECK(std::equal(before[i].begin(), before[i].end(), params[i].data().begin()));
        }
        CHECK(state.step_count == 3);
    }
    SUBCASE("moments decay toward zero once gradients vanish") {
        std::vector<Tensor<double>> params{Tensor<double>({1}, {1.0}, true)};
        AdamState<double> state;
        params[0].mutable_grad()[0] = 2.0;
        adam_step<double>(params, state, OptimizerHyper{});
        const double m1 = state.first_moment[0][0], v1 = state.second_moment[0][0];
        params[0].zero_grad();
        adam_step<double>(params, state, OptimizerHyper{});
        CHECK(std::abs(state.first_moment[0][0]) < std::abs(m1));
        CHECK(state.second_moment[0][0] < v1);
    }
    SUBCASE("first step moves by -lr * sign(g)") {
        std::vector<Tensor<double>> params{Tensor<double>({3}, {0.5, -1.0, 2.0}, true)};
        const std::vector<double> g{0.3, -4.0, 1e-3};
        for (std::size_t i = 0; i < 3; ++i) {
            params[0].mutable_grad()[i] = g[i];
        }
        AdamState<double> state;
        OptimizerHyper hyper;
        hyper.learning_rate = 1e-2;
        adam_step<double>(params, state, hyper);
        const std::vector<double> start{0.5, -1.0, 2.0};
        for (std::size_t i = 0; i < 3; ++i) {
            const double sign = g[i] > 0 ? 1.0 : -1.0;
            CHECK(params[0].data()[i] == doctest::Approx(start[i] - hyper.learning_rate * sign).epsilon(1e-6));
        }
    }
    SUBCASE("10-step quadratic trajectory matches a scripted Adam trace") {
        // f(x) = 0.5 (x - 3)^2, x0 = 0
        OptimizerHyper hyper;
        hyper.learning_rate = 0.1;
        long double x = 0, m = 0, v = 0;
        std::vector<double> oracle;
        for (int t = 1; t <= 10; ++t) {
            const long double g = x - 3;
            m = 0.9L * m + 0.1L * g;
            v = 0.999L * v + 0.001L * g * g;
            const long double mh = m / (1 - std::pow(0.9L, t));
            const long double vh = v / (1 - std::pow(0.999L, t));
            x -= 0.1L * mh / (std::sqrt(vh) + 1e-8L);
            oracle.push_back(static_cast<double>(x));
        }
        std::vector<Tensor<double>> params{Tensor<double>({1}, {0.0}, true)};
        AdamState<double> state;
        for (int t = 0; t < 10; ++t) {
            params[0].zero_grad();
            scale(sum(mul(sub(params[0], Tensor<double>({1}, {3.0})), sub(params[0], Tensor<double>({1}, {3.0})))), 0.5)
                .backward();
            adam_step<double>(params, state, hyper);
            CHECK(std::abs(params[0].data()[0] - oracle[static_cast<std::size_t>(t)]) <= 1e-6);
        }
    }
    SUBCASE("invalid hyperparameters and mismatched state") {
        OptimizerHyper bad;
        bad.beta1 = 1.0;
        CHECK_THROWS_AS(bad.validate(), ConfigError);
        std::vector<Tensor<float>> params{Tensor<float>::zeros({2})};
        AdamState<float> state;
        adam_step<float>(params, state, OptimizerHyper{});
        std::vector<Tensor<float>> other{Tensor<float>::zeros({3})};
        CHECK_THROWS_AS(adam_step<float>(other, state, OptimizerHyper{}), ShapeError);
    }
}

TEST_CASE("no-grad mode records nothing") {
    Tensor<double> x({2}, {1, 2}, true);
    Tensor<double> y;
    {
        NoGradGuard guard;
        y = sum(mul(x, x));
    }
    CHECK_FALSE(y.requires_grad());
    CHECK(grad_enabled());
}

TEST_CASE("rng streams are reproducible and independent") {
    Rng a(42), b(42);
    for (int i = 0; i < 10; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    Rng base(42);
    CHECK(base.split(1).next_u64() != base.split(2).next_u64());
    CHECK(base.split(1).next_u64() == base.split(1).next_u64());
    Rng c(7);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < 50000; ++i) {
        counts[c.uniform_index(5)]++;
    }
    for (int n : counts) {
        CHECK(std::abs(n - 10000) < 400);
    }
}
