#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gradcheck_util.hpp"
#include "selffed/graph.hpp"
#include "selffed/rng.hpp"

using namespace selffed;

TEST_CASE("softmax of equal inputs is uniform") {
    Graph g;
    NodeId y = g.softmax_lastdim(g.constant(Tensor::from({2}, {0.0, 0.0})));
    CHECK(g.val(y).data[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(g.val(y).data[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("relu clamps negatives") {
    Graph g;
    NodeId y = g.relu(g.constant(Tensor::from({2}, {-1.0, 2.0})));
    CHECK(g.val(y).data[0] == 0.0);
    CHECK(g.val(y).data[1] == 2.0);
}

TEST_CASE("matmul by the identity returns the input") {
    Rng rng(7);
    Tensor a = gradcheck::random_tensor({3, 3}, rng);
    Tensor eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    Graph g;
    NodeId y = g.matmul(g.constant(eye), g.constant(a));
    CHECK(bit_equal(g.val(y), a));
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = gradcheck::random_tensor({4, 7}, rng, -8.0, 8.0);
        Graph g;
        const Tensor& y = g.val(g.softmax_lastdim(g.constant(x)));
        for (int r = 0; r < 4; ++r) {
            double s = 0.0;
            for (int c = 0; c < 7; ++c) s += y.at(r, c);
            CHECK(std::fabs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("layernorm slices have zero mean and unit variance") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = gradcheck::random_tensor({5, 16}, rng, -3.0, 3.0);
        Graph g;
        const Tensor& y = g.val(g.layernorm_lastdim(g.constant(x)));
        for (int r = 0; r < 5; ++r) {
            double mu = 0.0, var = 0.0;
            for (int c = 0; c < 16; ++c) mu += y.at(r, c);
            mu /= 16.0;
            for (int c = 0; c < 16; ++c) var += (y.at(r, c) - mu) * (y.at(r, c) - mu);
            var /= 16.0;
            CHECK(std::fabs(mu) <= 1e-10);
            CHECK(std::fabs(var - 1.0) <= 1e-8);
        }
    }
}

TEST_CASE("shape errors are rejected") {
    Graph g;
    NodeId a = g.constant(Tensor({2, 3}));
    NodeId b = g.constant(Tensor({2, 3}));
    CHECK_THROWS_AS(g.matmul(a, b), ShapeMismatch);
    CHECK_THROWS_AS(g.add(a, g.constant(Tensor({3, 2}))), ShapeMismatch);
    CHECK_THROWS_AS(g.transpose(g.constant(Tensor({4}))), ShapeMismatch);
    CHECK_THROWS_AS(g.reshape(a, {7}), ShapeMismatch);
    CHECK_THROWS_AS(g.gather_rows(a, std::vector<int64_t>{5}), ShapeMismatch);
}

TEST_CASE("non-finite results abort and name the op") {
    Graph g;
    NodeId big = g.constant(Tensor::from({1}, {1e306}));
    CHECK_THROWS_WITH_AS(g.exp(g.scale(big, 2.0)), doctest::Contains("exp"), NonFinite);
    NodeId zero = g.constant(Tensor::from({1}, {0.0}));
    CHECK_THROWS_AS(g.log(zero), NonFinite);
}

TEST_CASE("backward demands a scalar loss and runs once") {
    Graph g;
    NodeId x = g.leaf(Tensor::from({2}, {1.0, 2.0}), true);
    NodeId y = g.square(x);
    CHECK_THROWS_AS(g.backward(y), NotScalarLoss);
    NodeId loss = g.sum_all(y);
    g.backward(loss);
    CHECK(g.grad(x)[0] == doctest::Approx(2.0));
    CHECK(g.grad(x)[1] == doctest::Approx(4.0));
    CHECK_THROWS_AS(g.backward(loss), GraphNotEvaluated);
}

TEST_CASE("loss x^2 at x=3 has gradient 6, matching central differences") {
    Graph g;
    NodeId x = g.leaf(Tensor::from({1}, {3.0}), true);
    NodeId loss = g.sum_all(g.square(x));
    g.backward(loss);
    CHECK(g.grad(x)[0] == doctest::Approx(6.0).epsilon(1e-12));

    auto f = [](double v) { return v * v; };
    const double fd = (f(3.001) - f(2.999)) / 0.002;
    CHECK(std::fabs(fd - 6.0) <= 1e-6);
}

TEST_CASE("leaves the loss does not touch get exactly zero gradient") {
    Graph g;
    NodeId x = g.leaf(Tensor::from({1}, {2.0}), true);
    NodeId unused_const = g.constant(Tensor::from({1}, {5.0}));
    NodeId untouched = g.leaf(Tensor::from({3}, {1.0, 1.0, 1.0}), true);
    NodeId loss = g.sum_all(g.square(x));
    g.backward(loss);
    CHECK(g.grad(unused_const) == std::vector<double>{0.0});
    CHECK(g.grad(untouched) == std::vector<double>(3, 0.0));
    CHECK(g.grad(x)[0] == 4.0);
}

TEST_CASE("fan-out accumulates like a duplicated-node graph") {
    Rng rng(29);
    Tensor x0 = gradcheck::random_tensor_off_kink({6}, rng);

    Graph shared;
    NodeId x = shared.leaf(x0, true);
    NodeId loss = shared.sum_all(shared.add(shared.square(x), shared.relu(x)));
    shared.backward(loss);

    Graph dup;
    NodeId x1 = dup.leaf(x0, true);
    NodeId x2 = dup.leaf(x0, true);
    NodeId loss2 = dup.sum_all(dup.add(dup.square(x1), dup.relu(x2)));
    dup.backward(loss2);

    for (size_t i = 0; i < x0.data.size(); ++i) {
        CHECK(shared.grad(x)[i] ==
              doctest::Approx(dup.grad(x1)[i] + dup.grad(x2)[i]).epsilon(1e-14));
    }
}

TEST_CASE("matmul gradient equals the broadcast transpose rule, by finite differences") {
    Rng rng(31);
    Tensor a = gradcheck::random_tensor({3, 4}, rng);
    Tensor b = gradcheck::random_tensor({4, 5}, rng);
    gradcheck::run({a, b}, [](Graph& g, const std::vector<NodeId>& in) {
        return g.sum_all(g.matmul(in[0], in[1]));
    });
    // dL/dA for L = sum(AB) broadcasts the row sums of B across rows of A
    Graph g;
    NodeId an = g.leaf(a, true);
    NodeId loss = g.sum_all(g.matmul(an, g.constant(b)));
    g.backward(loss);
    for (int64_t i = 0; i < 3; ++i) {
        for (int64_t k = 0; k < 4; ++k) {
            double want = 0.0;
            for (int64_t j = 0; j < 5; ++j) want += b.at(k, j);
            CHECK(g.grad(an)[static_cast<size_t>(i * 4 + k)] ==
                  doctest::Approx(want).epsilon(1e-12));
        }
    }
}

// one randomized finite-difference sweep per primitive; the acceptance
// suite repeats these at full trial counts
TEST_CASE("every primitive passes the central-difference oracle") {
    Rng rng(1234);
    const int trials = 12;
    using gradcheck::probe_scalar;
    using gradcheck::random_tensor;
    using gradcheck::random_tensor_off_kink;

    auto unary_case = [&](auto make_op, bool off_kink, double lo, double hi) {
        for (int t = 0; t < trials; ++t) {
            const int64_t rows = 1 + static_cast<int64_t>(rng.below(6));
            const int64_t cols = 1 + static_cast<int64_t>(rng.below(8));
            Tensor x = off_kink ? random_tensor_off_kink({rows, cols}, rng)
                                : random_tensor({rows, cols}, rng, lo, hi);
            Tensor probe = random_tensor({1, rows * cols}, rng);
            gradcheck::run({x}, [&](Graph& g, const std::vector<NodeId>& in) {
                return probe_scalar(g, make_op(g, in[0]), probe);
            });
        }
    };

    SUBCASE("relu") {
        unary_case([](Graph& g, NodeId a) { return g.relu(a); }, true, 0, 0);
    }
    SUBCASE("gelu") {
        unary_case([](Graph& g, NodeId a) { return g.gelu(a); }, false, -2.0, 2.0);
    }
    SUBCASE("softmax") {
        unary_case([](Graph& g, NodeId a) { return g.softmax_lastdim(a); }, false, -3.0, 3.0);
    }
    SUBCASE("layernorm") {
        unary_case([](Graph& g, NodeId a) { return g.layernorm_lastdim(a); }, false, -2.0, 2.0);
    }
    SUBCASE("square") {
        unary_case([](Graph& g, NodeId a) { return g.square(a); }, false, -2.0, 2.0);
    }
    SUBCASE("log") {
        unary_case([](Graph& g, NodeId a) { return g.log(a); }, false, 0.2, 3.0);
    }
    SUBCASE("exp") {
        unary_case([](Graph& g, NodeId a) { return g.exp(a); }, false, -2.0, 2.0);
    }
    SUBCASE("scale") {
        unary_case([](Graph& g, NodeId a) { return g.scale(a, -1.7); }, false, -2.0, 2.0);
    }
    SUBCASE("transpose") {
        unary_case([](Graph& g, NodeId a) { return g.transpose(a); }, false, -2.0, 2.0);
    }
    SUBCASE("reshape") {
        for (int t = 0; t < trials; ++t) {
            Tensor x = random_tensor({6, 4}, rng);
            Tensor probe = random_tensor({1, 24}, rng);
            gradcheck::run({x}, [&](Graph& g, const std::vector<NodeId>& in) {
                return probe_scalar(g, g.reshape(in[0], {4, 6}), probe);
            });
        }
    }
    SUBCASE("matmul") {
        for (int t = 0; t < trials; ++t) {
            const int64_t n = 1 + static_cast<int64_t>(rng.below(4));
            const int64_t k = 1 + static_cast<int64_t>(rng.below(4));
            const int64_t m = 1 + static_cast<int64_t>(rng.below(4));
            Tensor a = random_tensor({n, k}, rng);
            Tensor b = random_tensor({k, m}, rng);
            Tensor probe = random_tensor({1, n * m}, rng);
            gradcheck::run({a, b}, [&](Graph& g, const std::vector<NodeId>& in) {
                return probe_scalar(g, g.matmul(in[0], in[1]), probe);
            });
        }
    }
    SUBCASE("add sub rowvec ops") {
        for (int t = 0; t < trials; ++t) {
            Tensor a = random_tensor({5, 3}, rng);
            Tensor b = random_tensor({5, 3}, rng);
            Tensor v = random_tensor({3}, rng);
            Tensor probe = random_tensor({1, 15}, rng);
            gradcheck::run({a, b}, [&](Graph& g, const std::vector<NodeId>& in) {
                return probe_scalar(g, g.add(in[0], in[1]), probe);
            });
            gradcheck::run({a, b}, [&](Graph& g, const std::vector<NodeId>& in) {
                return probe_scalar(g, g.sub(in[0], in[1]), probe);
            });
            gradcheck::run({a, v}, [&](Graph& g, const std::vector<NodeId>& in) {
                return probe_scalar(g, g.add_rowvec(in[0], in[1]), probe);
            });
            gradcheck::run({a, v}, [&](Graph& g, const std::vector<NodeId>& in) {
                return probe_scalar(g, g.mul_rowvec(in[0], in[1]), probe);
            });
        }
    }
    SUBCASE("gather concat reductions") {
        for (int t = 0; t < trials; ++t) {
            Tensor a = random_tensor({6, 3}, rng);
            Tensor b = random_tensor({2, 3}, rng);
            std::vector<int64_t> idx = {5, 0, 3, 3};  // repeats exercise scatter-add
            Tensor probe_g = random_tensor({1, 12}, rng);
            gradcheck::run({a}, [&](Graph& g, const std::vector<NodeId>& in) {
                return probe_scalar(g, g.gather_rows(in[0], idx), probe_g);
            });
            Tensor probe_c = random_tensor({1, 24}, rng);
            gradcheck::run({a, b}, [&](Graph& g, const std::vector<NodeId>& in) {
                const NodeId parts[] = {in[0], in[1]};
                return probe_scalar(g, g.concat_rows(parts), probe_c);
            });
            gradcheck::run({a}, [&](Graph& g, const std::vector<NodeId>& in) {
                return g.mean_all(in[0]);
            });
            gradcheck::run({a}, [&](Graph& g, const std::vector<NodeId>& in) {
                return g.sum_all(in[0]);
            });
            Tensor probe_m = random_tensor({1, 3}, rng);
            gradcheck::run({a}, [&](Graph& g, const std::vector<NodeId>& in) {
                return probe_scalar(g, g.mean_rows(in[0]), probe_m);
            });
        }
    }
    SUBCASE("cosine and normalize") {
        for (int t = 0; t < trials; ++t) {
            Tensor a = random_tensor({6}, rng, 0.2, 1.0);
            Tensor b = random_tensor({6}, rng, 0.2, 1.0);
            gradcheck::run({a, b}, [&](Graph& g, const std::vector<NodeId>& in) {
                return g.cosine_similarity(in[0], in[1]);
            });
            Tensor probe = random_tensor({1, 6}, rng);
            gradcheck::run({a}, [&](Graph& g, const std::vector<NodeId>& in) {
                return probe_scalar(g, g.l2_normalize(in[0]), probe);
            });
        }
    }
    SUBCASE("cross entropy") {
        for (int t = 0; t < trials; ++t) {
            Tensor z = random_tensor({5}, rng, -2.0, 2.0);
            const int64_t label = static_cast<int64_t>(rng.below(5));
            gradcheck::run(
                {z},
                [&](Graph& g, const std::vector<NodeId>& in) {
                    return g.cross_entropy(in[0], label);
                },
                1e-6);
        }
    }
}

TEST_CASE("cosine similarity of a near-zero vector is rejected") {
    Graph g;
    NodeId a = g.constant(Tensor::from({2}, {0.0, 0.0}));
    NodeId b = g.constant(Tensor::from({2}, {1.0, 0.0}));
    CHECK_THROWS_AS(g.cosine_similarity(a, b), NormalizationError);
    CHECK_THROWS_AS(g.l2_normalize(a), NormalizationError);
}

TEST_CASE("cross entropy label bounds") {
    Graph g;
    NodeId z = g.constant(Tensor::from({3}, {0.0, 0.0, 0.0}));
    CHECK_THROWS_AS(g.cross_entropy(z, 3), LabelOutOfRange);
    CHECK_THROWS_AS(g.cross_entropy(z, -1), LabelOutOfRange);
}
