#include <doctest.h>

#include <cmath>
#include <cstring>

#include "pad/errors.hpp"
#include "pad/graph.hpp"
#include "pad/rng.hpp"

using namespace pad;
using namespace pad::ag;

namespace {

Tensor random_tensor(Shape shape, RngStream& rng, double lo = -2.0, double hi = 2.0) {
    Tensor t(std::move(shape));
    for (i64 i = 0; i < t.numel(); ++i) t[i] = lo + (hi - lo) * rng.uniform();
    return t;
}

Shape random_shape(RngStream& rng, int max_rank = 3, i64 max_extent = 5) {
    int rank = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_rank)));
    Shape s(static_cast<size_t>(rank));
    for (auto& e : s) e = 1 + static_cast<i64>(rng.uniform_int(static_cast<std::uint64_t>(max_extent)));
    return s;
}

void check_fd(const std::function<NodePtr(const NodePtr&)>& f, const Tensor& x,
              double tol = 1e-6) {
    auto rep = finite_difference_check(f, x, 1e-5);
    CHECK(rep.max_rel_err <= tol);
}

}  // namespace

TEST_CASE("matmul identity") {
    RngStream rng(7, 1);
    Tensor a = random_tensor({2, 2}, rng);
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    auto y = matmul(constant(eye), constant(a.clone()));
    for (i64 i = 0; i < 4; ++i) CHECK(y->value[i] == doctest::Approx(a[i]).epsilon(1e-15));
}

TEST_CASE("matmul rejects mismatched shapes") {
    auto a = constant(Tensor::zeros({2, 3}));
    auto b = constant(Tensor::zeros({2, 3}));
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), std::invalid_argument);
}

TEST_CASE("batched matmul matches per-batch loop") {
    RngStream rng(7, 2);
    Tensor a = random_tensor({3, 4, 5}, rng), b = random_tensor({3, 5, 2}, rng);
    auto y = matmul(constant(a.clone()), constant(b.clone()));
    for (i64 g = 0; g < 3; ++g)
        for (i64 i = 0; i < 4; ++i)
            for (i64 j = 0; j < 2; ++j) {
                double acc = 0.0;
                for (i64 k = 0; k < 5; ++k) acc += a[(g * 4 + i) * 5 + k] * b[(g * 5 + k) * 2 + j];
                CHECK(y->value[(g * 4 + i) * 2 + j] == doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("smooth-l1 spec values") {
    // |d| > delta branch: |d| - delta/2.
    auto v = smooth_l1(constant_scalar(2.0), constant_scalar(0.0), 1.0);
    CHECK(v->value.item() == doctest::Approx(1.5).epsilon(1e-15));
    // quadratic branch
    auto w = smooth_l1(constant_scalar(0.5), constant_scalar(0.0), 1.0);
    CHECK(w->value.item() == doctest::Approx(0.125).epsilon(1e-15));
}

TEST_CASE("conv1d output length and brute-force oracle") {
    RngStream rng(7, 3);
    // length 8, kernel 3, stride 2, zero padding 1 -> output length 4
    const i64 L = 8, K = 3, S = 2, P = 1, B = 2, CIN = 3, COUT = 4;
    Tensor x = random_tensor({L, B, CIN}, rng);
    Tensor w = random_tensor({K * CIN, COUT}, rng);
    Tensor bias = random_tensor({COUT}, rng);
    auto y = conv1d(constant(x.clone()), constant(w.clone()), constant(bias.clone()), K, S, P);
    REQUIRE(y->value.shape() == Shape{4, B, COUT});

    // Sliding-window oracle over the zero-padded input.
    auto xpad = [&](i64 t, i64 b, i64 c) -> double {
        i64 src = t - P;
        if (src < 0 || src >= L) return 0.0;
        return x[(src * B + b) * CIN + c];
    };
    for (i64 t = 0; t < 4; ++t)
        for (i64 b = 0; b < B; ++b)
            for (i64 co = 0; co < COUT; ++co) {
                double acc = bias[co];
                for (i64 k = 0; k < K; ++k)
                    for (i64 ci = 0; ci < CIN; ++ci)
                        acc += xpad(t * S + k, b, ci) * w[(k * CIN + ci) * COUT + co];
                CHECK(y->value[(t * B + b) * COUT + co] == doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("grad of x*x") {
    auto x = leaf(Tensor::scalar(3.0), true);
    auto g = grad(mul(x, x), {x}, false);
    CHECK(g.at(x)->value.item() == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("grad rejects non-scalar outputs") {
    auto x = leaf(Tensor::zeros({2}), true);
    CHECK_THROWS_AS(grad(add(x, x), {x}, false), std::invalid_argument);
}

TEST_CASE("second-order grad of x^3 (symbolic oracle 6x)") {
    // Recorded first derivative 3x^2 evaluates to 12 at x=2; differentiating
    // it again gives 6x = 12.
    auto x = leaf(Tensor::scalar(2.0), true);
    auto y = mul(mul(x, x), x);
    auto g1 = grad(y, {x}, true);
    CHECK(g1.at(x)->value.item() == doctest::Approx(12.0).epsilon(1e-12));
    auto g2 = grad(g1.at(x), {x}, false);
    CHECK(g2.at(x)->value.item() == doctest::Approx(12.0).epsilon(1e-12));
}

TEST_CASE("second order on sum of cubes is exactly 6x") {
    RngStream rng(7, 4);
    Tensor xv = random_tensor({5}, rng);
    auto x = leaf(xv.clone(), true);
    auto f = sum_all(mul(mul(x, x), x));
    auto g1 = grad(f, {x}, true);
    auto g2 = grad(sum_all(g1.at(x)), {x}, false);
    for (i64 i = 0; i < 5; ++i)
        CHECK(std::fabs(g2.at(x)->value[i] - 6.0 * xv[i]) <= 1e-9);
}

TEST_CASE("stop_gradient blocks first and second order exactly") {
    auto x = leaf(Tensor::scalar(3.0), true);
    auto y = mul(stop_gradient(x), x);  // product rule with one factor constant
    auto g = grad(y, {x}, true);
    CHECK(g.at(x)->value.item() == 3.0);

    // value passes through untouched
    auto s = stop_gradient(x);
    CHECK(s->value.item() == x->value.item());

    // second-order pass contributes exactly zero through the stopped branch
    auto z = mul(stop_gradient(mul(x, x)), x);  // d/dx = stop(x^2) -> 9
    auto gz = grad(z, {x}, true);
    CHECK(gz.at(x)->value.item() == 9.0);
    auto gzz = grad(gz.at(x), {x}, false);
    CHECK(gzz.at(x)->value.item() == 0.0);
}

TEST_CASE("grad through unreachable node is zeros") {
    auto x = leaf(Tensor::scalar(1.0), true);
    auto y = leaf(Tensor::from({2}, {1.0, 2.0}), true);
    auto g = grad(mul(x, x), {y}, false);
    CHECK(g.at(y)->value[0] == 0.0);
    CHECK(g.at(y)->value[1] == 0.0);
}

TEST_CASE("finite_difference_check spec examples") {
    // sum of squares at (1,2): analytic (2,4), errors <= 1e-8
    auto rep = finite_difference_check(
        [](const NodePtr& v) { return sum_all(mul(v, v)); }, Tensor::from({2}, {1.0, 2.0}), 1e-5);
    CHECK(rep.analytic[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(rep.analytic[1] == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(rep.max_abs_err <= 1e-8);

    // constant function: gradient exactly zero
    auto repc = finite_difference_check(
        [](const NodePtr& v) {
            return sum_all(mul(stop_gradient(v), constant(Tensor::full(v->value.shape(), 2.0))));
        },
        Tensor::from({3}, {1.0, -1.0, 0.5}), 1e-5);
    for (i64 i = 0; i < 3; ++i) CHECK(repc.analytic[i] == 0.0);

    // layer-norm composite
    RngStream rng(7, 5);
    check_fd([](const NodePtr& v) { return sum_all(mul(layer_norm(v), layer_norm(v))); },
             random_tensor({3, 6}, rng));
}

TEST_CASE("finite differences pass for every catalog operation (20 random instances)") {
    RngStream rng(11, 0);
    auto w_for = [&](const Shape& s) { return random_tensor(s, rng, -1.0, 1.0); };

    for (int inst = 0; inst < 20; ++inst) {
        // elementwise binary ops
        {
            Shape s = random_shape(rng);
            Tensor other = w_for(s);
            check_fd([&](const NodePtr& v) { return sum_all(mul(add(v, constant(other.clone())), v)); },
                     random_tensor(s, rng));
            check_fd([&](const NodePtr& v) { return sum_all(mul(sub(v, constant(other.clone())), v)); },
                     random_tensor(s, rng));
            check_fd([&](const NodePtr& v) { return sum_all(mul(mul(v, constant(other.clone())), v)); },
                     random_tensor(s, rng));
            check_fd([](const NodePtr& v) { return sum_all(smul(mul(v, v), -1.7)); },
                     random_tensor(s, rng));
        }
        // broadcast add / mul against a trailing-suffix operand
        {
            Tensor b = w_for({4});
            check_fd([&](const NodePtr& v) { return sum_all(mul(badd(v, constant(b.clone())), v)); },
                     random_tensor({3, 4}, rng));
            check_fd([&](const NodePtr& v) { return sum_all(badd(constant(b.clone()), mul(v, v))); },
                     random_tensor({2, 3, 4}, rng));
            check_fd([&](const NodePtr& v) { return sum_all(mul(bmul(v, constant(b.clone())), v)); },
                     random_tensor({3, 4}, rng));
        }
        // matmul
        {
            Tensor w = w_for({4, 3});
            check_fd([&](const NodePtr& v) {
                return sum_all(mul(matmul(v, constant(w.clone())), matmul(v, constant(w.clone()))));
            }, random_tensor({2, 4}, rng));
        }
        // transpose / reshape / broadcast / slice / scatter / concat
        {
            check_fd([](const NodePtr& v) {
                return sum_all(mul(transpose(v, {1, 0}), transpose(v, {1, 0})));
            }, random_tensor({3, 5}, rng));
            check_fd([](const NodePtr& v) { return sum_all(mul(reshape(v, {6}), reshape(v, {6}))); },
                     random_tensor({2, 3}, rng));
            check_fd([](const NodePtr& v) {
                auto b = broadcast_to(v, {4, 3});
                return sum_all(mul(b, b));
            }, random_tensor({3}, rng));
            check_fd([](const NodePtr& v) {
                auto s = slice(v, 0, 1, 2, 2);
                return sum_all(mul(s, s));
            }, random_tensor({5, 2}, rng));
            check_fd([](const NodePtr& v) {
                auto s = scatter(v, 0, 1, 2, 7);
                return sum_all(mul(s, s));
            }, random_tensor({3, 2}, rng));
            check_fd([](const NodePtr& v) {
                auto c = concat({v, smul(v, 2.0)}, 1);
                return sum_all(mul(c, c));
            }, random_tensor({2, 3}, rng));
        }
        // reductions
        {
            check_fd([](const NodePtr& v) { auto s = sum_axis(v, 0); return sum_all(mul(s, s)); },
                     random_tensor({4, 3}, rng));
            check_fd([](const NodePtr& v) { auto m = mean_axis(v, 1); return sum_all(mul(m, m)); },
                     random_tensor({4, 3}, rng));
            check_fd([](const NodePtr& v) { return mean_all(mul(v, v)); },
                     random_tensor(random_shape(rng), rng));
        }
        // unary transcendental ops
        {
            Shape s = random_shape(rng);
            check_fd([](const NodePtr& v) { return sum_all(mul(ag::tanh(v), ag::tanh(v))); },
                     random_tensor(s, rng));
            check_fd([](const NodePtr& v) { return sum_all(ag::exp(v)); },
                     random_tensor(s, rng, -1.0, 1.0));
            check_fd([](const NodePtr& v) { return sum_all(mul(ag::sin(v), ag::cos(v))); },
                     random_tensor(s, rng));
            check_fd([](const NodePtr& v) { return sum_all(ag::sqrt(v)); },
                     random_tensor(s, rng, 0.5, 2.0));
            check_fd([](const NodePtr& v) { return sum_all(recip(v)); },
                     random_tensor(s, rng, 0.5, 2.0));
            check_fd([](const NodePtr& v) { return sum_all(gelu(v)); }, random_tensor(s, rng));
        }
        // smooth-l1 (random values stay away from the kink with prob. 1)
        {
            Shape s = random_shape(rng);
            Tensor target = w_for(s);
            check_fd([&](const NodePtr& v) {
                return sum_all(smooth_l1(v, constant(target.clone()), 1.0));
            }, random_tensor(s, rng, -3.0, 3.0));
        }
        // layer-norm and softmax composites
        {
            check_fd([](const NodePtr& v) {
                auto y = layer_norm(v);
                return sum_all(mul(y, mul(y, y)));
            }, random_tensor({2, 6}, rng));
            check_fd([](const NodePtr& v) {
                auto y = softmax_lastaxis(v);
                return sum_all(mul(y, mul(y, y)));
            }, random_tensor({3, 4}, rng));
        }
        // conv1d composite
        {
            Tensor w = w_for({6, 2});
            Tensor b = w_for({2});
            check_fd([&](const NodePtr& v) {
                auto y = conv1d(v, constant(w.clone()), constant(b.clone()), 3, 2, 1);
                return sum_all(mul(y, y));
            }, random_tensor({6, 2, 2}, rng));
        }
    }
}

TEST_CASE("gradient of a 2-layer MLP matches finite differences") {
    RngStream rng(13, 0);
    Tensor w1 = random_tensor({3, 8}, rng, -0.5, 0.5);
    Tensor b1 = random_tensor({8}, rng, -0.2, 0.2);
    Tensor w2 = random_tensor({8, 2}, rng, -0.5, 0.5);
    Tensor b2 = random_tensor({2}, rng, -0.2, 0.2);
    auto mlp = [&](const NodePtr& v) {
        auto h = gelu(badd(matmul(v, constant(w1.clone())), constant(b1.clone())));
        auto o = badd(matmul(h, constant(w2.clone())), constant(b2.clone()));
        return sum_all(mul(o, o));
    };
    check_fd(mlp, random_tensor({4, 3}, rng));
}

TEST_CASE("layer-norm/softmax reject degenerate inputs") {
    Tensor bad({2, 3});
    bad[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(softmax_lastaxis(constant(bad.clone())), NumericalError);
    Tensor nan_in = Tensor::full({2, 3}, std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_AS(layer_norm(constant(nan_in.clone())), NumericalError);
}

TEST_CASE("graph evaluation is deterministic bit-for-bit") {
    RngStream rng(17, 0);
    Tensor x = random_tensor({4, 6, 8}, rng);
    Tensor w = random_tensor({8, 8}, rng);
    auto build = [&]() {
        auto v = constant(x.clone());
        auto h = layer_norm(badd(matmul(reshape(v, {24, 8}), constant(w.clone())),
                                 constant(Tensor::full({8}, 0.1))));
        return sum_all(softmax_lastaxis(gelu(h)));
    };
    auto a = build();
    auto b = build();
    CHECK(a->value.item() == b->value.item());
    CHECK(std::memcmp(&a->value[0], &b->value[0], sizeof(double)) == 0);
}

TEST_CASE("gradient map only contains requested nodes with matching shapes") {
    RngStream rng(19, 0);
    auto x = leaf(random_tensor({3, 2}, rng), true);
    auto w = leaf(random_tensor({2, 4}, rng), true);
    auto other = leaf(random_tensor({5}, rng), true);
    auto y = sum_all(mul(matmul(x, w), matmul(x, w)));
    auto g = grad(y, {x, w}, false);
    CHECK(g.size() == 2);
    CHECK(g.at(x)->value.shape() == x->value.shape());
    CHECK(g.at(w)->value.shape() == w->value.shape());
    CHECK_THROWS_AS(g.at(other), std::invalid_argument);
}
