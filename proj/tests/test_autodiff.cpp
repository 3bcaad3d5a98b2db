#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "lss/autodiff.hpp"
#include "lss/gradcheck.hpp"
#include "lss/rng.hpp"

using namespace lss;

namespace {

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double lo = -2.0, double hi = 2.0) {
    Tensor t = Tensor::zeros({r, c});
    for (double& x : t.data) x = rng.uniform(lo, hi);
    return t;
}

// Checks analytic gradients of an arbitrary scalar builder against central
// differences over every coordinate of every parameter.
double gc(std::vector<Tensor> params,
          const std::function<Var(Graph&, const std::vector<Var>&)>& build, double eps = 1e-5) {
    auto objective = [&]() {
        Graph g;
        std::vector<Var> vars;
        for (auto& p : params) vars.push_back(g.param(p));
        return g.value(build(g, vars)).data[0];
    };
    Graph g;
    std::vector<Var> vars;
    for (auto& p : params) vars.push_back(g.param(p));
    Var loss = build(g, vars);
    g.backward(loss);
    std::vector<Tensor> analytic;
    for (Var v : vars) analytic.push_back(g.grad(v));
    std::vector<Tensor*> pp;
    std::vector<const Tensor*> gp;
    for (std::size_t i = 0; i < params.size(); ++i) {
        pp.push_back(&params[i]);
        gp.push_back(&analytic[i]);
    }
    return grad_check(objective, pp, gp, eps);
}

// Reduce an op output to a scalar through a fixed random weighting so every
// output element receives a distinct adjoint.
Var weighted_sum(Graph& g, Var y, const Tensor& w) { return g.sum_all(g.mul(y, g.constant(w))); }

}  // namespace

TEST_CASE("grad_check on x^2 at x=3 reproduces the analytic slope") {
    Tensor x = Tensor::row({3.0});
    auto build = [](Graph& g, const std::vector<Var>& v) { return g.sum_all(g.mul(v[0], v[0])); };
    Graph g;
    std::vector<Var> vars = {g.param(x)};
    Var loss = build(g, vars);
    g.backward(loss);
    REQUIRE(g.grad(vars[0]).data[0] == Catch::Approx(6.0).margin(1e-12));
    REQUIRE(gc({x}, build) < 1e-10);
}

TEST_CASE("grad_check on softmax dot constant stays below 1e-8") {
    Rng rng(21);
    Tensor x = random_tensor(rng, 1, 5);
    Tensor c = random_tensor(rng, 1, 5);
    double err = gc({x}, [&](Graph& g, const std::vector<Var>& v) {
        return g.sum_all(g.mul(g.softmax_rows(v[0], 1.0), g.constant(c)));
    });
    REQUIRE(err < 1e-8);
}

TEST_CASE("grad_check validates eps and propagates non-finite evaluations") {
    Tensor x = Tensor::row({1.0});
    Tensor an = Tensor::row({0.0});
    std::vector<Tensor*> pp = {&x};
    std::vector<const Tensor*> gp = {&an};
    REQUIRE_THROWS_AS(grad_check([] { return 0.0; }, pp, gp, 1e-2), invalid_argument_error);
    REQUIRE_THROWS_AS(grad_check([] { return 0.0; }, pp, gp, 1e-8), invalid_argument_error);
    REQUIRE_THROWS_AS(grad_check([] { return std::nan(""); }, pp, gp, 1e-5),
                      numerical_failure_error);
}

TEST_CASE("every primitive backward matches central differences") {
    Rng rng(31);
    const double tol = 1e-6;

    SECTION("add, mul, scale") {
        Tensor a = random_tensor(rng, 3, 4), b = random_tensor(rng, 3, 4);
        Tensor w = random_tensor(rng, 3, 4);
        REQUIRE(gc({a, b}, [&](Graph& g, const std::vector<Var>& v) {
                    return weighted_sum(g, g.add(v[0], v[1]), w);
                }) < tol);
        REQUIRE(gc({a, b}, [&](Graph& g, const std::vector<Var>& v) {
                    return weighted_sum(g, g.mul(v[0], v[1]), w);
                }) < tol);
        REQUIRE(gc({a}, [&](Graph& g, const std::vector<Var>& v) {
                    return weighted_sum(g, g.scale(v[0], -1.7), w);
                }) < tol);
    }

    SECTION("add_rows bias broadcast") {
        Tensor a = random_tensor(rng, 5, 3), b = random_tensor(rng, 1, 3);
        Tensor w = random_tensor(rng, 5, 3);
        REQUIRE(gc({a, b}, [&](Graph& g, const std::vector<Var>& v) {
                    return weighted_sum(g, g.add_rows(v[0], v[1]), w);
                }) < tol);
    }

    SECTION("matmul and transpose") {
        Tensor a = random_tensor(rng, 4, 6), b = random_tensor(rng, 6, 3);
        Tensor w = random_tensor(rng, 4, 3);
        REQUIRE(gc({a, b}, [&](Graph& g, const std::vector<Var>& v) {
                    return weighted_sum(g, g.matmul(v[0], v[1]), w);
                }) < tol);
        Tensor wt = random_tensor(rng, 6, 4);
        REQUIRE(gc({a}, [&](Graph& g, const std::vector<Var>& v) {
                    return weighted_sum(g, g.transpose(v[0]), wt);
                }) < tol);
    }

    SECTION("slice, concat, gather") {
        Tensor a = random_tensor(rng, 4, 8);
        Tensor w = random_tensor(rng, 4, 3);
        REQUIRE(gc({a}, [&](Graph& g, const std::vector<Var>& v) {
                    return weighted_sum(g, g.slice_cols(v[0], 2, 3), w);
                }) < tol);
        Tensor b = random_tensor(rng, 4, 2);
        Tensor wc = random_tensor(rng, 4, 10);
        REQUIRE(gc({a, b}, [&](Graph& g, const std::vector<Var>& v) {
                    return weighted_sum(g, g.concat_cols({v[0], v[1]}), wc);
                }) < tol);
        Tensor c = random_tensor(rng, 2, 8);
        Tensor wr = random_tensor(rng, 6, 8);
        REQUIRE(gc({a, c}, [&](Graph& g, const std::vector<Var>& v) {
                    return weighted_sum(g, g.concat_rows({v[0], v[1]}), wr);
                }) < tol);
        // gather with repeated rows exercises adjoint accumulation
        Tensor wg = random_tensor(rng, 5, 8);
        REQUIRE(gc({a}, [&](Graph& g, const std::vector<Var>& v) {
                    return weighted_sum(g, g.gather_rows(v[0], {3, 0, 3, 1, 3}), wg);
                }) < tol);
    }

    SECTION("softmax and log softmax with temperature") {
        Tensor a = random_tensor(rng, 3, 7);
        Tensor w = random_tensor(rng, 3, 7);
        for (double lambda : {0.3, 1.0, 4.0}) {
            REQUIRE(gc({a}, [&](Graph& g, const std::vector<Var>& v) {
                        return weighted_sum(g, g.softmax_rows(v[0], lambda), w);
                    }) < tol);
            REQUIRE(gc({a}, [&](Graph& g, const std::vector<Var>& v) {
                        return weighted_sum(g, g.log_softmax_rows(v[0], lambda), w);
                    }) < tol);
        }
    }

    SECTION("layer norm over rows, including gamma and beta") {
        Tensor a = random_tensor(rng, 4, 6);
        Tensor gm = random_tensor(rng, 1, 6, 0.5, 1.5);
        Tensor bt = random_tensor(rng, 1, 6, -0.3, 0.3);
        Tensor w = random_tensor(rng, 4, 6);
        REQUIRE(gc({a, gm, bt}, [&](Graph& g, const std::vector<Var>& v) {
                    return weighted_sum(g, g.layer_norm_rows(v[0], v[1], v[2]), w);
                }) < tol);
    }

    SECTION("row normalizations") {
        Tensor a = random_tensor(rng, 3, 5, 0.5, 2.0);
        Tensor w = random_tensor(rng, 3, 5);
        REQUIRE(gc({a}, [&](Graph& g, const std::vector<Var>& v) {
                    return weighted_sum(g, g.l2_normalize_rows(v[0]), w);
                }) < tol);
        REQUIRE(gc({a}, [&](Graph& g, const std::vector<Var>& v) {
                    return weighted_sum(g, g.normalize_sum_rows(v[0]), w);
                }) < tol);
    }

    SECTION("log, gelu, mean_rows") {
        Tensor a = random_tensor(rng, 3, 5, 0.2, 3.0);
        Tensor w = random_tensor(rng, 3, 5);
        REQUIRE(gc({a}, [&](Graph& g, const std::vector<Var>& v) {
                    return weighted_sum(g, g.log_elem(v[0]), w);
                }) < tol);
        Tensor b = random_tensor(rng, 3, 5);
        REQUIRE(gc({b}, [&](Graph& g, const std::vector<Var>& v) {
                    return weighted_sum(g, g.gelu(v[0]), w);
                }) < tol);
        Tensor wm = random_tensor(rng, 1, 5);
        REQUIRE(gc({b}, [&](Graph& g, const std::vector<Var>& v) {
                    return weighted_sum(g, g.mean_rows(v[0]), wm);
                }) < tol);
    }

    SECTION("randomized composite graphs up to dim 32") {
        for (int rep = 0; rep < 10; ++rep) {
            const std::size_t n = 2 + rng.uniform_int(31);
            const std::size_t m = 2 + rng.uniform_int(31);
            Tensor a = random_tensor(rng, 4, n);
            Tensor b = random_tensor(rng, n, m);
            Tensor gm = random_tensor(rng, 1, m, 0.5, 1.5);
            Tensor bt = random_tensor(rng, 1, m, -0.2, 0.2);
            Tensor w = random_tensor(rng, 4, m);
            double err = gc({a, b, gm, bt}, [&](Graph& g, const std::vector<Var>& v) {
                Var h = g.matmul(v[0], v[1]);
                h = g.layer_norm_rows(h, v[2], v[3]);
                h = g.softmax_rows(h, 0.7);
                return weighted_sum(g, h, w);
            });
            REQUIRE(err < tol);
        }
    }
}

TEST_CASE("value reuse accumulates adjoints correctly") {
    Rng rng(41);
    Tensor x = random_tensor(rng, 2, 3);
    Tensor w = random_tensor(rng, 2, 3);
    // x appears on three paths: mul(x,x), add(x, .), and a gather
    double err = gc({x}, [&](Graph& g, const std::vector<Var>& v) {
        Var sq = g.mul(v[0], v[0]);
        Var mix = g.add(sq, v[0]);
        Var gathered = g.gather_rows(v[0], {1, 1});
        return g.add(weighted_sum(g, mix, w), g.sum_all(gathered));
    });
    REQUIRE(err < 1e-6);
}

TEST_CASE("tape is topologically ordered by construction") {
    Graph g;
    Var a = g.param(Tensor::row({1.0, 2.0}));
    Var b = g.softmax_rows(a, 1.0);
    Var c = g.add(a, b);
    g.sum_all(g.mul(c, c));
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (std::uint32_t in : g.node_inputs(i)) REQUIRE(in < i);
    }
}

TEST_CASE("backward requires a scalar output and skips constant subgraphs") {
    Graph g;
    Var a = g.param(Tensor::row({1.0, 2.0}));
    Var c = g.constant(Tensor::row({3.0, 4.0}));
    Var prod = g.mul(a, c);
    REQUIRE_THROWS_AS(g.backward(prod), invalid_argument_error);
    Var loss = g.sum_all(prod);
    g.backward(loss);
    REQUIRE(g.grad(a).data[0] == Catch::Approx(3.0));
    REQUIRE(g.grad(a).data[1] == Catch::Approx(4.0));
    REQUIRE(g.grad(c).data.empty());  // constants carry no adjoint
}

TEST_CASE("graph ops validate shapes") {
    Graph g;
    Var a = g.param(Tensor::zeros({2, 3}));
    Var b = g.param(Tensor::zeros({3, 2}));
    REQUIRE_THROWS_AS(g.add(a, b), invalid_argument_error);
    REQUIRE_THROWS_AS(g.matmul(a, a), invalid_argument_error);
    REQUIRE_THROWS_AS(g.slice_cols(a, 2, 2), invalid_argument_error);
    REQUIRE_THROWS_AS(g.softmax_rows(a, 0.0), invalid_argument_error);
    REQUIRE_THROWS_AS(g.gather_rows(a, {5}), invalid_argument_error);
    Var zero_row = g.constant(Tensor::zeros({1, 3}));
    REQUIRE_THROWS_AS(g.l2_normalize_rows(zero_row), degenerate_input_error);
}
