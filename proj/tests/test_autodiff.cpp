#include <doctest.h>

#include <cmath>
#include <functional>

#include "oss/autodiff.hpp"
#include "oss/rng.hpp"

using namespace oss;
using ad::NodePtr;
using ad::Tape;
using ad::Tensor;

namespace {

ad::Param make_param(const std::string& name, std::vector<int> shape, Rng& rng,
                     double scale = 0.5) {
    ad::Param p;
    p.name = name;
    p.value = Tensor(std::move(shape));
    for (double& v : p.value.data) v = rng.uniform(-scale, scale);
    p.grad = Tensor(p.value.shape);
    return p;
}

// Builds the graph on the given tape over leaves of all params, returns the
// scalar loss node.
using Builder = std::function<NodePtr(Tape&, std::vector<NodePtr>&)>;

// Max relative error between reverse-mode and central finite differences over
// every element of every parameter.
double gradcheck(std::vector<ad::Param*> params, const Builder& build, double h = 1e-5) {
    Tape tape(true);
    std::vector<NodePtr> leaves;
    for (ad::Param* p : params) {
        p->zero_grad();
        leaves.push_back(tape.leaf(*p));
    }
    tape.backward(build(tape, leaves));

    double max_rel = 0.0;
    for (ad::Param* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double saved = p->value.data[i];
            const auto eval = [&](double v) {
                p->value.data[i] = v;
                Tape t2(false);
                std::vector<NodePtr> l2;
                for (ad::Param* q : params) l2.push_back(t2.leaf(*q));
                const double out = build(t2, l2)->val.data[0];
                p->value.data[i] = saved;
                return out;
            };
            const double fd = (eval(saved + h) - eval(saved - h)) / (2.0 * h);
            const double rel =
                std::abs(p->grad.data[i] - fd) / std::max(1.0, std::abs(fd));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

// Scalar reduction usable as a generic differentiable loss head.
NodePtr reduce_loss(Tape& t, const NodePtr& x) {
    std::vector<int> flat = {1, static_cast<int>(x->val.size())};
    NodePtr row = ad::reshape(t, x, flat);
    NodePtr probs = ad::sigmoid(t, row);
    std::vector<double> labels(x->val.size());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 2 ? 1.0 : 0.0;
    return ad::bce_mean(t, ad::reshape(t, probs, {static_cast<int>(x->val.size())}), labels);
}

}  // namespace

TEST_CASE("gradient of a plain sum is all ones") {
    Rng rng(1);
    ad::Param x = make_param("x", {1, 6}, rng);
    Tape tape(true);
    NodePtr leaf = tape.leaf(x);
    Tensor ones({1, 6});
    std::fill(ones.data.begin(), ones.data.end(), 1.0);
    NodePtr w = tape.constant(ones);
    NodePtr b = tape.constant(Tensor({1}));
    NodePtr y = ad::linear(tape, leaf, w, b);
    tape.backward(ad::reshape(tape, y, {1}));
    for (double g : x.grad.data) CHECK(g == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("linear layer matches a quadratic-form hand gradient") {
    // loss = (w.x)^2 / 2 via two stacked linears; d/dx = (w.x) w, d/dw = (w.x) x.
    Rng rng(2);
    ad::Param x = make_param("x", {1, 4}, rng);
    ad::Param w = make_param("w", {1, 4}, rng);
    Tape tape(true);
    NodePtr xl = tape.leaf(x), wl = tape.leaf(w);
    NodePtr b = tape.constant(Tensor({1}));
    NodePtr s = ad::linear(tape, xl, wl, b);       // [1,1] = w.x
    NodePtr sq = ad::linear(tape, s, s, b);        // (w.x)^2 reuses s as weight
    tape.backward(ad::reshape(tape, sq, {1}));
    double dot = 0.0;
    for (int i = 0; i < 4; ++i) dot += x.value.data[i] * w.value.data[i];
    for (int i = 0; i < 4; ++i) {
        CHECK(x.grad.data[i] == doctest::Approx(2.0 * dot * w.value.data[i]).epsilon(1e-10));
        CHECK(w.grad.data[i] == doctest::Approx(2.0 * dot * x.value.data[i]).epsilon(1e-10));
    }
}

TEST_CASE("conv3d identity and summing kernels") {
    Rng rng(3);
    ad::Param x = make_param("x", {1, 1, 3, 3, 3}, rng);
    Tape tape(false);
    NodePtr xl = tape.leaf(x);
    Tensor w1({1, 1, 1, 1, 1});
    w1.data[0] = 1.0;
    NodePtr id = ad::conv3d(tape, xl, tape.constant(w1), tape.constant(Tensor({1})), 1, 0);
    CHECK(id->val.data == x.value.data);

    Tensor xin({1, 1, 3, 3, 3});
    std::fill(xin.data.begin(), xin.data.end(), 1.0);
    Tensor w3({1, 1, 3, 3, 3});
    std::fill(w3.data.begin(), w3.data.end(), 1.0);
    NodePtr sum = ad::conv3d(tape, tape.constant(xin), tape.constant(w3),
                             tape.constant(Tensor({1})), 1, 0);
    CHECK(sum->val.size() == 1);
    CHECK(sum->val.data[0] == doctest::Approx(27.0));
}

TEST_CASE("conv3d matches a naive six-loop reference") {
    Rng rng(4);
    ad::Param x = make_param("x", {1, 2, 4, 4, 4}, rng);
    ad::Param w = make_param("w", {3, 2, 2, 2, 2}, rng);
    ad::Param b = make_param("b", {3}, rng);
    for (int stride : {1, 2}) {
        for (int pad : {0, 1}) {
            Tape tape(false);
            NodePtr y = ad::conv3d(tape, tape.leaf(x), tape.leaf(w), tape.leaf(b), stride, pad);
            const int out = (4 + 2 * pad - 2) / stride + 1;
            REQUIRE(y->val.shape == std::vector<int>{1, 3, out, out, out});
            for (int oo = 0; oo < 3; ++oo) {
                for (int zz = 0; zz < out; ++zz) {
                    for (int yy = 0; yy < out; ++yy) {
                        for (int xx = 0; xx < out; ++xx) {
                            double acc = b.value.data[static_cast<std::size_t>(oo)];
                            for (int cc = 0; cc < 2; ++cc) {
                                for (int kz = 0; kz < 2; ++kz) {
                                    for (int ky = 0; ky < 2; ++ky) {
                                        for (int kx = 0; kx < 2; ++kx) {
                                            const int z = zz * stride - pad + kz;
                                            const int yv = yy * stride - pad + ky;
                                            const int xv = xx * stride - pad + kx;
                                            if (z < 0 || yv < 0 || xv < 0 || z >= 4 || yv >= 4 ||
                                                xv >= 4) {
                                                continue;
                                            }
                                            acc += x.value.data[((static_cast<std::size_t>(cc) * 4 +
                                                                  z) * 4 + yv) * 4 + xv] *
                                                   w.value.data[(((static_cast<std::size_t>(oo) * 2 +
                                                                   cc) * 2 + kz) * 2 + ky) * 2 + kx];
                                        }
                                    }
                                }
                            }
                            const double got =
                                y->val.data[((static_cast<std::size_t>(oo) * out + zz) * out + yy) *
                                                out + xx];
                            CHECK(got == doctest::Approx(acc).epsilon(1e-12));
                        }
                    }
                }
            }
        }
    }
}

TEST_CASE("conv3d is linear in its input") {
    Rng rng(5);
    ad::Param u = make_param("u", {1, 1, 3, 3, 3}, rng);
    ad::Param v = make_param("v", {1, 1, 3, 3, 3}, rng);
    ad::Param w = make_param("w", {2, 1, 2, 2, 2}, rng);
    Tensor zero_b({2});
    const double a = 1.7, bcoef = -0.6;
    Tensor comb({1, 1, 3, 3, 3});
    for (std::size_t i = 0; i < comb.size(); ++i) {
        comb.data[i] = a * u.value.data[i] + bcoef * v.value.data[i];
    }
    Tape tape(false);
    NodePtr yu = ad::conv3d(tape, tape.leaf(u), tape.leaf(w), tape.constant(zero_b), 1, 0);
    NodePtr yv = ad::conv3d(tape, tape.leaf(v), tape.leaf(w), tape.constant(zero_b), 1, 0);
    NodePtr yc = ad::conv3d(tape, tape.constant(comb), tape.leaf(w), tape.constant(zero_b), 1, 0);
    for (std::size_t i = 0; i < yc->val.size(); ++i) {
        CHECK(yc->val.data[i] ==
              doctest::Approx(a * yu->val.data[i] + bcoef * yv->val.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("pau closed-form cases") {
    Tape tape(false);
    Tensor xs({5});
    xs.data = {-2.0, -0.5, 0.0, 1.0, 3.0};
    NodePtr x = tape.constant(xs);

    Tensor zero_num({6}), iden_num({6}), zero_den({4});
    iden_num.data[1] = 1.0;
    NodePtr all_zero = ad::pau(tape, x, tape.constant(zero_num), tape.constant(zero_den));
    for (double v : all_zero->val.data) CHECK(v == 0.0);

    NodePtr iden = ad::pau(tape, x, tape.constant(iden_num), tape.constant(zero_den));
    for (std::size_t i = 0; i < xs.size(); ++i) {
        CHECK(iden->val.data[i] == doctest::Approx(xs.data[i]).epsilon(1e-14));
    }

    // Safe denominator keeps outputs finite even for large inputs.
    Rng rng(6);
    ad::Param num = make_param("a", {6}, rng);
    ad::Param den = make_param("b", {4}, rng);
    Tensor big({3});
    big.data = {-1e6, 1e6, 12345.0};
    NodePtr safe = ad::pau(tape, tape.constant(big), tape.leaf(num), tape.leaf(den));
    for (double v : safe->val.data) CHECK(std::isfinite(v));
}

TEST_CASE("cond_batchnorm train-mode normalization") {
    Rng rng(7);
    ad::Param x = make_param("x", {8, 3}, rng, 2.0);
    ad::Param rmean = make_param("rm", {3}, rng, 0.0);
    ad::Param rvar = make_param("rv", {3}, rng, 0.0);
    std::fill(rvar.value.data.begin(), rvar.value.data.end(), 1.0);
    const std::vector<double> rm0 = rmean.value.data, rv0 = rvar.value.data;

    Tape tape(false);
    Tensor gamma({3}), beta({3});
    std::fill(gamma.data.begin(), gamma.data.end(), 1.0);
    beta.data = {0.3, -0.2, 0.1};
    NodePtr y = ad::cond_batchnorm(tape, tape.leaf(x), tape.constant(gamma), tape.constant(beta),
                                   {&rmean, &rvar}, ad::Mode::Train);
    for (int j = 0; j < 3; ++j) {
        double mean = 0.0, var = 0.0;
        for (int r = 0; r < 8; ++r) mean += y->val.data[static_cast<std::size_t>(r) * 3 + j];
        mean /= 8.0;
        for (int r = 0; r < 8; ++r) {
            const double d = y->val.data[static_cast<std::size_t>(r) * 3 + j] - mean;
            var += d * d;
        }
        var /= 8.0;
        CHECK(mean == doctest::Approx(beta.data[static_cast<std::size_t>(j)]).epsilon(1e-6));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps-stabilized
    }
    // Running statistics follow the momentum update with unbiased variance.
    for (int j = 0; j < 3; ++j) {
        double mu = 0.0;
        for (int r = 0; r < 8; ++r) mu += x.value.data[static_cast<std::size_t>(r) * 3 + j];
        mu /= 8.0;
        double var = 0.0;
        for (int r = 0; r < 8; ++r) {
            const double d = x.value.data[static_cast<std::size_t>(r) * 3 + j] - mu;
            var += d * d;
        }
        var /= 8.0;
        CHECK(rmean.value.data[static_cast<std::size_t>(j)] ==
              doctest::Approx(0.9 * rm0[static_cast<std::size_t>(j)] + 0.1 * mu).epsilon(1e-12));
        CHECK(rvar.value.data[static_cast<std::size_t>(j)] ==
              doctest::Approx(0.9 * rv0[static_cast<std::size_t>(j)] + 0.1 * var * 8.0 / 7.0)
                  .epsilon(1e-12));
    }
}

TEST_CASE("cond_batchnorm constant feature reduces to beta") {
    Rng rng(8);
    ad::Param rmean = make_param("rm", {1}, rng, 0.0);
    ad::Param rvar = make_param("rv", {1}, rng, 0.0);
    rvar.value.data[0] = 1.0;
    Tape tape(false);
    Tensor x({4, 1});
    std::fill(x.data.begin(), x.data.end(), 2.5);
    Tensor gamma({1}), beta({1});
    gamma.data[0] = 3.0;
    beta.data[0] = -0.7;
    NodePtr y = ad::cond_batchnorm(tape, tape.constant(x), tape.constant(gamma),
                                   tape.constant(beta), {&rmean, &rvar}, ad::Mode::Train);
    for (double v : y->val.data) CHECK(v == doctest::Approx(-0.7).epsilon(1e-9));
}

TEST_CASE("cond_batchnorm eval mode matches the scalar hand formula") {
    Rng rng(9);
    ad::Param rmean = make_param("rm", {1}, rng, 0.0);
    ad::Param rvar = make_param("rv", {1}, rng, 0.0);
    rmean.value.data[0] = 0.4;
    rvar.value.data[0] = 2.0;
    Tape tape(false);
    Tensor x({3, 1});
    x.data = {1.0, -0.5, 2.0};
    Tensor gamma({1}), beta({1});
    gamma.data[0] = 1.5;
    beta.data[0] = 0.25;
    NodePtr y = ad::cond_batchnorm(tape, tape.constant(x), tape.constant(gamma),
                                   tape.constant(beta), {&rmean, &rvar}, ad::Mode::Eval, 1e-5);
    for (int r = 0; r < 3; ++r) {
        const double expect =
            (x.data[static_cast<std::size_t>(r)] - 0.4) / std::sqrt(2.0 + 1e-5) * 1.5 + 0.25;
        CHECK(y->val.data[static_cast<std::size_t>(r)] == doctest::Approx(expect).epsilon(1e-14));
    }
    // Eval mode leaves running stats untouched.
    CHECK(rmean.value.data[0] == 0.4);
    CHECK(rvar.value.data[0] == 2.0);
}

TEST_CASE("bce_mean analytic probability gradient") {
    Rng rng(10);
    ad::Param p = make_param("p", {4}, rng, 0.0);
    p.value.data = {0.9, 0.2, 0.6, 0.35};
    const std::vector<double> labels = {1.0, 0.0, 0.0, 1.0};
    Tape tape(true);
    NodePtr leaf = tape.leaf(p);
    tape.backward(ad::bce_mean(tape, leaf, labels));
    for (std::size_t i = 0; i < 4; ++i) {
        const double pv = p.value.data[i];
        const double expect = (pv - labels[i]) / (pv * (1.0 - pv)) / 4.0;
        CHECK(p.grad.data[i] == doctest::Approx(expect).epsilon(1e-8));
    }
}

TEST_CASE("non-finite loss reports the offending op") {
    Rng rng(11);
    ad::Param p = make_param("p", {2}, rng, 0.0);
    p.value.data = {std::nan(""), 0.5};
    Tape tape(true);
    NodePtr leaf = tape.leaf(p);
    NodePtr loss = ad::bce_mean(tape, leaf, {1.0, 0.0});
    CHECK_THROWS_WITH_AS(tape.backward(loss), doctest::Contains("bce_mean"), NumericError);
}

TEST_CASE("finite-difference gradcheck per op") {
    Rng rng(12);
    const double tol = 1e-6;

    SUBCASE("linear") {
        ad::Param x = make_param("x", {3, 4}, rng);
        ad::Param w = make_param("w", {2, 4}, rng);
        ad::Param b = make_param("b", {2}, rng);
        CHECK(gradcheck({&x, &w, &b}, [](Tape& t, std::vector<NodePtr>& l) {
                  return reduce_loss(t, ad::linear(t, l[0], l[1], l[2]));
              }) < tol);
    }
    SUBCASE("conv3d strided padded") {
        ad::Param x = make_param("x", {2, 2, 3, 3, 3}, rng);
        ad::Param w = make_param("w", {2, 2, 3, 3, 3}, rng);
        ad::Param b = make_param("b", {2}, rng);
        CHECK(gradcheck({&x, &w, &b}, [](Tape& t, std::vector<NodePtr>& l) {
                  return reduce_loss(t, ad::conv3d(t, l[0], l[1], l[2], 2, 1));
              }) < tol);
    }
    SUBCASE("pau") {
        ad::Param x = make_param("x", {1, 5}, rng, 2.0);
        ad::Param a = make_param("a", {6}, rng);
        ad::Param b = make_param("b", {4}, rng);
        CHECK(gradcheck({&x, &a, &b}, [](Tape& t, std::vector<NodePtr>& l) {
                  return reduce_loss(t, ad::pau(t, l[0], l[1], l[2]));
              }) < tol);
    }
    SUBCASE("leaky relu and sigmoid chain") {
        ad::Param x = make_param("x", {2, 6}, rng, 1.5);
        CHECK(gradcheck({&x}, [](Tape& t, std::vector<NodePtr>& l) {
                  return reduce_loss(t, ad::leaky_relu(t, l[0], 0.01));
              }) < tol);
    }
    SUBCASE("cond_batchnorm train mode through batch statistics") {
        ad::Param x = make_param("x", {5, 3}, rng, 1.0);
        ad::Param g = make_param("g", {1, 3}, rng);
        ad::Param be = make_param("be", {1, 3}, rng);
        ad::Param rmean = make_param("rm", {3}, rng, 0.0);
        ad::Param rvar = make_param("rv", {3}, rng, 0.0);
        std::fill(rvar.value.data.begin(), rvar.value.data.end(), 1.0);
        const std::vector<double> rm0 = rmean.value.data, rv0 = rvar.value.data;
        CHECK(gradcheck({&x, &g, &be}, [&](Tape& t, std::vector<NodePtr>& l) {
                  // Reset running stats so repeated FD evals see one state.
                  rmean.value.data = rm0;
                  rvar.value.data = rv0;
                  NodePtr gr = ad::reshape(t, l[1], {3});
                  NodePtr br = ad::reshape(t, l[2], {3});
                  return reduce_loss(t, ad::cond_batchnorm(t, l[0], gr, br, {&rmean, &rvar},
                                                           ad::Mode::Train));
              }) < tol);
    }
    SUBCASE("concat_rows over mixed-height blocks") {
        ad::Param x = make_param("x", {2, 3}, rng);
        ad::Param y = make_param("y", {1, 3}, rng);
        ad::Param z = make_param("z", {4, 3}, rng);
        CHECK(gradcheck({&x, &y, &z}, [](Tape& t, std::vector<NodePtr>& l) {
                  NodePtr wide = ad::broadcast_rows(t, l[1], 3);  // [3,3]
                  return reduce_loss(t, ad::concat_rows(t, {l[0], wide, l[2]}));
              }) < tol);
    }
    SUBCASE("cond_batchnorm train mode with per-row affine") {
        ad::Param x = make_param("x", {5, 3}, rng, 1.0);
        ad::Param g = make_param("g", {5, 3}, rng);
        ad::Param be = make_param("be", {5, 3}, rng);
        ad::Param rmean = make_param("rm", {3}, rng, 0.0);
        ad::Param rvar = make_param("rv", {3}, rng, 0.0);
        std::fill(rvar.value.data.begin(), rvar.value.data.end(), 1.0);
        const std::vector<double> rm0 = rmean.value.data, rv0 = rvar.value.data;
        CHECK(gradcheck({&x, &g, &be}, [&](Tape& t, std::vector<NodePtr>& l) {
                  rmean.value.data = rm0;
                  rvar.value.data = rv0;
                  return reduce_loss(t, ad::cond_batchnorm(t, l[0], l[1], l[2], {&rmean, &rvar},
                                                           ad::Mode::Train));
              }) < tol);
    }
    SUBCASE("pool concat broadcast composition") {
        ad::Param x = make_param("x", {1, 2, 2, 2, 2}, rng);
        ad::Param y = make_param("y", {3, 2}, rng);
        CHECK(gradcheck({&x, &y}, [](Tape& t, std::vector<NodePtr>& l) {
                  NodePtr pooled = ad::global_avg_pool(t, l[0]);      // [1,2]
                  NodePtr wide = ad::broadcast_rows(t, pooled, 3);    // [3,2]
                  NodePtr cat = ad::concat_cols(t, {wide, l[1]});     // [3,4]
                  return reduce_loss(t, cat);
              }) < tol);
    }
    SUBCASE("residual add") {
        ad::Param x = make_param("x", {2, 3}, rng);
        ad::Param y = make_param("y", {2, 3}, rng);
        CHECK(gradcheck({&x, &y}, [](Tape& t, std::vector<NodePtr>& l) {
                  return reduce_loss(t, ad::add(t, l[0], ad::leaky_relu(t, l[1], 0.01)));
              }) < tol);
    }
}

TEST_CASE("concat_rows stacks row blocks in order") {
    Tape tape(false);
    NodePtr a = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    NodePtr b = tape.constant(Tensor({1, 2}, {5, 6}));
    NodePtr cat = ad::concat_rows(tape, {a, b});
    CHECK(cat->val.dim(0) == 3);
    CHECK(cat->val.dim(1) == 2);
    CHECK(cat->val.data == std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS(ad::concat_rows(tape, {}), ArgumentError);
    NodePtr wide = tape.constant(Tensor({1, 3}, {0, 0, 0}));
    CHECK_THROWS_AS(ad::concat_rows(tape, {a, wide}), ShapeError);
}

TEST_CASE("per-row affine batchnorm with equal rows matches the shared form") {
    Rng rng(11);
    ad::Param x = make_param("x", {4, 3}, rng, 1.0);
    ad::Param g = make_param("g", {1, 3}, rng);
    ad::Param be = make_param("be", {1, 3}, rng);
    ad::Param rm_a = make_param("rma", {3}, rng, 0.0);
    ad::Param rv_a = make_param("rva", {3}, rng, 0.0);
    ad::Param rm_b = make_param("rmb", {3}, rng, 0.0);
    ad::Param rv_b = make_param("rvb", {3}, rng, 0.0);
    std::fill(rv_a.value.data.begin(), rv_a.value.data.end(), 1.0);
    std::fill(rv_b.value.data.begin(), rv_b.value.data.end(), 1.0);

    Tape tape(false);
    NodePtr xs = tape.leaf(x);
    NodePtr shared =
        ad::cond_batchnorm(tape, xs, ad::reshape(tape, tape.leaf(g), {3}),
                           ad::reshape(tape, tape.leaf(be), {3}), {&rm_a, &rv_a},
                           ad::Mode::Train);
    NodePtr per_row =
        ad::cond_batchnorm(tape, xs, ad::broadcast_rows(tape, tape.leaf(g), 4),
                           ad::broadcast_rows(tape, tape.leaf(be), 4), {&rm_b, &rv_b},
                           ad::Mode::Train);
    for (std::size_t i = 0; i < shared->val.size(); ++i) {
        CHECK(per_row->val.data[i] == doctest::Approx(shared->val.data[i]).epsilon(1e-12));
    }
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(rm_b.value.data[j] == doctest::Approx(rm_a.value.data[j]).epsilon(1e-12));
        CHECK(rv_b.value.data[j] == doctest::Approx(rv_a.value.data[j]).epsilon(1e-12));
    }
}
