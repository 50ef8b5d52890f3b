#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "strack/grad_check.hpp"
#include "strack/tensor.hpp"
#include "strack/tensor_io.hpp"
#include "testing_util.hpp"

using namespace strack;
using namespace strack::testing;

namespace {

// Scalar-by-scalar 4-neighbor reference for bilinear sampling.
double bilinear_oracle_at(const Tensor& g, int c, double x, double y) {
    int H = g.dim(1), W = g.dim(2);
    int x0 = int(std::floor(x)), y0 = int(std::floor(y));
    double fx = x - x0, fy = y - y0;
    double acc = 0;
    for (int jy = 0; jy < 2; ++jy)
        for (int jx = 0; jx < 2; ++jx) {
            int xx = x0 + jx, yy = y0 + jy;
            if (xx < 0 || xx >= W || yy < 0 || yy >= H) continue;
            double wgt = (jx ? fx : 1 - fx) * (jy ? fy : 1 - fy);
            acc += wgt * g.value_at((int64_t(c) * H + yy) * W + xx);
        }
    return acc;
}

}  // namespace

TEST_CASE("matmul basics and oracle") {
    Tensor I = Tensor::from_data({2, 2}, {1, 0, 0, 1}, Dtype::F64);
    Tensor A = Tensor::from_data({2, 2}, {1, 2, 3, 4}, Dtype::F64);
    CHECK(bitwise_equal(matmul(I, A), A));

    Tensor Z = Tensor::zeros({2, 3}, Dtype::F64);
    std::mt19937 rng(1);
    Tensor B = rand_tensor(rng, {3, 4});
    Tensor ZB = matmul(Z, B);
    for (int64_t i = 0; i < ZB.numel(); ++i) CHECK(ZB.value_at(i) == 0.0);

    Tensor C = Tensor::from_data({2, 2}, {5, 6, 7, 8}, Dtype::F64);
    Tensor AC = matmul(A, C);
    CHECK(AC.value_at(0) == doctest::Approx(19).epsilon(1e-12));
    CHECK(AC.value_at(1) == doctest::Approx(22).epsilon(1e-12));
    CHECK(AC.value_at(2) == doctest::Approx(43).epsilon(1e-12));
    CHECK(AC.value_at(3) == doctest::Approx(50).epsilon(1e-12));

    for (int trial = 0; trial < 10; ++trial) {
        Tensor X = rand_tensor(rng, {5, 3});
        Tensor Y = rand_tensor(rng, {3, 6});
        CHECK(all_close(matmul(X, Y), matmul_oracle(X, Y), 1e-12));
    }

    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}, Dtype::F64), Tensor::zeros({2, 3}, Dtype::F64)),
                    ShapeError);
}

TEST_CASE("matmul associativity (f64)") {
    std::mt19937 rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor A = rand_tensor(rng, {4, 3});
        Tensor B = rand_tensor(rng, {3, 5});
        Tensor C = rand_tensor(rng, {5, 2});
        CHECK(all_close(matmul(matmul(A, B), C), matmul(A, matmul(B, C)), 1e-10));
    }
}

TEST_CASE("softmax_lastdim values, stability, invariants") {
    Tensor u = softmax_lastdim(Tensor::from_data({3}, {0, 0, 0}, Dtype::F64));
    for (int i = 0; i < 3; ++i) CHECK(u.value_at(i) == doctest::Approx(1.0 / 3).epsilon(1e-12));

    Tensor big = softmax_lastdim(Tensor::from_data({2}, {1000, 1000}, Dtype::F64));
    CHECK(big.value_at(0) == doctest::Approx(0.5).epsilon(1e-12));

    Tensor s = softmax_lastdim(Tensor::from_data({2}, {1, 2}, Dtype::F64));
    double e = std::exp(1.0);
    CHECK(s.value_at(0) == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-12));
    CHECK(s.value_at(1) == doctest::Approx(e / (1.0 + e)).epsilon(1e-12));

    // rows sum to 1; invariant to adding a constant per slice
    std::mt19937 rng(3);
    Tensor x = rand_tensor(rng, {4, 6}, Dtype::F64, -3, 3);
    Tensor y = softmax_lastdim(x);
    for (int r = 0; r < 4; ++r) {
        double sum = 0;
        for (int j = 0; j < 6; ++j) sum += y.value_at(r * 6 + j);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    Tensor ys = softmax_lastdim(add_scalar(x, 7.25));
    CHECK(all_close(y, ys, 1e-9));

    Tensor bad = Tensor::from_data({2}, {1, 0}, Dtype::F64);
    bad.set_value_at(1, std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(softmax_lastdim(bad), DomainError);
}

TEST_CASE("conv2d identity, constant, oracle") {
    std::mt19937 rng(4);
    Tensor x = rand_tensor(rng, {2, 5, 5});
    Tensor w = Tensor::zeros({2, 2, 1, 1}, Dtype::F64);
    w.set_value_at(0, 1.0);   // out0 <- in0
    w.set_value_at(3, 1.0);   // out1 <- in1
    Tensor b0 = Tensor::zeros({2}, Dtype::F64);
    CHECK(all_close(conv2d(x, w, b0, 1, 0), x, 0.0));

    Tensor wz = Tensor::zeros({3, 2, 3, 3}, Dtype::F64);
    Tensor bc = Tensor::full({3}, 2.5, Dtype::F64);
    Tensor yc = conv2d(x, wz, bc, 1, 1);
    for (int64_t i = 0; i < yc.numel(); ++i) CHECK(yc.value_at(i) == 2.5);

    for (int trial = 0; trial < 5; ++trial) {
        Tensor xi = rand_tensor(rng, {3, 6, 7});
        Tensor wi = rand_tensor(rng, {4, 3, 3, 3});
        Tensor bi = rand_tensor(rng, {4});
        for (int stride : {1, 2})
            CHECK(all_close(conv2d(xi, wi, bi, stride, 1), conv2d_oracle(xi, wi, bi, stride, 1),
                            1e-12));
    }

    // stride 2 with even input floors the output size (stem convention)
    Tensor x64 = Tensor::zeros({1, 8, 8}, Dtype::F64);
    Tensor w7 = Tensor::zeros({1, 1, 7, 7}, Dtype::F64);
    Tensor y = conv2d(x64, w7, Tensor::zeros({1}, Dtype::F64), 2, 3);
    CHECK(y.dim(1) == 4);

    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({2, 3, 3, 3}, Dtype::F64), b0, 1, 1), ShapeError);
}

TEST_CASE("gru_cell fixed point, shape, oracle") {
    auto zero_params = [](int ch, int cx, int k) {
        GruParams p;
        p.wz = Tensor::zeros({ch, ch + cx, k, k}, Dtype::F64);
        p.bz = Tensor::zeros({ch}, Dtype::F64);
        p.wr = Tensor::zeros({ch, ch + cx, k, k}, Dtype::F64);
        p.br = Tensor::zeros({ch}, Dtype::F64);
        p.wq = Tensor::zeros({ch, ch + cx, k, k}, Dtype::F64);
        p.bq = Tensor::zeros({ch}, Dtype::F64);
        return p;
    };
    GruParams p0 = zero_params(2, 3, 3);
    Tensor h0 = Tensor::zeros({2, 4, 4}, Dtype::F64);
    Tensor x0 = Tensor::zeros({3, 4, 4}, Dtype::F64);
    Tensor h1 = gru_cell(h0, x0, p0);
    CHECK(h1.shape() == std::vector<int>{2, 4, 4});
    for (int64_t i = 0; i < h1.numel(); ++i) CHECK(h1.value_at(i) == 0.0);

    std::mt19937 rng(5);
    Tensor hr = rand_tensor(rng, {2, 4, 4});
    Tensor xr = rand_tensor(rng, {3, 4, 4});
    GruParams pr;
    pr.wz = rand_tensor(rng, {2, 5, 3, 3});
    pr.bz = rand_tensor(rng, {2});
    pr.wr = rand_tensor(rng, {2, 5, 3, 3});
    pr.br = rand_tensor(rng, {2});
    pr.wq = rand_tensor(rng, {2, 5, 3, 3});
    pr.bq = rand_tensor(rng, {2});
    Tensor out = gru_cell(hr, xr, pr);
    CHECK(out.shape() == hr.shape());

    // Scalar oracle built from the conv oracle plus pointwise GRU algebra.
    Tensor hx = concat_channels({hr, xr});
    Tensor zc = conv2d_oracle(hx, pr.wz, pr.bz, 1, 1);
    Tensor rc = conv2d_oracle(hx, pr.wr, pr.br, 1, 1);
    int64_t n = hr.numel();
    Tensor rh = Tensor::zeros({2, 4, 4}, Dtype::F64);
    for (int64_t i = 0; i < n; ++i) {
        double r = 1.0 / (1.0 + std::exp(-rc.value_at(i)));
        rh.set_value_at(i, r * hr.value_at(i));
    }
    Tensor qc = conv2d_oracle(concat_channels({rh, xr}), pr.wq, pr.bq, 1, 1);
    for (int64_t i = 0; i < n; ++i) {
        double z = 1.0 / (1.0 + std::exp(-zc.value_at(i)));
        double q = std::tanh(qc.value_at(i));
        double expect = (1.0 - z) * hr.value_at(i) + z * q;
        CHECK(out.value_at(i) == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("bilinear_sample exactness and oracle") {
    std::mt19937 rng(6);
    Tensor g = rand_tensor(rng, {3, 5, 6});
    // integer coords reproduce grid values exactly
    Tensor coords = Tensor::zeros({2, 5, 6}, Dtype::F64);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 6; ++x) {
            coords.set_value_at(int64_t(y) * 6 + x, x);
            coords.set_value_at(30 + int64_t(y) * 6 + x, y);
        }
    CHECK(bitwise_equal(bilinear_sample(g, coords), g));

    // midpoint of two horizontally adjacent pixels
    Tensor mid = Tensor::from_data({2, 1, 1}, {1.5, 2.0}, Dtype::F64);
    Tensor vm = bilinear_sample(g, mid);
    for (int c = 0; c < 3; ++c) {
        double a = g.value_at((int64_t(c) * 5 + 2) * 6 + 1);
        double b = g.value_at((int64_t(c) * 5 + 2) * 6 + 2);
        CHECK(vm.value_at(c) == doctest::Approx((a + b) / 2).epsilon(1e-12));
    }

    // random fractional coords, incl. out-of-bounds, against the 4-neighbor oracle
    Tensor rc = rand_tensor(rng, {2, 3, 4}, Dtype::F64, -1.5, 7.0);
    Tensor rs = bilinear_sample(g, rc);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 12; ++i) {
            double x = rc.value_at(i), y = rc.value_at(12 + i);
            CHECK(rs.value_at(int64_t(c) * 12 + i) ==
                  doctest::Approx(bilinear_oracle_at(g, c, x, y)).epsilon(1e-12));
        }
}

TEST_CASE("backward: analytic cases and contracts") {
    Tensor x = Tensor::from_data({3}, {1, 2, 3}, Dtype::F64).set_tracked(true);
    Tensor loss = sum_all(mul(x, x));
    backward(loss);
    Tensor g = x.grad();
    CHECK(g.value_at(0) == 2.0);
    CHECK(g.value_at(1) == 4.0);
    CHECK(g.value_at(2) == 6.0);

    // gradient of an unused leaf stays zero
    Tensor unused = Tensor::from_data({2}, {5, 5}, Dtype::F64).set_tracked(true);
    CHECK(unused.grad().value_at(0) == 0.0);

    // repeated backward on the same graph is an error
    CHECK_THROWS_AS(backward(loss), ContractError);

    // non-scalar loss is an error
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(backward(y), ContractError);

    // gradients accumulate additively across separate graphs
    Tensor l2 = sum_all(mul(x, x));
    backward(l2);
    CHECK(x.grad().value_at(0) == 4.0);
    x.zero_grad();
    CHECK(x.grad().value_at(0) == 0.0);
}

TEST_CASE("mutating an operand after graph capture is detected") {
    Tensor x = Tensor::from_data({2}, {1, 2}, Dtype::F64).set_tracked(true);
    Tensor y = sum_all(mul_scalar(x, 3.0));
    x.set_value_at(0, 9.0);
    CHECK_THROWS_AS(backward(y), ContractError);
}

TEST_CASE("grad_check: linear exactness, quadratic, attention closure") {
    std::mt19937 rng(7);
    auto lin = [](const std::vector<Tensor>& in) { return sum_all(mul_scalar(in[0], 3.5)); };
    auto rep = grad_check("linear", lin, {rand_tensor(rng, {4, 4})});
    CHECK(rep.passed);
    CHECK(rep.max_rel_error < 1e-9);

    auto quad = [](const std::vector<Tensor>& in) { return sum_all(mul(in[0], in[0])); };
    Tensor q = Tensor::from_data({3}, {1, 2, 3}, Dtype::F64);
    auto rep2 = grad_check("sum_sq", quad, {q}, 1e-8);
    CHECK(rep2.passed);

    // softmax attention: softmax(q·kᵀ/√d)·v summed
    auto attn = [](const std::vector<Tensor>& in) {
        Tensor logits = mul_scalar(matmul(in[0], transpose2d(in[1])), 1.0 / 2.0);
        return sum_all(mul(matmul(softmax_lastdim(logits), in[2]), in[3]));
    };
    std::vector<Tensor> inputs = {rand_tensor(rng, {3, 4}), rand_tensor(rng, {5, 4}),
                                  rand_tensor(rng, {5, 4}), rand_tensor(rng, {3, 4})};
    auto rep3 = grad_check("softmax_attention", attn, inputs, 1e-4);
    CHECK(rep3.passed);
}

TEST_CASE("composite conv -> gru -> sum matches finite differences") {
    std::mt19937 rng(8);
    Tensor x = rand_tensor(rng, {2, 3, 3});
    Tensor w = rand_tensor(rng, {2, 2, 3, 3}, Dtype::F64, -0.5, 0.5);
    Tensor b = rand_tensor(rng, {2}, Dtype::F64, -0.1, 0.1);
    Tensor h = rand_tensor(rng, {2, 3, 3});
    Tensor wz = rand_tensor(rng, {2, 4, 3, 3}, Dtype::F64, -0.5, 0.5);
    Tensor wr = rand_tensor(rng, {2, 4, 3, 3}, Dtype::F64, -0.5, 0.5);
    Tensor wq = rand_tensor(rng, {2, 4, 3, 3}, Dtype::F64, -0.5, 0.5);
    Tensor bz = Tensor::zeros({2}, Dtype::F64);
    auto closure = [&](const std::vector<Tensor>& in) {
        Tensor c = conv2d(in[0], in[1], in[2], 1, 1);
        GruParams p{in[4], bz, in[5], bz, in[6], bz};
        return sum_all(gru_cell(in[3], c, p));
    };
    auto rep = grad_check("conv_gru_sum", closure, {x, w, b, h, wz, wr, wq}, 1e-4, 1e-4);
    CHECK(rep.passed);
}

TEST_CASE("more op gradients: norm, pool, pad, upsample, bce, channel ops") {
    std::mt19937 rng(9);
    auto in_norm = [](const std::vector<Tensor>& in) {
        return sum_all(mul(instance_norm(in[0], in[1], in[2]), in[3]));
    };
    CHECK(grad_check("instance_norm", in_norm,
                     {rand_tensor(rng, {2, 4, 4}), rand_tensor(rng, {2}), rand_tensor(rng, {2}),
                      rand_tensor(rng, {2, 4, 4})})
              .passed);

    auto pool = [](const std::vector<Tensor>& in) {
        return sum_all(mul(avg_pool2d(in[0]), in[1]));
    };
    CHECK(grad_check("avg_pool2d", pool, {rand_tensor(rng, {2, 4, 6}), rand_tensor(rng, {2, 2, 3})})
              .passed);

    auto pad = [](const std::vector<Tensor>& in) {
        return sum_all(mul(pad_reflect(in[0], 1, 2, 1, 0), in[1]));
    };
    CHECK(grad_check("pad_reflect", pad, {rand_tensor(rng, {2, 4, 4}), rand_tensor(rng, {2, 5, 7})})
              .passed);

    auto up = [](const std::vector<Tensor>& in) {
        return sum_all(mul(upsample_bilinear(in[0], 4), in[1]));
    };
    CHECK(grad_check("upsample_bilinear", up,
                     {rand_tensor(rng, {2, 3, 3}), rand_tensor(rng, {2, 12, 12})})
              .passed);

    Tensor targets = rand_tensor(rng, {1, 4, 4}, Dtype::F64, 0.0, 1.0);
    auto bce = [&](const std::vector<Tensor>& in) { return bce_with_logits_mean(in[0], targets); };
    CHECK(grad_check("bce_with_logits", bce, {rand_tensor(rng, {1, 4, 4}, Dtype::F64, -3, 3)})
              .passed);

    auto mcw = [](const std::vector<Tensor>& in) {
        return sum_all(mul(mul_channelwise(in[0], in[1]), in[2]));
    };
    CHECK(grad_check("mul_channelwise", mcw,
                     {rand_tensor(rng, {3, 3, 3}), rand_tensor(rng, {1, 3, 3}),
                      rand_tensor(rng, {3, 3, 3})})
              .passed);

    auto cat = [](const std::vector<Tensor>& in) {
        return sum_all(mul(concat_channels({in[0], in[1]}), in[2]));
    };
    CHECK(grad_check("concat_channels", cat,
                     {rand_tensor(rng, {2, 3, 3}), rand_tensor(rng, {1, 3, 3}),
                      rand_tensor(rng, {3, 3, 3})})
              .passed);

    auto bil = [](const std::vector<Tensor>& in) {
        return sum_all(mul(bilinear_sample(in[0], in[1]), in[2]));
    };
    // fractional coords keep clear of the interpolation kinks
    Tensor frac_coords = rand_tensor(rng, {2, 3, 3}, Dtype::F64, 0.2, 3.7);
    for (int64_t i = 0; i < frac_coords.numel(); ++i) {
        double v = frac_coords.value_at(i);
        if (std::abs(v - std::round(v)) < 0.05) frac_coords.set_value_at(i, v + 0.1);
    }
    CHECK(grad_check("bilinear_sample", bil,
                     {rand_tensor(rng, {2, 5, 5}), frac_coords, rand_tensor(rng, {2, 3, 3})})
              .passed);
}

TEST_CASE("no-grad mode produces plain values") {
    Tensor x = Tensor::from_data({2}, {1, 2}, Dtype::F64).set_tracked(true);
    {
        NoGradGuard ng;
        Tensor y = mul(x, x);
        CHECK_FALSE(y.tracked());
    }
    Tensor y2 = mul(x, x);
    CHECK(y2.tracked());
}

TEST_CASE("SPT0 round trip and parse errors") {
    std::mt19937 rng(10);
    for (Dtype dt : {Dtype::F32, Dtype::F64}) {
        Tensor t = rand_tensor(rng, {3, 4, 5}, dt);
        std::ostringstream os;
        write_tensor(os, t);
        std::string payload = os.str();
        CHECK(payload.substr(0, 4) == "SPT0");
        std::istringstream is(payload);
        Tensor back = read_tensor(is);
        CHECK(back.dtype() == dt);
        CHECK(bitwise_equal(t, back));
    }
    std::istringstream bad("SPTX____");
    CHECK_THROWS_AS(read_tensor(bad), ParseError);
    std::ostringstream os;
    write_tensor(os, Tensor::ones({4, 4}));
    std::string cut = os.str().substr(0, 20);
    std::istringstream trunc(cut);
    CHECK_THROWS_AS(read_tensor(trunc), ParseError);
}

TEST_CASE("f32 path agrees with f64 on shared kernels") {
    std::mt19937 rng(11);
    Tensor x64 = rand_tensor(rng, {3, 6, 6});
    Tensor w64 = rand_tensor(rng, {4, 3, 3, 3});
    Tensor b64 = rand_tensor(rng, {4});
    Tensor y64 = conv2d(x64, w64, b64, 1, 1);
    Tensor y32 = conv2d(x64.astype(Dtype::F32), w64.astype(Dtype::F32), b64.astype(Dtype::F32), 1, 1);
    CHECK(max_abs_diff(y64, y32.astype(Dtype::F64)) < 1e-5);
}
