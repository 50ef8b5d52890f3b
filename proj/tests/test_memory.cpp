#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "strack/grad_check.hpp"
#include "strack/memory.hpp"
#include "testing_util.hpp"

using namespace strack;
using namespace strack::testing;

namespace {

// Brute-force scaled dot-product attention over explicit rows.
std::vector<double> attention_oracle(const Tensor& q, const std::vector<std::vector<double>>& keys,
                                     const std::vector<std::vector<double>>& vals, int dk, int dv) {
    int P = q.dim(0);
    int R = int(keys.size());
    std::vector<double> out(size_t(P) * dv, 0.0);
    for (int p = 0; p < P; ++p) {
        std::vector<double> logits(R);
        double mx = -1e300;
        for (int r = 0; r < R; ++r) {
            double dot = 0;
            for (int j = 0; j < dk; ++j) dot += q.value_at(int64_t(p) * dk + j) * keys[r][j];
            logits[r] = dot / std::sqrt(double(dk));
            mx = std::max(mx, logits[r]);
        }
        double denom = 0;
        for (int r = 0; r < R; ++r) denom += std::exp(logits[r] - mx);
        for (int r = 0; r < R; ++r) {
            double a = std::exp(logits[r] - mx) / denom;
            for (int j = 0; j < dv; ++j) out[size_t(p) * dv + j] += a * vals[r][j];
        }
    }
    return out;
}

}  // namespace

TEST_CASE("project_query: zero, identity ablation, matvec oracle") {
    std::mt19937 rng(1);
    Tensor fmap = rand_tensor(rng, {3, 2, 2});

    QueryProjector zero{Tensor::zeros({4, 3}, Dtype::F64), Tensor::zeros({4}, Dtype::F64), false};
    Tensor qz = project_query(fmap, zero);
    CHECK(qz.shape() == std::vector<int>{4, 4});
    for (int64_t i = 0; i < qz.numel(); ++i) CHECK(qz.value_at(i) == 0.0);

    QueryProjector ident{Tensor(), Tensor(), true};
    Tensor qi = project_query(fmap, ident);
    CHECK(bitwise_equal(qi, flatten_spatial(fmap)));

    QueryProjector pr{rand_tensor(rng, {5, 3}), rand_tensor(rng, {5}), false};
    Tensor q = project_query(fmap, pr);
    // per-pixel matvec oracle
    for (int p = 0; p < 4; ++p)
        for (int o = 0; o < 5; ++o) {
            double acc = pr.b.value_at(o);
            for (int c = 0; c < 3; ++c) acc += pr.w.value_at(o * 3 + c) * fmap.value_at(c * 4 + p);
            CHECK(q.value_at(int64_t(p) * 5 + o) == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("bank write: FIFO order, eviction pairing, geometry checks") {
    MemoryBank bank(3);
    CHECK(bank.empty());
    auto entry = [](double tag) {
        return std::pair<Tensor, Tensor>{Tensor::full({2, 2}, tag, Dtype::F64),
                                         Tensor::full({2, 3}, tag * 10, Dtype::F64)};
    };
    for (int t = 1; t <= 4; ++t) {
        auto [k, v] = entry(t);
        bank.write(k, v);
        CHECK(bank.size() == std::min(t, 3));
    }
    // capacity-3 bank holds entries 2,3,4 oldest-to-newest with pairing intact
    for (int i = 0; i < 3; ++i) {
        CHECK(bank.keys()[i].value_at(0) == double(i + 2));
        CHECK(bank.values()[i].value_at(0) == double(i + 2) * 10);
    }
    CHECK_THROWS_AS(bank.write(Tensor::zeros({3, 2}, Dtype::F64), Tensor::zeros({3, 3}, Dtype::F64)),
                    ShapeError);
    CHECK_THROWS_AS(bank.write(Tensor::zeros({2, 2}, Dtype::F64), Tensor::zeros({3, 3}, Dtype::F64)),
                    ShapeError);

    MemoryBank one(1);
    one.write(Tensor::zeros({2, 2}, Dtype::F64), Tensor::zeros({2, 2}, Dtype::F64));
    CHECK(one.size() == 1);
}

TEST_CASE("read: single entry, tied keys, brute-force oracle, empty bank") {
    std::mt19937 rng(2);

    // one stored pixel row: readout equals that value row for any query
    MemoryBank b1(3);
    b1.write(rand_tensor(rng, {1, 4}), Tensor::from_data({1, 3}, {7, 8, 9}, Dtype::F64));
    Tensor q1 = rand_tensor(rng, {1, 4});
    Tensor r1 = read(b1, q1, 1, 1);
    CHECK(r1.shape() == std::vector<int>{3, 1, 1});
    CHECK(r1.value_at(0) == doctest::Approx(7));
    CHECK(r1.value_at(1) == doctest::Approx(8));
    CHECK(r1.value_at(2) == doctest::Approx(9));

    // two entries with identical keys average their values
    MemoryBank b2(3);
    Tensor key = rand_tensor(rng, {1, 4});
    b2.write(key, Tensor::from_data({1, 2}, {1, 3}, Dtype::F64));
    b2.write(key.detach(), Tensor::from_data({1, 2}, {5, 7}, Dtype::F64));
    Tensor r2 = read(b2, rand_tensor(rng, {1, 4}), 1, 1);
    CHECK(r2.value_at(0) == doctest::Approx(3.0));
    CHECK(r2.value_at(1) == doctest::Approx(5.0));

    // three stored frames of 2x2 pixels vs the brute-force oracle
    MemoryBank b3(3);
    std::vector<std::vector<double>> krows, vrows;
    for (int e = 0; e < 3; ++e) {
        Tensor k = rand_tensor(rng, {4, 4});
        Tensor v = rand_tensor(rng, {4, 4});
        for (int r = 0; r < 4; ++r) {
            std::vector<double> kr(4), vr(4);
            for (int j = 0; j < 4; ++j) {
                kr[j] = k.value_at(int64_t(r) * 4 + j);
                vr[j] = v.value_at(int64_t(r) * 4 + j);
            }
            krows.push_back(kr);
            vrows.push_back(vr);
        }
        b3.write(k, v);
    }
    Tensor q3 = rand_tensor(rng, {4, 4});
    Tensor r3 = read(b3, q3, 2, 2);
    auto want = attention_oracle(q3, krows, vrows, 4, 4);
    Tensor r3flat = flatten_spatial(r3);
    for (int64_t i = 0; i < 16; ++i)
        CHECK(r3flat.value_at(i) == doctest::Approx(want[i]).epsilon(1e-9));

    MemoryBank empty(3);
    CHECK_THROWS_AS(read(empty, q3, 2, 2), ContractError);
}

TEST_CASE("read properties: permutation invariance, convex combination") {
    std::mt19937 rng(3);
    std::vector<std::pair<Tensor, Tensor>> entries;
    for (int e = 0; e < 3; ++e)
        entries.push_back({rand_tensor(rng, {4, 5}), rand_tensor(rng, {4, 6})});
    Tensor q = rand_tensor(rng, {4, 5});

    MemoryBank fwd(4), perm(4);
    for (auto& [k, v] : entries) fwd.write(k, v);
    for (int i : {2, 0, 1}) perm.write(entries[i].first, entries[i].second);
    Tensor a = read(fwd, q, 2, 2);
    Tensor b = read(perm, q, 2, 2);
    CHECK(all_close(a, b, 1e-9));

    // each output element lies within [min,max] of the stored value column
    Tensor aflat = flatten_spatial(a);
    for (int j = 0; j < 6; ++j) {
        double lo = 1e300, hi = -1e300;
        for (auto& [k, v] : entries)
            for (int r = 0; r < 4; ++r) {
                double x = v.value_at(int64_t(r) * 6 + j);
                lo = std::min(lo, x);
                hi = std::max(hi, x);
            }
        for (int p = 0; p < 4; ++p) {
            double y = aflat.value_at(int64_t(p) * 6 + j);
            CHECK(y >= lo - 1e-9);
            CHECK(y <= hi + 1e-9);
        }
    }
}

TEST_CASE("ablated projector: self-similarity dominates the readout") {
    std::mt19937 rng(4);
    QueryProjector ident{Tensor(), Tensor(), true};
    std::vector<Tensor> fmaps;
    MemoryBank bank(3);
    for (int e = 0; e < 3; ++e) {
        Tensor f = rand_tensor(rng, {6, 2, 2}, Dtype::F64, -2, 2);
        fmaps.push_back(f);
        bank.write(project_query(f, ident), rand_tensor(rng, {4, 3}));
    }
    // query with the features of stored entry 1: its own rows carry the
    // maximum logit among all stored rows
    Tensor q = project_query(fmaps[1], ident);
    Tensor k0 = flatten_spatial(fmaps[0]), k1 = flatten_spatial(fmaps[1]),
           k2 = flatten_spatial(fmaps[2]);
    for (int p = 0; p < 4; ++p) {
        auto dot = [&](const Tensor& k, int r) {
            double acc = 0;
            for (int j = 0; j < 6; ++j)
                acc += q.value_at(int64_t(p) * 6 + j) * k.value_at(int64_t(r) * 6 + j);
            return acc;
        };
        double self = dot(k1, p);
        for (int r = 0; r < 4; ++r) {
            CHECK(self >= dot(k0, r) - 1e-12);
            CHECK(self >= dot(k2, r) - 1e-12);
            if (r != p) CHECK(self >= dot(k1, r) - 1e-12);
        }
    }
}

TEST_CASE("fuse: zero-conv identity, channel contract, conv oracle") {
    std::mt19937 rng(5);
    Tensor f = rand_tensor(rng, {3, 4, 4});
    Tensor r = rand_tensor(rng, {3, 4, 4});
    Tensor w0 = Tensor::zeros({3, 6, 3, 3}, Dtype::F64);
    Tensor b0 = Tensor::zeros({3}, Dtype::F64);
    CHECK(bitwise_equal(fuse(f, r, w0, b0), f));

    Tensor w = rand_tensor(rng, {3, 6, 3, 3});
    Tensor b = rand_tensor(rng, {3});
    Tensor out = fuse(f, r, w, b);
    CHECK(out.dim(0) == 3);
    Tensor cat = concat_channels({f, r});
    Tensor want = conv2d_oracle(cat, w, b, 1, 1);
    for (int64_t i = 0; i < out.numel(); ++i)
        CHECK(out.value_at(i) == doctest::Approx(f.value_at(i) + want.value_at(i)).epsilon(1e-10));
}

TEST_CASE("sensory update: zero fixed point, shape, gru semantics") {
    GruParams p0;
    p0.wz = Tensor::zeros({2, 5, 3, 3}, Dtype::F64);
    p0.bz = Tensor::zeros({2}, Dtype::F64);
    p0.wr = Tensor::zeros({2, 5, 3, 3}, Dtype::F64);
    p0.br = Tensor::zeros({2}, Dtype::F64);
    p0.wq = Tensor::zeros({2, 5, 3, 3}, Dtype::F64);
    p0.bq = Tensor::zeros({2}, Dtype::F64);
    SensoryMemory s{Tensor::zeros({2, 3, 3}, Dtype::F64)};
    SensoryMemory s1 = sensory_update(s, Tensor::zeros({3, 3, 3}, Dtype::F64), p0);
    CHECK(s1.state.shape() == s.state.shape());
    for (int64_t i = 0; i < s1.state.numel(); ++i) CHECK(s1.state.value_at(i) == 0.0);

    std::mt19937 rng(6);
    SensoryMemory sr{rand_tensor(rng, {2, 3, 3})};
    Tensor m = rand_tensor(rng, {3, 3, 3});
    GruParams pr;
    pr.wz = rand_tensor(rng, {2, 5, 3, 3});
    pr.bz = rand_tensor(rng, {2});
    pr.wr = rand_tensor(rng, {2, 5, 3, 3});
    pr.br = rand_tensor(rng, {2});
    pr.wq = rand_tensor(rng, {2, 5, 3, 3});
    pr.bq = rand_tensor(rng, {2});
    Tensor got = sensory_update(sr, m, pr).state;
    CHECK(bitwise_equal(got, gru_cell(sr.state, m, pr)));
}

TEST_CASE("read path is differentiable end to end") {
    std::mt19937 rng(7);
    Tensor fmap = rand_tensor(rng, {3, 2, 2});
    Tensor pw = rand_tensor(rng, {3, 3});
    Tensor pb = rand_tensor(rng, {3});
    Tensor key = rand_tensor(rng, {4, 3});
    Tensor val = rand_tensor(rng, {4, 3});
    Tensor probe = rand_tensor(rng, {3, 2, 2});
    auto closure = [&](const std::vector<Tensor>& in) {
        MemoryBank bank(2);
        bank.write(in[3], in[4]);
        QueryProjector proj{in[1], in[2], false};
        Tensor q = project_query(in[0], proj);
        return sum_all(mul(read(bank, q, 2, 2), probe));
    };
    CHECK(grad_check("memory_read", closure, {fmap, pw, pb, key, val}, 1e-4).passed);
}
