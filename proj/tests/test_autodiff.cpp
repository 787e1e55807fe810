#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "metricnav/autodiff.hpp"
#include "metricnav/nn.hpp"
#include "metricnav/rng.hpp"

using namespace metricnav;
using namespace metricnav::ad;

namespace {

double project(const Tensor& y, const Tensor& w) {
    double s = 0.0;
    for (size_t i = 0; i < y.size(); ++i)
        s += static_cast<double>(y.data[i]) * static_cast<double>(w.data[i]);
    return s;
}

// Forward-only evaluation of an op instance, projected to a scalar.
double eval_projected(const OpCheck& oc, const std::vector<Tensor>& inputs, const Tensor& w) {
    Tape t(false);
    TapeScope scope(t);
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& in : inputs) vars.push_back(input(in));
    Var out = oc.apply(vars);
    return project(t.val(out), w);
}

}  // namespace

// Every registered op: analytic gradient of a random scalar projection vs
// central finite differences at eps = 1e-3, relative error < 1e-3.
TEST_CASE("finite-difference conformance over the op registry") {
    REQUIRE(op_checks().size() >= 30);  // coverage guard: new ops must register
    const float h = 1e-3f;
    for (const OpCheck& oc : op_checks()) {
        INFO("op: " << oc.name);
        Rng rng(0x5eedf00d ^ std::hash<std::string>{}(oc.name));
        std::vector<Tensor> inputs = oc.make_inputs(rng);

        // Analytic gradients of sum(w * op(inputs)).
        Tape t;
        TapeScope scope(t);
        std::vector<Var> vars;
        for (const Tensor& in : inputs) vars.push_back(input(in));
        Var out = oc.apply(vars);
        Tensor w = rand_uniform(rng, t.val(out).rows, t.val(out).cols, -1.0f, 1.0f);
        Var loss = sum_all(mul(out, input(w)));
        t.backward(loss);

        double worst = 0.0;
        for (size_t l = 0; l < inputs.size(); ++l) {
            const Tensor& ag =
                t.has_grad(vars[l]) ? t.grad(vars[l]) : Tensor(inputs[l].rows, inputs[l].cols);
            for (size_t e = 0; e < inputs[l].size(); ++e) {
                const float orig = inputs[l].data[e];
                inputs[l].data[e] = orig + h;
                const double hi = static_cast<double>(inputs[l].data[e]);
                const double sp = eval_projected(oc, inputs, w);
                inputs[l].data[e] = orig - h;
                const double lo = static_cast<double>(inputs[l].data[e]);
                const double sm = eval_projected(oc, inputs, w);
                inputs[l].data[e] = orig;
                const double fd = (sp - sm) / (hi - lo);
                const double an = static_cast<double>(ag.data[e]);
                const double err = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
                worst = std::max(worst, err);
                INFO("input " << l << " entry " << e << " analytic " << an << " fd " << fd);
                REQUIRE(err < 1e-3);
            }
        }
        INFO("worst relative error " << worst);
        CHECK(worst < 1e-3);
    }
}

TEST_CASE("matmul identity and shape errors") {
    Tape t;
    TapeScope scope(t);
    Rng rng(7);
    Var a = input(randn(rng, 5, 3));
    Var i5 = input(Tensor::eye(5));
    Var out = matmul(i5, a);
    const Tensor &av = t.val(a), &ov = t.val(out);
    for (size_t k = 0; k < av.size(); ++k) REQUIRE(ov.data[k] == Catch::Approx(av.data[k]));

    Var b = input(randn(rng, 4, 2));
    REQUIRE_THROWS_WITH(matmul(a, b), Catch::Matchers::ContainsSubstring("5x3") &&
                                          Catch::Matchers::ContainsSubstring("4x2"));
    REQUIRE_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("5x3") &&
                                       Catch::Matchers::ContainsSubstring("4x2"));
}

TEST_CASE("softmax rows sum to 1 and masked entries are exactly zero") {
    Tape t;
    TapeScope scope(t);
    Rng rng(11);
    Var x = input(randn(rng, 6, 9, 2.0f));
    const Tensor& y = t.val(softmax_rows(x));
    for (int i = 0; i < y.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < y.cols; ++j) s += y.at(i, j);
        REQUIRE(std::abs(s - 1.0) < 1e-6);
    }

    Tensor m(6, 9);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 9; ++j) m.at(i, j) = (j % 2 == 1) ? 2.0f * kMaskedScore : 0.0f;
    const Tensor& ym = t.val(softmax_rows(add(x, input(m))));
    for (int i = 0; i < 6; ++i) {
        double s = 0.0;
        for (int j = 0; j < 9; ++j) {
            if (j % 2 == 1) REQUIRE(ym.at(i, j) == 0.0f);
            s += ym.at(i, j);
        }
        REQUIRE(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("product rule and exact leaf-gradient accumulation over two backwards") {
    Tape t;
    TapeScope scope(t);
    Rng rng(23);
    Var x = input(randn(rng, 3, 4));
    Var y = input(randn(rng, 3, 4));
    Var loss = sum_all(mul(x, y));
    t.backward(loss);
    const Tensor gx1 = t.grad(x);  // copy
    for (size_t i = 0; i < gx1.size(); ++i) REQUIRE(gx1.data[i] == t.val(y).data[i]);

    t.backward(loss);
    const Tensor& gx2 = t.grad(x);
    for (size_t i = 0; i < gx2.size(); ++i) REQUIRE(gx2.data[i] == 2.0f * gx1.data[i]);
}

TEST_CASE("rope is the identity at the origin and preserves pair norms") {
    Tape t;
    TapeScope scope(t);
    Rng rng(31);
    const int K = 12, C = 16;
    Tensor x = randn(rng, K, C);
    std::vector<std::array<int, 2>> origin(K, {0, 0});
    const Tensor& y0 = t.val(rope_rotate(input(x), origin));
    for (size_t i = 0; i < x.size(); ++i) REQUIRE(y0.data[i] == Catch::Approx(x.data[i]).margin(1e-7));

    std::vector<std::array<int, 2>> pos;
    for (int i = 0; i < K; ++i) pos.push_back({i % 4, i / 4});
    const Tensor& y = t.val(rope_rotate(input(x), pos));
    for (int i = 0; i < K; ++i)
        for (int p = 0; p < C / 2; ++p) {
            const double n0 = std::hypot(x.at(i, 2 * p), x.at(i, 2 * p + 1));
            const double n1 = std::hypot(y.at(i, 2 * p), y.at(i, 2 * p + 1));
            REQUIRE(std::abs(n0 - n1) < 1e-6);
        }

    REQUIRE_THROWS_AS(rope_rotate(input(randn(rng, 2, 6)), {{0, 0}, {1, 1}}),
                      std::invalid_argument);
}

TEST_CASE("rope dot products depend only on position differences") {
    Tape t;
    TapeScope scope(t);
    Rng rng(37);
    const int C = 16;
    Tensor q = randn(rng, 1, C), k = randn(rng, 1, C);
    auto score = [&](int qx, int qy, int kx, int ky) {
        Var rq = rope_rotate(input(q), {{qx, qy}});
        Var rk = rope_rotate(input(k), {{kx, ky}});
        const Tensor &a = t.val(rq), &b = t.val(rk);
        double s = 0.0;
        for (int j = 0; j < C; ++j) s += static_cast<double>(a.at(0, j)) * b.at(0, j);
        return s;
    };
    for (int sx = -2; sx <= 2; ++sx)
        for (int sy = -2; sy <= 2; ++sy) {
            const double base = score(1, 2, 3, 1);
            const double shifted = score(1 + sx, 2 + sy, 3 + sx, 1 + sy);
            REQUIRE(std::abs(base - shifted) < 1e-5);
        }
}

TEST_CASE("attention degenerate cases") {
    Tape t;
    TapeScope scope(t);
    Rng rng(41);
    // Single key: output equals v for every query.
    Var q = input(randn(rng, 4, 8));
    Var k1 = input(randn(rng, 1, 8));
    Var v1 = input(randn(rng, 1, 6));
    const Tensor& o1 = t.val(attention(q, k1, v1));
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 6; ++j) REQUIRE(o1.at(i, j) == Catch::Approx(t.val(v1).at(0, j)));

    // Uniform scores: output is the mean of v rows.
    Var k0 = input(Tensor(5, 8));
    Var v = input(randn(rng, 5, 6));
    const Tensor& o2 = t.val(attention(q, k0, v));
    for (int j = 0; j < 6; ++j) {
        double mean = 0.0;
        for (int r = 0; r < 5; ++r) mean += t.val(v).at(r, j);
        mean /= 5.0;
        for (int i = 0; i < 4; ++i) REQUIRE(o2.at(i, j) == Catch::Approx(mean).margin(1e-6));
    }

    REQUIRE_THROWS_AS(attention(q, input(randn(rng, 3, 7)), v1), std::invalid_argument);
}

// Grouped fused attention must agree with the composed per-group, per-head
// attention built from primitive ops.
TEST_CASE("attn_groups matches composed attention per group and head") {
    Rng rng(47);
    const int G = 3, QR = 4, KVR = 6, H = 2, C = 8, HD = C / H;
    Tensor q = randn(rng, G * QR, C), k = randn(rng, G * KVR, C), v = randn(rng, G * KVR, C);

    Tape t;
    TapeScope scope(t);
    AttnSpec sp{G, QR, KVR, H, false};
    Tensor probs;
    const Tensor fused = t.val(attn_groups(input(q), input(k), input(v), sp, &probs));

    for (int g = 0; g < G; ++g)
        for (int h = 0; h < H; ++h) {
            Tensor qs(QR, HD), ks(KVR, HD), vs(KVR, HD);
            for (int a = 0; a < QR; ++a)
                for (int d = 0; d < HD; ++d) qs.at(a, d) = q.at(g * QR + a, h * HD + d);
            for (int b = 0; b < KVR; ++b)
                for (int d = 0; d < HD; ++d) {
                    ks.at(b, d) = k.at(g * KVR + b, h * HD + d);
                    vs.at(b, d) = v.at(g * KVR + b, h * HD + d);
                }
            const Tensor& ref = t.val(attention(input(qs), input(ks), input(vs)));
            for (int a = 0; a < QR; ++a)
                for (int d = 0; d < HD; ++d)
                    REQUIRE(fused.at(g * QR + a, h * HD + d) ==
                            Catch::Approx(ref.at(a, d)).margin(1e-5));
        }

    // Exported probability rows sum to 1.
    for (int r = 0; r < probs.rows; ++r) {
        double s = 0.0;
        for (int b = 0; b < probs.cols; ++b) s += probs.at(r, b);
        REQUIRE(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("causal attn_groups zeroes future weights exactly") {
    Rng rng(53);
    const int G = 2, R = 5, H = 2, C = 8;
    Tape t;
    TapeScope scope(t);
    AttnSpec sp{G, R, R, H, true};
    Tensor probs;
    (void)t.val(attn_groups(input(randn(rng, G * R, C)), input(randn(rng, G * R, C)),
                            input(randn(rng, G * R, C)), sp, &probs));
    for (int g = 0; g < G; ++g)
        for (int h = 0; h < H; ++h)
            for (int a = 0; a < R; ++a) {
                const float* row = probs.row((g * H + h) * R + a);
                double s = 0.0;
                for (int b = 0; b < R; ++b) {
                    if (b > a) REQUIRE(row[b] == 0.0f);
                    s += row[b];
                }
                REQUIRE(std::abs(s - 1.0) < 1e-6);
            }
}

TEST_CASE("Adam drives a 2D quadratic gradient below 1e-4 within 2000 steps") {
    nn::ParamStore ps;
    const int wid = ps.add("w", Tensor(1, 2));
    const Tensor target(1, 2, {3.0f, -2.0f});
    const Tensor curv(1, 2, {1.0f, 3.0f});
    nn::Adam opt;
    opt.cfg.lr = 0.05f;

    auto grad_norm = [&] {
        const Tensor& w = ps.entries[wid].value;
        double s = 0.0;
        for (int j = 0; j < 2; ++j) {
            const double g = 2.0 * curv.at(0, j) * (w.at(0, j) - target.at(0, j));
            s += g * g;
        }
        return std::sqrt(s);
    };

    int steps = 0;
    for (; steps < 2000 && grad_norm() >= 1e-4; ++steps) {
        Tape t;
        TapeScope scope(t);
        nn::Ctx c(ps);
        Var d = sub(c[wid], input(target));
        Var loss = sum_all(mul(input(curv), mul(d, d)));
        t.backward(loss);
        opt.step(ps, nn::collect_grads(t, c));
    }
    INFO("converged after " << steps << " steps");
    REQUIRE(grad_norm() < 1e-4);
}

TEST_CASE("Adam with all-zero gradients leaves parameters bit-identical") {
    Rng rng(61);
    nn::ParamStore ps;
    ps.add("a", randn(rng, 3, 4));
    ps.add("b", randn(rng, 1, 7));
    std::vector<Tensor> before;
    for (auto& e : ps.entries) before.push_back(e.value);

    nn::Adam opt;
    std::vector<Tensor> zeros;
    for (auto& e : ps.entries) zeros.push_back(Tensor(e.value.rows, e.value.cols));
    for (int i = 0; i < 5; ++i) opt.step(ps, zeros);

    for (size_t i = 0; i < ps.entries.size(); ++i)
        REQUIRE(std::memcmp(ps.entries[i].value.data.data(), before[i].data.data(),
                            before[i].size() * sizeof(float)) == 0);
}

TEST_CASE("frozen parameters are skipped by the optimizer bit-for-bit") {
    Rng rng(67);
    nn::ParamStore ps;
    const int a = ps.add("backbone.enc.w", randn(rng, 4, 4));
    const int b = ps.add("policy.head.w", randn(rng, 4, 4));
    REQUIRE(ps.set_trainable("backbone.", false) == 1);
    const Tensor frozen = ps.entries[a].value;

    nn::Adam opt;
    std::vector<Tensor> grads{Tensor::full(4, 4, 0.5f), Tensor::full(4, 4, 0.5f)};
    for (int i = 0; i < 3; ++i) opt.step(ps, grads);

    REQUIRE(std::memcmp(ps.entries[a].value.data.data(), frozen.data.data(),
                        frozen.size() * sizeof(float)) == 0);
    REQUIRE(ps.entries[b].value.at(0, 0) != frozen.at(0, 0));
}

TEST_CASE("checkpoint round-trip is bitwise and corruption is detected") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "metricnav_ckpt_test";
    fs::remove_all(dir);

    Rng rng(71);
    nn::ParamStore ps;
    ps.add("backbone.w", randn(rng, 6, 5));
    ps.add("policy.b", randn(rng, 1, 9));
    nn::Adam opt;
    // One step so optimizer state exists.
    std::vector<Tensor> grads{randn(rng, 6, 5, 0.1f), randn(rng, 1, 9, 0.1f)};
    opt.step(ps, grads);
    std::vector<Tensor> saved, saved_m;
    for (auto& e : ps.entries) {
        saved.push_back(e.value);
        saved_m.push_back(e.m);
    }

    nn::save_checkpoint(ps, dir.string(), &opt);

    for (auto& e : ps.entries) {
        e.value.fill(0.0f);
        e.m.fill(0.0f);
    }
    nn::Adam opt2;
    nn::load_checkpoint(ps, dir.string(), &opt2);
    REQUIRE(opt2.t == opt.t);
    for (size_t i = 0; i < ps.entries.size(); ++i) {
        REQUIRE(std::memcmp(ps.entries[i].value.data.data(), saved[i].data.data(),
                            saved[i].size() * sizeof(float)) == 0);
        REQUIRE(std::memcmp(ps.entries[i].m.data.data(), saved_m[i].data.data(),
                            saved_m[i].size() * sizeof(float)) == 0);
    }

    // Flip one payload byte: the per-tensor checksum must catch it.
    {
        std::fstream f(dir / "params.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekg(3);
        char c = 0;
        f.read(&c, 1);
        c = static_cast<char>(c ^ 0x40);
        f.seekp(3);
        f.write(&c, 1);
    }
    REQUIRE_THROWS_WITH(nn::load_checkpoint(ps, dir.string()),
                        Catch::Matchers::ContainsSubstring("checksum"));
    fs::remove_all(dir);
}

TEST_CASE("layer modules produce expected shapes and deterministic losses") {
    Rng rng(73);
    nn::ParamStore ps;
    nn::Linear lin(ps, "lin", 6, 10, rng);
    nn::LayerNorm ln(ps, "ln", 10);
    nn::Mlp mlp(ps, "mlp", 10, 16, 4, rng);
    nn::Block blk(ps, "blk", 8, 2, 16, rng);

    auto run_once = [&](uint64_t seed) {
        Rng r2(seed);
        Tape t;
        TapeScope scope(t);
        nn::Ctx c(ps);
        Var x = input(randn(r2, 5, 6));
        Var h = ln(c, lin(c, x));
        REQUIRE(t.val(h).rows == 5);
        REQUIRE(t.val(h).cols == 10);
        Var y = mlp(c, h);
        REQUIRE(t.val(y).cols == 4);

        Var tok = input(randn(r2, 12, 8));
        AttnSpec sp{3, 4, 4, 2, false};
        Var z = blk.self_attend(c, tok, sp);
        REQUIRE(t.val(z).rows == 12);
        REQUIRE(t.val(z).cols == 8);
        Var loss = add(mean_all(mul(y, y)), mean_all(mul(z, z)));
        t.backward(loss);
        return t.val(loss).data[0];
    };
    const float l1 = run_once(99);
    const float l2 = run_once(99);
    REQUIRE(l1 == l2);  // bit-identical under a fixed seed
}
