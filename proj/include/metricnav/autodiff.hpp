#pragma once

// Minimal reverse-mode autodiff on dense row-major f32 matrices.
// A Tape records ops in topological (creation) order; backward walks it once
// in reverse. Leaf gradients accumulate across backward calls; interior
// gradients are recomputed per call.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "metricnav/geometry.hpp"
#include "metricnav/rng.hpp"

namespace metricnav::ad {

struct Tensor {
    int rows = 0, cols = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0f) {}
    Tensor(int r, int c, std::initializer_list<float> v) : rows(r), cols(c), data(v) {
        if (data.size() != static_cast<size_t>(r) * c)
            throw std::invalid_argument("Tensor: init list size mismatch");
    }

    static Tensor full(int r, int c, float v) {
        Tensor t(r, c);
        for (float& x : t.data) x = v;
        return t;
    }
    static Tensor eye(int n) {
        Tensor t(n, n);
        for (int i = 0; i < n; ++i) t.at(i, i) = 1.0f;
        return t;
    }

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    float& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    float at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
    float* row(int i) { return data.data() + static_cast<size_t>(i) * cols; }
    const float* row(int i) const { return data.data() + static_cast<size_t>(i) * cols; }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
    void fill(float v) {
        for (float& x : data) x = v;
    }
};

inline std::string shape_str(const Tensor& t) {
    return std::to_string(t.rows) + "x" + std::to_string(t.cols);
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) +
                                    " vs " + shape_str(b));
}

inline Tensor randn(Rng& rng, int r, int c, float stddev = 1.0f) {
    Tensor t(r, c);
    for (float& x : t.data) x = rng.normal_f() * stddev;
    return t;
}

inline Tensor rand_uniform(Rng& rng, int r, int c, float lo, float hi) {
    Tensor t(r, c);
    for (float& x : t.data) x = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

// ---------------------------------------------------------------------------
// Matmul kernels. All accumulate into C (callers zero C for a plain product);
// the k-unrolled inner loops keep single-core throughput acceptable.

inline void mm_nn(const float* A, const float* B, float* C, int n, int k, int m) {
    for (int i = 0; i < n; ++i) {
        const float* a = A + static_cast<size_t>(i) * k;
        float* c = C + static_cast<size_t>(i) * m;
        int kk = 0;
        for (; kk + 4 <= k; kk += 4) {
            const float a0 = a[kk], a1 = a[kk + 1], a2 = a[kk + 2], a3 = a[kk + 3];
            const float* b0 = B + static_cast<size_t>(kk) * m;
            const float* b1 = b0 + m;
            const float* b2 = b1 + m;
            const float* b3 = b2 + m;
            for (int j = 0; j < m; ++j) c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
        for (; kk < k; ++kk) {
            const float av = a[kk];
            const float* b = B + static_cast<size_t>(kk) * m;
            for (int j = 0; j < m; ++j) c[j] += av * b[j];
        }
    }
}

// C (n x k) += A (n x m) * B^T where B is (k x m): dot products of rows.
inline void mm_nt(const float* A, const float* B, float* C, int n, int m, int k) {
    for (int i = 0; i < n; ++i) {
        const float* a = A + static_cast<size_t>(i) * m;
        float* c = C + static_cast<size_t>(i) * k;
        for (int j = 0; j < k; ++j) {
            const float* b = B + static_cast<size_t>(j) * m;
            float acc = 0.0f;
            for (int l = 0; l < m; ++l) acc += a[l] * b[l];
            c[j] += acc;
        }
    }
}

// C (k x m) += A^T * B where A is (n x k), B is (n x m).
inline void mm_tn(const float* A, const float* B, float* C, int n, int k, int m) {
    for (int i = 0; i < n; ++i) {
        const float* a = A + static_cast<size_t>(i) * k;
        const float* b = B + static_cast<size_t>(i) * m;
        for (int l = 0; l < k; ++l) {
            const float av = a[l];
            if (av == 0.0f) continue;
            float* c = C + static_cast<size_t>(l) * m;
            for (int j = 0; j < m; ++j) c[j] += av * b[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Tape

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
  public:
    explicit Tape(bool record_grads = true) : grads_(record_grads) {}

    Var put(Tensor val) {
        nodes_.push_back(Node{std::move(val), Tensor{}, nullptr});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }
    void set_back(Var v, std::function<void(Tape&)> fn) {
        if (grads_) nodes_[v.id].back = std::move(fn);
    }

    const Tensor& val(Var v) const { return nodes_[v.id].val; }
    Tensor& val_mut(Var v) { return nodes_[v.id].val; }

    // Allocates a zero gradient on first touch.
    Tensor& grad(Var v) {
        Node& n = nodes_[v.id];
        if (n.grad.empty()) n.grad = Tensor(n.val.rows, n.val.cols);
        return n.grad;
    }
    bool has_grad(Var v) const { return !nodes_[v.id].grad.empty(); }
    bool grads_enabled() const { return grads_; }
    size_t n_nodes() const { return nodes_.size(); }

    // Reverse sweep from `loss` (scalar). Interior (non-leaf) gradients are
    // reset at entry; leaf gradients accumulate across calls.
    void backward(Var loss) {
        if (!grads_) throw std::logic_error("backward: tape recorded without gradients");
        const Tensor& lv = val(loss);
        if (lv.size() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(lv));
        for (Node& n : nodes_)
            if (n.back && !n.grad.empty()) n.grad.fill(0.0f);
        grad(loss).data[0] += 1.0f;
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.back && !n.grad.empty()) n.back(*this);
        }
    }

    void reset() { nodes_.clear(); }

  private:
    struct Node {
        Tensor val;
        Tensor grad;
        std::function<void(Tape&)> back;
    };
    std::vector<Node> nodes_;
    bool grads_;
};

inline Tape*& tape_slot() {
    thread_local Tape* t = nullptr;
    return t;
}

inline Tape& tape() {
    Tape* t = tape_slot();
    if (!t) throw std::logic_error("no active tape on this thread");
    return *t;
}

struct TapeScope {
    Tape* prev;
    explicit TapeScope(Tape& t) : prev(tape_slot()) { tape_slot() = &t; }
    ~TapeScope() { tape_slot() = prev; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
};

inline Var input(Tensor t) { return tape().put(std::move(t)); }

namespace detail {
inline void axpy(Tensor& dst, const Tensor& src, float a = 1.0f) {
    for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += a * src.data[i];
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise / arithmetic ops

inline Var add(Var a, Var b) {
    Tape& t = tape();
    const Tensor &av = t.val(a), &bv = t.val(b);
    require_same_shape("add", av, bv);
    Tensor out = av;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
    Var o = t.put(std::move(out));
    t.set_back(o, [a, b, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        detail::axpy(tp.grad(a), g);
        detail::axpy(tp.grad(b), g);
    });
    return o;
}

inline Var sub(Var a, Var b) {
    Tape& t = tape();
    const Tensor &av = t.val(a), &bv = t.val(b);
    require_same_shape("sub", av, bv);
    Tensor out = av;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
    Var o = t.put(std::move(out));
    t.set_back(o, [a, b, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        detail::axpy(tp.grad(a), g, 1.0f);
        detail::axpy(tp.grad(b), g, -1.0f);
    });
    return o;
}

inline Var mul(Var a, Var b) {
    Tape& t = tape();
    const Tensor &av = t.val(a), &bv = t.val(b);
    require_same_shape("mul", av, bv);
    Tensor out = av;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
    Var o = t.put(std::move(out));
    t.set_back(o, [a, b, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        const Tensor &av2 = tp.val(a), &bv2 = tp.val(b);
        Tensor &ga = tp.grad(a), &gb = tp.grad(b);
        for (size_t i = 0; i < g.size(); ++i) {
            ga.data[i] += g.data[i] * bv2.data[i];
            gb.data[i] += g.data[i] * av2.data[i];
        }
    });
    return o;
}

inline Var scale(Var a, float c) {
    Tape& t = tape();
    Tensor out = t.val(a);
    for (float& x : out.data) x *= c;
    Var o = t.put(std::move(out));
    t.set_back(o, [a, o, c](Tape& tp) { detail::axpy(tp.grad(a), tp.grad(o), c); });
    return o;
}

inline Var add_scalar(Var a, float c) {
    Tape& t = tape();
    Tensor out = t.val(a);
    for (float& x : out.data) x += c;
    Var o = t.put(std::move(out));
    t.set_back(o, [a, o](Tape& tp) { detail::axpy(tp.grad(a), tp.grad(o)); });
    return o;
}

// y = x + 1*b with b a 1 x C bias row broadcast over rows (the only broadcast).
inline Var add_bias(Var x, Var b) {
    Tape& t = tape();
    const Tensor &xv = t.val(x), &bv = t.val(b);
    if (bv.rows != 1 || bv.cols != xv.cols)
        throw std::invalid_argument("add_bias: bias " + shape_str(bv) + " incompatible with " +
                                    shape_str(xv));
    Tensor out = xv;
    for (int i = 0; i < out.rows; ++i)
        for (int j = 0; j < out.cols; ++j) out.at(i, j) += bv.at(0, j);
    Var o = t.put(std::move(out));
    t.set_back(o, [x, b, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        detail::axpy(tp.grad(x), g);
        Tensor& gb = tp.grad(b);
        for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) gb.at(0, j) += g.at(i, j);
    });
    return o;
}

inline Var gelu(Var a) {
    Tape& t = tape();
    Tensor out = t.val(a);
    constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
    constexpr float kA = 0.044715f;
    for (float& x : out.data) {
        const float u = kC * (x + kA * x * x * x);
        x = 0.5f * x * (1.0f + std::tanh(u));
    }
    Var o = t.put(std::move(out));
    t.set_back(o, [a, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        const Tensor& xv = tp.val(a);
        Tensor& ga = tp.grad(a);
        for (size_t i = 0; i < g.size(); ++i) {
            const float x = xv.data[i];
            const float u = kC * (x + kA * x * x * x);
            const float th = std::tanh(u);
            const float du = kC * (1.0f + 3.0f * kA * x * x);
            ga.data[i] += g.data[i] * (0.5f * (1.0f + th) + 0.5f * x * (1.0f - th * th) * du);
        }
    });
    return o;
}

inline Var sigmoid(Var a) {
    Tape& t = tape();
    Tensor out = t.val(a);
    for (float& x : out.data) x = 1.0f / (1.0f + std::exp(-x));
    Var o = t.put(std::move(out));
    t.set_back(o, [a, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        const Tensor& yv = tp.val(o);
        Tensor& ga = tp.grad(a);
        for (size_t i = 0; i < g.size(); ++i) {
            const float s = yv.data[i];
            ga.data[i] += g.data[i] * s * (1.0f - s);
        }
    });
    return o;
}

inline Var sin_ew(Var a) {
    Tape& t = tape();
    Tensor out = t.val(a);
    for (float& x : out.data) x = std::sin(x);
    Var o = t.put(std::move(out));
    t.set_back(o, [a, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        const Tensor& xv = tp.val(a);
        Tensor& ga = tp.grad(a);
        for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * std::cos(xv.data[i]);
    });
    return o;
}

inline Var cos_ew(Var a) {
    Tape& t = tape();
    Tensor out = t.val(a);
    for (float& x : out.data) x = std::cos(x);
    Var o = t.put(std::move(out));
    t.set_back(o, [a, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        const Tensor& xv = tp.val(a);
        Tensor& ga = tp.grad(a);
        for (size_t i = 0; i < g.size(); ++i) ga.data[i] += -g.data[i] * std::sin(xv.data[i]);
    });
    return o;
}

// Shares the scalar codec with the geometry module so decode is bit-identical.
inline Var signexp_ew(Var a) {
    Tape& t = tape();
    Tensor out = t.val(a);
    for (float& x : out.data) x = geo::signexp(x);
    Var o = t.put(std::move(out));
    t.set_back(o, [a, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        const Tensor& xv = tp.val(a);
        Tensor& ga = tp.grad(a);
        for (size_t i = 0; i < g.size(); ++i)
            ga.data[i] += g.data[i] * std::exp(std::fabs(xv.data[i]));
    });
    return o;
}

inline Var signexp_inv_ew(Var a) {
    Tape& t = tape();
    Tensor out = t.val(a);
    for (float& x : out.data) x = geo::signexp_inv(x);
    Var o = t.put(std::move(out));
    t.set_back(o, [a, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        const Tensor& xv = tp.val(a);
        Tensor& ga = tp.grad(a);
        for (size_t i = 0; i < g.size(); ++i)
            ga.data[i] += g.data[i] / (1.0f + std::fabs(xv.data[i]));
    });
    return o;
}

// ---------------------------------------------------------------------------
// Structural ops

inline Var matmul(Var a, Var b) {
    Tape& t = tape();
    const Tensor &av = t.val(a), &bv = t.val(b);
    if (av.cols != bv.rows)
        throw std::invalid_argument("matmul: inner dims differ: " + shape_str(av) + " vs " +
                                    shape_str(bv));
    Tensor out(av.rows, bv.cols);
    mm_nn(av.data.data(), bv.data.data(), out.data.data(), av.rows, av.cols, bv.cols);
    Var o = t.put(std::move(out));
    t.set_back(o, [a, b, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        const Tensor &av2 = tp.val(a), &bv2 = tp.val(b);
        mm_nt(g.data.data(), bv2.data.data(), tp.grad(a).data.data(), g.rows, g.cols, bv2.rows);
        mm_tn(av2.data.data(), g.data.data(), tp.grad(b).data.data(), av2.rows, av2.cols, g.cols);
    });
    return o;
}

inline Var transpose(Var a) {
    Tape& t = tape();
    const Tensor& av = t.val(a);
    Tensor out(av.cols, av.rows);
    for (int i = 0; i < av.rows; ++i)
        for (int j = 0; j < av.cols; ++j) out.at(j, i) = av.at(i, j);
    Var o = t.put(std::move(out));
    t.set_back(o, [a, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        Tensor& ga = tp.grad(a);
        for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) ga.at(j, i) += g.at(i, j);
    });
    return o;
}

inline Var reshape(Var a, int r, int c) {
    Tape& t = tape();
    const Tensor& av = t.val(a);
    if (static_cast<size_t>(r) * c != av.size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(av) + " as " +
                                    std::to_string(r) + "x" + std::to_string(c));
    Tensor out(r, c);
    out.data = av.data;
    Var o = t.put(std::move(out));
    t.set_back(o, [a, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        Tensor& ga = tp.grad(a);
        for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
    });
    return o;
}

inline Var slice_rows(Var a, int r0, int r1) {
    Tape& t = tape();
    const Tensor& av = t.val(a);
    if (r0 < 0 || r1 > av.rows || r0 >= r1)
        throw std::invalid_argument("slice_rows: [" + std::to_string(r0) + "," +
                                    std::to_string(r1) + ") out of " + shape_str(av));
    Tensor out(r1 - r0, av.cols);
    for (int i = r0; i < r1; ++i)
        for (int j = 0; j < av.cols; ++j) out.at(i - r0, j) = av.at(i, j);
    Var o = t.put(std::move(out));
    t.set_back(o, [a, o, r0](Tape& tp) {
        const Tensor& g = tp.grad(o);
        Tensor& ga = tp.grad(a);
        for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) ga.at(i + r0, j) += g.at(i, j);
    });
    return o;
}

inline Var slice_cols(Var a, int c0, int c1) {
    Tape& t = tape();
    const Tensor& av = t.val(a);
    if (c0 < 0 || c1 > av.cols || c0 >= c1)
        throw std::invalid_argument("slice_cols: [" + std::to_string(c0) + "," +
                                    std::to_string(c1) + ") out of " + shape_str(av));
    Tensor out(av.rows, c1 - c0);
    for (int i = 0; i < av.rows; ++i)
        for (int j = c0; j < c1; ++j) out.at(i, j - c0) = av.at(i, j);
    Var o = t.put(std::move(out));
    t.set_back(o, [a, o, c0](Tape& tp) {
        const Tensor& g = tp.grad(o);
        Tensor& ga = tp.grad(a);
        for (int i = 0; i < g.rows; ++i)
            for (int j = 0; j < g.cols; ++j) ga.at(i, j + c0) += g.at(i, j);
    });
    return o;
}

inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
    Tape& t = tape();
    const int cols = t.val(parts[0]).cols;
    int rows = 0;
    for (Var p : parts) {
        const Tensor& pv = t.val(p);
        if (pv.cols != cols)
            throw std::invalid_argument("concat_rows: column mismatch " + shape_str(pv) +
                                        " vs first part " + shape_str(t.val(parts[0])));
        rows += pv.rows;
    }
    Tensor out(rows, cols);
    int r = 0;
    for (Var p : parts) {
        const Tensor& pv = t.val(p);
        for (int i = 0; i < pv.rows; ++i)
            for (int j = 0; j < cols; ++j) out.at(r + i, j) = pv.at(i, j);
        r += pv.rows;
    }
    Var o = t.put(std::move(out));
    std::vector<Var> ps = parts;
    t.set_back(o, [ps, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        int r0 = 0;
        for (Var p : ps) {
            Tensor& gp = tp.grad(p);
            for (int i = 0; i < gp.rows; ++i)
                for (int j = 0; j < gp.cols; ++j) gp.at(i, j) += g.at(r0 + i, j);
            r0 += gp.rows;
        }
    });
    return o;
}

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    Tape& t = tape();
    const int rows = t.val(parts[0]).rows;
    int cols = 0;
    for (Var p : parts) {
        const Tensor& pv = t.val(p);
        if (pv.rows != rows)
            throw std::invalid_argument("concat_cols: row mismatch " + shape_str(pv) +
                                        " vs first part " + shape_str(t.val(parts[0])));
        cols += pv.cols;
    }
    Tensor out(rows, cols);
    int c = 0;
    for (Var p : parts) {
        const Tensor& pv = t.val(p);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < pv.cols; ++j) out.at(i, c + j) = pv.at(i, j);
        c += pv.cols;
    }
    Var o = t.put(std::move(out));
    std::vector<Var> ps = parts;
    t.set_back(o, [ps, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        int c0 = 0;
        for (Var p : ps) {
            Tensor& gp = tp.grad(p);
            for (int i = 0; i < gp.rows; ++i)
                for (int j = 0; j < gp.cols; ++j) gp.at(i, j) += g.at(i, c0 + j);
            c0 += gp.cols;
        }
    });
    return o;
}

inline Var concat_cols(Var a, Var b) { return concat_cols(std::vector<Var>{a, b}); }
inline Var concat_rows(Var a, Var b) { return concat_rows(std::vector<Var>{a, b}); }

inline Var gather_rows(Var a, const std::vector<int>& idx) {
    Tape& t = tape();
    const Tensor& av = t.val(a);
    for (int i : idx)
        if (i < 0 || i >= av.rows)
            throw std::invalid_argument("gather_rows: index " + std::to_string(i) + " out of " +
                                        shape_str(av));
    Tensor out(static_cast<int>(idx.size()), av.cols);
    for (size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < av.cols; ++j) out.at(static_cast<int>(i), j) = av.at(idx[i], j);
    Var o = t.put(std::move(out));
    std::vector<int> ix = idx;
    t.set_back(o, [a, o, ix](Tape& tp) {
        const Tensor& g = tp.grad(o);
        Tensor& ga = tp.grad(a);
        for (size_t i = 0; i < ix.size(); ++i)
            for (int j = 0; j < g.cols; ++j) ga.at(ix[i], j) += g.at(static_cast<int>(i), j);
    });
    return o;
}

// ---------------------------------------------------------------------------
// Normalization / softmax

// Additive-mask convention: entries below this threshold are treated as fully
// excluded — probability exactly 0, skipped in max and sum. This is what makes
// causality tests see exact zeros instead of exp(-big) residue.
constexpr float kMaskedScore = -1e30f;

inline Var softmax_rows(Var a) {
    Tape& t = tape();
    const Tensor& av = t.val(a);
    Tensor out(av.rows, av.cols);
    for (int i = 0; i < av.rows; ++i) {
        float mx = kMaskedScore;
        for (int j = 0; j < av.cols; ++j)
            if (av.at(i, j) > kMaskedScore && av.at(i, j) > mx) mx = av.at(i, j);
        float sum = 0.0f;
        for (int j = 0; j < av.cols; ++j) {
            if (av.at(i, j) > kMaskedScore) {
                const float e = std::exp(av.at(i, j) - mx);
                out.at(i, j) = e;
                sum += e;
            } else {
                out.at(i, j) = 0.0f;
            }
        }
        if (sum > 0.0f)
            for (int j = 0; j < av.cols; ++j) out.at(i, j) /= sum;
    }
    Var o = t.put(std::move(out));
    t.set_back(o, [a, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        const Tensor& y = tp.val(o);
        Tensor& ga = tp.grad(a);
        for (int i = 0; i < g.rows; ++i) {
            float dot = 0.0f;
            for (int j = 0; j < g.cols; ++j) dot += g.at(i, j) * y.at(i, j);
            for (int j = 0; j < g.cols; ++j) ga.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
        }
    });
    return o;
}

inline Var layer_norm(Var x, Var gamma, Var beta) {
    Tape& t = tape();
    const Tensor &xv = t.val(x), &gv = t.val(gamma), &bv = t.val(beta);
    if (gv.rows != 1 || gv.cols != xv.cols || bv.rows != 1 || bv.cols != xv.cols)
        throw std::invalid_argument("layer_norm: scale/shift " + shape_str(gv) + "/" +
                                    shape_str(bv) + " incompatible with " + shape_str(xv));
    constexpr float kEps = 1e-5f;
    const int C = xv.cols;
    Tensor out(xv.rows, C);
    for (int i = 0; i < xv.rows; ++i) {
        float mu = 0.0f;
        for (int j = 0; j < C; ++j) mu += xv.at(i, j);
        mu /= static_cast<float>(C);
        float var = 0.0f;
        for (int j = 0; j < C; ++j) {
            const float d = xv.at(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<float>(C);
        const float inv = 1.0f / std::sqrt(var + kEps);
        for (int j = 0; j < C; ++j)
            out.at(i, j) = gv.at(0, j) * (xv.at(i, j) - mu) * inv + bv.at(0, j);
    }
    Var o = t.put(std::move(out));
    t.set_back(o, [x, gamma, beta, o](Tape& tp) {
        const Tensor& g = tp.grad(o);
        const Tensor& xv2 = tp.val(x);
        const Tensor& gv2 = tp.val(gamma);
        Tensor& gx = tp.grad(x);
        Tensor& gg = tp.grad(gamma);
        Tensor& gb = tp.grad(beta);
        const int C = xv2.cols;
        for (int i = 0; i < xv2.rows; ++i) {
            float mu = 0.0f;
            for (int j = 0; j < C; ++j) mu += xv2.at(i, j);
            mu /= static_cast<float>(C);
            float var = 0.0f;
            for (int j = 0; j < C; ++j) {
                const float d = xv2.at(i, j) - mu;
                var += d * d;
            }
            var /= static_cast<float>(C);
            const float inv = 1.0f / std::sqrt(var + kEps);
            // dxhat, plus the two row-reductions of the standard LN backward.
            float sum_dxhat = 0.0f, sum_dxhat_xhat = 0.0f;
            for (int j = 0; j < C; ++j) {
                const float xhat = (xv2.at(i, j) - mu) * inv;
                const float dxhat = g.at(i, j) * gv2.at(0, j);
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
                gg.at(0, j) += g.at(i, j) * xhat;
                gb.at(0, j) += g.at(i, j);
            }
            for (int j = 0; j < C; ++j) {
                const float xhat = (xv2.at(i, j) - mu) * inv;
                const float dxhat = g.at(i, j) * gv2.at(0, j);
                gx.at(i, j) += inv * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) /
                                                  static_cast<float>(C));
            }
        }
    });
    return o;
}

// ---------------------------------------------------------------------------
// Rotary position embedding (2D axial)
//
// tokens: K x C with C divisible by 4. The first C/2 channels are rotated in
// consecutive pairs by angle theta_m * pos_x, the second C/2 by theta_m *
// pos_y, theta_m = 10000^(-2m / (C/2)) for pair index m. Norm-preserving and
// the identity at pos = (0,0).

inline Var rope_rotate(Var x, const std::vector<std::array<int, 2>>& pos) {
    Tape& t = tape();
    const Tensor& xv = t.val(x);
    if (xv.cols % 4 != 0)
        throw std::invalid_argument("rope_rotate: channels " + std::to_string(xv.cols) +
                                    " not divisible by 4");
    if (static_cast<int>(pos.size()) != xv.rows)
        throw std::invalid_argument("rope_rotate: " + std::to_string(pos.size()) +
                                    " positions for " + shape_str(xv));
    const int C = xv.cols;
    const int half = C / 2;
    const int pairs = half / 2;
    std::vector<float> theta(pairs);
    for (int m = 0; m < pairs; ++m)
        theta[m] = std::pow(10000.0f, -2.0f * static_cast<float>(m) / static_cast<float>(half));

    auto rotate = [&](const Tensor& in, Tensor& out, bool invert) {
        for (int i = 0; i < in.rows; ++i) {
            for (int axis = 0; axis < 2; ++axis) {
                const int base = axis * half;
                const float p = static_cast<float>(pos[i][axis]) * (invert ? -1.0f : 1.0f);
                for (int m = 0; m < pairs; ++m) {
                    const float ang = theta[m] * p;
                    const float c = std::cos(ang), s = std::sin(ang);
                    const float u = in.at(i, base + 2 * m);
                    const float v = in.at(i, base + 2 * m + 1);
                    out.at(i, base + 2 * m) = c * u - s * v;
                    out.at(i, base + 2 * m + 1) = s * u + c * v;
                }
            }
        }
    };

    Tensor out(xv.rows, C);
    rotate(xv, out, false);
    Var o = t.put(std::move(out));
    std::vector<std::array<int, 2>> ps = pos;
    t.set_back(o, [x, o, ps, theta, half, pairs](Tape& tp) {
        const Tensor& g = tp.grad(o);
        Tensor& gx = tp.grad(x);
        // Gradient of a rotation is the inverse rotation applied to g.
        for (int i = 0; i < g.rows; ++i) {
            for (int axis = 0; axis < 2; ++axis) {
                const int base = axis * half;
                const float p = static_cast<float>(ps[i][axis]);
                for (int m = 0; m < pairs; ++m) {
                    const float ang = theta[m] * p;
                    const float c = std::cos(ang), s = std::sin(ang);
                    const float gu = g.at(i, base + 2 * m);
                    const float gv = g.at(i, base + 2 * m + 1);
                    gx.at(i, base + 2 * m) += c * gu + s * gv;
                    gx.at(i, base + 2 * m + 1) += -s * gu + c * gv;
                }
            }
        }
    });
    return o;
}

// ---------------------------------------------------------------------------
// Attention

// Grouped multi-head scaled dot-product attention in one tape node.
// q is (groups*q_rows) x C, k and v are (groups*kv_rows) x C; attention runs
// independently per group and head. With causal=true (requires q_rows ==
// kv_rows), row r attends to rows <= r; excluded weights are exactly zero.
struct AttnSpec {
    int groups = 1;
    int q_rows = 0;
    int kv_rows = 0;
    int heads = 1;
    bool causal = false;
};

namespace detail {
// probs layout: ((group*heads + head)*q_rows + a) x kv_rows.
inline void attn_forward(const Tensor& q, const Tensor& k, const Tensor& v, const AttnSpec& sp,
                         Tensor& out, Tensor& probs) {
    const int C = q.cols;
    const int hd = C / sp.heads;
    const float sc = 1.0f / std::sqrt(static_cast<float>(hd));
    out = Tensor(q.rows, C);
    probs = Tensor(sp.groups * sp.heads * sp.q_rows, sp.kv_rows);
    std::vector<float> srow(static_cast<size_t>(sp.kv_rows));
    for (int g = 0; g < sp.groups; ++g) {
        const int q0 = g * sp.q_rows, kv0 = g * sp.kv_rows;
        for (int h = 0; h < sp.heads; ++h) {
            const int c0 = h * hd;
            for (int a = 0; a < sp.q_rows; ++a) {
                const int limit = sp.causal ? a + 1 : sp.kv_rows;
                float mx = -std::numeric_limits<float>::infinity();
                for (int b = 0; b < limit; ++b) {
                    float acc = 0.0f;
                    const float* qr = q.row(q0 + a) + c0;
                    const float* kr = k.row(kv0 + b) + c0;
                    for (int d = 0; d < hd; ++d) acc += qr[d] * kr[d];
                    srow[b] = acc * sc;
                    if (srow[b] > mx) mx = srow[b];
                }
                float* prow = probs.row((g * sp.heads + h) * sp.q_rows + a);
                float sum = 0.0f;
                for (int b = 0; b < limit; ++b) {
                    const float e = std::exp(srow[b] - mx);
                    prow[b] = e;
                    sum += e;
                }
                const float inv = 1.0f / sum;
                for (int b = 0; b < limit; ++b) prow[b] *= inv;
                float* orow = out.row(q0 + a) + c0;
                for (int b = 0; b < limit; ++b) {
                    const float p = prow[b];
                    const float* vr = v.row(kv0 + b) + c0;
                    for (int d = 0; d < hd; ++d) orow[d] += p * vr[d];
                }
            }
        }
    }
}
}  // namespace detail

// If probs_out is non-null the post-softmax weights are copied there during
// the forward pass (inspection hook for causality / row-sum checks).
inline Var attn_groups(Var q, Var k, Var v, const AttnSpec& sp, Tensor* probs_out = nullptr) {
    Tape& t = tape();
    const Tensor &qv = t.val(q), &kv = t.val(k), &vv = t.val(v);
    if (sp.q_rows <= 0 || sp.kv_rows <= 0 || sp.groups <= 0 || sp.heads <= 0)
        throw std::invalid_argument("attn_groups: bad spec");
    if (qv.rows != sp.groups * sp.q_rows || kv.rows != sp.groups * sp.kv_rows ||
        vv.rows != sp.groups * sp.kv_rows)
        throw std::invalid_argument("attn_groups: rows q=" + shape_str(qv) + " k=" +
                                    shape_str(kv) + " v=" + shape_str(vv) +
                                    " do not match spec");
    if (qv.cols != kv.cols || qv.cols != vv.cols)
        throw std::invalid_argument("attn_groups: channel mismatch q=" + shape_str(qv) +
                                    " k=" + shape_str(kv) + " v=" + shape_str(vv));
    if (qv.cols % sp.heads != 0)
        throw std::invalid_argument("attn_groups: channels " + std::to_string(qv.cols) +
                                    " not divisible by heads " + std::to_string(sp.heads));
    if (sp.causal && sp.q_rows != sp.kv_rows)
        throw std::invalid_argument("attn_groups: causal requires square groups");

    Tensor out, probs;
    detail::attn_forward(qv, kv, vv, sp, out, probs);
    if (probs_out) *probs_out = probs;
    Var o = t.put(std::move(out));
    AttnSpec spc = sp;
    t.set_back(o, [q, k, v, o, spc, probs = std::move(probs)](Tape& tp) {
        const Tensor& g = tp.grad(o);
        const Tensor &qv2 = tp.val(q), &kv2 = tp.val(k), &vv2 = tp.val(v);
        Tensor &gq = tp.grad(q), &gk = tp.grad(k), &gv = tp.grad(v);
        const int C = qv2.cols;
        const int hd = C / spc.heads;
        const float sc = 1.0f / std::sqrt(static_cast<float>(hd));
        std::vector<float> dp(static_cast<size_t>(spc.kv_rows));
        for (int grp = 0; grp < spc.groups; ++grp) {
            const int q0 = grp * spc.q_rows, kv0 = grp * spc.kv_rows;
            for (int h = 0; h < spc.heads; ++h) {
                const int c0 = h * hd;
                for (int a = 0; a < spc.q_rows; ++a) {
                    const int limit = spc.causal ? a + 1 : spc.kv_rows;
                    const float* prow = probs.row((grp * spc.heads + h) * spc.q_rows + a);
                    const float* grow = g.row(q0 + a) + c0;
                    // dV and dP.
                    float dot = 0.0f;
                    for (int b = 0; b < limit; ++b) {
                        const float* vr = vv2.row(kv0 + b) + c0;
                        float acc = 0.0f;
                        for (int d = 0; d < hd; ++d) acc += grow[d] * vr[d];
                        dp[b] = acc;
                        dot += acc * prow[b];
                        float* gvr = gv.row(kv0 + b) + c0;
                        const float p = prow[b];
                        for (int d = 0; d < hd; ++d) gvr[d] += p * grow[d];
                    }
                    // dS = P o (dP - dot), then dQ, dK.
                    const float* qr = qv2.row(q0 + a) + c0;
                    float* gqr = gq.row(q0 + a) + c0;
                    for (int b = 0; b < limit; ++b) {
                        const float ds = prow[b] * (dp[b] - dot) * sc;
                        if (ds == 0.0f) continue;
                        const float* kr = kv2.row(kv0 + b) + c0;
                        float* gkr = gk.row(kv0 + b) + c0;
                        for (int d = 0; d < hd; ++d) {
                            gqr[d] += ds * kr[d];
                            gkr[d] += ds * qr[d];
                        }
                    }
                }
            }
        }
    });
    return o;
}

// Plain single-group attention over full rows: softmax(q k^T / sqrt(d)) v with
// an optional additive mask on the score matrix (entries <= kMaskedScore drop
// out exactly). Composed from primitive ops.
inline Var attention(Var q, Var k, Var v, const Tensor* add_mask = nullptr) {
    Tape& t = tape();
    // Copy dims up front: pushing nodes below invalidates val() references.
    const int qr = t.val(q).rows, qc = t.val(q).cols;
    const int kr = t.val(k).rows, kc = t.val(k).cols;
    const int vr = t.val(v).rows;
    if (qc != kc)
        throw std::invalid_argument("attention: head dim mismatch q=" + shape_str(t.val(q)) +
                                    " k=" + shape_str(t.val(k)));
    if (kr != vr)
        throw std::invalid_argument("attention: k rows != v rows: " + shape_str(t.val(k)) +
                                    " vs " + shape_str(t.val(v)));
    if (add_mask && (add_mask->rows != qr || add_mask->cols != kr))
        throw std::invalid_argument("attention: mask " + shape_str(*add_mask) +
                                    " does not match scores " + std::to_string(qr) + "x" +
                                    std::to_string(kr));
    Var scores = scale(matmul(q, transpose(k)), 1.0f / std::sqrt(static_cast<float>(qc)));
    if (add_mask) scores = add(scores, input(*add_mask));
    return matmul(softmax_rows(scores), v);
}

// ---------------------------------------------------------------------------
// Reductions / losses

inline Var mean_rows(Var a) {
    Tape& t = tape();
    const Tensor& av = t.val(a);
    Tensor out(1, av.cols);
    for (int i = 0; i < av.rows; ++i)
        for (int j = 0; j < av.cols; ++j) out.at(0, j) += av.at(i, j);
    const float inv = 1.0f / static_cast<float>(av.rows);
    for (float& x : out.data) x *= inv;
    Var o = t.put(std::move(out));
    t.set_back(o, [a, o, inv](Tape& tp) {
        const Tensor& g = tp.grad(o);
        Tensor& ga = tp.grad(a);
        for (int i = 0; i < ga.rows; ++i)
            for (int j = 0; j < ga.cols; ++j) ga.at(i, j) += g.at(0, j) * inv;
    });
    return o;
}

inline Var sum_all(Var a) {
    Tape& t = tape();
    const Tensor& av = t.val(a);
    Tensor out(1, 1);
    for (float x : av.data) out.data[0] += x;
    Var o = t.put(std::move(out));
    t.set_back(o, [a, o](Tape& tp) {
        const float g = tp.grad(o).data[0];
        Tensor& ga = tp.grad(a);
        for (float& x : ga.data) x += g;
    });
    return o;
}

inline Var mean_all(Var a) {
    Tape& t = tape();
    const float inv = 1.0f / static_cast<float>(t.val(a).size());
    return scale(sum_all(a), inv);
}

// Mean of squared differences over all entries.
inline Var mse(Var a, Var b) {
    Tape& t = tape();
    const Tensor &av = t.val(a), &bv = t.val(b);
    require_same_shape("mse", av, bv);
    Tensor out(1, 1);
    for (size_t i = 0; i < av.size(); ++i) {
        const float d = av.data[i] - bv.data[i];
        out.data[0] += d * d;
    }
    const float inv = 1.0f / static_cast<float>(av.size());
    out.data[0] *= inv;
    Var o = t.put(std::move(out));
    t.set_back(o, [a, b, o, inv](Tape& tp) {
        const float g = tp.grad(o).data[0];
        const Tensor &av2 = tp.val(a), &bv2 = tp.val(b);
        Tensor &ga = tp.grad(a), &gb = tp.grad(b);
        for (size_t i = 0; i < av2.size(); ++i) {
            const float d = 2.0f * inv * (av2.data[i] - bv2.data[i]) * g;
            ga.data[i] += d;
            gb.data[i] -= d;
        }
    });
    return o;
}

// Sum of squared differences over all entries (no mean).
inline Var sse(Var a, Var b) {
    Tape& t = tape();
    const Tensor &av = t.val(a), &bv = t.val(b);
    require_same_shape("sse", av, bv);
    Tensor out(1, 1);
    for (size_t i = 0; i < av.size(); ++i) {
        const float d = av.data[i] - bv.data[i];
        out.data[0] += d * d;
    }
    Var o = t.put(std::move(out));
    t.set_back(o, [a, b, o](Tape& tp) {
        const float g = tp.grad(o).data[0];
        const Tensor &av2 = tp.val(a), &bv2 = tp.val(b);
        Tensor &ga = tp.grad(a), &gb = tp.grad(b);
        for (size_t i = 0; i < av2.size(); ++i) {
            const float d = 2.0f * (av2.data[i] - bv2.data[i]) * g;
            ga.data[i] += d;
            gb.data[i] -= d;
        }
    });
    return o;
}

// Mean absolute difference over all entries; subgradient 0 at ties.
inline Var l1(Var a, Var b) {
    Tape& t = tape();
    const Tensor &av = t.val(a), &bv = t.val(b);
    require_same_shape("l1", av, bv);
    Tensor out(1, 1);
    for (size_t i = 0; i < av.size(); ++i) out.data[0] += std::fabs(av.data[i] - bv.data[i]);
    const float inv = 1.0f / static_cast<float>(av.size());
    out.data[0] *= inv;
    Var o = t.put(std::move(out));
    t.set_back(o, [a, b, o, inv](Tape& tp) {
        const float g = tp.grad(o).data[0];
        const Tensor &av2 = tp.val(a), &bv2 = tp.val(b);
        Tensor &ga = tp.grad(a), &gb = tp.grad(b);
        for (size_t i = 0; i < av2.size(); ++i) {
            const float d = av2.data[i] - bv2.data[i];
            const float s = (d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f)) * inv * g;
            ga.data[i] += s;
            gb.data[i] -= s;
        }
    });
    return o;
}

// ---------------------------------------------------------------------------
// Op registry. Every differentiable primitive (and the attention composites)
// registers a randomized instance here; the conformance suite enumerates this
// list, so adding an op without a registry entry fails the coverage check.

struct OpCheck {
    std::string name;
    std::function<std::vector<Tensor>(Rng&)> make_inputs;
    std::function<Var(const std::vector<Var>&)> apply;
};

inline const std::vector<OpCheck>& op_checks() {
    static const std::vector<OpCheck> checks = [] {
        std::vector<OpCheck> v;
        auto rt = [](Rng& r, int rows, int cols, float lo = -1.5f, float hi = 1.5f) {
            return rand_uniform(r, rows, cols, lo, hi);
        };
        v.push_back({"add",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 4), rt(r, 3, 4)}; },
                     [](const std::vector<Var>& in) { return add(in[0], in[1]); }});
        v.push_back({"sub",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 4), rt(r, 3, 4)}; },
                     [](const std::vector<Var>& in) { return sub(in[0], in[1]); }});
        v.push_back({"mul",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 4), rt(r, 3, 4)}; },
                     [](const std::vector<Var>& in) { return mul(in[0], in[1]); }});
        v.push_back({"scale",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 4)}; },
                     [](const std::vector<Var>& in) { return scale(in[0], -0.7f); }});
        v.push_back({"add_scalar",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 4)}; },
                     [](const std::vector<Var>& in) { return add_scalar(in[0], 0.3f); }});
        v.push_back({"add_bias",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 4, 5), rt(r, 1, 5)}; },
                     [](const std::vector<Var>& in) { return add_bias(in[0], in[1]); }});
        v.push_back({"gelu",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 5, -2.0f, 2.0f)}; },
                     [](const std::vector<Var>& in) { return gelu(in[0]); }});
        v.push_back({"sigmoid",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 5, -3.0f, 3.0f)}; },
                     [](const std::vector<Var>& in) { return sigmoid(in[0]); }});
        v.push_back({"sin",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 5, -3.0f, 3.0f)}; },
                     [](const std::vector<Var>& in) { return sin_ew(in[0]); }});
        v.push_back({"cos",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 5, -3.0f, 3.0f)}; },
                     [](const std::vector<Var>& in) { return cos_ew(in[0]); }});
        v.push_back({"signexp",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 5, -2.0f, 2.0f)}; },
                     [](const std::vector<Var>& in) { return signexp_ew(in[0]); }});
        v.push_back({"signexp_inv",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 5, -3.0f, 3.0f)}; },
                     [](const std::vector<Var>& in) { return signexp_inv_ew(in[0]); }});
        v.push_back({"matmul",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 4), rt(r, 4, 5)}; },
                     [](const std::vector<Var>& in) { return matmul(in[0], in[1]); }});
        v.push_back({"transpose",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 5)}; },
                     [](const std::vector<Var>& in) { return transpose(in[0]); }});
        v.push_back({"reshape",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 4, 6)}; },
                     [](const std::vector<Var>& in) { return reshape(in[0], 8, 3); }});
        v.push_back({"slice_rows",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 6, 4)}; },
                     [](const std::vector<Var>& in) { return slice_rows(in[0], 1, 4); }});
        v.push_back({"slice_cols",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 4, 6)}; },
                     [](const std::vector<Var>& in) { return slice_cols(in[0], 2, 5); }});
        v.push_back({"concat_rows",
                     [rt](Rng& r) {
                         return std::vector<Tensor>{rt(r, 2, 4), rt(r, 3, 4), rt(r, 1, 4)};
                     },
                     [](const std::vector<Var>& in) { return concat_rows(in); }});
        v.push_back({"concat_cols",
                     [rt](Rng& r) {
                         return std::vector<Tensor>{rt(r, 3, 2), rt(r, 3, 3), rt(r, 3, 1)};
                     },
                     [](const std::vector<Var>& in) { return concat_cols(in); }});
        v.push_back({"gather_rows",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 5, 4)}; },
                     [](const std::vector<Var>& in) {
                         // Repeated index exercises the scatter-add.
                         return gather_rows(in[0], {4, 0, 2, 0});
                     }});
        v.push_back({"softmax_rows",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 6, -2.0f, 2.0f)}; },
                     [](const std::vector<Var>& in) { return softmax_rows(in[0]); }});
        v.push_back({"softmax_rows_masked",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 6, -2.0f, 2.0f)}; },
                     [](const std::vector<Var>& in) {
                         Tensor m(3, 6);
                         for (int i = 0; i < 3; ++i)
                             for (int j = 0; j < 6; ++j)
                                 m.at(i, j) = ((i + j) % 3 == 0) ? 2.0f * kMaskedScore : 0.0f;
                         return softmax_rows(add(in[0], input(m)));
                     }});
        v.push_back({"layer_norm",
                     [rt](Rng& r) {
                         return std::vector<Tensor>{rt(r, 3, 6), rt(r, 1, 6, 0.5f, 1.5f),
                                                    rt(r, 1, 6)};
                     },
                     [](const std::vector<Var>& in) { return layer_norm(in[0], in[1], in[2]); }});
        v.push_back({"rope_rotate",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 6, 8)}; },
                     [](const std::vector<Var>& in) {
                         std::vector<std::array<int, 2>> pos;
                         for (int i = 0; i < 6; ++i) pos.push_back({i % 3, i / 3});
                         return rope_rotate(in[0], pos);
                     }});
        v.push_back({"mean_rows",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 5, 4)}; },
                     [](const std::vector<Var>& in) { return mean_rows(in[0]); }});
        v.push_back({"sum_all",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 4)}; },
                     [](const std::vector<Var>& in) { return sum_all(in[0]); }});
        v.push_back({"mean_all",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 4)}; },
                     [](const std::vector<Var>& in) { return mean_all(in[0]); }});
        v.push_back({"mse",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 4), rt(r, 3, 4)}; },
                     [](const std::vector<Var>& in) { return mse(in[0], in[1]); }});
        v.push_back({"sse",
                     [rt](Rng& r) { return std::vector<Tensor>{rt(r, 3, 4), rt(r, 3, 4)}; },
                     [](const std::vector<Var>& in) { return sse(in[0], in[1]); }});
        v.push_back({"l1",
                     [rt](Rng& r) {
                         // Keep |a-b| away from the kink so finite differences are valid.
                         Tensor a = rt(r, 3, 4);
                         Tensor b = a;
                         for (float& x : b.data)
                             x += (r.uniform() < 0.5 ? -1.0f : 1.0f) *
                                  static_cast<float>(r.uniform(0.2, 1.0));
                         return std::vector<Tensor>{a, b};
                     },
                     [](const std::vector<Var>& in) { return l1(in[0], in[1]); }});
        v.push_back({"attention",
                     [rt](Rng& r) {
                         return std::vector<Tensor>{rt(r, 3, 8), rt(r, 5, 8), rt(r, 5, 6)};
                     },
                     [](const std::vector<Var>& in) { return attention(in[0], in[1], in[2]); }});
        v.push_back({"attention_masked",
                     [rt](Rng& r) {
                         return std::vector<Tensor>{rt(r, 3, 8), rt(r, 5, 8), rt(r, 5, 6)};
                     },
                     [](const std::vector<Var>& in) {
                         Tensor m(3, 5);
                         for (int i = 0; i < 3; ++i)
                             for (int j = 0; j < 5; ++j)
                                 m.at(i, j) = (j > i + 2) ? 2.0f * kMaskedScore : 0.0f;
                         return attention(in[0], in[1], in[2], &m);
                     }});
        v.push_back({"attn_groups",
                     [rt](Rng& r) {
                         return std::vector<Tensor>{rt(r, 6, 8), rt(r, 10, 8), rt(r, 10, 8)};
                     },
                     [](const std::vector<Var>& in) {
                         AttnSpec sp;
                         sp.groups = 2;
                         sp.q_rows = 3;
                         sp.kv_rows = 5;
                         sp.heads = 2;
                         return attn_groups(in[0], in[1], in[2], sp);
                     }});
        v.push_back({"attn_groups_causal",
                     [rt](Rng& r) {
                         return std::vector<Tensor>{rt(r, 8, 8), rt(r, 8, 8), rt(r, 8, 8)};
                     },
                     [](const std::vector<Var>& in) {
                         AttnSpec sp;
                         sp.groups = 2;
                         sp.q_rows = 4;
                         sp.kv_rows = 4;
                         sp.heads = 2;
                         sp.causal = true;
                         return attn_groups(in[0], in[1], in[2], sp);
                     }});
        return v;
    }();
    return checks;
}

}  // namespace metricnav::ad
