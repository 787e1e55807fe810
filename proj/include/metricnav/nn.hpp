#pragma once

// Parameter store, layer modules, Adam, and the checkpoint format:
// params.bin (flat little-endian f32) + params.index (structured text with
// name, shape, offset, checksum per tensor).

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "metricnav/autodiff.hpp"
#include "metricnav/io.hpp"

namespace metricnav::nn {

using ad::Tensor;
using ad::Var;

struct ParamStore {
    struct Entry {
        std::string name;
        Tensor value;
        Tensor m, v;  // Adam state, sized on first optimizer step
        bool trainable = true;
    };
    std::vector<Entry> entries;

    int add(const std::string& name, Tensor init, bool trainable = true) {
        if (find(name) >= 0) throw std::invalid_argument("ParamStore: duplicate name " + name);
        entries.push_back(Entry{name, std::move(init), {}, {}, trainable});
        return static_cast<int>(entries.size()) - 1;
    }
    int find(const std::string& name) const {
        for (size_t i = 0; i < entries.size(); ++i)
            if (entries[i].name == name) return static_cast<int>(i);
        return -1;
    }
    size_t total_params() const {
        size_t n = 0;
        for (const Entry& e : entries) n += e.value.size();
        return n;
    }
    // Marks every entry whose name starts with `prefix`.
    int set_trainable(const std::string& prefix, bool trainable) {
        int hits = 0;
        for (Entry& e : entries)
            if (e.name.rfind(prefix, 0) == 0) {
                e.trainable = trainable;
                ++hits;
            }
        return hits;
    }
};

// Pushes every parameter onto the active tape once per forward pass; layers
// fetch their Vars by parameter id.
struct Ctx {
    ParamStore* ps;
    std::vector<Var> vars;

    explicit Ctx(ParamStore& store) : ps(&store) {
        ad::Tape& t = ad::tape();
        vars.reserve(store.entries.size());
        for (const ParamStore::Entry& e : store.entries) vars.push_back(t.put(e.value));
    }
    Var operator[](int pid) const { return vars[pid]; }
};

// Gradients aligned with ps.entries; entries untouched by backward get zeros.
inline std::vector<Tensor> collect_grads(ad::Tape& t, const Ctx& c) {
    std::vector<Tensor> g;
    g.reserve(c.vars.size());
    for (size_t i = 0; i < c.vars.size(); ++i) {
        if (t.has_grad(c.vars[i]))
            g.push_back(t.grad(c.vars[i]));
        else
            g.push_back(Tensor(c.ps->entries[i].value.rows, c.ps->entries[i].value.cols));
    }
    return g;
}

inline double global_grad_norm(const std::vector<Tensor>& grads) {
    double s = 0.0;
    for (const Tensor& g : grads)
        for (float x : g.data) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

inline double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
    const double n = global_grad_norm(grads);
    if (n > max_norm && n > 0.0) {
        const float s = static_cast<float>(max_norm / n);
        for (Tensor& g : grads)
            for (float& x : g.data) x *= s;
    }
    return n;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamCfg {
    float lr = 3e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct Adam {
    AdamCfg cfg;
    int64_t t = 0;

    void step(ParamStore& ps, const std::vector<Tensor>& grads) {
        if (grads.size() != ps.entries.size())
            throw std::invalid_argument("Adam: grads size mismatch");
        ++t;
        const float c1 = 1.0f - static_cast<float>(std::pow(cfg.beta1, static_cast<double>(t)));
        const float c2 = 1.0f - static_cast<float>(std::pow(cfg.beta2, static_cast<double>(t)));
        for (size_t i = 0; i < ps.entries.size(); ++i) {
            ParamStore::Entry& e = ps.entries[i];
            if (!e.trainable) continue;
            const Tensor& g = grads[i];
            if (!g.same_shape(e.value))
                throw std::invalid_argument("Adam: grad shape mismatch for " + e.name);
            if (e.m.empty()) {
                e.m = Tensor(e.value.rows, e.value.cols);
                e.v = Tensor(e.value.rows, e.value.cols);
            }
            for (size_t j = 0; j < e.value.size(); ++j) {
                const float gj = g.data[j];
                e.m.data[j] = cfg.beta1 * e.m.data[j] + (1.0f - cfg.beta1) * gj;
                e.v.data[j] = cfg.beta2 * e.v.data[j] + (1.0f - cfg.beta2) * gj * gj;
                const float mhat = e.m.data[j] / c1;
                const float vhat = e.v.data[j] / c2;
                e.value.data[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Layers

inline Tensor glorot(Rng& rng, int in, int out) {
    const float lim = std::sqrt(6.0f / static_cast<float>(in + out));
    return ad::rand_uniform(rng, in, out, -lim, lim);
}

struct Linear {
    int w = -1, b = -1;
    Linear() = default;
    Linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng)
        : w(ps.add(name + ".w", glorot(rng, in, out))), b(ps.add(name + ".b", Tensor(1, out))) {}
    Var operator()(const Ctx& c, Var x) const { return ad::add_bias(ad::matmul(x, c[w]), c[b]); }
};

struct LayerNorm {
    int gamma = -1, beta = -1;
    LayerNorm() = default;
    LayerNorm(ParamStore& ps, const std::string& name, int c)
        : gamma(ps.add(name + ".g", Tensor::full(1, c, 1.0f))),
          beta(ps.add(name + ".b", Tensor(1, c))) {}
    Var operator()(const Ctx& c, Var x) const { return ad::layer_norm(x, c[gamma], c[beta]); }
};

struct Mlp {
    Linear fc1, fc2;
    Mlp() = default;
    Mlp(ParamStore& ps, const std::string& name, int in, int hidden, int out, Rng& rng)
        : fc1(ps, name + ".fc1", in, hidden, rng), fc2(ps, name + ".fc2", hidden, out, rng) {}
    Var operator()(const Ctx& c, Var x) const { return fc2(c, ad::gelu(fc1(c, x))); }
};

using RopePos = std::vector<std::array<int, 2>>;

struct Mha {
    Linear wq, wk, wv, wo;
    int heads = 1;
    Mha() = default;
    Mha(ParamStore& ps, const std::string& name, int c, int n_heads, Rng& rng)
        : wq(ps, name + ".q", c, c, rng),
          wk(ps, name + ".k", c, c, rng),
          wv(ps, name + ".v", c, c, rng),
          wo(ps, name + ".o", c, c, rng),
          heads(n_heads) {}

    // Grouped attention. RoPE, when positions are given, is applied to the
    // projected queries/keys so scores depend on relative positions only.
    Var operator()(const Ctx& c, Var xq, Var xkv, ad::AttnSpec sp, const RopePos* pos_q = nullptr,
                   const RopePos* pos_kv = nullptr, Tensor* probs_out = nullptr) const {
        Var q = wq(c, xq);
        Var k = wk(c, xkv);
        Var v = wv(c, xkv);
        if (pos_q) q = ad::rope_rotate(q, *pos_q);
        if (pos_kv) k = ad::rope_rotate(k, *pos_kv);
        sp.heads = heads;
        return wo(c, ad::attn_groups(q, k, v, sp, probs_out));
    }
};

// Pre-norm transformer block: x += attn(ln1(x)); x += mlp(ln2(x)).
struct Block {
    LayerNorm ln1, ln2;
    Mha attn;
    Mlp mlp;
    Block() = default;
    Block(ParamStore& ps, const std::string& name, int c, int heads, int mlp_hidden, Rng& rng)
        : ln1(ps, name + ".ln1", c),
          ln2(ps, name + ".ln2", c),
          attn(ps, name + ".attn", c, heads, rng),
          mlp(ps, name + ".mlp", c, mlp_hidden, c, rng) {}

    Var self_attend(const Ctx& c, Var x, const ad::AttnSpec& sp, const RopePos* pos = nullptr,
                    Tensor* probs_out = nullptr) const {
        Var h = ln1(c, x);
        x = ad::add(x, attn(c, h, h, sp, pos, pos, probs_out));
        return ad::add(x, mlp(c, ln2(c, x)));
    }
    Var cross_attend(const Ctx& c, Var x, Var kv, const ad::AttnSpec& sp,
                     Tensor* probs_out = nullptr) const {
        x = ad::add(x, attn(c, ln1(c, x), kv, sp, nullptr, nullptr, probs_out));
        return ad::add(x, mlp(c, ln2(c, x)));
    }
};

// ---------------------------------------------------------------------------
// Checkpoints

inline void save_named_tensors(const std::vector<std::pair<std::string, const Tensor*>>& named,
                               const std::string& bin_path, const std::string& index_path) {
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open " + bin_path);
    std::string index = "checkpoint 1\ntensors " + std::to_string(named.size()) + "\n";
    uint64_t offset = 0;
    for (const auto& [name, t] : named) {
        const uint64_t bytes = t->size() * sizeof(float);
        bin.write(reinterpret_cast<const char*>(t->data.data()),
                  static_cast<std::streamsize>(bytes));
        const uint64_t h = io::fnv1a64(t->data.data(), bytes);
        index += "tensor " + name + " " + std::to_string(t->rows) + " " +
                 std::to_string(t->cols) + " " + std::to_string(offset) + " " +
                 std::to_string(bytes) + " " + io::hex64(h) + "\n";
        offset += bytes;
    }
    if (!bin) throw std::runtime_error("write failed: " + bin_path);
    bin.close();
    std::ofstream idx(index_path, std::ios::binary);
    if (!idx) throw std::runtime_error("cannot open " + index_path);
    idx << index;
}

struct TensorRecord {
    std::string name;
    int rows = 0, cols = 0;
    uint64_t offset = 0, bytes = 0, hash = 0;
};

inline std::vector<TensorRecord> read_tensor_index(const std::string& index_path) {
    std::ifstream in(index_path);
    if (!in) throw std::runtime_error("cannot open " + index_path);
    std::string word;
    if (!(in >> word) || word != "checkpoint")
        throw std::runtime_error(index_path + ": not a checkpoint index");
    int version = 0;
    in >> version;
    if (!(in >> word) || word != "tensors")
        throw std::runtime_error(index_path + ": missing tensor count");
    size_t count = 0;
    in >> count;
    std::vector<TensorRecord> recs;
    recs.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        TensorRecord r;
        std::string hash_hex;
        if (!(in >> word >> r.name >> r.rows >> r.cols >> r.offset >> r.bytes >> hash_hex) ||
            word != "tensor")
            throw std::runtime_error(index_path + ": bad tensor record " + std::to_string(i));
        r.hash = std::stoull(hash_hex, nullptr, 16);
        recs.push_back(std::move(r));
    }
    return recs;
}

inline std::vector<std::pair<std::string, Tensor>> load_named_tensors(
    const std::string& bin_path, const std::string& index_path) {
    const std::vector<TensorRecord> recs = read_tensor_index(index_path);
    const std::vector<uint8_t> blob = io::read_file_bytes(bin_path);
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(recs.size());
    for (const TensorRecord& r : recs) {
        if (r.offset + r.bytes > blob.size())
            throw std::runtime_error(bin_path + ": tensor " + r.name + " exceeds file size");
        if (r.bytes != static_cast<uint64_t>(r.rows) * r.cols * sizeof(float))
            throw std::runtime_error(index_path + ": tensor " + r.name + " size/shape mismatch");
        if (io::fnv1a64(blob.data() + r.offset, r.bytes) != r.hash)
            throw std::runtime_error(bin_path + ": checksum mismatch for tensor " + r.name);
        Tensor t(r.rows, r.cols);
        std::memcpy(t.data.data(), blob.data() + r.offset, r.bytes);
        out.emplace_back(r.name, std::move(t));
    }
    return out;
}

// dir/params.bin + dir/params.index. Optimizer state, when requested, goes to
// dir/opt.bin + dir/opt.index with entries <name>#m, <name>#v and adam#t.
inline void save_checkpoint(const ParamStore& ps, const std::string& dir,
                            const Adam* opt = nullptr) {
    io::ensure_dir(dir);
    std::vector<std::pair<std::string, const Tensor*>> named;
    named.reserve(ps.entries.size());
    for (const ParamStore::Entry& e : ps.entries) named.emplace_back(e.name, &e.value);
    save_named_tensors(named, dir + "/params.bin", dir + "/params.index");
    if (opt) {
        std::vector<std::pair<std::string, const Tensor*>> onamed;
        Tensor tstep(1, 1);
        tstep.data[0] = static_cast<float>(opt->t);
        onamed.emplace_back("adam#t", &tstep);
        for (const ParamStore::Entry& e : ps.entries) {
            if (e.m.empty()) continue;
            onamed.emplace_back(e.name + "#m", &e.m);
            onamed.emplace_back(e.name + "#v", &e.v);
        }
        save_named_tensors(onamed, dir + "/opt.bin", dir + "/opt.index");
    }
}

// Loads by name into an already-constructed store; every store entry must be
// present with a matching shape.
inline void load_checkpoint(ParamStore& ps, const std::string& dir, Adam* opt = nullptr) {
    auto named = load_named_tensors(dir + "/params.bin", dir + "/params.index");
    size_t used = 0;
    for (auto& [name, t] : named) {
        const int id = ps.find(name);
        if (id < 0) throw std::runtime_error(dir + ": checkpoint tensor " + name +
                                             " has no matching parameter");
        ParamStore::Entry& e = ps.entries[id];
        if (!e.value.same_shape(t))
            throw std::runtime_error(dir + ": shape mismatch for " + name + ": " +
                                     ad::shape_str(e.value) + " vs " + ad::shape_str(t));
        e.value = std::move(t);
        ++used;
    }
    if (used != ps.entries.size())
        throw std::runtime_error(dir + ": checkpoint covers " + std::to_string(used) + " of " +
                                 std::to_string(ps.entries.size()) + " parameters");
    if (opt) {
        auto onamed = load_named_tensors(dir + "/opt.bin", dir + "/opt.index");
        for (auto& [name, t] : onamed) {
            if (name == "adam#t") {
                opt->t = static_cast<int64_t>(t.data[0]);
                continue;
            }
            const size_t sep = name.rfind('#');
            const std::string base = name.substr(0, sep);
            const int id = ps.find(base);
            if (id < 0) throw std::runtime_error(dir + ": optimizer tensor " + name +
                                                 " has no matching parameter");
            if (name.substr(sep) == "#m")
                ps.entries[id].m = std::move(t);
            else
                ps.entries[id].v = std::move(t);
        }
    }
}

}  // namespace metricnav::nn
