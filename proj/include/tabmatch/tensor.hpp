#pragma once

// Dense row-major tensors on a reverse-mode autodiff tape.
//
// A Tensor<S> is a lightweight handle (tape pointer + node index) into a
// Tape<S>, which owns the values, gradients and backward rules of every
// node pushed during a forward pass. Parameters live outside the tape in a
// ParamStore<S> and are leased onto a tape as leaf nodes per forward pass.
// S is float for training and double for gradient verification.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace tabmatch {

using Shape = std::vector<int>;

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error("usage error: " + msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

inline std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

// Deterministic PRNG. mt19937_64 is fully specified by the standard and the
// derived draws below avoid std::*_distribution, whose output is
// implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // standard normal via Box-Muller (no cached spare, one value per call)
    double normal() {
        double u1 = uniform(), u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // normal(0, stddev) resampled until within 2 standard deviations
    double truncated_normal(double stddev) {
        for (;;) {
            double z = normal();
            if (std::abs(z) <= 2.0) return z * stddev;
        }
    }

    // uniform integer in [0, n)
    int uniform_int(int n) { return static_cast<int>(gen_() % static_cast<std::uint64_t>(n)); }

private:
    std::mt19937_64 gen_;
};

// Mixes a seed with a stream index (fold, epoch, ...) into a fresh seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t x = seed ^ (0x9e3779b97f4a7c15ULL + stream * 0xbf58476d1ce4e5b9ULL);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

template <typename S>
class Tape;

template <typename S>
struct Param {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;
    std::vector<S> adam_m;
    std::vector<S> adam_v;
    std::int64_t adam_step = 0;
};

template <typename S>
class Tensor {
public:
    Tensor() = default;
    Tensor(Tape<S>* tape, int id) : tape_(tape), id_(id) {}

    bool valid() const { return tape_ != nullptr && id_ >= 0; }
    Tape<S>* tape() const { return tape_; }
    int id() const { return id_; }

    const Shape& shape() const;
    const std::vector<S>& values() const;
    int rank() const { return static_cast<int>(shape().size()); }
    int dim(int i) const { return shape()[static_cast<size_t>(i)]; }
    std::int64_t numel() const { return numel_of(shape()); }

    S scalar() const {
        if (numel() != 1) throw UsageError("scalar() on tensor of " + shape_str(shape()));
        return values()[0];
    }

private:
    Tape<S>* tape_ = nullptr;
    int id_ = -1;
};

template <typename S>
struct Node {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // sized lazily during backward
    std::vector<int> parents;
    std::function<void(Tape<S>&, int)> backward;  // adds into parent grads
    const char* op = "";
};

template <typename S>
class Tape {
public:
    // Every op output is scanned for NaN/Inf; a non-finite value is an error
    // state, not a representable tensor.
    bool check_finite = true;

    int push(Shape shape, std::vector<S> value, std::vector<int> parents,
             std::function<void(Tape<S>&, int)> backward, const char* op) {
        if (static_cast<std::int64_t>(value.size()) != numel_of(shape))
            throw ShapeError(std::string(op) + ": data length does not match shape");
        if (check_finite) {
            for (S v : value)
                if (!std::isfinite(static_cast<double>(v)))
                    throw NumericError(std::string("non-finite value produced by ") + op);
        }
        Node<S> n;
        n.shape = std::move(shape);
        n.value = std::move(value);
        n.parents = std::move(parents);
        n.backward = std::move(backward);
        n.op = op;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    Tensor<S> constant(Shape shape, std::vector<S> value) {
        return Tensor<S>(this, push(std::move(shape), std::move(value), {}, nullptr, "constant"));
    }

    Tensor<S> constant_of(Shape shape, const std::vector<double>& value) {
        std::vector<S> v(value.size());
        for (size_t i = 0; i < value.size(); ++i) v[i] = static_cast<S>(value[i]);
        return constant(std::move(shape), std::move(v));
    }

    Tensor<S> zeros(Shape shape) {
        std::vector<S> v(static_cast<size_t>(numel_of(shape)), S(0));
        return constant(std::move(shape), std::move(v));
    }

    Node<S>& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const Node<S>& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    size_t size() const { return nodes_.size(); }

    std::vector<S>& grad_buf(int id) {
        Node<S>& n = node(id);
        if (n.grad.empty()) n.grad.assign(n.value.size(), S(0));
        return n.grad;
    }

    // Leases a parameter onto this tape as a leaf node; repeated use of the
    // same parameter returns the same node.
    Tensor<S> leaf(Param<S>& param) {
        auto it = leaf_cache_.find(&param);
        if (it != leaf_cache_.end()) return Tensor<S>(this, it->second);
        int id = push(param.shape, param.value, {}, nullptr, "param");
        leaf_cache_.emplace(&param, id);
        param_leaves_.emplace_back(&param, id);
        return Tensor<S>(this, id);
    }

    // Reverse sweep from a scalar loss. Each node reachable from the loss is
    // visited exactly once, in reverse push order (parents always precede
    // children, so this is a reverse topological order).
    void backward(const Tensor<S>& loss) {
        if (loss.tape() != this) throw UsageError("backward: loss from another tape");
        if (loss.numel() != 1) throw UsageError("backward: loss must be scalar");
        const int root = loss.id();
        std::vector<char> reachable(static_cast<size_t>(root) + 1, 0);
        reachable[static_cast<size_t>(root)] = 1;
        for (int i = root; i >= 0; --i) {
            if (!reachable[static_cast<size_t>(i)]) continue;
            for (int p : nodes_[static_cast<size_t>(i)].parents) reachable[static_cast<size_t>(p)] = 1;
        }
        grad_buf(root)[0] = S(1);
        for (int i = root; i >= 0; --i) {
            Node<S>& n = nodes_[static_cast<size_t>(i)];
            if (!reachable[static_cast<size_t>(i)] || !n.backward) continue;
            if (n.grad.empty()) n.grad.assign(n.value.size(), S(0));
            n.backward(*this, i);
        }
    }

    // Adds leased leaf gradients to their parameters. Parameters never used
    // on this tape are untouched (their grads stay zero).
    void collect_grads() {
        for (auto& [param, id] : param_leaves_) {
            Node<S>& n = node(id);
            if (n.grad.empty()) continue;
            if (param->grad.size() != n.grad.size()) param->grad.assign(n.grad.size(), S(0));
            for (size_t i = 0; i < n.grad.size(); ++i) param->grad[i] += n.grad[i];
        }
    }

    void clear() {
        nodes_.clear();
        leaf_cache_.clear();
        param_leaves_.clear();
    }

private:
    std::vector<Node<S>> nodes_;
    std::unordered_map<const void*, int> leaf_cache_;
    std::vector<std::pair<Param<S>*, int>> param_leaves_;
};

template <typename S>
const Shape& Tensor<S>::shape() const {
    return tape_->node(id_).shape;
}
template <typename S>
const std::vector<S>& Tensor<S>::values() const {
    return tape_->node(id_).value;
}

enum class Init { Zeros, Ones, TruncNormal };

// Named parameters with Adam moment buffers. std::map keeps iteration order
// sorted by name, which makes updates and checkpoints deterministic.
template <typename S>
class ParamStore {
public:
    Param<S>& create(const std::string& name, Shape shape, Init init, Rng& rng,
                     double stddev = 0.02) {
        if (params_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        Param<S> p;
        p.shape = std::move(shape);
        size_t n = static_cast<size_t>(numel_of(p.shape));
        p.value.assign(n, S(0));
        p.grad.assign(n, S(0));
        p.adam_m.assign(n, S(0));
        p.adam_v.assign(n, S(0));
        switch (init) {
            case Init::Zeros: break;
            case Init::Ones: std::fill(p.value.begin(), p.value.end(), S(1)); break;
            case Init::TruncNormal:
                for (size_t i = 0; i < n; ++i) p.value[i] = static_cast<S>(rng.truncated_normal(stddev));
                break;
        }
        return params_.emplace(name, std::move(p)).first->second;
    }

    bool has(const std::string& name) const { return params_.count(name) != 0; }

    Param<S>& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }
    const Param<S>& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    Tensor<S> use(Tape<S>& tape, const std::string& name) { return tape.leaf(at(name)); }

    void zero_grads() {
        for (auto& [name, p] : params_) std::fill(p.grad.begin(), p.grad.end(), S(0));
    }

    // rescales all gradients so their global L2 norm is at most max_norm
    void clip_grad_norm(double max_norm) {
        double sq = 0.0;
        for (const auto& [name, p] : params_)
            for (S g : p.grad) sq += static_cast<double>(g) * static_cast<double>(g);
        const double norm = std::sqrt(sq);
        if (norm <= max_norm || norm == 0.0) return;
        const S factor = static_cast<S>(max_norm / norm);
        for (auto& [name, p] : params_)
            for (S& g : p.grad) g *= factor;
    }

    // Standard Adam with bias correction; gradients are zeroed after the
    // step. head_lr, when nonnegative, applies to parameters under "head."
    // (per-group learning rates, the usual fine-tuning arrangement).
    void adam_step(double lr, double beta1, double beta2, double eps, double head_lr = -1.0) {
        for (auto& [name, p] : params_) {
            p.adam_step += 1;
            const double rate = (head_lr >= 0.0 && name.rfind("head.", 0) == 0) ? head_lr : lr;
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(p.adam_step));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(p.adam_step));
            for (size_t i = 0; i < p.value.size(); ++i) {
                const double g = static_cast<double>(p.grad[i]);
                const double m = beta1 * static_cast<double>(p.adam_m[i]) + (1.0 - beta1) * g;
                const double v = beta2 * static_cast<double>(p.adam_v[i]) + (1.0 - beta2) * g * g;
                p.adam_m[i] = static_cast<S>(m);
                p.adam_v[i] = static_cast<S>(v);
                const double update = rate * (m / bc1) / (std::sqrt(v / bc2) + eps);
                p.value[i] = static_cast<S>(static_cast<double>(p.value[i]) - update);
            }
            std::fill(p.grad.begin(), p.grad.end(), S(0));
        }
    }

    // Parameter values and moments converted to another scalar type
    // (used to rerun a model in double precision for gradient checks).
    template <typename S2>
    ParamStore<S2> cast() const {
        ParamStore<S2> out;
        for (const auto& [name, p] : params_) {
            Param<S2> q;
            q.shape = p.shape;
            q.value.resize(p.value.size());
            for (size_t i = 0; i < p.value.size(); ++i) q.value[i] = static_cast<S2>(p.value[i]);
            q.grad.assign(p.value.size(), S2(0));
            q.adam_m.assign(p.value.size(), S2(0));
            q.adam_v.assign(p.value.size(), S2(0));
            out.raw().emplace(name, std::move(q));
        }
        return out;
    }

    std::map<std::string, Param<S>>& raw() { return params_; }
    const std::map<std::string, Param<S>>& raw() const { return params_; }
    size_t size() const { return params_.size(); }

private:
    std::map<std::string, Param<S>> params_;
};

template <typename S>
void backward(const Tensor<S>& loss, ParamStore<S>& store) {
    loss.tape()->backward(loss);
    store.zero_grads();
    loss.tape()->collect_grads();
}

template <typename S>
void adam_step(ParamStore<S>& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8) {
    store.adam_step(lr, beta1, beta2, eps);
}

// ---- raw GEMM kernels ------------------------------------------------------

namespace detail {

// c[m x n] (+)= a[m x k] * b[k x n]
template <typename S>
void gemm_nn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<size_t>(m) * n, S(0));
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<size_t>(i) * k;
        S* crow = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const S av = arow[p];
            const S* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m x n] (+)= a[m x k] * b[n x k]^T
template <typename S>
void gemm_nt(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<size_t>(i) * k;
        S* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const S* brow = b + static_cast<size_t>(j) * k;
            S acc = S(0);
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

// c[k x n] (+)= a[m x k]^T * b[m x n]
template <typename S>
void gemm_tn(const S* a, const S* b, S* c, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<size_t>(k) * n, S(0));
    for (int i = 0; i < m; ++i) {
        const S* arow = a + static_cast<size_t>(i) * k;
        const S* brow = b + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const S av = arow[p];
            S* crow = c + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <typename S>
void require_same_tape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.tape() != b.tape()) throw UsageError(std::string(op) + ": tensors on different tapes");
}

}  // namespace detail

// ---- primitive ops ---------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_tape(a, b, "add");
    if (a.shape() != b.shape())
        throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tape<S>& t = *a.tape();
    std::vector<S> out(a.values());
    const std::vector<S>& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    int id = t.push(a.shape(), std::move(out), {a.id(), b.id()},
                    [pa = a.id(), pb = b.id()](Tape<S>& tp, int self) {
                        const std::vector<S>& g = tp.node(self).grad;
                        std::vector<S>& ga = tp.grad_buf(pa);
                        std::vector<S>& gb = tp.grad_buf(pb);
                        for (size_t i = 0; i < g.size(); ++i) {
                            ga[i] += g[i];
                            gb[i] += g[i];
                        }
                    },
                    "add");
    return Tensor<S>(&t, id);
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_tape(a, b, "sub");
    if (a.shape() != b.shape())
        throw ShapeError("sub: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tape<S>& t = *a.tape();
    std::vector<S> out(a.values());
    const std::vector<S>& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    int id = t.push(a.shape(), std::move(out), {a.id(), b.id()},
                    [pa = a.id(), pb = b.id()](Tape<S>& tp, int self) {
                        const std::vector<S>& g = tp.node(self).grad;
                        std::vector<S>& ga = tp.grad_buf(pa);
                        std::vector<S>& gb = tp.grad_buf(pb);
                        for (size_t i = 0; i < g.size(); ++i) {
                            ga[i] += g[i];
                            gb[i] -= g[i];
                        }
                    },
                    "sub");
    return Tensor<S>(&t, id);
}

// elementwise (Hadamard) product
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_tape(a, b, "mul");
    if (a.shape() != b.shape())
        throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tape<S>& t = *a.tape();
    std::vector<S> out(a.values());
    const std::vector<S>& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    int id = t.push(a.shape(), std::move(out), {a.id(), b.id()},
                    [pa = a.id(), pb = b.id()](Tape<S>& tp, int self) {
                        const std::vector<S>& g = tp.node(self).grad;
                        const std::vector<S>& av = tp.node(pa).value;
                        const std::vector<S>& bv2 = tp.node(pb).value;
                        std::vector<S>& ga = tp.grad_buf(pa);
                        std::vector<S>& gb = tp.grad_buf(pb);
                        for (size_t i = 0; i < g.size(); ++i) {
                            ga[i] += g[i] * bv2[i];
                            gb[i] += g[i] * av[i];
                        }
                    },
                    "mul");
    return Tensor<S>(&t, id);
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, double c) {
    Tape<S>& t = *a.tape();
    std::vector<S> out(a.values());
    const S cs = static_cast<S>(c);
    for (S& v : out) v *= cs;
    int id = t.push(a.shape(), std::move(out), {a.id()},
                    [pa = a.id(), cs](Tape<S>& tp, int self) {
                        const std::vector<S>& g = tp.node(self).grad;
                        std::vector<S>& ga = tp.grad_buf(pa);
                        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * cs;
                    },
                    "scale");
    return Tensor<S>(&t, id);
}

// x[... x d] + b[d], broadcast over leading axes
template <typename S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& b) {
    detail::require_same_tape(x, b, "add_bias");
    if (b.rank() != 1 || x.rank() < 1 || x.shape().back() != b.dim(0))
        throw ShapeError("add_bias: " + shape_str(x.shape()) + " vs " + shape_str(b.shape()));
    Tape<S>& t = *x.tape();
    const int d = b.dim(0);
    std::vector<S> out(x.values());
    const std::vector<S>& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i % static_cast<size_t>(d)];
    int id = t.push(x.shape(), std::move(out), {x.id(), b.id()},
                    [px = x.id(), pb = b.id(), d](Tape<S>& tp, int self) {
                        const std::vector<S>& g = tp.node(self).grad;
                        std::vector<S>& gx = tp.grad_buf(px);
                        std::vector<S>& gb = tp.grad_buf(pb);
                        for (size_t i = 0; i < g.size(); ++i) {
                            gx[i] += g[i];
                            gb[i % static_cast<size_t>(d)] += g[i];
                        }
                    },
                    "add_bias");
    return Tensor<S>(&t, id);
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_tape(a, b, "matmul");
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expects rank-2 operands");
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner dims " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tape<S>& t = *a.tape();
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<S> out(static_cast<size_t>(m) * n);
    detail::gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n, false);
    int id = t.push({m, n}, std::move(out), {a.id(), b.id()},
                    [pa = a.id(), pb = b.id(), m, k, n](Tape<S>& tp, int self) {
                        const std::vector<S>& g = tp.node(self).grad;
                        // dA += dC * B^T ; dB += A^T * dC
                        detail::gemm_nt(g.data(), tp.node(pb).value.data(), tp.grad_buf(pa).data(),
                                        m, n, k, true);
                        detail::gemm_tn(tp.node(pa).value.data(), g.data(), tp.grad_buf(pb).data(),
                                        m, k, n, true);
                    },
                    "matmul");
    return Tensor<S>(&t, id);
}

// a[m x k] * b[n x k]^T -> [m x n]
template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require_same_tape(a, b, "matmul_nt");
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw ShapeError("matmul_nt: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tape<S>& t = *a.tape();
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    std::vector<S> out(static_cast<size_t>(m) * n);
    detail::gemm_nt(a.values().data(), b.values().data(), out.data(), m, k, n, false);
    int id = t.push({m, n}, std::move(out), {a.id(), b.id()},
                    [pa = a.id(), pb = b.id(), m, k, n](Tape<S>& tp, int self) {
                        const std::vector<S>& g = tp.node(self).grad;
                        // dA += dC * B ; dB += dC^T * A
                        detail::gemm_nn(g.data(), tp.node(pb).value.data(), tp.grad_buf(pa).data(),
                                        m, n, k, true);
                        detail::gemm_tn(g.data(), tp.node(pa).value.data(), tp.grad_buf(pb).data(),
                                        m, n, k, true);
                    },
                    "matmul_nt");
    return Tensor<S>(&t, id);
}

// softmax over the last axis, max-subtracted for stability
template <typename S>
Tensor<S> softmax_last(const Tensor<S>& x) {
    if (x.rank() < 1) throw ShapeError("softmax_last: rank >= 1 required");
    Tape<S>& t = *x.tape();
    const int n = x.shape().back();
    const size_t slices = static_cast<size_t>(x.numel()) / static_cast<size_t>(n);
    std::vector<S> out(x.values());
    for (size_t s = 0; s < slices; ++s) {
        S* row = out.data() + s * static_cast<size_t>(n);
        S mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            row[j] = static_cast<S>(std::exp(static_cast<double>(row[j] - mx)));
            sum += static_cast<double>(row[j]);
        }
        for (int j = 0; j < n; ++j) row[j] = static_cast<S>(static_cast<double>(row[j]) / sum);
    }
    int id = t.push(x.shape(), std::move(out), {x.id()},
                    [px = x.id(), n, slices](Tape<S>& tp, int self) {
                        const Node<S>& me = tp.node(self);
                        std::vector<S>& gx = tp.grad_buf(px);
                        for (size_t s = 0; s < slices; ++s) {
                            const S* y = me.value.data() + s * static_cast<size_t>(n);
                            const S* gy = me.grad.data() + s * static_cast<size_t>(n);
                            S* gi = gx.data() + s * static_cast<size_t>(n);
                            double dot = 0.0;
                            for (int j = 0; j < n; ++j) dot += static_cast<double>(gy[j]) * y[j];
                            for (int j = 0; j < n; ++j)
                                gi[j] += static_cast<S>(y[j] * (static_cast<double>(gy[j]) - dot));
                        }
                    },
                    "softmax_last");
    return Tensor<S>(&t, id);
}

// per-slice normalization over the last axis, then y = gamma * x_hat + beta
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     double eps) {
    detail::require_same_tape(x, gamma, "layer_norm");
    detail::require_same_tape(x, beta, "layer_norm");
    if (x.rank() < 1) throw ShapeError("layer_norm: rank >= 1 required");
    const int d = x.shape().back();
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
        throw ShapeError("layer_norm: gamma/beta must be [d]");
    Tape<S>& t = *x.tape();
    const size_t slices = static_cast<size_t>(x.numel()) / static_cast<size_t>(d);
    std::vector<S> out(x.values().size());
    std::vector<S> xhat(x.values().size());
    std::vector<S> inv_std(slices);
    const std::vector<S>& xv = x.values();
    const std::vector<S>& gv = gamma.values();
    const std::vector<S>& bv = beta.values();
    for (size_t s = 0; s < slices; ++s) {
        const S* row = xv.data() + s * static_cast<size_t>(d);
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += static_cast<double>(row[j]);
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = static_cast<double>(row[j]) - mean;
            var += c * c;
        }
        var /= d;
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[s] = static_cast<S>(istd);
        for (int j = 0; j < d; ++j) {
            const double xh = (static_cast<double>(row[j]) - mean) * istd;
            xhat[s * static_cast<size_t>(d) + static_cast<size_t>(j)] = static_cast<S>(xh);
            out[s * static_cast<size_t>(d) + static_cast<size_t>(j)] =
                static_cast<S>(xh * static_cast<double>(gv[static_cast<size_t>(j)]) +
                               static_cast<double>(bv[static_cast<size_t>(j)]));
        }
    }
    int id = t.push(
        x.shape(), std::move(out), {x.id(), gamma.id(), beta.id()},
        [px = x.id(), pg = gamma.id(), pb = beta.id(), d, slices, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](Tape<S>& tp, int self) {
            const std::vector<S>& g = tp.node(self).grad;
            const std::vector<S>& gv2 = tp.node(pg).value;
            std::vector<S>& gx = tp.grad_buf(px);
            std::vector<S>& gg = tp.grad_buf(pg);
            std::vector<S>& gb = tp.grad_buf(pb);
            for (size_t s = 0; s < slices; ++s) {
                const size_t off = s * static_cast<size_t>(d);
                double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                for (int j = 0; j < d; ++j) {
                    const size_t i = off + static_cast<size_t>(j);
                    const double dy = static_cast<double>(g[i]);
                    gb[static_cast<size_t>(j)] += static_cast<S>(dy);
                    gg[static_cast<size_t>(j)] += static_cast<S>(dy * static_cast<double>(xhat[i]));
                    const double dxhat = dy * static_cast<double>(gv2[static_cast<size_t>(j)]);
                    mean_dxhat += dxhat;
                    mean_dxhat_xhat += dxhat * static_cast<double>(xhat[i]);
                }
                mean_dxhat /= d;
                mean_dxhat_xhat /= d;
                const double istd = static_cast<double>(inv_std[s]);
                for (int j = 0; j < d; ++j) {
                    const size_t i = off + static_cast<size_t>(j);
                    const double dxhat = static_cast<double>(g[i]) *
                                         static_cast<double>(gv2[static_cast<size_t>(j)]);
                    gx[i] += static_cast<S>(
                        istd * (dxhat - mean_dxhat - static_cast<double>(xhat[i]) * mean_dxhat_xhat));
                }
            }
        },
        "layer_norm");
    return Tensor<S>(&t, id);
}

// GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
    Tape<S>& t = *x.tape();
    constexpr double kAlpha = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kCubic = 0.044715;
    std::vector<S> out(x.values().size());
    const std::vector<S>& xv = x.values();
    for (size_t i = 0; i < out.size(); ++i) {
        const double v = static_cast<double>(xv[i]);
        const double u = kAlpha * (v + kCubic * v * v * v);
        out[i] = static_cast<S>(0.5 * v * (1.0 + std::tanh(u)));
    }
    int id = t.push(x.shape(), std::move(out), {x.id()},
                    [px = x.id()](Tape<S>& tp, int self) {
                        const std::vector<S>& g = tp.node(self).grad;
                        const std::vector<S>& xv2 = tp.node(px).value;
                        std::vector<S>& gx = tp.grad_buf(px);
                        for (size_t i = 0; i < g.size(); ++i) {
                            const double v = static_cast<double>(xv2[i]);
                            const double u = kAlpha * (v + kCubic * v * v * v);
                            const double th = std::tanh(u);
                            const double du = kAlpha * (1.0 + 3.0 * kCubic * v * v);
                            const double dydx = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
                            gx[i] += static_cast<S>(static_cast<double>(g[i]) * dydx);
                        }
                    },
                    "gelu");
    return Tensor<S>(&t, id);
}

// concatenation along axis 0; operands must share trailing dims
template <typename S>
Tensor<S> concat0(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw UsageError("concat0: no operands");
    Tape<S>& t = *parts[0].tape();
    Shape rest(parts[0].shape().begin() + 1, parts[0].shape().end());
    int total = 0;
    std::vector<int> ids;
    for (const Tensor<S>& p : parts) {
        detail::require_same_tape(parts[0], p, "concat0");
        Shape prest(p.shape().begin() + 1, p.shape().end());
        if (prest != rest) throw ShapeError("concat0: trailing dims differ");
        total += p.dim(0);
        ids.push_back(p.id());
    }
    Shape out_shape = {total};
    out_shape.insert(out_shape.end(), rest.begin(), rest.end());
    std::vector<S> out;
    out.reserve(static_cast<size_t>(numel_of(out_shape)));
    for (const Tensor<S>& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    int id = t.push(std::move(out_shape), std::move(out), ids,
                    [ids](Tape<S>& tp, int self) {
                        const std::vector<S>& g = tp.node(self).grad;
                        size_t off = 0;
                        for (int pid : ids) {
                            std::vector<S>& gp = tp.grad_buf(pid);
                            for (size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
                            off += gp.size();
                        }
                    },
                    "concat0");
    return Tensor<S>(&t, id);
}

// rows [r0, r1) along axis 0
template <typename S>
Tensor<S> slice0(const Tensor<S>& x, int r0, int r1) {
    if (x.rank() < 1 || r0 < 0 || r1 > x.dim(0) || r0 >= r1)
        throw ShapeError("slice0: bad range");
    Tape<S>& t = *x.tape();
    const size_t stride = static_cast<size_t>(x.numel()) / static_cast<size_t>(x.dim(0));
    Shape out_shape = x.shape();
    out_shape[0] = r1 - r0;
    std::vector<S> out(x.values().begin() + static_cast<std::ptrdiff_t>(stride * r0),
                       x.values().begin() + static_cast<std::ptrdiff_t>(stride * r1));
    int id = t.push(std::move(out_shape), std::move(out), {x.id()},
                    [px = x.id(), r0, stride](Tape<S>& tp, int self) {
                        const std::vector<S>& g = tp.node(self).grad;
                        std::vector<S>& gx = tp.grad_buf(px);
                        const size_t off = stride * static_cast<size_t>(r0);
                        for (size_t i = 0; i < g.size(); ++i) gx[off + i] += g[i];
                    },
                    "slice0");
    return Tensor<S>(&t, id);
}

// gathers rows of a rank-2 tensor (duplicates allowed; backward scatter-adds)
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, std::vector<int> rows) {
    if (x.rank() != 2) throw ShapeError("gather_rows: rank-2 required");
    const int n = x.dim(0), d = x.dim(1);
    for (int r : rows)
        if (r < 0 || r >= n) throw ShapeError("gather_rows: row index out of range");
    Tape<S>& t = *x.tape();
    const int n_out = static_cast<int>(rows.size());
    std::vector<S> out(rows.size() * static_cast<size_t>(d));
    const std::vector<S>& xv = x.values();
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy_n(xv.data() + static_cast<size_t>(rows[i]) * d, d,
                    out.data() + i * static_cast<size_t>(d));
    int id = t.push({n_out, d}, std::move(out), {x.id()},
                    [px = x.id(), rows = std::move(rows), d](Tape<S>& tp, int self) {
                        const std::vector<S>& g = tp.node(self).grad;
                        std::vector<S>& gx = tp.grad_buf(px);
                        for (size_t i = 0; i < rows.size(); ++i)
                            for (int j = 0; j < d; ++j)
                                gx[static_cast<size_t>(rows[i]) * d + static_cast<size_t>(j)] +=
                                    g[i * static_cast<size_t>(d) + static_cast<size_t>(j)];
                    },
                    "gather_rows");
    return Tensor<S>(&t, id);
}

// averages row ranges of a rank-2 tensor: each (start, end) pair becomes one
// output row equal to the mean of rows [start, end)
template <typename S>
Tensor<S> pool_rows(const Tensor<S>& x, std::vector<std::pair<int, int>> groups) {
    if (x.rank() != 2) throw ShapeError("pool_rows: rank-2 required");
    const int n = x.dim(0), d = x.dim(1);
    for (auto& [s, e] : groups)
        if (s < 0 || e > n || s >= e) throw ShapeError("pool_rows: bad group range");
    Tape<S>& t = *x.tape();
    const int n_out = static_cast<int>(groups.size());
    std::vector<S> out(groups.size() * static_cast<size_t>(d), S(0));
    const std::vector<S>& xv = x.values();
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        const auto [s, e] = groups[gi];
        S* orow = out.data() + gi * static_cast<size_t>(d);
        for (int r = s; r < e; ++r) {
            const S* xrow = xv.data() + static_cast<size_t>(r) * d;
            for (int j = 0; j < d; ++j) orow[j] += xrow[j];
        }
        const S inv = S(1) / static_cast<S>(e - s);
        for (int j = 0; j < d; ++j) orow[j] *= inv;
    }
    int id = t.push({n_out, d}, std::move(out), {x.id()},
                    [px = x.id(), groups = std::move(groups), d](Tape<S>& tp, int self) {
                        const std::vector<S>& g = tp.node(self).grad;
                        std::vector<S>& gx = tp.grad_buf(px);
                        for (size_t gi = 0; gi < groups.size(); ++gi) {
                            const auto [s, e] = groups[gi];
                            const S inv = S(1) / static_cast<S>(e - s);
                            const S* grow = g.data() + gi * static_cast<size_t>(d);
                            for (int r = s; r < e; ++r)
                                for (int j = 0; j < d; ++j)
                                    gx[static_cast<size_t>(r) * d + static_cast<size_t>(j)] +=
                                        grow[j] * inv;
                        }
                    },
                    "pool_rows");
    return Tensor<S>(&t, id);
}

// columns [c0, c1) of a rank-2 tensor
template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, int c0, int c1) {
    if (x.rank() != 2) throw ShapeError("slice_cols: rank-2 required");
    const int n = x.dim(0), d = x.dim(1);
    if (c0 < 0 || c1 > d || c0 >= c1) throw ShapeError("slice_cols: bad range");
    Tape<S>& t = *x.tape();
    const int w = c1 - c0;
    std::vector<S> out(static_cast<size_t>(n) * w);
    const std::vector<S>& xv = x.values();
    for (int i = 0; i < n; ++i)
        std::copy_n(xv.data() + static_cast<size_t>(i) * d + c0, w,
                    out.data() + static_cast<size_t>(i) * w);
    int id = t.push({n, w}, std::move(out), {x.id()},
                    [px = x.id(), n, d, c0, w](Tape<S>& tp, int self) {
                        const std::vector<S>& g = tp.node(self).grad;
                        std::vector<S>& gx = tp.grad_buf(px);
                        for (int i = 0; i < n; ++i)
                            for (int j = 0; j < w; ++j)
                                gx[static_cast<size_t>(i) * d + static_cast<size_t>(c0 + j)] +=
                                    g[static_cast<size_t>(i) * w + static_cast<size_t>(j)];
                    },
                    "slice_cols");
    return Tensor<S>(&t, id);
}

// concatenation along axis 1 of rank-2 tensors with equal row counts
template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw UsageError("concat_cols: no operands");
    Tape<S>& t = *parts[0].tape();
    const int n = parts[0].dim(0);
    int total = 0;
    std::vector<int> ids;
    std::vector<int> widths;
    for (const Tensor<S>& p : parts) {
        detail::require_same_tape(parts[0], p, "concat_cols");
        if (p.rank() != 2 || p.dim(0) != n) throw ShapeError("concat_cols: row counts differ");
        total += p.dim(1);
        ids.push_back(p.id());
        widths.push_back(p.dim(1));
    }
    std::vector<S> out(static_cast<size_t>(n) * total);
    int col = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const std::vector<S>& pv = parts[pi].values();
        const int w = widths[pi];
        for (int i = 0; i < n; ++i)
            std::copy_n(pv.data() + static_cast<size_t>(i) * w, w,
                        out.data() + static_cast<size_t>(i) * total + col);
        col += w;
    }
    int id = t.push({n, total}, std::move(out), ids,
                    [ids, widths, n, total](Tape<S>& tp, int self) {
                        const std::vector<S>& g = tp.node(self).grad;
                        int col = 0;
                        for (size_t pi = 0; pi < ids.size(); ++pi) {
                            std::vector<S>& gp = tp.grad_buf(ids[pi]);
                            const int w = widths[pi];
                            for (int i = 0; i < n; ++i)
                                for (int j = 0; j < w; ++j)
                                    gp[static_cast<size_t>(i) * w + static_cast<size_t>(j)] +=
                                        g[static_cast<size_t>(i) * total +
                                          static_cast<size_t>(col + j)];
                            col += w;
                        }
                    },
                    "concat_cols");
    return Tensor<S>(&t, id);
}

// mean over axis 0: [n x d] -> [d]
template <typename S>
Tensor<S> mean0(const Tensor<S>& x) {
    if (x.rank() != 2) throw ShapeError("mean0: rank-2 required");
    const int n = x.dim(0), d = x.dim(1);
    Tape<S>& t = *x.tape();
    std::vector<S> out(static_cast<size_t>(d), S(0));
    const std::vector<S>& xv = x.values();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out[static_cast<size_t>(j)] += xv[static_cast<size_t>(i) * d + j];
    const S inv = S(1) / static_cast<S>(n);
    for (S& v : out) v *= inv;
    int id = t.push({d}, std::move(out), {x.id()},
                    [px = x.id(), n, d, inv](Tape<S>& tp, int self) {
                        const std::vector<S>& g = tp.node(self).grad;
                        std::vector<S>& gx = tp.grad_buf(px);
                        for (int i = 0; i < n; ++i)
                            for (int j = 0; j < d; ++j)
                                gx[static_cast<size_t>(i) * d + static_cast<size_t>(j)] +=
                                    g[static_cast<size_t>(j)] * inv;
                    },
                    "mean0");
    return Tensor<S>(&t, id);
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
    Tape<S>& t = *x.tape();
    double acc = 0.0;
    for (S v : x.values()) acc += static_cast<double>(v);
    int id = t.push({1}, {static_cast<S>(acc)}, {x.id()},
                    [px = x.id()](Tape<S>& tp, int self) {
                        const S g = tp.node(self).grad[0];
                        std::vector<S>& gx = tp.grad_buf(px);
                        for (S& v : gx) v += g;
                    },
                    "sum_all");
    return Tensor<S>(&t, id);
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
    if (numel_of(shape) != x.numel()) throw ShapeError("reshape: element count mismatch");
    Tape<S>& t = *x.tape();
    int id = t.push(std::move(shape), x.values(), {x.id()},
                    [px = x.id()](Tape<S>& tp, int self) {
                        const std::vector<S>& g = tp.node(self).grad;
                        std::vector<S>& gx = tp.grad_buf(px);
                        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                    },
                    "reshape");
    return Tensor<S>(&t, id);
}

// mean over rows of -log softmax(logits)[label]; fused for a stable backward
template <typename S>
Tensor<S> cross_entropy_with_logits(const Tensor<S>& logits, std::vector<int> labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy_with_logits: rank-2 logits required");
    const int n = logits.dim(0), c = logits.dim(1);
    if (static_cast<int>(labels.size()) != n)
        throw ShapeError("cross_entropy_with_logits: label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= c) throw UsageError("cross_entropy_with_logits: label out of range");
    Tape<S>& t = *logits.tape();
    const std::vector<S>& xv = logits.values();
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const S* row = xv.data() + static_cast<size_t>(i) * c;
        double mx = static_cast<double>(row[0]);
        for (int j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double sum = 0.0;
        for (int j = 0; j < c; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
        total += mx + std::log(sum) - static_cast<double>(row[labels[static_cast<size_t>(i)]]);
    }
    int id = t.push({1}, {static_cast<S>(total / n)}, {logits.id()},
                    [px = logits.id(), labels = std::move(labels), n, c](Tape<S>& tp, int self) {
                        const double g = static_cast<double>(tp.node(self).grad[0]) / n;
                        const std::vector<S>& xv2 = tp.node(px).value;
                        std::vector<S>& gx = tp.grad_buf(px);
                        for (int i = 0; i < n; ++i) {
                            const S* row = xv2.data() + static_cast<size_t>(i) * c;
                            double mx = static_cast<double>(row[0]);
                            for (int j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
                            double sum = 0.0;
                            for (int j = 0; j < c; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
                            for (int j = 0; j < c; ++j) {
                                const double p = std::exp(static_cast<double>(row[j]) - mx) / sum;
                                const double ind = (j == labels[static_cast<size_t>(i)]) ? 1.0 : 0.0;
                                gx[static_cast<size_t>(i) * c + static_cast<size_t>(j)] +=
                                    static_cast<S>(g * (p - ind));
                            }
                        }
                    },
                    "cross_entropy_with_logits");
    return Tensor<S>(&t, id);
}

// Multi-head scaled dot-product attention core over already-projected
// q/k/v [n x d], fused across heads. The rows form independent segments
// given by `block_sizes` (summing to n); attention never crosses a segment
// boundary. A single segment of size n is ordinary full attention; many
// equal segments run shared-weight attention over aligned groups in one
// call. Per-head outputs are laid out side by side as d/heads-wide column
// stripes. `saved_weights`, when given, receives each head's row-stochastic
// weight matrix per segment (forward values), segment-major per head.
template <typename S>
Tensor<S> blocked_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, int heads,
                            std::vector<int> block_sizes,
                            std::vector<std::vector<S>>* saved_weights = nullptr) {
    detail::require_same_tape(q, k, "blocked_attention");
    detail::require_same_tape(q, v, "blocked_attention");
    if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape())
        throw ShapeError("blocked_attention: q/k/v must share [n x d]");
    const int n = q.dim(0), d = q.dim(1);
    if (heads < 1 || d % heads != 0) throw ConfigError("blocked_attention: d % heads != 0");
    int covered = 0;
    for (int b : block_sizes) {
        if (b < 1) throw ShapeError("blocked_attention: empty block");
        covered += b;
    }
    if (covered != n) throw ShapeError("blocked_attention: blocks must cover all rows");
    Tape<S>& t = *q.tape();
    const int dh = d / heads;
    const int blocks = static_cast<int>(block_sizes.size());
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // weights[h * blocks + b] is that segment's softmax matrix for head h
    auto weights = std::make_shared<std::vector<std::vector<S>>>(
        static_cast<size_t>(heads) * blocks);
    std::vector<S> out(static_cast<size_t>(n) * d, S(0));
    const S* qv = q.values().data();
    const S* kv = k.values().data();
    const S* vv = v.values().data();
    for (int h = 0; h < heads; ++h) {
        const int col = h * dh;
        int r0 = 0;
        for (int b = 0; b < blocks; ++b) {
            const int block = block_sizes[static_cast<size_t>(b)];
            std::vector<S>& w = (*weights)[static_cast<size_t>(h) * blocks + b];
            w.assign(static_cast<size_t>(block) * block, S(0));
            for (int i = 0; i < block; ++i) {
                const S* qrow = qv + static_cast<size_t>(r0 + i) * d + col;
                S* wrow = w.data() + static_cast<size_t>(i) * block;
                double mx = -1e300;
                for (int j = 0; j < block; ++j) {
                    const S* krow = kv + static_cast<size_t>(r0 + j) * d + col;
                    double acc = 0;
                    for (int c = 0; c < dh; ++c)
                        acc += static_cast<double>(qrow[c]) * static_cast<double>(krow[c]);
                    acc *= att_scale;
                    wrow[j] = static_cast<S>(acc);
                    mx = std::max(mx, acc);
                }
                double sum = 0;
                for (int j = 0; j < block; ++j) {
                    const double e = std::exp(static_cast<double>(wrow[j]) - mx);
                    wrow[j] = static_cast<S>(e);
                    sum += e;
                }
                S* orow = out.data() + static_cast<size_t>(r0 + i) * d + col;
                for (int j = 0; j < block; ++j) {
                    wrow[j] = static_cast<S>(static_cast<double>(wrow[j]) / sum);
                    const S* vrow = vv + static_cast<size_t>(r0 + j) * d + col;
                    for (int c = 0; c < dh; ++c) orow[c] += wrow[j] * vrow[c];
                }
            }
            r0 += block;
        }
    }
    if (saved_weights) *saved_weights = *weights;

    int id = t.push(
        {n, d}, std::move(out), {q.id(), k.id(), v.id()},
        [pq = q.id(), pk = k.id(), pv = v.id(), heads, blocks, dh, d, att_scale, weights,
         block_sizes = std::move(block_sizes)](Tape<S>& tp, int self) {
            const std::vector<S>& g = tp.node(self).grad;
            const std::vector<S>& qv2 = tp.node(pq).value;
            const std::vector<S>& kv2 = tp.node(pk).value;
            const std::vector<S>& vv2 = tp.node(pv).value;
            std::vector<S>& gq = tp.grad_buf(pq);
            std::vector<S>& gk = tp.grad_buf(pk);
            std::vector<S>& gv = tp.grad_buf(pv);
            std::vector<S> dw;
            for (int h = 0; h < heads; ++h) {
                const int col = h * dh;
                int r0 = 0;
                for (int b = 0; b < blocks; ++b) {
                    const int block = block_sizes[static_cast<size_t>(b)];
                    const std::vector<S>& w = (*weights)[static_cast<size_t>(h) * blocks + b];
                    dw.assign(static_cast<size_t>(block) * block, S(0));
                    // dW = dCtx * V^T ; dV += W^T * dCtx
                    for (int i = 0; i < block; ++i) {
                        const S* grow = g.data() + static_cast<size_t>(r0 + i) * d + col;
                        S* dwrow = dw.data() + static_cast<size_t>(i) * block;
                        for (int j = 0; j < block; ++j) {
                            const S* vrow = vv2.data() + static_cast<size_t>(r0 + j) * d + col;
                            double acc = 0;
                            for (int c = 0; c < dh; ++c)
                                acc += static_cast<double>(grow[c]) * static_cast<double>(vrow[c]);
                            dwrow[j] = static_cast<S>(acc);
                        }
                        const S* wrow = w.data() + static_cast<size_t>(i) * block;
                        for (int j = 0; j < block; ++j) {
                            S* gvrow = gv.data() + static_cast<size_t>(r0 + j) * d + col;
                            for (int c = 0; c < dh; ++c) gvrow[c] += wrow[j] * grow[c];
                        }
                    }
                    // dS = W o (dW - rowsum(dW o W)); dQ += dS*K*scale; dK += dS^T*Q*scale
                    for (int i = 0; i < block; ++i) {
                        const S* wrow = w.data() + static_cast<size_t>(i) * block;
                        S* dwrow = dw.data() + static_cast<size_t>(i) * block;
                        double dot = 0;
                        for (int j = 0; j < block; ++j)
                            dot += static_cast<double>(dwrow[j]) * wrow[j];
                        for (int j = 0; j < block; ++j)
                            dwrow[j] = static_cast<S>(wrow[j] * (static_cast<double>(dwrow[j]) - dot) *
                                                      att_scale);
                        S* gqrow = gq.data() + static_cast<size_t>(r0 + i) * d + col;
                        const S* qrow = qv2.data() + static_cast<size_t>(r0 + i) * d + col;
                        for (int j = 0; j < block; ++j) {
                            const S* krow = kv2.data() + static_cast<size_t>(r0 + j) * d + col;
                            S* gkrow = gk.data() + static_cast<size_t>(r0 + j) * d + col;
                            for (int c = 0; c < dh; ++c) {
                                gqrow[c] += dwrow[j] * krow[c];
                                gkrow[c] += dwrow[j] * qrow[c];
                            }
                        }
                    }
                    r0 += block;
                }
            }
        },
        "blocked_attention");
    return Tensor<S>(&t, id);
}

// inverted dropout; p = 0 is the identity (no node pushed)
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, Rng& rng) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw ConfigError("dropout: p must be < 1");
    Tape<S>& t = *x.tape();
    std::vector<S> mask(x.values().size());
    const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
    for (S& m : mask) m = (rng.uniform() < p) ? S(0) : keep_scale;
    std::vector<S> out(x.values());
    for (size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    int id = t.push(x.shape(), std::move(out), {x.id()},
                    [px = x.id(), mask = std::move(mask)](Tape<S>& tp, int self) {
                        const std::vector<S>& g = tp.node(self).grad;
                        std::vector<S>& gx = tp.grad_buf(px);
                        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                    },
                    "dropout");
    return Tensor<S>(&t, id);
}

template <typename S>
Tensor<S> row(const Tensor<S>& x, int r) {
    return slice0(x, r, r + 1);
}

}  // namespace tabmatch
