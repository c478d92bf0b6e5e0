#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

// Reverse-mode automatic differentiation on a per-thread tape.
//
// Var is a double plus an optional node index into the active tape. A Var
// with idx < 0 is a constant and never touches the tape; anything derived
// from a leaf records one node with weighted edges to its parents, so the
// backward sweep is a single reverse pass over the edge list.
//
// Contract: Vars with idx >= 0 are only valid while the tape that created
// them is the active tape (see TapeScope). One tape is owned by one thread.

namespace nesde::ad {

class Tape {
public:
    struct Edge {
        double w;
        std::int32_t parent;
    };

    int leaf() {
        off_.push_back(static_cast<std::uint32_t>(edges_.size()));
        return static_cast<int>(off_.size()) - 1;
    }

    int push1(int p, double w) {
        const int id = leaf();
        edges_.push_back({w, p});
        return id;
    }

    int push2(int pa, double wa, int pb, double wb) {
        const int id = leaf();
        edges_.push_back({wa, pa});
        edges_.push_back({wb, pb});
        return id;
    }

    // n-ary nodes: begin_node(), then edge() for each parent.
    int begin_node() { return leaf(); }
    void edge(int parent, double w) { edges_.push_back({w, parent}); }

    std::size_t size() const { return off_.size(); }
    std::size_t num_edges() const { return edges_.size(); }

    void clear() {
        off_.clear();
        edges_.clear();
    }

    void reserve(std::size_t nodes, std::size_t edges) {
        off_.reserve(nodes);
        edges_.reserve(edges);
    }

    // Accumulates d(node root)/d(node i) into adj[i] for all i <= root.
    void backward(int root, std::vector<double>& adj) const {
        assert(root >= 0 && root < static_cast<int>(off_.size()));
        adj.assign(off_.size(), 0.0);
        adj[static_cast<std::size_t>(root)] = 1.0;
        for (int i = root; i >= 0; --i) {
            const double a = adj[static_cast<std::size_t>(i)];
            if (a == 0.0) continue;
            const std::uint32_t e0 = off_[static_cast<std::size_t>(i)];
            const std::uint32_t e1 = (i + 1 < static_cast<int>(off_.size()))
                                         ? off_[static_cast<std::size_t>(i) + 1]
                                         : static_cast<std::uint32_t>(edges_.size());
            for (std::uint32_t e = e0; e < e1; ++e)
                adj[static_cast<std::size_t>(edges_[e].parent)] += a * edges_[e].w;
        }
    }

private:
    std::vector<std::uint32_t> off_;
    std::vector<Edge> edges_;
};

inline Tape*& active_tape() {
    thread_local Tape* t = nullptr;
    return t;
}

// RAII activation of a tape on the current thread.
struct TapeScope {
    Tape* prev;
    explicit TapeScope(Tape& t) : prev(active_tape()) { active_tape() = &t; }
    ~TapeScope() { active_tape() = prev; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
};

struct Var {
    double v = 0.0;
    std::int32_t idx = -1;

    Var() = default;
    Var(double value) : v(value) {}  // NOLINT: implicit constants are intended
    Var(double value, int index) : v(value), idx(static_cast<std::int32_t>(index)) {}

    double value() const { return v; }
    bool tracked() const { return idx >= 0; }

    // Fresh differentiable input on the active tape.
    static Var leaf(double value) {
        Tape* t = active_tape();
        assert(t != nullptr);
        return Var(value, t->leaf());
    }

    // Same value, no gradient flow.
    Var detach() const { return Var(v); }

    Var operator-() const {
        if (idx < 0) return Var(-v);
        return Var(-v, active_tape()->push1(idx, -1.0));
    }

    Var& operator+=(const Var& o);
    Var& operator-=(const Var& o);
    Var& operator*=(const Var& o);
    Var& operator/=(const Var& o);
};

namespace detail {
inline Var unary(const Var& a, double value, double dda) {
    if (a.idx < 0) return Var(value);
    return Var(value, active_tape()->push1(a.idx, dda));
}

inline Var binary(const Var& a, const Var& b, double value, double dda, double ddb) {
    if (a.idx < 0 && b.idx < 0) return Var(value);
    Tape* t = active_tape();
    assert(t != nullptr);
    if (a.idx >= 0 && b.idx >= 0) return Var(value, t->push2(a.idx, dda, b.idx, ddb));
    if (a.idx >= 0) return Var(value, t->push1(a.idx, dda));
    return Var(value, t->push1(b.idx, ddb));
}
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) { return detail::binary(a, b, a.v + b.v, 1.0, 1.0); }
inline Var operator-(const Var& a, const Var& b) { return detail::binary(a, b, a.v - b.v, 1.0, -1.0); }
inline Var operator*(const Var& a, const Var& b) { return detail::binary(a, b, a.v * b.v, b.v, a.v); }
inline Var operator/(const Var& a, const Var& b) {
    const double inv = 1.0 / b.v;
    return detail::binary(a, b, a.v * inv, inv, -a.v * inv * inv);
}

inline Var& Var::operator+=(const Var& o) { return *this = *this + o; }
inline Var& Var::operator-=(const Var& o) { return *this = *this - o; }
inline Var& Var::operator*=(const Var& o) { return *this = *this * o; }
inline Var& Var::operator/=(const Var& o) { return *this = *this / o; }

inline bool operator<(const Var& a, const Var& b) { return a.v < b.v; }
inline bool operator>(const Var& a, const Var& b) { return a.v > b.v; }
inline bool operator<=(const Var& a, const Var& b) { return a.v <= b.v; }
inline bool operator>=(const Var& a, const Var& b) { return a.v >= b.v; }
inline bool operator==(const Var& a, const Var& b) { return a.v == b.v; }
inline bool operator!=(const Var& a, const Var& b) { return a.v != b.v; }

inline Var exp(const Var& a) {
    const double e = std::exp(a.v);
    return detail::unary(a, e, e);
}
inline Var log(const Var& a) { return detail::unary(a, std::log(a.v), 1.0 / a.v); }
inline Var sqrt(const Var& a) {
    const double s = std::sqrt(a.v);
    return detail::unary(a, s, 0.5 / s);
}
inline Var sin(const Var& a) { return detail::unary(a, std::sin(a.v), std::cos(a.v)); }
inline Var cos(const Var& a) { return detail::unary(a, std::cos(a.v), -std::sin(a.v)); }
inline Var tanh(const Var& a) {
    const double t = std::tanh(a.v);
    return detail::unary(a, t, 1.0 - t * t);
}
inline Var abs(const Var& a) { return detail::unary(a, std::abs(a.v), a.v < 0.0 ? -1.0 : 1.0); }
inline Var pow(const Var& a, double p) {
    return detail::unary(a, std::pow(a.v, p), p * std::pow(a.v, p - 1.0));
}
inline Var atan2(const Var& y, const Var& x) {
    const double d = x.v * x.v + y.v * y.v;
    return detail::binary(y, x, std::atan2(y.v, x.v), x.v / d, -y.v / d);
}

// log(1 + e^x), overflow-safe; derivative is the logistic sigmoid.
inline Var softplus(const Var& a) {
    const double x = a.v;
    const double val = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    const double sig = x > 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    return detail::unary(a, val, sig);
}
inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline Var max(const Var& a, const Var& b) { return a.v >= b.v ? a : b; }
inline Var min(const Var& a, const Var& b) { return a.v <= b.v ? a : b; }

inline bool isfinite(const Var& a) { return std::isfinite(a.v); }

// Fused w.x + b over tracked weights and tracked inputs: one node,
// two edges per term. The workhorse of MLP layers.
inline Var affine(std::span<const Var> w, std::span<const Var> x, const Var& b) {
    assert(w.size() == x.size());
    double acc = b.v;
    for (std::size_t i = 0; i < w.size(); ++i) acc += w[i].v * x[i].v;
    Tape* t = active_tape();
    if (t == nullptr) return Var(acc);
    const int id = t->begin_node();
    if (b.idx >= 0) t->edge(b.idx, 1.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i].idx >= 0) t->edge(w[i].idx, x[i].v);
        if (x[i].idx >= 0) t->edge(x[i].idx, w[i].v);
    }
    return Var(acc, id);
}

// Same with an untracked input vector (one edge per term).
inline Var affine_const(std::span<const Var> w, std::span<const double> x, const Var& b) {
    assert(w.size() == x.size());
    double acc = b.v;
    for (std::size_t i = 0; i < w.size(); ++i) acc += w[i].v * x[i];
    Tape* t = active_tape();
    if (t == nullptr) return Var(acc);
    const int id = t->begin_node();
    if (b.idx >= 0) t->edge(b.idx, 1.0);
    for (std::size_t i = 0; i < w.size(); ++i)
        if (w[i].idx >= 0) t->edge(w[i].idx, x[i]);
    return Var(acc, id);
}

// Scalar access helpers so templated code can read values of either type.
inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.v; }

}  // namespace nesde::ad

namespace Eigen {

template <>
struct NumTraits<nesde::ad::Var> : NumTraits<double> {
    using Real = nesde::ad::Var;
    using NonInteger = nesde::ad::Var;
    using Literal = double;
    using Nested = nesde::ad::Var;
    enum {
        IsComplex = 0,
        IsInteger = 0,
        IsSigned = 1,
        RequireInitialization = 1,
        ReadCost = 1,
        AddCost = 3,
        MulCost = 3,
    };
};

template <typename BinaryOp>
struct ScalarBinaryOpTraits<nesde::ad::Var, double, BinaryOp> {
    using ReturnType = nesde::ad::Var;
};
template <typename BinaryOp>
struct ScalarBinaryOpTraits<double, nesde::ad::Var, BinaryOp> {
    using ReturnType = nesde::ad::Var;
};

}  // namespace Eigen
