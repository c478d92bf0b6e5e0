#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nesde/esde.hpp"

// Network machinery: plain MLPs over flat parameter vectors, the
// hypernetwork g1(C; theta) whose output vector *is* the weight vector of
// g2, and the constraint heads that map raw network outputs onto valid
// dynamics (eigenvalues with sign constraints, normalized basis columns,
// Cholesky-parameterized covariances). Parameters are passed as spans so the
// same forward code runs on doubles and on autodiff Vars.
//
// Flat parameter layout per layer: W (out x in, row-major), then bias.

namespace nesde {

struct MlpSpec {
    std::vector<int> layer_sizes;  // input, hidden..., output
    enum class Act { kTanh, kRelu };
    Act activation = Act::kTanh;

    int input_size() const { return layer_sizes.front(); }
    int output_size() const { return layer_sizes.back(); }
    int param_count() const {
        int total = 0;
        for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
            total += (layer_sizes[l] + 1) * layer_sizes[l + 1];
        return total;
    }
};

namespace detail {

template <class T>
T activate(const T& x, MlpSpec::Act act) {
    using std::tanh;
    using ad::tanh;
    if (act == MlpSpec::Act::kTanh) return tanh(x);
    return ad::value_of(x) > 0.0 ? x : T(0.0);
}

template <class T, class U>
void dense_layer(std::span<const T> params, int in, int out, const std::vector<U>& x,
                 std::vector<T>& y) {
    y.resize(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
        std::span<const T> w = params.subspan(static_cast<std::size_t>(o) * in, in);
        const T& b = params[static_cast<std::size_t>(out) * in + o];
        if constexpr (std::is_same_v<T, ad::Var>) {
            if constexpr (std::is_same_v<U, double>)
                y[static_cast<std::size_t>(o)] = ad::affine_const(w, std::span<const double>(x), b);
            else
                y[static_cast<std::size_t>(o)] = ad::affine(w, std::span<const ad::Var>(x), b);
        } else {
            double acc = b;
            for (int i = 0; i < in; ++i) acc += w[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
            y[static_cast<std::size_t>(o)] = acc;
        }
    }
}

}  // namespace detail

// Forward pass; `input` may be doubles (untracked) or tape Vars.
template <class T, class U>
std::vector<T> mlp_forward(const MlpSpec& spec, std::span<const T> params, std::span<const U> input) {
    if (static_cast<int>(input.size()) != spec.input_size())
        throw NumericError("mlp: input dimension mismatch");
    if (static_cast<int>(params.size()) != spec.param_count())
        throw NumericError("mlp: parameter count mismatch");
    std::vector<T> cur;
    std::vector<T> next;
    std::size_t off = 0;
    const std::size_t nlayers = spec.layer_sizes.size() - 1;
    for (std::size_t l = 0; l < nlayers; ++l) {
        const int in = spec.layer_sizes[l];
        const int out = spec.layer_sizes[l + 1];
        const auto layer = params.subspan(off, static_cast<std::size_t>((in + 1) * out));
        if (l == 0) {
            std::vector<U> x(input.begin(), input.end());
            detail::dense_layer<T, U>(layer, in, out, x, next);
        } else {
            detail::dense_layer<T, T>(layer, in, out, cur, next);
        }
        if (l + 1 < nlayers)
            for (auto& v : next) v = detail::activate<T>(v, spec.activation);
        cur.swap(next);
        off += static_cast<std::size_t>((in + 1) * out);
    }
    return cur;
}

struct HeadConfig {
    int n = 2;
    int m = 1;
    int k = 1;
    int n_complex_pairs = 1;
    bool stable = false;
    bool hypernet_disabled = false;
    double interval_dt = 1.0;

    int n_real() const { return n - 2 * n_complex_pairs; }
    int spectrum_raws() const { return n_real() + 2 * n_complex_pairs; }
    int tril_count() const { return n * (n + 1) / 2; }
    // raw g2 output: eigenvalues, V entries, Q factor
    int g2_output_size() const { return spectrum_raws() + n * n + tril_count(); }
    int g2_input_size() const { return n + n * n; }
    // raw prior output: mu0, Sigma0 factor, alpha, R diagonal
    int prior_output_size() const { return n + tril_count() + n + m; }
};

struct HyperModel {
    HeadConfig head;
    MlpSpec g1_spec;
    MlpSpec g2_spec;
    MlpSpec prior_spec;
    Vec theta;         // g1 parameters
    Vec prior_params;  // prior network parameters
    Mat b_global;      // n x k control mapping
    std::vector<bool> b_mask;

    int context_dim() const { return g1_spec.input_size(); }
    int b_free_count() const {
        int rows = 0;
        for (int i = 0; i < head.n; ++i)
            if (b_mask.empty() || !b_mask[static_cast<std::size_t>(i)]) ++rows;
        return rows * head.k;
    }
    int trainable_count() const {
        return g1_spec.param_count() + prior_spec.param_count() + b_free_count();
    }
};

// g2's weight vector from the hypernetwork. With the hypernetwork disabled
// the context is replaced by all-ones, so every sequence shares one g2.
template <class T>
std::vector<T> hyper_forward(const HyperModel& model, std::span<const T> theta,
                             std::span<const double> context) {
    if (static_cast<int>(context.size()) != model.context_dim())
        throw NumericError("hyper_forward: context dimension mismatch");
    if (model.head.hypernet_disabled) {
        const std::vector<double> ones(context.size(), 1.0);
        return mlp_forward<T, double>(model.g1_spec, theta, ones);
    }
    return mlp_forward<T, double>(model.g1_spec, theta, context);
}

template <class T>
struct DynHeads {
    SpectrumT<T> spectrum;
    EigenBasisT<T> basis;
    MatX<T> q;
    T penalty;  // max(0, log cond(V) - log 1e6)
};

// Maps raw g2 outputs to a valid (Spectrum, EigenBasis, Q).
template <class T>
DynHeads<T> apply_dynamics_heads(const HeadConfig& h, std::span<const T> raw) {
    using std::log;
    using std::sqrt;
    using ad::log;
    using ad::softplus;
    using ad::sqrt;
    if (static_cast<int>(raw.size()) != h.g2_output_size())
        throw NumericError("dynamics heads: raw size mismatch");
    DynHeads<T> out;
    const int n = h.n;
    std::size_t p = 0;
    for (int i = 0; i < h.n_real(); ++i) {
        const T& r = raw[p++];
        out.spectrum.real_eigs.push_back(h.stable ? T(-softplus(r)) : r);
    }
    for (int j = 0; j < h.n_complex_pairs; ++j) {
        const T& ra = raw[p++];
        const T& rb = raw[p++];
        const T a = h.stable ? T(-softplus(ra)) : ra;
        const T b = softplus(rb) + T(1e-3);
        out.spectrum.complex_pairs.emplace_back(a, b);
    }
    MatX<T> v(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) v(i, j) = raw[p++];
    // column scale normalization (smooth; sign/phase is left free here)
    for (int i = 0; i < h.n_real(); ++i) {
        T s2 = T(0.0);
        for (int r = 0; r < n; ++r) s2 += v(r, i) * v(r, i);
        v.col(i) /= sqrt(s2 + T(1e-12));
    }
    for (int j = 0; j < h.n_complex_pairs; ++j) {
        const int c = h.n_real() + 2 * j;
        T s2 = T(0.0);
        for (int r = 0; r < n; ++r) s2 += v(r, c) * v(r, c) + v(r, c + 1) * v(r, c + 1);
        const T s = sqrt(s2 * T(0.5) + T(1e-12));
        v.col(c) /= s;
        v.col(c + 1) /= s;
    }
    out.basis.v = v;

    MatX<T> l = MatX<T>::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            const T& r = raw[p++];
            l(i, j) = (i == j) ? T(softplus(r)) : r;
        }
    out.q = (l * l.transpose()).eval();

    // Conditioning guard, via the Frobenius estimate |V|_F |V^{-1}|_F. Exact
    // singularity (measure zero) yields a large constant instead of a throw so
    // the head stays total.
    double det_val = 1.0;
    try {
        Mat vd = value_matrix<T>(v);
        invert<double>(vd, &det_val);
    } catch (const SingularBasisError&) {
        det_val = 0.0;
    }
    if (det_val == 0.0) {
        out.penalty = T(1e9);
    } else {
        const MatX<T> vinv = invert<T>(v);
        T f2 = T(0.0), fi2 = T(0.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                f2 += v(i, j) * v(i, j);
                fi2 += vinv(i, j) * vinv(i, j);
            }
        const T logcond = T(0.5) * (log(f2) + log(fi2));
        out.penalty = ad::value_of(logcond) > std::log(1e6) ? T(logcond - T(std::log(1e6)))
                                                            : T(0.0);
    }
    return out;
}

// Runs g2 with the hypernetwork-provided weights on the belief summary and
// applies the heads. `summary` is (mu, vec Sigma), detached by the caller
// when gradients should not flow through it.
template <class T>
DynHeads<T> dynamics_heads(const HeadConfig& h, const MlpSpec& g2_spec, std::span<const T> w_g2,
                           std::span<const T> summary) {
    const std::vector<T> raw = mlp_forward<T, T>(g2_spec, w_g2, summary);
    return apply_dynamics_heads<T>(h, raw);
}

template <class T>
struct SeqHeads {
    VecX<T> alpha;
    MatX<T> r;
};

// alpha raw; R diagonal softplus with a 1e-4 floor. Evaluated once per
// sequence and frozen.
template <class T>
SeqHeads<T> apply_sequence_heads(const HeadConfig& h, std::span<const T> raw) {
    using ad::softplus;
    if (static_cast<int>(raw.size()) != h.n + h.m)
        throw NumericError("sequence heads: raw size mismatch");
    SeqHeads<T> out;
    out.alpha = VecX<T>(h.n);
    for (int i = 0; i < h.n; ++i) out.alpha(i) = raw[static_cast<std::size_t>(i)];
    out.r = MatX<T>::Zero(h.m, h.m);
    for (int j = 0; j < h.m; ++j)
        out.r(j, j) = T(softplus(raw[static_cast<std::size_t>(h.n + j)])) + T(1e-4);
    return out;
}

template <class T>
struct PriorOut {
    BeliefT<T> belief;
    VecX<T> alpha;
    MatX<T> r;
};

// Context-conditioned state prior: N(mu0, L0 L0' + 1e-4 I), plus the
// per-sequence alpha and R.
template <class T>
PriorOut<T> prior_forward(const HyperModel& model, std::span<const T> prior_params,
                          std::span<const double> context) {
    const HeadConfig& h = model.head;
    const std::vector<T> raw = mlp_forward<T, double>(model.prior_spec, prior_params, context);
    PriorOut<T> out;
    const int n = h.n;
    std::size_t p = 0;
    out.belief.t = 0.0;
    out.belief.mu = VecX<T>(n);
    for (int i = 0; i < n; ++i) out.belief.mu(i) = raw[p++];
    MatX<T> l = MatX<T>::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) l(i, j) = raw[p++];
    out.belief.sigma = (l * l.transpose() + T(1e-4) * MatX<T>::Identity(n, n)).eval();
    const auto seq = apply_sequence_heads<T>(h, std::span<const T>(raw).subspan(p));
    out.alpha = seq.alpha;
    out.r = seq.r;
    return out;
}

// Fresh model with seeded uniform He-style initialization.
HyperModel init_model(const HeadConfig& head, int context_dim, std::uint64_t seed,
                      const std::vector<int>& g1_hidden = {64, 64},
                      const std::vector<int>& g2_hidden = {32},
                      const std::vector<int>& prior_hidden = {32});

// Flat trainable vector: [theta, prior_params, unmasked rows of B].
Vec pack_trainables(const HyperModel& model);
void unpack_trainables(HyperModel& model, const Vec& flat);

// Checkpoint serialization (versioned JSON).
void save_checkpoint(const HyperModel& model, const std::string& path,
                     const std::string& extra_json = "");
HyperModel load_checkpoint(const std::string& path, std::string* extra_json = nullptr);

}  // namespace nesde
