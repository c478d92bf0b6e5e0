#pragma once

#include <functional>
#include <span>
#include <vector>

#include "nesde/spectral.hpp"

// Closed-form propagation of a Gaussian belief through one linear-SDE
// regime. Beliefs live in centered coordinates X' = X - alpha, where the
// dynamics are homogeneous: dX' = [A X' + B u] dt + dW, cov(dW) = Q dt.
//
// With Phi(t) = V e^{Lambda t} and a piecewise-constant u, everything
// reduces to block integrals of e^{Lambda s} evaluated over the elapsed
// time, which keeps the computation stable for any interval length:
//
//   mu(t)    = T mu0 + V [int_0^d e^{Lambda s} ds] V^{-1} B u
//   Sigma(t) = T Sigma0 T' + V [int_0^d e^{Lambda s} G e^{Lambda s}'] V'
//
// where T = V e^{Lambda d} V^{-1}, G = V^{-1} Q V^{-T}, d = t - t0. The
// scalar primitives below carry series guards for the x -> 0 limits, which
// pure-imaginary pairs hit exactly.

namespace nesde {

template <class T>
struct BeliefT {
    VecX<T> mu;     // centered mean
    MatX<T> sigma;  // covariance
    double t = 0.0;

    int dim() const { return static_cast<int>(mu.size()); }
};

using GaussianBelief = BeliefT<double>;

struct ControlSegment {
    double t0 = 0.0;
    double t1 = 0.0;
    Vec u;
};

inline constexpr double kSeriesGuard = 1e-6;

// (e^x - 1) / x
template <class T>
T expm1_over(const T& x) {
    using std::exp;
    using ad::exp;
    if (std::abs(ad::value_of(x)) < kSeriesGuard)
        return T(1.0) + x * T(0.5) + x * x * (T(1.0) / 6.0);
    return (exp(x) - T(1.0)) / x;
}

// int_0^d e^{c s} cos(b s) ds
template <class T>
T exp_cos_integral(const T& c, const T& b, const T& d) {
    using std::cos;
    using std::sin;
    using ad::cos;
    using ad::sin;
    const double cv = ad::value_of(c), bv = ad::value_of(b), dv = ad::value_of(d);
    if ((std::abs(cv) + std::abs(bv)) * dv < kSeriesGuard)
        return d + c * d * d * T(0.5) + (c * c - b * b) * d * d * d * (T(1.0) / 6.0);
    const T e = exp_clamped<T>(c * d);
    return (e * (c * cos(b * d) + b * sin(b * d)) - c) / (c * c + b * b);
}

// int_0^d e^{c s} sin(b s) ds
template <class T>
T exp_sin_integral(const T& c, const T& b, const T& d) {
    using std::cos;
    using std::sin;
    using ad::cos;
    using ad::sin;
    const double cv = ad::value_of(c), bv = ad::value_of(b), dv = ad::value_of(d);
    if ((std::abs(cv) + std::abs(bv)) * dv < kSeriesGuard)
        return b * d * d * T(0.5) + c * b * d * d * d * (T(1.0) / 3.0);
    const T e = exp_clamped<T>(c * d);
    return (e * (c * sin(b * d) - b * cos(b * d)) + b) / (c * c + b * b);
}

// int_0^d e^{Lambda s} ds in the real block layout.
template <class T>
MatX<T> control_factor(const SpectrumT<T>& s, const T& d) {
    const int n = s.dim();
    MatX<T> f = MatX<T>::Zero(n, n);
    for (int i = 0; i < s.n_real(); ++i) f(i, i) = d * expm1_over<T>(s.real_eigs[i] * d);
    for (int j = 0; j < s.n_pairs(); ++j) {
        const int c = s.n_real() + 2 * j;
        const auto& [a, b] = s.complex_pairs[j];
        const T ic = exp_cos_integral<T>(a, b, d);
        const T is = exp_sin_integral<T>(a, b, d);
        f(c, c) = ic;
        f(c, c + 1) = is;
        f(c + 1, c) = -is;
        f(c + 1, c + 1) = ic;
    }
    return f;
}

// int_0^d e^{Lambda s} G e^{Lambda s}^T ds, blockwise over the spectrum.
template <class T>
MatX<T> noise_factor(const SpectrumT<T>& s, const MatX<T>& g, const T& d) {
    const int n = s.dim();
    const int nr = s.n_real();
    MatX<T> f = MatX<T>::Zero(n, n);
    // real x real: Hadamard against (e^{(li+lj) d} - 1)/(li + lj)
    for (int i = 0; i < nr; ++i)
        for (int j = 0; j < nr; ++j)
            f(i, j) = g(i, j) * d * expm1_over<T>((s.real_eigs[i] + s.real_eigs[j]) * d);
    // real x pair and pair x real
    for (int i = 0; i < nr; ++i) {
        for (int j = 0; j < s.n_pairs(); ++j) {
            const int c = nr + 2 * j;
            const auto& [aj, bj] = s.complex_pairs[j];
            const T cc = s.real_eigs[i] + aj;
            const T ic = exp_cos_integral<T>(cc, bj, d);
            const T is = exp_sin_integral<T>(cc, bj, d);
            const T g1 = g(i, c), g2 = g(i, c + 1);
            f(i, c) = ic * g1 + is * g2;
            f(i, c + 1) = ic * g2 - is * g1;
            const T h1 = g(c, i), h2 = g(c + 1, i);
            f(c, i) = ic * h1 + is * h2;
            f(c + 1, i) = ic * h2 - is * h1;
        }
    }
    // pair x pair via product-to-sum at frequencies bi -+ bj
    for (int i = 0; i < s.n_pairs(); ++i) {
        const int ci = nr + 2 * i;
        const auto& [ai, bi] = s.complex_pairs[i];
        for (int j = 0; j < s.n_pairs(); ++j) {
            const int cj = nr + 2 * j;
            const auto& [aj, bj] = s.complex_pairs[j];
            const T cc = ai + aj;
            const T bm = bi - bj, bp = bi + bj;
            const T icm = exp_cos_integral<T>(cc, bm, d), icp = exp_cos_integral<T>(cc, bp, d);
            const T ism = exp_sin_integral<T>(cc, bm, d), isp = exp_sin_integral<T>(cc, bp, d);
            const T icc = (icm + icp) * T(0.5);  // int e cos(bi s) cos(bj s)
            const T iss = (icm - icp) * T(0.5);  // int e sin(bi s) sin(bj s)
            const T isc = (ism + isp) * T(0.5);  // int e sin(bi s) cos(bj s)
            const T ics = (isp - ism) * T(0.5);  // int e cos(bi s) sin(bj s)
            Eigen::Matrix<T, 2, 2> gb;
            gb << g(ci, cj), g(ci, cj + 1), g(ci + 1, cj), g(ci + 1, cj + 1);
            Eigen::Matrix<T, 2, 2> jm;
            jm << T(0.0), T(1.0), T(-1.0), T(0.0);
            const Eigen::Matrix<T, 2, 2> out = icc * gb - ics * (gb * jm).eval() +
                                               isc * (jm * gb).eval() -
                                               iss * (jm * gb * jm).eval();
            f(ci, cj) = out(0, 0);
            f(ci, cj + 1) = out(0, 1);
            f(ci + 1, cj) = out(1, 0);
            f(ci + 1, cj + 1) = out(1, 1);
        }
    }
    return f;
}

// Phi(t) int_{t0}^{t} Phi(s)^{-1} B u ds, in the stabilized elapsed-time form.
template <class T>
VecX<T> control_integral_analytic(const SpectrumT<T>& s, const EigenBasisT<T>& basis,
                                  const Vec& u, const MatX<T>& b, double t0, double t,
                                  double det_floor = kDetFloor) {
    const MatX<T> vinv = basis_inverse(basis, det_floor);
    const VecX<T> bu = vinv * (b * u.template cast<T>());
    return basis.v * (control_factor<T>(s, T(t - t0)) * bu);
}

// Phi(t) [int_{t0}^{t} Phi(s)^{-1} Q Phi(s)^{-T} ds] Phi(t)^T.
template <class T>
MatX<T> noise_integral_analytic(const SpectrumT<T>& s, const EigenBasisT<T>& basis,
                                const MatX<T>& q, double t0, double t,
                                double det_floor = kDetFloor) {
    const MatX<T> vinv = basis_inverse(basis, det_floor);
    const MatX<T> g = vinv * q * vinv.transpose();
    const MatX<T> f = noise_factor<T>(s, g, T(t - t0));
    return symmetrized<T>((basis.v * f * basis.v.transpose()).eval());
}

// Left Riemann sum for an arbitrary control function, as the numeric
// fallback: Phi(t) sum_i Phi(tau_i)^{-1} B u(tau_i) dt. Summands are
// independent of one another.
template <class T>
VecX<T> control_integral_numeric(const SpectrumT<T>& s, const EigenBasisT<T>& basis,
                                 const std::function<Vec(double)>& u_fn, const MatX<T>& b,
                                 double t0, double t, double dt, double det_floor = kDetFloor) {
    const MatX<T> vinv = basis_inverse(basis, det_floor);
    const int n = s.dim();
    VecX<T> acc = VecX<T>::Zero(n);
    double tau = t0;
    while (tau < t) {
        const double w = std::min(dt, t - tau);
        const VecX<T> bu = vinv * (b * u_fn(tau).template cast<T>());
        acc += exp_factor<T>(s, T(t - tau)) * bu * T(w);
        tau += dt;
    }
    return basis.v * acc;
}

struct PropagateOptions {
    bool strict_gaps = false;
    double det_floor = kDetFloor;
    bool* saturated = nullptr;
};

// Constant pieces of the control signal covering [ta, tb); gaps are u = 0.
inline std::vector<ControlSegment> control_pieces(std::span<const ControlSegment> schedule,
                                                  double ta, double tb, int k, bool strict) {
    std::vector<ControlSegment> pieces;
    double cursor = ta;
    for (const auto& seg : schedule) {
        if (seg.t1 <= cursor || seg.t0 >= tb) continue;
        if (seg.t0 > cursor) {
            if (strict) throw NumericError("control schedule gap in strict mode");
            pieces.push_back({cursor, std::min(seg.t0, tb), Vec::Zero(k)});
            cursor = pieces.back().t1;
        }
        const double end = std::min(seg.t1, tb);
        pieces.push_back({cursor, end, seg.u});
        cursor = end;
        if (cursor >= tb) break;
    }
    if (cursor < tb) {
        if (strict && !schedule.empty()) throw NumericError("control schedule gap in strict mode");
        pieces.push_back({cursor, tb, Vec::Zero(k)});
    }
    return pieces;
}

// Cached per-regime factors shared by consecutive propagation calls.
template <class T>
struct EsdeOperator {
    const SpectralDynamicsT<T>* dyn = nullptr;
    MatX<T> vinv;
    MatX<T> g;       // V^{-1} Q V^{-T}
    MatX<T> vinv_b;  // V^{-1} B

    static EsdeOperator make(const SpectralDynamicsT<T>& dyn, double det_floor = kDetFloor) {
        EsdeOperator op;
        op.dyn = &dyn;
        op.vinv = basis_inverse(dyn.basis, det_floor);
        op.g = op.vinv * dyn.q * op.vinv.transpose();
        op.vinv_b = op.vinv * dyn.b;
        return op;
    }
};

template <class T>
BeliefT<T> propagate_with(const EsdeOperator<T>& op, const BeliefT<T>& belief,
                          std::span<const ControlSegment> schedule, double t_target,
                          const PropagateOptions& opts = {}) {
    if (t_target < belief.t) throw NumericError("propagate: target time precedes belief time");
    const auto& dyn = *op.dyn;
    BeliefT<T> out = belief;
    if (t_target == belief.t) {
        out.sigma = symmetrized<T>(out.sigma);
        return out;
    }
    const auto pieces =
        control_pieces(schedule, belief.t, t_target, dyn.control_dim(), opts.strict_gaps);
    for (const auto& piece : pieces) {
        const T d(piece.t1 - piece.t0);
        const MatX<T> e = exp_factor<T>(dyn.spectrum, d, opts.saturated);
        const MatX<T> trans = dyn.basis.v * e * op.vinv;
        VecX<T> mu = trans * out.mu;
        if (dyn.control_dim() > 0 && piece.u.cwiseAbs().maxCoeff() != 0.0)
            mu += dyn.basis.v * (control_factor<T>(dyn.spectrum, d) * (op.vinv_b * piece.u.template cast<T>()));
        out.mu = mu;
        out.sigma = trans * out.sigma * trans.transpose() +
                    dyn.basis.v * noise_factor<T>(dyn.spectrum, op.g, d) * dyn.basis.v.transpose();
        out.sigma = symmetrized<T>(out.sigma);
    }
    out.t = t_target;
    return out;
}

template <class T>
BeliefT<T> propagate(const BeliefT<T>& belief, const SpectralDynamicsT<T>& dyn,
                     std::span<const ControlSegment> schedule, double t_target,
                     const PropagateOptions& opts = {}) {
    return propagate_with(EsdeOperator<T>::make(dyn, opts.det_floor), belief, schedule, t_target,
                          opts);
}

// Observable marginal: Y = X_{1:m} + alpha_{1:m} with measurement noise R.
template <class T>
std::pair<VecX<T>, MatX<T>> predict_observable(const BeliefT<T>& belief, const VecX<T>& alpha,
                                               const MatX<T>& r) {
    const int m = static_cast<int>(r.rows());
    VecX<T> mean = belief.mu.head(m) + alpha.head(m);
    MatX<T> cov = belief.sigma.topLeftCorner(m, m) + r;
    return {std::move(mean), std::move(cov)};
}

// RK4 integration of the moment ODEs d mu = A mu + B u, d Sigma = A Sigma +
// Sigma A' + Q. Test oracle only (and the `oracle-check` command); the
// production path is the closed form above.
GaussianBelief moment_ode_oracle(const SpectralDynamics& dyn,
                                 std::span<const ControlSegment> schedule,
                                 const GaussianBelief& belief, double t_target, double step);

}  // namespace nesde
