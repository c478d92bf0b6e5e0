#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <utility>
#include <vector>

#include "nesde/linalg.hpp"

// Spectral representation of linear dynamics. A real n x n operator A with
// eigenvalues {lambda_i} and eigenvectors {v_i} has the fundamental solution
// Phi(t) = V e^{Lambda t}. Complex eigenvalues come in conjugate pairs
// a +- ib (b > 0); each pair contributes two real basis columns (v_real,
// v_im) and a 2x2 rotation-scaling block
//
//     e^{a t} [ cos(b t)  sin(b t); -sin(b t)  cos(b t) ]
//
// so every quantity here is computed in purely real arithmetic. Column
// layout of V: one column per real eigenvalue (ascending), then the
// (v_real, v_im) pairs ordered by ascending real part, ties by b.

namespace nesde {

inline constexpr double kDetFloor = 1e-8;
inline constexpr double kExpClamp = 700.0;

template <class T>
struct SpectrumT {
    std::vector<T> real_eigs;
    std::vector<std::pair<T, T>> complex_pairs;  // (a, b) with b > 0

    int n_real() const { return static_cast<int>(real_eigs.size()); }
    int n_pairs() const { return static_cast<int>(complex_pairs.size()); }
    int dim() const { return n_real() + 2 * n_pairs(); }
};

template <class T>
struct EigenBasisT {
    MatX<T> v;  // n x n, columns in spectrum order
};

template <class T>
struct SpectralDynamicsT {
    SpectrumT<T> spectrum;
    EigenBasisT<T> basis;
    MatX<T> q;                 // n x n diffusion covariance
    VecX<T> alpha;             // n asymptotic offset
    MatX<T> b;                 // n x k control mapping
    std::vector<bool> b_mask;  // per-row; true = row forced to zero
    MatX<T> r;                 // m x m observation noise

    int dim() const { return spectrum.dim(); }
    int obs_dim() const { return static_cast<int>(r.rows()); }
    int control_dim() const { return static_cast<int>(b.cols()); }
};

using Spectrum = SpectrumT<double>;
using EigenBasis = EigenBasisT<double>;
using SpectralDynamics = SpectralDynamicsT<double>;

// e^x with the argument clamped to +-700; sets *saturated when clamping.
template <class T>
T exp_clamped(const T& x, bool* saturated = nullptr) {
    using std::exp;
    using ad::exp;
    const double xv = ad::value_of(x);
    if (xv > kExpClamp) {
        if (saturated != nullptr) *saturated = true;
        return T(std::exp(kExpClamp));
    }
    if (xv < -kExpClamp) {
        if (saturated != nullptr) *saturated = true;
        return T(std::exp(-kExpClamp));
    }
    return exp(x);
}

// Block-diagonal factor E(t) = e^{Lambda t} in the real layout; Phi(t) = V E(t).
template <class T>
MatX<T> exp_factor(const SpectrumT<T>& s, const T& t, bool* saturated = nullptr) {
    using std::cos;
    using std::sin;
    using ad::cos;
    using ad::sin;
    const int n = s.dim();
    MatX<T> e = MatX<T>::Zero(n, n);
    for (int i = 0; i < s.n_real(); ++i) e(i, i) = exp_clamped<T>(s.real_eigs[i] * t, saturated);
    for (int j = 0; j < s.n_pairs(); ++j) {
        const int c = s.n_real() + 2 * j;
        const auto& [a, b] = s.complex_pairs[j];
        const T ea = exp_clamped<T>(a * t, saturated);
        const T co = ea * cos(b * t);
        const T si = ea * sin(b * t);
        e(c, c) = co;
        e(c, c + 1) = si;
        e(c + 1, c) = -si;
        e(c + 1, c + 1) = co;
    }
    return e;
}

template <class T>
struct PhiResult {
    MatX<T> phi;
    bool saturated = false;
};

// Phi(t) = V e^{Lambda t}, realified.
template <class T>
PhiResult<T> eigenfunction_at(const SpectrumT<T>& s, const EigenBasisT<T>& basis, const T& t) {
    PhiResult<T> out;
    out.phi = basis.v * exp_factor(s, t, &out.saturated);
    return out;
}

// Inverse of the basis with the determinant-floor check.
template <class T>
MatX<T> basis_inverse(const EigenBasisT<T>& basis, double det_floor = kDetFloor) {
    T det;
    MatX<T> inv = invert<T>(basis.v, &det);
    if (std::abs(ad::value_of(det)) < det_floor)
        throw SingularBasisError("eigenbasis determinant below floor");
    return inv;
}

// Phi(t)^{-1} = e^{-Lambda t} V^{-1}; never inverts Phi(t) itself, so large
// |t| only enters through the (clamped) block exponentials.
template <class T>
PhiResult<T> eigenfunction_inverse_at(const SpectrumT<T>& s, const EigenBasisT<T>& basis,
                                      const T& t, double det_floor = kDetFloor) {
    PhiResult<T> out;
    out.phi = exp_factor(s, T(0.0) - t, &out.saturated) * basis_inverse(basis, det_floor);
    return out;
}

// Realified block-diagonal Lambda.
template <class T>
MatX<T> lambda_matrix(const SpectrumT<T>& s) {
    const int n = s.dim();
    MatX<T> l = MatX<T>::Zero(n, n);
    for (int i = 0; i < s.n_real(); ++i) l(i, i) = s.real_eigs[i];
    for (int j = 0; j < s.n_pairs(); ++j) {
        const int c = s.n_real() + 2 * j;
        const auto& [a, b] = s.complex_pairs[j];
        l(c, c) = a;
        l(c, c + 1) = b;
        l(c + 1, c) = -b;
        l(c + 1, c + 1) = a;
    }
    return l;
}

// A = V Lambda V^{-1}.
template <class T>
MatX<T> dynamics_matrix(const SpectrumT<T>& s, const EigenBasisT<T>& basis,
                        double det_floor = kDetFloor) {
    return basis.v * lambda_matrix(s) * basis_inverse(basis, det_floor);
}

// Eigendecomposition of a real diagonalizable matrix into the canonical
// (Spectrum, EigenBasis) form: eigenvalues sorted, pair b > 0, columns
// normalized (unit real columns; pairs scaled so |v_real|^2 + |v_im|^2 = 2
// with the leading component rotated real-positive).
std::pair<Spectrum, EigenBasis> decompose(const Mat& a, double cond_limit = 1e10);

// Structural/PSD invariants of a dynamics object; throws NumericError.
void validate_dynamics(const SpectralDynamics& dyn, double psd_tol = 1e-10);

}  // namespace nesde
