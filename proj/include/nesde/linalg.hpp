#pragma once

#include <cmath>
#include <utility>

#include <Eigen/Dense>

#include "nesde/autodiff.hpp"
#include "nesde/errors.hpp"

// Dense helpers shared by the solver and the networks. Everything here is
// templated on the scalar so the same code runs in plain double and on the
// autodiff tape; decompositions are hand-rolled (partial-pivot elimination,
// Cholesky) because they must record gradients, and the dimensions involved
// are tiny (n <= 8).

namespace nesde {

template <class T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Mat = MatX<double>;
using Vec = VecX<double>;

template <class T>
MatX<T> symmetrized(const MatX<T>& m) {
    return ((m + m.transpose()) * T(0.5)).eval();
}

// Gauss-Jordan inverse with partial pivoting; also reports det(A).
template <class T>
MatX<T> invert(const MatX<T>& a, T* det_out = nullptr) {
    using std::abs;
    using ad::abs;
    const Eigen::Index n = a.rows();
    MatX<T> m = a;
    MatX<T> inv = MatX<T>::Identity(n, n);
    T det = T(1.0);
    for (Eigen::Index col = 0; col < n; ++col) {
        Eigen::Index piv = col;
        double best = std::abs(ad::value_of(m(col, col)));
        for (Eigen::Index r = col + 1; r < n; ++r) {
            const double cand = std::abs(ad::value_of(m(r, col)));
            if (cand > best) {
                best = cand;
                piv = r;
            }
        }
        if (best == 0.0) {
            if (det_out != nullptr) *det_out = T(0.0);
            throw SingularBasisError("matrix is numerically singular");
        }
        if (piv != col) {
            m.row(piv).swap(m.row(col));
            inv.row(piv).swap(inv.row(col));
            det = -det;
        }
        const T p = m(col, col);
        det = det * p;
        const T ip = T(1.0) / p;
        m.row(col) *= ip;
        inv.row(col) *= ip;
        for (Eigen::Index r = 0; r < n; ++r) {
            if (r == col) continue;
            const T f = m(r, col);
            if (ad::value_of(f) == 0.0) continue;
            m.row(r) -= f * m.row(col);
            inv.row(r) -= f * inv.row(col);
        }
    }
    if (det_out != nullptr) *det_out = det;
    return inv;
}

// Lower Cholesky factor of a symmetric positive-definite matrix.
template <class T>
MatX<T> cholesky_lower(const MatX<T>& s) {
    using std::sqrt;
    using ad::sqrt;
    const Eigen::Index n = s.rows();
    MatX<T> l = MatX<T>::Zero(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        T d = s(j, j);
        for (Eigen::Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(ad::value_of(d) > 0.0))
            throw NumericError("covariance is not positive definite");
        l(j, j) = sqrt(d);
        for (Eigen::Index i = j + 1; i < n; ++i) {
            T v = s(i, j);
            for (Eigen::Index k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
            l(i, j) = v / l(j, j);
        }
    }
    return l;
}

// Solves (L L^T) x = b given the lower factor.
template <class T>
VecX<T> cholesky_solve(const MatX<T>& l, const VecX<T>& b) {
    const Eigen::Index n = l.rows();
    VecX<T> y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        T v = b(i);
        for (Eigen::Index k = 0; k < i; ++k) v -= l(i, k) * y(k);
        y(i) = v / l(i, i);
    }
    VecX<T> x(n);
    for (Eigen::Index i = n - 1; i >= 0; --i) {
        T v = y(i);
        for (Eigen::Index k = i + 1; k < n; ++k) v -= l(k, i) * x(k);
        x(i) = v / l(i, i);
    }
    return x;
}

template <class T>
T logdet_from_cholesky(const MatX<T>& l) {
    using std::log;
    using ad::log;
    T acc = T(0.0);
    for (Eigen::Index i = 0; i < l.rows(); ++i) acc += log(l(i, i));
    return acc + acc;
}

template <class T>
Mat value_matrix(const MatX<T>& m) {
    Mat out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) out(i, j) = ad::value_of(m(i, j));
    return out;
}

template <class T>
Vec value_vector(const VecX<T>& v) {
    Vec out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = ad::value_of(v(i));
    return out;
}

// double-only checks used for invariants and error paths

inline double min_eigenvalue(const Mat& sym) {
    if (sym.rows() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized<double>(sym));
    return es.eigenvalues().minCoeff();
}

inline double condition_number(const Mat& m) {
    Eigen::JacobiSVD<Mat> svd(m);
    const double smin = svd.singularValues().minCoeff();
    const double smax = svd.singularValues().maxCoeff();
    if (smin <= 0.0) return std::numeric_limits<double>::infinity();
    return smax / smin;
}

// Symmetric square root via spectral decomposition, clamping small negative
// eigenvalues; used to sample from possibly rank-deficient covariances.
inline Mat psd_sqrt(const Mat& sym) {
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrized<double>(sym));
    Vec ev = es.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev(i) = ev(i) > 0.0 ? std::sqrt(ev(i)) : 0.0;
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace nesde
