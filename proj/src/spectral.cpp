#include "nesde/spectral.hpp"

#include <Eigen/Eigenvalues>

namespace nesde {

namespace {

// Rotate a complex vector so its first significant component is real and
// positive, then scale to complex 2-norm sqrt(2). Removes the scale/phase
// ambiguity of eigenvectors so repeated decompositions agree bit-for-bit.
void canonicalize_pair(Eigen::VectorXcd& v) {
    const double vmax = v.cwiseAbs().maxCoeff();
    Eigen::Index lead = 0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::abs(v(i)) > 1e-9 * vmax) {
            lead = i;
            break;
        }
    }
    const std::complex<double> phase = v(lead) / std::abs(v(lead));
    v /= phase;
    v *= std::sqrt(2.0) / v.norm();
}

void canonicalize_real(Eigen::VectorXd& v) {
    const double vmax = v.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (std::abs(v(i)) > 1e-9 * vmax) {
            if (v(i) < 0.0) v = -v;
            break;
        }
    }
    v /= v.norm();
}

}  // namespace

std::pair<Spectrum, EigenBasis> decompose(const Mat& a, double cond_limit) {
    const Eigen::Index n = a.rows();
    Eigen::EigenSolver<Mat> es(a);
    if (es.info() != Eigen::Success) throw DefectiveMatrixError("eigendecomposition failed");

    struct RealEntry {
        double lambda;
        Eigen::VectorXd v;
    };
    struct PairEntry {
        double a, b;
        Eigen::VectorXcd v;
    };
    std::vector<RealEntry> reals;
    std::vector<PairEntry> pairs;

    for (Eigen::Index i = 0; i < n; ++i) {
        const std::complex<double> lam = es.eigenvalues()(i);
        const double scale = 1.0 + std::abs(lam);
        if (std::abs(lam.imag()) <= 1e-12 * scale) {
            Eigen::VectorXd v = es.eigenvectors().col(i).real();
            canonicalize_real(v);
            reals.push_back({lam.real(), std::move(v)});
        } else if (lam.imag() > 0.0) {
            Eigen::VectorXcd v = es.eigenvectors().col(i);
            canonicalize_pair(v);
            pairs.push_back({lam.real(), lam.imag(), std::move(v)});
        }
    }

    std::stable_sort(reals.begin(), reals.end(),
                     [](const RealEntry& x, const RealEntry& y) { return x.lambda < y.lambda; });
    std::stable_sort(pairs.begin(), pairs.end(), [](const PairEntry& x, const PairEntry& y) {
        if (x.a != y.a) return x.a < y.a;
        return x.b < y.b;
    });

    Spectrum s;
    EigenBasis basis;
    basis.v = Mat(n, n);
    Eigen::Index col = 0;
    for (const auto& e : reals) {
        s.real_eigs.push_back(e.lambda);
        basis.v.col(col++) = e.v;
    }
    for (const auto& e : pairs) {
        s.complex_pairs.emplace_back(e.a, e.b);
        basis.v.col(col++) = e.v.real();
        basis.v.col(col++) = e.v.imag();
    }
    if (col != n) throw DefectiveMatrixError("inconsistent eigenvalue pairing");

    const double cond = condition_number(basis.v);
    if (!(cond <= cond_limit))
        throw DefectiveMatrixError("eigenvector matrix condition number " + std::to_string(cond) +
                                   " exceeds limit (matrix near-defective)");
    return {std::move(s), std::move(basis)};
}

void validate_dynamics(const SpectralDynamics& dyn, double psd_tol) {
    const int n = dyn.dim();
    if (dyn.basis.v.rows() != n || dyn.basis.v.cols() != n)
        throw NumericError("basis dimension mismatch");
    for (const auto& [a, b] : dyn.spectrum.complex_pairs)
        if (!(b > 0.0)) throw NumericError("complex pair with non-positive imaginary part");
    if (min_eigenvalue(dyn.q) < -psd_tol) throw NumericError("diffusion Q is not PSD");
    if (dyn.r.size() > 0 && min_eigenvalue(dyn.r) < -psd_tol)
        throw NumericError("observation noise R is not PSD");
    if (!dyn.b_mask.empty()) {
        if (static_cast<int>(dyn.b_mask.size()) != n) throw NumericError("B mask length mismatch");
        for (int i = 0; i < n && dyn.b.cols() > 0; ++i)
            if (dyn.b_mask[static_cast<std::size_t>(i)] && dyn.b.row(i).cwiseAbs().maxCoeff() != 0.0)
                throw NumericError("masked control row is not exactly zero");
    }
}

}  // namespace nesde
