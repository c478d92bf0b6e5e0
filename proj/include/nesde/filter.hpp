#pragma once

#include <vector>

#include "nesde/esde.hpp"

// Conditioning of the Gaussian belief on a noisy, possibly partial
// observation of the first m coordinates. With H selecting the observed
// coordinates this is one Kalman update,
//
//   K = Sigma H' (H Sigma H' + R)^{-1}
//   mu' = mu + K (y - H mu),   Sigma' = Sigma - K H Sigma
//
// which for R = 0 reduces to direct Schur-complement conditioning; in that
// case the observed coordinates are pinned exactly (zero posterior variance),
// so conditioning twice on the same noiseless value is a no-op.

namespace nesde {

struct Observation {
    double t = 0.0;
    Vec y;
    std::vector<bool> mask;  // per observable coordinate

    bool any() const {
        for (bool b : mask)
            if (b) return true;
        return false;
    }
};

template <class T>
BeliefT<T> condition(const BeliefT<T>& belief, const Observation& obs, const MatX<T>& r,
                     const VecX<T>& alpha, double cond_limit = 1e12) {
    if (std::abs(belief.t - obs.t) > 1e-9)
        throw NumericError("condition: belief and observation timestamps differ");
    const int n = belief.dim();
    const int m = static_cast<int>(obs.y.size());
    if (static_cast<int>(obs.mask.size()) != m || r.rows() != m)
        throw NumericError("condition: observation shape mismatch");

    // Active set: masked coordinates that still carry innovation variance.
    double scale = 1.0;
    for (int i = 0; i < n; ++i) scale = std::max(scale, std::abs(ad::value_of(belief.sigma(i, i))));
    std::vector<int> act;
    bool noiseless = true;
    for (int j = 0; j < m; ++j) {
        if (!obs.mask[static_cast<std::size_t>(j)]) continue;
        const double sjj = ad::value_of(belief.sigma(j, j)) + ad::value_of(r(j, j));
        if (sjj <= 1e-12 * scale) continue;  // already determined
        act.push_back(j);
        if (ad::value_of(r(j, j)) != 0.0) noiseless = false;
    }
    if (act.empty()) {
        BeliefT<T> out = belief;
        out.sigma = symmetrized<T>(out.sigma);
        return out;
    }
    const int p = static_cast<int>(act.size());

    VecX<T> innov(p);
    MatX<T> s(p, p);
    MatX<T> cross(n, p);  // Sigma H'
    for (int a = 0; a < p; ++a) {
        const int ja = act[static_cast<std::size_t>(a)];
        innov(a) = T(obs.y(ja)) - alpha(ja) - belief.mu(ja);
        for (int b = 0; b < p; ++b) s(a, b) = belief.sigma(ja, act[static_cast<std::size_t>(b)]) + r(ja, act[static_cast<std::size_t>(b)]);
        for (int i = 0; i < n; ++i) cross(i, a) = belief.sigma(i, ja);
    }
    if (condition_number(value_matrix<T>(s)) > cond_limit)
        throw SingularInnovationError("innovation covariance is numerically singular");

    const MatX<T> sinv = invert<T>(s);
    const MatX<T> gain = cross * sinv;  // n x p

    BeliefT<T> out;
    out.t = belief.t;
    out.mu = belief.mu + gain * innov;
    out.sigma = symmetrized<T>((belief.sigma - gain * cross.transpose()).eval());
    if (noiseless) {
        // Exact degenerate posterior on the observed coordinates.
        for (int a = 0; a < p; ++a) {
            const int ja = act[static_cast<std::size_t>(a)];
            out.mu(ja) = T(obs.y(ja)) - alpha(ja);
            for (int i = 0; i < n; ++i) {
                out.sigma(ja, i) = T(0.0);
                out.sigma(i, ja) = T(0.0);
            }
        }
    }
    return out;
}

}  // namespace nesde
