#include "nesde/esde.hpp"

namespace nesde {

GaussianBelief moment_ode_oracle(const SpectralDynamics& dyn,
                                 std::span<const ControlSegment> schedule,
                                 const GaussianBelief& belief, double t_target, double step) {
    if (t_target < belief.t) throw NumericError("oracle: target time precedes belief time");
    if (step > 1e-3) throw NumericError("oracle: step must be <= 1e-3");
    const Mat a = dynamics_matrix<double>(dyn.spectrum, dyn.basis);
    const auto pieces = control_pieces(schedule, belief.t, t_target, dyn.control_dim(), false);

    Vec mu = belief.mu;
    Mat sigma = belief.sigma;
    const auto dmu = [&](const Vec& m, const Vec& bu) -> Vec { return a * m + bu; };
    const auto dsig = [&](const Mat& s) -> Mat {
        return a * s + s * a.transpose() + dyn.q;
    };
    for (const auto& piece : pieces) {
        const Vec bu = dyn.control_dim() > 0 ? Vec(dyn.b * piece.u) : Vec(Vec::Zero(dyn.dim()));
        const double len = piece.t1 - piece.t0;
        if (len <= 0.0) continue;
        const int nsteps = std::max(1, static_cast<int>(std::ceil(len / step)));
        const double h = len / nsteps;
        for (int i = 0; i < nsteps; ++i) {
            const Vec k1m = dmu(mu, bu);
            const Mat k1s = dsig(sigma);
            const Vec k2m = dmu(mu + 0.5 * h * k1m, bu);
            const Mat k2s = dsig(sigma + 0.5 * h * k1s);
            const Vec k3m = dmu(mu + 0.5 * h * k2m, bu);
            const Mat k3s = dsig(sigma + 0.5 * h * k2s);
            const Vec k4m = dmu(mu + h * k3m, bu);
            const Mat k4s = dsig(sigma + h * k3s);
            mu += (h / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m);
            sigma += (h / 6.0) * (k1s + 2.0 * k2s + 2.0 * k3s + k4s);
        }
    }
    GaussianBelief out;
    out.mu = mu;
    out.sigma = symmetrized<double>(sigma);
    out.t = t_target;
    return out;
}

}  // namespace nesde
