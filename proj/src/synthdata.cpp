#include "nesde/synthdata.hpp"

#include <algorithm>

namespace nesde {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t x = seed ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::vector<Vec> simulate_linear_sde(const SpectralDynamics& dyn,
                                     std::span<const ControlSegment> schedule, const Vec& x0,
                                     std::span<const double> t_grid, std::mt19937_64& rng) {
    const int n = dyn.dim();
    std::vector<Vec> path;
    if (t_grid.empty()) return path;
    std::normal_distribution<double> gauss(0.0, 1.0);
    const auto op = EsdeOperator<double>::make(dyn);

    Vec xc = x0 - dyn.alpha;  // centered
    path.push_back(x0);
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
        BeliefT<double> b;
        b.mu = xc;
        b.sigma = Mat::Zero(n, n);
        b.t = t_grid[i - 1];
        const auto next = propagate_with<double>(op, b, schedule, t_grid[i]);
        const Mat root = psd_sqrt(next.sigma);
        Vec z(n);
        for (int d = 0; d < n; ++d) z(d) = gauss(rng);
        xc = next.mu + root * z;
        path.push_back(xc + dyn.alpha);
    }
    return path;
}

namespace {

// Closed-loop trajectory simulation shared by the section-5 style
// benchmarks: u is recomputed from the true observable at evenly spaced
// ticks, so the recorded schedule is piecewise constant.
Trajectory closed_loop_trajectory(const SpectralDynamics& dyn, const Vec& x0,
                                  const GeneratorConfig& cfg, std::mt19937_64& rng) {
    Trajectory traj;
    traj.context = Vec::Ones(1);

    std::uniform_real_distribution<double> ub(0.0, 0.5);
    std::vector<double> b_vals;
    for (int j = 0; j < cfg.b_segments; ++j) b_vals.push_back(ub(rng));

    std::uniform_int_distribution<int> uobs(cfg.obs_min, cfg.obs_max);
    const int n_obs = uobs(rng);
    std::uniform_real_distribution<double> ut(0.0, cfg.support);
    std::vector<double> obs_times;
    for (int i = 0; i < n_obs; ++i) obs_times.push_back(ut(rng));
    std::sort(obs_times.begin(), obs_times.end());
    obs_times.erase(std::unique(obs_times.begin(), obs_times.end()), obs_times.end());

    std::vector<double> truth_times;
    for (int i = 0; i < cfg.truth_points; ++i)
        truth_times.push_back(cfg.support * static_cast<double>(i) /
                              std::max(1, cfg.truth_points - 1));

    const double tick = cfg.support / cfg.b_segments;
    std::vector<double> events;  // tick boundaries + observation + truth times
    for (int j = 0; j <= cfg.b_segments; ++j) events.push_back(tick * static_cast<double>(j));
    events.insert(events.end(), obs_times.begin(), obs_times.end());
    events.insert(events.end(), truth_times.begin(), truth_times.end());
    std::sort(events.begin(), events.end());
    events.erase(std::unique(events.begin(), events.end(),
                             [](double a, double b) { return std::abs(a - b) <= 1e-12; }),
                 events.end());

    std::normal_distribution<double> gauss(0.0, 1.0);
    const auto op = EsdeOperator<double>::make(dyn);
    const int n = dyn.dim();

    Vec xc = x0 - dyn.alpha;
    double t = 0.0;
    int tick_idx = -1;
    double u_cur = 0.0;
    std::size_t oi = 0, gi = 0;
    std::vector<ControlSegment> dummy;  // control handled piecewise below

    auto handle_time = [&](double tt, const Vec& x_orig) {
        while (oi < obs_times.size() && std::abs(obs_times[oi] - tt) <= 1e-12) {
            Observation obs;
            obs.t = obs_times[oi];
            obs.y = Vec::Constant(1, x_orig(0));
            if (cfg.observation_noise > 0.0)
                obs.y(0) += std::sqrt(cfg.observation_noise) * gauss(rng);
            obs.mask = {true};
            traj.observations.push_back(std::move(obs));
            ++oi;
        }
        while (gi < truth_times.size() && std::abs(truth_times[gi] - tt) <= 1e-12) {
            traj.ground_truth.emplace_back(truth_times[gi], Vec::Constant(1, x_orig(0)));
            ++gi;
        }
    };

    handle_time(0.0, xc + dyn.alpha);
    for (double te : events) {
        if (te > t) {
            // advance exactly with the current constant control
            BeliefT<double> b;
            b.mu = xc;
            b.sigma = Mat::Zero(n, n);
            b.t = t;
            ControlSegment seg{t, te, Vec::Constant(1, u_cur)};
            const auto next =
                propagate_with<double>(op, b, std::span<const ControlSegment>(&seg, 1), te);
            const Mat root = psd_sqrt(next.sigma);
            Vec z(n);
            for (int d = 0; d < n; ++d) z(d) = gauss(rng);
            xc = next.mu + root * z;
            t = te;
            handle_time(te, xc + dyn.alpha);
        }
        // control tick: recompute u from the current true observable
        const int j = static_cast<int>(std::floor(te / tick + 1e-9));
        if (j > tick_idx && j < cfg.b_segments && std::abs(te - tick * j) <= 1e-9) {
            tick_idx = j;
            const double y_now = (xc + dyn.alpha)(0);
            u_cur = b_vals[static_cast<std::size_t>(j)] + cfg.coupling * y_now;
            traj.controls.push_back({tick * j, tick * (j + 1), Vec::Constant(1, u_cur)});
        }
    }
    return traj;
}

Dataset section5_like(const Mat& a, const char* generator, const GeneratorConfig& cfg) {
    auto [spec, basis] = decompose(a);
    SpectralDynamics dyn;
    dyn.spectrum = std::move(spec);
    dyn.basis = std::move(basis);
    dyn.q = cfg.q_noise * Mat::Identity(2, 2);
    dyn.alpha = Vec::Zero(2);
    dyn.b = Mat::Zero(2, 1);
    dyn.b(1, 0) = 1.0;  // control drives the latent dimension only
    dyn.b_mask = {true, false};
    dyn.r = Mat::Constant(1, 1, cfg.observation_noise);

    const Mat x0_cov = 0.25 * Mat::Identity(2, 2);
    Dataset ds;
    ds.header["format_version"] = 1;
    ds.header["generator"] = generator;
    ds.header["config"] = Json{{"n_traj", cfg.n_traj},
                               {"mode", cfg.mode == GeneratorConfig::Mode::kComplex ? "complex" : "real"},
                               {"coupling", cfg.coupling},
                               {"obs_min", cfg.obs_min},
                               {"obs_max", cfg.obs_max},
                               {"support", cfg.support},
                               {"seed", cfg.seed},
                               {"b_segments", cfg.b_segments},
                               {"observation_noise", cfg.observation_noise},
                               {"q_noise", cfg.q_noise},
                               {"truth_points", cfg.truth_points}};
    ds.header["ground_truth"] = Json{{"dynamics", dynamics_to_json(dyn)},
                                     {"A", mat_to_json(a)},
                                     {"x0_mean", vec_to_json(Vec::Zero(2))},
                                     {"x0_cov", mat_to_json(x0_cov)},
                                     {"eval_protocol", Json{{"type", "sequential"}}}};

    const Mat x0_root = psd_sqrt(x0_cov);
    for (int i = 0; i < cfg.n_traj; ++i) {
        std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(i)));
        std::normal_distribution<double> gauss(0.0, 1.0);
        Vec z(2);
        z << gauss(rng), gauss(rng);
        const Vec x0 = x0_root * z;
        ds.trajectories.push_back(closed_loop_trajectory(dyn, x0, cfg, rng));
    }
    return ds;
}

}  // namespace

Mat spectrum_case_matrix(SpectrumCase which) {
    Mat a(2, 2);
    switch (which) {
        case SpectrumCase::kA1: a << -0.5, -2.0, 2.0, -1.0; break;
        case SpectrumCase::kA2: a << -0.5, -0.5, -0.5, -1.0; break;
        case SpectrumCase::kA3: a << 1.0, -2.0, 2.0, -1.0; break;
    }
    return a;
}

Dataset gen_section5(const GeneratorConfig& cfg) {
    const Mat a = spectrum_case_matrix(cfg.mode == GeneratorConfig::Mode::kComplex
                                           ? SpectrumCase::kA1
                                           : SpectrumCase::kA2);
    return section5_like(a, "section5", cfg);
}

Dataset gen_spectrum(SpectrumCase which, int n_traj, int obs_min, int obs_max,
                     std::uint64_t seed) {
    GeneratorConfig cfg;
    cfg.n_traj = n_traj;
    cfg.obs_min = obs_min;
    cfg.obs_max = obs_max;
    cfg.seed = seed;
    cfg.mode = which == SpectrumCase::kA2 ? GeneratorConfig::Mode::kReal
                                          : GeneratorConfig::Mode::kComplex;
    const char* name = which == SpectrumCase::kA1   ? "spectrum-a1"
                       : which == SpectrumCase::kA2 ? "spectrum-a2"
                                                    : "spectrum-a3";
    return section5_like(spectrum_case_matrix(which), name, cfg);
}

Dataset gen_ou(const GeneratorConfig& cfg) {
    const double rate = 0.6;
    const double t_split = 4.0;
    Mat a = -Mat::Identity(2, 2);  // theta = diag(1, 1)
    auto [spec, basis] = decompose(a);
    SpectralDynamics dyn;
    dyn.spectrum = std::move(spec);
    dyn.basis = std::move(basis);
    dyn.q = Mat(2, 2);
    dyn.q << 1.0, 0.5, 0.5, 1.0;
    dyn.alpha = Vec::Zero(2);  // per-trajectory center stored on each record
    dyn.b = Mat::Zero(2, 0);
    dyn.b_mask = {false, false};
    dyn.r = Mat::Zero(2, 2);
    for (int j = 0; j < 2; ++j) dyn.r(j, j) = cfg.observation_noise;

    const Mat x0_cov = 0.5 * dyn.q;  // stationary covariance of theta = I

    Dataset ds;
    ds.header["format_version"] = 1;
    ds.header["generator"] = "ou";
    ds.header["config"] = Json{{"n_traj", cfg.n_traj},
                               {"support", cfg.support},
                               {"seed", cfg.seed},
                               {"sample_rate", rate},
                               {"observation_noise", cfg.observation_noise},
                               {"theta", 1.0},
                               {"center_range", Json::array({-1.0, 1.0})},
                               {"truth_points", cfg.truth_points}};
    ds.header["ground_truth"] =
        Json{{"dynamics", dynamics_to_json(dyn)},
             {"alpha_note", "per-trajectory center in each record's gt_alpha"},
             {"x0_mean_rule", "gt_alpha"},
             {"x0_cov", mat_to_json(x0_cov)},
             {"eval_protocol", Json{{"type", "condition_split"}, {"t_split", t_split}}}};

    const Mat x0_root = psd_sqrt(x0_cov);
    std::poisson_distribution<int> pois(rate * cfg.support);
    for (int i = 0; i < cfg.n_traj; ++i) {
        std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(i)));
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::uniform_real_distribution<double> ucenter(-1.0, 1.0);
        std::uniform_real_distribution<double> ut(0.0, cfg.support);
        std::bernoulli_distribution half(0.5);

        Trajectory traj;
        traj.context = Vec::Ones(1);
        traj.gt_alpha = Vec(2);
        traj.gt_alpha << ucenter(rng), ucenter(rng);

        // observation times: resample until both the conditioning window and
        // the forecast window contain at least one observation
        std::vector<double> times;
        for (int attempt = 0; attempt < 1000; ++attempt) {
            times.clear();
            const int n_obs = pois(rng);
            for (int oi = 0; oi < n_obs; ++oi) times.push_back(ut(rng));
            std::sort(times.begin(), times.end());
            times.erase(std::unique(times.begin(), times.end()), times.end());
            bool early = false, late = false;
            for (double t : times) (t <= t_split ? early : late) = true;
            if (early && late) break;
        }

        SpectralDynamics dyn_i = dyn;
        dyn_i.alpha = traj.gt_alpha;
        Vec z(2);
        z << gauss(rng), gauss(rng);
        const Vec x0 = traj.gt_alpha + x0_root * z;

        std::vector<double> grid;
        grid.push_back(0.0);
        for (double t : times)
            if (t > 0.0) grid.push_back(t);
        std::vector<ControlSegment> empty_sched;
        const auto path = simulate_linear_sde(dyn_i, empty_sched, x0, grid, rng);

        for (std::size_t gi = 0; gi < grid.size(); ++gi) {
            const bool is_obs = std::binary_search(times.begin(), times.end(), grid[gi]);
            if (!is_obs) continue;
            Observation obs;
            obs.t = grid[gi];
            obs.y = path[gi];
            obs.mask = {half(rng), half(rng)};
            if (!obs.mask[0] && !obs.mask[1]) obs.mask[half(rng) ? 0 : 1] = true;
            if (cfg.observation_noise > 0.0)
                for (int d = 0; d < 2; ++d)
                    obs.y(d) += std::sqrt(cfg.observation_noise) * gauss(rng);
            traj.observations.push_back(std::move(obs));
        }
        ds.trajectories.push_back(std::move(traj));
    }
    return ds;
}

namespace {

double smooth01(double x) { return 0.5 * (1.0 + std::tanh(x)); }

SpectralDynamics dosing_dynamics(const Vec& c, const DosingConfig& cfg) {
    Spectrum spec;
    spec.complex_pairs.emplace_back(-(0.3 + 1.2 * smooth01(c(0))), 0.4 + 1.6 * smooth01(c(1)));
    spec.complex_pairs.emplace_back(-(0.8 + 0.8 * smooth01(c(2))), 1.0 + 1.0 * smooth01(c(2) - c(0)));
    std::stable_sort(spec.complex_pairs.begin(), spec.complex_pairs.end());

    EigenBasis basis;
    basis.v = Mat(4, 4);
    basis.v << 1.0, 0.3, 0.5, -0.2,
               0.2, 0.9, -0.3, 0.4,
              -0.4, 0.2, 0.8, 0.3,
               0.3, -0.5, 0.2, 0.9;

    SpectralDynamics dyn;
    dyn.spectrum = std::move(spec);
    dyn.basis = std::move(basis);
    dyn.q = 0.02 * Mat::Identity(4, 4);
    dyn.alpha = Vec::Zero(4);
    dyn.alpha(0) = 2.0 + 0.8 * std::tanh(c(0) - c(1));
    dyn.b = Mat::Zero(4, 1);
    dyn.b(1, 0) = 0.8;
    dyn.b(2, 0) = 0.5;
    dyn.b(3, 0) = 0.3;
    dyn.b_mask = {true, false, false, false};
    dyn.r = Mat::Constant(1, 1, cfg.obs_noise);
    return dyn;
}

}  // namespace

std::pair<DosingEnvState, Vec> dosing_env_reset(const DosingConfig& cfg, std::uint64_t seed) {
    DosingEnvState st;
    st.cfg = cfg;
    st.rng = std::mt19937_64(mix_seed(seed, 0xD05EULL));
    std::uniform_real_distribution<double> uc(-1.0, 1.0);
    st.context = Vec(cfg.context_dim);
    for (int i = 0; i < cfg.context_dim; ++i) st.context(i) = uc(st.rng);
    st.dyn = dosing_dynamics(st.context, cfg);
    std::normal_distribution<double> gauss(0.0, 1.0);
    st.x = st.dyn.alpha;
    st.x(0) -= 0.5;
    for (int i = 0; i < 4; ++i) st.x(i) += 0.2 * gauss(st.rng);
    st.t = 0.0;
    std::exponential_distribution<double> exp_gap(1.0 / cfg.lab_mean_interval);
    st.next_lab = cfg.lab_min_gap + exp_gap(st.rng);
    return {st, st.context};
}

DosingStepResult dosing_env_step(DosingEnvState& state, double dose, double dt) {
    if (dose < 0.0) throw ConfigError("dosing_env_step: dose must be non-negative");
    if (dt <= 0.0) throw ConfigError("dosing_env_step: dt must be positive");
    DosingStepResult result;
    const double t_end = state.t + dt;
    ControlSegment seg{state.t, t_end, Vec::Constant(1, dose)};
    std::normal_distribution<double> gauss(0.0, 1.0);

    auto advance = [&](double to) {
        std::vector<double> grid{state.t, to};
        const auto path = simulate_linear_sde(
            state.dyn, std::span<const ControlSegment>(&seg, 1), state.x, grid, state.rng);
        state.x = path.back();
        state.t = to;
    };
    while (state.next_lab <= t_end + 1e-12) {
        advance(state.next_lab);
        Observation obs;
        obs.t = state.t;
        obs.y = Vec::Constant(1, state.x(0) + std::sqrt(state.cfg.obs_noise) * gauss(state.rng));
        obs.mask = {true};
        result.obs = std::move(obs);
        std::exponential_distribution<double> exp_gap(1.0 / state.cfg.lab_mean_interval);
        state.next_lab = state.t + state.cfg.lab_min_gap + exp_gap(state.rng);
    }
    if (state.t < t_end) advance(t_end);

    const double y = state.x(0);
    const double excess = std::max({0.0, state.cfg.target_lo - y, y - state.cfg.target_hi});
    result.reward = -excess * excess;
    return result;
}

Dataset gen_dosing(int n_traj, const DosingConfig& cfg, std::uint64_t seed) {
    Dataset ds;
    ds.header["format_version"] = 1;
    ds.header["generator"] = "dosing";
    ds.header["config"] = Json{{"n_traj", n_traj},
                               {"support", cfg.support},
                               {"lab_mean_interval", cfg.lab_mean_interval},
                               {"lab_min_gap", cfg.lab_min_gap},
                               {"obs_noise", cfg.obs_noise},
                               {"target_lo", cfg.target_lo},
                               {"target_hi", cfg.target_hi},
                               {"context_dim", cfg.context_dim},
                               {"seed", seed},
                               {"policy", "uniform dose in [0,2], held 0.5 time units"}};
    ds.header["ground_truth"] = Json{
        {"family", "per-episode dynamics stored in each record's gt_dyn"},
        {"eval_protocol", Json{{"type", "sequential"}}}};

    const double policy_dt = 0.5;
    for (int i = 0; i < n_traj; ++i) {
        auto [st, ctx] = dosing_env_reset(cfg, mix_seed(seed, static_cast<std::uint64_t>(i)));
        std::mt19937_64 policy_rng(mix_seed(seed, 0xB0B0ULL + static_cast<std::uint64_t>(i)));
        std::uniform_real_distribution<double> udose(0.0, 2.0);

        Trajectory traj;
        traj.context = ctx;
        traj.gt_alpha = st.dyn.alpha;
        traj.gt_dyn = std::make_shared<SpectralDynamics>(st.dyn);

        double t = 0.0;
        while (t < cfg.support - 1e-9) {
            const double dose = udose(policy_rng);
            const double until = std::min(cfg.support, t + policy_dt);
            traj.controls.push_back({t, until, Vec::Constant(1, dose)});
            while (st.t < until - 1e-12) {
                auto step = dosing_env_step(st, dose, std::min(0.1, until - st.t));
                if (step.obs) traj.observations.push_back(std::move(*step.obs));
            }
            t = until;
        }
        ds.trajectories.push_back(std::move(traj));
    }
    return ds;
}

}  // namespace nesde
