#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "nesde/filter.hpp"
#include "nesde/nets.hpp"

// Sequence unrolling (prior -> alternate propagate / filter, with dynamics
// refreshed at every interval boundary), the Gaussian NLL objective, Adam,
// training and evaluation. Interval boundaries are the union of the
// observation times and the multiples of interval_dt. Predictions at an
// observation time are always recorded before filtering on it.

namespace nesde {

struct Trajectory {
    Vec context;
    std::vector<Observation> observations;  // strictly increasing times
    std::vector<ControlSegment> controls;   // sorted, non-overlapping
    std::vector<std::pair<double, Vec>> ground_truth;  // optional dense (t, Y)
    Vec gt_alpha;                                      // optional per-sequence alpha
    std::shared_ptr<const SpectralDynamics> gt_dyn;    // optional per-sequence dynamics
};

// Gaussian negative log density of the observed coordinates.
template <class T>
T gaussian_nll(const Vec& y, const std::vector<bool>& mask, const VecX<T>& mean,
               const MatX<T>& cov) {
    std::vector<int> act;
    for (std::size_t j = 0; j < mask.size(); ++j)
        if (mask[j]) act.push_back(static_cast<int>(j));
    const int p = static_cast<int>(act.size());
    if (p == 0) return T(0.0);
    VecX<T> r(p);
    MatX<T> s(p, p);
    for (int a = 0; a < p; ++a) {
        r(a) = T(y(act[static_cast<std::size_t>(a)])) - mean(act[static_cast<std::size_t>(a)]);
        for (int b = 0; b < p; ++b)
            s(a, b) = cov(act[static_cast<std::size_t>(a)], act[static_cast<std::size_t>(b)]);
    }
    const MatX<T> l = cholesky_lower<T>(symmetrized<T>(s));
    const VecX<T> alpha = cholesky_solve<T>(l, r);
    T quad = T(0.0);
    for (int a = 0; a < p; ++a) quad += r(a) * alpha(a);
    return T(0.5) * (T(p * std::log(2.0 * M_PI)) + logdet_from_cholesky<T>(l) + quad);
}

template <class T>
T gaussian_nll(const Vec& y, const VecX<T>& mean, const MatX<T>& cov) {
    return gaussian_nll<T>(y, std::vector<bool>(static_cast<std::size_t>(y.size()), true), mean,
                           cov);
}

// T-typed copies of the trainable parameters, in pack_trainables order.
template <class T>
struct ModelParams {
    std::vector<T> theta;
    std::vector<T> prior;
    MatX<T> b_global;
};

template <class T>
ModelParams<T> lift_params(const HyperModel& model) {
    ModelParams<T> mp;
    mp.theta.assign(model.theta.data(), model.theta.data() + model.theta.size());
    mp.prior.assign(model.prior_params.data(), model.prior_params.data() + model.prior_params.size());
    mp.b_global = model.b_global.template cast<T>();
    return mp;
}

// Tape leaves in pack order, so tape gradients line up with pack_trainables.
ModelParams<ad::Var> lift_leaves(const HyperModel& model, ad::Tape& tape);

struct TimelineEvent {
    double t = 0.0;
    int obs_index = -1;   // index into the active observation list, -1 if none
    bool query = false;
    bool boundary = false;
};

// Union of queries, active observation times, and the interval_dt grid.
std::vector<TimelineEvent> build_timeline(std::span<const double> query_times,
                                          std::span<const double> obs_times, double interval_dt);

struct PredictionRecord {
    double t = 0.0;
    Vec mean;  // observable marginal
    Mat cov;
    int obs_index = -1;  // index into traj.observations, -1 for plain queries
    double nll = std::numeric_limits<double>::quiet_NaN();
};

template <class T>
struct UnrollResult {
    std::vector<PredictionRecord> records;
    T nll_sum = T(0.0);
    int nll_count = 0;
    T penalty_sum = T(0.0);
    int penalty_count = 0;
};

struct UnrollOptions {
    bool filter_observations = true;
    std::span<const char> keep;  // per-observation flags; empty = keep all
};

namespace detail {
template <class T>
std::vector<T> detach_summary(const BeliefT<T>& b) {
    const int n = b.dim();
    std::vector<T> s;
    s.reserve(static_cast<std::size_t>(n + n * n));
    for (int i = 0; i < n; ++i) s.push_back(T(ad::value_of(b.mu(i))));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) s.push_back(T(ad::value_of(b.sigma(i, j))));
    return s;
}
}  // namespace detail

// Core event loop shared by the model unroll and the fixed-dynamics oracle
// unroll. `refresh(belief)` returns the dynamics for the next interval and a
// conditioning penalty.
template <class T, class RefreshFn>
UnrollResult<T> unroll_core(const BeliefT<T>& belief0, const VecX<T>& alpha, const MatX<T>& r,
                            const Trajectory& traj, std::span<const double> query_times,
                            double interval_dt, RefreshFn&& refresh,
                            const UnrollOptions& opts = {}) {
    UnrollResult<T> result;
    std::vector<double> obs_times;
    std::vector<int> obs_map;  // active index -> trajectory observation index
    for (std::size_t i = 0; i < traj.observations.size(); ++i) {
        if (!opts.keep.empty() && !opts.keep[i]) continue;
        obs_times.push_back(traj.observations[i].t);
        obs_map.push_back(static_cast<int>(i));
    }
    const auto timeline = build_timeline(query_times, obs_times, interval_dt);

    BeliefT<T> belief = belief0;
    SpectralDynamicsT<T> dyn;
    EsdeOperator<T> op;
    bool have_dyn = false;
    for (const auto& ev : timeline) {
        if (have_dyn && ev.t > belief.t)
            belief = propagate_with<T>(op, belief, traj.controls, ev.t);
        belief.t = ev.t;

        const bool is_obs = ev.obs_index >= 0;
        if (ev.query || is_obs) {
            auto [mean, cov] = predict_observable<T>(belief, alpha, r);
            PredictionRecord rec;
            rec.t = ev.t;
            rec.mean = value_vector<T>(mean);
            rec.cov = value_matrix<T>(cov);
            if (is_obs) {
                const Observation& obs =
                    traj.observations[static_cast<std::size_t>(obs_map[static_cast<std::size_t>(ev.obs_index)])];
                rec.obs_index = obs_map[static_cast<std::size_t>(ev.obs_index)];
                const T nll = gaussian_nll<T>(obs.y, obs.mask, mean, cov);
                rec.nll = ad::value_of(nll);
                result.nll_sum += nll;
                result.nll_count += 1;
                if (opts.filter_observations && obs.any())
                    belief = condition<T>(belief, obs, r, alpha);
            }
            result.records.push_back(std::move(rec));
        }
        if (ev.boundary) {
            auto [next_dyn, penalty] = refresh(belief);
            dyn = std::move(next_dyn);
            op = EsdeOperator<T>::make(dyn);
            have_dyn = true;
            result.penalty_sum += penalty;
            result.penalty_count += 1;
        }
    }
    return result;
}

// Algorithm unroll with the hypernetwork model: prior at t = 0, g2 weights
// from g1(C) once per sequence, dynamics re-emitted at every boundary from
// the (detached) belief summary.
template <class T>
UnrollResult<T> unroll(const HyperModel& model, const ModelParams<T>& mp, const Trajectory& traj,
                       std::span<const double> query_times, const UnrollOptions& opts = {}) {
    std::span<const double> ctx(traj.context.data(), static_cast<std::size_t>(traj.context.size()));
    const std::vector<T> w =
        hyper_forward<T>(model, std::span<const T>(mp.theta), ctx);
    const PriorOut<T> pr = prior_forward<T>(model, std::span<const T>(mp.prior), ctx);

    MatX<T> b_masked = mp.b_global;
    for (int i = 0; i < model.head.n; ++i)
        if (!model.b_mask.empty() && model.b_mask[static_cast<std::size_t>(i)])
            for (int j = 0; j < model.head.k; ++j) b_masked(i, j) = T(0.0);

    auto refresh = [&](const BeliefT<T>& belief) {
        const std::vector<T> summary = detail::detach_summary<T>(belief);
        DynHeads<T> heads = dynamics_heads<T>(model.head, model.g2_spec,
                                              std::span<const T>(w), summary);
        SpectralDynamicsT<T> dyn;
        dyn.spectrum = std::move(heads.spectrum);
        dyn.basis = std::move(heads.basis);
        dyn.q = std::move(heads.q);
        dyn.alpha = pr.alpha;
        dyn.b = b_masked;
        dyn.b_mask = model.b_mask;
        dyn.r = pr.r;
        return std::make_pair(std::move(dyn), heads.penalty);
    };
    return unroll_core<T>(pr.belief, pr.alpha, pr.r, traj, query_times, model.head.interval_dt,
                          refresh, opts);
}

// Unroll with fixed known dynamics and initial distribution (the optimality
// check path; the hypernetwork is bypassed entirely).
inline UnrollResult<double> unroll_fixed(const SpectralDynamics& dyn, const Vec& mu0,
                                         const Mat& sigma0, const Trajectory& traj,
                                         std::span<const double> query_times, double interval_dt,
                                         const UnrollOptions& opts = {}) {
    BeliefT<double> belief0;
    belief0.t = 0.0;
    belief0.mu = mu0 - dyn.alpha;  // beliefs live in centered coordinates
    belief0.sigma = sigma0;
    auto refresh = [&](const BeliefT<double>&) { return std::make_pair(dyn, 0.0); };
    return unroll_core<double>(belief0, dyn.alpha, dyn.r, traj, query_times, interval_dt, refresh,
                               opts);
}

// Adam

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Vec m;
    Vec v;
    long t = 0;
};

void adam_step(Vec& params, const Vec& grad, AdamState& state, const AdamConfig& cfg);

// Training

struct TrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 32;
    int epochs = 100;
    double interval_dt = 1.0;
    double subsample_prob = 0.7;
    std::uint64_t seed = 0;
    bool stable = false;
    int n = 2;
    int m = 1;
    int k = 1;
    int n_complex_pairs = 1;
    bool hypernet_disabled = false;
    std::vector<bool> b_mask;
    std::vector<int> g1_hidden = {64, 64};
    std::vector<int> g2_hidden = {32};
    std::vector<int> prior_hidden = {32};
    double penalty_weight = 1.0;
};

struct EpochStats {
    int epoch = 0;
    double train_nll = 0.0;
    double val_nll = 0.0;
    double penalty = 0.0;
};

struct TrainResult {
    HyperModel best_model;
    double best_val_nll = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    HyperModel last_model;
    AdamState adam;
    int epochs_done = 0;
    std::vector<EpochStats> history;
};

// Mini-batch NLL (mean over the batch's observations) plus the basis
// conditioning penalty; per-trajectory observation subsampling is re-drawn
// each epoch; deterministic given the seed. Non-finite batches are skipped
// after logging; more than 10 consecutive skips aborts.
TrainResult train(HyperModel model, std::span<const Trajectory> train_set,
                  std::span<const Trajectory> val_set, const TrainConfig& cfg,
                  const AdamState* resume_adam = nullptr, int start_epoch = 0,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

// Mean validation NLL of pre-filter predictions at observation times.
double validation_nll(const HyperModel& model, std::span<const Trajectory> set);

// Evaluation

struct PredRow {
    int traj_id = 0;
    double t = 0.0;
    double horizon = 0.0;
    int obs_seen = 0;
    int coord = 0;
    double y_true = 0.0;
    double y_pred = 0.0;
    double var_pred = 0.0;
    double nll = 0.0;  // joint event NLL
};

struct HorizonBin {
    double lo = 0.0;
    double hi = 0.0;
    double mse = 0.0;
    long count = 0;
};

struct ObsCountBin {
    int obs_seen = 0;
    double mse = 0.0;
    long count = 0;
};

struct EvalResult {
    double mse = 0.0;
    double nll = 0.0;
    double naive_mse = 0.0;
    long n_predictions = 0;
    std::vector<HorizonBin> per_horizon;
    std::vector<ObsCountBin> per_obs_count;
    std::vector<PredRow> rows;
};

struct EvalOptions {
    // When finite, only observations at t <= condition_before are filtered;
    // predictions are scored at the later observation times.
    double condition_before = std::numeric_limits<double>::infinity();
    std::vector<double> horizon_edges = {0.0, 0.5, 1.0, 2.0, 4.0, 8.0,
                                         std::numeric_limits<double>::infinity()};
};

EvalResult evaluate(const HyperModel& model, std::span<const Trajectory> set,
                    const EvalOptions& opts = {});

}  // namespace nesde
