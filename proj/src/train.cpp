#include "nesde/train.hpp"

#include <algorithm>
#include <iostream>
#include <random>

namespace nesde {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

ModelParams<ad::Var> lift_leaves(const HyperModel& model, ad::Tape& tape) {
    assert(ad::active_tape() == &tape);
    (void)tape;
    ModelParams<ad::Var> mp;
    mp.theta.reserve(static_cast<std::size_t>(model.theta.size()));
    for (Eigen::Index i = 0; i < model.theta.size(); ++i)
        mp.theta.push_back(ad::Var::leaf(model.theta(i)));
    mp.prior.reserve(static_cast<std::size_t>(model.prior_params.size()));
    for (Eigen::Index i = 0; i < model.prior_params.size(); ++i)
        mp.prior.push_back(ad::Var::leaf(model.prior_params(i)));
    mp.b_global = MatX<ad::Var>(model.head.n, model.head.k);
    for (int i = 0; i < model.head.n; ++i) {
        const bool masked = !model.b_mask.empty() && model.b_mask[static_cast<std::size_t>(i)];
        for (int j = 0; j < model.head.k; ++j)
            mp.b_global(i, j) = masked ? ad::Var(0.0) : ad::Var::leaf(model.b_global(i, j));
    }
    return mp;
}

static Vec extract_gradient(const ModelParams<ad::Var>& mp, const HyperModel& model,
                            const std::vector<double>& adj) {
    Vec g(model.trainable_count());
    Eigen::Index p = 0;
    for (const auto& v : mp.theta) g(p++) = adj[static_cast<std::size_t>(v.idx)];
    for (const auto& v : mp.prior) g(p++) = adj[static_cast<std::size_t>(v.idx)];
    for (int i = 0; i < model.head.n; ++i) {
        if (!model.b_mask.empty() && model.b_mask[static_cast<std::size_t>(i)]) continue;
        for (int j = 0; j < model.head.k; ++j)
            g(p++) = adj[static_cast<std::size_t>(mp.b_global(i, j).idx)];
    }
    return g;
}

std::vector<TimelineEvent> build_timeline(std::span<const double> query_times,
                                          std::span<const double> obs_times, double interval_dt) {
    double t_max = 0.0;
    for (double t : query_times) t_max = std::max(t_max, t);
    for (double t : obs_times) t_max = std::max(t_max, t);

    struct Tagged {
        double t;
        int obs_index;  // -1 none
        bool query;
        bool boundary;
    };
    std::vector<Tagged> tags;
    if (interval_dt > 0.0) {
        for (long j = 0;; ++j) {
            const double t = static_cast<double>(j) * interval_dt;
            if (t > t_max + 1e-12) break;
            tags.push_back({t, -1, false, true});
        }
    } else {
        tags.push_back({0.0, -1, false, true});
    }
    for (double t : query_times) tags.push_back({t, -1, true, false});
    for (std::size_t i = 0; i < obs_times.size(); ++i)
        tags.push_back({obs_times[i], static_cast<int>(i), false, true});
    std::sort(tags.begin(), tags.end(), [](const Tagged& a, const Tagged& b) { return a.t < b.t; });

    std::vector<TimelineEvent> events;
    for (const auto& tag : tags) {
        if (!events.empty() && tag.t - events.back().t <= 1e-12) {
            TimelineEvent& ev = events.back();
            ev.query = ev.query || tag.query;
            ev.boundary = ev.boundary || tag.boundary;
            if (tag.obs_index >= 0) ev.obs_index = tag.obs_index;
        } else {
            events.push_back({tag.t, tag.obs_index, tag.query, tag.boundary});
        }
    }
    return events;
}

void adam_step(Vec& params, const Vec& grad, AdamState& state, const AdamConfig& cfg) {
    if (params.size() != grad.size()) throw NumericError("adam: shape mismatch");
    if (state.m.size() != params.size()) {
        state.m = Vec::Zero(params.size());
        state.v = Vec::Zero(params.size());
        state.t = 0;
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        state.m(i) = cfg.beta1 * state.m(i) + (1.0 - cfg.beta1) * grad(i);
        state.v(i) = cfg.beta2 * state.v(i) + (1.0 - cfg.beta2) * grad(i) * grad(i);
        const double mhat = state.m(i) / bc1;
        const double vhat = state.v(i) / bc2;
        params(i) -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

double validation_nll(const HyperModel& model, std::span<const Trajectory> set) {
    double total = 0.0;
    long count = 0;
    const auto mp = lift_params<double>(model);
    for (const auto& traj : set) {
        std::vector<double> queries;
        for (const auto& o : traj.observations) queries.push_back(o.t);
        try {
            const auto res = unroll<double>(model, mp, traj, queries);
            if (!std::isfinite(res.nll_sum)) return std::numeric_limits<double>::infinity();
            total += res.nll_sum;
            count += res.nll_count;
        } catch (const NumericError&) {
            return std::numeric_limits<double>::infinity();
        }
    }
    return count > 0 ? total / static_cast<double>(count) : 0.0;
}

TrainResult train(HyperModel model, std::span<const Trajectory> train_set,
                  std::span<const Trajectory> val_set, const TrainConfig& cfg,
                  const AdamState* resume_adam, int start_epoch,
                  const std::function<void(const EpochStats&)>& on_epoch) {
    if (train_set.empty()) throw ConfigError("train: empty training set");
    if (!(cfg.subsample_prob > 0.0 && cfg.subsample_prob <= 1.0))
        throw ConfigError("train: subsample_prob must be in (0, 1]");

    TrainResult result;
    Vec flat = pack_trainables(model);
    AdamState adam;
    if (resume_adam != nullptr) adam = *resume_adam;
    AdamConfig adam_cfg{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps};

    const int n_traj = static_cast<int>(train_set.size());
    ad::Tape tape;
    Vec batch_grad(model.trainable_count());
    std::vector<double> adj;
    int consecutive_skips = 0;

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        std::mt19937_64 rng(splitmix64(cfg.seed ^ splitmix64(static_cast<std::uint64_t>(epoch) + 1)));

        // per-epoch observation subsampling, drawn in trajectory order
        std::vector<std::vector<char>> keep(static_cast<std::size_t>(n_traj));
        std::bernoulli_distribution coin(cfg.subsample_prob);
        for (int i = 0; i < n_traj; ++i) {
            const auto& obs = train_set[static_cast<std::size_t>(i)].observations;
            auto& k = keep[static_cast<std::size_t>(i)];
            k.assign(obs.size(), 1);
            if (cfg.subsample_prob < 1.0)
                for (auto& flag : k) flag = coin(rng) ? 1 : 0;
        }

        std::vector<int> order(static_cast<std::size_t>(n_traj));
        for (int i = 0; i < n_traj; ++i) order[static_cast<std::size_t>(i)] = i;
        std::shuffle(order.begin(), order.end(), rng);

        double epoch_nll = 0.0, epoch_pen = 0.0;
        long epoch_obs = 0, epoch_pen_count = 0;

        for (int b0 = 0; b0 < n_traj; b0 += cfg.batch_size) {
            const int b1 = std::min(n_traj, b0 + cfg.batch_size);
            long n_obs = 0, n_pen = 0;
            for (int bi = b0; bi < b1; ++bi) {
                const int ti = order[static_cast<std::size_t>(bi)];
                const auto& traj = train_set[static_cast<std::size_t>(ti)];
                const auto& k = keep[static_cast<std::size_t>(ti)];
                std::vector<double> times;
                for (std::size_t oi = 0; oi < k.size(); ++oi)
                    if (k[oi]) times.push_back(traj.observations[oi].t);
                n_obs += static_cast<long>(times.size());
                for (const auto& ev : build_timeline(times, times, cfg.interval_dt))
                    if (ev.boundary) ++n_pen;
            }
            if (n_obs == 0) continue;

            batch_grad.setZero();
            double batch_nll = 0.0, batch_pen = 0.0;
            bool bad = false;
            std::string bad_where;
            for (int bi = b0; bi < b1 && !bad; ++bi) {
                const int ti = order[static_cast<std::size_t>(bi)];
                const auto& traj = train_set[static_cast<std::size_t>(ti)];
                const auto& k = keep[static_cast<std::size_t>(ti)];
                std::vector<double> times;
                for (std::size_t oi = 0; oi < k.size(); ++oi)
                    if (k[oi]) times.push_back(traj.observations[oi].t);

                tape.clear();
                ad::TapeScope scope(tape);
                const auto mp = lift_leaves(model, tape);
                try {
                    UnrollOptions opts;
                    opts.keep = std::span<const char>(k.data(), k.size());
                    const auto res = unroll<ad::Var>(model, mp, traj, times, opts);
                    ad::Var root = res.nll_sum * ad::Var(1.0 / static_cast<double>(n_obs));
                    if (n_pen > 0)
                        root += res.penalty_sum *
                                ad::Var(cfg.penalty_weight / static_cast<double>(n_pen));
                    if (!std::isfinite(root.value())) {
                        bad = true;
                        for (const auto& rec : res.records)
                            if (!std::isfinite(rec.nll) || !rec.mean.allFinite()) {
                                bad_where = "trajectory " + std::to_string(ti) + " at t=" +
                                            std::to_string(rec.t);
                                break;
                            }
                        break;
                    }
                    if (root.tracked()) {
                        tape.backward(root.idx, adj);
                        batch_grad += extract_gradient(mp, model, adj);
                    }
                    batch_nll += ad::value_of(res.nll_sum);
                    batch_pen += ad::value_of(res.penalty_sum);
                } catch (const NumericError& e) {
                    bad = true;
                    bad_where = "trajectory " + std::to_string(ti) + ": " + e.what();
                }
            }
            if (!bad && !batch_grad.allFinite()) {
                bad = true;
                bad_where = "non-finite gradient";
            }
            if (bad) {
                std::cerr << "[train] skipping batch at epoch " << epoch << " (" << bad_where
                          << ")\n";
                if (++consecutive_skips > 10)
                    throw NumericError("training aborted: more than 10 consecutive bad batches (" +
                                       bad_where + ")");
                continue;
            }
            consecutive_skips = 0;
            adam_step(flat, batch_grad, adam, adam_cfg);
            unpack_trainables(model, flat);
            epoch_nll += batch_nll;
            epoch_obs += n_obs;
            epoch_pen += batch_pen;
            epoch_pen_count += n_pen;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_nll = epoch_obs > 0 ? epoch_nll / static_cast<double>(epoch_obs) : 0.0;
        stats.penalty = epoch_pen_count > 0 ? epoch_pen / static_cast<double>(epoch_pen_count) : 0.0;
        stats.val_nll = val_set.empty() ? stats.train_nll : validation_nll(model, val_set);
        result.history.push_back(stats);
        if (on_epoch) on_epoch(stats);

        const double metric = stats.val_nll;
        if (metric < result.best_val_nll) {
            result.best_val_nll = metric;
            result.best_model = model;
            result.best_epoch = epoch;
        }
        result.epochs_done = epoch + 1;
    }
    if (result.best_epoch < 0) result.best_model = model;
    result.last_model = std::move(model);
    result.adam = std::move(adam);
    return result;
}

namespace {

int find_bin(const std::vector<double>& edges, double x) {
    for (std::size_t i = 0; i + 1 < edges.size(); ++i)
        if (x >= edges[i] && x < edges[i + 1]) return static_cast<int>(i);
    return static_cast<int>(edges.size()) - 2;
}

}  // namespace

EvalResult evaluate(const HyperModel& model, std::span<const Trajectory> set,
                    const EvalOptions& opts) {
    EvalResult out;
    const bool split_mode = std::isfinite(opts.condition_before);
    const auto mp = lift_params<double>(model);

    std::vector<std::pair<double, long>> horizon_acc(opts.horizon_edges.size() - 1, {0.0, 0});
    std::vector<std::pair<double, long>> obs_count_acc;

    double sq_sum = 0.0, naive_sq_sum = 0.0, nll_sum = 0.0;
    long coord_count = 0, event_count = 0;

    for (std::size_t tid = 0; tid < set.size(); ++tid) {
        const auto& traj = set[tid];
        std::vector<char> keep(traj.observations.size(), 1);
        if (split_mode)
            for (std::size_t i = 0; i < traj.observations.size(); ++i)
                keep[i] = traj.observations[i].t <= opts.condition_before ? 1 : 0;

        std::vector<double> queries;
        for (const auto& o : traj.observations) queries.push_back(o.t);
        UnrollOptions uo;
        uo.keep = std::span<const char>(keep.data(), keep.size());
        const auto res = unroll<double>(model, mp, traj, queries, uo);

        // score observations: all in sequential mode, held-out ones in split mode
        std::size_t ri = 0;
        for (std::size_t oi = 0; oi < traj.observations.size(); ++oi) {
            const auto& obs = traj.observations[oi];
            if (split_mode && keep[oi]) continue;
            while (ri < res.records.size() && res.records[ri].t < obs.t - 1e-9) ++ri;
            if (ri >= res.records.size() || std::abs(res.records[ri].t - obs.t) > 1e-9) continue;
            const auto& rec = res.records[ri];

            double last_seen_t = 0.0;
            int obs_seen = 0;
            for (std::size_t pj = 0; pj < oi; ++pj)
                if (keep[pj] && traj.observations[pj].t < obs.t - 1e-12) {
                    ++obs_seen;
                    last_seen_t = traj.observations[pj].t;
                }
            const double horizon = obs.t - last_seen_t;

            const double event_nll =
                gaussian_nll<double>(obs.y, obs.mask, rec.mean.eval(), rec.cov.eval());
            nll_sum += event_nll;
            ++event_count;

            for (int c = 0; c < static_cast<int>(obs.y.size()); ++c) {
                if (!obs.mask[static_cast<std::size_t>(c)]) continue;
                const double err = obs.y(c) - rec.mean(c);
                sq_sum += err * err;
                ++coord_count;

                double naive = 0.0;
                for (std::size_t pj = oi; pj-- > 0;) {
                    if (keep[pj] && traj.observations[pj].t < obs.t - 1e-12 &&
                        traj.observations[pj].mask[static_cast<std::size_t>(c)]) {
                        naive = traj.observations[pj].y(c);
                        break;
                    }
                }
                const double nerr = obs.y(c) - naive;
                naive_sq_sum += nerr * nerr;

                const int hb = find_bin(opts.horizon_edges, horizon);
                horizon_acc[static_cast<std::size_t>(hb)].first += err * err;
                horizon_acc[static_cast<std::size_t>(hb)].second += 1;
                if (static_cast<std::size_t>(obs_seen) >= obs_count_acc.size())
                    obs_count_acc.resize(static_cast<std::size_t>(obs_seen) + 1, {0.0, 0});
                obs_count_acc[static_cast<std::size_t>(obs_seen)].first += err * err;
                obs_count_acc[static_cast<std::size_t>(obs_seen)].second += 1;

                PredRow row;
                row.traj_id = static_cast<int>(tid);
                row.t = obs.t;
                row.horizon = horizon;
                row.obs_seen = obs_seen;
                row.coord = c;
                row.y_true = obs.y(c);
                row.y_pred = rec.mean(c);
                row.var_pred = rec.cov(c, c);
                row.nll = event_nll;
                out.rows.push_back(row);
            }
        }
    }

    out.mse = coord_count > 0 ? sq_sum / static_cast<double>(coord_count) : 0.0;
    out.naive_mse = coord_count > 0 ? naive_sq_sum / static_cast<double>(coord_count) : 0.0;
    out.nll = event_count > 0 ? nll_sum / static_cast<double>(event_count) : 0.0;
    out.n_predictions = coord_count;
    for (std::size_t i = 0; i + 1 < opts.horizon_edges.size(); ++i) {
        HorizonBin bin;
        bin.lo = opts.horizon_edges[i];
        bin.hi = opts.horizon_edges[i + 1];
        bin.count = horizon_acc[i].second;
        bin.mse = bin.count > 0 ? horizon_acc[i].first / static_cast<double>(bin.count) : 0.0;
        out.per_horizon.push_back(bin);
    }
    for (std::size_t i = 0; i < obs_count_acc.size(); ++i) {
        ObsCountBin bin;
        bin.obs_seen = static_cast<int>(i);
        bin.count = obs_count_acc[i].second;
        bin.mse = bin.count > 0 ? obs_count_acc[i].first / static_cast<double>(bin.count) : 0.0;
        out.per_obs_count.push_back(bin);
    }
    return out;
}

}  // namespace nesde
