#pragma once

#include <optional>
#include <random>

#include "nesde/serialize.hpp"
#include "nesde/train.hpp"

// Ground-truth simulators and benchmark generators. Sampling uses the exact
// discrete-time Gaussian transition law implied by the closed-form solution
// (no Euler bias), so generated statistics can be checked against the solver
// directly. Every dataset is self-describing: the header records the
// generator, its resolved configuration, and the ground-truth dynamics.

namespace nesde {

struct GeneratorConfig {
    int n_traj = 1000;
    enum class Mode { kComplex, kReal } mode = kComplex;
    double coupling = -0.5;  // control feedback coefficient on the observed signal
    int obs_min = 5;
    int obs_max = 15;
    double support = 10.0;
    std::uint64_t seed = 0;
    int b_segments = 10;          // piecewise-constant additive control noise segments
    double observation_noise = 0.0;  // variance per observed coordinate
    double q_noise = 0.1;         // diffusion level of the benchmark process
    int truth_points = 0;         // dense ground-truth samples per trajectory
};

struct Dataset {
    Json header;
    std::vector<Trajectory> trajectories;
};

// Exact transition sampling of dX = [A(X - alpha) + B u]dt + dW along t_grid.
// Returns X (original coordinates) at every grid time; x0 is X(t_grid[0]).
std::vector<Vec> simulate_linear_sde(const SpectralDynamics& dyn,
                                     std::span<const ControlSegment> schedule, const Vec& x0,
                                     std::span<const double> t_grid, std::mt19937_64& rng);

// Controlled 2-d benchmark: dim 1 observed noiselessly at irregular times,
// one latent dim driven by the control; closed-loop u = b_t + coupling * Y
// recomputed at b_segments evenly spaced ticks.
Dataset gen_section5(const GeneratorConfig& cfg);

// Sparsely observed 2-d Ornstein-Uhlenbeck benchmark with per-trajectory
// uniform centers, per-observation random dimension masks, and the
// condition-on-t<=4 evaluation protocol.
Dataset gen_ou(const GeneratorConfig& cfg);

// One observed + one latent dim with the named study matrix.
enum class SpectrumCase { kA1, kA2, kA3 };
Dataset gen_spectrum(SpectrumCase which, int n_traj, int obs_min, int obs_max,
                     std::uint64_t seed);

Mat spectrum_case_matrix(SpectrumCase which);

// Dosing simulator: stable 4-d hidden dynamics drawn per episode from a
// context-conditioned family, scalar dose acting on the latent block only,
// observations at sparse lab-test times.

struct DosingConfig {
    double support = 10.0;
    double lab_mean_interval = 1.2;
    double lab_min_gap = 0.3;
    double obs_noise = 0.01;
    double target_lo = 1.5;
    double target_hi = 2.5;
    int context_dim = 3;
};

struct DosingEnvState {
    Vec x;  // hidden state, never exposed through the observation API
    double t = 0.0;
    Vec context;
    SpectralDynamics dyn;
    std::mt19937_64 rng;
    double next_lab = 0.0;
    DosingConfig cfg;
};

std::pair<DosingEnvState, Vec> dosing_env_reset(const DosingConfig& cfg, std::uint64_t seed);

struct DosingStepResult {
    std::optional<Observation> obs;  // returned only when a lab time was crossed
    double reward = 0.0;             // negative squared distance from the target band
};

DosingStepResult dosing_env_step(DosingEnvState& state, double dose, double dt);

// Dataset of dosing episodes rolled out under a random piecewise-constant
// dosing policy; per-trajectory ground truth is stored with each record.
Dataset gen_dosing(int n_traj, const DosingConfig& cfg, std::uint64_t seed);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace nesde
