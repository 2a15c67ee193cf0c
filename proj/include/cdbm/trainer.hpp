#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdbm/model.hpp"
#include "cdbm/sampler.hpp"

namespace cdbm {

struct TrainConfig {
    double learning_rate = 0.0005;
    int minibatch_size = 25;
    int n_particles = 25;
    int data_gibbs_steps = 5;
    int model_gibbs_steps = 1;
    double epochs = 10.0;
    double b0 = 0.0;
    double c0 = 0.0;
    double beta0 = 0.5;
    double gamma0 = 0.5;
    int averaging_kc = 10;
    std::uint64_t seed = 1;
    Index n_hidden1 = 400;
    Index n_hidden2 = 100;

    void validate() const;
};

struct TrainState {
    Dbm2Params theta;
    Dbm2Params theta_avg;
    ParticleSet particles;
    std::uint64_t k = 0;
};

/// Thrown when an update produces a non-finite parameter. The state passed
/// to pcd_update is left untouched.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::uint64_t update)
        : std::runtime_error(what), update_(update) {}
    std::uint64_t update() const { return update_; }

private:
    std::uint64_t update_;
};

/// Lower clamp applied to visible data means before sigm^-1: 1/(N+2).
double data_mean_epsilon(Index n_samples);

TrainState init_model(const Matrix& data, const TrainConfig& cfg, Rng& rng);

/// Parameter step direction from data and model particles, averaged over
/// the rows of each set.
struct ParamDelta {
    Matrix dW;
    Matrix dV;
    Vector da;
    Vector db;
    Vector dc;
};

ParamDelta pcd_gradient(const Dbm2Params& theta, const ParticleSet& data, const ParticleSet& model);

struct UpdateStats {
    double mean_abs_dW = 0.0;
    double mean_abs_dV = 0.0;
    /// Mean energy of the data particles minus mean energy of the fantasy particles.
    double free_energy_proxy = 0.0;
};

/// Applies theta_avg <- kc/(k+kc) theta + k/(k+kc) theta_avg.
void average_parameters(Dbm2Params& avg, const Dbm2Params& theta, std::uint64_t k, int kc);

/// One persistent-contrastive-divergence step on `minibatch`. The learning
/// rate is per sample: theta moves by lr * rows(minibatch) * pcd_gradient.
UpdateStats pcd_update(TrainState& state, const Matrix& minibatch, const TrainConfig& cfg, Rng& rng);

struct MetricsRow {
    std::uint64_t update;
    double epoch;
    UpdateStats stats;
};

struct Snapshot {
    std::string tag;
    double epoch;
    std::uint64_t update;
};

/// Update counts at which the epoch grid {10^0, 10^0.5, 10^1, 10^1.5, 10^2}
/// and the final epoch are reached. Epochs beyond `epochs` are dropped.
std::vector<Snapshot> snapshot_schedule(double epochs, std::uint64_t updates_per_epoch);

struct TrainOptions {
    /// Called with the live state at every scheduled snapshot.
    std::function<void(const Snapshot&, const TrainState&)> on_snapshot;
    /// Metrics are recorded every `metrics_every` updates and at snapshots.
    std::uint64_t metrics_every = 100;
};

struct TrainResult {
    TrainState state;
    std::vector<MetricsRow> metrics;
    std::vector<Snapshot> snapshots;
};

/// Seeded SGD over shuffled minibatches. Throws DivergenceError.
TrainResult train(const Matrix& data, const TrainConfig& cfg, const TrainOptions& opts = {});

}  // namespace cdbm
