#pragma once

#include <cstdint>
#include <vector>

#include "cdbm/model.hpp"
#include "cdbm/sampler.hpp"

namespace cdbm {

struct AisConfig {
    int K = 2500;
    int n_free_runs = 500;
    int n_clamped_runs_per_point = 1;
    std::uint64_t seed = 1;
    /// Worker threads. Results do not depend on this value.
    int jobs = 1;

    void validate() const;
};

/// lambda_k = 1 - (1 - k/K)^2.
double anneal_lambda(int k, int K);

/// theta_k: W, V, a, b, c scaled by lambda_k; offsets unchanged.
Dbm2Params anneal_schedule(const Dbm2Params& theta, int k, int K);

// A run starts from uniform random bits (the base-rate model). For
// k = 1..K it accumulates log p*(xi; theta_k) - log p*(xi; theta_{k-1}) at
// the current state and then, for k < K, applies one Gibbs alternation at
// theta_k. With theta = 0 every increment is exactly zero.

double ais_free_run(const Dbm2Params& theta, const AisConfig& cfg, Rng& rng);
double ais_clamped_run(const Dbm2Params& theta, const Vector& x, const AisConfig& cfg, Rng& rng);

/// Log weights of cfg.n_free_runs free runs; run i uses Rng::stream(seed, i).
std::vector<double> ais_free_log_weights(const Dbm2Params& theta, const AisConfig& cfg);

/// Seed offset separating clamped-run streams from free-run streams.
inline constexpr std::uint64_t kClampedStreamOffset = 0x9E3779B97F4A7C15ull;

/// Log weights per data row; run r of point p uses
/// Rng::stream(seed + kClampedStreamOffset, p * runs_per_point + r).
std::vector<std::vector<double>> ais_clamped_log_weights(const Dbm2Params& theta, const Matrix& data,
                                                         const AisConfig& cfg);

struct AisResult {
    std::vector<double> log_weights_free;
    std::vector<std::vector<double>> log_weights_clamped;
    double log_z_ratio_estimate = 0.0;
    std::vector<double> per_point_log_psi_ratio;
    double loglik_estimate = 0.0;
    Index n_visible = 0;
    int K = 0;
    std::uint64_t seed = 0;
};

/// Recomputes the log-likelihood from stored log weights:
/// mean_x log mean(nu(x)) - log mean(omega) - Mx log 2.
double assemble_loglik(const std::vector<double>& log_weights_free,
                       const std::vector<std::vector<double>>& log_weights_clamped, Index n_visible);

AisResult estimate_loglik(const Dbm2Params& theta, const Matrix& test_data, const AisConfig& cfg);

}  // namespace cdbm
