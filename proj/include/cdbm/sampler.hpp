#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

#include "cdbm/model.hpp"

namespace cdbm {

/// Seedable generator: std::mt19937_64. Uniform variates are built from the
/// top 53 bits of each draw so streams are identical across standard
/// libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    /// Independent stream `index` under a master seed (seed + index).
    static Rng stream(std::uint64_t master_seed, std::uint64_t index) {
        return Rng(master_seed + index);
    }

    std::uint64_t next() { return engine_(); }
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    bool bernoulli(double p) { return uniform() < p; }
    double normal();
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

private:
    std::mt19937_64 engine_;
};

/// Persistent chain states, one particle per row.
struct ParticleSet {
    Matrix x;
    Matrix y;
    Matrix z;

    Index size() const { return x.rows(); }

    /// Particles drawn as Bernoulli(alpha, beta, gamma).
    static ParticleSet from_offsets(const Dbm2Params& m, Index n, Rng& rng);
};

/// Replaces every probability in `probs` by a Bernoulli draw. Entries are
/// visited row by row; `rngs` holds either one shared generator or one per row.
void sample_bernoulli(Matrix& probs, std::span<Rng> rngs);

/// Element-wise sigm of `lambda * pre`.
Matrix sigm_scaled(const Matrix& pre, double lambda = 1.0);

// Pre-activations for a batch of states, excluding the scale factor used in
// annealing. Rows are particles.
Matrix hidden_preactivation(const Dbm2Params& m, const Matrix& x, const Matrix& z);
Matrix visible_preactivation(const Dbm2Params& m, const Matrix& y);
Matrix top_preactivation(const Dbm2Params& m, const Matrix& y);

double conditional_flat(const FlatBmParams& m, const Vector& x, Index i);

/// One sequential single-site sweep over all units of a flat machine.
void gibbs_sweep_flat(const FlatBmParams& m, Vector& x, Rng& rng);

/// One alternation of the free-running sampler: y, then x and z from the new y.
ParticleSet dbm_gibbs_free(const Dbm2Params& m, ParticleSet p, Rng& rng);
void dbm_gibbs_free_inplace(const Dbm2Params& m, ParticleSet& p, std::span<Rng> rngs,
                            double lambda = 1.0);

struct HiddenStates {
    Matrix y;
    Matrix z;
};

/// `steps` alternations of y then z with x clamped.
HiddenStates dbm_gibbs_clamped(const Dbm2Params& m, const Matrix& x, Matrix y, Matrix z, int steps,
                               Rng& rng);
void dbm_gibbs_clamped_inplace(const Dbm2Params& m, const Matrix& x, Matrix& y, Matrix& z,
                               int steps, std::span<Rng> rngs, double lambda = 1.0);

/// Average of the hidden conditionals over `steps` clamped sweeps started
/// from Bernoulli(beta, gamma). Rows follow the rows of `x`.
HiddenStates mean_representation(const Dbm2Params& m, const Matrix& x, int steps, Rng& rng);

/// Free-running chain from Bernoulli offsets; after `burn_in` sweeps one
/// visible sample is emitted every `thin` sweeps.
Matrix generate_digits(const Dbm2Params& m, Index n, int burn_in, int thin, Rng& rng);

}  // namespace cdbm
