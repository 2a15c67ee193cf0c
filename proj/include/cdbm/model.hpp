#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace cdbm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

double sigm(double v);
/// Inverse of sigm. Arguments must lie strictly inside (0,1).
double logit(double p);

/// Numerically stable log(sum(exp(v))). Returns -inf for an empty span.
double log_sum_exp(std::span<const double> v);
/// log(mean(exp(v))).
double log_mean_exp(std::span<const double> v);

/// Fully connected binary Boltzmann machine with centered energy
///
///   E(x) = -1/2 (x-beta)^T W (x-beta) - (x-beta)^T b
///
/// Each unordered pair is counted once, so the single-site conditional is
/// p(x_i = 1 | x_-i) = sigm(b_i + sum_{j != i} W_ij (x_j - beta_j)).
/// W is symmetric with a zero diagonal.
struct FlatBmParams {
    Matrix W;
    Vector b;
    Vector beta;

    FlatBmParams() = default;
    /// Throws std::invalid_argument unless W is symmetric with zero diagonal.
    FlatBmParams(Matrix W, Vector b, Vector beta);

    /// Builds W by mirroring the strict upper triangle of `upper`.
    static FlatBmParams from_upper(const Matrix& upper, Vector b, Vector beta);

    Index size() const { return b.size(); }
    void validate() const;
};

/// Two-layer deep Boltzmann machine x - y - z.
///
/// W is My x Mx, V is Mz x My. Offsets alpha, beta, gamma are stored as
/// probabilities; energies use the centered states x-alpha, y-beta, z-gamma.
struct Dbm2Params {
    Matrix W;
    Matrix V;
    Vector a;
    Vector b;
    Vector c;
    Vector alpha;
    Vector beta;
    Vector gamma;

    static Dbm2Params zeros(Index mx, Index my, Index mz);

    Index mx() const { return a.size(); }
    Index my() const { return b.size(); }
    Index mz() const { return c.size(); }
    Index total_units() const { return mx() + my() + mz(); }

    /// Checks shapes, finiteness and offsets in [0,1].
    void validate() const;
    bool all_finite() const;
};

bool is_binary(const Eigen::Ref<const Matrix>& m);

double energy_flat(const FlatBmParams& m, const Vector& x);

double energy_dbm(const Dbm2Params& m, const Vector& x, const Vector& y, const Vector& z);

/// Row-wise energies for a batch of states (one state per row).
Vector energy_dbm_rows(const Dbm2Params& m, const Matrix& x, const Matrix& y, const Matrix& z);

/// Equivalent non-centered machine: b' = b - W beta, beta' = 0.
FlatBmParams uncenter(const FlatBmParams& m);

inline constexpr int kMaxEnumerationUnits = 20;

/// Exhaustive Gibbs distribution of a small model.
///
/// State index s encodes unit u in bit u. For a DBM the units are ordered
/// x (bits 0..Mx-1), then y, then z.
struct ExactEnumeration {
    std::vector<double> probabilities;
    double log_z = 0.0;
    int n_units = 0;
};

ExactEnumeration exact_enumerate(const FlatBmParams& m);
ExactEnumeration exact_enumerate(const Dbm2Params& m);

/// Binary state vector for index `s` of an enumeration over `n` units.
Vector state_from_index(std::uint64_t s, int n);
std::uint64_t index_from_state(const Eigen::Ref<const Vector>& x);

struct FlatGradient {
    Matrix dW;
    Vector db;
};

/// Average log-likelihood of the rows of `data` under the flat model.
double exact_loglik(const FlatBmParams& m, const Matrix& data);

/// Gradient of exact_loglik. dW(i,j) is the derivative with respect to the
/// shared parameter W_ij = W_ji; the diagonal is zero.
FlatGradient exact_loglik_gradient(const FlatBmParams& m, const Matrix& data);

/// log Psi(theta, x) = log sum_{y,z} exp(-E(x,y,z)) for a DBM with My+Mz <= 20.
double exact_log_psi(const Dbm2Params& m, const Vector& x);

/// Average exact log p(x) over the rows of `data`.
double exact_dbm_loglik(const Dbm2Params& m, const Matrix& data);

struct ConditionalMeans {
    Vector y;
    Vector z;
};

/// E[y | x] and E[z | x] by enumeration over the hidden layers.
ConditionalMeans exact_conditional_means(const Dbm2Params& m, const Vector& x);

}  // namespace cdbm
