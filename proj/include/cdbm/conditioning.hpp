#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "cdbm/model.hpp"
#include "cdbm/sampler.hpp"

namespace cdbm {

/// Random subspace of the symmetric zero-diagonal weight space.
class DirectionBasis {
public:
    /// Validates symmetry, zero diagonal, unit Frobenius norm (1e-12) and
    /// linear independence. Throws std::invalid_argument.
    explicit DirectionBasis(std::vector<Matrix> directions);

    /// iid N(0,1) entries, symmetrized, diagonal cleared, Frobenius-normalized.
    static DirectionBasis random(Index n_units, int n_directions, Rng& rng);

    const std::vector<Matrix>& directions() const { return directions_; }
    std::size_t size() const { return directions_.size(); }

private:
    std::vector<Matrix> directions_;
};

/// Expectations by summing over all 2^M states.
struct ExactExpectations {};

/// Expectations from sampled states. With W = 0 the units are independent
/// and draws are exact iid Bernoulli(sigm(b)); otherwise a single-site Gibbs
/// chain is run with `burn_in` sweeps and one state kept per sweep.
struct MonteCarloExpectations {
    std::int64_t n_samples = 100000;
    std::uint64_t seed = 1;
    int burn_in = 1000;
};

using ExpectationSource = std::variant<ExactExpectations, MonteCarloExpectations>;

/// Weighted set of centered states xi = x - beta (weights sum to 1).
struct CenteredStates {
    Matrix xi;
    Vector weights;
};

CenteredStates centered_states(const FlatBmParams& m, const ExpectationSource& source);

/// Projected Hessian of the log-likelihood with respect to W:
///
///   H V = <xi xi^T> <D> - <xi xi^T D>,   D = 1/2 xi^T V xi
///
/// The diagonal is cleared since diag(W) is not a parameter.
Matrix hessian_vector_product(const CenteredStates& states, const Matrix& direction);
Matrix hessian_vector_product(const FlatBmParams& m, const Matrix& direction,
                              const ExpectationSource& source);

/// Columns are vec(H V_i) (column-major flattening, M*M rows).
Matrix projected_hessian(const CenteredStates& states, const DirectionBasis& basis);
Matrix projected_hessian(const FlatBmParams& m, const DirectionBasis& basis,
                         const ExpectationSource& source);

struct ConditioningResult {
    std::vector<double> singular_values;  // descending
    double condition_number = 0.0;        // +inf when the smallest value is below 1e-12
    std::int64_t n_mc_samples = 0;
    std::uint64_t seed = 0;
    std::string diagnostic;
};

ConditioningResult condition_from_projection(const Matrix& projected);

/// Krylov directions: `start`, then each further direction is H applied to
/// the previous one, orthogonalized against all earlier directions in the
/// Frobenius inner product and normalized. A fresh random direction from
/// `rng` replaces any step that collapses.
DirectionBasis krylov_basis(const CenteredStates& states, const Matrix& start, int n_directions, Rng& rng);

enum class SubspaceKind {
    /// Independent isotropic random directions.
    Random,
    /// Krylov subspace grown from one random direction.
    Krylov,
};

/// Random start direction(s) come from Rng::stream(seed, 0) and the Monte
/// Carlo states from seed + 1; all directions reuse the same sample.
ConditioningResult condition_number(const FlatBmParams& m, int n_directions,
                                    std::int64_t n_mc_samples, std::uint64_t seed,
                                    SubspaceKind kind = SubspaceKind::Krylov);

/// Flat machine with W = 0, every bias b0 and every offset beta0.
FlatBmParams decoupled_machine(Index n_units, double b0, double beta0);

}  // namespace cdbm
