#include "cdbm/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cdbm {

namespace {

void check_direction(const Matrix& v, Index n) {
    if (v.rows() != n || v.cols() != n) throw std::invalid_argument("direction must be M x M");
    if (!v.allFinite()) throw std::invalid_argument("direction has non-finite entries");
    const double tol = 1e-12 * std::max(1.0, v.cwiseAbs().maxCoeff());
    if ((v - v.transpose()).cwiseAbs().maxCoeff() > tol) {
        throw std::invalid_argument("direction must be symmetric");
    }
    if (v.diagonal().cwiseAbs().maxCoeff() > tol) {
        throw std::invalid_argument("direction must have a zero diagonal");
    }
}

}  // namespace

DirectionBasis::DirectionBasis(std::vector<Matrix> directions) : directions_(std::move(directions)) {
    if (directions_.empty()) throw std::invalid_argument("DirectionBasis: empty");
    const Index n = directions_.front().rows();
    Matrix stacked(n * n, static_cast<Index>(directions_.size()));
    for (std::size_t i = 0; i < directions_.size(); ++i) {
        const Matrix& v = directions_[i];
        check_direction(v, n);
        if (std::abs(v.norm() - 1.0) > 1e-12) {
            throw std::invalid_argument("DirectionBasis: directions must have unit Frobenius norm");
        }
        stacked.col(static_cast<Index>(i)) = v.reshaped();
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(stacked);
    qr.setThreshold(1e-10);
    if (qr.rank() != stacked.cols()) {
        throw std::invalid_argument("DirectionBasis: directions are linearly dependent");
    }
}

DirectionBasis DirectionBasis::random(Index n_units, int n_directions, Rng& rng) {
    if (n_directions < 1) throw std::invalid_argument("DirectionBasis::random: n_directions < 1");
    std::vector<Matrix> dirs;
    dirs.reserve(static_cast<std::size_t>(n_directions));
    for (int d = 0; d < n_directions; ++d) {
        Matrix v(n_units, n_units);
        for (Index j = 0; j < n_units; ++j) {
            for (Index i = 0; i < n_units; ++i) v(i, j) = rng.normal();
        }
        v = 0.5 * (v + v.transpose()).eval();
        v.diagonal().setZero();
        v /= v.norm();
        dirs.push_back(std::move(v));
    }
    return DirectionBasis(std::move(dirs));
}

CenteredStates centered_states(const FlatBmParams& m, const ExpectationSource& source) {
    m.validate();
    const Index n = m.size();
    CenteredStates out;

    if (std::holds_alternative<ExactExpectations>(source)) {
        const ExactEnumeration en = exact_enumerate(m);
        const auto count = static_cast<Index>(en.probabilities.size());
        out.xi.resize(count, n);
        out.weights.resize(count);
        for (Index s = 0; s < count; ++s) {
            out.xi.row(s) = (state_from_index(static_cast<std::uint64_t>(s), static_cast<int>(n)) - m.beta).transpose();
            out.weights(s) = en.probabilities[static_cast<std::size_t>(s)];
        }
        return out;
    }

    const auto& mc = std::get<MonteCarloExpectations>(source);
    if (mc.n_samples < 1) throw std::invalid_argument("centered_states: n_samples must be >= 1");
    Rng rng(mc.seed);
    out.xi.resize(mc.n_samples, n);
    out.weights = Vector::Constant(mc.n_samples, 1.0 / static_cast<double>(mc.n_samples));

    if (m.W.cwiseAbs().maxCoeff() == 0.0) {
        const Vector p = m.b.unaryExpr([](double v) { return sigm(v); });
        for (Index s = 0; s < mc.n_samples; ++s) {
            for (Index i = 0; i < n; ++i) out.xi(s, i) = (rng.bernoulli(p(i)) ? 1.0 : 0.0) - m.beta(i);
        }
        return out;
    }

    Vector x(n);
    for (Index i = 0; i < n; ++i) x(i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    for (int s = 0; s < mc.burn_in; ++s) gibbs_sweep_flat(m, x, rng);
    for (Index s = 0; s < mc.n_samples; ++s) {
        gibbs_sweep_flat(m, x, rng);
        out.xi.row(s) = (x - m.beta).transpose();
    }
    return out;
}

namespace {

Matrix second_moment(const CenteredStates& states) {
    return states.xi.transpose() * states.weights.asDiagonal() * states.xi;
}

// H V given the direction-independent second moment <xi xi^T>.
Matrix hv_from_moment(const CenteredStates& states, const Matrix& second, const Matrix& direction) {
    const Matrix& xi = states.xi;
    const Vector d = 0.5 * (xi * direction).cwiseProduct(xi).rowwise().sum();
    const Vector wd = states.weights.cwiseProduct(d);
    Matrix hv = second * states.weights.dot(d) - xi.transpose() * wd.asDiagonal() * xi;
    hv = 0.5 * (hv + hv.transpose()).eval();
    hv.diagonal().setZero();
    return hv;
}

}  // namespace

Matrix hessian_vector_product(const CenteredStates& states, const Matrix& direction) {
    check_direction(direction, states.xi.cols());
    return hv_from_moment(states, second_moment(states), direction);
}

Matrix hessian_vector_product(const FlatBmParams& m, const Matrix& direction,
                              const ExpectationSource& source) {
    check_direction(direction, m.size());
    return hessian_vector_product(centered_states(m, source), direction);
}

Matrix projected_hessian(const CenteredStates& states, const DirectionBasis& basis) {
    const Index n = states.xi.cols();
    Matrix out(n * n, static_cast<Index>(basis.size()));
    const Matrix second = second_moment(states);
    for (std::size_t i = 0; i < basis.size(); ++i) {
        const Matrix& v = basis.directions()[i];
        if (v.rows() != n) throw std::invalid_argument("projected_hessian: basis dimension mismatch");
        out.col(static_cast<Index>(i)) = hv_from_moment(states, second, v).reshaped();
    }
    return out;
}

Matrix projected_hessian(const FlatBmParams& m, const DirectionBasis& basis,
                         const ExpectationSource& source) {
    return projected_hessian(centered_states(m, source), basis);
}

ConditioningResult condition_from_projection(const Matrix& projected) {
    Eigen::JacobiSVD<Matrix> svd(projected);
    const Vector sv = svd.singularValues();
    ConditioningResult r;
    r.singular_values.assign(sv.data(), sv.data() + sv.size());
    const double smallest = sv.size() ? sv(sv.size() - 1) : 0.0;
    if (smallest < 1e-12) {
        r.condition_number = std::numeric_limits<double>::infinity();
        r.diagnostic = "smallest singular value " + std::to_string(smallest) + " below 1e-12";
    } else {
        r.condition_number = sv(0) / smallest;
    }
    return r;
}

DirectionBasis krylov_basis(const CenteredStates& states, const Matrix& start, int n_directions, Rng& rng) {
    const Index n = states.xi.cols();
    if (n_directions < 1) throw std::invalid_argument("krylov_basis: n_directions < 1");
    if (static_cast<Index>(n_directions) > n * (n - 1) / 2) {
        throw std::invalid_argument("krylov_basis: more directions than free weights");
    }
    check_direction(start, n);
    const Matrix second = second_moment(states);
    std::vector<Matrix> dirs{start / start.norm()};
    while (static_cast<int>(dirs.size()) < n_directions) {
        Matrix w = hv_from_moment(states, second, dirs.back());
        const double scale = w.norm();
        // Two passes of Gram-Schmidt keep the basis orthonormal to working precision.
        for (int pass = 0; pass < 2; ++pass) {
            for (const Matrix& q : dirs) w -= (w.cwiseProduct(q).sum()) * q;
        }
        while (!(w.norm() > 1e-8 * std::max(scale, 1e-300))) {
            w = DirectionBasis::random(n, 1, rng).directions().front();
            for (int pass = 0; pass < 2; ++pass) {
                for (const Matrix& q : dirs) w -= (w.cwiseProduct(q).sum()) * q;
            }
        }
        dirs.push_back(w / w.norm());
    }
    return DirectionBasis(std::move(dirs));
}

ConditioningResult condition_number(const FlatBmParams& m, int n_directions,
                                    std::int64_t n_mc_samples, std::uint64_t seed, SubspaceKind kind) {
    if (n_directions < 2) throw std::invalid_argument("condition_number: n_directions must be >= 2");
    Rng basis_rng = Rng::stream(seed, 0);
    const MonteCarloExpectations mc{n_mc_samples, seed + 1, 1000};
    const CenteredStates states = centered_states(m, mc);
    const DirectionBasis basis =
        kind == SubspaceKind::Random
            ? DirectionBasis::random(m.size(), n_directions, basis_rng)
            : krylov_basis(states, DirectionBasis::random(m.size(), 1, basis_rng).directions().front(),
                           n_directions, basis_rng);
    ConditioningResult r = condition_from_projection(projected_hessian(states, basis));
    r.n_mc_samples = n_mc_samples;
    r.seed = seed;
    return r;
}

FlatBmParams decoupled_machine(Index n_units, double b0, double beta0) {
    return FlatBmParams(Matrix::Zero(n_units, n_units), Vector::Constant(n_units, b0),
                        Vector::Constant(n_units, beta0));
}

}  // namespace cdbm
