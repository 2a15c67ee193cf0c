#include "cdbm/sampler.hpp"

#include <cmath>
#include <stdexcept>

namespace cdbm {

double Rng::normal() {
    // Box-Muller on the portable uniform stream.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t r = next();
    while (r >= limit) r = next();
    return r % n;
}

ParticleSet ParticleSet::from_offsets(const Dbm2Params& m, Index n, Rng& rng) {
    ParticleSet p;
    p.x = m.alpha.transpose().replicate(n, 1);
    p.y = m.beta.transpose().replicate(n, 1);
    p.z = m.gamma.transpose().replicate(n, 1);
    Rng* r = &rng;
    sample_bernoulli(p.x, {r, 1});
    sample_bernoulli(p.y, {r, 1});
    sample_bernoulli(p.z, {r, 1});
    return p;
}

void sample_bernoulli(Matrix& probs, std::span<Rng> rngs) {
    if (rngs.size() != 1 && static_cast<Index>(rngs.size()) != probs.rows()) {
        throw std::invalid_argument("sample_bernoulli: need one generator or one per row");
    }
    const bool shared = rngs.size() == 1;
    for (Index i = 0; i < probs.rows(); ++i) {
        Rng& rng = shared ? rngs[0] : rngs[static_cast<std::size_t>(i)];
        for (Index j = 0; j < probs.cols(); ++j) {
            probs(i, j) = rng.uniform() < probs(i, j) ? 1.0 : 0.0;
        }
    }
}

Matrix sigm_scaled(const Matrix& pre, double lambda) {
    return pre.unaryExpr([lambda](double v) { return sigm(lambda * v); });
}

Matrix hidden_preactivation(const Dbm2Params& m, const Matrix& x, const Matrix& z) {
    Matrix h = (x.rowwise() - m.alpha.transpose()) * m.W.transpose();
    h.noalias() += (z.rowwise() - m.gamma.transpose()) * m.V;
    h.rowwise() += m.b.transpose();
    return h;
}

Matrix visible_preactivation(const Dbm2Params& m, const Matrix& y) {
    Matrix h = (y.rowwise() - m.beta.transpose()) * m.W;
    h.rowwise() += m.a.transpose();
    return h;
}

Matrix top_preactivation(const Dbm2Params& m, const Matrix& y) {
    Matrix h = (y.rowwise() - m.beta.transpose()) * m.V.transpose();
    h.rowwise() += m.c.transpose();
    return h;
}

double conditional_flat(const FlatBmParams& m, const Vector& x, Index i) {
    if (x.size() != m.size()) throw std::invalid_argument("conditional_flat: dimension mismatch");
    if (i < 0 || i >= m.size()) throw std::out_of_range("conditional_flat: unit index out of range");
    double act = m.b(i);
    for (Index j = 0; j < m.size(); ++j) {
        if (j != i) act += m.W(i, j) * (x(j) - m.beta(j));
    }
    return sigm(act);
}

void gibbs_sweep_flat(const FlatBmParams& m, Vector& x, Rng& rng) {
    for (Index i = 0; i < m.size(); ++i) x(i) = rng.bernoulli(conditional_flat(m, x, i)) ? 1.0 : 0.0;
}

namespace {

void check_particles(const Dbm2Params& m, const ParticleSet& p) {
    if (p.x.cols() != m.mx() || p.y.cols() != m.my() || p.z.cols() != m.mz() ||
        p.y.rows() != p.x.rows() || p.z.rows() != p.x.rows()) {
        throw std::invalid_argument("particle set does not match model dimensions");
    }
}

}  // namespace

void dbm_gibbs_free_inplace(const Dbm2Params& m, ParticleSet& p, std::span<Rng> rngs,
                            double lambda) {
    check_particles(m, p);
    p.y = sigm_scaled(hidden_preactivation(m, p.x, p.z), lambda);
    sample_bernoulli(p.y, rngs);
    p.x = sigm_scaled(visible_preactivation(m, p.y), lambda);
    sample_bernoulli(p.x, rngs);
    p.z = sigm_scaled(top_preactivation(m, p.y), lambda);
    sample_bernoulli(p.z, rngs);
}

ParticleSet dbm_gibbs_free(const Dbm2Params& m, ParticleSet p, Rng& rng) {
    dbm_gibbs_free_inplace(m, p, {&rng, 1});
    return p;
}

void dbm_gibbs_clamped_inplace(const Dbm2Params& m, const Matrix& x, Matrix& y, Matrix& z,
                               int steps, std::span<Rng> rngs, double lambda) {
    if (steps < 1) throw std::invalid_argument("dbm_gibbs_clamped: steps must be >= 1");
    if (x.cols() != m.mx() || y.cols() != m.my() || z.cols() != m.mz() || y.rows() != x.rows() ||
        z.rows() != x.rows()) {
        throw std::invalid_argument("dbm_gibbs_clamped: dimension mismatch");
    }
    // W(x - alpha) + b is fixed while x is clamped.
    Matrix from_x = (x.rowwise() - m.alpha.transpose()) * m.W.transpose();
    from_x.rowwise() += m.b.transpose();
    for (int s = 0; s < steps; ++s) {
        Matrix pre = from_x;
        pre.noalias() += (z.rowwise() - m.gamma.transpose()) * m.V;
        y = sigm_scaled(pre, lambda);
        sample_bernoulli(y, rngs);
        z = sigm_scaled(top_preactivation(m, y), lambda);
        sample_bernoulli(z, rngs);
    }
}

HiddenStates dbm_gibbs_clamped(const Dbm2Params& m, const Matrix& x, Matrix y, Matrix z, int steps,
                               Rng& rng) {
    dbm_gibbs_clamped_inplace(m, x, y, z, steps, {&rng, 1});
    return {std::move(y), std::move(z)};
}

HiddenStates mean_representation(const Dbm2Params& m, const Matrix& x, int steps, Rng& rng) {
    if (steps < 1) throw std::invalid_argument("mean_representation: steps must be >= 1");
    const Index n = x.rows();
    Matrix y = m.beta.transpose().replicate(n, 1);
    Matrix z = m.gamma.transpose().replicate(n, 1);
    sample_bernoulli(y, {&rng, 1});
    sample_bernoulli(z, {&rng, 1});
    HiddenStates acc{Matrix::Zero(n, m.my()), Matrix::Zero(n, m.mz())};
    // Conditional probabilities are accumulated instead of the sampled bits.
    for (int s = 0; s < steps; ++s) {
        y = sigm_scaled(hidden_preactivation(m, x, z));
        acc.y += y;
        sample_bernoulli(y, {&rng, 1});
        z = sigm_scaled(top_preactivation(m, y));
        acc.z += z;
        sample_bernoulli(z, {&rng, 1});
    }
    acc.y /= static_cast<double>(steps);
    acc.z /= static_cast<double>(steps);
    return acc;
}

Matrix generate_digits(const Dbm2Params& m, Index n, int burn_in, int thin, Rng& rng) {
    if (n < 1) throw std::invalid_argument("generate_digits: n must be >= 1");
    if (burn_in < 0 || thin < 1) throw std::invalid_argument("generate_digits: bad burn_in/thin");
    ParticleSet p = ParticleSet::from_offsets(m, 1, rng);
    for (int s = 0; s < burn_in; ++s) dbm_gibbs_free_inplace(m, p, {&rng, 1});
    Matrix out(n, m.mx());
    for (Index i = 0; i < n; ++i) {
        for (int s = 0; s < thin; ++s) dbm_gibbs_free_inplace(m, p, {&rng, 1});
        out.row(i) = p.x.row(0);
    }
    return out;
}

}  // namespace cdbm
