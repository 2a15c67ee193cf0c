#include "cdbm/ais.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>

namespace cdbm {

namespace {

constexpr Index kChunk = 50;

void check_finite(const Vector& logw) {
    if (!logw.allFinite()) throw std::runtime_error("AIS: non-finite log importance weight");
}

// Free runs for a batch of chains, one generator per row.
Vector free_batch(const Dbm2Params& m, int K, std::span<Rng> rngs) {
    const auto n = static_cast<Index>(rngs.size());
    Matrix x = Matrix::Constant(n, m.mx(), 0.5);
    Matrix y = Matrix::Constant(n, m.my(), 0.5);
    Matrix z = Matrix::Constant(n, m.mz(), 0.5);
    sample_bernoulli(x, rngs);
    sample_bernoulli(y, rngs);
    sample_bernoulli(z, rngs);

    Vector logw = Vector::Zero(n);
    for (int k = 1; k <= K; ++k) {
        const double step = anneal_lambda(k, K) - anneal_lambda(k - 1, K);
        const Matrix hy = hidden_preactivation(m, x, z);
        // E = -(y-beta).(W(x-alpha) + V^T(z-gamma) + b) - (x-alpha).a - (z-gamma).c
        Vector energy = -((y.rowwise() - m.beta.transpose()).cwiseProduct(hy)).rowwise().sum();
        energy -= (x.rowwise() - m.alpha.transpose()) * m.a + (z.rowwise() - m.gamma.transpose()) * m.c;
        logw -= step * energy;
        if (k == K) break;

        const double lambda = anneal_lambda(k, K);
        y = sigm_scaled(hy, lambda);
        sample_bernoulli(y, rngs);
        x = sigm_scaled(visible_preactivation(m, y), lambda);
        sample_bernoulli(x, rngs);
        z = sigm_scaled(top_preactivation(m, y), lambda);
        sample_bernoulli(z, rngs);
    }
    check_finite(logw);
    return logw;
}

// Clamped runs; row i of `x` is the visible state of chain i.
Vector clamped_batch(const Dbm2Params& m, const Matrix& x, int K, std::span<Rng> rngs) {
    const Index n = x.rows();
    Matrix y = Matrix::Constant(n, m.my(), 0.5);
    Matrix z = Matrix::Constant(n, m.mz(), 0.5);
    sample_bernoulli(y, rngs);
    sample_bernoulli(z, rngs);

    Matrix from_x = (x.rowwise() - m.alpha.transpose()) * m.W.transpose();
    from_x.rowwise() += m.b.transpose();
    const Vector visible_term = (x.rowwise() - m.alpha.transpose()) * m.a;

    Vector logw = Vector::Zero(n);
    for (int k = 1; k <= K; ++k) {
        const double step = anneal_lambda(k, K) - anneal_lambda(k - 1, K);
        Matrix hy = from_x;
        hy.noalias() += (z.rowwise() - m.gamma.transpose()) * m.V;
        Vector energy = -((y.rowwise() - m.beta.transpose()).cwiseProduct(hy)).rowwise().sum();
        energy -= visible_term + (z.rowwise() - m.gamma.transpose()) * m.c;
        logw -= step * energy;
        if (k == K) break;

        const double lambda = anneal_lambda(k, K);
        y = sigm_scaled(hy, lambda);
        sample_bernoulli(y, rngs);
        z = sigm_scaled(top_preactivation(m, y), lambda);
        sample_bernoulli(z, rngs);
    }
    check_finite(logw);
    return logw;
}

// Runs `work(chunk)` for every chunk index on up to `jobs` threads.
template <class F>
void for_each_chunk(Index n_chunks, int jobs, F&& work) {
    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n_chunks)));
    if (workers == 1) {
        for (Index c = 0; c < n_chunks; ++c) work(c);
        return;
    }
    std::atomic<Index> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (Index c = next++; c < n_chunks; c = next++) {
                try {
                    work(c);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    pool.clear();
    if (error) std::rethrow_exception(error);
}

}  // namespace

void AisConfig::validate() const {
    if (K < 1) throw std::invalid_argument("AisConfig: K must be >= 1");
    if (n_free_runs < 1 || n_clamped_runs_per_point < 1) {
        throw std::invalid_argument("AisConfig: run counts must be >= 1");
    }
}

double anneal_lambda(int k, int K) {
    if (K < 1 || k < 0 || k > K) throw std::invalid_argument("anneal_lambda: need 0 <= k <= K");
    if (k == K) return 1.0;
    const double r = 1.0 - static_cast<double>(k) / static_cast<double>(K);
    return 1.0 - r * r;
}

Dbm2Params anneal_schedule(const Dbm2Params& theta, int k, int K) {
    const double lambda = anneal_lambda(k, K);
    Dbm2Params out = theta;
    out.W *= lambda;
    out.V *= lambda;
    out.a *= lambda;
    out.b *= lambda;
    out.c *= lambda;
    return out;
}

double ais_free_run(const Dbm2Params& theta, const AisConfig& cfg, Rng& rng) {
    theta.validate();
    cfg.validate();
    return free_batch(theta, cfg.K, {&rng, 1})(0);
}

double ais_clamped_run(const Dbm2Params& theta, const Vector& x, const AisConfig& cfg, Rng& rng) {
    theta.validate();
    cfg.validate();
    if (x.size() != theta.mx()) throw std::invalid_argument("ais_clamped_run: dimension mismatch");
    return clamped_batch(theta, x.transpose(), cfg.K, {&rng, 1})(0);
}

std::vector<double> ais_free_log_weights(const Dbm2Params& theta, const AisConfig& cfg) {
    theta.validate();
    cfg.validate();
    const Index runs = cfg.n_free_runs;
    std::vector<double> out(static_cast<std::size_t>(runs));
    const Index n_chunks = (runs + kChunk - 1) / kChunk;
    for_each_chunk(n_chunks, cfg.jobs, [&](Index c) {
        const Index begin = c * kChunk;
        const Index end = std::min(runs, begin + kChunk);
        std::vector<Rng> rngs;
        for (Index i = begin; i < end; ++i) rngs.push_back(Rng::stream(cfg.seed, static_cast<std::uint64_t>(i)));
        const Vector w = free_batch(theta, cfg.K, rngs);
        for (Index i = begin; i < end; ++i) out[static_cast<std::size_t>(i)] = w(i - begin);
    });
    return out;
}

std::vector<std::vector<double>> ais_clamped_log_weights(const Dbm2Params& theta, const Matrix& data,
                                                         const AisConfig& cfg) {
    theta.validate();
    cfg.validate();
    if (data.cols() != theta.mx()) throw std::invalid_argument("ais_clamped_log_weights: dimension mismatch");
    const Index per_point = cfg.n_clamped_runs_per_point;
    const Index runs = data.rows() * per_point;
    std::vector<std::vector<double>> out(static_cast<std::size_t>(data.rows()),
                                         std::vector<double>(static_cast<std::size_t>(per_point)));
    const Index n_chunks = (runs + kChunk - 1) / kChunk;
    for_each_chunk(n_chunks, cfg.jobs, [&](Index c) {
        const Index begin = c * kChunk;
        const Index end = std::min(runs, begin + kChunk);
        Matrix x(end - begin, data.cols());
        std::vector<Rng> rngs;
        for (Index i = begin; i < end; ++i) {
            x.row(i - begin) = data.row(i / per_point);
            rngs.push_back(Rng::stream(cfg.seed + kClampedStreamOffset, static_cast<std::uint64_t>(i)));
        }
        const Vector w = clamped_batch(theta, x, cfg.K, rngs);
        for (Index i = begin; i < end; ++i) {
            out[static_cast<std::size_t>(i / per_point)][static_cast<std::size_t>(i % per_point)] = w(i - begin);
        }
    });
    return out;
}

double assemble_loglik(const std::vector<double>& log_weights_free,
                       const std::vector<std::vector<double>>& log_weights_clamped, Index n_visible) {
    if (log_weights_clamped.empty()) throw std::invalid_argument("assemble_loglik: no data points");
    double mean_psi = 0.0;
    for (const auto& w : log_weights_clamped) mean_psi += log_mean_exp(w);
    mean_psi /= static_cast<double>(log_weights_clamped.size());
    return mean_psi - log_mean_exp(log_weights_free) - static_cast<double>(n_visible) * std::log(2.0);
}

AisResult estimate_loglik(const Dbm2Params& theta, const Matrix& test_data, const AisConfig& cfg) {
    if (test_data.rows() == 0) throw std::invalid_argument("estimate_loglik: empty test set");
    AisResult r;
    r.n_visible = theta.mx();
    r.K = cfg.K;
    r.seed = cfg.seed;
    r.log_weights_free = ais_free_log_weights(theta, cfg);
    r.log_weights_clamped = ais_clamped_log_weights(theta, test_data, cfg);
    r.log_z_ratio_estimate = log_mean_exp(r.log_weights_free);
    for (const auto& w : r.log_weights_clamped) r.per_point_log_psi_ratio.push_back(log_mean_exp(w));
    r.loglik_estimate = assemble_loglik(r.log_weights_free, r.log_weights_clamped, r.n_visible);
    return r;
}

}  // namespace cdbm
