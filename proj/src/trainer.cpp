#include "cdbm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace cdbm {

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("TrainConfig: learning_rate must be finite and >= 0");
    }
    if (minibatch_size < 1 || n_particles < 1 || data_gibbs_steps < 1 || model_gibbs_steps < 1 ||
        averaging_kc < 1 || n_hidden1 < 1 || n_hidden2 < 1) {
        throw std::invalid_argument("TrainConfig: counts must be >= 1");
    }
    if (!(epochs >= 0.0)) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    for (double o : {beta0, gamma0}) {
        if (!(o > 0.0 && o < 1.0)) throw std::invalid_argument("TrainConfig: offsets must lie in (0,1)");
    }
}

double data_mean_epsilon(Index n_samples) { return 1.0 / (static_cast<double>(n_samples) + 2.0); }

TrainState init_model(const Matrix& data, const TrainConfig& cfg, Rng& rng) {
    cfg.validate();
    if (data.rows() == 0 || data.cols() == 0) throw std::invalid_argument("init_model: empty data");
    if (!is_binary(data)) throw std::invalid_argument("init_model: data must be binary");

    const double eps = data_mean_epsilon(data.rows());
    const Vector mean = data.colwise().mean().transpose().cwiseMax(eps).cwiseMin(1.0 - eps);

    Dbm2Params theta = Dbm2Params::zeros(data.cols(), cfg.n_hidden1, cfg.n_hidden2);
    theta.a = mean.unaryExpr([](double p) { return logit(p); });
    theta.alpha = theta.a.unaryExpr([](double v) { return sigm(v); });
    theta.b.setConstant(cfg.b0);
    theta.c.setConstant(cfg.c0);
    theta.beta.setConstant(cfg.beta0);
    theta.gamma.setConstant(cfg.gamma0);
    theta.validate();

    TrainState state;
    state.particles = ParticleSet::from_offsets(theta, cfg.n_particles, rng);
    state.theta_avg = theta;
    state.theta = std::move(theta);
    state.k = 0;
    return state;
}

ParamDelta pcd_gradient(const Dbm2Params& m, const ParticleSet& data, const ParticleSet& model) {
    const double nd = static_cast<double>(data.size());
    const double nm = static_cast<double>(model.size());
    const Matrix xd = data.x.rowwise() - m.alpha.transpose();
    const Matrix yd = data.y.rowwise() - m.beta.transpose();
    const Matrix zd = data.z.rowwise() - m.gamma.transpose();
    const Matrix xm = model.x.rowwise() - m.alpha.transpose();
    const Matrix ym = model.y.rowwise() - m.beta.transpose();
    const Matrix zm = model.z.rowwise() - m.gamma.transpose();

    ParamDelta d;
    d.dW = yd.transpose() * xd / nd - ym.transpose() * xm / nm;
    d.dV = zd.transpose() * yd / nd - zm.transpose() * ym / nm;
    // Offsets cancel in the bias terms: <x_d - alpha> - <x_m - alpha>.
    d.da = data.x.colwise().mean().transpose() - model.x.colwise().mean().transpose();
    d.db = data.y.colwise().mean().transpose() - model.y.colwise().mean().transpose();
    d.dc = data.z.colwise().mean().transpose() - model.z.colwise().mean().transpose();
    return d;
}

void average_parameters(Dbm2Params& avg, const Dbm2Params& theta, std::uint64_t k, int kc) {
    const double denom = static_cast<double>(k) + static_cast<double>(kc);
    const double w_new = static_cast<double>(kc) / denom;
    const double w_old = static_cast<double>(k) / denom;
    avg.W = w_new * theta.W + w_old * avg.W;
    avg.V = w_new * theta.V + w_old * avg.V;
    avg.a = w_new * theta.a + w_old * avg.a;
    avg.b = w_new * theta.b + w_old * avg.b;
    avg.c = w_new * theta.c + w_old * avg.c;
}

UpdateStats pcd_update(TrainState& state, const Matrix& minibatch, const TrainConfig& cfg, Rng& rng) {
    const Dbm2Params& m = state.theta;
    if (minibatch.rows() == 0 || minibatch.cols() != m.mx()) {
        throw std::invalid_argument("pcd_update: minibatch does not match visible layer");
    }

    ParticleSet data;
    data.x = minibatch;
    data.y = m.beta.transpose().replicate(minibatch.rows(), 1);
    data.z = m.gamma.transpose().replicate(minibatch.rows(), 1);
    sample_bernoulli(data.y, {&rng, 1});
    sample_bernoulli(data.z, {&rng, 1});
    dbm_gibbs_clamped_inplace(m, data.x, data.y, data.z, cfg.data_gibbs_steps, {&rng, 1});

    for (int s = 0; s < cfg.model_gibbs_steps; ++s) {
        dbm_gibbs_free_inplace(m, state.particles, {&rng, 1});
    }

    const ParamDelta d = pcd_gradient(m, data, state.particles);
    // The step is applied once per minibatch element, so the averaged
    // statistics are scaled back up to a sum.
    const double lr = cfg.learning_rate * static_cast<double>(minibatch.rows());

    UpdateStats stats;
    stats.mean_abs_dW = lr * d.dW.cwiseAbs().mean();
    stats.mean_abs_dV = lr * d.dV.cwiseAbs().mean();
    stats.free_energy_proxy = energy_dbm_rows(m, data.x, data.y, data.z).mean() -
                              energy_dbm_rows(m, state.particles.x, state.particles.y,
                                              state.particles.z).mean();

    Dbm2Params next = m;
    next.W += lr * d.dW;
    next.V += lr * d.dV;
    next.a += lr * d.da;
    next.b += lr * d.db;
    next.c += lr * d.dc;
    if (!next.all_finite()) {
        throw DivergenceError("non-finite parameter after update " + std::to_string(state.k), state.k);
    }
    state.theta = std::move(next);
    average_parameters(state.theta_avg, state.theta, state.k, cfg.averaging_kc);
    ++state.k;
    return stats;
}

std::vector<Snapshot> snapshot_schedule(double epochs, std::uint64_t updates_per_epoch) {
    auto tag_of = [](double e) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", e);
        return std::string(buf);
    };
    auto updates_at = [&](double e) {
        return static_cast<std::uint64_t>(std::floor(e * static_cast<double>(updates_per_epoch)));
    };

    std::vector<Snapshot> out;
    bool final_on_grid = false;
    for (double exponent : {0.0, 0.5, 1.0, 1.5, 2.0}) {
        const double e = std::pow(10.0, exponent);
        if (e > epochs * (1.0 + 1e-12)) break;
        out.push_back({tag_of(e), e, updates_at(e)});
        if (std::abs(e - epochs) <= 1e-9 * epochs) final_on_grid = true;
    }
    if (!final_on_grid) out.push_back({tag_of(epochs), epochs, updates_at(epochs)});
    return out;
}

TrainResult train(const Matrix& data, const TrainConfig& cfg, const TrainOptions& opts) {
    cfg.validate();
    Rng rng(cfg.seed);
    TrainResult result;
    result.state = init_model(data, cfg, rng);

    const auto n = static_cast<std::uint64_t>(data.rows());
    const auto batch = static_cast<std::uint64_t>(cfg.minibatch_size);
    const std::uint64_t per_epoch = (n + batch - 1) / batch;
    const auto total = static_cast<std::uint64_t>(std::floor(cfg.epochs * static_cast<double>(per_epoch)));
    result.snapshots = snapshot_schedule(cfg.epochs, per_epoch);

    auto emit_snapshots = [&](std::uint64_t k) {
        for (const Snapshot& s : result.snapshots) {
            if (s.update == k && opts.on_snapshot) opts.on_snapshot(s, result.state);
        }
    };
    emit_snapshots(0);

    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    Matrix mb;
    std::uint64_t k = 0;
    while (k < total) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
        }
        for (std::uint64_t start = 0; start < n && k < total; start += batch) {
            const std::uint64_t rows = std::min(batch, n - start);
            mb.resize(static_cast<Index>(rows), data.cols());
            for (std::uint64_t r = 0; r < rows; ++r) {
                mb.row(static_cast<Index>(r)) = data.row(order[start + r]);
            }
            const UpdateStats stats = pcd_update(result.state, mb, cfg, rng);
            ++k;
            const bool at_snapshot = std::any_of(result.snapshots.begin(), result.snapshots.end(),
                                                 [k](const Snapshot& s) { return s.update == k; });
            if (at_snapshot || (opts.metrics_every > 0 && k % opts.metrics_every == 0)) {
                result.metrics.push_back({k, static_cast<double>(k) / static_cast<double>(per_epoch), stats});
            }
            emit_snapshots(k);
        }
    }
    return result;
}

}  // namespace cdbm
