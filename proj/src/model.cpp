#include "cdbm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cdbm {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

bool offsets_ok(const Vector& v) {
    return v.allFinite() && (v.array() >= 0.0).all() && (v.array() <= 1.0).all();
}

// Energy of one enumerated state, evaluated directly on the packed bits.
double flat_energy_bits(const FlatBmParams& m, std::uint64_t s) {
    const Index n = m.size();
    double e = 0.0;
    for (Index i = 0; i < n; ++i) {
        const double xi = static_cast<double>((s >> i) & 1u) - m.beta(i);
        double row = 0.0;
        for (Index j = i + 1; j < n; ++j) {
            row += m.W(i, j) * (static_cast<double>((s >> j) & 1u) - m.beta(j));
        }
        e -= xi * row + xi * m.b(i);
    }
    return e;
}

}  // namespace

double sigm(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

double logit(double p) {
    require(p > 0.0 && p < 1.0, "logit: argument outside (0,1)");
    return std::log(p) - std::log1p(-p);
}

double log_sum_exp(std::span<const double> v) {
    if (v.empty()) return -std::numeric_limits<double>::infinity();
    const double mx = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(mx)) return mx;
    double acc = 0.0;
    for (double x : v) acc += std::exp(x - mx);
    return mx + std::log(acc);
}

double log_mean_exp(std::span<const double> v) {
    require(!v.empty(), "log_mean_exp: empty input");
    return log_sum_exp(v) - std::log(static_cast<double>(v.size()));
}

// ---------------------------------------------------------------------------

FlatBmParams::FlatBmParams(Matrix W_, Vector b_, Vector beta_)
    : W(std::move(W_)), b(std::move(b_)), beta(std::move(beta_)) {
    validate();
}

FlatBmParams FlatBmParams::from_upper(const Matrix& upper, Vector b, Vector beta) {
    require(upper.rows() == upper.cols(), "FlatBmParams: W must be square");
    Matrix W = Matrix::Zero(upper.rows(), upper.cols());
    for (Index i = 0; i < W.rows(); ++i) {
        for (Index j = i + 1; j < W.cols(); ++j) {
            W(i, j) = upper(i, j);
            W(j, i) = upper(i, j);
        }
    }
    return FlatBmParams(std::move(W), std::move(b), std::move(beta));
}

void FlatBmParams::validate() const {
    const Index n = b.size();
    require(W.rows() == n && W.cols() == n, "FlatBmParams: W must be M x M with M = dim(b)");
    require(beta.size() == n, "FlatBmParams: dim(beta) != dim(b)");
    require(W.allFinite() && b.allFinite(), "FlatBmParams: non-finite parameter");
    require(offsets_ok(beta), "FlatBmParams: offsets must lie in [0,1]");
    for (Index i = 0; i < n; ++i) {
        require(W(i, i) == 0.0, "FlatBmParams: diag(W) must be zero");
        for (Index j = i + 1; j < n; ++j) {
            require(W(i, j) == W(j, i), "FlatBmParams: W must be symmetric");
        }
    }
}

Dbm2Params Dbm2Params::zeros(Index mx, Index my, Index mz) {
    Dbm2Params p;
    p.W = Matrix::Zero(my, mx);
    p.V = Matrix::Zero(mz, my);
    p.a = Vector::Zero(mx);
    p.b = Vector::Zero(my);
    p.c = Vector::Zero(mz);
    p.alpha = Vector::Zero(mx);
    p.beta = Vector::Zero(my);
    p.gamma = Vector::Zero(mz);
    return p;
}

void Dbm2Params::validate() const {
    require(W.rows() == my() && W.cols() == mx(), "Dbm2Params: W must be My x Mx");
    require(V.rows() == mz() && V.cols() == my(), "Dbm2Params: V must be Mz x My");
    require(alpha.size() == mx() && beta.size() == my() && gamma.size() == mz(),
            "Dbm2Params: offset dimensions do not match biases");
    require(all_finite(), "Dbm2Params: non-finite parameter");
    require(offsets_ok(alpha) && offsets_ok(beta) && offsets_ok(gamma),
            "Dbm2Params: offsets must lie in [0,1]");
}

bool Dbm2Params::all_finite() const {
    return W.allFinite() && V.allFinite() && a.allFinite() && b.allFinite() &&
           c.allFinite() && alpha.allFinite() && beta.allFinite() && gamma.allFinite();
}

bool is_binary(const Eigen::Ref<const Matrix>& m) {
    return ((m.array() == 0.0) || (m.array() == 1.0)).all();
}

// ---------------------------------------------------------------------------

double energy_flat(const FlatBmParams& m, const Vector& x) {
    require(x.size() == m.size(), "energy_flat: dimension mismatch");
    const Vector xi = x - m.beta;
    return -0.5 * xi.dot(m.W * xi) - xi.dot(m.b);
}

double energy_dbm(const Dbm2Params& m, const Vector& x, const Vector& y, const Vector& z) {
    require(x.size() == m.mx() && y.size() == m.my() && z.size() == m.mz(),
            "energy_dbm: dimension mismatch");
    const Vector xc = x - m.alpha;
    const Vector yc = y - m.beta;
    const Vector zc = z - m.gamma;
    return -yc.dot(m.W * xc) - zc.dot(m.V * yc) - xc.dot(m.a) - yc.dot(m.b) - zc.dot(m.c);
}

Vector energy_dbm_rows(const Dbm2Params& m, const Matrix& x, const Matrix& y, const Matrix& z) {
    require(x.cols() == m.mx() && y.cols() == m.my() && z.cols() == m.mz(),
            "energy_dbm_rows: dimension mismatch");
    require(x.rows() == y.rows() && y.rows() == z.rows(), "energy_dbm_rows: row counts differ");
    const Matrix xc = x.rowwise() - m.alpha.transpose();
    const Matrix yc = y.rowwise() - m.beta.transpose();
    const Matrix zc = z.rowwise() - m.gamma.transpose();
    const Matrix hy = xc * m.W.transpose() + zc * m.V;  // rows: W(x-a) + V^T(z-g)
    Vector e = -(yc.cwiseProduct(hy)).rowwise().sum();
    e -= xc * m.a + yc * m.b + zc * m.c;
    return e;
}

FlatBmParams uncenter(const FlatBmParams& m) {
    m.validate();
    Vector b = m.b - m.W * m.beta;
    return FlatBmParams(m.W, std::move(b), Vector::Zero(m.size()));
}

// ---------------------------------------------------------------------------

Vector state_from_index(std::uint64_t s, int n) {
    Vector x(n);
    for (int i = 0; i < n; ++i) x(i) = static_cast<double>((s >> i) & 1u);
    return x;
}

std::uint64_t index_from_state(const Eigen::Ref<const Vector>& x) {
    require(x.size() <= 63, "index_from_state: too many units");
    std::uint64_t s = 0;
    for (Index i = 0; i < x.size(); ++i) {
        if (x(i) != 0.0) s |= std::uint64_t{1} << i;
    }
    return s;
}

namespace {

ExactEnumeration normalize(std::vector<double> log_p, int n) {
    ExactEnumeration out;
    out.n_units = n;
    out.log_z = log_sum_exp(log_p);
    for (double& v : log_p) v = std::exp(v - out.log_z);
    out.probabilities = std::move(log_p);
    return out;
}

}  // namespace

ExactEnumeration exact_enumerate(const FlatBmParams& m) {
    m.validate();
    const int n = static_cast<int>(m.size());
    require(n <= kMaxEnumerationUnits, "exact_enumerate: more than 20 units");
    const std::uint64_t count = std::uint64_t{1} << n;
    std::vector<double> log_p(count);
    for (std::uint64_t s = 0; s < count; ++s) log_p[s] = -flat_energy_bits(m, s);
    return normalize(std::move(log_p), n);
}

ExactEnumeration exact_enumerate(const Dbm2Params& m) {
    m.validate();
    const int n = static_cast<int>(m.total_units());
    require(n <= kMaxEnumerationUnits, "exact_enumerate: more than 20 units");
    const int mx = static_cast<int>(m.mx());
    const int my = static_cast<int>(m.my());
    const std::uint64_t count = std::uint64_t{1} << n;
    std::vector<double> log_p(count);
    for (std::uint64_t s = 0; s < count; ++s) {
        const Vector st = state_from_index(s, n);
        log_p[s] = -energy_dbm(m, st.head(mx), st.segment(mx, my), st.tail(n - mx - my));
    }
    return normalize(std::move(log_p), n);
}

double exact_loglik(const FlatBmParams& m, const Matrix& data) {
    require(data.rows() > 0, "exact_loglik: empty data");
    require(data.cols() == m.size(), "exact_loglik: dimension mismatch");
    const ExactEnumeration en = exact_enumerate(m);
    double acc = 0.0;
    for (Index r = 0; r < data.rows(); ++r) {
        acc += -energy_flat(m, data.row(r).transpose()) - en.log_z;
    }
    return acc / static_cast<double>(data.rows());
}

FlatGradient exact_loglik_gradient(const FlatBmParams& m, const Matrix& data) {
    require(data.rows() > 0, "exact_loglik_gradient: empty data");
    require(data.cols() == m.size(), "exact_loglik_gradient: dimension mismatch");
    const ExactEnumeration en = exact_enumerate(m);
    const int n = static_cast<int>(m.size());

    Matrix model_xx = Matrix::Zero(n, n);
    Vector model_x = Vector::Zero(n);
    for (std::uint64_t s = 0; s < en.probabilities.size(); ++s) {
        const double p = en.probabilities[s];
        const Vector xi = state_from_index(s, n) - m.beta;
        model_xx.noalias() += p * xi * xi.transpose();
        model_x += p * xi;
    }

    const Matrix xi_data = data.rowwise() - m.beta.transpose();
    const double inv_n = 1.0 / static_cast<double>(data.rows());
    const Matrix data_xx = inv_n * (xi_data.transpose() * xi_data);
    const Vector data_x = inv_n * xi_data.colwise().sum().transpose();

    FlatGradient g;
    g.dW = data_xx - model_xx;
    g.dW = 0.5 * (g.dW + g.dW.transpose()).eval();
    g.dW.diagonal().setZero();
    g.db = data_x - model_x;
    return g;
}

double exact_log_psi(const Dbm2Params& m, const Vector& x) {
    m.validate();
    require(x.size() == m.mx(), "exact_log_psi: dimension mismatch");
    const int my = static_cast<int>(m.my());
    const int mz = static_cast<int>(m.mz());
    require(my + mz <= kMaxEnumerationUnits, "exact_log_psi: more than 20 hidden units");
    const std::uint64_t count = std::uint64_t{1} << (my + mz);
    std::vector<double> log_p(count);
    for (std::uint64_t s = 0; s < count; ++s) {
        const Vector h = state_from_index(s, my + mz);
        log_p[s] = -energy_dbm(m, x, h.head(my), h.tail(mz));
    }
    return log_sum_exp(log_p);
}

double exact_dbm_loglik(const Dbm2Params& m, const Matrix& data) {
    require(data.rows() > 0, "exact_dbm_loglik: empty data");
    const double log_z = exact_enumerate(m).log_z;
    double acc = 0.0;
    for (Index r = 0; r < data.rows(); ++r) acc += exact_log_psi(m, data.row(r).transpose());
    return acc / static_cast<double>(data.rows()) - log_z;
}

ConditionalMeans exact_conditional_means(const Dbm2Params& m, const Vector& x) {
    m.validate();
    require(x.size() == m.mx(), "exact_conditional_means: dimension mismatch");
    const int my = static_cast<int>(m.my());
    const int mz = static_cast<int>(m.mz());
    require(my + mz <= kMaxEnumerationUnits, "exact_conditional_means: more than 20 hidden units");
    const std::uint64_t count = std::uint64_t{1} << (my + mz);
    std::vector<double> log_p(count);
    for (std::uint64_t s = 0; s < count; ++s) {
        const Vector h = state_from_index(s, my + mz);
        log_p[s] = -energy_dbm(m, x, h.head(my), h.tail(mz));
    }
    const double lz = log_sum_exp(log_p);
    ConditionalMeans out{Vector::Zero(my), Vector::Zero(mz)};
    for (std::uint64_t s = 0; s < count; ++s) {
        const double p = std::exp(log_p[s] - lz);
        const Vector h = state_from_index(s, my + mz);
        out.y += p * h.head(my);
        out.z += p * h.tail(mz);
    }
    return out;
}

}  // namespace cdbm
