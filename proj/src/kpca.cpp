#include "cdbm/kpca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cdbm/sampler.hpp"

namespace cdbm {

Matrix one_hot(const std::vector<int>& labels, int n_classes) {
    Matrix t = Matrix::Zero(static_cast<Index>(labels.size()), n_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= n_classes) throw std::invalid_argument("one_hot: label out of range");
        t(static_cast<Index>(i), labels[i]) = 1.0;
    }
    return t;
}

Matrix rbf_kernel_matrix(const Matrix& features, double sigma2) {
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw std::invalid_argument("rbf_kernel_matrix: sigma2 must be > 0");
    if (!features.allFinite()) throw std::invalid_argument("rbf_kernel_matrix: non-finite features");
    const Index n = features.rows();
    // Rows as columns so each pairwise difference reads contiguous memory.
    const Matrix ft = features.transpose();
    Matrix k(n, n);
    for (Index j = 0; j < n; ++j) {
        k(j, j) = 1.0;
        for (Index i = j + 1; i < n; ++i) {
            const double v = std::exp(-(ft.col(i) - ft.col(j)).squaredNorm() / (2.0 * sigma2));
            k(i, j) = v;
            k(j, i) = v;
        }
    }
    return k;
}

KernelEigensystem kernel_eigensystem(const Matrix& kernel) {
    if (kernel.rows() != kernel.cols()) throw std::invalid_argument("kernel_eigensystem: kernel must be square");
    Eigen::SelfAdjointEigenSolver<Matrix> es(kernel);
    if (es.info() != Eigen::Success) throw std::runtime_error("kernel_eigensystem: eigendecomposition failed");
    const Index n = kernel.rows();
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    const Vector& ev = es.eigenvalues();
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return ev(a) > ev(b); });
    KernelEigensystem out{Vector(n), Matrix(n, n)};
    for (Index i = 0; i < n; ++i) {
        out.values(i) = ev(order[static_cast<std::size_t>(i)]);
        out.vectors.col(i) = es.eigenvectors().col(order[static_cast<std::size_t>(i)]);
    }
    return out;
}

Vector residual_curve(const KernelEigensystem& eig, const Matrix& labels) {
    const Index n = eig.vectors.rows();
    if (labels.rows() != n) throw std::invalid_argument("residual_curve: label rows != kernel size");
    // Captured energy per component, then suffix sums give the residual of
    // the complement of the leading d components.
    const Vector captured = (eig.vectors.transpose() * labels).rowwise().squaredNorm();
    Vector e(n + 1);
    e(n) = 0.0;
    for (Index d = n - 1; d >= 0; --d) e(d) = e(d + 1) + captured(d);
    e(0) = labels.squaredNorm();
    for (Index d = 1; d <= n; ++d) e(d) = std::min(e(d), e(d - 1));
    return e;
}

double projection_residual(const Matrix& kernel, const Matrix& labels, Index d) {
    if (d < 0 || d > kernel.rows()) throw std::invalid_argument("projection_residual: need 0 <= d <= n");
    return residual_curve(kernel_eigensystem(kernel), labels)(d);
}

std::vector<Matrix> layer_features(const Dbm2Params& m, const Matrix& x, int gibbs_steps,
                                   std::uint64_t seed) {
    m.validate();
    if (x.cols() != m.mx()) throw std::invalid_argument("layer_features: dimension mismatch");
    Rng rng(seed);
    HiddenStates rep = mean_representation(m, x, gibbs_steps, rng);
    return {x, std::move(rep.y), std::move(rep.z)};
}

std::vector<std::vector<Matrix>> deep_kernels(const Dbm2Params& m, const Matrix& x,
                                              const std::vector<double>& sigma_grid, int gibbs_steps,
                                              std::uint64_t seed) {
    std::vector<std::vector<Matrix>> out;
    for (const Matrix& f : layer_features(m, x, gibbs_steps, seed)) {
        std::vector<Matrix> per_sigma;
        for (double s2 : sigma_grid) per_sigma.push_back(rbf_kernel_matrix(f, s2));
        out.push_back(std::move(per_sigma));
    }
    return out;
}

ResidualCurves residual_curves_from_features(const std::vector<Matrix>& features, const Matrix& labels,
                                             const std::vector<double>& sigma_grid) {
    if (sigma_grid.empty()) throw std::invalid_argument("residual_curves: empty sigma grid");
    const Index n = labels.rows();
    const auto layers = static_cast<Index>(features.size());
    const auto n_sigma = static_cast<Index>(sigma_grid.size());

    ResidualCurves rc;
    rc.sigma_grid = sigma_grid;
    rc.label_norm2 = labels.squaredNorm();
    rc.e_min.resize(layers, n + 1);
    rc.argmin_sigma.resize(layers, n + 1);
    rc.auc.resize(layers);
    for (Index l = 0; l < layers; ++l) {
        Matrix curves(n + 1, n_sigma);
        for (Index s = 0; s < n_sigma; ++s) {
            const Matrix k = rbf_kernel_matrix(features[static_cast<std::size_t>(l)], sigma_grid[static_cast<std::size_t>(s)]);
            curves.col(s) = residual_curve(kernel_eigensystem(k), labels);
        }
        for (Index d = 0; d <= n; ++d) {
            Index best = 0;
            rc.e_min(l, d) = curves.row(d).minCoeff(&best);
            rc.argmin_sigma(l, d) = static_cast<int>(best);
        }
        rc.auc(l) = rc.e_min.row(l).tail(n).sum() / (static_cast<double>(n) * rc.label_norm2);
        rc.residual.push_back(std::move(curves));
    }
    return rc;
}

ResidualCurves residual_curves(const Dbm2Params& m, const Matrix& x, const Matrix& labels,
                               const std::vector<double>& sigma_grid, int gibbs_steps, std::uint64_t seed) {
    if (labels.rows() != x.rows()) throw std::invalid_argument("residual_curves: labels and inputs differ in rows");
    return residual_curves_from_features(layer_features(m, x, gibbs_steps, seed), labels, sigma_grid);
}

Matrix kpca_projection_2d(const Matrix& kernel) {
    const KernelEigensystem eig = kernel_eigensystem(kernel);
    const Index k = std::min<Index>(2, eig.values.size());
    Matrix out = Matrix::Zero(kernel.rows(), 2);
    for (Index c = 0; c < k; ++c) out.col(c) = std::sqrt(std::max(0.0, eig.values(c))) * eig.vectors.col(c);
    return out;
}

}  // namespace cdbm
