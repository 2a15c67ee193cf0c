#pragma once

#include <cstdint>
#include <vector>

#include "cdbm/model.hpp"

namespace cdbm {

/// One-hot n x 10 label matrix. Throws for labels outside 0..9.
Matrix one_hot(const std::vector<int>& labels, int n_classes = 10);

/// K_ij = exp(-|f_i - f_j|^2 / (2 sigma2)).
Matrix rbf_kernel_matrix(const Matrix& features, double sigma2);

/// Eigenpairs sorted by decreasing eigenvalue; ties keep ascending index order.
struct KernelEigensystem {
    Vector values;
    Matrix vectors;
};

KernelEigensystem kernel_eigensystem(const Matrix& kernel);

/// |T - U_d U_d^T T|_F^2 for every d = 0..n (n+1 entries). Entry 0 is |T|_F^2.
Vector residual_curve(const KernelEigensystem& eig, const Matrix& labels);

/// Single-d convenience wrapper around residual_curve.
double projection_residual(const Matrix& kernel, const Matrix& labels, Index d);

inline const std::vector<double> kDefaultSigmaGrid{1.0, 10.0, 100.0, 1000.0, 10000.0};

/// Layer 0: raw input. Layers 1 and 2: mean_representation features.
std::vector<Matrix> layer_features(const Dbm2Params& m, const Matrix& x, int gibbs_steps,
                                   std::uint64_t seed);

/// kernels[l][s] for layer l and sigma_grid[s].
std::vector<std::vector<Matrix>> deep_kernels(const Dbm2Params& m, const Matrix& x,
                                              const std::vector<double>& sigma_grid,
                                              int gibbs_steps = 100, std::uint64_t seed = 1);

struct ResidualCurves {
    std::vector<double> sigma_grid;
    /// residual[l] is (n+1) x |sigma_grid|: entry (d, s) = e(l, d, sigma_s).
    std::vector<Matrix> residual;
    /// e_min(l, d) = min_s residual[l](d, s); layers x (n+1).
    Matrix e_min;
    /// Index into sigma_grid of the minimizer for each (l, d).
    Eigen::MatrixXi argmin_sigma;
    /// (1/n) sum_{d=1..n} e_min(l, d) / |T|_F^2.
    Vector auc;
    double label_norm2 = 0.0;
};

ResidualCurves residual_curves_from_features(const std::vector<Matrix>& features, const Matrix& labels,
                                             const std::vector<double>& sigma_grid);

ResidualCurves residual_curves(const Dbm2Params& m, const Matrix& x, const Matrix& labels,
                               const std::vector<double>& sigma_grid = kDefaultSigmaGrid,
                               int gibbs_steps = 100, std::uint64_t seed = 1);

/// Two leading kernel principal components, sqrt(lambda_k) u_k, per sample.
Matrix kpca_projection_2d(const Matrix& kernel);

}  // namespace cdbm
