#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "nol/attacks.hpp"
#include "nol/model.hpp"
#include "nol/tensor.hpp"

namespace nol {

// Matrices here are dense row-major, one sample per row.
struct Matrix {
    int rows = 0, cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(size_t(r) * size_t(c), 0.0) {}
    double& at(int r, int c) { return data[size_t(r) * cols + size_t(c)]; }
    double at(int r, int c) const { return data[size_t(r) * cols + size_t(c)]; }
    static Matrix from_tensor(const Tensor& t);  // t must be [n,d]
};

// Principal-component model of a feature matrix: column mean, right
// singular vectors (columns, descending singular value), singular values.
struct PcaModel {
    std::vector<double> mean;  // length d
    Matrix components;         // d x m, column j = PC_j
    std::vector<double> singular_values;  // length m, non-increasing

    int dim() const { return components.rows; }
    int num_components() const { return components.cols; }
};

// Center the columns, thin-SVD the centered matrix. Needs >= 2 rows.
PcaModel fit_pca(const Matrix& features);

// (features - mean) * V
Matrix project(const PcaModel& pca, const Matrix& features);

// Mean per-sample cosine distance between clean and adversarial
// projections truncated to the first k PCs, for each k in ks (1-based
// count of leading PCs). Zero-norm truncations: 0 if both zero, else 1.
std::vector<double> cosine_distance_curve(const PcaModel& pca, const Matrix& clean,
                                          const Matrix& adv, const std::vector<int>& ks);

// Var_k = 100 * sum_{i<=k} s_i^2 / sum_i s_i^2, ks are 0-based PC indices.
std::vector<double> variance_curve(const PcaModel& pca, const std::vector<int>& ks);

// Sylvester Hadamard matrix of order k (power of two), entries +-1.
Matrix hadamard(int order);

// Expand a length-k Hadamard row to dimension d by repeating each entry
// over a contiguous block of ceil(d/k) components (trailing remainder
// truncated).
std::vector<double> expand_hadamard_row(const Matrix& h, int row, int dim);

struct GaasResult {
    std::map<int, double> success_probability;  // order -> fraction of points
};

// For each point and order k: r_i = eps * (expanded H_k row i) .* sign(grad);
// the point succeeds iff all k perturbed points x + r_i (clamped to [0,1])
// are misclassified. `against_true_label` measures misclassification against
// the dataset label; otherwise against the model's clean prediction.
GaasResult gaas_estimate(const GradSource& src, const Dataset& points, double eps,
                         const std::vector<int>& orders, bool against_true_label = true);

// grid[i][j] = loss_target(x + e1[i]*g_bb + e2[j]*g_wb, y) with both signed
// gradients computed once at the unperturbed x. No clamping (the offsets
// are probes, not attacks).
Matrix loss_surface_grid(const GradSource& target, const GradSource& source, const Tensor& x,
                         const std::vector<int>& y, const std::vector<double>& eps1,
                         const std::vector<double>& eps2);

std::vector<double> linspace(double lo, double hi, int count);

// The serializable experiment output behind the diagnostic plots.
struct AnalysisReport {
    std::vector<int> variance_ks;
    std::vector<double> variance;  // Var_k
    std::vector<int> distance_ks;
    std::vector<double> cosine_distance;  // D^PC
    std::vector<int> gaas_orders;
    std::vector<double> gaas_success;
    std::vector<double> grid_eps1, grid_eps2;
    Matrix loss_grid;
};

}  // namespace nol
