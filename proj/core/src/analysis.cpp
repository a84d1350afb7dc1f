#include "nol/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nol {

Matrix Matrix::from_tensor(const Tensor& t) {
    if (t.shape().size() != 2)
        throw std::invalid_argument("Matrix::from_tensor: expected [n,d], got " +
                                    shape_str(t.shape()));
    Matrix m(t.shape()[0], t.shape()[1]);
    m.data = t.data();
    return m;
}

PcaModel fit_pca(const Matrix& features) {
    const int n = features.rows, d = features.cols;
    if (n < 2) throw std::invalid_argument("fit_pca: need at least 2 samples");
    Eigen::MatrixXd f(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) f(i, j) = features.at(i, j);

    PcaModel pca;
    pca.mean.resize(size_t(d));
    for (int j = 0; j < d; ++j) {
        pca.mean[size_t(j)] = f.col(j).mean();
        f.col(j).array() -= pca.mean[size_t(j)];
    }

    Eigen::BDCSVD<Eigen::MatrixXd> svd(f, Eigen::ComputeThinV);
    const auto& v = svd.matrixV();
    const auto& s = svd.singularValues();
    const int m = int(s.size());
    pca.components = Matrix(d, m);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < m; ++j) pca.components.at(i, j) = v(i, j);
    pca.singular_values.resize(size_t(m));
    for (int j = 0; j < m; ++j) pca.singular_values[size_t(j)] = s(j);
    return pca;
}

Matrix project(const PcaModel& pca, const Matrix& features) {
    const int d = pca.dim(), m = pca.num_components();
    if (features.cols != d)
        throw std::invalid_argument("project: feature width " + std::to_string(features.cols) +
                                    " does not match pca dim " + std::to_string(d));
    Matrix out(features.rows, m);
    for (int i = 0; i < features.rows; ++i)
        for (int k = 0; k < d; ++k) {
            const double v = features.at(i, k) - pca.mean[size_t(k)];
            if (v == 0.0) continue;
            const double* vrow = pca.components.data.data() + size_t(k) * m;
            double* orow = out.data.data() + size_t(i) * m;
            for (int j = 0; j < m; ++j) orow[j] += v * vrow[j];
        }
    return out;
}

std::vector<double> cosine_distance_curve(const PcaModel& pca, const Matrix& clean,
                                          const Matrix& adv, const std::vector<int>& ks) {
    if (clean.rows != adv.rows || clean.cols != adv.cols)
        throw std::invalid_argument("cosine_distance_curve: clean/adv must be row-aligned");
    Matrix pc = project(pca, clean);
    Matrix pa = project(pca, adv);
    const int m = pca.num_components();
    std::vector<double> out;
    out.reserve(ks.size());
    for (int k : ks) {
        if (k < 1 || k > m)
            throw std::invalid_argument("cosine_distance_curve: k " + std::to_string(k) +
                                        " out of range [1," + std::to_string(m) + "]");
        double acc = 0.0;
        for (int i = 0; i < pc.rows; ++i) {
            double dot = 0.0, nc = 0.0, na = 0.0;
            for (int j = 0; j < k; ++j) {
                const double a = pc.at(i, j), b = pa.at(i, j);
                dot += a * b;
                nc += a * a;
                na += b * b;
            }
            if (nc == 0.0 || na == 0.0)
                acc += (nc == 0.0 && na == 0.0) ? 0.0 : 1.0;
            else
                acc += 1.0 - dot / (std::sqrt(nc) * std::sqrt(na));
        }
        out.push_back(acc / pc.rows);
    }
    return out;
}

std::vector<double> variance_curve(const PcaModel& pca, const std::vector<int>& ks) {
    // one accumulation pass; the total is the final partial sum, so
    // Var_{M-1} is exactly 100 whatever the summation order
    std::vector<double> cum(pca.singular_values.size());
    double run = 0.0;
    for (size_t i = 0; i < cum.size(); ++i) {
        run += pca.singular_values[i] * pca.singular_values[i];
        cum[i] = run;
    }
    const double total = cum.empty() ? 0.0 : cum.back();
    if (total == 0.0)
        throw std::invalid_argument("variance_curve: all singular values are zero");
    for (double& c : cum) c = 100.0 * (c / total);
    std::vector<double> out;
    out.reserve(ks.size());
    for (int k : ks) {
        if (k < 0 || k >= int(cum.size()))
            throw std::invalid_argument("variance_curve: k " + std::to_string(k) +
                                        " out of range [0," + std::to_string(cum.size() - 1) + "]");
        out.push_back(cum[size_t(k)]);
    }
    return out;
}

Matrix hadamard(int order) {
    if (order < 1 || (order & (order - 1)) != 0)
        throw std::invalid_argument("hadamard: order must be a power of two, got " +
                                    std::to_string(order));
    Matrix h(order, order);
    h.at(0, 0) = 1.0;
    for (int size = 1; size < order; size *= 2)
        for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j) {
                const double v = h.at(i, j);
                h.at(i, j + size) = v;
                h.at(i + size, j) = v;
                h.at(i + size, j + size) = -v;
            }
    return h;
}

std::vector<double> expand_hadamard_row(const Matrix& h, int row, int dim) {
    const int k = h.cols;
    if (dim < k)
        throw std::invalid_argument("expand_hadamard_row: order " + std::to_string(k) +
                                    " exceeds dimension " + std::to_string(dim));
    const int block = (dim + k - 1) / k;
    std::vector<double> out(size_t(dim), 0.0);
    for (int j = 0; j < dim; ++j) out[size_t(j)] = h.at(row, std::min(j / block, k - 1));
    return out;
}

GaasResult gaas_estimate(const GradSource& src, const Dataset& points, double eps,
                         const std::vector<int>& orders, bool against_true_label) {
    const int dim = numel(points.sample_shape());
    for (int k : orders)
        if (k > dim)
            throw std::invalid_argument("gaas_estimate: order " + std::to_string(k) +
                                        " exceeds input dimensionality " + std::to_string(dim));

    GaasResult res;
    std::map<int, int> successes;
    for (int k : orders) successes[k] = 0;

    for (int p = 0; p < points.size(); ++p) {
        Batch b = gather(points, {p});
        const int ref = against_true_label ? b.y[0] : src.predict(b.x)[0];
        Tensor sg = src.signed_input_grad(b.x, {b.y[0]});
        for (int k : orders) {
            Matrix h = hadamard(k);
            bool all_misclassified = true;
            for (int r = 0; r < k && all_misclassified; ++r) {
                const auto dir = expand_hadamard_row(h, r, dim);
                Tensor probe = b.x.clone();
                for (int j = 0; j < dim; ++j) {
                    double v = probe.data()[size_t(j)] + eps * dir[size_t(j)] * sg.data()[size_t(j)];
                    probe.data()[size_t(j)] = std::min(1.0, std::max(0.0, v));
                }
                all_misclassified = src.predict(probe)[0] != ref;
            }
            if (all_misclassified) successes[k] += 1;
        }
    }
    for (int k : orders)
        res.success_probability[k] = double(successes[k]) / points.size();
    return res;
}

Matrix loss_surface_grid(const GradSource& target, const GradSource& source, const Tensor& x,
                         const std::vector<int>& y, const std::vector<double>& eps1,
                         const std::vector<double>& eps2) {
    Tensor g_bb = source.signed_input_grad(x, y);
    Tensor g_wb = target.signed_input_grad(x, y);
    Matrix grid(int(eps1.size()), int(eps2.size()));
    for (size_t i = 0; i < eps1.size(); ++i)
        for (size_t j = 0; j < eps2.size(); ++j) {
            Tensor probe = x.clone();
            for (int t = 0; t < probe.size(); ++t)
                probe.data()[size_t(t)] +=
                    eps1[i] * g_bb.data()[size_t(t)] + eps2[j] * g_wb.data()[size_t(t)];
            grid.at(int(i), int(j)) = target.loss(probe, y);
        }
    return grid;
}

std::vector<double> linspace(double lo, double hi, int count) {
    if (count < 1) throw std::invalid_argument("linspace: count must be >= 1");
    std::vector<double> out(size_t(count), 0.0);
    if (count == 1) {
        out[0] = lo;
        return out;
    }
    for (int i = 0; i < count; ++i) out[size_t(i)] = lo + (hi - lo) * i / (count - 1);
    return out;
}

}  // namespace nol
