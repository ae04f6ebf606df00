#include "prism/curvature.hpp"

#include <algorithm>
#include <cmath>

#include "prism/util.hpp"

namespace prism {

std::string to_string(CurvatureKind kind) {
    switch (kind) {
        case CurvatureKind::ExactDense:
            return "exact";
        case CurvatureKind::EmpiricalFisher:
            return "fisher";
        case CurvatureKind::Ekfac:
            return "ekfac";
    }
    return "unknown";
}

CurvatureKind curvature_kind_from_string(const std::string& s) {
    if (s == "exact") {
        return CurvatureKind::ExactDense;
    }
    if (s == "fisher") {
        return CurvatureKind::EmpiricalFisher;
    }
    if (s == "ekfac") {
        return CurvatureKind::Ekfac;
    }
    throw ValidationError("unknown curvature kind '" + s + "' (expected exact, fisher or ekfac)");
}

namespace {

CurvatureOperator::EigenSummary summarize(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    return {values.front(), median(values), values.back()};
}

double resolve_damping(Damping d, double mean_diag) {
    if (!(d.value > 0.0)) {
        throw ValidationError("damping must be positive");
    }
    return d.relative ? d.value * mean_diag : d.value;
}

}  // namespace

CurvatureOperator CurvatureOperator::from_dense(CurvatureKind kind, Matrix payload, double damping,
                                                std::string fitted_on) {
    if (kind == CurvatureKind::Ekfac) {
        throw ValidationError("from_dense cannot build an EK-FAC operator");
    }
    if (payload.rows() != payload.cols() || payload.rows() == 0) {
        throw ValidationError("curvature payload must be a non-empty square matrix");
    }
    if (!payload.allFinite()) {
        throw NumericalError("curvature payload contains non-finite entries");
    }
    if (damping < 0.0 || !std::isfinite(damping)) {
        throw ValidationError("damping must be finite and non-negative");
    }
    const double scale = std::max(1.0, payload.cwiseAbs().maxCoeff());
    if ((payload - payload.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
        throw NumericalError("curvature payload is not symmetric");
    }
    CurvatureOperator op;
    op.kind_ = kind;
    op.damping_ = damping;
    op.fitted_on_ = std::move(fitted_on);
    op.dimension_ = static_cast<std::size_t>(payload.rows());
    // Symmetrize exactly so the factorization sees a symmetric matrix.
    op.payload_ = 0.5 * (payload + payload.transpose());

    Eigen::SelfAdjointEigenSolver<Matrix> eig(op.payload_, Eigen::EigenvaluesOnly);
    const Vector ev = eig.eigenvalues();
    op.eigen_summary_ = summarize(std::vector<double>(ev.data(), ev.data() + ev.size()));
    if (!(op.eigen_summary_.min + damping > 0.0)) {
        throw NumericalError("curvature is not positive definite after damping (min eigenvalue " +
                             format_double(op.eigen_summary_.min) + ", damping " +
                             format_double(damping) + ")");
    }
    Matrix damped = op.payload_;
    damped.diagonal().array() += damping;
    op.factor_.compute(damped);
    if (op.factor_.info() != Eigen::Success) {
        throw NumericalError("Cholesky factorization of damped curvature failed");
    }
    return op;
}

CurvatureOperator CurvatureOperator::from_ekfac(std::vector<EkfacLayer> layers, std::size_t dimension,
                                                double damping, std::string fitted_on) {
    if (damping < 0.0 || !std::isfinite(damping)) {
        throw ValidationError("damping must be finite and non-negative");
    }
    CurvatureOperator op;
    op.kind_ = CurvatureKind::Ekfac;
    op.damping_ = damping;
    op.fitted_on_ = std::move(fitted_on);
    op.dimension_ = dimension;
    std::vector<double> all;
    for (const auto& l : layers) {
        if (l.eigenvalues.minCoeff() < 0.0) {
            throw NumericalError("negative corrected eigenvalue in layer " + l.block.name);
        }
        all.insert(all.end(), l.eigenvalues.data(), l.eigenvalues.data() + l.eigenvalues.size());
    }
    if (all.empty()) {
        throw ValidationError("EK-FAC operator has no layers");
    }
    op.eigen_summary_ = summarize(std::move(all));
    if (!(op.eigen_summary_.min + damping > 0.0)) {
        throw NumericalError("EK-FAC operator is singular; add damping");
    }
    op.layers_ = std::move(layers);
    return op;
}

const Matrix& CurvatureOperator::payload() const {
    if (!is_dense()) {
        throw UnsupportedError("EK-FAC operators have no dense payload; use materialize()");
    }
    return payload_;
}

Vector CurvatureOperator::inverse_apply(const Vector& v) const {
    if (static_cast<std::size_t>(v.size()) != dimension_) {
        throw ValidationError("inverse_apply: vector length " + std::to_string(v.size()) +
                              " does not match curvature dimension " + std::to_string(dimension_));
    }
    if (is_dense()) {
        return factor_.solve(v);
    }
    Vector out = Vector::Zero(v.size());
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    for (const auto& l : layers_) {
        Eigen::Map<const RowMajor> block(v.data() + l.block.offset, l.block.rows, l.block.cols);
        Matrix t = l.out_basis.transpose() * block * l.in_basis;
        t.array() /= l.eigenvalues.array() + damping_;
        Eigen::Map<RowMajor> dst(out.data() + l.block.offset, l.block.rows, l.block.cols);
        dst = l.out_basis * t * l.in_basis.transpose();
    }
    return out;
}

CurvatureOperator CurvatureOperator::scaled(double alpha) const {
    if (!(alpha > 0.0)) {
        throw ValidationError("curvature scale must be positive");
    }
    if (is_dense()) {
        return from_dense(kind_, alpha * payload_, alpha * damping_, fitted_on_);
    }
    auto layers = layers_;
    for (auto& l : layers) {
        l.eigenvalues *= alpha;
    }
    return from_ekfac(std::move(layers), dimension_, alpha * damping_, fitted_on_);
}

Matrix CurvatureOperator::materialize() const {
    if (is_dense()) {
        return payload_;
    }
    const auto n = static_cast<Eigen::Index>(dimension_);
    Matrix m = Matrix::Zero(n, n);
    for (const auto& l : layers_) {
        const int R = l.block.rows;
        const int C = l.block.cols;
        // Basis vector (i, j) is vec_rowmajor(out_i in_j^T) = kron(out_i, in_j).
        Matrix basis(R * C, R * C);
        for (int i = 0; i < R; ++i) {
            for (int j = 0; j < C; ++j) {
                for (int r = 0; r < R; ++r) {
                    for (int c = 0; c < C; ++c) {
                        basis(r * C + c, i * C + j) = l.out_basis(r, i) * l.in_basis(c, j);
                    }
                }
            }
        }
        Vector lam(R * C);
        for (int i = 0; i < R; ++i) {
            for (int j = 0; j < C; ++j) {
                lam[i * C + j] = l.eigenvalues(i, j);
            }
        }
        const auto off = static_cast<Eigen::Index>(l.block.offset);
        m.block(off, off, R * C, R * C) = basis * lam.asDiagonal() * basis.transpose();
    }
    return m;
}

CurvatureOperator fit_exact_hessian(const ModelParams& model, std::span<const Example> pool,
                                    Damping damping, double ridge) {
    if (model.spec().kind != ModelKind::Tabular) {
        throw UnsupportedError("exact Hessian assembly is only supported for Tabular models");
    }
    if (pool.empty()) {
        throw ValidationError("curvature pool is empty");
    }
    const int V = model.spec().vocab_size;
    // In the Tabular model every visit of row r sees the same softmax, so the
    // Hessian block of row r is count_r * (diag(p_r) - p_r p_r^T).
    std::vector<long> counts(static_cast<std::size_t>(V), 0);
    std::vector<Vector> probs(static_cast<std::size_t>(V));
    for (const Example& z : pool) {
        for (auto& visit : tabular_visits(model, z.query, z.response)) {
            const auto r = static_cast<std::size_t>(visit.context_row);
            ++counts[r];
            if (probs[r].size() == 0) {
                probs[r] = std::move(visit.probs);
            }
        }
    }
    const auto dim = static_cast<Eigen::Index>(model.size());
    Matrix h = Matrix::Zero(dim, dim);
    const double inv_n = 1.0 / static_cast<double>(pool.size());
    for (int r = 0; r < V; ++r) {
        const auto ru = static_cast<std::size_t>(r);
        if (counts[ru] == 0) {
            continue;
        }
        const Vector& p = probs[ru];
        Matrix block = -p * p.transpose();
        block.diagonal() += p;
        h.block(r * V, r * V, V, V) = (static_cast<double>(counts[ru]) * inv_n) * block;
    }
    h.diagonal().array() += 2.0 * ridge;
    if (!h.allFinite()) {
        throw NumericalError("exact Hessian has non-finite entries");
    }
    const double lambda = resolve_damping(damping, h.diagonal().mean());
    return CurvatureOperator::from_dense(CurvatureKind::ExactDense, std::move(h), lambda,
                                         fingerprint_pool(pool) + ":" + model.fingerprint());
}

Matrix empirical_fisher_matrix(const Matrix& grads) {
    return (grads.transpose() * grads) / static_cast<double>(grads.rows());
}

CurvatureOperator fit_empirical_fisher(const ModelParams& model, std::span<const Example> pool,
                                       Damping damping) {
    if (pool.empty()) {
        throw ValidationError("curvature pool is empty");
    }
    const auto dim = static_cast<Eigen::Index>(model.size());
    Matrix grads(static_cast<Eigen::Index>(pool.size()), dim);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        grads.row(static_cast<Eigen::Index>(i)) = sft_loss_and_grad(model, pool[i]).grad.transpose();
    }
    Matrix f = empirical_fisher_matrix(grads);
    if (!f.allFinite()) {
        throw NumericalError("empirical Fisher has non-finite entries");
    }
    const double lambda = resolve_damping(damping, f.diagonal().mean());
    return CurvatureOperator::from_dense(CurvatureKind::EmpiricalFisher, std::move(f), lambda,
                                         fingerprint_pool(pool) + ":" + model.fingerprint());
}

CurvatureOperator fit_ekfac_from_samples(const std::vector<LayerBlock>& blocks, std::size_t dimension,
                                         const std::vector<LayerSamples>& per_example,
                                         Damping damping, const std::string& fitted_on) {
    if (per_example.empty()) {
        throw ValidationError("EK-FAC needs a non-empty pool");
    }
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    std::vector<EkfacLayer> layers;
    double eig_sum = 0.0;
    std::size_t eig_count = 0;
    const double inv_n = 1.0 / static_cast<double>(per_example.size());
    for (std::size_t li = 0; li < blocks.size(); ++li) {
        const LayerBlock& b = blocks[li];
        Matrix a_cov = Matrix::Zero(b.cols, b.cols);
        Matrix s_cov = Matrix::Zero(b.rows, b.rows);
        std::size_t samples = 0;
        for (const auto& ex : per_example) {
            for (const auto& s : ex.at(li)) {
                a_cov.noalias() += s.input * s.input.transpose();
                s_cov.noalias() += s.output_grad * s.output_grad.transpose();
                ++samples;
            }
        }
        if (samples == 0 || a_cov.cwiseAbs().maxCoeff() == 0.0 ||
            s_cov.cwiseAbs().maxCoeff() == 0.0) {
            throw NumericalError("degenerate (rank 0) covariance in layer '" + b.name + "'");
        }
        a_cov /= static_cast<double>(samples);
        s_cov /= static_cast<double>(samples);

        EkfacLayer l;
        l.block = b;
        l.in_basis = Eigen::SelfAdjointEigenSolver<Matrix>(a_cov).eigenvectors();
        l.out_basis = Eigen::SelfAdjointEigenSolver<Matrix>(s_cov).eigenvectors();
        l.eigenvalues = Matrix::Zero(b.rows, b.cols);
        for (const auto& ex : per_example) {
            RowMajor grad = RowMajor::Zero(b.rows, b.cols);
            for (const auto& s : ex.at(li)) {
                grad.noalias() += s.output_grad * s.input.transpose();
            }
            const Matrix proj = l.out_basis.transpose() * grad * l.in_basis;
            l.eigenvalues += inv_n * proj.array().square().matrix();
        }
        eig_sum += l.eigenvalues.sum();
        eig_count += static_cast<std::size_t>(l.eigenvalues.size());
        layers.push_back(std::move(l));
    }
    const double lambda = resolve_damping(damping, eig_sum / static_cast<double>(eig_count));
    return CurvatureOperator::from_ekfac(std::move(layers), dimension, lambda, fitted_on);
}

CurvatureOperator fit_ekfac(const ModelParams& model, std::span<const Example> pool, Damping damping) {
    if (pool.empty()) {
        throw ValidationError("curvature pool is empty");
    }
    std::vector<LayerSamples> per_example;
    per_example.reserve(pool.size());
    for (const Example& z : pool) {
        per_example.push_back(capture_layer_samples(model, z));
    }
    return fit_ekfac_from_samples(layer_blocks(model.spec()), model.size(), per_example, damping,
                                  fingerprint_pool(pool) + ":" + model.fingerprint());
}

CurvatureOperator fit_curvature(CurvatureKind kind, const ModelParams& model,
                                std::span<const Example> pool, Damping damping, double ridge) {
    switch (kind) {
        case CurvatureKind::ExactDense:
            return fit_exact_hessian(model, pool, damping, ridge);
        case CurvatureKind::EmpiricalFisher:
            return fit_empirical_fisher(model, pool, damping);
        case CurvatureKind::Ekfac:
            return fit_ekfac(model, pool, damping);
    }
    throw ValidationError("unknown curvature kind");
}

nlohmann::json curvature_metadata(const CurvatureOperator& op, bool include_payload) {
    nlohmann::json j;
    j["kind"] = to_string(op.kind());
    j["damping"] = op.damping();
    j["fitted_on"] = op.fitted_on();
    j["dimension"] = op.dimension();
    const auto s = op.eigen_summary();
    j["eigenvalues"] = {{"min", s.min}, {"median", s.median}, {"max", s.max}};
    if (include_payload) {
        const Matrix m = op.materialize();
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                row.push_back(m(r, c));
            }
            rows.push_back(std::move(row));
        }
        j["payload"] = rows;
    }
    return j;
}

}  // namespace prism
