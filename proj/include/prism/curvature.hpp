#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/model.hpp"

namespace prism {

enum class CurvatureKind { ExactDense, EmpiricalFisher, Ekfac };

std::string to_string(CurvatureKind kind);
CurvatureKind curvature_kind_from_string(const std::string& s);

/// Damping added before inversion. Relative damping is scaled by the mean
/// diagonal of the payload (mean corrected eigenvalue for EK-FAC).
struct Damping {
    double value = 1e-3;
    bool relative = true;

    static Damping absolute(double v) { return Damping{v, false}; }
    static Damping relative_to_diagonal(double v) { return Damping{v, true}; }
};

/// One EK-FAC factored block: eigenbases of the output-gradient covariance
/// (rows x rows) and input covariance (cols x cols), plus corrected
/// eigenvalues laid out rows x cols.
struct EkfacLayer {
    LayerBlock block;
    Matrix out_basis;
    Matrix in_basis;
    Matrix eigenvalues;
};

class CurvatureOperator {
public:
    /// Dense operator over (payload + damping I). Checks symmetry and positive
    /// definiteness after damping. damping >= 0 (0 only for explicit overrides).
    static CurvatureOperator from_dense(CurvatureKind kind, Matrix payload, double damping,
                                        std::string fitted_on);
    static CurvatureOperator from_ekfac(std::vector<EkfacLayer> layers, std::size_t dimension,
                                        double damping, std::string fitted_on);

    CurvatureKind kind() const { return kind_; }
    double damping() const { return damping_; }
    const std::string& fitted_on() const { return fitted_on_; }
    std::size_t dimension() const { return dimension_; }
    bool is_dense() const { return kind_ != CurvatureKind::Ekfac; }

    /// Dense payload (without damping). Throws for EK-FAC.
    const Matrix& payload() const;
    const std::vector<EkfacLayer>& layers() const { return layers_; }

    /// (payload + damping I)^{-1} v, or the EK-FAC eigenbasis division.
    Vector inverse_apply(const Vector& v) const;

    /// Operator with payload and damping both multiplied by alpha > 0.
    CurvatureOperator scaled(double alpha) const;

    /// Dense matrix the operator represents, without damping (EK-FAC materialized).
    Matrix materialize() const;

    struct EigenSummary {
        double min = 0.0;
        double median = 0.0;
        double max = 0.0;
    };
    /// Payload eigenvalues (dense) or corrected eigenvalues (EK-FAC), before damping.
    EigenSummary eigen_summary() const { return eigen_summary_; }

private:
    CurvatureOperator() = default;

    CurvatureKind kind_ = CurvatureKind::ExactDense;
    double damping_ = 0.0;
    std::string fitted_on_;
    std::size_t dimension_ = 0;
    Matrix payload_;
    Eigen::LLT<Matrix> factor_;
    std::vector<EkfacLayer> layers_;
    EigenSummary eigen_summary_;
};

/// (1/n) sum_j hess l(z_j) + 2 ridge I, assembled from per-row softmax Hessians.
/// Tabular models only.
CurvatureOperator fit_exact_hessian(const ModelParams& model, std::span<const Example> pool,
                                    Damping damping, double ridge);

/// (1/n) sum_j g_j g_j^T over per-example SFT gradients.
CurvatureOperator fit_empirical_fisher(const ModelParams& model, std::span<const Example> pool,
                                       Damping damping);

/// EK-FAC over the model's layer blocks, fit on per-example SFT-loss gradients.
CurvatureOperator fit_ekfac(const ModelParams& model, std::span<const Example> pool, Damping damping);

/// EK-FAC from captured (input, output-gradient) samples; `per_example[n][layer]`.
CurvatureOperator fit_ekfac_from_samples(const std::vector<LayerBlock>& blocks, std::size_t dimension,
                                         const std::vector<LayerSamples>& per_example,
                                         Damping damping, const std::string& fitted_on);

/// Dense empirical Fisher from explicit per-example gradients (rows of `grads`).
Matrix empirical_fisher_matrix(const Matrix& grads);

CurvatureOperator fit_curvature(CurvatureKind kind, const ModelParams& model,
                                std::span<const Example> pool, Damping damping, double ridge);

/// {"kind", "damping", "fitted_on", "eigenvalues": {min, median, max}}; the
/// dense payload is included only when `include_payload` is set.
nlohmann::json curvature_metadata(const CurvatureOperator& op, bool include_payload = false);

}  // namespace prism
