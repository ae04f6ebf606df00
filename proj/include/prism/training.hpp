#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "prism/model.hpp"

namespace prism {

struct TrainOptions {
    double ridge = 0.0;
    /// Stop when ||grad L||_inf <= tol_grad. Defaults to 1e-9 (Tabular) / 1e-6 (Mlp).
    std::optional<double> tol_grad;
    int max_iters = 50000;
    /// Extra weight eps_i on the loss of example id i.
    std::map<int, double> upweights;
    /// Mlp initialization when no warm start is given (Tabular starts at zero).
    std::uint64_t init_seed = 0;
    double init_scale = 0.1;
};

struct TrainResult {
    ModelParams params;
    double grad_norm = 0.0;  // ||grad L||_inf at the returned point
    double objective = 0.0;
    int iterations = 0;
    /// Objective after every accepted step, starting with the initial value.
    std::vector<double> objective_trace;
};

/// L(theta) = (1/n) sum_j l(z_j) + ridge ||theta||^2 + sum_i eps_i l(z_i).
/// Fills `grad` when non-null. Accumulation runs in pool order.
double training_objective(const ModelParams& model, std::span<const Example> pool, double ridge,
                          const std::map<int, double>& upweights, GradientVector* grad);

/// Full-batch gradient descent with backtracking line search until the
/// stationarity tolerance is met. Throws ConvergenceError after max_iters.
TrainResult train_to_local_optimum(const ModelSpec& spec, std::span<const Example> pool,
                                   const TrainOptions& options,
                                   const ModelParams* warm_start = nullptr);

struct FineTuneOptions {
    int steps = 200;
    double learning_rate = 1.0;
    double ridge = 0.0;
};

/// Fixed-horizon full-batch gradient descent on the mean SFT loss, starting
/// from `init`. An empty pool returns `init` unchanged.
ModelParams fine_tune(const ModelParams& init, std::span<const Example> pool,
                      const FineTuneOptions& options);

}  // namespace prism
