#include "prism/training.hpp"

#include <cmath>
#include <limits>

namespace prism {

double training_objective(const ModelParams& model, std::span<const Example> pool, double ridge,
                          const std::map<int, double>& upweights, GradientVector* grad) {
    if (pool.empty()) {
        throw ValidationError("training pool is empty");
    }
    const auto dim = static_cast<Eigen::Index>(model.size());
    GradientVector g = GradientVector::Zero(dim);
    const double inv_n = 1.0 / static_cast<double>(pool.size());
    double value = 0.0;
    for (const Example& z : pool) {
        double w = inv_n;
        if (auto it = upweights.find(z.id); it != upweights.end()) {
            w += it->second;
        }
        const double l = accumulate_loss_grad(model, z.query, z.response, w, g);
        value += w * l;
    }
    if (ridge != 0.0) {
        value += ridge * model.theta().squaredNorm();
        g += 2.0 * ridge * model.theta();
    }
    if (grad != nullptr) {
        *grad = std::move(g);
    }
    return value;
}

TrainResult train_to_local_optimum(const ModelSpec& spec, std::span<const Example> pool,
                                   const TrainOptions& options, const ModelParams* warm_start) {
    if (pool.empty()) {
        throw ValidationError("training pool is empty");
    }
    if (options.ridge < 0.0) {
        throw ValidationError("ridge must be non-negative");
    }
    const double tol = options.tol_grad.value_or(spec.kind == ModelKind::Tabular ? 1e-9 : 1e-6);

    Vector theta;
    if (warm_start != nullptr) {
        if (!(warm_start->spec() == spec)) {
            throw ValidationError("warm start spec does not match");
        }
        theta = warm_start->theta();
    } else if (spec.kind == ModelKind::Tabular) {
        theta = Vector::Zero(static_cast<Eigen::Index>(spec.parameter_count()));
    } else {
        theta = ModelParams::random(spec, options.init_seed, options.init_scale).theta();
    }

    auto eval = [&](const Vector& th, GradientVector* g) {
        return training_objective(ModelParams(spec, th), pool, options.ridge, options.upweights, g);
    };

    GradientVector grad;
    double f = eval(theta, &grad);
    double gnorm = grad.lpNorm<Eigen::Infinity>();
    TrainResult result{ModelParams(spec, theta), gnorm, f, 0, {f}};
    double step = 1.0;
    constexpr double armijo = 1e-4;
    constexpr double eps = std::numeric_limits<double>::epsilon();

    int it = 0;
    for (; it < options.max_iters && gnorm > tol; ++it) {
        const double gsq = grad.squaredNorm();
        bool accepted = false;
        for (int bt = 0; bt < 80; ++bt) {
            Vector cand = theta - step * grad;
            GradientVector cand_grad;
            const double fc = eval(cand, &cand_grad);
            const double cand_norm = cand_grad.lpNorm<Eigen::Infinity>();
            // Near the optimum the predicted decrease falls below the resolution
            // of f and the Armijo test passes on rounding noise alone. There a
            // step is accepted only if f stays flat and the gradient shrinks.
            const bool resolvable = armijo * step * gsq > 64.0 * eps * std::abs(f);
            const bool sufficient = resolvable && fc <= f - armijo * step * gsq;
            const bool flat_accept = cand_norm < gnorm && fc <= f + 64.0 * eps * std::abs(f);
            if (sufficient || flat_accept) {
                theta = std::move(cand);
                grad = std::move(cand_grad);
                f = fc;
                gnorm = cand_norm;
                result.objective_trace.push_back(f);
                accepted = true;
                step = std::min(step * 2.0, 1e6);
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            throw ConvergenceError("line search failed to make progress (grad norm " +
                                       std::to_string(gnorm) + ")",
                                   gnorm);
        }
    }
    if (gnorm > tol) {
        throw ConvergenceError("no convergence within " + std::to_string(options.max_iters) +
                                   " iterations (grad norm " + std::to_string(gnorm) + ")",
                               gnorm);
    }
    result.params = ModelParams(spec, std::move(theta));
    result.grad_norm = gnorm;
    result.objective = f;
    result.iterations = it;
    return result;
}

ModelParams fine_tune(const ModelParams& init, std::span<const Example> pool,
                      const FineTuneOptions& options) {
    if (options.steps < 0 || !(options.learning_rate > 0.0)) {
        throw ValidationError("fine-tune steps must be >= 0 and learning rate > 0");
    }
    if (pool.empty()) {
        return init;
    }
    const std::map<int, double> none;
    Vector theta = init.theta();
    GradientVector grad;
    for (int s = 0; s < options.steps; ++s) {
        training_objective(ModelParams(init.spec(), theta), pool, options.ridge, none, &grad);
        theta -= options.learning_rate * grad;
    }
    return ModelParams(init.spec(), std::move(theta));
}

}  // namespace prism
