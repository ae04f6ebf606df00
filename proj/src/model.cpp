#include "prism/model.hpp"

#include <algorithm>
#include <cmath>

#include "prism/util.hpp"

namespace prism {

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajorMatrix>;
using MutMap = Eigen::Map<RowMajorMatrix>;

int tabular_context(const ModelSpec& spec, const TokenSequence& u, const TokenSequence& v,
                    std::size_t t) {
    if (t > 0) {
        return v[t - 1];
    }
    return u.empty() ? spec.bos() : u.back();
}

/// Last `window` tokens of (u ++ v[0..t)), left-padded with BOS.
void mlp_window(const ModelSpec& spec, const TokenSequence& u, const TokenSequence& v, std::size_t t,
                std::vector<int>& out) {
    const int w = spec.window;
    out.assign(static_cast<std::size_t>(w), spec.bos());
    const std::size_t total = u.size() + t;
    for (int k = 0; k < w; ++k) {
        // slot w-1 is the most recent token
        const long pos = static_cast<long>(total) - (w - k);
        if (pos < 0) {
            continue;
        }
        const auto p = static_cast<std::size_t>(pos);
        out[static_cast<std::size_t>(k)] = p < u.size() ? u[p] : v[p - u.size()];
    }
}

/// In-place log-softmax; returns nothing, `logits` becomes log-probabilities.
void log_softmax_inplace(Vector& logits) {
    const double mx = logits.maxCoeff();
    double s = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        s += std::exp(logits[i] - mx);
    }
    const double lse = mx + std::log(s);
    logits.array() -= lse;
}

struct MlpLayout {
    int V, w, d, h;
    std::size_t e_off, l1_off, l2_off;
    explicit MlpLayout(const ModelSpec& s)
        : V(s.vocab_size), w(s.window), d(s.embed_dim), h(s.hidden_dim) {
        e_off = 0;
        l1_off = static_cast<std::size_t>(d) * V;
        l2_off = l1_off + static_cast<std::size_t>(h) * (w * d + 1);
    }
};

/// Forward activations of the Mlp at one position.
struct MlpForward {
    std::vector<int> window;
    Vector x;       // w*d concatenated embeddings
    Vector hidden;  // h
    Vector logp;    // V log-probabilities
};

void mlp_forward(const ModelParams& model, const MlpLayout& L, const std::vector<int>& window,
                 MlpForward& f) {
    const double* th = model.theta().data();
    ConstMap E(th + L.e_off, L.d, L.V);
    ConstMap L1(th + L.l1_off, L.h, L.w * L.d + 1);
    ConstMap L2(th + L.l2_off, L.V, L.h + 1);
    f.window = window;
    f.x.resize(L.w * L.d);
    for (int k = 0; k < L.w; ++k) {
        f.x.segment(k * L.d, L.d) = E.col(window[static_cast<std::size_t>(k)]);
    }
    Vector pre = L1.leftCols(L.w * L.d) * f.x + L1.col(L.w * L.d);
    f.hidden = pre.array().tanh();
    f.logp = L2.leftCols(L.h) * f.hidden + L2.col(L.h);
    log_softmax_inplace(f.logp);
}

/// Visits every response position with its log-probabilities. The visitor gets
/// (t, context info, log-probs). Shared by likelihood and gradient routines.
template <class Visitor>
void for_each_position(const ModelParams& model, const TokenSequence& u, const TokenSequence& v,
                       Visitor&& visit) {
    const ModelSpec& spec = model.spec();
    if (v.empty()) {
        throw ValidationError("response must contain at least one token");
    }
    check_tokens(spec, u);
    check_tokens(spec, v);
    if (spec.kind == ModelKind::Tabular) {
        const int V = spec.vocab_size;
        Vector logp(V);
        for (std::size_t t = 0; t < v.size(); ++t) {
            const int row = tabular_context(spec, u, v, t);
            logp = model.theta().segment(static_cast<Eigen::Index>(row) * V, V);
            log_softmax_inplace(logp);
            visit(t, row, static_cast<const MlpForward*>(nullptr), logp);
        }
    } else {
        const MlpLayout L(spec);
        MlpForward f;
        std::vector<int> window;
        for (std::size_t t = 0; t < v.size(); ++t) {
            mlp_window(spec, u, v, t, window);
            mlp_forward(model, L, window, f);
            visit(t, -1, &f, f.logp);
        }
    }
}

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::Tabular ? "tabular" : "mlp"; }

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "tabular") {
        return ModelKind::Tabular;
    }
    if (s == "mlp") {
        return ModelKind::Mlp;
    }
    throw ValidationError("unknown model kind '" + s + "' (expected tabular or mlp)");
}

ModelSpec ModelSpec::tabular(int vocab_size) {
    ModelSpec s;
    s.kind = ModelKind::Tabular;
    s.vocab_size = vocab_size;
    s.validate();
    return s;
}

ModelSpec ModelSpec::mlp(int vocab_size, int window, int embed_dim, int hidden_dim) {
    ModelSpec s;
    s.kind = ModelKind::Mlp;
    s.vocab_size = vocab_size;
    s.window = window;
    s.embed_dim = embed_dim;
    s.hidden_dim = hidden_dim;
    s.validate();
    return s;
}

void ModelSpec::validate() const {
    if (vocab_size < 2) {
        throw ValidationError("vocab_size must be at least 2");
    }
    if (kind == ModelKind::Mlp && (window < 1 || embed_dim < 1 || hidden_dim < 1)) {
        throw ValidationError("Mlp window, embed_dim and hidden_dim must be positive");
    }
}

std::size_t ModelSpec::parameter_count() const {
    const auto V = static_cast<std::size_t>(vocab_size);
    if (kind == ModelKind::Tabular) {
        return V * V;
    }
    const auto w = static_cast<std::size_t>(window);
    const auto d = static_cast<std::size_t>(embed_dim);
    const auto h = static_cast<std::size_t>(hidden_dim);
    return V * d + (w * d) * h + h + h * V + V;
}

std::vector<LayerBlock> layer_blocks(const ModelSpec& spec) {
    if (spec.kind == ModelKind::Tabular) {
        return {LayerBlock{"table", 0, spec.vocab_size, spec.vocab_size}};
    }
    const MlpLayout L(spec);
    return {
        LayerBlock{"embedding", L.e_off, L.d, L.V},
        LayerBlock{"hidden", L.l1_off, L.h, L.w * L.d + 1},
        LayerBlock{"output", L.l2_off, L.V, L.h + 1},
    };
}

ModelParams::ModelParams(ModelSpec spec, Vector theta) : spec_(spec), theta_(std::move(theta)) {
    spec_.validate();
    if (static_cast<std::size_t>(theta_.size()) != spec_.parameter_count()) {
        throw ValidationError("theta length " + std::to_string(theta_.size()) +
                              " does not match parameter count " +
                              std::to_string(spec_.parameter_count()));
    }
    if (!theta_.allFinite()) {
        throw NumericalError("theta contains non-finite entries");
    }
}

ModelParams ModelParams::zeros(const ModelSpec& spec) {
    return ModelParams(spec, Vector::Zero(static_cast<Eigen::Index>(spec.parameter_count())));
}

ModelParams ModelParams::random(const ModelSpec& spec, std::uint64_t seed, double scale) {
    Rng rng(seed);
    Vector theta(static_cast<Eigen::Index>(spec.parameter_count()));
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        theta[i] = scale * rng.normal();
    }
    return ModelParams(spec, std::move(theta));
}

std::string ModelParams::fingerprint() const {
    Fingerprint f;
    f.add(static_cast<std::int64_t>(spec_.kind))
        .add(static_cast<std::int64_t>(spec_.vocab_size))
        .add(static_cast<std::int64_t>(spec_.window))
        .add(static_cast<std::int64_t>(spec_.embed_dim))
        .add(static_cast<std::int64_t>(spec_.hidden_dim))
        .add(theta_);
    return f.hex();
}

void check_tokens(const ModelSpec& spec, const TokenSequence& s) {
    for (int t : s) {
        if (t < 0 || t >= spec.vocab_size) {
            throw InvalidTokenError(t, spec.vocab_size);
        }
    }
}

double seq_log_prob(const ModelParams& model, const TokenSequence& u, const TokenSequence& v) {
    double total = 0.0;
    for_each_position(model, u, v, [&](std::size_t t, int, const MlpForward*, const Vector& logp) {
        total += logp[v[t]];
    });
    return total;
}

double normalized_log_prob(const ModelParams& model, const TokenSequence& u,
                           const TokenSequence& v) {
    return seq_log_prob(model, u, v) / static_cast<double>(v.size());
}

double accumulate_loss_grad(const ModelParams& model, const TokenSequence& u, const TokenSequence& v,
                            double weight, GradientVector& grad) {
    const ModelSpec& spec = model.spec();
    if (static_cast<std::size_t>(grad.size()) != spec.parameter_count()) {
        throw ValidationError("gradient buffer has wrong length");
    }
    const int V = spec.vocab_size;
    double loss = 0.0;
    if (spec.kind == ModelKind::Tabular) {
        for_each_position(model, u, v, [&](std::size_t t, int row, const MlpForward*, const Vector& logp) {
            loss -= logp[v[t]];
            auto g = grad.segment(static_cast<Eigen::Index>(row) * V, V);
            g.array() += weight * logp.array().exp();
            g[v[t]] -= weight;
        });
        return loss;
    }

    const MlpLayout L(spec);
    const double* th = model.theta().data();
    ConstMap L1(th + L.l1_off, L.h, L.w * L.d + 1);
    ConstMap L2(th + L.l2_off, L.V, L.h + 1);
    MutMap gE(grad.data() + L.e_off, L.d, L.V);
    MutMap gL1(grad.data() + L.l1_off, L.h, L.w * L.d + 1);
    MutMap gL2(grad.data() + L.l2_off, L.V, L.h + 1);
    for_each_position(model, u, v, [&](std::size_t t, int, const MlpForward* f, const Vector& logp) {
        loss -= logp[v[t]];
        Vector dlogits = logp.array().exp();
        dlogits[v[t]] -= 1.0;
        dlogits *= weight;
        gL2.leftCols(L.h).noalias() += dlogits * f->hidden.transpose();
        gL2.col(L.h) += dlogits;
        Vector dpre = (L2.leftCols(L.h).transpose() * dlogits).array() *
                      (1.0 - f->hidden.array().square());
        gL1.leftCols(L.w * L.d).noalias() += dpre * f->x.transpose();
        gL1.col(L.w * L.d) += dpre;
        Vector dx = L1.leftCols(L.w * L.d).transpose() * dpre;
        for (int k = 0; k < L.w; ++k) {
            gE.col(f->window[static_cast<std::size_t>(k)]) += dx.segment(k * L.d, L.d);
        }
    });
    return loss;
}

LossGrad sft_loss_and_grad(const ModelParams& model, const Example& z) {
    LossGrad out;
    out.grad = GradientVector::Zero(static_cast<Eigen::Index>(model.size()));
    out.loss = accumulate_loss_grad(model, z.query, z.response, 1.0, out.grad);
    return out;
}

LossGrad token_avg_loss_and_grad(const ModelParams& model, const TokenSequence& u,
                                 const TokenSequence& v) {
    LossGrad out;
    out.grad = GradientVector::Zero(static_cast<Eigen::Index>(model.size()));
    out.loss = accumulate_loss_grad(model, u, v, 1.0, out.grad);
    const double len = static_cast<double>(v.size());
    out.loss /= len;
    out.grad /= len;
    return out;
}

Vector next_token_probs(const ModelParams& model, const TokenSequence& u,
                        const TokenSequence& prefix) {
    // Append a placeholder token so the position walker evaluates the next slot.
    TokenSequence v = prefix;
    v.push_back(0);
    Vector probs;
    for_each_position(model, u, v, [&](std::size_t t, int, const MlpForward*, const Vector& logp) {
        if (t + 1 == v.size()) {
            probs = logp.array().exp();
        }
    });
    return probs;
}

TokenSequence greedy_decode(const ModelParams& model, const TokenSequence& query, int length) {
    if (length < 1) {
        throw ValidationError("decode length must be positive");
    }
    TokenSequence out;
    out.reserve(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i) {
        const Vector p = next_token_probs(model, query, out);
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < p.size(); ++k) {
            if (p[k] > p[best]) {
                best = k;
            }
        }
        out.push_back(static_cast<int>(best));
    }
    return out;
}

std::vector<PositionVisit> tabular_visits(const ModelParams& model, const TokenSequence& u,
                                          const TokenSequence& v) {
    if (model.spec().kind != ModelKind::Tabular) {
        throw UnsupportedError("tabular_visits requires a Tabular model");
    }
    std::vector<PositionVisit> out;
    for_each_position(model, u, v, [&](std::size_t t, int row, const MlpForward*, const Vector& logp) {
        out.push_back(PositionVisit{row, v[t], logp.array().exp()});
    });
    return out;
}

LayerSamples capture_layer_samples(const ModelParams& model, const Example& z) {
    const ModelSpec& spec = model.spec();
    const int V = spec.vocab_size;
    const auto& u = z.query;
    const auto& v = z.response;
    if (spec.kind == ModelKind::Tabular) {
        LayerSamples out(1);
        for_each_position(model, u, v, [&](std::size_t t, int row, const MlpForward*, const Vector& logp) {
            KroneckerSample s;
            s.input = Vector::Zero(V);
            s.input[row] = 1.0;
            s.output_grad = logp.array().exp();
            s.output_grad[v[t]] -= 1.0;
            out[0].push_back(std::move(s));
        });
        return out;
    }

    const MlpLayout L(spec);
    const double* th = model.theta().data();
    ConstMap L1(th + L.l1_off, L.h, L.w * L.d + 1);
    ConstMap L2(th + L.l2_off, L.V, L.h + 1);
    LayerSamples out(3);
    for_each_position(model, u, v, [&](std::size_t t, int, const MlpForward* f, const Vector& logp) {
        Vector dlogits = logp.array().exp();
        dlogits[v[t]] -= 1.0;
        Vector hid1(L.h + 1);
        hid1 << f->hidden, 1.0;
        Vector dpre = (L2.leftCols(L.h).transpose() * dlogits).array() *
                      (1.0 - f->hidden.array().square());
        Vector x1(L.w * L.d + 1);
        x1 << f->x, 1.0;
        Vector dx = L1.leftCols(L.w * L.d).transpose() * dpre;
        for (int k = 0; k < L.w; ++k) {
            Vector onehot = Vector::Zero(V);
            onehot[f->window[static_cast<std::size_t>(k)]] = 1.0;
            out[0].push_back(KroneckerSample{std::move(onehot), dx.segment(k * L.d, L.d)});
        }
        out[1].push_back(KroneckerSample{std::move(x1), dpre});
        out[2].push_back(KroneckerSample{std::move(hid1), dlogits});
    });
    return out;
}

}  // namespace prism
