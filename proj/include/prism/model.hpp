#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "prism/types.hpp"

namespace prism {

enum class ModelKind { Tabular, Mlp };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

/// Architecture descriptor for the two tiny sequence models.
///
/// Tabular: order-1 conditional categorical model, theta is a V x V logit table
/// (row = previous token, column = next token).
///
/// Mlp: the previous `window` tokens are embedded (dim `embed_dim`), concatenated,
/// passed through one tanh hidden layer of width `hidden_dim`, then projected to V
/// logits. Parameters are laid out as three row-major (out x in) blocks:
///   E  : embed_dim x V            (column = token)
///   L1 : hidden_dim x (window*embed_dim + 1)   (last column = bias)
///   L2 : V x (hidden_dim + 1)                  (last column = bias)
///
/// Token V-1 doubles as BOS: it conditions the first response token when the
/// query is empty and pads the Mlp window on the left.
struct ModelSpec {
    ModelKind kind = ModelKind::Tabular;
    int vocab_size = 0;
    int window = 0;
    int embed_dim = 0;
    int hidden_dim = 0;

    static ModelSpec tabular(int vocab_size);
    static ModelSpec mlp(int vocab_size, int window, int embed_dim, int hidden_dim);

    std::size_t parameter_count() const;
    int bos() const { return vocab_size - 1; }
    void validate() const;

    bool operator==(const ModelSpec&) const = default;
};

/// One Kronecker-structured parameter block: rows x cols, row-major at `offset`.
/// The gradient of the block is a sum of outer products s a^T over positions.
struct LayerBlock {
    std::string name;
    std::size_t offset = 0;
    int rows = 0;  // output dimension
    int cols = 0;  // input dimension
};

std::vector<LayerBlock> layer_blocks(const ModelSpec& spec);

/// Immutable model value: spec plus flat parameter vector.
class ModelParams {
public:
    ModelParams(ModelSpec spec, Vector theta);

    static ModelParams zeros(const ModelSpec& spec);
    /// i.i.d. normal entries with the given standard deviation.
    static ModelParams random(const ModelSpec& spec, std::uint64_t seed, double scale);

    const ModelSpec& spec() const { return spec_; }
    const Vector& theta() const { return theta_; }
    std::size_t size() const { return static_cast<std::size_t>(theta_.size()); }
    std::string fingerprint() const;

private:
    ModelSpec spec_;
    Vector theta_;
};

struct LossGrad {
    double loss = 0.0;
    GradientVector grad;
};

/// log p(v | u) = sum_t log p(v_t | u, v_<t).
double seq_log_prob(const ModelParams& model, const TokenSequence& u, const TokenSequence& v);

/// seq_log_prob / |v|.
double normalized_log_prob(const ModelParams& model, const TokenSequence& u, const TokenSequence& v);

/// Summed response cross-entropy and its gradient. Query tokens only condition.
LossGrad sft_loss_and_grad(const ModelParams& model, const Example& z);

/// Token-average cross-entropy and gradient: (loss, grad) / |v|.
LossGrad token_avg_loss_and_grad(const ModelParams& model, const TokenSequence& u,
                                 const TokenSequence& v);

/// Adds weight * grad of the summed loss into `grad` and returns the unweighted loss.
double accumulate_loss_grad(const ModelParams& model, const TokenSequence& u, const TokenSequence& v,
                            double weight, GradientVector& grad);

/// Next-token distribution after the given prefix (query followed by response prefix).
Vector next_token_probs(const ModelParams& model, const TokenSequence& u, const TokenSequence& prefix);

/// Argmax decoding of `length` tokens; ties go to the lowest token id.
TokenSequence greedy_decode(const ModelParams& model, const TokenSequence& query, int length);

/// Softmax distribution seen at each response position together with the
/// Tabular row used as context. Used to assemble exact Hessians.
struct PositionVisit {
    int context_row = 0;
    int target = 0;
    Vector probs;
};
std::vector<PositionVisit> tabular_visits(const ModelParams& model, const TokenSequence& u,
                                          const TokenSequence& v);

/// Per-position (input activation, output gradient) pairs for each layer block,
/// indexed [layer][sample]. Output gradients are of the summed SFT loss.
struct KroneckerSample {
    Vector input;
    Vector output_grad;
};
using LayerSamples = std::vector<std::vector<KroneckerSample>>;
LayerSamples capture_layer_samples(const ModelParams& model, const Example& z);

void check_tokens(const ModelSpec& spec, const TokenSequence& s);

}  // namespace prism
