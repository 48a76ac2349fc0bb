#pragma once

// Minimal dense network engine: parameters, forward/backward, SGD and the
// parameter-distance primitives used by the aggregation rules.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace fednoisy::nn {

/// Row-major 2-D tensor; rows are samples.
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Activation { relu, identity };

struct LayerSpec {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Activation activation = Activation::relu;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Weight (out_dim x in_dim) and bias (out_dim) of one dense layer.
struct LayerBlock {
    Tensor weight;
    Vector bias;
};

struct ModelParams {
    std::vector<LayerSpec> specs;
    std::vector<LayerBlock> layers;

    std::size_t num_layers() const noexcept { return layers.size(); }
    std::size_t num_parameters() const noexcept;
    std::size_t input_dim() const;
    std::size_t output_dim() const;
};

/// Shape-congruent with the ModelParams it was computed for.
struct Gradient {
    std::vector<LayerBlock> layers;
};

struct ForwardResult {
    /// Post-activation output of every layer; the last entry equals `logits`.
    std::vector<Tensor> activations;
    Tensor logits;
};

struct LossAndGrad {
    double mean_loss = 0.0;
    Gradient grad;
};

struct Confidences {
    std::vector<int> labels;
    std::vector<double> probabilities;
};

/// Builds the layer chain in -> hidden... -> out; hidden layers use ReLU, the
/// output layer is linear.
std::vector<LayerSpec> mlp_specs(std::size_t input_dim, std::span<const std::size_t> hidden,
                                 std::size_t num_classes);

/// He-style init (std = sqrt(2 / in_dim)), zero biases.
ModelParams init_params(std::span<const LayerSpec> specs, std::uint64_t seed);

ForwardResult forward(const ModelParams& params, const Tensor& batch);

/// Mean softmax cross-entropy over the batch and its exact gradient.
LossAndGrad loss_and_grad(const ModelParams& params, const Tensor& batch_x,
                          std::span<const int> labels);

/// Per-sample cross-entropy of softmax(logits) against `labels`.
std::vector<double> cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Row-wise softmax with max subtraction.
Tensor softmax(const Tensor& logits);

ModelParams sgd_step(const ModelParams& params, const Gradient& grad, double lr);

/// In-place variant used in the training loop.
void sgd_step_inplace(ModelParams& params, const Gradient& grad, double lr);

double param_sq_distance(const ModelParams& a, const ModelParams& b);

/// Squared distance restricted to layer `layer` (1-based, weight + bias).
double layer_sq_distance(const ModelParams& a, const ModelParams& b, std::size_t layer);

/// Argmax class (lowest index on ties) and its softmax probability per sample.
Confidences predict_confidences(const ModelParams& params, const Tensor& batch);

/// Zero-valued gradient with the shapes of `params`.
Gradient zero_gradient(const ModelParams& params);

/// Throws ShapeError unless the two parameter sets have identical layer shapes.
void require_congruent(const ModelParams& a, const ModelParams& b);
void require_congruent(const ModelParams& a, const Gradient& g);

/// All parameters flattened layer by layer (weight row-major, then bias).
std::vector<double> flatten(const ModelParams& params);

bool all_finite(const ModelParams& params);

}  // namespace fednoisy::nn
