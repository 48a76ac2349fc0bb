#include "fednoisy/nn.hpp"

#include <cmath>
#include <string>

#include "fednoisy/errors.hpp"
#include "fednoisy/rng.hpp"

namespace fednoisy::nn {

namespace {

void validate_chain(std::span<const LayerSpec> specs) {
    if (specs.empty()) {
        throw ShapeError("model needs at least one layer");
    }
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (specs[i].in_dim == 0 || specs[i].out_dim == 0) {
            throw ShapeError("layer " + std::to_string(i + 1) + " has a zero dimension");
        }
        if (i + 1 < specs.size() && specs[i].out_dim != specs[i + 1].in_dim) {
            throw ShapeError("layer " + std::to_string(i + 1) + " out_dim " +
                             std::to_string(specs[i].out_dim) + " does not match layer " +
                             std::to_string(i + 2) + " in_dim " +
                             std::to_string(specs[i + 1].in_dim));
        }
    }
}

void check_labels(std::span<const int> labels, Eigen::Index rows, Eigen::Index classes) {
    if (static_cast<Eigen::Index>(labels.size()) != rows) {
        throw ShapeError("label count " + std::to_string(labels.size()) +
                         " does not match batch size " + std::to_string(rows));
    }
    for (int y : labels) {
        if (y < 0 || y >= classes) {
            throw DomainError("label " + std::to_string(y) + " outside [0, " +
                              std::to_string(classes) + ")");
        }
    }
}

bool same_shape(const LayerBlock& a, const LayerBlock& b) {
    return a.weight.rows() == b.weight.rows() && a.weight.cols() == b.weight.cols() &&
           a.bias.size() == b.bias.size();
}

}  // namespace

std::size_t ModelParams::num_parameters() const noexcept {
    std::size_t n = 0;
    for (const auto& layer : layers) {
        n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
    }
    return n;
}

std::size_t ModelParams::input_dim() const {
    if (specs.empty()) throw ShapeError("empty model");
    return specs.front().in_dim;
}

std::size_t ModelParams::output_dim() const {
    if (specs.empty()) throw ShapeError("empty model");
    return specs.back().out_dim;
}

std::vector<LayerSpec> mlp_specs(std::size_t input_dim, std::span<const std::size_t> hidden,
                                 std::size_t num_classes) {
    std::vector<LayerSpec> specs;
    std::size_t in = input_dim;
    for (std::size_t width : hidden) {
        specs.push_back({in, width, Activation::relu});
        in = width;
    }
    specs.push_back({in, num_classes, Activation::identity});
    validate_chain(specs);
    return specs;
}

ModelParams init_params(std::span<const LayerSpec> specs, std::uint64_t seed) {
    validate_chain(specs);
    Rng rng(seed);
    ModelParams params;
    params.specs.assign(specs.begin(), specs.end());
    for (const auto& spec : specs) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(spec.in_dim)));
        LayerBlock block;
        block.weight.resize(static_cast<Eigen::Index>(spec.out_dim),
                            static_cast<Eigen::Index>(spec.in_dim));
        for (Eigen::Index i = 0; i < block.weight.size(); ++i) {
            block.weight.data()[i] = dist(rng);
        }
        block.bias = Vector::Zero(static_cast<Eigen::Index>(spec.out_dim));
        params.layers.push_back(std::move(block));
    }
    return params;
}

ForwardResult forward(const ModelParams& params, const Tensor& batch) {
    if (params.layers.empty()) throw ShapeError("empty model");
    if (static_cast<std::size_t>(batch.cols()) != params.input_dim()) {
        throw ShapeError("batch width " + std::to_string(batch.cols()) +
                         " does not match input dim " + std::to_string(params.input_dim()));
    }
    ForwardResult out;
    out.activations.reserve(params.layers.size());
    const Tensor* input = &batch;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& block = params.layers[l];
        Tensor z = (*input) * block.weight.transpose();
        z.rowwise() += block.bias.transpose();
        if (params.specs[l].activation == Activation::relu) {
            z = z.cwiseMax(0.0);
        }
        out.activations.push_back(std::move(z));
        input = &out.activations.back();
    }
    out.logits = out.activations.back();
    if (!out.logits.allFinite()) {
        throw NumericError("forward pass produced non-finite logits");
    }
    return out;
}

Tensor softmax(const Tensor& logits) {
    Tensor p = logits.colwise() - logits.rowwise().maxCoeff();
    p = p.array().exp();
    p.array().colwise() /= p.rowwise().sum().array();
    return p;
}

std::vector<double> cross_entropy(const Tensor& logits, std::span<const int> labels) {
    check_labels(labels, logits.rows(), logits.cols());
    std::vector<double> losses(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
        losses[static_cast<std::size_t>(i)] = lse - logits(i, labels[static_cast<std::size_t>(i)]);
    }
    return losses;
}

LossAndGrad loss_and_grad(const ModelParams& params, const Tensor& batch_x,
                          std::span<const int> labels) {
    if (batch_x.rows() == 0) throw DomainError("loss_and_grad on an empty batch");
    check_labels(labels, batch_x.rows(), static_cast<Eigen::Index>(params.output_dim()));

    const ForwardResult fw = forward(params, batch_x);
    const auto n = static_cast<double>(batch_x.rows());

    LossAndGrad result;
    double total = 0.0;
    for (double v : cross_entropy(fw.logits, labels)) total += v;
    result.mean_loss = total / n;

    // dL/dz at the output: (softmax - onehot) / n
    Tensor delta = softmax(fw.logits);
    for (Eigen::Index i = 0; i < delta.rows(); ++i) {
        delta(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
    }
    delta /= n;

    const std::size_t depth = params.layers.size();
    result.grad.layers.resize(depth);
    for (std::size_t l = depth; l-- > 0;) {
        const Tensor& input = (l == 0) ? batch_x : fw.activations[l - 1];
        auto& g = result.grad.layers[l];
        g.weight = delta.transpose() * input;
        g.bias = delta.colwise().sum().transpose();
        if (l > 0) {
            Tensor upstream = delta * params.layers[l].weight;
            if (params.specs[l - 1].activation == Activation::relu) {
                upstream = (fw.activations[l - 1].array() > 0.0).select(upstream, 0.0);
            }
            delta = std::move(upstream);
        }
    }
    return result;
}

void require_congruent(const ModelParams& a, const ModelParams& b) {
    if (a.layers.size() != b.layers.size()) {
        throw ShapeError("models have different layer counts (" + std::to_string(a.layers.size()) +
                         " vs " + std::to_string(b.layers.size()) + ")");
    }
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        if (!same_shape(a.layers[l], b.layers[l])) {
            throw ShapeError("layer " + std::to_string(l + 1) + " shapes differ");
        }
    }
}

void require_congruent(const ModelParams& a, const Gradient& g) {
    if (a.layers.size() != g.layers.size()) {
        throw ShapeError("gradient layer count does not match the model");
    }
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        if (!same_shape(a.layers[l], g.layers[l])) {
            throw ShapeError("gradient layer " + std::to_string(l + 1) + " shape differs");
        }
    }
}

void sgd_step_inplace(ModelParams& params, const Gradient& grad, double lr) {
    require_congruent(params, grad);
    if (!(lr >= 0.0)) throw DomainError("learning rate must be >= 0");
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        params.layers[l].weight -= lr * grad.layers[l].weight;
        params.layers[l].bias -= lr * grad.layers[l].bias;
    }
}

ModelParams sgd_step(const ModelParams& params, const Gradient& grad, double lr) {
    ModelParams next = params;
    sgd_step_inplace(next, grad, lr);
    return next;
}

double layer_sq_distance(const ModelParams& a, const ModelParams& b, std::size_t layer) {
    require_congruent(a, b);
    if (layer < 1 || layer > a.layers.size()) {
        throw DomainError("layer index " + std::to_string(layer) + " outside [1, " +
                          std::to_string(a.layers.size()) + "]");
    }
    const auto& la = a.layers[layer - 1];
    const auto& lb = b.layers[layer - 1];
    return (la.weight - lb.weight).squaredNorm() + (la.bias - lb.bias).squaredNorm();
}

double param_sq_distance(const ModelParams& a, const ModelParams& b) {
    require_congruent(a, b);
    double total = 0.0;
    for (std::size_t l = 1; l <= a.layers.size(); ++l) {
        total += layer_sq_distance(a, b, l);
    }
    return total;
}

Confidences predict_confidences(const ModelParams& params, const Tensor& batch) {
    const Tensor probs = softmax(forward(params, batch).logits);
    Confidences out;
    out.labels.resize(static_cast<std::size_t>(probs.rows()));
    out.probabilities.resize(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < probs.cols(); ++k) {
            if (probs(i, k) > probs(i, best)) best = k;
        }
        out.labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
        out.probabilities[static_cast<std::size_t>(i)] = probs(i, best);
    }
    return out;
}

Gradient zero_gradient(const ModelParams& params) {
    Gradient g;
    g.layers.reserve(params.layers.size());
    for (const auto& layer : params.layers) {
        g.layers.push_back({Tensor::Zero(layer.weight.rows(), layer.weight.cols()),
                            Vector::Zero(layer.bias.size())});
    }
    return g;
}

std::vector<double> flatten(const ModelParams& params) {
    std::vector<double> flat;
    flat.reserve(params.num_parameters());
    for (const auto& layer : params.layers) {
        flat.insert(flat.end(), layer.weight.data(), layer.weight.data() + layer.weight.size());
        flat.insert(flat.end(), layer.bias.data(), layer.bias.data() + layer.bias.size());
    }
    return flat;
}

bool all_finite(const ModelParams& params) {
    for (const auto& layer : params.layers) {
        if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
    }
    return true;
}

}  // namespace fednoisy::nn
