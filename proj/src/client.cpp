#include "fednoisy/client.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "fednoisy/errors.hpp"
#include "fednoisy/rng.hpp"

namespace fednoisy::client {

namespace {

// Samples per forward pass when only evaluating.
constexpr std::size_t kEvalChunk = 1024;

}  // namespace

void validate(const ClientConfig& config) {
    if (!(config.lr > 0.0)) throw ConfigError("client.lr", "must be > 0");
    if (config.local_epochs < 1) throw ConfigError("client.local_epochs", "must be >= 1");
    if (config.batch_size < 1) throw ConfigError("client.batch_size", "must be >= 1");
    if (!(config.prox_mu >= 0.0)) throw ConfigError("client.prox_mu", "must be >= 0");
}

ClientUpdate local_train(const nn::ModelParams& global_params,
                         const data::ClientAssignment& assignment,
                         const data::LabeledDataset& dataset, const ClientConfig& config,
                         int round, std::uint64_t seed) {
    if (assignment.size() == 0) {
        throw DomainError("client " + std::to_string(assignment.client_id) + " has no samples");
    }
    const std::size_t n = assignment.size();
    const std::size_t batch = std::min(config.batch_size, n);

    ClientUpdate update;
    update.client_id = assignment.client_id;
    update.n_samples = n;
    update.round = round;
    update.params = global_params;

    Rng rng(seed);
    std::vector<std::size_t> order(n);
    std::vector<std::size_t> rows;
    std::vector<int> labels;
    for (std::size_t epoch = 0; epoch < config.local_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t stop = std::min(start + batch, n);
            rows.clear();
            labels.clear();
            for (std::size_t k = start; k < stop; ++k) {
                rows.push_back(assignment.indices[order[k]]);
                labels.push_back(assignment.noisy_labels[order[k]]);
            }
            nn::LossAndGrad step;
            try {
                step = nn::loss_and_grad(update.params, dataset.gather(rows), labels);
            } catch (const NumericError& e) {
                throw NumericError("client " + std::to_string(assignment.client_id) + " in round " +
                                   std::to_string(round) + ", epoch " + std::to_string(epoch + 1) +
                                   ": " + e.what());
            }
            auto& grad = step.grad;
            if (config.prox_mu > 0.0) {
                for (std::size_t l = 0; l < grad.layers.size(); ++l) {
                    grad.layers[l].weight += config.prox_mu * (update.params.layers[l].weight -
                                                               global_params.layers[l].weight);
                    grad.layers[l].bias += config.prox_mu * (update.params.layers[l].bias -
                                                             global_params.layers[l].bias);
                }
            }
            nn::sgd_step_inplace(update.params, grad, config.lr);
        }
        if (!nn::all_finite(update.params)) {
            throw NumericError("client " + std::to_string(assignment.client_id) +
                               " diverged to non-finite parameters in round " +
                               std::to_string(round) + ", epoch " + std::to_string(epoch + 1));
        }
    }

    const auto& evaluator = config.h_on == LossEvaluator::global ? global_params : update.params;
    update.h = data_quality_loss(evaluator, assignment, dataset);
    return update;
}

double data_quality_loss(const nn::ModelParams& eval_params,
                         const data::ClientAssignment& assignment,
                         const data::LabeledDataset& dataset) {
    if (assignment.size() == 0) {
        throw DomainError("client " + std::to_string(assignment.client_id) + " has no samples");
    }
    double total = 0.0;
    for (std::size_t start = 0; start < assignment.size(); start += kEvalChunk) {
        const std::size_t stop = std::min(start + kEvalChunk, assignment.size());
        const std::span<const std::size_t> rows(assignment.indices.data() + start, stop - start);
        const std::span<const int> labels(assignment.noisy_labels.data() + start, stop - start);
        const auto fw = nn::forward(eval_params, dataset.gather(rows));
        for (double v : nn::cross_entropy(fw.logits, labels)) total += v;
    }
    return total;
}

LabelCorrection apply_label_correction(const data::ClientAssignment& assignment,
                                       const nn::ModelParams& global_params,
                                       const data::LabeledDataset& dataset, double eta) {
    if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("eta must lie in [0, 1]");
    LabelCorrection result;
    result.assignment = assignment;
    result.relabeled_mask.assign(assignment.size(), false);
    if (assignment.size() == 0) return result;

    const auto conf = nn::predict_confidences(global_params, dataset.gather(assignment.indices));
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        if (conf.probabilities[i] > eta) {
            result.assignment.noisy_labels[i] = conf.labels[i];
            result.relabeled_mask[i] = true;
            ++result.relabeled;
        }
    }
    return result;
}

data::ClientAssignment subset(const data::ClientAssignment& assignment,
                              const std::vector<bool>& keep) {
    if (keep.size() != assignment.size()) {
        throw ShapeError("subset mask length does not match the assignment");
    }
    data::ClientAssignment out;
    out.client_id = assignment.client_id;
    out.noise_rate = assignment.noise_rate;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (!keep[i]) continue;
        out.indices.push_back(assignment.indices[i]);
        out.true_labels.push_back(assignment.true_labels[i]);
        out.noisy_labels.push_back(assignment.noisy_labels[i]);
    }
    return out;
}

}  // namespace fednoisy::client
