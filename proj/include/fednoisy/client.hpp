#pragma once

// Simulated client: local SGD (optionally FedProx), data-quality loss and
// confidence-thresholded label correction.

#include <cstdint>
#include <vector>

#include "fednoisy/data.hpp"
#include "fednoisy/nn.hpp"

namespace fednoisy::client {

/// Which model the data-quality loss is evaluated on.
enum class LossEvaluator { global, local };

/// What a corrected client trains on after label correction.
enum class CorrectedTraining { corrected_all, relabeled_only };

struct ClientConfig {
    double lr = 0.01;
    std::size_t local_epochs = 10;
    std::size_t batch_size = 60;
    double prox_mu = 0.0;
    LossEvaluator h_on = LossEvaluator::global;
    CorrectedTraining train_on = CorrectedTraining::corrected_all;

    friend bool operator==(const ClientConfig&, const ClientConfig&) = default;
};

void validate(const ClientConfig& config);

struct ClientUpdate {
    int client_id = 0;
    nn::ModelParams params;
    double h = 0.0;  // summed cross-entropy on the client's training labels
    std::size_t n_samples = 0;
    int round = 0;
};

/// Shuffled mini-batch SGD on (features, noisy_labels) starting from a copy of
/// `global_params`. With prox_mu > 0 each step adds prox_mu * (theta - theta_global).
ClientUpdate local_train(const nn::ModelParams& global_params,
                         const data::ClientAssignment& assignment,
                         const data::LabeledDataset& dataset, const ClientConfig& config,
                         int round, std::uint64_t seed);

/// Sum of per-sample cross-entropy of the client's training labels under `eval_params`.
double data_quality_loss(const nn::ModelParams& eval_params,
                         const data::ClientAssignment& assignment,
                         const data::LabeledDataset& dataset);

struct LabelCorrection {
    data::ClientAssignment assignment;
    std::size_t relabeled = 0;
    /// relabeled_mask[i] is true when sample i had confidence > eta.
    std::vector<bool> relabeled_mask;
};

/// Replaces the training label of every sample whose max softmax confidence
/// under `global_params` exceeds `eta` with the predicted class.
LabelCorrection apply_label_correction(const data::ClientAssignment& assignment,
                                       const nn::ModelParams& global_params,
                                       const data::LabeledDataset& dataset, double eta);

/// Restricts an assignment to the samples flagged in `keep`.
data::ClientAssignment subset(const data::ClientAssignment& assignment,
                              const std::vector<bool>& keep);

}  // namespace fednoisy::client
