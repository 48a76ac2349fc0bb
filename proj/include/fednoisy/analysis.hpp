#pragma once

// Diagnostics: linear CKA, weight divergence, accuracy and per-round metrics
// persistence.

#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "fednoisy/data.hpp"
#include "fednoisy/nn.hpp"

namespace fednoisy::analysis {

/// Column-centred linear CKA:
///   ||Yc^T Xc||_F^2 / (||Xc^T Xc||_F * ||Yc^T Yc||_F)
double linear_cka(const nn::Tensor& x, const nn::Tensor& y);

struct CkaReport {
    std::string probe_id;
    std::vector<std::size_t> layers;  // 1-based
    /// matrices[l] is (M x M) over the supplied models, global last.
    std::vector<nn::Tensor> matrices;
    std::vector<double> mean_global_noisy;  // per layer
    std::vector<double> mean_global_clean;  // per layer
};

/// `models` lists the client models followed by the global model; `noisy_ids`
/// are positions among the client models.
CkaReport cka_layer_report(std::span<const nn::ModelParams> models, const nn::Tensor& probe,
                           const std::set<int>& noisy_ids, std::string probe_id = "probe");

std::vector<double> weight_divergence(const nn::ModelParams& global,
                                      std::span<const nn::ModelParams> clients);

double evaluate_accuracy(const nn::ModelParams& params, const data::LabeledDataset& test_set);

struct ClientRoundRecord {
    int client_id = 0;
    std::size_t n_samples = 0;
    double noise_rate = 0.0;  // ground truth
    double divergence = 0.0;  // e
    double h = 0.0;
    double q = 0.0;
    bool flagged = false;
    bool corrected = false;
    std::size_t relabeled = 0;

    friend bool operator==(const ClientRoundRecord&, const ClientRoundRecord&) = default;
};

struct RoundMetrics {
    int round = 0;
    double test_accuracy = 0.0;
    std::vector<ClientRoundRecord> clients;
    /// layer_weights[l][c]; empty when the aggregator has no per-client weights.
    std::vector<std::vector<double>> layer_weights;
    /// Clients selected for label correction in this round.
    std::vector<int> s_corr;
    /// Kept out of the metric files so they stay byte-reproducible.
    double wall_clock_ms = 0.0;
};

enum class MetricsFormat { csv, jsonl };

void write_metrics(std::span<const RoundMetrics> metrics, const std::filesystem::path& path,
                   MetricsFormat format);

std::vector<RoundMetrics> read_metrics(const std::filesystem::path& path, MetricsFormat format);

/// Mean of the last `k` per-round accuracies (all of them if fewer).
double mean_last_accuracy(std::span<const RoundMetrics> metrics, std::size_t k = 10);
/// Population std of the last `k` per-round accuracies.
double std_last_accuracy(std::span<const RoundMetrics> metrics, std::size_t k = 10);

struct DetectionQuality {
    double precision = 0.0;
    double recall = 0.0;
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
    std::size_t false_negatives = 0;
};

/// Flags vs ground truth (noise_rate > 0), pooled over the given rounds.
/// Precision is 1 when nothing is flagged; recall is 1 when nothing is noisy.
DetectionQuality detection_quality(std::span<const RoundMetrics> metrics,
                                   std::optional<int> only_round = std::nullopt);

}  // namespace fednoisy::analysis
