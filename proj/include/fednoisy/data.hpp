#pragma once

// Datasets, client partitioning and label-noise injection.

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "fednoisy/nn.hpp"

namespace fednoisy::data {

struct LabeledDataset {
    nn::Tensor features;  // N x d
    std::vector<int> labels;
    int num_classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dims() const noexcept { return static_cast<std::size_t>(features.cols()); }

    /// Rows `indices` of the feature matrix, in order.
    nn::Tensor gather(std::span<const std::size_t> indices) const;

    /// The first `count` samples (count clamped to size()).
    LabeledDataset head(std::size_t count) const;
};

/// One client's slice of the training set. `noisy_labels` are what the client
/// trains on; `true_labels` keep the clean copy for evaluation.
struct ClientAssignment {
    int client_id = 0;
    std::vector<std::size_t> indices;
    std::vector<int> true_labels;
    std::vector<int> noisy_labels;
    double noise_rate = 0.0;

    std::size_t size() const noexcept { return indices.size(); }
    /// Fraction of samples whose training label differs from the true label.
    double flip_fraction() const;

    friend bool operator==(const ClientAssignment&, const ClientAssignment&) = default;
};

struct BernoulliNoise {
    double p = 0.7;            // probability that a client is clean
    double within_rate = 1.0;  // flip rate inside a noisy client
};

struct TruncGaussNoise {
    double mu = 0.3;
    double sigma = 0.4;
    double a = 0.0;
    double b = 1.0;
};

/// Fixed per-client rates, e.g. "clients 5-9 at 50%".
struct ExplicitNoise {
    std::vector<double> rates;
};

struct NoNoise {};

/// Client-level noise scenario; flips are always symmetric.
using NoiseSpec = std::variant<NoNoise, BernoulliNoise, TruncGaussNoise, ExplicitNoise>;

void validate(const NoiseSpec& spec);

/// IDX image/label pair; `.gz` suffixes are decompressed transparently.
/// Pixels are scaled to [0, 1].
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, int num_classes = 10);

/// Gaussian blobs: one N(0, I) center per class, samples center + spread * N(0, I).
LabeledDataset make_synthetic(int num_classes, std::size_t per_class, std::size_t dims,
                              double spread, std::uint64_t seed);

std::vector<ClientAssignment> partition_iid(const LabeledDataset& dataset, std::size_t num_clients,
                                            std::uint64_t seed);

/// Per class: Bernoulli(p_class) presence over clients, then Dirichlet(alpha_dir)
/// proportions among the present clients.
std::vector<ClientAssignment> partition_class_skew(const LabeledDataset& dataset,
                                                   std::size_t num_clients, double p_class,
                                                   double alpha_dir, std::uint64_t seed);

/// Client sizes proportional to lognormal(0, sigma_log) draws, each >= 1.
std::vector<ClientAssignment> partition_quantity_skew(const LabeledDataset& dataset,
                                                      std::size_t num_clients, double sigma_log,
                                                      std::uint64_t seed);

/// Inverse-CDF sampling from N(mu, sigma^2) truncated to [a, b].
std::vector<double> sample_truncated_gaussian(double mu, double sigma, double a, double b,
                                              std::uint64_t seed, std::size_t count);

/// Analytic mean of the truncated normal.
double truncated_gaussian_mean(double mu, double sigma, double a, double b);

/// Analytic CDF of the truncated normal.
double truncated_gaussian_cdf(double x, double mu, double sigma, double a, double b);

std::vector<double> sample_client_noise_rates(const NoiseSpec& spec, std::size_t num_clients,
                                              std::uint64_t seed);

/// Flips each sample with probability `rate` to a uniformly chosen wrong class.
/// Flips are applied to the true labels; prior noisy labels are replaced.
ClientAssignment apply_symmetric_noise(const ClientAssignment& assignment, double rate,
                                       int num_classes, std::uint64_t seed);

}  // namespace fednoisy::data
