#pragma once

// Experiment configuration: JSON parsing with defaults, validation and echo.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fednoisy/client.hpp"
#include "fednoisy/data.hpp"
#include "fednoisy/server.hpp"

namespace fednoisy::config {

enum class DatasetKind { mnist, synthetic };
enum class PartitionKind { iid, class_skew, quantity_skew };
enum class NoiseMode { none, bernoulli, trunc_gauss, explicit_rates };

struct DatasetConfig {
    DatasetKind kind = DatasetKind::mnist;
    std::filesystem::path train_images = "data/mnist/train-images-idx3-ubyte.gz";
    std::filesystem::path train_labels = "data/mnist/train-labels-idx1-ubyte.gz";
    std::filesystem::path test_images = "data/mnist/t10k-images-idx3-ubyte.gz";
    std::filesystem::path test_labels = "data/mnist/t10k-labels-idx1-ubyte.gz";
    std::size_t subset_size = 2000;  // 0 keeps every training sample
    std::size_t test_size = 2000;    // 0 keeps every test sample
    // synthetic blobs
    int classes = 10;
    std::size_t per_class = 200;
    std::size_t test_per_class = 100;
    std::size_t dims = 20;
    double spread = 1.0;

    friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct ModelConfig {
    std::vector<std::size_t> hidden = {64, 32};

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct PartitionConfig {
    PartitionKind kind = PartitionKind::iid;
    double p_class = 0.7;
    double alpha_dir = 10.0;
    double sigma_log = 0.3;

    friend bool operator==(const PartitionConfig&, const PartitionConfig&) = default;
};

struct NoiseConfig {
    NoiseMode mode = NoiseMode::bernoulli;
    double p = 0.7;
    double within_rate = 1.0;
    double mu = 0.3;
    double sigma = 0.4;
    double a = 0.0;
    double b = 1.0;
    std::vector<double> rates;

    data::NoiseSpec spec() const;

    friend bool operator==(const NoiseConfig&, const NoiseConfig&) = default;
};

struct OutputConfig {
    bool save_checkpoints = false;
    int checkpoint_every = 10;
    std::size_t probe_size = 512;

    friend bool operator==(const OutputConfig&, const OutputConfig&) = default;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::filesystem::path output_dir = "out";
    DatasetConfig dataset;
    ModelConfig model;
    PartitionConfig partition;
    NoiseConfig noise;
    client::ClientConfig client;
    server::ServerConfig server;
    OutputConfig output;
    std::vector<server::Aggregator> compare = {server::Aggregator::fedavg,
                                               server::Aggregator::trimmed_mean,
                                               server::Aggregator::fedprox,
                                               server::Aggregator::fed_ncl};

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Throws ConfigError naming the first offending key.
void validate(const ExperimentConfig& config);

/// Defaults for omitted keys, unknown keys rejected, then validate().
ExperimentConfig from_json(const nlohmann::json& doc);
ExperimentConfig parse_config(const std::filesystem::path& path);

/// Every effective value, defaults included.
nlohmann::json to_json(const ExperimentConfig& config);

}  // namespace fednoisy::config
