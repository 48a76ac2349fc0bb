#pragma once

// Round orchestration: broadcast, parallel local training, detection,
// aggregation and label correction.

#include <functional>
#include <set>
#include <vector>

#include "fednoisy/analysis.hpp"
#include "fednoisy/client.hpp"
#include "fednoisy/config.hpp"
#include "fednoisy/data.hpp"
#include "fednoisy/nn.hpp"
#include "fednoisy/server.hpp"

namespace fednoisy::experiment {

struct Datasets {
    data::LabeledDataset train;
    data::LabeledDataset test;
};

/// MNIST subset or synthetic blobs, as configured.
Datasets load_datasets(const config::ExperimentConfig& config);

/// Partitioned client assignments with label noise injected.
std::vector<data::ClientAssignment> prepare_clients(const config::ExperimentConfig& config,
                                                    const data::LabeledDataset& train);

nn::ModelParams initial_model(const config::ExperimentConfig& config,
                              const data::LabeledDataset& train);

/// Runs fn(i) for i in [0, count) on up to `workers` threads. If any call
/// throws, the exception of the lowest index is rethrown.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn);

struct ExperimentState {
    config::ExperimentConfig config;
    const data::LabeledDataset* train = nullptr;
    const data::LabeledDataset* test = nullptr;
    /// Full client data (noisy labels, corrected in place after T_corr).
    std::vector<data::ClientAssignment> clients;
    /// What each client trains on this round.
    std::vector<data::ClientAssignment> training_views;
    nn::ModelParams global;
    server::DetectionHistory history;
    std::set<int> corrected;
    std::size_t workers = 1;

    ExperimentState(config::ExperimentConfig cfg, const data::LabeledDataset& train_set,
                    const data::LabeledDataset& test_set, std::size_t worker_count = 1);
};

/// Everything produced by one round; handed to observers.
struct RoundOutcome {
    analysis::RoundMetrics metrics;
    std::vector<client::ClientUpdate> updates;
};

/// Executes round `round` (1-based) and replaces state.global with the new model.
RoundOutcome run_round(ExperimentState& state, int round);

using RoundObserver = std::function<void(const ExperimentState&, const RoundOutcome&)>;

struct RunOptions {
    std::size_t workers = 1;
    RoundObserver observer;
};

std::vector<analysis::RoundMetrics> run_experiment(const config::ExperimentConfig& config,
                                                   const data::LabeledDataset& train,
                                                   const data::LabeledDataset& test,
                                                   const RunOptions& options = {});

}  // namespace fednoisy::experiment
