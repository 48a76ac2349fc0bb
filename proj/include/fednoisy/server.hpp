#pragma once

// Aggregation rules (FedAvg, trimmed mean, noise-robust layer-wise) and the
// reliability-score machinery that flags noisy clients.

#include <map>
#include <set>
#include <span>
#include <vector>

#include "fednoisy/client.hpp"
#include "fednoisy/nn.hpp"

namespace fednoisy::server {

enum class Aggregator { fedavg, trimmed_mean, fedprox, fed_ncl };

/// How the penalty m(c, T) enters the layer weights.
///   divisor: w ~ N / (m * d)   (noisy clients are suppressed)
///   literal: w ~ m * N / d     (formula as printed; amplifies flagged clients)
enum class PenaltyMode { divisor, literal };

struct ServerConfig {
    Aggregator aggregator = Aggregator::fed_ncl;
    double trim_pct = 10.0;
    double fedprox_mu = 0.01;
    bool fedavg_unweighted = false;
    double beta = 0.6;
    double tau = 50.0;
    double t_k = 10.0;
    double alpha = 0.6;
    int t_corr = 60;
    double eta = 0.8;
    int rounds = 150;
    std::size_t num_clients = 20;
    PenaltyMode penalty_mode = PenaltyMode::divisor;

    friend bool operator==(const ServerConfig&, const ServerConfig&) = default;
};

void validate(const ServerConfig& config);

const char* to_string(Aggregator aggregator);
Aggregator parse_aggregator(const std::string& name);

nn::ModelParams aggregate_fedavg(std::span<const client::ClientUpdate> updates,
                                 bool unweighted = false);

/// Per coordinate: sort the C values, drop floor(trim_pct/100 * C) from each
/// end, average the rest.
nn::ModelParams aggregate_trimmed_mean(std::span<const client::ClientUpdate> updates,
                                       double trim_pct);

struct ReliabilityScores {
    int round = 0;
    std::vector<int> client_ids;
    std::vector<double> divergence;  // e = ||global - local||^2
    std::vector<double> q;           // e * h / n
    double mean = 0.0;
    double stddev = 0.0;  // population
};

ReliabilityScores reliability_scores(std::span<const client::ClientUpdate> updates,
                                     const nn::ModelParams& global_at_round_start);

struct Detection {
    std::set<int> noisy;
    std::set<int> clean;
};

/// Flags c when q_c - mean(Q) > beta * std(Q).
Detection detect_noisy(const ReliabilityScores& scores, double beta);

/// Per-round detection outcomes.
class DetectionHistory {
public:
    void record(int round, const Detection& detection);

    std::size_t rounds_recorded() const noexcept { return rounds_.size(); }
    bool has_round(int round) const { return rounds_.count(round) > 0; }
    const Detection& at(int round) const;

    /// Number of recorded rounds in [1, up_to_round] in which `client` was flagged.
    int flag_count(int client, int up_to_round) const;
    int flag_count(int client) const;

    std::set<int> ever_flagged() const;

private:
    std::map<int, Detection> rounds_;
};

/// Clients flagged in strictly more than alpha * t_corr of rounds 1..t_corr.
std::set<int> select_s_corr(const DetectionHistory& history, double alpha, int t_corr);

/// 1 for clean clients; min(T / t_k * tau, tau) for flagged ones.
double penalty_m(int client, int round, const std::set<int>& noisy_now, double tau, double t_k);

/// rows[l][c]: weight of client c (position in `updates`) for layer l.
struct WeightMatrix {
    std::vector<std::vector<double>> rows;

    std::size_t num_layers() const noexcept { return rows.size(); }
    std::size_t num_clients() const noexcept { return rows.empty() ? 0 : rows.front().size(); }
};

WeightMatrix layerwise_weights(std::span<const client::ClientUpdate> updates,
                               const nn::ModelParams& global_params,
                               const std::set<int>& noisy_now, int round,
                               const ServerConfig& config);

/// Layer l of the result is sum_c W[l][c] * (layer l of update c).
nn::ModelParams aggregate_layerwise(std::span<const client::ClientUpdate> updates,
                                    const WeightMatrix& weights);

}  // namespace fednoisy::server
