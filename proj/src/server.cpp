#include "fednoisy/server.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fednoisy/errors.hpp"

namespace fednoisy::server {

namespace {

void require_updates(std::span<const client::ClientUpdate> updates) {
    if (updates.empty()) throw DomainError("aggregation needs at least one client update");
    for (const auto& u : updates) nn::require_congruent(updates.front().params, u.params);
}

bool layer_identical(std::span<const client::ClientUpdate> updates, std::size_t l) {
    const auto& ref = updates.front().params.layers[l];
    for (const auto& u : updates.subspan(1)) {
        const auto& other = u.params.layers[l];
        if (other.weight != ref.weight || other.bias != ref.bias) return false;
    }
    return true;
}

/// Layer l of the result = sum_c weights[l][c] * layer l of update c, summed in
/// client order. Identical inputs are returned unchanged.
nn::ModelParams weighted_combination(std::span<const client::ClientUpdate> updates,
                                     const std::vector<std::vector<double>>& weights) {
    nn::ModelParams out = updates.front().params;
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        if (layer_identical(updates, l)) continue;
        auto& dst = out.layers[l];
        dst.weight.setZero();
        dst.bias.setZero();
        for (std::size_t c = 0; c < updates.size(); ++c) {
            const auto& src = updates[c].params.layers[l];
            dst.weight += weights[l][c] * src.weight;
            dst.bias += weights[l][c] * src.bias;
        }
    }
    return out;
}

}  // namespace

void validate(const ServerConfig& config) {
    if (!(config.beta > 0.0)) throw ConfigError("server.beta", "beta (β) must be > 0");
    if (!(config.tau >= 1.0)) throw ConfigError("server.tau", "tau (τ) must be >= 1");
    if (!(config.t_k >= 1.0)) throw ConfigError("server.t_k", "T_k must be >= 1");
    if (!(config.alpha > 0.0 && config.alpha < 1.0)) {
        throw ConfigError("server.alpha", "alpha (α) must lie in (0, 1)");
    }
    if (!(config.eta >= 0.0 && config.eta <= 1.0)) {
        throw ConfigError("server.eta", "eta (η) must lie in [0, 1]");
    }
    if (config.rounds < 0) throw ConfigError("server.rounds", "must be >= 0");
    if (config.num_clients < 1) throw ConfigError("server.num_clients", "must be >= 1");
    if (config.t_corr < 1) throw ConfigError("server.t_corr", "T_corr must be >= 1");
    if (config.aggregator == Aggregator::fed_ncl && config.rounds > 0 &&
        config.t_corr > config.rounds) {
        throw ConfigError("server.t_corr", "T_corr must not exceed server.rounds");
    }
    if (!(config.trim_pct >= 0.0 && config.trim_pct < 50.0)) {
        throw ConfigError("server.trim_pct", "must lie in [0, 50)");
    }
    if (config.aggregator == Aggregator::trimmed_mean) {
        const auto m = static_cast<std::size_t>(
            std::floor(config.trim_pct / 100.0 * static_cast<double>(config.num_clients)));
        if (2 * m >= config.num_clients) {
            throw ConfigError("server.trim_pct", "trims every client");
        }
    }
    if (!(config.fedprox_mu >= 0.0)) throw ConfigError("server.fedprox_mu", "must be >= 0");
}

const char* to_string(Aggregator aggregator) {
    switch (aggregator) {
        case Aggregator::fedavg: return "fedavg";
        case Aggregator::trimmed_mean: return "trimmed_mean";
        case Aggregator::fedprox: return "fedprox";
        case Aggregator::fed_ncl: return "fed_ncl";
    }
    return "unknown";
}

Aggregator parse_aggregator(const std::string& name) {
    for (auto a : {Aggregator::fedavg, Aggregator::trimmed_mean, Aggregator::fedprox,
                   Aggregator::fed_ncl}) {
        if (name == to_string(a)) return a;
    }
    throw ConfigError("server.aggregator", "unknown aggregator '" + name + "'");
}

nn::ModelParams aggregate_fedavg(std::span<const client::ClientUpdate> updates, bool unweighted) {
    require_updates(updates);
    std::vector<double> w(updates.size());
    if (unweighted) {
        std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(updates.size()));
    } else {
        double total = 0.0;
        for (const auto& u : updates) total += static_cast<double>(u.n_samples);
        if (!(total > 0.0)) throw DomainError("FedAvg needs a positive total sample count");
        for (std::size_t c = 0; c < updates.size(); ++c) {
            w[c] = static_cast<double>(updates[c].n_samples) / total;
        }
    }
    const std::vector<std::vector<double>> rows(updates.front().params.num_layers(), w);
    return weighted_combination(updates, rows);
}

nn::ModelParams aggregate_trimmed_mean(std::span<const client::ClientUpdate> updates,
                                       double trim_pct) {
    require_updates(updates);
    if (!(trim_pct >= 0.0 && trim_pct < 50.0)) throw DomainError("trim_pct must lie in [0, 50)");
    const std::size_t count = updates.size();
    const auto m = static_cast<std::size_t>(std::floor(trim_pct / 100.0 * static_cast<double>(count)));
    if (2 * m >= count) {
        throw DomainError("trimming " + std::to_string(m) + " per side leaves no clients out of " +
                          std::to_string(count));
    }
    const std::size_t kept = count - 2 * m;

    nn::ModelParams out = updates.front().params;
    std::vector<double> column(count);
    auto trimmed = [&](auto get) {
        for (std::size_t c = 0; c < count; ++c) column[c] = get(c);
        std::sort(column.begin(), column.end());
        if (column[m] == column[m + kept - 1]) return column[m];
        double sum = 0.0;
        for (std::size_t k = m; k < m + kept; ++k) sum += column[k];
        return sum / static_cast<double>(kept);
    };
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
        auto& dst = out.layers[l];
        for (Eigen::Index i = 0; i < dst.weight.size(); ++i) {
            dst.weight.data()[i] =
                trimmed([&](std::size_t c) { return updates[c].params.layers[l].weight.data()[i]; });
        }
        for (Eigen::Index i = 0; i < dst.bias.size(); ++i) {
            dst.bias[i] = trimmed([&](std::size_t c) { return updates[c].params.layers[l].bias[i]; });
        }
    }
    return out;
}

ReliabilityScores reliability_scores(std::span<const client::ClientUpdate> updates,
                                     const nn::ModelParams& global_at_round_start) {
    ReliabilityScores scores;
    if (updates.empty()) return scores;
    scores.round = updates.front().round;
    for (const auto& u : updates) {
        if (u.n_samples == 0) {
            throw DomainError("client " + std::to_string(u.client_id) + " reported zero samples");
        }
        const double e = nn::param_sq_distance(global_at_round_start, u.params);
        scores.client_ids.push_back(u.client_id);
        scores.divergence.push_back(e);
        scores.q.push_back(e * u.h / static_cast<double>(u.n_samples));
    }
    const auto n = static_cast<double>(scores.q.size());
    double sum = 0.0;
    for (double q : scores.q) sum += q;
    scores.mean = sum / n;
    double ss = 0.0;
    for (double q : scores.q) ss += (q - scores.mean) * (q - scores.mean);
    scores.stddev = std::sqrt(ss / n);
    return scores;
}

Detection detect_noisy(const ReliabilityScores& scores, double beta) {
    Detection d;
    const auto [lo, hi] = std::minmax_element(scores.q.begin(), scores.q.end());
    const bool spread = scores.q.size() >= 2 && *lo != *hi;
    for (std::size_t i = 0; i < scores.q.size(); ++i) {
        const int id = scores.client_ids[i];
        if (spread && scores.q[i] - scores.mean > beta * scores.stddev) {
            d.noisy.insert(id);
        } else {
            d.clean.insert(id);
        }
    }
    return d;
}

void DetectionHistory::record(int round, const Detection& detection) {
    rounds_[round] = detection;
}

const Detection& DetectionHistory::at(int round) const {
    auto it = rounds_.find(round);
    if (it == rounds_.end()) {
        throw StateError("no detection recorded for round " + std::to_string(round));
    }
    return it->second;
}

int DetectionHistory::flag_count(int client, int up_to_round) const {
    int count = 0;
    for (const auto& [round, d] : rounds_) {
        if (round >= 1 && round <= up_to_round && d.noisy.count(client)) ++count;
    }
    return count;
}

int DetectionHistory::flag_count(int client) const {
    int count = 0;
    for (const auto& [round, d] : rounds_) count += static_cast<int>(d.noisy.count(client));
    return count;
}

std::set<int> DetectionHistory::ever_flagged() const {
    std::set<int> out;
    for (const auto& [round, d] : rounds_) out.insert(d.noisy.begin(), d.noisy.end());
    return out;
}

std::set<int> select_s_corr(const DetectionHistory& history, double alpha, int t_corr) {
    for (int t = 1; t <= t_corr; ++t) {
        if (!history.has_round(t)) {
            throw StateError("detection history lacks round " + std::to_string(t) +
                             " needed for T_corr = " + std::to_string(t_corr));
        }
    }
    std::set<int> participants;
    for (int t = 1; t <= t_corr; ++t) {
        const auto& d = history.at(t);
        participants.insert(d.noisy.begin(), d.noisy.end());
    }
    std::set<int> selected;
    const double quorum = alpha * static_cast<double>(t_corr);
    for (int c : participants) {
        if (static_cast<double>(history.flag_count(c, t_corr)) > quorum) selected.insert(c);
    }
    return selected;
}

double penalty_m(int client, int round, const std::set<int>& noisy_now, double tau, double t_k) {
    if (!noisy_now.count(client)) return 1.0;
    return std::min(static_cast<double>(round) / t_k * tau, tau);
}

WeightMatrix layerwise_weights(std::span<const client::ClientUpdate> updates,
                               const nn::ModelParams& global_params,
                               const std::set<int>& noisy_now, int round,
                               const ServerConfig& config) {
    require_updates(updates);
    nn::require_congruent(global_params, updates.front().params);
    const std::size_t L = global_params.num_layers();
    WeightMatrix W;
    W.rows.assign(L, std::vector<double>(updates.size(), 0.0));
    for (std::size_t l = 0; l < L; ++l) {
        double total = 0.0;
        for (std::size_t c = 0; c < updates.size(); ++c) {
            const double d = 1.0 + nn::layer_sq_distance(global_params, updates[c].params, l + 1);
            const double m = penalty_m(updates[c].client_id, round, noisy_now, config.tau, config.t_k);
            const double n = static_cast<double>(updates[c].n_samples);
            const double s = config.penalty_mode == PenaltyMode::divisor ? n / (m * d) : m * n / d;
            W.rows[l][c] = s;
            total += s;
        }
        for (double& w : W.rows[l]) w /= total;
    }
    return W;
}

nn::ModelParams aggregate_layerwise(std::span<const client::ClientUpdate> updates,
                                    const WeightMatrix& weights) {
    require_updates(updates);
    if (weights.num_layers() != updates.front().params.num_layers()) {
        throw ShapeError("weight matrix has " + std::to_string(weights.num_layers()) +
                         " rows for a " + std::to_string(updates.front().params.num_layers()) +
                         "-layer model");
    }
    for (const auto& row : weights.rows) {
        if (row.size() != updates.size()) {
            throw ShapeError("weight matrix row length does not match the client count");
        }
    }
    return weighted_combination(updates, weights.rows);
}

}  // namespace fednoisy::server
