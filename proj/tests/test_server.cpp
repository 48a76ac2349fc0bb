#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fednoisy/errors.hpp"
#include "fednoisy/server.hpp"
#include "test_helpers.hpp"

using namespace fednoisy;
using fednoisy::testing::make_update;
using fednoisy::testing::random_model;

namespace {

std::vector<nn::LayerSpec> tiny_specs() {
    const std::vector<std::size_t> hidden{4, 3};
    return nn::mlp_specs(5, hidden, 2);
}

std::vector<client::ClientUpdate> random_updates(std::size_t C, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> n(1, 200);
    std::vector<client::ClientUpdate> out;
    for (std::size_t c = 0; c < C; ++c) {
        out.push_back(make_update(static_cast<int>(c), random_model(tiny_specs(), rng), n(rng),
                                  std::uniform_real_distribution<double>(0.1, 50.0)(rng)));
    }
    return out;
}

// Coordinate-wise view of the updates: coords[i][c].
std::vector<std::vector<double>> coordinates(const std::vector<client::ClientUpdate>& ups) {
    std::vector<std::vector<double>> flat;
    for (const auto& u : ups) flat.push_back(nn::flatten(u.params));
    std::vector<std::vector<double>> coords(flat.front().size(), std::vector<double>(ups.size()));
    for (std::size_t c = 0; c < ups.size(); ++c) {
        for (std::size_t i = 0; i < flat[c].size(); ++i) coords[i][c] = flat[c][i];
    }
    return coords;
}

double layer_distance_oracle(const nn::ModelParams& a, const nn::ModelParams& b, std::size_t l) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.layers[l].weight.size(); ++i) {
        const double d = a.layers[l].weight.data()[i] - b.layers[l].weight.data()[i];
        s += d * d;
    }
    for (Eigen::Index i = 0; i < a.layers[l].bias.size(); ++i) {
        const double d = a.layers[l].bias[i] - b.layers[l].bias[i];
        s += d * d;
    }
    return s;
}

}  // namespace

TEST(FedAvg, MatchesWeightedMeanOracle) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const auto ups = random_updates(1 + trial % 12, rng);
        const auto got = nn::flatten(server::aggregate_fedavg(ups));
        const auto coords = coordinates(ups);
        double total = 0.0;
        for (const auto& u : ups) total += static_cast<double>(u.n_samples);
        for (std::size_t i = 0; i < coords.size(); ++i) {
            double want = 0.0;
            for (std::size_t c = 0; c < ups.size(); ++c) {
                want += static_cast<double>(ups[c].n_samples) / total * coords[i][c];
            }
            EXPECT_NEAR(got[i], want, 1e-12);
        }
    }
}

TEST(FedAvg, UnweightedIsPlainMean) {
    std::mt19937_64 rng(2);
    const auto ups = random_updates(7, rng);
    const auto got = nn::flatten(server::aggregate_fedavg(ups, true));
    const auto coords = coordinates(ups);
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const double want = std::accumulate(coords[i].begin(), coords[i].end(), 0.0) / 7.0;
        EXPECT_NEAR(got[i], want, 1e-12);
    }
}

TEST(FedAvg, IdenticalUpdatesAreReturnedExactly) {
    std::mt19937_64 rng(3);
    const auto m = random_model(tiny_specs(), rng);
    std::vector<client::ClientUpdate> ups;
    for (int c = 0; c < 9; ++c) ups.push_back(make_update(c, m, 13 + c));
    EXPECT_EQ(nn::flatten(server::aggregate_fedavg(ups)), nn::flatten(m));
}

TEST(FedAvg, EmptyAndIncongruentInputsRaise) {
    std::vector<client::ClientUpdate> none;
    EXPECT_THROW(server::aggregate_fedavg(none), DomainError);
    std::mt19937_64 rng(4);
    auto ups = random_updates(2, rng);
    const std::vector<std::size_t> other_hidden{6};
    ups.push_back(make_update(2, random_model(nn::mlp_specs(5, other_hidden, 2), rng), 5));
    EXPECT_THROW(server::aggregate_fedavg(ups), ShapeError);
}

TEST(TrimmedMean, MatchesSortTrimMeanOracleExactly) {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> count(1, 25);
    std::uniform_real_distribution<double> pct(0.0, 49.0);
    for (int trial = 0; trial < 100; ++trial) {
        const auto ups = random_updates(count(rng), rng);
        const double p = trial % 5 == 0 ? 0.0 : pct(rng);
        const auto got = nn::flatten(server::aggregate_trimmed_mean(ups, p));
        const auto coords = coordinates(ups);
        const auto C = ups.size();
        const auto k = static_cast<std::size_t>(std::floor(p / 100.0 * static_cast<double>(C)));
        for (std::size_t i = 0; i < coords.size(); ++i) {
            auto v = coords[i];
            std::sort(v.begin(), v.end());
            double sum = 0.0;
            for (std::size_t j = k; j < C - k; ++j) sum += v[j];
            const double want = sum / static_cast<double>(C - 2 * k);
            EXPECT_EQ(got[i], want) << "trial " << trial << " coord " << i;
        }
    }
}

TEST(TrimmedMean, ZeroTrimIsUnweightedFedAvg) {
    std::mt19937_64 rng(6);
    const auto ups = random_updates(8, rng);
    const auto a = nn::flatten(server::aggregate_trimmed_mean(ups, 0.0));
    const auto b = nn::flatten(server::aggregate_fedavg(ups, true));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(TrimmedMean, RobustToOneOutlier) {
    std::mt19937_64 rng(7);
    const auto base = random_model(tiny_specs(), rng);
    std::vector<client::ClientUpdate> ups;
    for (int c = 0; c < 10; ++c) ups.push_back(make_update(c, base, 10));
    auto wild = base;
    for (auto& l : wild.layers) l.weight.array() += 1e6;
    ups[3].params = wild;
    EXPECT_EQ(nn::flatten(server::aggregate_trimmed_mean(ups, 10.0)), nn::flatten(base));
}

TEST(TrimmedMean, InvalidPercentage) {
    std::mt19937_64 rng(8);
    const auto ups = random_updates(4, rng);
    EXPECT_THROW(server::aggregate_trimmed_mean(ups, 50.0), DomainError);
    EXPECT_THROW(server::aggregate_trimmed_mean(ups, -1.0), DomainError);
}

TEST(ReliabilityScores, MatchOracle) {
    std::mt19937_64 rng(9);
    const auto global = random_model(tiny_specs(), rng);
    const auto ups = random_updates(6, rng);
    const auto s = server::reliability_scores(ups, global);
    ASSERT_EQ(s.q.size(), 6u);
    double mean = 0.0;
    for (std::size_t c = 0; c < 6; ++c) {
        double e = 0.0;
        for (std::size_t l = 0; l < global.num_layers(); ++l) e += layer_distance_oracle(global, ups[c].params, l);
        EXPECT_NEAR(s.divergence[c], e, 1e-12 * e);
        const double q = e * ups[c].h / static_cast<double>(ups[c].n_samples);
        EXPECT_NEAR(s.q[c], q, 1e-12 * q);
        EXPECT_EQ(s.client_ids[c], ups[c].client_id);
        mean += q / 6.0;
    }
    double var = 0.0;
    for (double q : s.q) var += (q - mean) * (q - mean) / 6.0;
    EXPECT_NEAR(s.mean, mean, 1e-12 * mean);
    EXPECT_NEAR(s.stddev, std::sqrt(var), 1e-9 * std::sqrt(var));
}

namespace {

server::ReliabilityScores scores_of(std::vector<double> q) {
    server::ReliabilityScores s;
    for (std::size_t c = 0; c < q.size(); ++c) s.client_ids.push_back(static_cast<int>(c));
    s.q = q;
    s.divergence = q;
    s.mean = std::accumulate(q.begin(), q.end(), 0.0) / static_cast<double>(q.size());
    double v = 0.0;
    for (double x : q) v += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(v / static_cast<double>(q.size()));
    return s;
}

}  // namespace

TEST(DetectNoisy, HandWorkedExample) {
    // mean 2.8, population std 3.6; only 10 clears 2.8 + 0.6 * 3.6 = 4.96.
    const auto d = server::detect_noisy(scores_of({1, 1, 1, 1, 10}), 0.6);
    EXPECT_EQ(d.noisy, (std::set<int>{4}));
    EXPECT_EQ(d.clean, (std::set<int>{0, 1, 2, 3}));
}

TEST(DetectNoisy, ThresholdIsStrict) {
    // mean 2, std 1: a client exactly at mean + 1.0 * std is not flagged.
    const auto d = server::detect_noisy(scores_of({1, 3, 1, 3}), 1.0);
    EXPECT_TRUE(d.noisy.empty());
    EXPECT_EQ(server::detect_noisy(scores_of({1, 3, 1, 3}), 0.99).noisy, (std::set<int>{1, 3}));
}

TEST(DetectNoisy, DegenerateCasesFlagNobody) {
    EXPECT_TRUE(server::detect_noisy(scores_of({2, 2, 2, 2}), 0.6).noisy.empty());
    EXPECT_TRUE(server::detect_noisy(scores_of({5}), 0.6).noisy.empty());
}

TEST(DetectNoisy, PartitionsClients) {
    std::mt19937_64 rng(10);
    std::vector<double> q(30);
    for (auto& v : q) v = std::uniform_real_distribution<double>(0, 10)(rng);
    const auto d = server::detect_noisy(scores_of(q), 0.6);
    EXPECT_EQ(d.noisy.size() + d.clean.size(), 30u);
    for (int c : d.noisy) EXPECT_FALSE(d.clean.count(c));
}

TEST(DetectionHistory, CountsAndSCorrThreshold) {
    server::DetectionHistory h;
    // client 1 flagged in 6 of 10 rounds, client 2 in 7 of 10, client 3 in round 11 only.
    for (int r = 1; r <= 11; ++r) {
        server::Detection d;
        if (r <= 6) d.noisy.insert(1);
        if (r <= 7) d.noisy.insert(2);
        if (r == 11) d.noisy.insert(3);
        h.record(r, d);
    }
    EXPECT_EQ(h.flag_count(1, 10), 6);
    EXPECT_EQ(h.flag_count(2, 10), 7);
    EXPECT_EQ(h.flag_count(3, 10), 0);
    EXPECT_EQ(h.flag_count(3), 1);
    EXPECT_EQ(h.ever_flagged(), (std::set<int>{1, 2, 3}));
    // strictly more than alpha * t_corr = 6 rounds
    EXPECT_EQ(server::select_s_corr(h, 0.6, 10), (std::set<int>{2}));
    EXPECT_EQ(server::select_s_corr(h, 0.5, 10), (std::set<int>{1, 2}));
}

TEST(DetectionHistory, SCorrNeedsEveryRound) {
    server::DetectionHistory h;
    h.record(1, {});
    h.record(3, {});
    EXPECT_THROW(server::select_s_corr(h, 0.6, 3), StateError);
    EXPECT_FALSE(h.has_round(2));
    EXPECT_THROW(h.at(2), StateError);
}

TEST(PenaltyM, ScheduleAndCap) {
    const std::set<int> noisy{2};
    EXPECT_EQ(server::penalty_m(1, 5, noisy, 50, 10), 1.0);
    EXPECT_DOUBLE_EQ(server::penalty_m(2, 5, noisy, 50, 10), 25.0);
    EXPECT_DOUBLE_EQ(server::penalty_m(2, 10, noisy, 50, 10), 50.0);
    EXPECT_DOUBLE_EQ(server::penalty_m(2, 40, noisy, 50, 10), 50.0);
    EXPECT_DOUBLE_EQ(server::penalty_m(2, 1, noisy, 50, 10), 5.0);
}

TEST(LayerwiseWeights, MatchFormulaOracle) {
    std::mt19937_64 rng(11);
    const auto global = random_model(tiny_specs(), rng, 0.3);
    const auto ups = random_updates(6, rng);
    const std::set<int> noisy{1, 4};
    for (auto mode : {server::PenaltyMode::divisor, server::PenaltyMode::literal}) {
        server::ServerConfig cfg;
        cfg.penalty_mode = mode;
        const int round = 3;
        const auto W = server::layerwise_weights(ups, global, noisy, round, cfg);
        ASSERT_EQ(W.num_layers(), global.num_layers());
        ASSERT_EQ(W.num_clients(), 6u);
        for (std::size_t l = 0; l < global.num_layers(); ++l) {
            std::vector<double> raw(6);
            for (std::size_t c = 0; c < 6; ++c) {
                const double m = noisy.count(static_cast<int>(c)) ? std::min(round / cfg.t_k * cfg.tau, cfg.tau) : 1.0;
                const double d = 1.0 + layer_distance_oracle(global, ups[c].params, l);
                const double N = static_cast<double>(ups[c].n_samples);
                raw[c] = mode == server::PenaltyMode::divisor ? N / (m * d) : m * N / d;
            }
            const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
            double row_sum = 0.0;
            for (std::size_t c = 0; c < 6; ++c) {
                EXPECT_NEAR(W.rows[l][c], raw[c] / total, 1e-12);
                EXPECT_GT(W.rows[l][c], 0.0);
                row_sum += W.rows[l][c];
            }
            EXPECT_NEAR(row_sum, 1.0, 1e-12);
        }
    }
}

TEST(LayerwiseWeights, FlaggedClientLosesWeight) {
    std::mt19937_64 rng(12);
    const auto global = random_model(tiny_specs(), rng);
    std::vector<client::ClientUpdate> ups;
    for (int c = 0; c < 4; ++c) ups.push_back(make_update(c, global, 50));
    server::ServerConfig cfg;
    const auto W = server::layerwise_weights(ups, global, {2}, 20, cfg);
    for (const auto& row : W.rows) {
        EXPECT_NEAR(row[2] * cfg.tau, row[0], 1e-12);
        EXPECT_EQ(row[0], row[1]);
    }
}

TEST(AggregateLayerwise, UniformWeightsEqualUnweightedFedAvg) {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const auto ups = random_updates(2 + trial % 9, rng);
        server::WeightMatrix W;
        W.rows.assign(3, std::vector<double>(ups.size(), 1.0 / static_cast<double>(ups.size())));
        const auto a = nn::flatten(server::aggregate_layerwise(ups, W));
        const auto b = nn::flatten(server::aggregate_fedavg(ups, true));
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    }
}

TEST(AggregateLayerwise, EachLayerUsesItsOwnRow) {
    std::mt19937_64 rng(14);
    const auto ups = random_updates(3, rng);
    server::WeightMatrix W;
    W.rows = {{1, 0, 0}, {0, 1, 0}, {0.25, 0.25, 0.5}};
    const auto out = server::aggregate_layerwise(ups, W);
    EXPECT_EQ(out.layers[0].weight, ups[0].params.layers[0].weight);
    EXPECT_EQ(out.layers[1].bias, ups[1].params.layers[1].bias);
    const nn::Tensor mix = 0.25 * ups[0].params.layers[2].weight + 0.25 * ups[1].params.layers[2].weight +
                           0.5 * ups[2].params.layers[2].weight;
    EXPECT_LT((out.layers[2].weight - mix).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AggregateLayerwise, ConservationOnIdenticalUpdates) {
    std::mt19937_64 rng(15);
    const auto m = random_model(tiny_specs(), rng);
    std::vector<client::ClientUpdate> ups;
    for (int c = 0; c < 5; ++c) ups.push_back(make_update(c, m, 10 * (c + 1)));
    server::ServerConfig cfg;
    const auto W = server::layerwise_weights(ups, m, {1, 3}, 4, cfg);
    EXPECT_EQ(nn::flatten(server::aggregate_layerwise(ups, W)), nn::flatten(m));
    EXPECT_EQ(nn::flatten(server::aggregate_trimmed_mean(ups, 20.0)), nn::flatten(m));
}

TEST(AggregateLayerwise, ShapeMismatchRaises) {
    std::mt19937_64 rng(16);
    const auto ups = random_updates(3, rng);
    server::WeightMatrix W;
    W.rows.assign(2, std::vector<double>(3, 1.0 / 3));
    EXPECT_THROW(server::aggregate_layerwise(ups, W), ShapeError);
    W.rows.assign(3, std::vector<double>(2, 0.5));
    EXPECT_THROW(server::aggregate_layerwise(ups, W), ShapeError);
}

TEST(ServerConfig, ValidationNamesKeyAndSymbol) {
    server::ServerConfig c;
    EXPECT_NO_THROW(server::validate(c));
    c.beta = -1;
    try {
        server::validate(c);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.key(), "server.beta");
        EXPECT_NE(std::string(e.what()).find("β"), std::string::npos);
    }
    c = {};
    c.t_corr = 200;
    EXPECT_THROW(server::validate(c), ConfigError);
    c.aggregator = server::Aggregator::fedavg;
    EXPECT_NO_THROW(server::validate(c));
    c = {};
    c.trim_pct = 50;
    EXPECT_THROW(server::validate(c), ConfigError);
    c = {};
    c.num_clients = 0;
    EXPECT_THROW(server::validate(c), ConfigError);
}

TEST(Aggregator, NamesRoundTrip) {
    for (auto a : {server::Aggregator::fedavg, server::Aggregator::trimmed_mean, server::Aggregator::fedprox,
                   server::Aggregator::fed_ncl}) {
        EXPECT_EQ(server::parse_aggregator(server::to_string(a)), a);
    }
    EXPECT_THROW(server::parse_aggregator("krum"), ConfigError);
}
