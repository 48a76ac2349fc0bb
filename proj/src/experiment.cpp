#include "fednoisy/experiment.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <thread>

#include "fednoisy/errors.hpp"
#include "fednoisy/rng.hpp"

namespace fednoisy::experiment {

using config::DatasetKind;
using config::PartitionKind;
using server::Aggregator;

Datasets load_datasets(const config::ExperimentConfig& config) {
    const auto& d = config.dataset;
    Datasets out;
    if (d.kind == DatasetKind::synthetic) {
        // One draw, split per class so train and test share the class centres.
        const auto all = data::make_synthetic(d.classes, d.per_class + d.test_per_class, d.dims,
                                              d.spread, derive_seed(config.seed, Stream::synthetic));
        std::vector<std::size_t> train_rows, test_rows;
        const std::size_t block = d.per_class + d.test_per_class;
        for (std::size_t i = 0; i < all.size(); ++i) {
            (i % block < d.per_class ? train_rows : test_rows).push_back(i);
        }
        auto take = [&](const std::vector<std::size_t>& rows) {
            data::LabeledDataset ds;
            ds.num_classes = all.num_classes;
            ds.features = all.gather(rows);
            for (auto r : rows) ds.labels.push_back(all.labels[r]);
            return ds;
        };
        out.train = take(train_rows);
        out.test = take(test_rows);
        return out;
    }
    out.train = data::load_idx(d.train_images, d.train_labels);
    out.test = data::load_idx(d.test_images, d.test_labels);
    if (d.subset_size != 0) out.train = out.train.head(d.subset_size);
    if (d.test_size != 0) out.test = out.test.head(d.test_size);
    return out;
}

std::vector<data::ClientAssignment> prepare_clients(const config::ExperimentConfig& config,
                                                    const data::LabeledDataset& train) {
    const std::size_t C = config.server.num_clients;
    const auto part_seed = derive_seed(config.seed, Stream::partition);
    std::vector<data::ClientAssignment> clients;
    switch (config.partition.kind) {
        case PartitionKind::iid:
            clients = data::partition_iid(train, C, part_seed);
            break;
        case PartitionKind::class_skew:
            clients = data::partition_class_skew(train, C, config.partition.p_class,
                                                 config.partition.alpha_dir, part_seed);
            break;
        case PartitionKind::quantity_skew:
            clients = data::partition_quantity_skew(train, C, config.partition.sigma_log, part_seed);
            break;
    }
    const auto rates = data::sample_client_noise_rates(config.noise.spec(), C,
                                                       derive_seed(config.seed, Stream::noise_rates));
    for (std::size_t c = 0; c < C; ++c) {
        clients[c] = data::apply_symmetric_noise(
            clients[c], rates[c], train.num_classes,
            derive_seed(config.seed, Stream::label_noise, static_cast<std::uint64_t>(c)));
    }
    return clients;
}

nn::ModelParams initial_model(const config::ExperimentConfig& config,
                              const data::LabeledDataset& train) {
    const auto specs = nn::mlp_specs(train.dims(), config.model.hidden,
                                     static_cast<std::size_t>(train.num_classes));
    return nn::init_params(specs, derive_seed(config.seed, Stream::init));
}

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    std::vector<std::exception_ptr> errors(count);
    auto body = [&](std::size_t i) {
        try {
            fn(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    workers = std::max<std::size_t>(1, std::min(workers, count));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) body(i);
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

ExperimentState::ExperimentState(config::ExperimentConfig cfg,
                                 const data::LabeledDataset& train_set,
                                 const data::LabeledDataset& test_set, std::size_t worker_count)
    : config(std::move(cfg)), train(&train_set), test(&test_set), workers(worker_count) {
    config::validate(config);
    clients = prepare_clients(config, train_set);
    training_views = clients;
    global = initial_model(config, train_set);
}

RoundOutcome run_round(ExperimentState& state, int round) {
    const auto started = std::chrono::steady_clock::now();
    const auto& cfg = state.config;
    const std::size_t C = state.clients.size();

    client::ClientConfig local_cfg = cfg.client;
    if (cfg.server.aggregator == Aggregator::fedprox) local_cfg.prox_mu = cfg.server.fedprox_mu;

    RoundOutcome outcome;
    outcome.updates.resize(C);
    parallel_for(C, state.workers, [&](std::size_t c) {
        outcome.updates[c] = client::local_train(
            state.global, state.training_views[c], *state.train, local_cfg, round,
            derive_seed(cfg.seed, Stream::local_train, static_cast<std::uint64_t>(c),
                        static_cast<std::uint64_t>(round)));
    });

    const auto scores = server::reliability_scores(outcome.updates, state.global);
    auto& metrics = outcome.metrics;
    metrics.round = round;

    server::Detection detection;
    nn::ModelParams next;
    switch (cfg.server.aggregator) {
        case Aggregator::fed_ncl: {
            detection = server::detect_noisy(scores, cfg.server.beta);
            state.history.record(round, detection);
            const auto W = server::layerwise_weights(outcome.updates, state.global, detection.noisy,
                                                     round, cfg.server);
            next = server::aggregate_layerwise(outcome.updates, W);
            metrics.layer_weights = W.rows;
            break;
        }
        case Aggregator::fedavg:
        case Aggregator::fedprox: {
            next = server::aggregate_fedavg(outcome.updates, cfg.server.fedavg_unweighted);
            std::vector<double> w(C);
            double total = 0.0;
            for (const auto& u : outcome.updates) total += static_cast<double>(u.n_samples);
            for (std::size_t c = 0; c < C; ++c) {
                w[c] = cfg.server.fedavg_unweighted
                           ? 1.0 / static_cast<double>(C)
                           : static_cast<double>(outcome.updates[c].n_samples) / total;
            }
            metrics.layer_weights.assign(next.num_layers(), w);
            break;
        }
        case Aggregator::trimmed_mean:
            next = server::aggregate_trimmed_mean(outcome.updates, cfg.server.trim_pct);
            break;
    }
    if (!nn::all_finite(next)) {
        throw NumericError("aggregated model is non-finite in round " + std::to_string(round));
    }

    std::vector<std::size_t> relabeled(C, 0);
    std::vector<bool> corrected_now(C, false);
    if (cfg.server.aggregator == Aggregator::fed_ncl && round == cfg.server.t_corr) {
        const auto selected = server::select_s_corr(state.history, cfg.server.alpha, cfg.server.t_corr);
        for (int id : selected) {
            const auto c = static_cast<std::size_t>(id);
            auto fix = client::apply_label_correction(state.clients[c], next, *state.train,
                                                      cfg.server.eta);
            state.clients[c] = fix.assignment;
            if (cfg.client.train_on == client::CorrectedTraining::relabeled_only && fix.relabeled > 0) {
                state.training_views[c] = client::subset(fix.assignment, fix.relabeled_mask);
            } else {
                state.training_views[c] = fix.assignment;
            }
            relabeled[c] = fix.relabeled;
            corrected_now[c] = true;
            state.corrected.insert(id);
            metrics.s_corr.push_back(id);
        }
    }

    state.global = std::move(next);
    metrics.test_accuracy = analysis::evaluate_accuracy(state.global, *state.test);
    metrics.clients.reserve(C);
    for (std::size_t c = 0; c < C; ++c) {
        const auto& u = outcome.updates[c];
        analysis::ClientRoundRecord rec;
        rec.client_id = u.client_id;
        rec.n_samples = u.n_samples;
        rec.noise_rate = state.clients[c].noise_rate;
        rec.divergence = scores.divergence[c];
        rec.h = u.h;
        rec.q = scores.q[c];
        rec.flagged = detection.noisy.count(u.client_id) > 0;
        rec.corrected = corrected_now[c];
        rec.relabeled = relabeled[c];
        metrics.clients.push_back(rec);
    }
    metrics.wall_clock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return outcome;
}

std::vector<analysis::RoundMetrics> run_experiment(const config::ExperimentConfig& config,
                                                   const data::LabeledDataset& train,
                                                   const data::LabeledDataset& test,
                                                   const RunOptions& options) {
    ExperimentState state(config, train, test, options.workers);
    std::vector<analysis::RoundMetrics> metrics;
    metrics.reserve(static_cast<std::size_t>(config.server.rounds));
    for (int round = 1; round <= config.server.rounds; ++round) {
        auto outcome = run_round(state, round);
        if (options.observer) options.observer(state, outcome);
        metrics.push_back(std::move(outcome.metrics));
    }
    return metrics;
}

}  // namespace fednoisy::experiment
