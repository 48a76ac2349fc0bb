#include "fednoisy/commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "fednoisy/analysis.hpp"
#include "fednoisy/checkpoint.hpp"
#include "fednoisy/errors.hpp"
#include "fednoisy/experiment.hpp"

namespace fednoisy::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

json summary_json(const config::ExperimentConfig& cfg, std::span<const analysis::RoundMetrics> metrics) {
    json s;
    s["aggregator"] = server::to_string(cfg.server.aggregator);
    s["seed"] = cfg.seed;
    s["rounds"] = metrics.size();
    s["final_accuracy"] = metrics.empty() ? 0.0 : metrics.back().test_accuracy;
    s["mean_last10_accuracy"] = analysis::mean_last_accuracy(metrics, 10);
    s["std_last10_accuracy"] = analysis::std_last_accuracy(metrics, 10);

    json noisy = json::array();
    if (!metrics.empty()) {
        for (const auto& c : metrics.front().clients) {
            if (c.noise_rate > 0.0) noisy.push_back(c.client_id);
        }
    }
    s["noisy_clients"] = noisy;

    if (cfg.server.aggregator == server::Aggregator::fed_ncl) {
        const auto q = analysis::detection_quality(metrics);
        s["detection"] = {{"precision", q.precision},
                          {"recall", q.recall},
                          {"true_positives", q.true_positives},
                          {"false_positives", q.false_positives},
                          {"false_negatives", q.false_negatives}};
        json corr = json::array();
        for (const auto& m : metrics) {
            for (int id : m.s_corr) corr.push_back(id);
        }
        s["s_corr"] = corr;
    } else {
        s["detection"] = nullptr;
        s["s_corr"] = json::array();
    }
    return s;
}

std::vector<analysis::RoundMetrics> run_into(const config::ExperimentConfig& cfg,
                                             const experiment::Datasets& data, std::size_t workers) {
    const fs::path out = cfg.output_dir;
    ensure_dir(out);
    open_out(out / "config.json") << config::to_json(cfg).dump(2) << '\n';

    experiment::RunOptions options;
    options.workers = workers;
    if (cfg.output.save_checkpoints) {
        options.observer = [&](const experiment::ExperimentState& state,
                               const experiment::RoundOutcome& outcome) {
            const int round = outcome.metrics.round;
            if (round % cfg.output.checkpoint_every != 0) return;
            checkpoint::Checkpoint cp;
            cp.round = round;
            cp.global = state.global;
            for (const auto& u : outcome.updates) cp.clients.push_back(u.params);
            for (const auto& c : state.clients) cp.noise_rates.push_back(c.noise_rate);
            checkpoint::save(checkpoint::round_dir(out, round), cp);
        };
    }
    const auto metrics = experiment::run_experiment(cfg, data.train, data.test, options);

    analysis::write_metrics(metrics, out / "metrics.csv", analysis::MetricsFormat::csv);
    analysis::write_metrics(metrics, out / "metrics.jsonl", analysis::MetricsFormat::jsonl);
    open_out(out / "summary.json") << summary_json(cfg, metrics).dump(2) << '\n';

    auto timing = open_out(out / "timing.log");
    timing << "round,wall_clock_ms\n";
    for (const auto& m : metrics) timing << m.round << ',' << fmt(m.wall_clock_ms) << '\n';
    return metrics;
}

void write_matrix(const fs::path& path, const nn::Tensor& m) {
    auto out = open_out(path);
    const auto M = m.rows();
    auto name = [&](Eigen::Index i) {
        return i + 1 == M ? std::string("global") : "client_" + std::to_string(i);
    };
    out << "model";
    for (Eigen::Index j = 0; j < M; ++j) out << ',' << name(j);
    out << '\n';
    for (Eigen::Index i = 0; i < M; ++i) {
        out << name(i);
        for (Eigen::Index j = 0; j < M; ++j) out << ',' << fmt(m(i, j));
        out << '\n';
    }
}

}  // namespace

config::ExperimentConfig apply(config::ExperimentConfig cfg, const Overrides& overrides) {
    if (overrides.out) cfg.output_dir = *overrides.out;
    if (overrides.seed) cfg.seed = *overrides.seed;
    config::validate(cfg);
    return cfg;
}

std::size_t default_workers() {
    return std::max(1u, std::thread::hardware_concurrency());
}

void cmd_run(const config::ExperimentConfig& cfg, std::size_t workers) {
    const auto data = experiment::load_datasets(cfg);
    run_into(cfg, data, workers);
}

void cmd_compare(const config::ExperimentConfig& cfg, const std::vector<server::Aggregator>& aggregators,
                 std::size_t workers) {
    if (aggregators.size() < 2) {
        throw ConfigError("compare", "compare needs at least two aggregators");
    }
    std::set<server::Aggregator> seen;
    for (auto a : aggregators) {
        if (!seen.insert(a).second) {
            throw ConfigError("compare", std::string("aggregator listed twice: ") + server::to_string(a));
        }
    }
    std::vector<config::ExperimentConfig> runs;
    for (auto a : aggregators) {
        auto sub = cfg;
        sub.server.aggregator = a;
        sub.output_dir = cfg.output_dir / server::to_string(a);
        config::validate(sub);
        runs.push_back(std::move(sub));
    }

    const auto data = experiment::load_datasets(cfg);
    std::vector<std::vector<analysis::RoundMetrics>> results;
    json summary = json::object();
    for (const auto& sub : runs) {
        results.push_back(run_into(sub, data, workers));
        summary[server::to_string(sub.server.aggregator)] = summary_json(sub, results.back());
    }

    auto out = open_out(cfg.output_dir / "compare.csv");
    out << "round";
    for (auto a : aggregators) out << ',' << server::to_string(a);
    out << '\n';
    for (std::size_t r = 0; r < results.front().size(); ++r) {
        out << results.front()[r].round;
        for (const auto& res : results) out << ',' << fmt(res[r].test_accuracy);
        out << '\n';
    }
    open_out(cfg.output_dir / "compare_summary.json") << summary.dump(2) << '\n';
}

void cmd_noise_preview(const config::ExperimentConfig& cfg, std::ostream& log) {
    const auto data = experiment::load_datasets(cfg);
    const auto clients = experiment::prepare_clients(cfg, data.train);
    ensure_dir(cfg.output_dir);
    auto out = open_out(cfg.output_dir / "noise_profile.csv");
    const char* header = "client,n_samples,noise_rate,realized_flip_fraction";
    out << header << '\n';
    log << header << '\n';
    for (const auto& c : clients) {
        std::ostringstream row;
        row << c.client_id << ',' << c.indices.size() << ',' << fmt(c.noise_rate) << ','
            << fmt(c.flip_fraction());
        out << row.str() << '\n';
        log << row.str() << '\n';
    }
}

void cmd_cka(const config::ExperimentConfig& cfg, const std::vector<fs::path>& checkpoint_dirs) {
    if (checkpoint_dirs.empty()) throw ConfigError("cka", "no checkpoints selected");
    std::vector<checkpoint::Checkpoint> cps;
    for (const auto& d : checkpoint_dirs) cps.push_back(checkpoint::load(d));

    const auto data = experiment::load_datasets(cfg);
    const std::size_t probe_n = std::min(cfg.output.probe_size, data.test.size());
    const nn::Tensor probe = data.test.head(probe_n).features;

    ensure_dir(cfg.output_dir);
    auto depth = open_out(cfg.output_dir / "cka_depth.csv");
    depth << "round,layer,mean_cka_global_noisy,mean_cka_global_clean\n";
    for (const auto& cp : cps) {
        std::vector<nn::ModelParams> models = cp.clients;
        models.push_back(cp.global);
        std::set<int> noisy;
        for (std::size_t c = 0; c < cp.noise_rates.size(); ++c) {
            if (cp.noise_rates[c] > 0.0) noisy.insert(static_cast<int>(c));
        }
        const auto report = analysis::cka_layer_report(models, probe, noisy, "test_head_" + std::to_string(probe_n));

        fs::path dir = cfg.output_dir;
        if (cps.size() > 1) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "round_%04d", cp.round);
            dir = cfg.output_dir / "cka" / buf;
            ensure_dir(dir);
        }
        for (std::size_t i = 0; i < report.layers.size(); ++i) {
            write_matrix(dir / ("cka_layer_" + std::to_string(report.layers[i]) + ".csv"), report.matrices[i]);
            depth << cp.round << ',' << report.layers[i] << ',' << fmt(report.mean_global_noisy[i]) << ','
                  << fmt(report.mean_global_clean[i]) << '\n';
        }
    }
}

int run_main(int argc, char** argv) {
    CLI::App app{"fednoisy: federated learning with noisy clients"};
    app.require_subcommand(1);

    fs::path config_path;
    Overrides overrides;
    std::size_t workers = default_workers();
    std::vector<std::string> aggregator_names;
    std::vector<int> cka_rounds;
    std::vector<fs::path> cka_dirs;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file")->required();
        sub->add_option("--out", overrides.out, "output directory");
        sub->add_option("--seed", overrides.seed, "master seed");
        sub->add_option("--workers", workers, "client training threads")->check(CLI::PositiveNumber);
    };
    auto* run = app.add_subcommand("run", "train one configuration");
    common(run);
    auto* compare = app.add_subcommand("compare", "run several aggregators on identical clients");
    common(compare);
    compare->add_option("--aggregators", aggregator_names, "e.g. fedavg,fed_ncl")->delimiter(',');
    auto* preview = app.add_subcommand("noise-preview", "sample client noise without training");
    common(preview);
    auto* cka = app.add_subcommand("cka", "layer-wise CKA from stored checkpoints");
    common(cka);
    cka->add_option("--round", cka_rounds, "checkpoint round(s) under <out>/checkpoints")->delimiter(',');
    cka->add_option("--checkpoints", cka_dirs, "checkpoint directories");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ExitCode::ok : ExitCode::invalid_config;
    }

    try {
        const auto cfg = apply(config::parse_config(config_path), overrides);
        if (run->parsed()) {
            cmd_run(cfg, workers);
        } else if (compare->parsed()) {
            std::vector<server::Aggregator> aggs = cfg.compare;
            if (!aggregator_names.empty()) {
                aggs.clear();
                for (const auto& n : aggregator_names) {
                    try {
                        aggs.push_back(server::parse_aggregator(n));
                    } catch (const Error& e) {
                        throw ConfigError("aggregators", e.what());
                    }
                }
            }
            cmd_compare(cfg, aggs, workers);
        } else if (preview->parsed()) {
            cmd_noise_preview(cfg, std::cout);
        } else {
            std::vector<fs::path> dirs = cka_dirs;
            for (int r : cka_rounds) dirs.push_back(checkpoint::round_dir(cfg.output_dir, r));
            if (dirs.empty()) {
                throw ConfigError("cka", "pass --round <r> or --checkpoints <dir>");
            }
            cmd_cka(cfg, dirs);
        }
    } catch (const ConfigError& e) {
        std::cerr << "fednoisy: invalid config: " << e.what() << '\n';
        return ExitCode::invalid_config;
    } catch (const std::exception& e) {
        std::cerr << "fednoisy: " << e.what() << '\n';
        return ExitCode::runtime_failure;
    }
    return ExitCode::ok;
}

}  // namespace fednoisy::cli
