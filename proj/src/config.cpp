#include "fednoisy/config.hpp"

#include <fstream>
#include <set>
#include <string>
#include <utility>

#include "fednoisy/errors.hpp"

namespace fednoisy::config {

namespace {

using nlohmann::json;

template <typename E>
using Names = std::vector<std::pair<E, const char*>>;

const Names<DatasetKind> kDatasetKinds = {{DatasetKind::mnist, "mnist"},
                                          {DatasetKind::synthetic, "synthetic"}};
const Names<PartitionKind> kPartitionKinds = {{PartitionKind::iid, "iid"},
                                              {PartitionKind::class_skew, "class_skew"},
                                              {PartitionKind::quantity_skew, "quantity_skew"}};
const Names<NoiseMode> kNoiseModes = {{NoiseMode::none, "none"},
                                      {NoiseMode::bernoulli, "bernoulli"},
                                      {NoiseMode::trunc_gauss, "trunc_gauss"},
                                      {NoiseMode::explicit_rates, "explicit"}};
const Names<client::LossEvaluator> kEvaluators = {{client::LossEvaluator::global, "global"},
                                                  {client::LossEvaluator::local, "local"}};
const Names<client::CorrectedTraining> kTrainOn = {
    {client::CorrectedTraining::corrected_all, "corrected_all"},
    {client::CorrectedTraining::relabeled_only, "relabeled_only"}};
const Names<server::PenaltyMode> kPenaltyModes = {{server::PenaltyMode::divisor, "divisor"},
                                                  {server::PenaltyMode::literal, "literal"}};

template <typename E>
const char* name_of(const Names<E>& names, E value) {
    for (const auto& [v, n] : names) {
        if (v == value) return n;
    }
    return "?";
}

template <typename E>
E value_of(const Names<E>& names, const std::string& text, const std::string& key) {
    for (const auto& [v, n] : names) {
        if (text == n) return v;
    }
    std::string allowed;
    for (const auto& [v, n] : names) allowed += (allowed.empty() ? "" : ", ") + std::string(n);
    throw ConfigError(key, "unknown value '" + text + "' (expected one of: " + allowed + ")");
}

/// Reads fields out of one JSON object, tracking which keys were consumed so
/// leftovers can be rejected.
class Section {
public:
    Section(const json& doc, std::string prefix) : prefix_(std::move(prefix)) {
        if (doc.is_null()) return;
        if (!doc.is_object()) throw ConfigError(prefix_.empty() ? "<root>" : prefix_, "must be an object");
        doc_ = &doc;
    }

    template <typename T>
    void read(const char* name, T& out) {
        const json* v = take(name);
        if (v == nullptr) return;
        try {
            if constexpr (std::is_same_v<T, std::filesystem::path>) {
                out = v->get<std::string>();
            } else if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
                if (v->is_number_integer() && v->get<long long>() < 0) {
                    throw ConfigError(key(name), "must be a non-negative integer");
                }
                if (!v->is_number_integer()) throw ConfigError(key(name), "must be an integer");
                out = v->get<T>();
            } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
                if (!v->is_number_integer()) throw ConfigError(key(name), "must be an integer");
                out = v->get<T>();
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v->is_number()) throw ConfigError(key(name), "must be a number");
                out = v->get<T>();
            } else {
                out = v->get<T>();
            }
        } catch (const json::exception& e) {
            throw ConfigError(key(name), std::string("wrong type: ") + e.what());
        }
    }

    template <typename E>
    void read_enum(const char* name, const Names<E>& names, E& out) {
        const json* v = take(name);
        if (v == nullptr) return;
        if (!v->is_string()) throw ConfigError(key(name), "must be a string");
        out = value_of(names, v->get<std::string>(), key(name));
    }

    Section child(const char* name) {
        static const json null_doc;
        const json* v = take(name);
        return Section(v ? *v : null_doc, key(name));
    }

    const json* take(const char* name) {
        if (doc_ == nullptr) return nullptr;
        auto it = doc_->find(name);
        if (it == doc_->end()) return nullptr;
        seen_.insert(name);
        return &*it;
    }

    void finish() const {
        if (doc_ == nullptr) return;
        for (const auto& [k, v] : doc_->items()) {
            if (!seen_.count(k)) throw ConfigError(key(k.c_str()), "unknown key");
        }
    }

    std::string key(const char* name) const {
        return prefix_.empty() ? std::string(name) : prefix_ + "." + name;
    }

private:
    const json* doc_ = nullptr;
    std::string prefix_;
    std::set<std::string> seen_;
};

}  // namespace

data::NoiseSpec NoiseConfig::spec() const {
    switch (mode) {
        case NoiseMode::none: return data::NoNoise{};
        case NoiseMode::bernoulli: return data::BernoulliNoise{p, within_rate};
        case NoiseMode::trunc_gauss: return data::TruncGaussNoise{mu, sigma, a, b};
        case NoiseMode::explicit_rates: return data::ExplicitNoise{rates};
    }
    return data::NoNoise{};
}

void validate(const ExperimentConfig& config) {
    const auto& ds = config.dataset;
    if (ds.kind == DatasetKind::synthetic) {
        if (ds.classes < 2) throw ConfigError("dataset.classes", "must be >= 2");
        if (ds.per_class < 1) throw ConfigError("dataset.per_class", "must be >= 1");
        if (ds.test_per_class < 1) throw ConfigError("dataset.test_per_class", "must be >= 1");
        if (ds.dims < 1) throw ConfigError("dataset.dims", "must be >= 1");
        if (!(ds.spread >= 0.0)) throw ConfigError("dataset.spread", "must be >= 0");
        if (static_cast<std::size_t>(ds.classes) * ds.per_class < config.server.num_clients) {
            throw ConfigError("dataset.per_class", "fewer samples than clients");
        }
    } else {
        if (ds.train_images.empty()) throw ConfigError("dataset.train_images", "must be set");
        if (ds.train_labels.empty()) throw ConfigError("dataset.train_labels", "must be set");
        if (ds.test_images.empty()) throw ConfigError("dataset.test_images", "must be set");
        if (ds.test_labels.empty()) throw ConfigError("dataset.test_labels", "must be set");
        if (ds.subset_size != 0 && ds.subset_size < config.server.num_clients) {
            throw ConfigError("dataset.subset_size", "fewer samples than clients");
        }
    }
    for (std::size_t width : config.model.hidden) {
        if (width < 1) throw ConfigError("model.hidden", "layer widths must be >= 1");
    }

    const auto& part = config.partition;
    if (!(part.p_class > 0.0 && part.p_class <= 1.0)) {
        throw ConfigError("partition.p_class", "must lie in (0, 1]");
    }
    if (!(part.alpha_dir > 0.0)) throw ConfigError("partition.alpha_dir", "must be > 0");
    if (!(part.sigma_log >= 0.0)) throw ConfigError("partition.sigma_log", "must be >= 0");

    const auto& noise = config.noise;
    if (!(noise.p >= 0.0 && noise.p <= 1.0)) throw ConfigError("noise.p", "must lie in [0, 1]");
    if (!(noise.within_rate >= 0.0 && noise.within_rate <= 1.0)) {
        throw ConfigError("noise.within_rate", "must lie in [0, 1]");
    }
    if (!(noise.sigma > 0.0)) throw ConfigError("noise.sigma", "must be > 0");
    if (!(noise.a >= 0.0 && noise.a < noise.b && noise.b <= 1.0)) {
        throw ConfigError("noise.a", "bounds must satisfy 0 <= a < b <= 1");
    }
    for (double r : noise.rates) {
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("noise.rates", "rates must lie in [0, 1]");
    }
    if (noise.mode == NoiseMode::explicit_rates && noise.rates.size() != config.server.num_clients) {
        throw ConfigError("noise.rates", "needs one rate per client (" +
                                             std::to_string(config.server.num_clients) + ")");
    }

    client::validate(config.client);
    server::validate(config.server);

    if (config.output.checkpoint_every < 1) {
        throw ConfigError("output.checkpoint_every", "must be >= 1");
    }
    if (config.output.probe_size < 2) throw ConfigError("output.probe_size", "must be >= 2");
    if (config.output_dir.empty()) throw ConfigError("output_dir", "must be set");
}

ExperimentConfig from_json(const json& doc) {
    ExperimentConfig cfg;
    Section root(doc, "");
    root.read("seed", cfg.seed);
    root.read("output_dir", cfg.output_dir);

    {
        auto s = root.child("dataset");
        auto& d = cfg.dataset;
        s.read_enum("kind", kDatasetKinds, d.kind);
        s.read("train_images", d.train_images);
        s.read("train_labels", d.train_labels);
        s.read("test_images", d.test_images);
        s.read("test_labels", d.test_labels);
        s.read("subset_size", d.subset_size);
        s.read("test_size", d.test_size);
        s.read("classes", d.classes);
        s.read("per_class", d.per_class);
        s.read("test_per_class", d.test_per_class);
        s.read("dims", d.dims);
        s.read("spread", d.spread);
        s.finish();
    }
    {
        auto s = root.child("model");
        s.read("hidden", cfg.model.hidden);
        s.finish();
    }
    {
        auto s = root.child("partition");
        auto& p = cfg.partition;
        s.read_enum("kind", kPartitionKinds, p.kind);
        s.read("p_class", p.p_class);
        s.read("alpha_dir", p.alpha_dir);
        s.read("sigma_log", p.sigma_log);
        s.finish();
    }
    {
        auto s = root.child("noise");
        auto& n = cfg.noise;
        s.read_enum("mode", kNoiseModes, n.mode);
        s.read("p", n.p);
        s.read("within_rate", n.within_rate);
        s.read("mu", n.mu);
        s.read("sigma", n.sigma);
        s.read("a", n.a);
        s.read("b", n.b);
        s.read("rates", n.rates);
        s.finish();
    }
    {
        auto s = root.child("client");
        auto& c = cfg.client;
        s.read("lr", c.lr);
        s.read("local_epochs", c.local_epochs);
        s.read("batch_size", c.batch_size);
        s.read("prox_mu", c.prox_mu);
        s.read_enum("h_on", kEvaluators, c.h_on);
        s.read_enum("train_on", kTrainOn, c.train_on);
        s.finish();
    }
    {
        auto s = root.child("server");
        auto& v = cfg.server;
        if (const json* agg = s.take("aggregator")) {
            if (!agg->is_string()) throw ConfigError("server.aggregator", "must be a string");
            v.aggregator = server::parse_aggregator(agg->get<std::string>());
        }
        s.read("trim_pct", v.trim_pct);
        s.read("fedprox_mu", v.fedprox_mu);
        s.read("fedavg_unweighted", v.fedavg_unweighted);
        s.read("beta", v.beta);
        s.read("tau", v.tau);
        s.read("t_k", v.t_k);
        s.read("alpha", v.alpha);
        s.read("t_corr", v.t_corr);
        s.read("eta", v.eta);
        s.read("rounds", v.rounds);
        s.read("num_clients", v.num_clients);
        s.read_enum("penalty_mode", kPenaltyModes, v.penalty_mode);
        s.finish();
    }
    {
        auto s = root.child("output");
        auto& o = cfg.output;
        s.read("save_checkpoints", o.save_checkpoints);
        s.read("checkpoint_every", o.checkpoint_every);
        s.read("probe_size", o.probe_size);
        s.finish();
    }
    {
        auto s = root.child("compare");
        std::vector<std::string> names;
        s.read("aggregators", names);
        if (s.take("aggregators") != nullptr) {
            cfg.compare.clear();
            for (const auto& n : names) cfg.compare.push_back(server::parse_aggregator(n));
        }
        s.finish();
    }
    root.finish();

    validate(cfg);
    return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("<document>", "cannot read config " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("<document>", std::string("malformed JSON in ") + path.string() + ": " + e.what());
    }
    return from_json(doc);
}

json to_json(const ExperimentConfig& cfg) {
    const auto& d = cfg.dataset;
    const auto& p = cfg.partition;
    const auto& n = cfg.noise;
    const auto& c = cfg.client;
    const auto& s = cfg.server;
    const auto& o = cfg.output;
    std::vector<std::string> compare;
    for (auto a : cfg.compare) compare.emplace_back(server::to_string(a));

    return json{
        {"seed", cfg.seed},
        {"output_dir", cfg.output_dir.string()},
        {"dataset",
         {{"kind", name_of(kDatasetKinds, d.kind)},
          {"train_images", d.train_images.string()},
          {"train_labels", d.train_labels.string()},
          {"test_images", d.test_images.string()},
          {"test_labels", d.test_labels.string()},
          {"subset_size", d.subset_size},
          {"test_size", d.test_size},
          {"classes", d.classes},
          {"per_class", d.per_class},
          {"test_per_class", d.test_per_class},
          {"dims", d.dims},
          {"spread", d.spread}}},
        {"model", {{"hidden", cfg.model.hidden}}},
        {"partition",
         {{"kind", name_of(kPartitionKinds, p.kind)},
          {"p_class", p.p_class},
          {"alpha_dir", p.alpha_dir},
          {"sigma_log", p.sigma_log}}},
        {"noise",
         {{"mode", name_of(kNoiseModes, n.mode)},
          {"p", n.p},
          {"within_rate", n.within_rate},
          {"mu", n.mu},
          {"sigma", n.sigma},
          {"a", n.a},
          {"b", n.b},
          {"rates", n.rates}}},
        {"client",
         {{"lr", c.lr},
          {"local_epochs", c.local_epochs},
          {"batch_size", c.batch_size},
          {"prox_mu", c.prox_mu},
          {"h_on", name_of(kEvaluators, c.h_on)},
          {"train_on", name_of(kTrainOn, c.train_on)}}},
        {"server",
         {{"aggregator", server::to_string(s.aggregator)},
          {"trim_pct", s.trim_pct},
          {"fedprox_mu", s.fedprox_mu},
          {"fedavg_unweighted", s.fedavg_unweighted},
          {"beta", s.beta},
          {"tau", s.tau},
          {"t_k", s.t_k},
          {"alpha", s.alpha},
          {"t_corr", s.t_corr},
          {"eta", s.eta},
          {"rounds", s.rounds},
          {"num_clients", s.num_clients},
          {"penalty_mode", name_of(kPenaltyModes, s.penalty_mode)}}},
        {"output",
         {{"save_checkpoints", o.save_checkpoints},
          {"checkpoint_every", o.checkpoint_every},
          {"probe_size", o.probe_size}}},
        {"compare", {{"aggregators", compare}}},
    };
}

}  // namespace fednoisy::config
