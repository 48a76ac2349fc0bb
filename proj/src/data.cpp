#include "fednoisy/data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <boost/math/distributions/normal.hpp>

#include "fednoisy/errors.hpp"
#include "fednoisy/rng.hpp"

namespace fednoisy::data {

namespace {

constexpr int kPresenceRetries = 100;

ClientAssignment make_assignment(const LabeledDataset& ds, int client_id,
                                 std::vector<std::size_t> indices) {
    std::sort(indices.begin(), indices.end());
    ClientAssignment a;
    a.client_id = client_id;
    a.true_labels.reserve(indices.size());
    for (std::size_t idx : indices) a.true_labels.push_back(ds.labels[idx]);
    a.noisy_labels = a.true_labels;
    a.indices = std::move(indices);
    return a;
}

/// Splits `order` into consecutive chunks of the given sizes.
std::vector<ClientAssignment> split_by_sizes(const LabeledDataset& ds,
                                             const std::vector<std::size_t>& order,
                                             const std::vector<std::size_t>& sizes) {
    std::vector<ClientAssignment> clients;
    clients.reserve(sizes.size());
    std::size_t offset = 0;
    for (std::size_t c = 0; c < sizes.size(); ++c) {
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(offset),
                                     order.begin() + static_cast<std::ptrdiff_t>(offset + sizes[c]));
        offset += sizes[c];
        clients.push_back(make_assignment(ds, static_cast<int>(c), std::move(idx)));
    }
    return clients;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

/// Integer sizes summing to `total` proportional to `weights` (largest remainder).
std::vector<std::size_t> apportion(const std::vector<double>& weights, std::size_t total) {
    const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<std::size_t> sizes(weights.size(), 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double share = weights[i] / sum * static_cast<double>(total);
        sizes[i] = static_cast<std::size_t>(std::floor(share));
        assigned += sizes[i];
        remainders.emplace_back(share - std::floor(share), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
    for (std::size_t k = 0; assigned < total; ++k, ++assigned) {
        ++sizes[remainders[k % remainders.size()].second];
    }
    return sizes;
}

const boost::math::normal kStdNormal{};

double phi_cdf(double z) { return boost::math::cdf(kStdNormal, z); }
double phi_pdf(double z) { return boost::math::pdf(kStdNormal, z); }

void check_truncation(double sigma, double a, double b) {
    if (!(sigma > 0.0)) throw DomainError("truncated gaussian needs sigma > 0");
    if (!(a < b)) throw DomainError("truncated gaussian needs a < b");
}

}  // namespace

nn::Tensor LabeledDataset::gather(std::span<const std::size_t> indices) const {
    nn::Tensor out(static_cast<Eigen::Index>(indices.size()), features.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(indices[i]));
    }
    return out;
}

LabeledDataset LabeledDataset::head(std::size_t count) const {
    count = std::min(count, size());
    LabeledDataset out;
    out.num_classes = num_classes;
    out.features = features.topRows(static_cast<Eigen::Index>(count));
    out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(count));
    return out;
}

double ClientAssignment::flip_fraction() const {
    if (indices.empty()) return 0.0;
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < true_labels.size(); ++i) {
        flipped += (true_labels[i] != noisy_labels[i]);
    }
    return static_cast<double>(flipped) / static_cast<double>(indices.size());
}

void validate(const NoiseSpec& spec) {
    std::visit(
        [](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, BernoulliNoise>) {
                if (!(s.p >= 0.0 && s.p <= 1.0)) throw DomainError("bernoulli p must lie in [0, 1]");
                if (!(s.within_rate >= 0.0 && s.within_rate <= 1.0)) {
                    throw DomainError("within_rate must lie in [0, 1]");
                }
            } else if constexpr (std::is_same_v<T, TruncGaussNoise>) {
                check_truncation(s.sigma, s.a, s.b);
                if (s.a < 0.0 || s.b > 1.0) throw DomainError("noise-rate bounds must lie in [0, 1]");
            } else if constexpr (std::is_same_v<T, ExplicitNoise>) {
                for (double r : s.rates) {
                    if (!(r >= 0.0 && r <= 1.0)) throw DomainError("explicit rates must lie in [0, 1]");
                }
            }
        },
        spec);
}

LabeledDataset make_synthetic(int num_classes, std::size_t per_class, std::size_t dims,
                              double spread, std::uint64_t seed) {
    if (num_classes < 2) throw DomainError("synthetic data needs at least 2 classes");
    if (per_class < 1) throw DomainError("synthetic data needs per_class >= 1");
    if (dims < 1) throw DomainError("synthetic data needs dims >= 1");
    if (!(spread >= 0.0)) throw DomainError("synthetic spread must be >= 0");

    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    nn::Tensor centers(num_classes, static_cast<Eigen::Index>(dims));
    for (Eigen::Index i = 0; i < centers.size(); ++i) centers.data()[i] = gauss(rng);

    LabeledDataset ds;
    ds.num_classes = num_classes;
    const auto n = static_cast<Eigen::Index>(per_class) * num_classes;
    ds.features.resize(n, static_cast<Eigen::Index>(dims));
    ds.labels.reserve(static_cast<std::size_t>(n));
    Eigen::Index row = 0;
    for (int k = 0; k < num_classes; ++k) {
        for (std::size_t i = 0; i < per_class; ++i, ++row) {
            for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
                ds.features(row, j) = centers(k, j) + spread * gauss(rng);
            }
            ds.labels.push_back(k);
        }
    }
    return ds;
}

std::vector<ClientAssignment> partition_iid(const LabeledDataset& dataset, std::size_t num_clients,
                                            std::uint64_t seed) {
    if (num_clients < 1) throw DomainError("need at least one client");
    if (num_clients > dataset.size()) {
        throw DomainError("cannot split " + std::to_string(dataset.size()) + " samples among " +
                          std::to_string(num_clients) + " clients");
    }
    Rng rng(seed);
    const auto order = shuffled_indices(dataset.size(), rng);
    std::vector<std::size_t> sizes(num_clients, dataset.size() / num_clients);
    for (std::size_t c = 0; c < dataset.size() % num_clients; ++c) ++sizes[c];
    return split_by_sizes(dataset, order, sizes);
}

std::vector<ClientAssignment> partition_class_skew(const LabeledDataset& dataset,
                                                   std::size_t num_clients, double p_class,
                                                   double alpha_dir, std::uint64_t seed) {
    if (num_clients < 1) throw DomainError("need at least one client");
    if (!(p_class > 0.0 && p_class <= 1.0)) throw DomainError("p_class must lie in (0, 1]");
    if (!(alpha_dir > 0.0)) throw DomainError("alpha_dir must be > 0");
    if (num_clients > dataset.size()) {
        throw DomainError("more clients than samples");
    }

    Rng rng(seed);
    const auto K = static_cast<std::size_t>(dataset.num_classes);

    std::vector<std::vector<std::size_t>> by_class(K);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        by_class[static_cast<std::size_t>(dataset.labels[i])].push_back(i);
    }
    for (auto& members : by_class) std::shuffle(members.begin(), members.end(), rng);

    // presence[j][c]: client c holds class j. Every non-empty class needs a holder
    // and every client needs at least one class.
    std::vector<std::vector<bool>> presence;
    bool feasible = false;
    for (int attempt = 0; attempt < kPresenceRetries && !feasible; ++attempt) {
        presence.assign(K, std::vector<bool>(num_clients, false));
        for (std::size_t j = 0; j < K; ++j) {
            for (std::size_t c = 0; c < num_clients; ++c) presence[j][c] = uniform01(rng) < p_class;
        }
        feasible = true;
        for (std::size_t j = 0; j < K && feasible; ++j) {
            if (by_class[j].empty()) continue;
            feasible = std::find(presence[j].begin(), presence[j].end(), true) != presence[j].end();
        }
        for (std::size_t c = 0; c < num_clients && feasible; ++c) {
            bool any = false;
            for (std::size_t j = 0; j < K; ++j) any = any || (presence[j][c] && !by_class[j].empty());
            feasible = any;
        }
    }
    if (!feasible) {
        throw ConfigError("partition.p_class",
                          "no class-presence matrix covering every class and client after " +
                              std::to_string(kPresenceRetries) + " draws");
    }

    std::gamma_distribution<double> gamma(alpha_dir, 1.0);
    std::vector<std::vector<std::size_t>> owned(num_clients);
    for (std::size_t j = 0; j < K; ++j) {
        const auto& members = by_class[j];
        if (members.empty()) continue;
        std::vector<std::size_t> holders;
        for (std::size_t c = 0; c < num_clients; ++c) {
            if (presence[j][c]) holders.push_back(c);
        }
        std::vector<double> props(holders.size());
        double total = 0.0;
        for (auto& p : props) total += (p = gamma(rng));
        if (!(total > 0.0)) {
            // every gamma draw underflowed (tiny alpha): give the class to one holder
            std::fill(props.begin(), props.end(), 0.0);
            props[static_cast<std::size_t>(rng() % holders.size())] = 1.0;
            total = 1.0;
        }
        const auto counts = apportion(props, members.size());
        std::size_t offset = 0;
        for (std::size_t h = 0; h < holders.size(); ++h) {
            auto& dst = owned[holders[h]];
            dst.insert(dst.end(), members.begin() + static_cast<std::ptrdiff_t>(offset),
                       members.begin() + static_cast<std::ptrdiff_t>(offset + counts[h]));
            offset += counts[h];
        }
    }

    // Dirichlet draws can leave a client empty; move one sample over from the
    // currently largest client.
    for (std::size_t c = 0; c < num_clients; ++c) {
        if (!owned[c].empty()) continue;
        auto donor = std::max_element(owned.begin(), owned.end(),
                                      [](const auto& x, const auto& y) { return x.size() < y.size(); });
        owned[c].push_back(donor->back());
        donor->pop_back();
    }

    std::vector<ClientAssignment> clients;
    clients.reserve(num_clients);
    for (std::size_t c = 0; c < num_clients; ++c) {
        clients.push_back(make_assignment(dataset, static_cast<int>(c), std::move(owned[c])));
    }
    return clients;
}

std::vector<ClientAssignment> partition_quantity_skew(const LabeledDataset& dataset,
                                                      std::size_t num_clients, double sigma_log,
                                                      std::uint64_t seed) {
    if (num_clients < 1) throw DomainError("need at least one client");
    if (num_clients > dataset.size()) throw DomainError("more clients than samples");
    if (!(sigma_log >= 0.0)) throw DomainError("sigma_log must be >= 0");

    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> weights(num_clients);
    for (auto& w : weights) w = std::exp(sigma_log * gauss(rng));

    // one guaranteed sample per client, the rest proportional to the draws
    auto sizes = apportion(weights, dataset.size() - num_clients);
    for (auto& s : sizes) ++s;

    const auto order = shuffled_indices(dataset.size(), rng);
    return split_by_sizes(dataset, order, sizes);
}

std::vector<double> sample_truncated_gaussian(double mu, double sigma, double a, double b,
                                              std::uint64_t seed, std::size_t count) {
    check_truncation(sigma, a, b);
    double lo = (a - mu) / sigma;
    double hi = (b - mu) / sigma;
    // Work in the lower tail where Phi keeps relative precision.
    const bool mirrored = lo > 0.0;
    if (mirrored) {
        std::tie(lo, hi) = std::pair{-hi, -lo};
    }
    const double f_lo = phi_cdf(lo);
    const double f_hi = phi_cdf(hi);
    if (!(f_hi > f_lo)) {
        throw DomainError("truncation interval carries no probability mass");
    }

    Rng rng(seed);
    std::vector<double> out(count);
    const double p_min = std::numeric_limits<double>::min();
    const double p_max = std::nextafter(1.0, 0.0);
    for (auto& x : out) {
        const double p = std::clamp(f_lo + uniform01(rng) * (f_hi - f_lo), p_min, p_max);
        const double z = boost::math::quantile(kStdNormal, p);
        x = std::clamp(mirrored ? mu - sigma * z : mu + sigma * z, a, b);
    }
    return out;
}

double truncated_gaussian_mean(double mu, double sigma, double a, double b) {
    check_truncation(sigma, a, b);
    const double lo = (a - mu) / sigma;
    const double hi = (b - mu) / sigma;
    return mu + sigma * (phi_pdf(lo) - phi_pdf(hi)) / (phi_cdf(hi) - phi_cdf(lo));
}

double truncated_gaussian_cdf(double x, double mu, double sigma, double a, double b) {
    check_truncation(sigma, a, b);
    if (x <= a) return 0.0;
    if (x >= b) return 1.0;
    const double f_lo = phi_cdf((a - mu) / sigma);
    const double f_hi = phi_cdf((b - mu) / sigma);
    return std::clamp((phi_cdf((x - mu) / sigma) - f_lo) / (f_hi - f_lo), 0.0, 1.0);
}

std::vector<double> sample_client_noise_rates(const NoiseSpec& spec, std::size_t num_clients,
                                              std::uint64_t seed) {
    validate(spec);
    return std::visit(
        [&](const auto& s) -> std::vector<double> {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, NoNoise>) {
                return std::vector<double>(num_clients, 0.0);
            } else if constexpr (std::is_same_v<T, BernoulliNoise>) {
                Rng rng(seed);
                std::vector<double> rates(num_clients);
                for (auto& r : rates) r = uniform01(rng) < s.p ? 0.0 : s.within_rate;
                return rates;
            } else if constexpr (std::is_same_v<T, TruncGaussNoise>) {
                return sample_truncated_gaussian(s.mu, s.sigma, s.a, s.b, seed, num_clients);
            } else {
                if (s.rates.size() != num_clients) {
                    throw DomainError("explicit noise lists " + std::to_string(s.rates.size()) +
                                      " rates for " + std::to_string(num_clients) + " clients");
                }
                return s.rates;
            }
        },
        spec);
}

ClientAssignment apply_symmetric_noise(const ClientAssignment& assignment, double rate,
                                       int num_classes, std::uint64_t seed) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw DomainError("noise rate must lie in [0, 1]");
    if (num_classes < 2 && rate > 0.0) {
        throw DomainError("symmetric noise needs at least 2 classes");
    }
    ClientAssignment out = assignment;
    out.noise_rate = rate;
    out.noisy_labels = out.true_labels;
    if (rate == 0.0) return out;

    Rng rng(seed);
    std::uniform_int_distribution<int> other(0, num_classes - 2);
    for (std::size_t i = 0; i < out.true_labels.size(); ++i) {
        if (uniform01(rng) < rate) {
            const int r = other(rng);
            out.noisy_labels[i] = r >= out.true_labels[i] ? r + 1 : r;
        }
    }
    return out;
}

}  // namespace fednoisy::data
