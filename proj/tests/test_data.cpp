#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <boost/math/distributions/chi_squared.hpp>
#include <zlib.h>

#include "fednoisy/data.hpp"
#include "fednoisy/errors.hpp"
#include "test_helpers.hpp"

using namespace fednoisy;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("fednoisy_test_data_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>(v >> s));
}

std::vector<unsigned char> idx_images(std::uint32_t magic, std::uint32_t n, std::uint32_t rows,
                                      std::uint32_t cols, std::size_t payload) {
    std::vector<unsigned char> b;
    put_be32(b, magic);
    put_be32(b, n);
    put_be32(b, rows);
    put_be32(b, cols);
    for (std::size_t i = 0; i < payload; ++i) b.push_back(static_cast<unsigned char>(i * 37 % 256));
    return b;
}

std::vector<unsigned char> idx_labels(std::uint32_t magic, const std::vector<unsigned char>& labels) {
    std::vector<unsigned char> b;
    put_be32(b, magic);
    put_be32(b, static_cast<std::uint32_t>(labels.size()));
    b.insert(b.end(), labels.begin(), labels.end());
    return b;
}

void write_raw(const fs::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_gz(const fs::path& p, const std::vector<unsigned char>& bytes) {
    gzFile f = gzopen(p.string().c_str(), "wb");
    ASSERT_NE(f, nullptr);
    gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(f);
}

// Standard normal CDF from erfc, kept separate from the library's Boost path.
double phi_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
double phi_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }

double trunc_mean_oracle(double mu, double sigma, double a, double b) {
    const double al = (a - mu) / sigma, be = (b - mu) / sigma;
    return mu + sigma * (phi_pdf(al) - phi_pdf(be)) / (phi_cdf(be) - phi_cdf(al));
}

double trunc_cdf_oracle(double x, double mu, double sigma, double a, double b) {
    if (x <= a) return 0.0;
    if (x >= b) return 1.0;
    const double lo = phi_cdf((a - mu) / sigma);
    return (phi_cdf((x - mu) / sigma) - lo) / (phi_cdf((b - mu) / sigma) - lo);
}

data::LabeledDataset balanced(int classes, std::size_t per_class, std::size_t dims = 2) {
    data::LabeledDataset ds;
    ds.num_classes = classes;
    ds.features = nn::Tensor::Zero(static_cast<Eigen::Index>(classes * per_class), static_cast<Eigen::Index>(dims));
    for (int k = 0; k < classes; ++k) {
        for (std::size_t i = 0; i < per_class; ++i) ds.labels.push_back(k);
    }
    for (Eigen::Index r = 0; r < ds.features.rows(); ++r) ds.features(r, 0) = static_cast<double>(r);
    return ds;
}

void expect_disjoint_cover(const std::vector<data::ClientAssignment>& clients, std::size_t n) {
    std::vector<int> seen(n, 0);
    for (const auto& c : clients) {
        for (auto i : c.indices) {
            ASSERT_LT(i, n);
            ++seen[i];
        }
    }
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(seen[i], 1) << "sample " << i;
}

}  // namespace

TEST(LoadIdx, ReadsRawAndGzipIdentically) {
    const auto dir = scratch_dir("roundtrip");
    const std::vector<unsigned char> labels{3, 1, 4};
    const auto images = idx_images(0x803, 3, 2, 2, 12);
    write_raw(dir / "img", images);
    write_raw(dir / "lab", idx_labels(0x801, labels));
    write_gz(dir / "img.gz", images);
    write_gz(dir / "lab.gz", idx_labels(0x801, labels));

    const auto raw = data::load_idx(dir / "img", dir / "lab");
    const auto gz = data::load_idx(dir / "img.gz", dir / "lab.gz");
    EXPECT_EQ(raw.size(), 3u);
    EXPECT_EQ(raw.dims(), 4u);
    EXPECT_EQ(raw.labels, (std::vector<int>{3, 1, 4}));
    EXPECT_EQ(raw.features, gz.features);
    EXPECT_EQ(raw.labels, gz.labels);
    EXPECT_DOUBLE_EQ(raw.features(0, 1), 37.0 / 255.0);
    EXPECT_GE(raw.features.minCoeff(), 0.0);
    EXPECT_LE(raw.features.maxCoeff(), 1.0);
}

TEST(LoadIdx, BadMagicIsFormatError) {
    const auto dir = scratch_dir("magic");
    write_raw(dir / "img", idx_images(0x804, 1, 2, 2, 4));
    write_raw(dir / "lab", idx_labels(0x801, {0}));
    EXPECT_THROW(data::load_idx(dir / "img", dir / "lab"), FormatError);
}

TEST(LoadIdx, TruncatedFileIsFormatError) {
    const auto dir = scratch_dir("trunc");
    write_raw(dir / "img", idx_images(0x803, 3, 2, 2, 10));
    write_raw(dir / "lab", idx_labels(0x801, {0, 1, 2}));
    EXPECT_THROW(data::load_idx(dir / "img", dir / "lab"), FormatError);
}

TEST(LoadIdx, CountMismatchIsConsistencyError) {
    const auto dir = scratch_dir("count");
    write_raw(dir / "img", idx_images(0x803, 3, 2, 2, 12));
    write_raw(dir / "lab", idx_labels(0x801, {0, 1}));
    EXPECT_THROW(data::load_idx(dir / "img", dir / "lab"), ConsistencyError);
}

TEST(LoadIdx, MissingFileIsIoError) {
    const auto dir = scratch_dir("missing");
    EXPECT_THROW(data::load_idx(dir / "nope", dir / "nope2"), IoError);
}

TEST(LoadIdx, BundledMnistSubset) {
    const fs::path root = FEDNOISY_SOURCE_DIR;
    const auto train = data::load_idx(root / "data/mnist/train-images-idx3-ubyte.gz",
                                      root / "data/mnist/train-labels-idx1-ubyte.gz");
    EXPECT_GE(train.size(), 2000u);
    EXPECT_EQ(train.dims(), 784u);
    std::set<int> classes(train.labels.begin(), train.labels.end());
    EXPECT_EQ(classes.size(), 10u);
}

TEST(MakeSynthetic, ShapeAndDeterminism) {
    const auto a = data::make_synthetic(4, 25, 6, 0.5, 9);
    const auto b = data::make_synthetic(4, 25, 6, 0.5, 9);
    EXPECT_EQ(a.size(), 100u);
    EXPECT_EQ(a.dims(), 6u);
    EXPECT_EQ(a.features, b.features);
    for (int k = 0; k < 4; ++k) EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), k), 25);
    EXPECT_THROW(data::make_synthetic(1, 25, 6, 0.5, 9), DomainError);
}

TEST(MakeSynthetic, ZeroSpreadCollapsesOntoCenters) {
    const auto ds = data::make_synthetic(3, 5, 4, 0.0, 2);
    for (Eigen::Index r = 0; r < ds.features.rows(); ++r) {
        const Eigen::Index first = (r / 5) * 5;
        EXPECT_EQ(ds.features.row(r), ds.features.row(first));
    }
}

TEST(PartitionIid, DisjointCoverWithBalancedSizes) {
    const auto ds = balanced(10, 203);
    const auto clients = data::partition_iid(ds, 20, 5);
    ASSERT_EQ(clients.size(), 20u);
    expect_disjoint_cover(clients, ds.size());
    std::size_t lo = ds.size(), hi = 0;
    for (std::size_t c = 0; c < clients.size(); ++c) {
        EXPECT_EQ(clients[c].client_id, static_cast<int>(c));
        lo = std::min(lo, clients[c].size());
        hi = std::max(hi, clients[c].size());
        EXPECT_EQ(clients[c].true_labels, clients[c].noisy_labels);
        for (std::size_t i = 0; i < clients[c].size(); ++i) {
            EXPECT_EQ(clients[c].true_labels[i], ds.labels[clients[c].indices[i]]);
        }
    }
    EXPECT_LE(hi - lo, 1u);
    EXPECT_EQ(clients, data::partition_iid(ds, 20, 5));
    EXPECT_NE(clients, data::partition_iid(ds, 20, 6));
}

TEST(PartitionIid, TooManyClients) {
    EXPECT_THROW(data::partition_iid(balanced(2, 2), 5, 1), DomainError);
}

TEST(PartitionClassSkew, CoversAndEveryClientHasData) {
    const auto ds = balanced(10, 200);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto clients = data::partition_class_skew(ds, 20, 0.3, 0.5, seed);
        expect_disjoint_cover(clients, ds.size());
        for (const auto& c : clients) EXPECT_GE(c.size(), 1u);
    }
}

TEST(PartitionClassSkew, LowPresenceSkewsClassHistograms) {
    const auto ds = balanced(10, 200);
    const auto clients = data::partition_class_skew(ds, 20, 0.2, 1.0, 3);
    std::size_t missing = 0;
    for (const auto& c : clients) {
        std::set<int> held(c.true_labels.begin(), c.true_labels.end());
        missing += 10 - held.size();
    }
    EXPECT_GT(missing, 20u * 5);
}

TEST(PartitionClassSkew, FullPresenceHugeAlphaApproachesIid) {
    const auto ds = balanced(10, 400);
    const auto skew = data::partition_class_skew(ds, 20, 1.0, 1e6, 7);
    const auto iid = data::partition_iid(ds, 20, 7);
    auto histogram = [](const data::ClientAssignment& c) {
        std::vector<double> h(10, 0.0);
        for (int y : c.true_labels) h[static_cast<std::size_t>(y)] += 1.0;
        for (auto& v : h) v /= static_cast<double>(c.size());
        return h;
    };
    // A single IID draw has ~0.02 sampling noise per cell at 200 samples per
    // client, so the reference is the histogram IID splits settle on: the
    // average over partition_iid's clients.
    std::vector<double> reference(10, 0.0);
    for (const auto& c : iid) {
        const auto h = histogram(c);
        for (std::size_t k = 0; k < 10; ++k) reference[k] += h[k] / 20.0;
    }
    for (std::size_t c = 0; c < 20; ++c) {
        const auto hs = histogram(skew[c]);
        for (std::size_t k = 0; k < 10; ++k) EXPECT_NEAR(hs[k], reference[k], 0.05) << "client " << c;
    }
}

TEST(PartitionClassSkew, InvalidParameters) {
    const auto ds = balanced(4, 10);
    EXPECT_THROW(data::partition_class_skew(ds, 4, 0.0, 1.0, 1), DomainError);
    EXPECT_THROW(data::partition_class_skew(ds, 4, 1.5, 1.0, 1), DomainError);
    EXPECT_THROW(data::partition_class_skew(ds, 4, 0.5, 0.0, 1), DomainError);
}

TEST(PartitionQuantitySkew, CoversWithPositiveSizes) {
    const auto ds = balanced(10, 100);
    const auto clients = data::partition_quantity_skew(ds, 20, 1.0, 4);
    expect_disjoint_cover(clients, ds.size());
    std::size_t lo = ds.size(), hi = 0;
    for (const auto& c : clients) {
        lo = std::min(lo, c.size());
        hi = std::max(hi, c.size());
    }
    EXPECT_GE(lo, 1u);
    EXPECT_GT(hi, 2 * lo);
}

TEST(PartitionQuantitySkew, ZeroSigmaIsBalanced) {
    const auto ds = balanced(10, 100);
    const auto clients = data::partition_quantity_skew(ds, 20, 0.0, 4);
    for (const auto& c : clients) EXPECT_NEAR(static_cast<double>(c.size()), 50.0, 1.0);
}

TEST(TruncatedGaussian, DrawsRespectBounds) {
    const auto draws = data::sample_truncated_gaussian(0.3, 0.4, 0.0, 1.0, 3, 20000);
    for (double x : draws) {
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0);
    }
}

TEST(TruncatedGaussian, MeanMatchesAnalyticMoment) {
    const auto draws = data::sample_truncated_gaussian(0.4, 0.45, 0.0, 1.0, 11, 100000);
    const double mean = std::accumulate(draws.begin(), draws.end(), 0.0) / static_cast<double>(draws.size());
    EXPECT_NEAR(mean, trunc_mean_oracle(0.4, 0.45, 0.0, 1.0), 0.01);
    EXPECT_NEAR(data::truncated_gaussian_mean(0.4, 0.45, 0.0, 1.0), trunc_mean_oracle(0.4, 0.45, 0.0, 1.0),
                1e-12);
}

TEST(TruncatedGaussian, KolmogorovSmirnovAgainstAnalyticCdf) {
    struct Case {
        double mu, sigma, a, b;
    };
    for (const Case c : {Case{0.3, 0.4, 0.0, 1.0}, Case{0.4, 0.45, 0.0, 1.0}, Case{2.0, 0.3, 0.0, 1.0}}) {
        auto draws = data::sample_truncated_gaussian(c.mu, c.sigma, c.a, c.b, 17, 10000);
        std::sort(draws.begin(), draws.end());
        const double n = static_cast<double>(draws.size());
        double d = 0.0;
        for (std::size_t i = 0; i < draws.size(); ++i) {
            const double F = trunc_cdf_oracle(draws[i], c.mu, c.sigma, c.a, c.b);
            d = std::max({d, F - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - F});
        }
        EXPECT_LT(d, 1.6276 / std::sqrt(n)) << "mu " << c.mu;
    }
}

TEST(TruncatedGaussian, AnalyticCdfMatchesOracle) {
    for (double x : {-0.5, 0.0, 0.1, 0.5, 0.9, 1.0, 1.5}) {
        EXPECT_NEAR(data::truncated_gaussian_cdf(x, 0.3, 0.4, 0.0, 1.0), trunc_cdf_oracle(x, 0.3, 0.4, 0.0, 1.0),
                    1e-12);
    }
}

TEST(TruncatedGaussian, InvalidParameters) {
    EXPECT_THROW(data::sample_truncated_gaussian(0.3, 0.0, 0.0, 1.0, 1, 10), DomainError);
    EXPECT_THROW(data::sample_truncated_gaussian(0.3, 0.4, 1.0, 0.0, 1, 10), DomainError);
}

TEST(ClientNoiseRates, BernoulliCleanFraction) {
    const auto rates = data::sample_client_noise_rates(data::BernoulliNoise{0.7, 1.0}, 10000, 5);
    std::size_t clean = 0;
    for (double r : rates) {
        EXPECT_TRUE(r == 0.0 || r == 1.0);
        clean += r == 0.0;
    }
    EXPECT_NEAR(static_cast<double>(clean) / 1e4, 0.7, 0.02);
}

TEST(ClientNoiseRates, BernoulliPOneIsAllClean) {
    const auto rates = data::sample_client_noise_rates(data::BernoulliNoise{1.0, 1.0}, 20, 5);
    for (double r : rates) EXPECT_EQ(r, 0.0);
}

TEST(ClientNoiseRates, WithinRateIsUsedForNoisyClients) {
    const auto rates = data::sample_client_noise_rates(data::BernoulliNoise{0.5, 0.4}, 200, 2);
    for (double r : rates) EXPECT_TRUE(r == 0.0 || r == 0.4);
}

TEST(ClientNoiseRates, TruncGaussMeanMatchesAnalytic) {
    const auto rates = data::sample_client_noise_rates(data::TruncGaussNoise{0.3, 0.4, 0.0, 1.0}, 10000, 8);
    double sum = 0.0;
    for (double r : rates) {
        EXPECT_GE(r, 0.0);
        EXPECT_LE(r, 1.0);
        sum += r;
    }
    EXPECT_NEAR(sum / 1e4, trunc_mean_oracle(0.3, 0.4, 0.0, 1.0), 0.01);
}

TEST(ClientNoiseRates, ExplicitAndNone) {
    const auto rates = data::sample_client_noise_rates(data::ExplicitNoise{{0.0, 0.5, 0.25}}, 3, 1);
    EXPECT_EQ(rates, (std::vector<double>{0.0, 0.5, 0.25}));
    EXPECT_THROW(data::sample_client_noise_rates(data::ExplicitNoise{{0.0, 0.5}}, 3, 1), DomainError);
    const auto none = data::sample_client_noise_rates(data::NoNoise{}, 4, 1);
    EXPECT_EQ(none, std::vector<double>(4, 0.0));
}

TEST(NoiseSpecValidate, RejectsOutOfRange) {
    EXPECT_THROW(data::validate(data::BernoulliNoise{1.2, 1.0}), DomainError);
    EXPECT_THROW(data::validate(data::BernoulliNoise{0.5, -0.1}), DomainError);
    EXPECT_THROW(data::validate(data::TruncGaussNoise{0.3, -0.4, 0.0, 1.0}), DomainError);
    EXPECT_THROW(data::validate(data::ExplicitNoise{{1.5}}), DomainError);
    EXPECT_NO_THROW(data::validate(data::TruncGaussNoise{}));
}

namespace {

data::ClientAssignment big_client(std::size_t n, int classes) {
    data::ClientAssignment a;
    for (std::size_t i = 0; i < n; ++i) {
        a.indices.push_back(i);
        a.true_labels.push_back(static_cast<int>(i % static_cast<std::size_t>(classes)));
    }
    a.noisy_labels = a.true_labels;
    return a;
}

}  // namespace

TEST(SymmetricNoise, ZeroRateIsIdentity) {
    const auto a = big_client(500, 10);
    const auto b = data::apply_symmetric_noise(a, 0.0, 10, 1);
    EXPECT_EQ(b.noisy_labels, a.true_labels);
    EXPECT_EQ(b.flip_fraction(), 0.0);
}

TEST(SymmetricNoise, FullRateFlipsEverything) {
    const auto b = data::apply_symmetric_noise(big_client(500, 10), 1.0, 10, 1);
    for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NE(b.noisy_labels[i], b.true_labels[i]);
    EXPECT_EQ(b.noise_rate, 1.0);
}

TEST(SymmetricNoise, RateAndUniformWrongClassChiSquared) {
    const int K = 10;
    const auto b = data::apply_symmetric_noise(big_client(10000, K), 0.4, K, 123);
    EXPECT_NEAR(b.flip_fraction(), 0.4, 0.02);

    // Offset of the wrong class relative to the true one: uniform on 1..K-1.
    std::vector<double> counts(K - 1, 0.0);
    double flips = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (b.noisy_labels[i] == b.true_labels[i]) continue;
        const int offset = ((b.noisy_labels[i] - b.true_labels[i]) % K + K) % K;
        counts[static_cast<std::size_t>(offset - 1)] += 1.0;
        flips += 1.0;
    }
    double chi2 = 0.0;
    const double expected = flips / (K - 1);
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    const boost::math::chi_squared dist(K - 2);
    EXPECT_LT(chi2, boost::math::quantile(dist, 0.99));
}

TEST(SymmetricNoise, DeterministicPerSeed) {
    const auto a = big_client(300, 5);
    EXPECT_EQ(data::apply_symmetric_noise(a, 0.3, 5, 9), data::apply_symmetric_noise(a, 0.3, 5, 9));
    EXPECT_NE(data::apply_symmetric_noise(a, 0.3, 5, 9).noisy_labels,
              data::apply_symmetric_noise(a, 0.3, 5, 10).noisy_labels);
}

TEST(SymmetricNoise, InvalidArguments) {
    const auto a = big_client(10, 2);
    EXPECT_THROW(data::apply_symmetric_noise(a, 1.1, 2, 1), DomainError);
    EXPECT_THROW(data::apply_symmetric_noise(a, -0.1, 2, 1), DomainError);
    EXPECT_THROW(data::apply_symmetric_noise(a, 0.5, 1, 1), DomainError);
}

TEST(LabeledDataset, GatherAndHead) {
    const auto ds = balanced(3, 4);
    const std::vector<std::size_t> rows{5, 0};
    const auto g = ds.gather(rows);
    EXPECT_EQ(g.rows(), 2);
    EXPECT_EQ(g(0, 0), 5.0);
    const auto h = ds.head(5);
    EXPECT_EQ(h.size(), 5u);
    EXPECT_EQ(ds.head(100).size(), ds.size());
}
