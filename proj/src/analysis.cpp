#include "fednoisy/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fednoisy/errors.hpp"

namespace fednoisy::analysis {

namespace {

nn::Tensor centered(const nn::Tensor& m) {
    return m.rowwise() - m.colwise().mean();
}

}  // namespace

double linear_cka(const nn::Tensor& x, const nn::Tensor& y) {
    if (x.rows() != y.rows()) {
        throw ShapeError("CKA inputs have different sample counts (" + std::to_string(x.rows()) +
                         " vs " + std::to_string(y.rows()) + ")");
    }
    if (x.rows() < 2) throw DomainError("CKA needs at least 2 samples");
    const nn::Tensor xc = centered(x);
    const nn::Tensor yc = centered(y);
    const double xx = (xc.transpose() * xc).norm();
    const double yy = (yc.transpose() * yc).norm();
    if (!(xx > 0.0) || !(yy > 0.0)) {
        throw DegenerateInputError("CKA input has zero feature variance");
    }
    const double xy = (yc.transpose() * xc).squaredNorm();
    return xy / (xx * yy);
}

CkaReport cka_layer_report(std::span<const nn::ModelParams> models, const nn::Tensor& probe,
                           const std::set<int>& noisy_ids, std::string probe_id) {
    if (models.size() < 2) throw DomainError("CKA report needs at least two models");
    if (probe.rows() == 0) throw DomainError("CKA probe set is empty");
    for (const auto& m : models) nn::require_congruent(models.front(), m);

    const std::size_t M = models.size();
    const std::size_t L = models.front().num_layers();
    std::vector<std::vector<nn::Tensor>> acts;  // [model][layer]
    acts.reserve(M);
    for (const auto& m : models) acts.push_back(nn::forward(m, probe).activations);

    CkaReport report;
    report.probe_id = std::move(probe_id);
    const std::size_t global = M - 1;
    for (std::size_t l = 0; l < L; ++l) {
        report.layers.push_back(l + 1);
        nn::Tensor mat = nn::Tensor::Identity(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(M));
        for (std::size_t i = 0; i < M; ++i) {
            for (std::size_t j = i + 1; j < M; ++j) {
                const double v = linear_cka(acts[i][l], acts[j][l]);
                mat(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
                mat(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
            }
        }
        double noisy_sum = 0.0, clean_sum = 0.0;
        std::size_t noisy_n = 0, clean_n = 0;
        for (std::size_t c = 0; c < global; ++c) {
            const double v = mat(static_cast<Eigen::Index>(global), static_cast<Eigen::Index>(c));
            if (noisy_ids.count(static_cast<int>(c))) {
                noisy_sum += v;
                ++noisy_n;
            } else {
                clean_sum += v;
                ++clean_n;
            }
        }
        report.mean_global_noisy.push_back(noisy_n ? noisy_sum / static_cast<double>(noisy_n) : std::nan(""));
        report.mean_global_clean.push_back(clean_n ? clean_sum / static_cast<double>(clean_n) : std::nan(""));
        report.matrices.push_back(std::move(mat));
    }
    return report;
}

std::vector<double> weight_divergence(const nn::ModelParams& global,
                                      std::span<const nn::ModelParams> clients) {
    std::vector<double> out;
    out.reserve(clients.size());
    for (const auto& c : clients) out.push_back(nn::param_sq_distance(global, c));
    return out;
}

double evaluate_accuracy(const nn::ModelParams& params, const data::LabeledDataset& test_set) {
    if (test_set.size() == 0) throw DomainError("accuracy on an empty test set");
    constexpr Eigen::Index kChunk = 2048;
    std::size_t correct = 0;
    for (Eigen::Index start = 0; start < test_set.features.rows(); start += kChunk) {
        const Eigen::Index rows = std::min(kChunk, test_set.features.rows() - start);
        const auto pred = nn::predict_confidences(params, test_set.features.middleRows(start, rows));
        for (Eigen::Index i = 0; i < rows; ++i) {
            correct += pred.labels[static_cast<std::size_t>(i)] ==
                       test_set.labels[static_cast<std::size_t>(start + i)];
        }
    }
    return static_cast<double>(correct) / static_cast<double>(test_set.size());
}

double mean_last_accuracy(std::span<const RoundMetrics> metrics, std::size_t k) {
    if (metrics.empty()) return 0.0;
    const auto tail = metrics.last(std::min(k, metrics.size()));
    double sum = 0.0;
    for (const auto& m : tail) sum += m.test_accuracy;
    return sum / static_cast<double>(tail.size());
}

double std_last_accuracy(std::span<const RoundMetrics> metrics, std::size_t k) {
    if (metrics.empty()) return 0.0;
    const auto tail = metrics.last(std::min(k, metrics.size()));
    const double mean = mean_last_accuracy(metrics, k);
    double ss = 0.0;
    for (const auto& m : tail) ss += (m.test_accuracy - mean) * (m.test_accuracy - mean);
    return std::sqrt(ss / static_cast<double>(tail.size()));
}

DetectionQuality detection_quality(std::span<const RoundMetrics> metrics,
                                   std::optional<int> only_round) {
    DetectionQuality dq;
    for (const auto& m : metrics) {
        if (only_round && m.round != *only_round) continue;
        for (const auto& c : m.clients) {
            const bool noisy = c.noise_rate > 0.0;
            if (c.flagged && noisy) ++dq.true_positives;
            if (c.flagged && !noisy) ++dq.false_positives;
            if (!c.flagged && noisy) ++dq.false_negatives;
        }
    }
    const auto tp = static_cast<double>(dq.true_positives);
    const auto flagged = tp + static_cast<double>(dq.false_positives);
    const auto actual = tp + static_cast<double>(dq.false_negatives);
    dq.precision = flagged > 0 ? tp / flagged : 1.0;
    dq.recall = actual > 0 ? tp / actual : 1.0;
    return dq;
}

}  // namespace fednoisy::analysis
