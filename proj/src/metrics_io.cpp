// CSV / JSONL persistence of per-round metrics.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fednoisy/analysis.hpp"
#include "fednoisy/errors.hpp"

namespace fednoisy::analysis {

namespace {

using nlohmann::json;

const char* const kBaseColumns[] = {"round",    "client", "test_accuracy", "n_samples",
                                    "noise_rate", "e",    "h",             "q",
                                    "flagged",  "corrected", "relabeled"};
constexpr std::size_t kBaseCount = std::size(kBaseColumns);

std::string fmt9(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

double round9(double v) { return std::strtod(fmt9(v).c_str(), nullptr); }

std::size_t layer_count(std::span<const RoundMetrics> metrics) {
    std::size_t L = 0;
    for (const auto& m : metrics) L = std::max(L, m.layer_weights.size());
    return L;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

void write_csv(std::span<const RoundMetrics> metrics, std::ofstream& out) {
    const std::size_t L = layer_count(metrics);
    for (std::size_t i = 0; i < kBaseCount; ++i) out << (i ? "," : "") << kBaseColumns[i];
    for (std::size_t l = 0; l < L; ++l) out << ",w_l" << (l + 1);
    out << '\n';
    for (const auto& m : metrics) {
        for (std::size_t c = 0; c < m.clients.size(); ++c) {
            const auto& r = m.clients[c];
            out << m.round << ',' << r.client_id << ',' << fmt9(m.test_accuracy) << ','
                << r.n_samples << ',' << fmt9(r.noise_rate) << ',' << fmt9(r.divergence) << ','
                << fmt9(r.h) << ',' << fmt9(r.q) << ',' << int{r.flagged} << ','
                << int{r.corrected} << ',' << r.relabeled;
            for (std::size_t l = 0; l < L; ++l) {
                out << ',';
                if (l < m.layer_weights.size() && c < m.layer_weights[l].size()) {
                    out << fmt9(m.layer_weights[l][c]);
                }
            }
            out << '\n';
        }
    }
}

void write_jsonl(std::span<const RoundMetrics> metrics, std::ofstream& out) {
    for (const auto& m : metrics) {
        json rec;
        rec["round"] = m.round;
        rec["test_accuracy"] = round9(m.test_accuracy);
        rec["s_corr"] = m.s_corr;
        json weights = json::array();
        for (const auto& row : m.layer_weights) {
            json r = json::array();
            for (double w : row) r.push_back(round9(w));
            weights.push_back(std::move(r));
        }
        rec["layer_weights"] = std::move(weights);
        json clients = json::array();
        for (const auto& c : m.clients) {
            clients.push_back({{"client", c.client_id},
                               {"n_samples", c.n_samples},
                               {"noise_rate", round9(c.noise_rate)},
                               {"e", round9(c.divergence)},
                               {"h", round9(c.h)},
                               {"q", round9(c.q)},
                               {"flagged", c.flagged},
                               {"corrected", c.corrected},
                               {"relabeled", c.relabeled}});
        }
        rec["clients"] = std::move(clients);
        out << rec.dump() << '\n';
    }
}

std::vector<RoundMetrics> read_csv(std::ifstream& in, const std::filesystem::path& path) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path.string() + ": missing CSV header");
    const auto header = split_csv(line);
    if (header.size() < kBaseCount) throw FormatError(path.string() + ": short CSV header");
    const std::size_t L = header.size() - kBaseCount;

    std::vector<RoundMetrics> metrics;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split_csv(line);
        if (cells.size() != header.size()) {
            throw FormatError(path.string() + ": row has " + std::to_string(cells.size()) +
                              " cells, header has " + std::to_string(header.size()));
        }
        const int round = std::stoi(cells[0]);
        if (metrics.empty() || metrics.back().round != round) {
            RoundMetrics m;
            m.round = round;
            m.test_accuracy = std::stod(cells[2]);
            metrics.push_back(std::move(m));
        }
        auto& m = metrics.back();
        ClientRoundRecord r;
        r.client_id = std::stoi(cells[1]);
        r.n_samples = std::stoull(cells[3]);
        r.noise_rate = std::stod(cells[4]);
        r.divergence = std::stod(cells[5]);
        r.h = std::stod(cells[6]);
        r.q = std::stod(cells[7]);
        r.flagged = cells[8] == "1";
        r.corrected = cells[9] == "1";
        r.relabeled = std::stoull(cells[10]);
        if (r.corrected) m.s_corr.push_back(r.client_id);
        const std::size_t c = m.clients.size();
        for (std::size_t l = 0; l < L; ++l) {
            const auto& cell = cells[kBaseCount + l];
            if (cell.empty()) continue;
            if (m.layer_weights.size() <= l) m.layer_weights.resize(l + 1);
            m.layer_weights[l].resize(c + 1, 0.0);
            m.layer_weights[l][c] = std::stod(cell);
        }
        m.clients.push_back(r);
    }
    return metrics;
}

std::vector<RoundMetrics> read_jsonl(std::ifstream& in, const std::filesystem::path& path) {
    std::vector<RoundMetrics> metrics;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        RoundMetrics m;
        m.round = rec.at("round").get<int>();
        m.test_accuracy = rec.at("test_accuracy").get<double>();
        m.s_corr = rec.at("s_corr").get<std::vector<int>>();
        m.layer_weights = rec.at("layer_weights").get<std::vector<std::vector<double>>>();
        for (const auto& c : rec.at("clients")) {
            ClientRoundRecord r;
            r.client_id = c.at("client").get<int>();
            r.n_samples = c.at("n_samples").get<std::size_t>();
            r.noise_rate = c.at("noise_rate").get<double>();
            r.divergence = c.at("e").get<double>();
            r.h = c.at("h").get<double>();
            r.q = c.at("q").get<double>();
            r.flagged = c.at("flagged").get<bool>();
            r.corrected = c.at("corrected").get<bool>();
            r.relabeled = c.at("relabeled").get<std::size_t>();
            m.clients.push_back(r);
        }
        metrics.push_back(std::move(m));
    }
    return metrics;
}

}  // namespace

void write_metrics(std::span<const RoundMetrics> metrics, const std::filesystem::path& path,
                   MetricsFormat format) {
    auto out = open_out(path);
    if (format == MetricsFormat::csv) {
        write_csv(metrics, out);
    } else {
        write_jsonl(metrics, out);
    }
    out.flush();
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<RoundMetrics> read_metrics(const std::filesystem::path& path, MetricsFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    return format == MetricsFormat::csv ? read_csv(in, path) : read_jsonl(in, path);
}

}  // namespace fednoisy::analysis
