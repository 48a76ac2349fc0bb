#include "fednoisy/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>

#include <json.hpp>

#include "fednoisy/errors.hpp"

namespace fednoisy::checkpoint {

namespace {

using nlohmann::json;

std::uint64_t to_little(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        std::uint64_t r = 0;
        for (int i = 0; i < 8; ++i) r = (r << 8) | ((v >> (8 * i)) & 0xff);
        return r;
    }
    return v;
}

std::string client_file(std::size_t c) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "client_%03zu.bin", c);
    return buf;
}

const char* activation_name(nn::Activation a) {
    return a == nn::Activation::relu ? "relu" : "identity";
}

}  // namespace

std::filesystem::path round_dir(const std::filesystem::path& root, int round) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "round_%04d", round);
    return root / "checkpoints" / buf;
}

void write_params(const std::filesystem::path& path, const nn::ModelParams& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (double v : nn::flatten(params)) {
        const std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(v));
        out.write(reinterpret_cast<const char*>(&bits), sizeof(bits));
    }
    if (!out) throw IoError("failed writing " + path.string());
}

nn::ModelParams read_params(const std::filesystem::path& path, std::span<const nn::LayerSpec> specs) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    auto params = nn::init_params(specs, 0);
    auto next = [&]() {
        std::uint64_t bits = 0;
        if (!in.read(reinterpret_cast<char*>(&bits), sizeof(bits))) {
            throw FormatError(path.string() + ": blob shorter than the manifest's shapes");
        }
        return std::bit_cast<double>(to_little(bits));
    };
    for (auto& layer : params.layers) {
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = next();
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = next();
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError(path.string() + ": blob longer than the manifest's shapes");
    }
    return params;
}

void save(const std::filesystem::path& dir, const Checkpoint& cp) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    json layers = json::array();
    for (const auto& s : cp.global.specs) {
        layers.push_back({{"in_dim", s.in_dim}, {"out_dim", s.out_dim},
                          {"activation", activation_name(s.activation)}});
    }
    json clients = json::array();
    for (std::size_t c = 0; c < cp.clients.size(); ++c) {
        clients.push_back({{"client", c},
                           {"file", client_file(c)},
                           {"noise_rate", c < cp.noise_rates.size() ? cp.noise_rates[c] : 0.0}});
        write_params(dir / client_file(c), cp.clients[c]);
    }
    write_params(dir / "global.bin", cp.global);

    const json manifest{{"format", "float64-le"},
                        {"round", cp.round},
                        {"layers", layers},
                        {"global", "global.bin"},
                        {"clients", clients}};
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
}

Checkpoint load(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) {
        throw IoError("missing checkpoint: expected " + manifest_path.string() + ", " +
                      (dir / "global.bin").string() + " and " + (dir / "client_NNN.bin").string() +
                      " files");
    }
    std::ifstream in(manifest_path);
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }

    Checkpoint cp;
    std::vector<nn::LayerSpec> specs;
    try {
        cp.round = manifest.at("round").get<int>();
        for (const auto& l : manifest.at("layers")) {
            specs.push_back({l.at("in_dim").get<std::size_t>(), l.at("out_dim").get<std::size_t>(),
                             l.at("activation").get<std::string>() == "relu" ? nn::Activation::relu
                                                                              : nn::Activation::identity});
        }
        std::vector<std::string> missing;
        const auto global_path = dir / manifest.at("global").get<std::string>();
        if (!std::filesystem::exists(global_path)) missing.push_back(global_path.string());
        std::vector<std::filesystem::path> client_paths;
        for (const auto& c : manifest.at("clients")) {
            client_paths.push_back(dir / c.at("file").get<std::string>());
            cp.noise_rates.push_back(c.at("noise_rate").get<double>());
            if (!std::filesystem::exists(client_paths.back())) missing.push_back(client_paths.back().string());
        }
        if (!missing.empty()) {
            std::string list;
            for (const auto& m : missing) list += "\n  " + m;
            throw IoError("missing checkpoint files:" + list);
        }
        cp.global = read_params(global_path, specs);
        for (const auto& p : client_paths) cp.clients.push_back(read_params(p, specs));
    } catch (const json::exception& e) {
        throw FormatError(manifest_path.string() + ": " + e.what());
    }
    return cp;
}

}  // namespace fednoisy::checkpoint
