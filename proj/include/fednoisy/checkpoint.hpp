#pragma once

// Model checkpoints: one flat little-endian float64 blob per model plus a JSON
// manifest describing layer shapes and which blob belongs to whom.

#include <filesystem>
#include <span>
#include <vector>

#include "fednoisy/nn.hpp"

namespace fednoisy::checkpoint {

struct Checkpoint {
    int round = 0;
    nn::ModelParams global;
    std::vector<nn::ModelParams> clients;
    std::vector<double> noise_rates;  // ground truth, per client
};

/// Blob layout: per layer, weight row-major then bias.
void write_params(const std::filesystem::path& path, const nn::ModelParams& params);
nn::ModelParams read_params(const std::filesystem::path& path, std::span<const nn::LayerSpec> specs);

void save(const std::filesystem::path& dir, const Checkpoint& checkpoint);

/// Throws IoError listing every expected file that is missing.
Checkpoint load(const std::filesystem::path& dir);

/// `<root>/checkpoints/round_0040`
std::filesystem::path round_dir(const std::filesystem::path& root, int round);

}  // namespace fednoisy::checkpoint
