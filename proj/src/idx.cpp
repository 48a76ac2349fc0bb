// IDX (MNIST) file ingestion.

#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <zlib.h>

#include "fednoisy/data.hpp"
#include "fednoisy/errors.hpp"

namespace fednoisy::data {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw IoError("cannot open " + path.string() + ": no such file");
    }
    std::vector<std::uint8_t> bytes;
    if (path.extension() == ".gz") {
        gzFile file = gzopen(path.c_str(), "rb");
        if (file == nullptr) throw IoError("cannot open " + path.string());
        std::uint8_t chunk[1 << 16];
        int got = 0;
        while ((got = gzread(file, chunk, sizeof(chunk))) > 0) {
            bytes.insert(bytes.end(), chunk, chunk + got);
        }
        int err = 0;
        const char* msg = gzerror(file, &err);
        gzclose(file);
        if (got < 0 || (err != Z_OK && err != Z_STREAM_END)) {
            throw FormatError(path.string() + ": gzip stream error: " + (msg ? msg : "unknown"));
        }
    } else {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open " + path.string());
        bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    return bytes;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
    if (offset + 4 > bytes.size()) {
        throw FormatError(path.string() + ": truncated header");
    }
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, int num_classes) {
    const auto images = read_bytes(images_path);
    const auto labels = read_bytes(labels_path);

    const std::uint32_t image_magic = read_be32(images, 0, images_path);
    if (image_magic != kImagesMagic) {
        throw FormatError(images_path.string() + ": bad magic " + std::to_string(image_magic));
    }
    const std::uint32_t label_magic = read_be32(labels, 0, labels_path);
    if (label_magic != kLabelsMagic) {
        throw FormatError(labels_path.string() + ": bad magic " + std::to_string(label_magic));
    }

    const std::size_t n_images = read_be32(images, 4, images_path);
    const std::size_t rows = read_be32(images, 8, images_path);
    const std::size_t cols = read_be32(images, 12, images_path);
    const std::size_t n_labels = read_be32(labels, 4, labels_path);
    const std::size_t pixels = rows * cols;

    if (images.size() < 16 + n_images * pixels) {
        throw FormatError(images_path.string() + ": truncated, expected " +
                          std::to_string(n_images) + " images of " + std::to_string(pixels) +
                          " bytes");
    }
    if (labels.size() < 8 + n_labels) {
        throw FormatError(labels_path.string() + ": truncated, expected " +
                          std::to_string(n_labels) + " labels");
    }
    if (n_images != n_labels) {
        throw ConsistencyError("image count " + std::to_string(n_images) +
                               " does not match label count " + std::to_string(n_labels));
    }
    if (n_images == 0) {
        throw FormatError(images_path.string() + ": contains no samples");
    }

    LabeledDataset ds;
    ds.num_classes = num_classes;
    ds.features.resize(static_cast<Eigen::Index>(n_images), static_cast<Eigen::Index>(pixels));
    const std::uint8_t* src = images.data() + 16;
    for (std::size_t i = 0; i < n_images * pixels; ++i) {
        ds.features.data()[i] = static_cast<double>(src[i]) / 255.0;
    }
    ds.labels.resize(n_labels);
    for (std::size_t i = 0; i < n_labels; ++i) {
        const int y = labels[8 + i];
        if (y >= num_classes) {
            throw FormatError(labels_path.string() + ": label " + std::to_string(y) +
                              " exceeds class count " + std::to_string(num_classes));
        }
        ds.labels[i] = y;
    }
    return ds;
}

}  // namespace fednoisy::data
