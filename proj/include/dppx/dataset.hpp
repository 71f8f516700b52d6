#pragma once

// In-memory datasets and the flat binary dataset file:
//
//   "DPXD" magic, u16 version (1), u8 labeled, u64 count, u32 dim,
//   count*dim f32 features (row-major), then count u16 labels if labeled.
//
// All integers little-endian.

#include "dppx/numkit.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dppx {

struct Dataset {
    Matrix features;                    // samples x dim
    std::vector<std::uint16_t> labels;  // empty for unlabeled data

    std::size_t size() const { return features.rows(); }
    std::size_t dim() const { return features.cols(); }
    bool labeled() const { return !labels.empty(); }

    // Rows [begin, begin + count) as a new dataset.
    Dataset slice(std::size_t begin, std::size_t count) const;
    Dataset select(std::span<const std::size_t> rows) const;
};

std::vector<std::uint8_t> encode_dataset(const Dataset & data);
void save_dataset(const std::filesystem::path & path, const Dataset & data);
Dataset load_dataset(const std::filesystem::path & path);

}  // namespace dppx
