#include "dppx/dataset.hpp"

#include "dppx/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace dppx {

namespace {

constexpr char kDataMagic[4] = {'D', 'P', 'X', 'D'};
constexpr std::uint16_t kDataVersion = 1;

template <typename T> void put(std::vector<std::uint8_t> & out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

template <typename T> T get(std::ifstream & in, const std::filesystem::path & path) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char *>(buf), sizeof(T));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
        throw CorruptContainer("truncated dataset file '" + path.string() + "'");
    }
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v = static_cast<T>(v | (static_cast<T>(buf[i]) << (8 * i)));
    }
    return v;
}

}  // namespace

Dataset Dataset::slice(std::size_t begin, std::size_t count) const {
    if (begin + count > size()) {
        throw DimensionError("dataset slice out of range");
    }
    std::vector<std::size_t> rows(count);
    for (std::size_t i = 0; i < count; ++i) {
        rows[i] = begin + i;
    }
    return select(rows);
}

Dataset Dataset::select(std::span<const std::size_t> rows) const {
    Dataset out;
    out.features = Matrix(rows.size(), dim());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= size()) {
            throw DimensionError("dataset row index out of range");
        }
        const auto src = features.row(rows[i]);
        std::copy(src.begin(), src.end(), out.features.row(i).begin());
        if (!labels.empty()) {
            out.labels.push_back(labels[rows[i]]);
        }
    }
    return out;
}

std::vector<std::uint8_t> encode_dataset(const Dataset & data) {
    if (!data.labels.empty() && data.labels.size() != data.size()) {
        throw DimensionError("dataset has " + std::to_string(data.labels.size()) + " labels for " +
                             std::to_string(data.size()) + " samples");
    }
    std::vector<std::uint8_t> out(kDataMagic, kDataMagic + 4);
    out.reserve(19 + 4 * data.features.size() + 2 * data.labels.size());
    put<std::uint16_t>(out, kDataVersion);
    put<std::uint8_t>(out, data.labels.empty() ? 0 : 1);
    put<std::uint64_t>(out, data.size());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(data.dim()));
    for (float v : data.features.flat()) {
        put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
    for (auto l : data.labels) {
        put<std::uint16_t>(out, l);
    }
    return out;
}

void save_dataset(const std::filesystem::path & path, const Dataset & data) {
    const auto bytes = encode_dataset(data);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw PreconditionError("cannot open '" + path.string() + "' for writing");
        }
        out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw PreconditionError("write failed for '" + path.string() + "'");
        }
    }
    std::filesystem::rename(tmp, path);
}

Dataset load_dataset(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw PreconditionError("cannot open dataset '" + path.string() + "'");
    }
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kDataMagic, 4) != 0) {
        throw CorruptContainer("'" + path.string() + "' is not a DPXD dataset");
    }
    const auto version = get<std::uint16_t>(in, path);
    if (version != kDataVersion) {
        throw CorruptContainer("unsupported dataset version " + std::to_string(version));
    }
    const auto labeled = get<std::uint8_t>(in, path);
    const auto count = get<std::uint64_t>(in, path);
    const auto dim = get<std::uint32_t>(in, path);
    const auto file_size = std::filesystem::file_size(path);
    const std::uint64_t need = 4 + 2 + 1 + 8 + 4 + count * dim * 4 + (labeled != 0 ? count * 2 : 0);
    if (dim != 0 && count > file_size / dim) {
        throw CorruptContainer("dataset header claims more samples than the file holds");
    }
    if (need != file_size) {
        throw CorruptContainer("dataset file size " + std::to_string(file_size) + " != expected " +
                               std::to_string(need));
    }
    Dataset data;
    std::vector<float> values(count * dim);
    for (float & v : values) {
        v = std::bit_cast<float>(get<std::uint32_t>(in, path));
    }
    data.features = Matrix(count, dim, std::move(values));
    if (labeled != 0) {
        data.labels.resize(count);
        for (auto & l : data.labels) {
            l = get<std::uint16_t>(in, path);
        }
    }
    return data;
}

}  // namespace dppx
