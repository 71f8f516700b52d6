#pragma once

// Base/fine-tuned checkpoints, delta parameters, CSR storage and the DPPX
// binary container.
//
// Container layout (all integers little-endian):
//
//   "DPPX"                         4 bytes magic
//   version                        u16 (currently 1)
//   kind                           u8  (0 = checkpoint, 1 = delta)
//   topology_tag                   u32 length + UTF-8 bytes
//   metadata                       u32 length + UTF-8 JSON text
//   tensor count                   u32
//   per tensor:
//     name                         u32 length + UTF-8 bytes
//     rank                         u8  (1 or 2; rank-1 tensors have rows = 1)
//     rows, cols                   u64, u64
//     format                       u8  (0 = dense, 1 = csr)
//     dense payload                rows*cols f32
//     csr payload                  u64 nnz, (rows+1) u64 row_ptr,
//                                  nnz u32 col_idx, nnz f32 values

#include "dppx/numkit.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

namespace dppx {

inline constexpr std::uint16_t kContainerVersion = 1;

enum class TensorRank : std::uint8_t { vector = 1, matrix = 2 };

struct NamedTensor {
    std::string name;
    TensorRank rank = TensorRank::matrix;
    Matrix value;  // rank-1 tensors are stored as 1 x n

    bool is_matrix() const { return rank == TensorRank::matrix; }
};

NamedTensor make_vector_tensor(std::string name, Vector values);
NamedTensor make_matrix_tensor(std::string name, Matrix values);

class ModelCheckpoint {
public:
    ModelCheckpoint() = default;
    explicit ModelCheckpoint(std::string topology_tag) : topology_tag_(std::move(topology_tag)) {}

    const std::string & topology_tag() const { return topology_tag_; }
    const std::vector<NamedTensor> & tensors() const { return tensors_; }
    std::vector<NamedTensor> & tensors() { return tensors_; }

    // Throws PreconditionError on duplicate names.
    void add(NamedTensor tensor);
    const NamedTensor & at(std::string_view name) const;
    NamedTensor & at(std::string_view name);
    const NamedTensor * find(std::string_view name) const;

    nlohmann::json & meta() { return meta_; }
    const nlohmann::json & meta() const { return meta_; }

    // 64-bit FNV-1a over names, shapes and raw payload bytes.
    std::uint64_t digest() const;

    bool operator==(const ModelCheckpoint & other) const;

private:
    std::string topology_tag_;
    std::vector<NamedTensor> tensors_;
    nlohmann::json meta_ = nlohmann::json::object();
};

struct DeltaSet {
    std::string topology_tag;
    std::vector<NamedTensor> entries;
    std::optional<std::uint64_t> base_digest;
    std::optional<std::uint64_t> fine_digest;

    const NamedTensor & at(std::string_view name) const;
};

struct CsrMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint64_t> row_ptr;
    std::vector<std::uint32_t> col_idx;
    std::vector<float> values;

    std::size_t nnz() const { return values.size(); }
    // Throws CorruptContainer when row_ptr or col_idx break the CSR rules.
    void validate() const;
    Matrix densify() const;

    bool operator==(const CsrMatrix & other) const = default;
};

// Builds CSR from (row-major flat index, value) pairs sorted by index.
CsrMatrix csr_from_sorted(std::size_t rows, std::size_t cols, std::span<const std::uint64_t> flat_index,
                          std::span<const float> values);

enum class StorageFormat : std::uint8_t { dense = 0, csr = 1 };

struct SparseTensor {
    std::string name;
    TensorRank rank = TensorRank::matrix;
    std::variant<Matrix, CsrMatrix> payload;

    StorageFormat format() const { return payload.index() == 0 ? StorageFormat::dense : StorageFormat::csr; }
    std::size_t rows() const;
    std::size_t cols() const;
    // Stored entries: rows*cols for dense, nnz for CSR.
    std::size_t stored() const;
    Matrix densify() const;

    bool operator==(const SparseTensor & other) const = default;
};

// Configuration that produced a pruned delta. q holds a single value for a
// global rescale or one value per pruned tensor.
struct PruneMeta {
    std::string method = "none";
    double p = 0.0;
    std::vector<double> q;
    std::uint64_t seed = 0;
    double gamma = 0.05;
    double a = 1.0;
    double b = 1.0;
    nlohmann::json extra = nlohmann::json::object();
};

void to_json(nlohmann::json & j, const PruneMeta & m);
void from_json(const nlohmann::json & j, PruneMeta & m);

struct SparseDelta {
    std::string topology_tag;
    std::vector<SparseTensor> tensors;
    PruneMeta meta;
    std::optional<std::uint64_t> base_digest;
    std::optional<std::uint64_t> fine_digest;

    std::size_t stored_entries() const;
};

DeltaSet compute_delta(const ModelCheckpoint & fine, const ModelCheckpoint & base);
ModelCheckpoint apply_delta(const ModelCheckpoint & base, const DeltaSet & delta);
ModelCheckpoint apply_delta(const ModelCheckpoint & base, const SparseDelta & delta);

// With drop_exact_zeros unset every entry is stored, so masks survive.
SparseDelta to_csr(const DeltaSet & delta, bool drop_exact_zeros);
DeltaSet from_csr(const SparseDelta & sparse);

// Byte-level encoding; save/load are thin file wrappers around these.
std::vector<std::uint8_t> encode(const ModelCheckpoint & ckpt);
std::vector<std::uint8_t> encode(const SparseDelta & delta);
ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
SparseDelta decode_delta(std::span<const std::uint8_t> bytes);

void save(const std::filesystem::path & path, const ModelCheckpoint & ckpt);
void save(const std::filesystem::path & path, const SparseDelta & delta);
ModelCheckpoint load_checkpoint(const std::filesystem::path & path);
SparseDelta load_delta(const std::filesystem::path & path);

// Which kind of payload a container holds, read from its header.
enum class ContainerKind : std::uint8_t { checkpoint = 0, delta = 1 };
ContainerKind peek_kind(const std::filesystem::path & path);

// Exact serialized size of one tensor record.
std::size_t dense_record_bytes(std::size_t name_len, std::size_t rows, std::size_t cols);
std::size_t csr_record_bytes(std::size_t name_len, std::size_t rows, std::size_t nnz);
// Metadata document written into a delta container header.
nlohmann::json delta_meta_json(const SparseDelta & delta);

// Exact container header size (everything before the first tensor record).
std::size_t header_bytes(std::size_t tag_len, std::size_t meta_len);

struct DeltaStatsRow {
    std::string layer;
    std::string kind;  // "matrix", "vector" or "global"
    double mean_abs_dw = 0.0;
    std::optional<double> mean_abs_dwx;
    double var_dw = 0.0;
};

// Per-tensor and global mean |dW|, mean |dW_ij x_j| (matrices with a batch in
// `activations`, averaged over samples) and variance of dW. Global rows are
// emitted for all tensors ("__all__") and for matrices only ("__matrices__").
std::vector<DeltaStatsRow> delta_stats(const DeltaSet & delta, const std::map<std::string, Matrix> & activations);
std::string delta_stats_csv(const std::vector<DeltaStatsRow> & rows);

}  // namespace dppx
