#include "dppx/checkpoint.hpp"

#include "dppx/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace dppx {

namespace {

constexpr char kMagic[4] = {'D', 'P', 'P', 'X'};

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

std::uint64_t parse_hex64(const std::string & s) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(s, &used, 16);
        if (used != s.size()) {
            throw CorruptContainer("bad digest string '" + s + "'");
        }
        return v;
    } catch (const std::logic_error &) {
        throw CorruptContainer("bad digest string '" + s + "'");
    }
}

std::string shape_str(const Matrix & m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void check_same_layout(const std::vector<NamedTensor> & a, const std::vector<NamedTensor> & b,
                       const char * what) {
    if (a.size() != b.size()) {
        throw IncompatibleCheckpoints(std::string(what) + ": tensor count " + std::to_string(a.size()) +
                                      " vs " + std::to_string(b.size()));
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].name != b[i].name) {
            throw IncompatibleCheckpoints(std::string(what) + ": tensor " + std::to_string(i) + " is '" +
                                          a[i].name + "' vs '" + b[i].name + "'");
        }
        if (a[i].rank != b[i].rank || a[i].value.rows() != b[i].value.rows() ||
            a[i].value.cols() != b[i].value.cols()) {
            throw IncompatibleCheckpoints(std::string(what) + ": shape of '" + a[i].name + "' is " +
                                          shape_str(a[i].value) + " vs " + shape_str(b[i].value));
        }
    }
}

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put_le(v); }
    void u32(std::uint32_t v) { put_le(v); }
    void u64(std::uint64_t v) { put_le(v); }
    void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
    void raw(const void * p, std::size_t n) {
        const auto * c = static_cast<const std::uint8_t *>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void str(std::string_view s) {
        if (s.size() > UINT32_MAX) {
            throw DimensionError("string too long for container");
        }
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    template <typename T> void put_le(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint8_t u8() { return get_le<std::uint8_t>(); }
    std::uint16_t u16() { return get_le<std::uint16_t>(); }
    std::uint32_t u32() { return get_le<std::uint32_t>(); }
    std::uint64_t u64() { return get_le<std::uint64_t>(); }
    float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char *>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    // Guards allocations sized by untrusted counts.
    void need(std::uint64_t n) const {
        if (n > bytes_.size() - pos_) {
            throw CorruptContainer("truncated container at byte " + std::to_string(pos_));
        }
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    template <typename T> T get_le() {
        need(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v = static_cast<T>(v | (static_cast<T>(bytes_[pos_ + i]) << (8 * i)));
        }
        pos_ += sizeof(T);
        return v;
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

void write_header(ByteWriter & w, ContainerKind kind, const std::string & tag, const std::string & meta,
                  std::size_t count) {
    w.raw(kMagic, 4);
    w.u16(kContainerVersion);
    w.u8(static_cast<std::uint8_t>(kind));
    w.str(tag);
    w.str(meta);
    w.u32(static_cast<std::uint32_t>(count));
}

struct Header {
    ContainerKind kind;
    std::string tag;
    nlohmann::json meta;
    std::uint32_t count;
};

Header read_header(ByteReader & r) {
    r.need(4);
    char magic[4];
    for (char & c : magic) {
        c = static_cast<char>(r.u8());
    }
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw CorruptContainer("bad magic: not a DPPX container");
    }
    const auto version = r.u16();
    if (version != kContainerVersion) {
        throw CorruptContainer("unsupported container version " + std::to_string(version));
    }
    const auto kind = r.u8();
    if (kind > 1) {
        throw CorruptContainer("unknown container kind " + std::to_string(kind));
    }
    Header h;
    h.kind = static_cast<ContainerKind>(kind);
    h.tag = r.str();
    const std::string meta = r.str();
    try {
        h.meta = meta.empty() ? nlohmann::json::object() : nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception & e) {
        throw CorruptContainer(std::string("bad metadata: ") + e.what());
    }
    h.count = r.u32();
    return h;
}

void write_dense(ByteWriter & w, const Matrix & m) {
    for (float v : m.flat()) {
        w.f32(v);
    }
}

void write_tensor_head(ByteWriter & w, const std::string & name, TensorRank rank, std::size_t rows,
                       std::size_t cols, StorageFormat fmt) {
    w.str(name);
    w.u8(static_cast<std::uint8_t>(rank));
    w.u64(rows);
    w.u64(cols);
    w.u8(static_cast<std::uint8_t>(fmt));
}

struct TensorHead {
    std::string name;
    TensorRank rank;
    std::uint64_t rows;
    std::uint64_t cols;
    StorageFormat format;
};

TensorHead read_tensor_head(ByteReader & r) {
    TensorHead h;
    h.name = r.str();
    const auto rank = r.u8();
    if (rank != 1 && rank != 2) {
        throw CorruptContainer("tensor '" + h.name + "' has invalid rank " + std::to_string(rank));
    }
    h.rank = static_cast<TensorRank>(rank);
    h.rows = r.u64();
    h.cols = r.u64();
    if (h.rank == TensorRank::vector && h.rows != 1) {
        throw CorruptContainer("rank-1 tensor '" + h.name + "' must have one row");
    }
    if (h.cols != 0 && h.rows > UINT64_MAX / h.cols) {
        throw CorruptContainer("tensor '" + h.name + "' shape overflows");
    }
    const auto fmt = r.u8();
    if (fmt > 1) {
        throw CorruptContainer("tensor '" + h.name + "' has unknown format " + std::to_string(fmt));
    }
    h.format = static_cast<StorageFormat>(fmt);
    return h;
}

Matrix read_dense(ByteReader & r, const TensorHead & h) {
    const std::uint64_t n = h.rows * h.cols;
    if (n > r.remaining() / 4) {
        throw CorruptContainer("truncated dense payload for '" + h.name + "'");
    }
    std::vector<float> data(n);
    for (float & v : data) {
        v = r.f32();
    }
    return Matrix(h.rows, h.cols, std::move(data));
}

CsrMatrix read_csr(ByteReader & r, const TensorHead & h) {
    CsrMatrix c;
    c.rows = h.rows;
    c.cols = h.cols;
    const std::uint64_t nnz = r.u64();
    if (nnz > h.rows * h.cols) {
        throw CorruptContainer("tensor '" + h.name + "' has nnz beyond its shape");
    }
    if (h.rows + 1 > r.remaining() / 8) {
        throw CorruptContainer("truncated row_ptr for '" + h.name + "'");
    }
    c.row_ptr.resize(h.rows + 1);
    for (auto & v : c.row_ptr) {
        v = r.u64();
    }
    if (nnz > r.remaining() / 8) {
        throw CorruptContainer("truncated csr payload for '" + h.name + "'");
    }
    c.col_idx.resize(nnz);
    for (auto & v : c.col_idx) {
        v = r.u32();
    }
    c.values.resize(nnz);
    for (auto & v : c.values) {
        v = r.f32();
    }
    c.validate();
    return c;
}


std::vector<std::uint8_t> read_file(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw PreconditionError("cannot open '" + path.string() + "' for reading");
    }
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path & path, const std::vector<std::uint8_t> & bytes) {
    // Write to a sibling temp file and rename so readers never see a partial file.
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

}  // namespace

nlohmann::json delta_meta_json(const SparseDelta & d) {
    nlohmann::json j = nlohmann::json::object();
    j["prune"] = d.meta;
    if (d.base_digest) {
        j["base_digest"] = hex64(*d.base_digest);
    }
    if (d.fine_digest) {
        j["fine_digest"] = hex64(*d.fine_digest);
    }
    return j;
}

NamedTensor make_vector_tensor(std::string name, Vector values) {
    const std::size_t n = values.size();
    return NamedTensor{std::move(name), TensorRank::vector, Matrix(1, n, std::move(values))};
}

NamedTensor make_matrix_tensor(std::string name, Matrix values) {
    return NamedTensor{std::move(name), TensorRank::matrix, std::move(values)};
}

void ModelCheckpoint::add(NamedTensor tensor) {
    if (find(tensor.name) != nullptr) {
        throw PreconditionError("duplicate tensor name '" + tensor.name + "'");
    }
    tensors_.push_back(std::move(tensor));
}

const NamedTensor * ModelCheckpoint::find(std::string_view name) const {
    for (const auto & t : tensors_) {
        if (t.name == name) {
            return &t;
        }
    }
    return nullptr;
}

const NamedTensor & ModelCheckpoint::at(std::string_view name) const {
    if (const auto * t = find(name)) {
        return *t;
    }
    throw PreconditionError("no tensor named '" + std::string(name) + "'");
}

NamedTensor & ModelCheckpoint::at(std::string_view name) {
    return const_cast<NamedTensor &>(std::as_const(*this).at(name));
}

std::uint64_t ModelCheckpoint::digest() const {
    std::uint64_t h = fnv1a64(topology_tag_);
    for (const auto & t : tensors_) {
        h = fnv1a64(t.name, h);
        const std::uint64_t shape[3] = {static_cast<std::uint64_t>(t.rank), t.value.rows(), t.value.cols()};
        h = fnv1a64(std::as_bytes(std::span(shape)), h);
        h = fnv1a64(std::as_bytes(t.value.flat()), h);
    }
    return h;
}

bool ModelCheckpoint::operator==(const ModelCheckpoint & other) const {
    if (topology_tag_ != other.topology_tag_ || meta_ != other.meta_ || tensors_.size() != other.tensors_.size()) {
        return false;
    }
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        const auto & a = tensors_[i];
        const auto & b = other.tensors_[i];
        if (a.name != b.name || a.rank != b.rank || a.value.rows() != b.value.rows() ||
            a.value.cols() != b.value.cols()) {
            return false;
        }
        // Bitwise comparison, so -0.0 and 0.0 differ and NaN payloads compare.
        if (std::memcmp(a.value.flat().data(), b.value.flat().data(), a.value.size() * sizeof(float)) != 0) {
            return false;
        }
    }
    return true;
}

const NamedTensor & DeltaSet::at(std::string_view name) const {
    for (const auto & e : entries) {
        if (e.name == name) {
            return e;
        }
    }
    throw PreconditionError("no delta entry named '" + std::string(name) + "'");
}

void CsrMatrix::validate() const {
    if (row_ptr.size() != rows + 1) {
        throw CorruptContainer("csr: row_ptr length " + std::to_string(row_ptr.size()) + " != rows + 1");
    }
    if (col_idx.size() != values.size()) {
        throw CorruptContainer("csr: col_idx and values lengths differ");
    }
    if (row_ptr.front() != 0) {
        throw CorruptContainer("csr: row_ptr[0] must be 0");
    }
    if (row_ptr.back() != values.size()) {
        throw CorruptContainer("csr: row_ptr[rows] != nnz");
    }
    for (std::size_t r = 0; r < rows; ++r) {
        if (row_ptr[r + 1] < row_ptr[r]) {
            throw CorruptContainer("csr: row_ptr decreases at row " + std::to_string(r));
        }
        for (std::uint64_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
            if (col_idx[k] >= cols) {
                throw CorruptContainer("csr: column index out of range in row " + std::to_string(r));
            }
            if (k > row_ptr[r] && col_idx[k] <= col_idx[k - 1]) {
                throw CorruptContainer("csr: column indices not strictly increasing in row " + std::to_string(r));
            }
        }
    }
}

Matrix CsrMatrix::densify() const {
    Matrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::uint64_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
            m(r, col_idx[k]) = values[k];
        }
    }
    return m;
}

CsrMatrix csr_from_sorted(std::size_t rows, std::size_t cols, std::span<const std::uint64_t> flat_index,
                          std::span<const float> values) {
    if (flat_index.size() != values.size()) {
        throw DimensionError("csr_from_sorted: index and value counts differ");
    }
    CsrMatrix c;
    c.rows = rows;
    c.cols = cols;
    c.row_ptr.assign(rows + 1, 0);
    c.col_idx.reserve(values.size());
    c.values.assign(values.begin(), values.end());
    for (std::uint64_t idx : flat_index) {
        const std::uint64_t r = idx / cols;
        if (r >= rows) {
            throw DimensionError("csr_from_sorted: index beyond shape");
        }
        c.col_idx.push_back(static_cast<std::uint32_t>(idx % cols));
        ++c.row_ptr[r + 1];
    }
    for (std::size_t r = 0; r < rows; ++r) {
        c.row_ptr[r + 1] += c.row_ptr[r];
    }
    c.validate();
    return c;
}

std::size_t SparseTensor::rows() const {
    return std::visit([](const auto & p) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, Matrix>) {
            return p.rows();
        } else {
            return p.rows;
        }
    }, payload);
}

std::size_t SparseTensor::cols() const {
    return std::visit([](const auto & p) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, Matrix>) {
            return p.cols();
        } else {
            return p.cols;
        }
    }, payload);
}

std::size_t SparseTensor::stored() const {
    if (const auto * m = std::get_if<Matrix>(&payload)) {
        return m->size();
    }
    return std::get<CsrMatrix>(payload).nnz();
}

Matrix SparseTensor::densify() const {
    if (const auto * m = std::get_if<Matrix>(&payload)) {
        return *m;
    }
    return std::get<CsrMatrix>(payload).densify();
}

std::size_t SparseDelta::stored_entries() const {
    std::size_t n = 0;
    for (const auto & t : tensors) {
        n += t.stored();
    }
    return n;
}

void to_json(nlohmann::json & j, const PruneMeta & m) {
    j = nlohmann::json{{"method", m.method}, {"p", m.p},         {"q", m.q}, {"seed", m.seed},
                       {"gamma", m.gamma},   {"a", m.a},         {"b", m.b}, {"extra", m.extra}};
}

void from_json(const nlohmann::json & j, PruneMeta & m) {
    m.method = j.value("method", std::string("none"));
    m.p = j.value("p", 0.0);
    m.q = j.value("q", std::vector<double>{});
    m.seed = j.value("seed", std::uint64_t{0});
    m.gamma = j.value("gamma", 0.05);
    m.a = j.value("a", 1.0);
    m.b = j.value("b", 1.0);
    m.extra = j.value("extra", nlohmann::json::object());
}

namespace {

// fine - base, nudged by up to two ulps when that makes base + d == fine in
// f32. Without the nudge the rounded difference often lands one step off.
// Some pairs (|fine| far below |fine - base|) have no such d; those keep
// the rounded difference.
float invertible_difference(float fine, float base) {
    const float d = fine - base;
    if (base + d == fine) {
        return d;
    }
    float up = d;
    float down = d;
    for (int step = 0; step < 2; ++step) {
        up = std::nextafter(up, std::numeric_limits<float>::infinity());
        down = std::nextafter(down, -std::numeric_limits<float>::infinity());
        if (base + up == fine) {
            return up;
        }
        if (base + down == fine) {
            return down;
        }
    }
    return d;
}

}  // namespace

DeltaSet compute_delta(const ModelCheckpoint & fine, const ModelCheckpoint & base) {
    if (fine.topology_tag() != base.topology_tag()) {
        throw IncompatibleCheckpoints("topology '" + fine.topology_tag() + "' vs '" + base.topology_tag() + "'");
    }
    check_same_layout(fine.tensors(), base.tensors(), "compute_delta");
    DeltaSet delta;
    delta.topology_tag = base.topology_tag();
    delta.base_digest = base.digest();
    delta.fine_digest = fine.digest();
    for (std::size_t i = 0; i < base.tensors().size(); ++i) {
        const auto & f = fine.tensors()[i];
        const auto & b = base.tensors()[i];
        Matrix d(b.value.rows(), b.value.cols());
        for (std::size_t k = 0; k < d.size(); ++k) {
            d.flat()[k] = invertible_difference(f.value.flat()[k], b.value.flat()[k]);
        }
        delta.entries.push_back(NamedTensor{b.name, b.rank, std::move(d)});
    }
    return delta;
}

ModelCheckpoint apply_delta(const ModelCheckpoint & base, const DeltaSet & delta) {
    if (delta.base_digest && *delta.base_digest != base.digest()) {
        throw IncompatibleCheckpoints("delta was computed against a different base checkpoint");
    }
    check_same_layout(base.tensors(), delta.entries, "apply_delta");
    ModelCheckpoint out(base.topology_tag());
    out.meta() = base.meta();
    for (std::size_t i = 0; i < base.tensors().size(); ++i) {
        NamedTensor t = base.tensors()[i];
        const auto d = delta.entries[i].value.flat();
        auto v = t.value.flat();
        for (std::size_t k = 0; k < v.size(); ++k) {
            v[k] += d[k];
        }
        out.add(std::move(t));
    }
    return out;
}

ModelCheckpoint apply_delta(const ModelCheckpoint & base, const SparseDelta & delta) {
    if (delta.base_digest && *delta.base_digest != base.digest()) {
        throw IncompatibleCheckpoints("delta was computed against a different base checkpoint");
    }
    if (delta.tensors.size() != base.tensors().size()) {
        throw IncompatibleCheckpoints("apply_delta: tensor count " + std::to_string(base.tensors().size()) +
                                      " vs " + std::to_string(delta.tensors.size()));
    }
    ModelCheckpoint out(base.topology_tag());
    out.meta() = base.meta();
    for (std::size_t i = 0; i < base.tensors().size(); ++i) {
        NamedTensor t = base.tensors()[i];
        const auto & s = delta.tensors[i];
        if (s.name != t.name || s.rank != t.rank || s.rows() != t.value.rows() || s.cols() != t.value.cols()) {
            throw IncompatibleCheckpoints("apply_delta: tensor " + std::to_string(i) + " '" + s.name +
                                          "' does not match base '" + t.name + "'");
        }
        // Absent CSR entries contribute +0.0f, exactly as a dense zero would.
        const Matrix d = s.densify();
        auto v = t.value.flat();
        for (std::size_t k = 0; k < v.size(); ++k) {
            v[k] += d.flat()[k];
        }
        out.add(std::move(t));
    }
    return out;
}

SparseDelta to_csr(const DeltaSet & delta, bool drop_exact_zeros) {
    SparseDelta out;
    out.topology_tag = delta.topology_tag;
    out.base_digest = delta.base_digest;
    out.fine_digest = delta.fine_digest;
    for (const auto & e : delta.entries) {
        std::vector<std::uint64_t> idx;
        std::vector<float> vals;
        const auto flat = e.value.flat();
        for (std::size_t k = 0; k < flat.size(); ++k) {
            if (!drop_exact_zeros || flat[k] != 0.0f) {
                idx.push_back(k);
                vals.push_back(flat[k]);
            }
        }
        out.tensors.push_back(SparseTensor{e.name, e.rank, csr_from_sorted(e.value.rows(), e.value.cols(), idx, vals)});
    }
    return out;
}

DeltaSet from_csr(const SparseDelta & sparse) {
    DeltaSet out;
    out.topology_tag = sparse.topology_tag;
    out.base_digest = sparse.base_digest;
    out.fine_digest = sparse.fine_digest;
    for (const auto & t : sparse.tensors) {
        if (const auto * c = std::get_if<CsrMatrix>(&t.payload)) {
            c->validate();
        }
        out.entries.push_back(NamedTensor{t.name, t.rank, t.densify()});
    }
    return out;
}

std::vector<std::uint8_t> encode(const ModelCheckpoint & ckpt) {
    ByteWriter w;
    write_header(w, ContainerKind::checkpoint, ckpt.topology_tag(), ckpt.meta().dump(), ckpt.tensors().size());
    for (const auto & t : ckpt.tensors()) {
        write_tensor_head(w, t.name, t.rank, t.value.rows(), t.value.cols(), StorageFormat::dense);
        write_dense(w, t.value);
    }
    return w.take();
}

std::vector<std::uint8_t> encode(const SparseDelta & delta) {
    ByteWriter w;
    write_header(w, ContainerKind::delta, delta.topology_tag, delta_meta_json(delta).dump(), delta.tensors.size());
    for (const auto & t : delta.tensors) {
        write_tensor_head(w, t.name, t.rank, t.rows(), t.cols(), t.format());
        if (const auto * m = std::get_if<Matrix>(&t.payload)) {
            write_dense(w, *m);
        } else {
            const auto & c = std::get<CsrMatrix>(t.payload);
            w.u64(c.nnz());
            for (auto v : c.row_ptr) {
                w.u64(v);
            }
            for (auto v : c.col_idx) {
                w.u32(v);
            }
            for (auto v : c.values) {
                w.f32(v);
            }
        }
    }
    return w.take();
}

ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    const Header h = read_header(r);
    if (h.kind != ContainerKind::checkpoint) {
        throw CorruptContainer("container holds a delta, not a checkpoint");
    }
    ModelCheckpoint ckpt(h.tag);
    ckpt.meta() = h.meta;
    for (std::uint32_t i = 0; i < h.count; ++i) {
        const TensorHead th = read_tensor_head(r);
        if (th.format != StorageFormat::dense) {
            throw CorruptContainer("checkpoint tensor '" + th.name + "' must be dense");
        }
        try {
            ckpt.add(NamedTensor{th.name, th.rank, read_dense(r, th)});
        } catch (const PreconditionError & e) {
            throw CorruptContainer(e.what());
        }
    }
    if (r.remaining() != 0) {
        throw CorruptContainer("trailing bytes after last tensor");
    }
    return ckpt;
}

SparseDelta decode_delta(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    const Header h = read_header(r);
    if (h.kind != ContainerKind::delta) {
        throw CorruptContainer("container holds a checkpoint, not a delta");
    }
    SparseDelta d;
    d.topology_tag = h.tag;
    try {
        if (h.meta.contains("prune")) {
            d.meta = h.meta.at("prune").get<PruneMeta>();
        }
    } catch (const nlohmann::json::exception & e) {
        throw CorruptContainer(std::string("bad prune metadata: ") + e.what());
    }
    if (h.meta.contains("base_digest")) {
        d.base_digest = parse_hex64(h.meta.at("base_digest").get<std::string>());
    }
    if (h.meta.contains("fine_digest")) {
        d.fine_digest = parse_hex64(h.meta.at("fine_digest").get<std::string>());
    }
    for (std::uint32_t i = 0; i < h.count; ++i) {
        const TensorHead th = read_tensor_head(r);
        for (const auto & t : d.tensors) {
            if (t.name == th.name) {
                throw CorruptContainer("duplicate tensor name '" + th.name + "'");
            }
        }
        if (th.format == StorageFormat::dense) {
            d.tensors.push_back(SparseTensor{th.name, th.rank, read_dense(r, th)});
        } else {
            d.tensors.push_back(SparseTensor{th.name, th.rank, read_csr(r, th)});
        }
    }
    if (r.remaining() != 0) {
        throw CorruptContainer("trailing bytes after last tensor");
    }
    return d;
}

void save(const std::filesystem::path & path, const ModelCheckpoint & ckpt) {
    write_file(path, encode(ckpt));
}

void save(const std::filesystem::path & path, const SparseDelta & delta) {
    write_file(path, encode(delta));
}

ModelCheckpoint load_checkpoint(const std::filesystem::path & path) {
    return decode_checkpoint(read_file(path));
}

SparseDelta load_delta(const std::filesystem::path & path) {
    return decode_delta(read_file(path));
}

ContainerKind peek_kind(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw PreconditionError("cannot open '" + path.string() + "' for reading");
    }
    std::uint8_t head[7] = {};
    in.read(reinterpret_cast<char *>(head), sizeof(head));
    if (in.gcount() != sizeof(head) || std::memcmp(head, kMagic, 4) != 0) {
        throw CorruptContainer("'" + path.string() + "' is not a DPPX container");
    }
    if (head[6] > 1) {
        throw CorruptContainer("unknown container kind");
    }
    return static_cast<ContainerKind>(head[6]);
}

std::size_t header_bytes(std::size_t tag_len, std::size_t meta_len) {
    return 4 + 2 + 1 + (4 + tag_len) + (4 + meta_len) + 4;
}

std::size_t dense_record_bytes(std::size_t name_len, std::size_t rows, std::size_t cols) {
    return (4 + name_len) + 1 + 8 + 8 + 1 + 4 * rows * cols;
}

std::size_t csr_record_bytes(std::size_t name_len, std::size_t rows, std::size_t nnz) {
    return (4 + name_len) + 1 + 8 + 8 + 1 + 8 + 8 * (rows + 1) + (4 + 4) * nnz;
}

std::vector<DeltaStatsRow> delta_stats(const DeltaSet & delta, const std::map<std::string, Matrix> & activations) {
    struct Acc {
        double sum_abs = 0.0;
        double sum = 0.0;
        double sum_sq = 0.0;
        std::size_t count = 0;
        double sum_abs_dwx = 0.0;
        std::size_t count_dwx = 0;
        void merge(const Acc & o) {
            sum_abs += o.sum_abs;
            sum += o.sum;
            sum_sq += o.sum_sq;
            count += o.count;
            sum_abs_dwx += o.sum_abs_dwx;
            count_dwx += o.count_dwx;
        }
        DeltaStatsRow row(std::string layer, std::string kind) const {
            DeltaStatsRow r;
            r.layer = std::move(layer);
            r.kind = std::move(kind);
            if (count > 0) {
                const double n = static_cast<double>(count);
                r.mean_abs_dw = sum_abs / n;
                const double mean = sum / n;
                r.var_dw = std::max(0.0, sum_sq / n - mean * mean);
            }
            if (count_dwx > 0) {
                r.mean_abs_dwx = sum_abs_dwx / static_cast<double>(count_dwx);
            }
            return r;
        }
    };

    for (const auto & [name, batch] : activations) {
        const NamedTensor & e = delta.at(name);
        if (!e.is_matrix()) {
            throw DimensionError("delta_stats: activations given for rank-1 tensor '" + name + "'");
        }
        if (batch.cols() != e.value.cols()) {
            throw DimensionError("delta_stats: '" + name + "' expects inputs of width " +
                                 std::to_string(e.value.cols()) + ", got " + std::to_string(batch.cols()));
        }
    }

    std::vector<DeltaStatsRow> rows;
    Acc all;
    Acc matrices;
    for (const auto & e : delta.entries) {
        Acc a;
        for (float v : e.value.flat()) {
            const double d = v;
            a.sum_abs += std::abs(d);
            a.sum += d;
            a.sum_sq += d * d;
        }
        a.count = e.value.size();
        if (const auto it = activations.find(e.name); it != activations.end()) {
            const Matrix & batch = it->second;
            for (std::size_t s = 0; s < batch.rows(); ++s) {
                const auto x = batch.row(s);
                for (std::size_t i = 0; i < e.value.rows(); ++i) {
                    const auto w = e.value.row(i);
                    for (std::size_t j = 0; j < w.size(); ++j) {
                        a.sum_abs_dwx += std::abs(static_cast<double>(w[j]) * x[j]);
                    }
                }
            }
            a.count_dwx = batch.rows() * e.value.size();
        }
        rows.push_back(a.row(e.name, e.is_matrix() ? "matrix" : "vector"));
        all.merge(a);
        if (e.is_matrix()) {
            matrices.merge(a);
        }
    }
    rows.push_back(matrices.row("__matrices__", "global"));
    rows.push_back(all.row("__all__", "global"));
    return rows;
}

std::string delta_stats_csv(const std::vector<DeltaStatsRow> & rows) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "layer,mean_abs_dw,mean_abs_dwx,var_dw\n";
    for (const auto & r : rows) {
        os << r.layer << ',' << r.mean_abs_dw << ',';
        if (r.mean_abs_dwx) {
            os << *r.mean_abs_dwx;
        }
        os << ',' << r.var_dw << '\n';
    }
    return os.str();
}

}  // namespace dppx
