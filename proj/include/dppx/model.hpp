#pragma once

// Two-layer test network
//
//   f(x) = W_o N_h(relu(W_1 N_in(x) + b_1)) + b_o
//
// where N is RMS normalisation with a learned gain, or the identity when the
// network is built without normalisation. Parameters are kept in 64-bit so
// finite differences are meaningful; checkpoints store them as f32.

#include "dppx/checkpoint.hpp"
#include "dppx/qsearch.hpp"

#include <span>
#include <string>
#include <vector>

namespace dppx {

struct NetShape {
    std::size_t input = 64;
    std::size_t hidden = 256;
    std::size_t classes = 10;
    bool norm = true;

    std::string topology_tag() const;
    bool operator==(const NetShape &) const = default;
};

// Parses a tag produced by NetShape::topology_tag().
NetShape parse_topology_tag(std::string_view tag);

inline constexpr double kNormEps = 1e-6;

struct DMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    DMatrix() = default;
    DMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    double & operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

DMatrix to_double(const Matrix & m);
Matrix to_float(const DMatrix & m);

struct ParamTensor {
    std::string name;
    TensorRank rank = TensorRank::matrix;
    std::size_t rows = 1;
    std::size_t cols = 0;
    std::vector<double> data;
};

struct ForwardCache {
    DMatrix x;
    std::vector<double> r_in;  // per-sample rms of x (norm only)
    DMatrix u;                 // normalised input
    DMatrix z;                 // hidden pre-activation
    DMatrix a;                 // relu(z)
    std::vector<double> r_h;   // per-sample rms of a (norm only)
    DMatrix h;                 // normalised hidden
    DMatrix logits;
};

class TwoLayerNet {
public:
    TwoLayerNet() = default;
    explicit TwoLayerNet(NetShape shape);

    // Gains start at 1 and biases at 0; weights are N(0, 1/fan_in).
    static TwoLayerNet init(NetShape shape, std::uint64_t seed);
    static TwoLayerNet from_checkpoint(const ModelCheckpoint & ckpt);
    ModelCheckpoint to_checkpoint() const;

    const NetShape & shape() const { return shape_; }
    std::vector<ParamTensor> & params() { return params_; }
    const std::vector<ParamTensor> & params() const { return params_; }
    ParamTensor & param(std::string_view name);
    const ParamTensor & param(std::string_view name) const;
    std::vector<std::size_t> sizes() const;

    ForwardCache forward(const DMatrix & x) const;
    DMatrix logits(const DMatrix & x) const { return forward(x).logits; }
    // Gradients of a loss given dL/dlogits, one buffer per parameter tensor.
    std::vector<std::vector<double>> backward(const ForwardCache & cache, const DMatrix & dlogits) const;

private:
    NetShape shape_;
    std::vector<ParamTensor> params_;
};

enum class Loss { cross_entropy, mse };

struct LossResult {
    double loss = 0.0;
    DMatrix dlogits;
};

// Mean softmax cross-entropy over the batch.
LossResult cross_entropy(const DMatrix & logits, std::span<const std::uint16_t> labels);
// Mean over the batch of 0.5 * ||logits - target||^2.
LossResult mse(const DMatrix & logits, const DMatrix & target);

// Loss and gradients for one batch.
struct BatchGrad {
    double loss = 0.0;
    std::vector<std::vector<double>> grads;
};
BatchGrad loss_and_grad(const TwoLayerNet & net, const DMatrix & x, std::span<const std::uint16_t> labels);
BatchGrad loss_and_grad_mse(const TwoLayerNet & net, const DMatrix & x, const DMatrix & target);

class TwoLayerAdapter : public ModelAdapter {
public:
    Matrix logits(const ModelCheckpoint & ckpt, const Matrix & batch) const override;
    std::vector<LayerInput> layer_inputs(const ModelCheckpoint & ckpt, const Matrix & batch) const override;
};

}  // namespace dppx
