#include "dppx/model.hpp"

#include "dppx/errors.hpp"

#include <cmath>
#include <cstdio>

namespace dppx {

namespace {

constexpr const char * kInGain = "in_norm.gain";
constexpr const char * kHiddenW = "hidden.weight";
constexpr const char * kHiddenB = "hidden.bias";
constexpr const char * kHiddenGain = "hidden_norm.gain";
constexpr const char * kOutW = "out.weight";
constexpr const char * kOutB = "out.bias";

ParamTensor vec_param(std::string name, std::size_t n, double fill) {
    return ParamTensor{std::move(name), TensorRank::vector, 1, n, std::vector<double>(n, fill)};
}

ParamTensor mat_param(std::string name, std::size_t rows, std::size_t cols) {
    return ParamTensor{std::move(name), TensorRank::matrix, rows, cols, std::vector<double>(rows * cols, 0.0)};
}

// y = g * x / r with r = sqrt(mean(x^2) + eps). Returns r.
double rms_forward(std::span<const double> x, std::span<const double> g, std::span<double> y) {
    double ss = 0.0;
    for (double v : x) {
        ss += v * v;
    }
    const double r = std::sqrt(ss / static_cast<double>(x.size()) + kNormEps);
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = g[i] * x[i] / r;
    }
    return r;
}

// Accumulates dL/dg into dg and writes dL/dx into dx.
void rms_backward(std::span<const double> x, std::span<const double> g, double r, std::span<const double> dy,
                  std::span<double> dg, std::span<double> dx) {
    const double n = static_cast<double>(x.size());
    double dot = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        dg[i] += dy[i] * x[i] / r;
        dot += dy[i] * g[i] * x[i];
    }
    const double r3 = r * r * r;
    for (std::size_t i = 0; i < x.size(); ++i) {
        dx[i] = g[i] * dy[i] / r - x[i] * dot / (n * r3);
    }
}

}  // namespace

std::string NetShape::topology_tag() const {
    return "twolayer-d" + std::to_string(input) + "-h" + std::to_string(hidden) + "-k" + std::to_string(classes) +
           (norm ? "-rmsnorm" : "-identity");
}

NetShape parse_topology_tag(std::string_view tag) {
    NetShape s;
    char kind[16] = {};
    const std::string t(tag);
    if (std::sscanf(t.c_str(), "twolayer-d%zu-h%zu-k%zu-%15s", &s.input, &s.hidden, &s.classes, kind) != 4) {
        throw IncompatibleCheckpoints("not a two-layer network topology: '" + t + "'");
    }
    const std::string k(kind);
    if (k != "rmsnorm" && k != "identity") {
        throw IncompatibleCheckpoints("unknown normalisation in topology '" + t + "'");
    }
    s.norm = k == "rmsnorm";
    if (s.topology_tag() != t) {
        throw IncompatibleCheckpoints("malformed topology tag '" + t + "'");
    }
    return s;
}

DMatrix to_double(const Matrix & m) {
    DMatrix d(m.rows(), m.cols());
    for (std::size_t k = 0; k < m.size(); ++k) {
        d.data[k] = m.flat()[k];
    }
    return d;
}

Matrix to_float(const DMatrix & m) {
    Matrix f(m.rows, m.cols);
    for (std::size_t k = 0; k < m.data.size(); ++k) {
        f.flat()[k] = static_cast<float>(m.data[k]);
    }
    return f;
}

TwoLayerNet::TwoLayerNet(NetShape shape) : shape_(shape) {
    if (shape.input == 0 || shape.hidden == 0 || shape.classes == 0) {
        throw DimensionError("network dimensions must be positive");
    }
    if (shape.norm) {
        params_.push_back(vec_param(kInGain, shape.input, 1.0));
    }
    params_.push_back(mat_param(kHiddenW, shape.hidden, shape.input));
    params_.push_back(vec_param(kHiddenB, shape.hidden, 0.0));
    if (shape.norm) {
        params_.push_back(vec_param(kHiddenGain, shape.hidden, 1.0));
    }
    params_.push_back(mat_param(kOutW, shape.classes, shape.hidden));
    params_.push_back(vec_param(kOutB, shape.classes, 0.0));
}

TwoLayerNet TwoLayerNet::init(NetShape shape, std::uint64_t seed) {
    TwoLayerNet net(shape);
    for (auto & p : net.params_) {
        if (p.rank != TensorRank::matrix) {
            continue;
        }
        RngStream rng(seed, "init/" + p.name);
        const double scale = 1.0 / std::sqrt(static_cast<double>(p.cols));
        for (double & w : p.data) {
            // Round through f32 so a saved checkpoint reloads to the same net.
            w = static_cast<float>(rng.next_normal() * scale);
        }
    }
    return net;
}

TwoLayerNet TwoLayerNet::from_checkpoint(const ModelCheckpoint & ckpt) {
    TwoLayerNet net(parse_topology_tag(ckpt.topology_tag()));
    if (ckpt.tensors().size() != net.params_.size()) {
        throw IncompatibleCheckpoints("checkpoint has " + std::to_string(ckpt.tensors().size()) +
                                      " tensors, network expects " + std::to_string(net.params_.size()));
    }
    for (auto & p : net.params_) {
        const NamedTensor * t = ckpt.find(p.name);
        if (t == nullptr) {
            throw IncompatibleCheckpoints("checkpoint lacks tensor '" + p.name + "'");
        }
        if (t->rank != p.rank || t->value.rows() != p.rows || t->value.cols() != p.cols) {
            throw IncompatibleCheckpoints("tensor '" + p.name + "' has the wrong shape");
        }
        for (std::size_t k = 0; k < p.data.size(); ++k) {
            p.data[k] = t->value.flat()[k];
        }
    }
    return net;
}

ModelCheckpoint TwoLayerNet::to_checkpoint() const {
    ModelCheckpoint ckpt(shape_.topology_tag());
    for (const auto & p : params_) {
        Matrix m(p.rows, p.cols);
        for (std::size_t k = 0; k < p.data.size(); ++k) {
            m.flat()[k] = static_cast<float>(p.data[k]);
        }
        ckpt.add(NamedTensor{p.name, p.rank, std::move(m)});
    }
    return ckpt;
}

ParamTensor & TwoLayerNet::param(std::string_view name) {
    for (auto & p : params_) {
        if (p.name == name) {
            return p;
        }
    }
    throw PreconditionError("network has no parameter '" + std::string(name) + "'");
}

const ParamTensor & TwoLayerNet::param(std::string_view name) const {
    return const_cast<TwoLayerNet *>(this)->param(name);
}

std::vector<std::size_t> TwoLayerNet::sizes() const {
    std::vector<std::size_t> out;
    for (const auto & p : params_) {
        out.push_back(p.data.size());
    }
    return out;
}

ForwardCache TwoLayerNet::forward(const DMatrix & x) const {
    if (x.cols != shape_.input) {
        throw DimensionError("network expects inputs of width " + std::to_string(shape_.input) + ", got " +
                             std::to_string(x.cols));
    }
    const std::size_t n = x.rows;
    const std::size_t d = shape_.input;
    const std::size_t hdim = shape_.hidden;
    const std::size_t k = shape_.classes;
    const auto & w1 = param(kHiddenW).data;
    const auto & b1 = param(kHiddenB).data;
    const auto & wo = param(kOutW).data;
    const auto & bo = param(kOutB).data;

    ForwardCache c;
    c.x = x;
    c.u = DMatrix(n, d);
    c.z = DMatrix(n, hdim);
    c.a = DMatrix(n, hdim);
    c.h = DMatrix(n, hdim);
    c.logits = DMatrix(n, k);
    if (shape_.norm) {
        c.r_in.resize(n);
        c.r_h.resize(n);
    }
    for (std::size_t s = 0; s < n; ++s) {
        if (shape_.norm) {
            c.r_in[s] = rms_forward(x.row(s), param(kInGain).data, c.u.row(s));
        } else {
            std::copy(x.row(s).begin(), x.row(s).end(), c.u.row(s).begin());
        }
        const auto u = c.u.row(s);
        for (std::size_t i = 0; i < hdim; ++i) {
            double acc = b1[i];
            const double * w = w1.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) {
                acc += w[j] * u[j];
            }
            c.z(s, i) = acc;
            c.a(s, i) = acc > 0.0 ? acc : 0.0;
        }
        if (shape_.norm) {
            c.r_h[s] = rms_forward(c.a.row(s), param(kHiddenGain).data, c.h.row(s));
        } else {
            std::copy(c.a.row(s).begin(), c.a.row(s).end(), c.h.row(s).begin());
        }
        const auto h = c.h.row(s);
        for (std::size_t o = 0; o < k; ++o) {
            double acc = bo[o];
            const double * w = wo.data() + o * hdim;
            for (std::size_t j = 0; j < hdim; ++j) {
                acc += w[j] * h[j];
            }
            c.logits(s, o) = acc;
        }
    }
    return c;
}

std::vector<std::vector<double>> TwoLayerNet::backward(const ForwardCache & c, const DMatrix & dlogits) const {
    const std::size_t n = c.x.rows;
    if (dlogits.rows != n || dlogits.cols != shape_.classes) {
        throw DimensionError("backward: dlogits shape does not match the cached batch");
    }
    const std::size_t d = shape_.input;
    const std::size_t hdim = shape_.hidden;
    const std::size_t k = shape_.classes;

    std::vector<std::vector<double>> grads;
    for (const auto & p : params_) {
        grads.emplace_back(p.data.size(), 0.0);
    }
    auto grad_of = [&](std::string_view name) -> std::vector<double> & {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (params_[i].name == name) {
                return grads[i];
            }
        }
        throw PreconditionError("network has no parameter '" + std::string(name) + "'");
    };
    auto & g_w1 = grad_of(kHiddenW);
    auto & g_b1 = grad_of(kHiddenB);
    auto & g_wo = grad_of(kOutW);
    auto & g_bo = grad_of(kOutB);
    const auto & w1 = param(kHiddenW).data;
    const auto & wo = param(kOutW).data;

    std::vector<double> dh(hdim);
    std::vector<double> da(hdim);
    std::vector<double> du(d);
    std::vector<double> dx(d);
    for (std::size_t s = 0; s < n; ++s) {
        const auto dl = dlogits.row(s);
        const auto h = c.h.row(s);
        std::fill(dh.begin(), dh.end(), 0.0);
        for (std::size_t o = 0; o < k; ++o) {
            g_bo[o] += dl[o];
            double * gw = g_wo.data() + o * hdim;
            const double * w = wo.data() + o * hdim;
            for (std::size_t j = 0; j < hdim; ++j) {
                gw[j] += dl[o] * h[j];
                dh[j] += w[j] * dl[o];
            }
        }
        if (shape_.norm) {
            rms_backward(c.a.row(s), param(kHiddenGain).data, c.r_h[s], dh, grad_of(kHiddenGain), da);
        } else {
            da = dh;
        }
        const auto u = c.u.row(s);
        std::fill(du.begin(), du.end(), 0.0);
        for (std::size_t i = 0; i < hdim; ++i) {
            const double dz = c.z(s, i) > 0.0 ? da[i] : 0.0;
            if (dz == 0.0) {
                continue;
            }
            g_b1[i] += dz;
            double * gw = g_w1.data() + i * d;
            const double * w = w1.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) {
                gw[j] += dz * u[j];
                du[j] += w[j] * dz;
            }
        }
        if (shape_.norm) {
            rms_backward(c.x.row(s), param(kInGain).data, c.r_in[s], du, grad_of(kInGain), dx);
        }
    }
    return grads;
}

LossResult cross_entropy(const DMatrix & logits, std::span<const std::uint16_t> labels) {
    if (labels.size() != logits.rows) {
        throw DimensionError("cross-entropy: one label per sample required");
    }
    if (logits.rows == 0) {
        throw PreconditionError("cross-entropy of an empty batch");
    }
    LossResult out;
    out.dlogits = DMatrix(logits.rows, logits.cols);
    const double inv_n = 1.0 / static_cast<double>(logits.rows);
    for (std::size_t s = 0; s < logits.rows; ++s) {
        if (labels[s] >= logits.cols) {
            throw DimensionError("label " + std::to_string(labels[s]) + " out of range");
        }
        const auto z = logits.row(s);
        double mx = z[0];
        for (double v : z) {
            mx = std::max(mx, v);
        }
        double se = 0.0;
        for (double v : z) {
            se += std::exp(v - mx);
        }
        const double lse = mx + std::log(se);
        out.loss += (lse - z[labels[s]]) * inv_n;
        auto g = out.dlogits.row(s);
        for (std::size_t o = 0; o < z.size(); ++o) {
            g[o] = std::exp(z[o] - lse) * inv_n;
        }
        g[labels[s]] -= inv_n;
    }
    return out;
}

LossResult mse(const DMatrix & logits, const DMatrix & target) {
    if (target.rows != logits.rows || target.cols != logits.cols) {
        throw DimensionError("mse: target shape differs from outputs");
    }
    if (logits.rows == 0) {
        throw PreconditionError("mse of an empty batch");
    }
    LossResult out;
    out.dlogits = DMatrix(logits.rows, logits.cols);
    const double inv_n = 1.0 / static_cast<double>(logits.rows);
    for (std::size_t k = 0; k < logits.data.size(); ++k) {
        const double e = logits.data[k] - target.data[k];
        out.loss += 0.5 * e * e * inv_n;
        out.dlogits.data[k] = e * inv_n;
    }
    return out;
}

BatchGrad loss_and_grad(const TwoLayerNet & net, const DMatrix & x, std::span<const std::uint16_t> labels) {
    const ForwardCache c = net.forward(x);
    LossResult l = cross_entropy(c.logits, labels);
    return BatchGrad{l.loss, net.backward(c, l.dlogits)};
}

BatchGrad loss_and_grad_mse(const TwoLayerNet & net, const DMatrix & x, const DMatrix & target) {
    const ForwardCache c = net.forward(x);
    LossResult l = mse(c.logits, target);
    return BatchGrad{l.loss, net.backward(c, l.dlogits)};
}

Matrix TwoLayerAdapter::logits(const ModelCheckpoint & ckpt, const Matrix & batch) const {
    return to_float(TwoLayerNet::from_checkpoint(ckpt).logits(to_double(batch)));
}

std::vector<LayerInput> TwoLayerAdapter::layer_inputs(const ModelCheckpoint & ckpt, const Matrix & batch) const {
    const ForwardCache c = TwoLayerNet::from_checkpoint(ckpt).forward(to_double(batch));
    return {LayerInput{kHiddenW, to_float(c.u)}, LayerInput{kOutW, to_float(c.h)}};
}

}  // namespace dppx
