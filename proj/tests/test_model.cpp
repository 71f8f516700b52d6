#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dppx/errors.hpp"
#include "dppx/model.hpp"

#include <cmath>

using namespace dppx;

namespace {

NetShape small(bool norm) { return NetShape{5, 7, 3, norm}; }

// random gains and biases too, so every tensor gets a nonzero gradient
TwoLayerNet random_net(NetShape s, std::uint64_t seed) {
    TwoLayerNet net = TwoLayerNet::init(s, seed);
    RngStream rng(seed, "perturb");
    for (auto & p : net.params()) {
        if (p.rank == TensorRank::vector) {
            for (double & v : p.data) {
                v += 0.3 * rng.next_normal();
            }
        }
    }
    return net;
}

DMatrix random_x(std::size_t n, std::size_t d, std::uint64_t seed) {
    DMatrix x(n, d);
    RngStream rng(seed, "x");
    for (double & v : x.data) {
        v = rng.next_normal();
    }
    return x;
}

// straight-line reference forward for one sample
std::vector<double> ref_forward(const TwoLayerNet & net, std::span<const double> x) {
    const NetShape & s = net.shape();
    auto norm = [&](std::vector<double> v, const char * gain) {
        if (!s.norm) {
            return v;
        }
        double ss = 0.0;
        for (double e : v) {
            ss += e * e;
        }
        const double r = std::sqrt(ss / static_cast<double>(v.size()) + kNormEps);
        const auto & g = net.param(gain).data;
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = g[i] * v[i] / r;
        }
        return v;
    };
    const std::vector<double> u = norm(std::vector<double>(x.begin(), x.end()), "in_norm.gain");
    std::vector<double> a(s.hidden);
    const auto & w1 = net.param("hidden.weight").data;
    const auto & b1 = net.param("hidden.bias").data;
    for (std::size_t i = 0; i < s.hidden; ++i) {
        double z = b1[i];
        for (std::size_t j = 0; j < s.input; ++j) {
            z += w1[i * s.input + j] * u[j];
        }
        a[i] = z > 0.0 ? z : 0.0;
    }
    const std::vector<double> h = norm(a, "hidden_norm.gain");
    std::vector<double> out(s.classes);
    const auto & wo = net.param("out.weight").data;
    const auto & bo = net.param("out.bias").data;
    for (std::size_t o = 0; o < s.classes; ++o) {
        out[o] = bo[o];
        for (std::size_t j = 0; j < s.hidden; ++j) {
            out[o] += wo[o * s.hidden + j] * h[j];
        }
    }
    return out;
}

std::vector<bool> active(const ForwardCache & c) {
    std::vector<bool> out(c.z.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = c.z.data[i] > 0.0;
    }
    return out;
}

}  // namespace

TEST_CASE("zero network gives zero logits") {
    TwoLayerNet net(small(true));
    for (auto & p : net.params()) {
        if (p.name.find("gain") == std::string::npos) {
            std::fill(p.data.begin(), p.data.end(), 0.0);
        }
    }
    const DMatrix lg = net.logits(random_x(4, 5, 1));
    for (double v : lg.data) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("identity construction returns the normalized hidden") {
    TwoLayerNet net = TwoLayerNet::init(NetShape{4, 4, 4, true}, 2);
    for (auto & p : net.params()) {
        if (p.rank == TensorRank::matrix) {
            std::fill(p.data.begin(), p.data.end(), 0.0);
            for (std::size_t i = 0; i < 4; ++i) {
                p.data[i * 4 + i] = 1.0;
            }
        }
    }
    DMatrix x = random_x(3, 4, 3);
    for (double & v : x.data) {
        v = std::abs(v) + 0.1;
    }
    const ForwardCache c = net.forward(x);
    for (std::size_t i = 0; i < c.z.data.size(); ++i) {
        CHECK(c.z.data[i] >= 0.0);
        CHECK(c.logits.data[i] == doctest::Approx(c.h.data[i]));
    }
}

TEST_CASE("forward matches a reference implementation") {
    for (bool norm : {true, false}) {
        const TwoLayerNet net = random_net(NetShape{9, 11, 4, norm}, 5);
        const DMatrix x = random_x(3, 9, 6);
        const DMatrix lg = net.logits(x);
        for (std::size_t s = 0; s < 3; ++s) {
            const auto ref = ref_forward(net, x.row(s));
            for (std::size_t o = 0; o < 4; ++o) {
                CHECK(std::abs(lg(s, o) - ref[o]) < 1e-6);
            }
        }
    }
    CHECK_THROWS_AS(random_net(small(true), 1).logits(random_x(2, 4, 1)), DimensionError);
}

TEST_CASE("gradients match central finite differences") {
    for (bool norm : {true, false}) {
        TwoLayerNet net = random_net(small(norm), 7);
        const DMatrix x = random_x(6, 5, 8);
        const std::vector<std::uint16_t> y{0, 1, 2, 2, 1, 0};
        const BatchGrad bg = loss_and_grad(net, x, y);
        REQUIRE(bg.grads.size() == net.params().size());
        RngStream pick(9, "coords");
        const double h = 1e-3;
        for (std::size_t t = 0; t < net.params().size(); ++t) {
            auto & data = net.params()[t].data;
            int checked = 0;
            for (int tries = 0; checked < 5 && tries < 200; ++tries) {
                const std::size_t i = pick.next_below(data.size());
                const double keep = data[i];
                data[i] = keep + h;
                const ForwardCache cu = net.forward(x);
                data[i] = keep - h;
                const ForwardCache cd = net.forward(x);
                data[i] = keep;
                // central differences are meaningless across a relu kink
                if (active(cu) != active(cd) || active(cu) != active(net.forward(x))) {
                    continue;
                }
                ++checked;
                const double up = cross_entropy(cu.logits, y).loss;
                const double dn = cross_entropy(cd.logits, y).loss;
                const double fd = (up - dn) / (2.0 * h);
                const double an = bg.grads[t][i];
                INFO(net.params()[t].name << "[" << i << "] norm=" << norm);
                CHECK(std::abs(fd - an) <= 1e-4 * std::max(1.0, std::abs(fd)));
            }
            CHECK(checked == 5);
        }
    }
}

TEST_CASE("mse at an exact fit has zero gradient") {
    const TwoLayerNet net = random_net(small(true), 10);
    const DMatrix x = random_x(4, 5, 11);
    const BatchGrad bg = loss_and_grad_mse(net, x, net.logits(x));
    CHECK(bg.loss == 0.0);
    for (const auto & g : bg.grads) {
        for (double v : g) {
            CHECK(v == 0.0);
        }
    }
}

TEST_CASE("mean-loss gradient is linear in batch concatenation") {
    const TwoLayerNet net = random_net(small(true), 12);
    const DMatrix a = random_x(3, 5, 13);
    const DMatrix b = random_x(5, 5, 14);
    DMatrix ab(8, 5);
    std::copy(a.data.begin(), a.data.end(), ab.data.begin());
    std::copy(b.data.begin(), b.data.end(), ab.data.begin() + 15);
    const std::vector<std::uint16_t> ya{0, 1, 2}, yb{2, 2, 1, 0, 1};
    std::vector<std::uint16_t> yab = ya;
    yab.insert(yab.end(), yb.begin(), yb.end());
    const BatchGrad ga = loss_and_grad(net, a, ya);
    const BatchGrad gb = loss_and_grad(net, b, yb);
    const BatchGrad gab = loss_and_grad(net, ab, yab);
    CHECK(gab.loss == doctest::Approx((3 * ga.loss + 5 * gb.loss) / 8));
    for (std::size_t t = 0; t < gab.grads.size(); ++t) {
        for (std::size_t i = 0; i < gab.grads[t].size(); ++i) {
            CHECK(std::abs(gab.grads[t][i] - (3 * ga.grads[t][i] + 5 * gb.grads[t][i]) / 8) < 1e-6);
        }
    }
}

TEST_CASE("checkpoint conversion and adapter") {
    const TwoLayerNet net = random_net(NetShape{6, 8, 3, true}, 15);
    const ModelCheckpoint ck = net.to_checkpoint();
    CHECK(ck.topology_tag() == "twolayer-d6-h8-k3-rmsnorm");
    CHECK(parse_topology_tag(ck.topology_tag()) == net.shape());
    CHECK(parse_topology_tag("twolayer-d6-h8-k3-identity").norm == false);
    CHECK_THROWS_AS(parse_topology_tag("resnet"), IncompatibleCheckpoints);
    const TwoLayerNet back = TwoLayerNet::from_checkpoint(ck);
    CHECK(back.to_checkpoint() == ck);

    const DMatrix x = random_x(4, 6, 16);
    const Matrix xf = to_float(x);
    const Matrix lg = TwoLayerAdapter().logits(ck, xf);
    const DMatrix ref = back.logits(to_double(xf));
    for (std::size_t i = 0; i < ref.data.size(); ++i) {
        CHECK(lg.flat()[i] == doctest::Approx(ref.data[i]).epsilon(1e-5));
    }
    const auto li = TwoLayerAdapter().layer_inputs(ck, xf);
    REQUIRE(li.size() == 2);
    CHECK(li[0].tensor == "hidden.weight");
    CHECK(li[0].inputs.cols() == 6);
    CHECK(li[1].tensor == "out.weight");
    CHECK(li[1].inputs.cols() == 8);
}
