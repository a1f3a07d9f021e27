#include <catch2/catch_amalgamated.hpp>
#include <functional>

#include "test_helpers.hpp"
#include "wssamnet/losses.hpp"

using namespace wssam;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

// Loss-level gradient contract: central differences at h=1e-3, relative error
// below 1e-3 wherever |gradient| > 1e-6.
constexpr double kH = 1e-3;
constexpr double kRelTol = 1e-3;
constexpr double kGradFloor = 1e-6;

using LossFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

void check_loss_gradients(const LossFn& build, std::vector<Tensor<double>> inputs,
                          const std::vector<bool>& differentiable) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (auto& in : inputs) vars.push_back(tape.leaf(in, true));
    Var<double> out = build(tape, vars);
    tape.backward(out);

    std::size_t checked = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!differentiable[k]) continue;
        const Tensor<double>& g = tape.grad(vars[k]);
        for (std::size_t i = 0; i < inputs[k].data.size(); ++i) {
            if (std::abs(g.data[i]) <= kGradFloor) continue;
            auto eval = [&](double delta) {
                std::vector<Tensor<double>> shifted = inputs;
                shifted[k].data[i] += delta;
                Tape<double> t2;
                std::vector<Var<double>> v2;
                for (auto& in : shifted) v2.push_back(t2.constant(in));
                return build(t2, v2).value().scalar_value();
            };
            const double fd = (eval(kH) - eval(-kH)) / (2 * kH);
            const double rel = std::abs(fd - g.data[i]) / std::abs(g.data[i]);
            INFO("input " << k << " coord " << i << " analytic " << g.data[i] << " fd " << fd);
            CHECK(rel < kRelTol);
            ++checked;
        }
    }
    CHECK(checked > 0);
}

Tensor<double> random_tensor(Rng& rng, ad::TensorShape s, double lo, double hi) {
    Tensor<double> t(s);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

Tensor<double> random_binary(Rng& rng, ad::TensorShape s) {
    Tensor<double> t(s);
    for (auto& v : t.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    return t;
}

}  // namespace

TEST_CASE("focal loss gradient matches finite differences", "[gradients]") {
    Rng rng(71);
    // pred kept away from {0,1} so the h-probe stays in range
    check_loss_gradients(
        [](Tape<double>&, const std::vector<Var<double>>& v) {
            return focal_loss_op(v[0], v[1], FocalParams{});
        },
        {random_tensor(rng, {1, 6, 6, 6}, 0.05, 0.95), random_binary(rng, {1, 6, 6, 6})},
        {true, false});
}

TEST_CASE("local cc gradient matches finite differences", "[gradients]") {
    Rng rng(72);
    CCParams p;
    p.window_radius = 2;
    check_loss_gradients(
        [p](Tape<double>&, const std::vector<Var<double>>& v) {
            return local_cc_op(v[0], v[1], p);
        },
        {random_tensor(rng, {1, 6, 6, 6}, 0, 1), random_tensor(rng, {1, 6, 6, 6}, 0, 1)},
        {true, true});
}

TEST_CASE("mutual information gradient matches finite differences", "[gradients]") {
    Rng rng(73);
    // wide kernel keeps the h=1e-3 truncation error of the probe itself below
    // the tolerance; the sharp-kernel case is covered by the convergence test
    MIParams p;
    p.bins = 8;
    p.kernel_bandwidth = 0.25;
    check_loss_gradients(
        [p](Tape<double>&, const std::vector<Var<double>>& v) {
            return mutual_information_op(v[0], v[1], p);
        },
        {random_tensor(rng, {1, 6, 6, 6}, 0.05, 0.95), random_tensor(rng, {1, 6, 6, 6}, 0.05, 0.95)},
        {true, true});
}

TEST_CASE("mutual information gradient is the finite-difference limit at sharp bandwidth",
          "[gradients]") {
    Rng rng(76);
    MIParams p;  // default 32 bins, bandwidth 1/32
    Tensor<double> a = random_tensor(rng, {1, 6, 6, 6}, 0.05, 0.95);
    Tensor<double> b = random_tensor(rng, {1, 6, 6, 6}, 0.05, 0.95);

    Tape<double> tape;
    auto va = tape.leaf(a, true), vb = tape.leaf(b, true);
    tape.backward(mutual_information_op(va, vb, p));
    const Tensor<double>& g = tape.grad(va);

    auto eval = [&](const Tensor<double>& aa) {
        Tape<double> t;
        return mutual_information_op(t.constant(aa), t.constant(b), p).value().scalar_value();
    };
    const double h = 1e-5;
    std::size_t checked = 0;
    for (std::size_t i = 0; i < a.data.size(); i += 7) {
        if (std::abs(g.data[i]) <= 1e-6) continue;
        Tensor<double> ap = a, am = a;
        ap.data[i] += h;
        am.data[i] -= h;
        const double fd = (eval(ap) - eval(am)) / (2 * h);
        CHECK(std::abs(fd - g.data[i]) / std::abs(g.data[i]) < 1e-4);
        ++checked;
    }
    CHECK(checked > 10);
}

TEST_CASE("smoothness gradient matches finite differences", "[gradients]") {
    Rng rng(74);
    for (int order : {1, 2}) {
        SmoothnessParams p;
        p.order = order;
        check_loss_gradients(
            [p](Tape<double>&, const std::vector<Var<double>>& v) {
                return smoothness_op(v[0], p);
            },
            {random_tensor(rng, {3, 6, 6, 6}, -1.5, 1.5)}, {true});
    }
}

TEST_CASE("combined registration loss gradient flows through LoG and warping", "[gradients]") {
    Rng rng(75);
    // probe parameters chosen so the h=1e-3 truncation error of the finite
    // difference itself stays below the tolerance at every checked coordinate
    RegLossOptions opt;
    opt.cc_params.window_radius = 2;
    opt.cc_params.epsilon = 1e-3;
    opt.mi_params.bins = 8;
    opt.mi_params.kernel_bandwidth = 0.25;
    opt.mi_params.auto_range = false;
    opt.mi_params.range_lo = -1.0;
    opt.mi_params.range_hi = 1.0;
    opt.log_params = LoGParams{1.0, 2};

    Tensor<double> f = random_tensor(rng, {1, 6, 6, 6}, 0.1, 0.9);
    Tensor<double> m = random_tensor(rng, {1, 6, 6, 6}, 0.1, 0.9);
    // fractional displacements, away from lattice kinks by much more than h
    Tensor<double> u(ad::TensorShape{3, 6, 6, 6});
    for (auto& v : u.data) v = rng.uniform(0.2, 0.45);

    check_loss_gradients(
        [opt](Tape<double>&, const std::vector<Var<double>>& v) {
            return registration_loss_op(v[0], v[1], v[2], opt).total;
        },
        {f, m, u}, {true, true, true});
}
