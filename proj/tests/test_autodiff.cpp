#include <catch2/catch_amalgamated.hpp>
#include <functional>

#include "test_helpers.hpp"
#include "wssamnet/interpolate.hpp"
#include "wssamnet/nn_ops.hpp"
#include "wssamnet/tensor_bridge.hpp"

using namespace wssam;
using ad::Tape;
using ad::Tensor;
using ad::TensorShape;
using ad::Var;

namespace {

Tensor<double> random_tensor(Rng& rng, TensorShape s, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(s);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

using GraphFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

// Central-difference check of d(scalar)/d(every input coordinate).
void check_gradients(const GraphFn& build, std::vector<Tensor<double>> inputs, double h = 1e-5,
                     double rel_tol = 1e-5, double abs_floor = 1e-8) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (auto& in : inputs) vars.push_back(tape.leaf(in, true));
    Var<double> out = build(tape, vars);
    REQUIRE(out.value().shape.numel() == 1);
    tape.backward(out);

    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor<double>& g = tape.grad(vars[k]);
        for (std::size_t i = 0; i < inputs[k].data.size(); ++i) {
            auto eval = [&](double delta) {
                std::vector<Tensor<double>> shifted = inputs;
                shifted[k].data[i] += delta;
                Tape<double> t2;
                std::vector<Var<double>> v2;
                for (auto& in : shifted) v2.push_back(t2.constant(in));
                return build(t2, v2).value().scalar_value();
            };
            const double fd = (eval(h) - eval(-h)) / (2 * h);
            const double ga = g.data[i];
            const double err = std::abs(fd - ga);
            const double scale = std::max({std::abs(fd), std::abs(ga), abs_floor});
            INFO("input " << k << " coord " << i << " analytic " << ga << " fd " << fd);
            CHECK(err / scale < rel_tol);
        }
    }
}

// Reference conv3d: straight loops, zero padding.
Tensor<double> conv3d_naive(const Tensor<double>& x, const Tensor<double>& w,
                            const Tensor<double>& b, int k, int stride, int pad) {
    const int ci = x.shape.c;
    const int co = w.shape.c;
    auto odim = [&](int n) { return (n + 2 * pad - k) / stride + 1; };
    Tensor<double> out(TensorShape{co, odim(x.shape.x), odim(x.shape.y), odim(x.shape.z)});
    for (int c = 0; c < co; ++c)
        for (int oz = 0; oz < out.shape.z; ++oz)
            for (int oy = 0; oy < out.shape.y; ++oy)
                for (int ox = 0; ox < out.shape.x; ++ox) {
                    double acc = b.data[std::size_t(c)];
                    for (int ic = 0; ic < ci; ++ic)
                        for (int kz = 0; kz < k; ++kz)
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx) {
                                    const int xx = ox * stride - pad + kx;
                                    const int yy = oy * stride - pad + ky;
                                    const int zz = oz * stride - pad + kz;
                                    if (xx < 0 || yy < 0 || zz < 0 || xx >= x.shape.x ||
                                        yy >= x.shape.y || zz >= x.shape.z)
                                        continue;
                                    const double wv =
                                        w.data[std::size_t(c) * w.shape.spatial() +
                                               std::size_t(ic) * k * k * k +
                                               (std::size_t(kz) * k + ky) * k + kx];
                                    acc += wv * x.at(ic, xx, yy, zz);
                                }
                    out.at(c, ox, oy, oz) = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("conv3d matches a naive reference", "[autodiff]") {
    Rng rng(31);
    for (auto [stride, k] : {std::pair{1, 3}, std::pair{2, 3}, std::pair{1, 1}}) {
        const int pad = k == 1 ? 0 : 1;
        Tensor<double> x = random_tensor(rng, {2, 6, 5, 4});
        Tensor<double> w = random_tensor(rng, {3, 2 * k * k * k, 1, 1});
        Tensor<double> b = random_tensor(rng, {3, 1, 1, 1});
        Tape<double> tape;
        auto out = ad::conv3d(tape.constant(x), tape.constant(w), tape.constant(b), k, stride, pad);
        Tensor<double> ref = conv3d_naive(x, w, b, k, stride, pad);
        REQUIRE(out.value().shape == ref.shape);
        for (std::size_t i = 0; i < ref.data.size(); ++i)
            CHECK(out.value().data[i] == Catch::Approx(ref.data[i]).margin(1e-12));
    }
}

TEST_CASE("conv3d gradients", "[autodiff]") {
    Rng rng(32);
    for (auto [stride, k] : {std::pair{1, 3}, std::pair{2, 3}, std::pair{1, 1}}) {
        const int pad = k == 1 ? 0 : 1;
        check_gradients(
            [k = k, stride = stride, pad](Tape<double>&, const std::vector<Var<double>>& v) {
                return ad::reduce_sum(ad::sigmoid(ad::conv3d(v[0], v[1], v[2], k, stride, pad)));
            },
            {random_tensor(rng, {2, 4, 4, 4}), random_tensor(rng, {2, 2 * k * k * k, 1, 1}),
             random_tensor(rng, {2, 1, 1, 1})});
    }
}

TEST_CASE("instance_norm normalizes and has correct gradients", "[autodiff]") {
    Rng rng(33);
    Tensor<double> x = random_tensor(rng, {2, 4, 3, 3}, 0.0, 5.0);
    Tensor<double> gamma = random_tensor(rng, {2, 1, 1, 1}, 0.5, 1.5);
    Tensor<double> beta = random_tensor(rng, {2, 1, 1, 1});

    Tape<double> tape;
    auto out = ad::instance_norm(tape.constant(x), tape.constant(gamma), tape.constant(beta));
    for (int c = 0; c < 2; ++c) {
        double mean = 0, var = 0;
        const double* ch = out.value().channel(c);
        const auto n = out.value().shape.spatial();
        for (std::int64_t i = 0; i < n; ++i) mean += ch[i];
        mean /= double(n);
        for (std::int64_t i = 0; i < n; ++i) var += (ch[i] - mean) * (ch[i] - mean);
        var /= double(n);
        CHECK(mean == Catch::Approx(beta.data[std::size_t(c)]).margin(1e-9));
        CHECK(std::sqrt(var) == Catch::Approx(std::abs(gamma.data[std::size_t(c)])).epsilon(1e-3));
    }

    check_gradients(
        [](Tape<double>&, const std::vector<Var<double>>& v) {
            return ad::reduce_sum(ad::sigmoid(ad::instance_norm(v[0], v[1], v[2])));
        },
        {x, gamma, beta}, 1e-6, 1e-5);
}

TEST_CASE("activation gradients", "[autodiff]") {
    Rng rng(34);
    check_gradients(
        [](Tape<double>&, const std::vector<Var<double>>& v) {
            return ad::reduce_sum(ad::leaky_relu(v[0], 0.2));
        },
        {random_tensor(rng, {1, 4, 4, 4}, 0.05, 2.0)});
    check_gradients(
        [](Tape<double>&, const std::vector<Var<double>>& v) {
            return ad::reduce_mean(ad::sigmoid(v[0]));
        },
        {random_tensor(rng, {2, 3, 3, 3}, -2.0, 2.0)});
}

TEST_CASE("upsample2x doubles dims, preserves constants, exact adjoint", "[autodiff]") {
    Rng rng(35);
    Tensor<double> c(TensorShape{1, 4, 4, 4}, 3.5);
    Tape<double> tape;
    auto up = ad::upsample2x(tape.constant(c));
    CHECK(up.value().shape == TensorShape{1, 8, 8, 8});
    for (double v : up.value().data) CHECK(v == Catch::Approx(3.5).margin(1e-12));

    check_gradients(
        [](Tape<double>&, const std::vector<Var<double>>& v) {
            return ad::reduce_sum(ad::mul(ad::upsample2x(v[0]), ad::upsample2x(v[0])));
        },
        {random_tensor(rng, {2, 3, 2, 3})});
}

TEST_CASE("concat and slice route gradients to the right channels", "[autodiff]") {
    Rng rng(36);
    check_gradients(
        [](Tape<double>&, const std::vector<Var<double>>& v) {
            auto cat = ad::concat_c(v[0], v[1]);
            return ad::reduce_sum(ad::mul(cat, cat));
        },
        {random_tensor(rng, {2, 3, 3, 2}), random_tensor(rng, {1, 3, 3, 2})});
    check_gradients(
        [](Tape<double>&, const std::vector<Var<double>>& v) {
            return ad::reduce_sum(ad::slice_c(v[0], 1, 2));
        },
        {random_tensor(rng, {4, 2, 2, 2})});
}

TEST_CASE("warp op matches warp_volume and keeps zero-field identity bitwise", "[autodiff]") {
    Rng rng(37);
    Volume<double> m = testing::random_volume<double>(rng, {5, 5, 5});
    DisplacementField<double> f = testing::smooth_sine_field<double>({5, 5, 5}, 0.8);
    Volume<double> ref = warp_volume(m, f);

    Tape<double> tape;
    auto mw = ad::warp(tape.constant(to_tensor<double>(m)), tape.constant(to_tensor<double>(f)));
    for (std::size_t i = 0; i < ref.voxel_count(); ++i)
        CHECK(mw.value().data[i] == Catch::Approx(ref[i]).margin(1e-12));

    Tensor<double> zero(TensorShape{3, 5, 5, 5});
    Tape<double> t2;
    auto idw = ad::warp(t2.constant(to_tensor<double>(m)), t2.constant(zero));
    for (std::size_t i = 0; i < ref.voxel_count(); ++i) CHECK(idw.value().data[i] == m[i]);
}

TEST_CASE("warp gradients w.r.t. image and field", "[autodiff]") {
    Rng rng(38);
    Tensor<double> m = random_tensor(rng, {1, 4, 4, 4});
    // keep displacements inside one cell so the FD probe stays on a linear piece
    Tensor<double> u(TensorShape{3, 4, 4, 4});
    for (auto& v : u.data) v = rng.uniform(0.25, 0.45);

    check_gradients(
        [](Tape<double>&, const std::vector<Var<double>>& v) {
            auto w = ad::warp(v[0], v[1]);
            return ad::reduce_sum(ad::mul(w, w));
        },
        {m, u}, 1e-5, 1e-5);
}

TEST_CASE("boxsum matches per-window loops and is self-adjoint", "[autodiff]") {
    Rng rng(39);
    Tensor<double> x = random_tensor(rng, {1, 5, 4, 6});
    const int r = 1;
    Tape<double> tape;
    auto s = ad::boxsum(tape.constant(x), r);
    for (int z = 0; z < 6; ++z)
        for (int y = 0; y < 4; ++y)
            for (int xx = 0; xx < 5; ++xx) {
                double acc = 0;
                for (int dz = -r; dz <= r; ++dz)
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx) {
                            const int a = xx + dx, b = y + dy, c = z + dz;
                            if (a < 0 || b < 0 || c < 0 || a >= 5 || b >= 4 || c >= 6) continue;
                            acc += x.at(0, a, b, c);
                        }
                CHECK(s.value().at(0, xx, y, z) == Catch::Approx(acc).margin(1e-12));
            }

    check_gradients(
        [](Tape<double>&, const std::vector<Var<double>>& v) {
            auto s = ad::boxsum(v[0], 2);
            return ad::reduce_sum(ad::mul(s, s));
        },
        {random_tensor(rng, {1, 5, 5, 5})});
}

TEST_CASE("fixed reflect-padded convolution gradient", "[autodiff]") {
    Rng rng(40);
    auto kernel = std::make_shared<const std::vector<double>>([&] {
        std::vector<double> k(27);
        for (auto& v : k) v = rng.uniform(-1, 1);
        return k;
    }());
    check_gradients(
        [kernel](Tape<double>&, const std::vector<Var<double>>& v) {
            auto f = ad::fixed_conv_reflect(v[0], kernel, 1);
            return ad::reduce_sum(ad::mul(f, f));
        },
        {random_tensor(rng, {1, 4, 4, 4})});
}

TEST_CASE("elementwise ops and linear_combine", "[autodiff]") {
    Rng rng(41);
    check_gradients(
        [](Tape<double>&, const std::vector<Var<double>>& v) {
            auto s1 = ad::reduce_sum(ad::mul(v[0], v[1]));
            auto s2 = ad::reduce_mean(ad::add(v[0], v[1]));
            auto s3 = ad::reduce_sum(ad::scale(v[0], 1.7));
            return ad::linear_combine<double>({{s1, 2.0}, {s2, -0.5}, {s3, 3.0}});
        },
        {random_tensor(rng, {2, 3, 2, 2}), random_tensor(rng, {2, 3, 2, 2})});
}
