#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "wssamnet/autodiff.hpp"

namespace wssam::ad {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline int conv_out_dim(int n, int k, int stride, int pad) {
    const int numer = n + 2 * pad - k;
    if (numer < 0) return 0;
    return numer / stride + 1;
}

// Gathers conv patches into a row-major [ci*k^3 x out_voxels] matrix (one tap
// per row), so the GEMM writes channel-major output directly and the inner
// copies run over contiguous x-spans.
template <typename T>
void im2col(const Tensor<T>& x, int k, int stride, int pad, const TensorShape& out,
            std::vector<T>& col) {
    const int ci = x.shape.c, nx = x.shape.x, ny = x.shape.y, nz = x.shape.z;
    const std::int64_t nvox = out.spatial();
    col.assign(std::size_t(ci) * k * k * k * nvox, T(0));

    std::int64_t row = 0;
    for (int c = 0; c < ci; ++c) {
        const T* src = x.channel(c);
        for (int kz = 0; kz < k; ++kz)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx, ++row) {
                    T* dst = col.data() + row * nvox;
                    // valid output range along x: 0 <= ox*stride - pad + kx < nx
                    const int offx = kx - pad, offy = ky - pad, offz = kz - pad;
                    int ox_lo = offx < 0 ? (-offx + stride - 1) / stride : 0;
                    int ox_hi = std::min<std::int64_t>(out.x, (std::int64_t(nx) - offx + stride - 1) / stride);
                    if (ox_hi < ox_lo) ox_hi = ox_lo;
                    for (int oz = 0; oz < out.z; ++oz) {
                        const int zz = oz * stride + offz;
                        if (zz < 0 || zz >= nz) continue;
                        for (int oy = 0; oy < out.y; ++oy) {
                            const int yy = oy * stride + offy;
                            if (yy < 0 || yy >= ny) continue;
                            const T* plane = src + (std::size_t(zz) * ny + yy) * nx;
                            T* d = dst + (std::size_t(oz) * out.y + oy) * out.x;
                            if (stride == 1) {
                                for (int ox = ox_lo; ox < ox_hi; ++ox) d[ox] = plane[ox + offx];
                            } else {
                                for (int ox = ox_lo; ox < ox_hi; ++ox)
                                    d[ox] = plane[ox * stride + offx];
                            }
                        }
                    }
                }
    }
}

// Adjoint of im2col: scatter-adds tap rows back onto the input grid.
template <typename T>
void col2im_accum(const std::vector<T>& col, int k, int stride, int pad, const TensorShape& out,
                  Tensor<T>& gx) {
    const int ci = gx.shape.c, nx = gx.shape.x, ny = gx.shape.y, nz = gx.shape.z;
    const std::int64_t nvox = out.spatial();

    std::int64_t row = 0;
    for (int c = 0; c < ci; ++c) {
        T* dst = gx.channel(c);
        for (int kz = 0; kz < k; ++kz)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx, ++row) {
                    const T* src = col.data() + row * nvox;
                    const int offx = kx - pad, offy = ky - pad, offz = kz - pad;
                    int ox_lo = offx < 0 ? (-offx + stride - 1) / stride : 0;
                    int ox_hi = std::min<std::int64_t>(out.x, (std::int64_t(nx) - offx + stride - 1) / stride);
                    if (ox_hi < ox_lo) ox_hi = ox_lo;
                    for (int oz = 0; oz < out.z; ++oz) {
                        const int zz = oz * stride + offz;
                        if (zz < 0 || zz >= nz) continue;
                        for (int oy = 0; oy < out.y; ++oy) {
                            const int yy = oy * stride + offy;
                            if (yy < 0 || yy >= ny) continue;
                            T* plane = dst + (std::size_t(zz) * ny + yy) * nx;
                            const T* s = src + (std::size_t(oz) * out.y + oy) * out.x;
                            if (stride == 1) {
                                for (int ox = ox_lo; ox < ox_hi; ++ox) plane[ox + offx] += s[ox];
                            } else {
                                for (int ox = ox_lo; ox < ox_hi; ++ox)
                                    plane[ox * stride + offx] += s[ox];
                            }
                        }
                    }
                }
    }
}

}  // namespace detail

/// 3D convolution, zero padding. Weight layout: {co, ci*k^3, 1, 1}, each output
/// channel a contiguous row ordered [ci][kz][ky][kx]. Bias shape {co,1,1,1}.
template <typename T>
Var<T> conv3d(Var<T> x, Var<T> w, Var<T> b, int k, int stride, int pad) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& vx = t.val(x.id);
    const Tensor<T>& vw = t.val(w.id);
    const Tensor<T>& vb = t.val(b.id);

    const int ci = vx.shape.c;
    const int co = vw.shape.c;
    const int k3 = k * k * k;
    const std::int64_t K = std::int64_t(ci) * k3;
    if (vw.shape.spatial() != K)
        throw invalid_input_error("conv3d: weight shape does not match input channels");
    if (vb.shape.c != co || vb.shape.spatial() != 1)
        throw invalid_input_error("conv3d: bias shape mismatch");

    TensorShape out_shape{co, detail::conv_out_dim(vx.shape.x, k, stride, pad),
                          detail::conv_out_dim(vx.shape.y, k, stride, pad),
                          detail::conv_out_dim(vx.shape.z, k, stride, pad)};
    if (out_shape.x < 1 || out_shape.y < 1 || out_shape.z < 1)
        throw invalid_input_error("conv3d: input too small for kernel");

    std::vector<T> col;
    detail::im2col(vx, k, stride, pad, out_shape, col);
    const std::int64_t nvox = out_shape.spatial();

    Tensor<T> out(out_shape);
    {
        Eigen::Map<const detail::RowMat<T>> Col(col.data(), K, nvox);
        Eigen::Map<const detail::RowMat<T>> W(vw.data.data(), co, K);
        Eigen::Map<detail::RowMat<T>> Y(out.data.data(), co, nvox);
        Y.noalias() = W * Col;
        for (int c = 0; c < co; ++c) Y.row(c).array() += vb.data[std::size_t(c)];
    }

    const int ix = x.id, iw = w.id, ib = b.id;
    return t.emit_var(std::move(out), {ix, iw, ib},
                      [ix, iw, ib, k, stride, pad, out_shape](Tape<T>& tp, int self) {
                          const Tensor<T>& g = tp.gbuf(self);
                          const Tensor<T>& vx = tp.val(ix);
                          const Tensor<T>& vw = tp.val(iw);
                          const int co = vw.shape.c;
                          const std::int64_t K = vw.shape.spatial();
                          const std::int64_t nvox = out_shape.spatial();

                          Eigen::Map<const detail::RowMat<T>> gY(g.data.data(), co, nvox);

                          if (tp.needs(ib)) {
                              Tensor<T>& gb = tp.gbuf(ib);
                              for (int c = 0; c < co; ++c) {
                                  double acc = 0;
                                  const T* src = g.channel(c);
                                  for (std::int64_t v = 0; v < nvox; ++v) acc += double(src[v]);
                                  gb.data[std::size_t(c)] += T(acc);
                              }
                          }

                          if (tp.needs(iw)) {
                              std::vector<T> col;
                              detail::im2col(vx, k, stride, pad, out_shape, col);
                              Eigen::Map<const detail::RowMat<T>> Col(col.data(), K, nvox);
                              Tensor<T>& gw = tp.gbuf(iw);
                              Eigen::Map<detail::RowMat<T>> gW(gw.data.data(), co, K);
                              gW.noalias() += gY * Col.transpose();
                          }

                          if (tp.needs(ix)) {
                              Eigen::Map<const detail::RowMat<T>> W(vw.data.data(), co, K);
                              std::vector<T> dcol(std::size_t(K) * nvox);
                              Eigen::Map<detail::RowMat<T>> dCol(dcol.data(), K, nvox);
                              dCol.noalias() = W.transpose() * gY;
                              detail::col2im_accum(dcol, k, stride, pad, out_shape, tp.gbuf(ix));
                          }
                      });
}

/// Per-channel normalization over the spatial extent with learned scale/shift.
template <typename T>
Var<T> instance_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps = 1e-5) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& vx = t.val(x.id);
    const Tensor<T>& vg = t.val(gamma.id);
    const Tensor<T>& vb = t.val(beta.id);
    const int C = vx.shape.c;
    const std::int64_t N = vx.shape.spatial();
    if (vg.shape.c != C || vb.shape.c != C || vg.shape.spatial() != 1 || vb.shape.spatial() != 1)
        throw invalid_input_error("instance_norm: parameter shape mismatch");

    auto mu = std::make_shared<std::vector<double>>(C);
    auto inv = std::make_shared<std::vector<double>>(C);

    Tensor<T> out(vx.shape);
    for (int c = 0; c < C; ++c) {
        const T* src = vx.channel(c);
        double m = 0;
        for (std::int64_t i = 0; i < N; ++i) m += double(src[i]);
        m /= double(N);
        double v = 0;
        for (std::int64_t i = 0; i < N; ++i) {
            const double d = double(src[i]) - m;
            v += d * d;
        }
        v /= double(N);
        const double is = 1.0 / std::sqrt(v + eps);
        (*mu)[c] = m;
        (*inv)[c] = is;
        const double gm = double(vg.data[std::size_t(c)]);
        const double bt = double(vb.data[std::size_t(c)]);
        T* dst = out.channel(c);
        for (std::int64_t i = 0; i < N; ++i) dst[i] = T((double(src[i]) - m) * is * gm + bt);
    }

    const int ix = x.id, ig = gamma.id, ib = beta.id;
    return t.emit_var(std::move(out), {ix, ig, ib}, [ix, ig, ib, mu, inv](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.gbuf(self);
        const Tensor<T>& vx = tp.val(ix);
        const Tensor<T>& vg = tp.val(ig);
        const int C = vx.shape.c;
        const std::int64_t N = vx.shape.spatial();

        for (int c = 0; c < C; ++c) {
            const T* xs = vx.channel(c);
            const T* gs = g.channel(c);
            const double m = (*mu)[c], is = (*inv)[c];
            double sum_g = 0, sum_gx = 0;
            for (std::int64_t i = 0; i < N; ++i) {
                const double xh = (double(xs[i]) - m) * is;
                sum_g += double(gs[i]);
                sum_gx += double(gs[i]) * xh;
            }
            if (tp.needs(ig)) tp.gbuf(ig).data[std::size_t(c)] += T(sum_gx);
            if (tp.needs(ib)) tp.gbuf(ib).data[std::size_t(c)] += T(sum_g);
            if (tp.needs(ix)) {
                T* gx = tp.gbuf(ix).channel(c);
                const double gm = double(vg.data[std::size_t(c)]);
                const double mg = sum_g / double(N), mgx = sum_gx / double(N);
                for (std::int64_t i = 0; i < N; ++i) {
                    const double xh = (double(xs[i]) - m) * is;
                    gx[i] += T(gm * is * (double(gs[i]) - mg - xh * mgx));
                }
            }
        }
    });
}

template <typename T>
Var<T> leaky_relu(Var<T> x, double slope) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& vx = t.val(x.id);
    Tensor<T> out(vx.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = vx.data[i] >= T(0) ? vx.data[i] : T(slope) * vx.data[i];
    const int ix = x.id;
    return t.emit_var(std::move(out), {ix}, [ix, slope](Tape<T>& tp, int self) {
        if (!tp.needs(ix)) return;
        const Tensor<T>& g = tp.gbuf(self);
        const Tensor<T>& vx = tp.val(ix);
        Tensor<T>& gx = tp.gbuf(ix);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            gx.data[i] += vx.data[i] >= T(0) ? g.data[i] : T(slope) * g.data[i];
    });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& vx = t.val(x.id);
    Tensor<T> out(vx.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = T(1) / (T(1) + std::exp(-vx.data[i]));
    const int ix = x.id;
    return t.emit_var(std::move(out), {ix}, [ix](Tape<T>& tp, int self) {
        if (!tp.needs(ix)) return;
        const Tensor<T>& g = tp.gbuf(self);
        const Tensor<T>& y = tp.val(self);
        Tensor<T>& gx = tp.gbuf(ix);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            gx.data[i] += g.data[i] * y.data[i] * (T(1) - y.data[i]);
    });
}

namespace detail {

struct UpsampleTable {
    std::vector<int> i0, i1;
    std::vector<double> w1;
};

inline UpsampleTable upsample_axis_table(int n_in) {
    UpsampleTable t;
    const int n_out = 2 * n_in;
    t.i0.resize(n_out);
    t.i1.resize(n_out);
    t.w1.resize(n_out);
    for (int o = 0; o < n_out; ++o) {
        const double src = 0.5 * o - 0.25;
        int i0 = int(std::floor(src));
        const double w = src - i0;
        int i1 = i0 + 1;
        t.i0[o] = std::clamp(i0, 0, n_in - 1);
        t.i1[o] = std::clamp(i1, 0, n_in - 1);
        t.w1[o] = w;
    }
    return t;
}

}  // namespace detail

/// Trilinear x2 upsampling (half-pixel alignment, border replicated).
template <typename T>
Var<T> upsample2x(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& vx = t.val(x.id);
    const TensorShape in = vx.shape;
    const TensorShape os{in.c, 2 * in.x, 2 * in.y, 2 * in.z};

    auto tx = std::make_shared<detail::UpsampleTable>(detail::upsample_axis_table(in.x));
    auto ty = std::make_shared<detail::UpsampleTable>(detail::upsample_axis_table(in.y));
    auto tz = std::make_shared<detail::UpsampleTable>(detail::upsample_axis_table(in.z));

    Tensor<T> out(os);
    for (int c = 0; c < in.c; ++c) {
        const T* src = vx.channel(c);
        T* dst = out.channel(c);
        std::size_t oi = 0;
        for (int oz = 0; oz < os.z; ++oz) {
            const int z0 = tz->i0[oz], z1 = tz->i1[oz];
            const double wz = tz->w1[oz];
            for (int oy = 0; oy < os.y; ++oy) {
                const int y0 = ty->i0[oy], y1 = ty->i1[oy];
                const double wy = ty->w1[oy];
                for (int ox = 0; ox < os.x; ++ox, ++oi) {
                    const int x0 = tx->i0[ox], x1 = tx->i1[ox];
                    const double wx = tx->w1[ox];
                    auto v = [&](int xx, int yy, int zz) {
                        return double(src[(std::size_t(zz) * in.y + yy) * in.x + xx]);
                    };
                    const double c00 = v(x0, y0, z0) * (1 - wx) + v(x1, y0, z0) * wx;
                    const double c10 = v(x0, y1, z0) * (1 - wx) + v(x1, y1, z0) * wx;
                    const double c01 = v(x0, y0, z1) * (1 - wx) + v(x1, y0, z1) * wx;
                    const double c11 = v(x0, y1, z1) * (1 - wx) + v(x1, y1, z1) * wx;
                    dst[oi] = T((c00 * (1 - wy) + c10 * wy) * (1 - wz) +
                                (c01 * (1 - wy) + c11 * wy) * wz);
                }
            }
        }
    }

    const int ix = x.id;
    return t.emit_var(std::move(out), {ix}, [ix, tx, ty, tz, in, os](Tape<T>& tp, int self) {
        if (!tp.needs(ix)) return;
        const Tensor<T>& g = tp.gbuf(self);
        Tensor<T>& gx = tp.gbuf(ix);
        for (int c = 0; c < in.c; ++c) {
            const T* gs = g.channel(c);
            T* gd = gx.channel(c);
            std::size_t oi = 0;
            for (int oz = 0; oz < os.z; ++oz) {
                const int z0 = tz->i0[oz], z1 = tz->i1[oz];
                const double wz = tz->w1[oz];
                for (int oy = 0; oy < os.y; ++oy) {
                    const int y0 = ty->i0[oy], y1 = ty->i1[oy];
                    const double wy = ty->w1[oy];
                    for (int ox = 0; ox < os.x; ++ox, ++oi) {
                        const int x0 = tx->i0[ox], x1 = tx->i1[ox];
                        const double wx = tx->w1[ox];
                        const double gv = double(gs[oi]);
                        auto acc = [&](int xx, int yy, int zz, double w) {
                            gd[(std::size_t(zz) * in.y + yy) * in.x + xx] += T(gv * w);
                        };
                        acc(x0, y0, z0, (1 - wx) * (1 - wy) * (1 - wz));
                        acc(x1, y0, z0, wx * (1 - wy) * (1 - wz));
                        acc(x0, y1, z0, (1 - wx) * wy * (1 - wz));
                        acc(x1, y1, z0, wx * wy * (1 - wz));
                        acc(x0, y0, z1, (1 - wx) * (1 - wy) * wz);
                        acc(x1, y0, z1, wx * (1 - wy) * wz);
                        acc(x0, y1, z1, (1 - wx) * wy * wz);
                        acc(x1, y1, z1, wx * wy * wz);
                    }
                }
            }
        }
    });
}

/// Channel concatenation.
template <typename T>
Var<T> concat_c(Var<T> a, Var<T> b) {
    Tape<T>& t = *a.tape;
    const Tensor<T>&va = t.val(a.id), &vb = t.val(b.id);
    if (!va.shape.same_spatial(vb.shape)) throw invalid_input_error("concat_c: spatial mismatch");
    TensorShape os{va.shape.c + vb.shape.c, va.shape.x, va.shape.y, va.shape.z};
    Tensor<T> out(os);
    std::copy(va.data.begin(), va.data.end(), out.data.begin());
    std::copy(vb.data.begin(), vb.data.end(), out.data.begin() + va.data.size());
    const int ia = a.id, ib = b.id;
    const std::size_t na = va.data.size();
    return t.emit_var(std::move(out), {ia, ib}, [ia, ib, na](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.gbuf(self);
        if (tp.needs(ia)) {
            Tensor<T>& ga = tp.gbuf(ia);
            for (std::size_t i = 0; i < na; ++i) ga.data[i] += g.data[i];
        }
        if (tp.needs(ib)) {
            Tensor<T>& gb = tp.gbuf(ib);
            for (std::size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += g.data[na + i];
        }
    });
}

/// Slice a channel range [c0, c0+n).
template <typename T>
Var<T> slice_c(Var<T> a, int c0, int n) {
    Tape<T>& t = *a.tape;
    const Tensor<T>& va = t.val(a.id);
    if (c0 < 0 || n < 1 || c0 + n > va.shape.c) throw invalid_input_error("slice_c: bad range");
    TensorShape os{n, va.shape.x, va.shape.y, va.shape.z};
    Tensor<T> out(os);
    const std::size_t sp = std::size_t(va.shape.spatial());
    std::copy(va.channel(c0), va.channel(c0) + sp * n, out.data.begin());
    const int ia = a.id;
    return t.emit_var(std::move(out), {ia}, [ia, c0, sp, n](Tape<T>& tp, int self) {
        if (!tp.needs(ia)) return;
        const Tensor<T>& g = tp.gbuf(self);
        Tensor<T>& ga = tp.gbuf(ia);
        T* dst = ga.channel(c0);
        for (std::size_t i = 0; i < sp * n; ++i) dst[i] += g.data[i];
    });
}

enum class WarpBoundary { zero_pad, clamp };

/// Warps every channel of `m` through p -> p + u(p); u has 3 channels (x,y,z
/// displacement in voxels) on the same spatial grid. Gradients flow to both
/// the source image and the field.
template <typename T>
Var<T> warp(Var<T> m, Var<T> u, WarpBoundary mode = WarpBoundary::zero_pad) {
    Tape<T>& t = *m.tape;
    const Tensor<T>& vm = t.val(m.id);
    const Tensor<T>& vu = t.val(u.id);
    if (vu.shape.c != 3 || !vu.shape.same_spatial(vm.shape))
        throw invalid_input_error("warp: field must be {3, spatial-of-image}");

    const TensorShape s = vm.shape;
    const std::int64_t N = s.spatial();
    const int nx = s.x, ny = s.y, nz = s.z;

    auto corner = [&](const T* src, int xx, int yy, int zz) -> double {
        if (mode == WarpBoundary::clamp) {
            xx = std::clamp(xx, 0, nx - 1);
            yy = std::clamp(yy, 0, ny - 1);
            zz = std::clamp(zz, 0, nz - 1);
        } else if (xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny || zz >= nz) {
            return 0.0;
        }
        return double(src[(std::size_t(zz) * ny + yy) * nx + xx]);
    };

    Tensor<T> out(s);
    const T* u0 = vu.channel(0);
    const T* u1 = vu.channel(1);
    const T* u2 = vu.channel(2);
    std::size_t i = 0;
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x, ++i) {
                const double sx = x + double(u0[i]);
                const double sy = y + double(u1[i]);
                const double sz = z + double(u2[i]);
                const double fx = std::floor(sx), fy = std::floor(sy), fz = std::floor(sz);
                const int x0 = int(fx), y0 = int(fy), z0 = int(fz);
                const double tx = sx - fx, ty = sy - fy, tz = sz - fz;
                for (int c = 0; c < s.c; ++c) {
                    const T* src = vm.channel(c);
                    double acc = 0;
                    for (int dz = 0; dz <= 1; ++dz)
                        for (int dy = 0; dy <= 1; ++dy)
                            for (int dx = 0; dx <= 1; ++dx)
                                acc += (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz) *
                                       corner(src, x0 + dx, y0 + dy, z0 + dz);
                    out.channel(c)[i] = T(acc);
                }
            }

    const int im = m.id, iu = u.id;
    return t.emit_var(std::move(out), {im, iu}, [im, iu, mode](Tape<T>& tp, int self) {
        const Tensor<T>& g = tp.gbuf(self);
        const Tensor<T>& vm = tp.val(im);
        const Tensor<T>& vu = tp.val(iu);
        const TensorShape s = vm.shape;
        const int nx = s.x, ny = s.y, nz = s.z;
        const bool want_m = tp.needs(im), want_u = tp.needs(iu);

        auto corner = [&](const T* src, int xx, int yy, int zz) -> double {
            if (mode == WarpBoundary::clamp) {
                xx = std::clamp(xx, 0, nx - 1);
                yy = std::clamp(yy, 0, ny - 1);
                zz = std::clamp(zz, 0, nz - 1);
            } else if (xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny || zz >= nz) {
                return 0.0;
            }
            return double(src[(std::size_t(zz) * ny + yy) * nx + xx]);
        };
        auto scatter = [&](T* dst, int xx, int yy, int zz, double v) {
            if (mode == WarpBoundary::clamp) {
                xx = std::clamp(xx, 0, nx - 1);
                yy = std::clamp(yy, 0, ny - 1);
                zz = std::clamp(zz, 0, nz - 1);
            } else if (xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny || zz >= nz) {
                return;
            }
            dst[(std::size_t(zz) * ny + yy) * nx + xx] += T(v);
        };

        const T* u0 = vu.channel(0);
        const T* u1 = vu.channel(1);
        const T* u2 = vu.channel(2);
        Tensor<T>* gm = want_m ? &tp.gbuf(im) : nullptr;
        Tensor<T>* gu = want_u ? &tp.gbuf(iu) : nullptr;

        std::size_t i = 0;
        for (int z = 0; z < nz; ++z)
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x, ++i) {
                    const double sx = x + double(u0[i]);
                    const double sy = y + double(u1[i]);
                    const double sz = z + double(u2[i]);
                    const double fx = std::floor(sx), fy = std::floor(sy), fz = std::floor(sz);
                    const int x0 = int(fx), y0 = int(fy), z0 = int(fz);
                    const double tx = sx - fx, ty = sy - fy, tz = sz - fz;
                    double dx_acc = 0, dy_acc = 0, dz_acc = 0;
                    for (int c = 0; c < s.c; ++c) {
                        const double gv = double(g.channel(c)[i]);
                        if (gv == 0.0) continue;
                        const T* src = vm.channel(c);
                        for (int dz = 0; dz <= 1; ++dz) {
                            const double wz = dz ? tz : 1 - tz;
                            const double swz = dz ? 1.0 : -1.0;
                            for (int dy = 0; dy <= 1; ++dy) {
                                const double wy = dy ? ty : 1 - ty;
                                const double swy = dy ? 1.0 : -1.0;
                                for (int dx = 0; dx <= 1; ++dx) {
                                    const double wx = dx ? tx : 1 - tx;
                                    const double swx = dx ? 1.0 : -1.0;
                                    if (want_m)
                                        scatter(gm->channel(c), x0 + dx, y0 + dy, z0 + dz,
                                                gv * wx * wy * wz);
                                    if (want_u) {
                                        const double cv =
                                            corner(src, x0 + dx, y0 + dy, z0 + dz);
                                        dx_acc += gv * swx * wy * wz * cv;
                                        dy_acc += gv * wx * swy * wz * cv;
                                        dz_acc += gv * wx * wy * swz * cv;
                                    }
                                }
                            }
                        }
                    }
                    if (want_u) {
                        gu->channel(0)[i] += T(dx_acc);
                        gu->channel(1)[i] += T(dy_acc);
                        gu->channel(2)[i] += T(dz_acc);
                    }
                }
    });
}

namespace detail {

// Zero-padded window sum of size 2r+1, applied separably along x, y, z.
template <typename T>
Tensor<T> boxsum_raw(const Tensor<T>& in, int r) {
    const TensorShape s = in.shape;
    Tensor<T> a = in, b(s);
    const int nx = s.x, ny = s.y, nz = s.z;

    // x pass
    for (int c = 0; c < s.c; ++c) {
        const T* src = a.channel(c);
        T* dst = b.channel(c);
        for (int z = 0; z < nz; ++z)
            for (int y = 0; y < ny; ++y) {
                const T* row = src + (std::size_t(z) * ny + y) * nx;
                T* out = dst + (std::size_t(z) * ny + y) * nx;
                for (int x = 0; x < nx; ++x) {
                    double acc = 0;
                    const int lo = std::max(0, x - r), hi = std::min(nx - 1, x + r);
                    for (int i = lo; i <= hi; ++i) acc += double(row[i]);
                    out[x] = T(acc);
                }
            }
    }
    // y pass
    for (int c = 0; c < s.c; ++c) {
        const T* src = b.channel(c);
        T* dst = a.channel(c);
        for (int z = 0; z < nz; ++z)
            for (int x = 0; x < nx; ++x) {
                const T* col = src + std::size_t(z) * ny * nx + x;
                T* out = dst + std::size_t(z) * ny * nx + x;
                for (int y = 0; y < ny; ++y) {
                    double acc = 0;
                    const int lo = std::max(0, y - r), hi = std::min(ny - 1, y + r);
                    for (int i = lo; i <= hi; ++i) acc += double(col[std::size_t(i) * nx]);
                    out[std::size_t(y) * nx] = T(acc);
                }
            }
    }
    // z pass
    for (int c = 0; c < s.c; ++c) {
        const T* src = a.channel(c);
        T* dst = b.channel(c);
        const std::size_t plane = std::size_t(ny) * nx;
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                const T* col = src + std::size_t(y) * nx + x;
                T* out = dst + std::size_t(y) * nx + x;
                for (int z = 0; z < nz; ++z) {
                    double acc = 0;
                    const int lo = std::max(0, z - r), hi = std::min(nz - 1, z + r);
                    for (int i = lo; i <= hi; ++i) acc += double(col[std::size_t(i) * plane]);
                    out[std::size_t(z) * plane] = T(acc);
                }
            }
    }
    return b;
}

}  // namespace detail

/// Sliding-window sum over the (2r+1)^3 neighborhood, zero padded. The window
/// is symmetric, so the op is self-adjoint.
template <typename T>
Var<T> boxsum(Var<T> x, int r) {
    Tape<T>& t = *x.tape;
    Tensor<T> out = detail::boxsum_raw(t.val(x.id), r);
    const int ix = x.id;
    return t.emit_var(std::move(out), {ix}, [ix, r](Tape<T>& tp, int self) {
        if (!tp.needs(ix)) return;
        Tensor<T> gsum = detail::boxsum_raw(tp.gbuf(self), r);
        Tensor<T>& gx = tp.gbuf(ix);
        for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += gsum.data[i];
    });
}

/// Dense convolution with a fixed (non-learned) cubic kernel, reflect padding.
/// Used for the LoG filter inside the loss graph.
template <typename T>
Var<T> fixed_conv_reflect(Var<T> x, std::shared_ptr<const std::vector<double>> kernel, int r) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& vx = t.val(x.id);
    const TensorShape s = vx.shape;
    const int side = 2 * r + 1;
    if (std::int64_t(kernel->size()) != std::int64_t(side) * side * side)
        throw invalid_input_error("fixed_conv_reflect: kernel size mismatch");
    if (s.x < side || s.y < side || s.z < side)
        throw invalid_input_error("fixed_conv_reflect: input smaller than kernel");

    auto reflect = [](int i, int n) { return i < 0 ? -i - 1 : (i >= n ? 2 * n - 1 - i : i); };

    Tensor<T> out(s);
    for (int c = 0; c < s.c; ++c) {
        const T* src = vx.channel(c);
        T* dst = out.channel(c);
        std::size_t oi = 0;
        for (int z = 0; z < s.z; ++z)
            for (int y = 0; y < s.y; ++y)
                for (int x = 0; x < s.x; ++x, ++oi) {
                    double acc = 0;
                    std::size_t ki = 0;
                    for (int dz = -r; dz <= r; ++dz) {
                        const int zz = reflect(z + dz, s.z);
                        for (int dy = -r; dy <= r; ++dy) {
                            const int yy = reflect(y + dy, s.y);
                            const T* plane = src + (std::size_t(zz) * s.y + yy) * s.x;
                            for (int dx = -r; dx <= r; ++dx, ++ki)
                                acc += (*kernel)[ki] * double(plane[reflect(x + dx, s.x)]);
                        }
                    }
                    dst[oi] = T(acc);
                }
    }

    const int ix = x.id;
    return t.emit_var(std::move(out), {ix}, [ix, kernel, r](Tape<T>& tp, int self) {
        if (!tp.needs(ix)) return;
        const Tensor<T>& g = tp.gbuf(self);
        Tensor<T>& gx = tp.gbuf(ix);
        const TensorShape s = gx.shape;
        auto reflect = [](int i, int n) { return i < 0 ? -i - 1 : (i >= n ? 2 * n - 1 - i : i); };
        for (int c = 0; c < s.c; ++c) {
            const T* gs = g.channel(c);
            T* gd = gx.channel(c);
            std::size_t oi = 0;
            for (int z = 0; z < s.z; ++z)
                for (int y = 0; y < s.y; ++y)
                    for (int x = 0; x < s.x; ++x, ++oi) {
                        const double gv = double(gs[oi]);
                        if (gv == 0.0) continue;
                        std::size_t ki = 0;
                        for (int dz = -r; dz <= r; ++dz) {
                            const int zz = reflect(z + dz, s.z);
                            for (int dy = -r; dy <= r; ++dy) {
                                const int yy = reflect(y + dy, s.y);
                                T* plane = gd + (std::size_t(zz) * s.y + yy) * s.x;
                                for (int dx = -r; dx <= r; ++dx, ++ki)
                                    plane[reflect(x + dx, s.x)] += T((*kernel)[ki] * gv);
                            }
                        }
                    }
        }
    });
}

}  // namespace wssam::ad
