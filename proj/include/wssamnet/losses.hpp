#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "wssamnet/log_filter.hpp"
#include "wssamnet/nn_ops.hpp"
#include "wssamnet/tensor_bridge.hpp"

namespace wssam {

enum class Reduction { mean, sum };

struct FocalParams {
    double gamma = 2.0;
    double epsilon = 1e-8;
    Reduction reduction = Reduction::mean;

    void validate() const {
        if (gamma < 0) throw invalid_input_error("focal gamma must be >= 0");
        if (!(epsilon > 0 && epsilon < 1e-3))
            throw invalid_input_error("focal epsilon must lie in (0, 1e-3)");
    }
};

struct CCParams {
    int window_radius = 4;  // 9^3 window
    double epsilon = 1e-5;

    void validate() const {
        if (window_radius < 1) throw invalid_input_error("cc window_radius must be >= 1");
        if (!(epsilon > 0)) throw invalid_input_error("cc epsilon must be > 0");
    }
    int window_side() const { return 2 * window_radius + 1; }
};

struct MIParams {
    int bins = 32;
    double kernel_bandwidth = 1.0 / 32.0;  // in normalized-intensity units
    double range_lo = 0.0;
    double range_hi = 1.0;
    // When set, the normalization range is taken from the actual inputs
    // (treated as constants). Needed when MI runs on filtered volumes whose
    // value range is data dependent.
    bool auto_range = false;

    void validate() const {
        if (bins < 2) throw invalid_input_error("mi bins must be >= 2");
        if (!(kernel_bandwidth > 0)) throw invalid_input_error("mi bandwidth must be > 0");
        if (!auto_range && !(range_hi > range_lo))
            throw invalid_input_error("mi intensity_range is degenerate");
    }
};

struct LossWeights {
    double cc = 1.0;
    double mi = 1.0;
    double smooth = 1.0;

    void validate() const {
        if (cc < 0 || mi < 0 || smooth < 0) throw invalid_input_error("loss weights must be >= 0");
    }
};

struct SmoothnessParams {
    int order = 1;  // 1 = forward-difference gradient penalty, 2 = discrete Laplacian

    void validate() const {
        if (order != 1 && order != 2) throw invalid_input_error("smoothness order must be 1 or 2");
    }
};

// ---- tape subgraphs ----

/// Focal loss. pred in [0,1], target binary, same shape; the target is a
/// constant (no gradient). Per voxel: p_t = t*p + (1-t)*(1-p),
/// loss = -(1-p_t)^gamma * ln(p_t + eps).
template <typename T>
ad::Var<T> focal_loss_op(ad::Var<T> pred, ad::Var<T> target, const FocalParams& params) {
    params.validate();
    ad::Tape<T>& t = *pred.tape;
    const ad::Tensor<T>& vp = t.val(pred.id);
    const ad::Tensor<T>& vt = t.val(target.id);
    if (!(vp.shape == vt.shape)) throw invalid_input_error("focal_loss: shape mismatch");

    const double gamma = params.gamma, eps = params.epsilon;
    const std::size_t n = vp.data.size();
    const double red = params.reduction == Reduction::mean ? 1.0 / double(n) : 1.0;

    double acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = double(vp.data[i]), tv = double(vt.data[i]);
        const double pt = tv * p + (1.0 - tv) * (1.0 - p);
        acc += -std::pow(1.0 - pt, gamma) * std::log(pt + eps);
    }

    const int ip = pred.id, it = target.id;
    return t.emit_var(ad::Tensor<T>::scalar(T(acc * red)), {ip, it},
                      [ip, it, gamma, eps, red](ad::Tape<T>& tp, int self) {
                          if (!tp.needs(ip)) return;
                          const double go = double(tp.gbuf(self).data[0]) * red;
                          const ad::Tensor<T>& vp = tp.val(ip);
                          const ad::Tensor<T>& vt = tp.val(it);
                          ad::Tensor<T>& gp = tp.gbuf(ip);
                          for (std::size_t i = 0; i < vp.data.size(); ++i) {
                              const double p = double(vp.data[i]), tv = double(vt.data[i]);
                              const double pt = tv * p + (1.0 - tv) * (1.0 - p);
                              double dpt = -std::pow(1.0 - pt, gamma) / (pt + eps);
                              if (gamma > 0)
                                  dpt += gamma * std::pow(1.0 - pt, gamma - 1.0) *
                                         std::log(pt + eps);
                              gp.data[i] += T(go * dpt * (2.0 * tv - 1.0));
                          }
                      });
}

namespace detail {

/// Combines the five windowed sums into the per-voxel squared local
/// correlation: cc = cross^2 / (var_f * var_m + eps), variances clamped at
/// zero against float cancellation. Window statistics divide by the in-range
/// tap count of each window (zero padding contributes nothing), so constant
/// volumes have zero variance everywhere including at boundaries.
template <typename T>
ad::Var<T> cc_map(ad::Var<T> Sf, ad::Var<T> Sm, ad::Var<T> Sff, ad::Var<T> Smm, ad::Var<T> Sfm,
                  std::shared_ptr<const std::vector<double>> counts, double eps) {
    ad::Tape<T>& t = *Sf.tape;
    const ad::Tensor<T>& sf = t.val(Sf.id);
    ad::Tensor<T> out(sf.shape);
    {
        const ad::Tensor<T>&sm = t.val(Sm.id), &sff = t.val(Sff.id), &smm = t.val(Smm.id),
                           &sfm = t.val(Sfm.id);
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            const double N = (*counts)[i];
            const double a = double(sf.data[i]), b = double(sm.data[i]);
            const double cross = double(sfm.data[i]) - a * b / N;
            const double vf = std::max(double(sff.data[i]) - a * a / N, 0.0);
            const double vm = std::max(double(smm.data[i]) - b * b / N, 0.0);
            out.data[i] = T(cross * cross / (vf * vm + eps));
        }
    }
    const int i1 = Sf.id, i2 = Sm.id, i3 = Sff.id, i4 = Smm.id, i5 = Sfm.id;
    return t.emit_var(std::move(out), {i1, i2, i3, i4, i5},
                      [i1, i2, i3, i4, i5, counts, eps](ad::Tape<T>& tp, int self) {
                          const ad::Tensor<T>& g = tp.gbuf(self);
                          const ad::Tensor<T>&sf = tp.val(i1), &sm = tp.val(i2), &sff = tp.val(i3),
                                             &smm = tp.val(i4), &sfm = tp.val(i5);
                          ad::Tensor<T>&g1 = tp.gbuf(i1), &g2 = tp.gbuf(i2), &g3 = tp.gbuf(i3),
                                       &g4 = tp.gbuf(i4), &g5 = tp.gbuf(i5);
                          for (std::size_t i = 0; i < g.data.size(); ++i) {
                              const double go = double(g.data[i]);
                              if (go == 0.0) continue;
                              const double N = (*counts)[i];
                              const double a = double(sf.data[i]), b = double(sm.data[i]);
                              const double cross = double(sfm.data[i]) - a * b / N;
                              const double vf_raw = double(sff.data[i]) - a * a / N;
                              const double vm_raw = double(smm.data[i]) - b * b / N;
                              const double vf = std::max(vf_raw, 0.0), vm = std::max(vm_raw, 0.0);
                              const double denom = vf * vm + eps;
                              const double dcross = 2.0 * cross / denom;
                              const double c2 = cross * cross / (denom * denom);
                              const double dvf = vf_raw > 0.0 ? -c2 * vm : 0.0;
                              const double dvm = vm_raw > 0.0 ? -c2 * vf : 0.0;
                              g5.data[i] += T(go * dcross);
                              g1.data[i] += T(go * (dcross * (-b / N) + dvf * (-2.0 * a / N)));
                              g2.data[i] += T(go * (dcross * (-a / N) + dvm * (-2.0 * b / N)));
                              g3.data[i] += T(go * dvf);
                              g4.data[i] += T(go * dvm);
                          }
                      });
}

}  // namespace detail

/// Windowed squared local cross-correlation, summed over all voxels. Window
/// statistics use zero padding and a constant divisor (2r+1)^3.
template <typename T>
ad::Var<T> local_cc_op(ad::Var<T> f, ad::Var<T> m, const CCParams& params) {
    params.validate();
    ad::Tape<T>& t = *f.tape;
    const ad::TensorShape s = t.val(f.id).shape;
    if (!(s == t.val(m.id).shape))
        throw invalid_input_error("local_cross_correlation: shape mismatch");
    const int side = params.window_side();
    if (s.x < side || s.y < side || s.z < side)
        throw invalid_input_error("local_cross_correlation: volume smaller than window");

    const int r = params.window_radius;
    auto counts = std::make_shared<std::vector<double>>();
    {
        ad::Tensor<double> ones(ad::TensorShape{1, s.x, s.y, s.z}, 1.0);
        *counts = ad::detail::boxsum_raw(ones, r).data;
    }
    ad::Var<T> Sf = ad::boxsum(f, r);
    ad::Var<T> Sm = ad::boxsum(m, r);
    ad::Var<T> Sff = ad::boxsum(ad::mul(f, f), r);
    ad::Var<T> Smm = ad::boxsum(ad::mul(m, m), r);
    ad::Var<T> Sfm = ad::boxsum(ad::mul(m, f), r);
    return ad::reduce_sum(detail::cc_map(Sf, Sm, Sff, Smm, Sfm, counts, params.epsilon));
}

/// Soft-histogram (Parzen) mutual information in nats. Each voxel spreads unit
/// mass over the bin centers with a normalized Gaussian kernel; intensities are
/// min-max normalized by the configured (or input-derived) range and clipped
/// to [0,1]. Joint contributions below 1e-12 are excluded from the sum.
template <typename T>
ad::Var<T> mutual_information_op(ad::Var<T> a, ad::Var<T> b, const MIParams& params) {
    params.validate();
    ad::Tape<T>& t = *a.tape;
    const ad::Tensor<T>& va = t.val(a.id);
    const ad::Tensor<T>& vb = t.val(b.id);
    if (!(va.shape == vb.shape)) throw invalid_input_error("mutual_information: shape mismatch");

    const int K = params.bins;
    const double h = params.kernel_bandwidth;
    double lo = params.range_lo, hi = params.range_hi;
    if (params.auto_range) {
        lo = std::numeric_limits<double>::infinity();
        hi = -lo;
        for (T v : va.data) {
            lo = std::min(lo, double(v));
            hi = std::max(hi, double(v));
        }
        for (T v : vb.data) {
            lo = std::min(lo, double(v));
            hi = std::max(hi, double(v));
        }
    }
    const double range = hi - lo;
    const bool degenerate = !(range > 1e-300);
    const double inv_range = degenerate ? 0.0 : 1.0 / range;

    const std::size_t n = va.data.size();
    const double inv2h2 = 1.0 / (2.0 * h * h);

    // Per-voxel state kept for the backward pass: normalized weights for both
    // sides, the normalized intensity, and d(normalized)/d(input) (0 if clipped).
    auto wts = std::make_shared<std::vector<T>>(2 * n * std::size_t(K));
    auto tvals = std::make_shared<std::vector<T>>(2 * n);
    auto dfac = std::make_shared<std::vector<T>>(2 * n);

    std::vector<double> centers(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) centers[std::size_t(k)] = (k + 0.5) / double(K);

    std::vector<double> P(std::size_t(K) * K, 0.0);
    std::vector<double> wrow[2];
    wrow[0].resize(std::size_t(K));
    wrow[1].resize(std::size_t(K));
    for (std::size_t i = 0; i < n; ++i) {
        for (int side = 0; side < 2; ++side) {
            const double x = double(side == 0 ? va.data[i] : vb.data[i]);
            double tt, df;
            if (degenerate) {
                tt = 0.5;
                df = 0.0;
            } else {
                tt = (x - lo) * inv_range;
                df = inv_range;
                if (tt < 0.0) {
                    tt = 0.0;
                    df = 0.0;
                } else if (tt > 1.0) {
                    tt = 1.0;
                    df = 0.0;
                }
            }
            double* w = wrow[side].data();
            double sum = 0;
            for (int k = 0; k < K; ++k) {
                const double d = tt - centers[std::size_t(k)];
                w[k] = std::exp(-d * d * inv2h2);
                sum += w[k];
            }
            const double inv_sum = 1.0 / sum;
            T* wdst = wts->data() + (std::size_t(side) * n + i) * K;
            for (int k = 0; k < K; ++k) {
                w[k] *= inv_sum;
                wdst[k] = T(w[k]);
            }
            (*tvals)[std::size_t(side) * n + i] = T(tt);
            (*dfac)[std::size_t(side) * n + i] = T(df);
        }
        for (int ka = 0; ka < K; ++ka) {
            const double waka = wrow[0][std::size_t(ka)];
            double* prow = P.data() + std::size_t(ka) * K;
            const double* wbp = wrow[1].data();
            for (int kb = 0; kb < K; ++kb) prow[kb] += waka * wbp[kb];
        }
    }
    const double inv_n = 1.0 / double(n);
    for (double& p : P) p *= inv_n;

    std::vector<double> Pa(std::size_t(K), 0.0), Pb(std::size_t(K), 0.0);
    for (int ka = 0; ka < K; ++ka)
        for (int kb = 0; kb < K; ++kb) {
            Pa[std::size_t(ka)] += P[std::size_t(ka) * K + kb];
            Pb[std::size_t(kb)] += P[std::size_t(ka) * K + kb];
        }

    // Reduction order is transpose-invariant (diagonal, then mirrored pairs
    // added together), so MI(a,b) == MI(b,a) bitwise.
    const double tau = 1e-12;
    auto term = [&](int ka, int kb) {
        const double p = P[std::size_t(ka) * K + kb];
        return p > tau ? p * std::log(p / (Pa[std::size_t(ka)] * Pb[std::size_t(kb)])) : 0.0;
    };
    double mi = 0;
    for (int k = 0; k < K; ++k) mi += term(k, k);
    for (int ka = 0; ka < K; ++ka)
        for (int kb = ka + 1; kb < K; ++kb) mi += term(ka, kb) + term(kb, ka);

    auto Pkeep = std::make_shared<std::vector<double>>(std::move(P));
    auto Pakeep = std::make_shared<std::vector<double>>(std::move(Pa));
    auto Pbkeep = std::make_shared<std::vector<double>>(std::move(Pb));
    auto ckeep = std::make_shared<std::vector<double>>(std::move(centers));

    const int ia = a.id, ib = b.id;
    return t.emit_var(
        ad::Tensor<T>::scalar(T(mi)), {ia, ib},
        [ia, ib, K, n, inv2h2, wts, tvals, dfac, Pkeep, Pakeep, Pbkeep, ckeep](ad::Tape<T>& tp,
                                                                               int self) {
            const double go = double(tp.gbuf(self).data[0]);
            const bool want_a = tp.needs(ia), want_b = tp.needs(ib);
            if ((!want_a && !want_b) || go == 0.0) return;

            const std::vector<double>& P = *Pkeep;
            const std::vector<double>& Pa = *Pakeep;
            const std::vector<double>& Pb = *Pbkeep;
            const std::vector<double>& centers = *ckeep;
            const double tau = 1e-12;

            // dMI/dP with the tau mask folded in: thresholded entries still see
            // marginal terms from the rest of their row/column.
            std::vector<double> G(std::size_t(K) * K, 0.0);
            std::vector<double> rowS(std::size_t(K), 0.0), colS(std::size_t(K), 0.0);
            for (int ka = 0; ka < K; ++ka)
                for (int kb = 0; kb < K; ++kb) {
                    const double p = P[std::size_t(ka) * K + kb];
                    if (p > tau) {
                        rowS[std::size_t(ka)] += p;
                        colS[std::size_t(kb)] += p;
                    }
                }
            for (int ka = 0; ka < K; ++ka)
                for (int kb = 0; kb < K; ++kb) {
                    const double p = P[std::size_t(ka) * K + kb];
                    double v = 0;
                    if (p > tau)
                        v = std::log(p / (Pa[std::size_t(ka)] * Pb[std::size_t(kb)])) + 1.0;
                    if (rowS[std::size_t(ka)] > 0) v -= rowS[std::size_t(ka)] / Pa[std::size_t(ka)];
                    if (colS[std::size_t(kb)] > 0) v -= colS[std::size_t(kb)] / Pb[std::size_t(kb)];
                    G[std::size_t(ka) * K + kb] = v;
                }

            const double inv_n = 1.0 / double(n);
            ad::Tensor<T>* ga = want_a ? &tp.gbuf(ia) : nullptr;
            ad::Tensor<T>* gb = want_b ? &tp.gbuf(ib) : nullptr;
            std::vector<double> dLdw(static_cast<std::size_t>(K));
            for (std::size_t i = 0; i < n; ++i) {
                const T* wa = wts->data() + i * std::size_t(K);
                const T* wb = wts->data() + (n + i) * std::size_t(K);
                for (int side = 0; side < 2; ++side) {
                    ad::Tensor<T>* gt = side == 0 ? ga : gb;
                    if (!gt) continue;
                    const double df = double((*dfac)[std::size_t(side) * n + i]);
                    if (df == 0.0) continue;
                    const T* wself = side == 0 ? wa : wb;
                    const T* wother = side == 0 ? wb : wa;
                    for (int k = 0; k < K; ++k) {
                        double acc = 0;
                        for (int l = 0; l < K; ++l) {
                            const double gkl =
                                side == 0 ? G[std::size_t(k) * K + l] : G[std::size_t(l) * K + k];
                            acc += gkl * double(wother[l]);
                        }
                        dLdw[std::size_t(k)] = acc * inv_n;
                    }
                    const double tt = double((*tvals)[std::size_t(side) * n + i]);
                    // softmax-style chain: dw_k/dt = w_k (d_k - sum_j w_j d_j),
                    // d_k = -(t - c_k) / h^2
                    double dbar = 0;
                    for (int k = 0; k < K; ++k)
                        dbar -= double(wself[k]) * (tt - centers[std::size_t(k)]) * 2.0 * inv2h2;
                    double dLdt = 0;
                    for (int k = 0; k < K; ++k) {
                        const double dk = -(tt - centers[std::size_t(k)]) * 2.0 * inv2h2;
                        dLdt += dLdw[std::size_t(k)] * double(wself[k]) * (dk - dbar);
                    }
                    gt->data[i] += T(go * dLdt * df);
                }
            }
        });
}

/// Field smoothness: mean squared forward-difference stack (order 1) or mean
/// squared discrete vector Laplacian (order 2), over the common valid region.
template <typename T>
ad::Var<T> smoothness_op(ad::Var<T> u, const SmoothnessParams& params = {}) {
    params.validate();
    ad::Tape<T>& t = *u.tape;
    const ad::Tensor<T>& vu = t.val(u.id);
    const ad::TensorShape s = vu.shape;
    if (s.c != 3) throw invalid_input_error("smoothness_loss: field must have 3 components");
    const int need = params.order == 1 ? 2 : 3;
    if (s.x < need || s.y < need || s.z < need)
        throw invalid_input_error("smoothness_loss: field dims too small");

    const int nx = s.x, ny = s.y, nz = s.z;
    const int order = params.order;

    double acc = 0;
    std::int64_t count = 0;
    if (order == 1) {
        count = std::int64_t(nx - 1) * (ny - 1) * (nz - 1);
        for (int c = 0; c < 3; ++c) {
            const T* uc = vu.channel(c);
            for (int z = 0; z + 1 < nz; ++z)
                for (int y = 0; y + 1 < ny; ++y)
                    for (int x = 0; x + 1 < nx; ++x) {
                        const std::size_t i = (std::size_t(z) * ny + y) * nx + x;
                        const double v = double(uc[i]);
                        const double dx = double(uc[i + 1]) - v;
                        const double dy = double(uc[i + nx]) - v;
                        const double dz = double(uc[i + std::size_t(ny) * nx]) - v;
                        acc += dx * dx + dy * dy + dz * dz;
                    }
        }
    } else {
        count = std::int64_t(nx - 2) * (ny - 2) * (nz - 2);
        for (int c = 0; c < 3; ++c) {
            const T* uc = vu.channel(c);
            for (int z = 1; z + 1 < nz; ++z)
                for (int y = 1; y + 1 < ny; ++y)
                    for (int x = 1; x + 1 < nx; ++x) {
                        const std::size_t i = (std::size_t(z) * ny + y) * nx + x;
                        const std::size_t px = 1, py = nx, pz = std::size_t(ny) * nx;
                        const double lap = double(uc[i + px]) + double(uc[i - px]) +
                                           double(uc[i + py]) + double(uc[i - py]) +
                                           double(uc[i + pz]) + double(uc[i - pz]) -
                                           6.0 * double(uc[i]);
                        acc += lap * lap;
                    }
        }
    }
    const double value = acc / double(count);

    const int iu = u.id;
    return t.emit_var(
        ad::Tensor<T>::scalar(T(value)), {iu}, [iu, order, count](ad::Tape<T>& tp, int self) {
            if (!tp.needs(iu)) return;
            const double go = double(tp.gbuf(self).data[0]);
            const ad::Tensor<T>& vu = tp.val(iu);
            ad::Tensor<T>& gu = tp.gbuf(iu);
            const ad::TensorShape s = vu.shape;
            const int nx = s.x, ny = s.y, nz = s.z;
            const double coeff = 2.0 * go / double(count);
            if (order == 1) {
                for (int c = 0; c < 3; ++c) {
                    const T* uc = vu.channel(c);
                    T* gc = gu.channel(c);
                    for (int z = 0; z + 1 < nz; ++z)
                        for (int y = 0; y + 1 < ny; ++y)
                            for (int x = 0; x + 1 < nx; ++x) {
                                const std::size_t i = (std::size_t(z) * ny + y) * nx + x;
                                const double v = double(uc[i]);
                                const std::size_t off[3] = {1, std::size_t(nx),
                                                            std::size_t(ny) * nx};
                                for (std::size_t a = 0; a < 3; ++a) {
                                    const double d = double(uc[i + off[a]]) - v;
                                    gc[i + off[a]] += T(coeff * d);
                                    gc[i] -= T(coeff * d);
                                }
                            }
                }
            } else {
                for (int c = 0; c < 3; ++c) {
                    const T* uc = vu.channel(c);
                    T* gc = gu.channel(c);
                    for (int z = 1; z + 1 < nz; ++z)
                        for (int y = 1; y + 1 < ny; ++y)
                            for (int x = 1; x + 1 < nx; ++x) {
                                const std::size_t i = (std::size_t(z) * ny + y) * nx + x;
                                const std::size_t px = 1, py = std::size_t(nx),
                                                  pz = std::size_t(ny) * nx;
                                const double lap = double(uc[i + px]) + double(uc[i - px]) +
                                                   double(uc[i + py]) + double(uc[i - py]) +
                                                   double(uc[i + pz]) + double(uc[i - pz]) -
                                                   6.0 * double(uc[i]);
                                const double gl = coeff * lap;
                                gc[i + px] += T(gl);
                                gc[i - px] += T(gl);
                                gc[i + py] += T(gl);
                                gc[i - py] += T(gl);
                                gc[i + pz] += T(gl);
                                gc[i - pz] += T(gl);
                                gc[i] -= T(6.0 * gl);
                            }
                }
            }
        });
}

/// Parameters steering how the combined registration loss is assembled.
struct RegLossOptions {
    LossWeights weights;
    LoGParams log_params;
    CCParams cc_params;
    MIParams mi_params;
    SmoothnessParams smooth_params;
    bool normalize_cc = true;  // divide cc by the voxel count so terms share scale
};

template <typename T>
struct RegLossVars {
    ad::Var<T> total, cc, mi, smooth;
    ad::Var<T> warped_moving;  // intermediate, useful to callers
};

/// total = -w_cc * cc(LoG f, LoG (m o Phi)) - w_mi * MI(LoG f, LoG (m o Phi))
///         + w_smooth * smoothness(u); cc optionally divided by |Omega|.
template <typename T>
RegLossVars<T> registration_loss_op(ad::Var<T> f, ad::Var<T> m, ad::Var<T> field,
                                    const RegLossOptions& opt) {
    opt.weights.validate();
    ad::Var<T> mw = ad::warp(m, field);
    auto kernel = std::make_shared<const std::vector<double>>(log_kernel(opt.log_params));
    ad::Var<T> F = ad::fixed_conv_reflect(f, kernel, opt.log_params.radius);
    ad::Var<T> M = ad::fixed_conv_reflect(mw, kernel, opt.log_params.radius);

    ad::Var<T> cc_raw = local_cc_op(F, M, opt.cc_params);
    ad::Var<T> cc_used =
        opt.normalize_cc ? ad::scale(cc_raw, 1.0 / double(f.shape().spatial())) : cc_raw;
    ad::Var<T> mi = mutual_information_op(F, M, opt.mi_params);
    ad::Var<T> sm = smoothness_op(field, opt.smooth_params);

    ad::Var<T> total = ad::linear_combine<T>(
        {{cc_used, -opt.weights.cc}, {mi, -opt.weights.mi}, {sm, opt.weights.smooth}});
    return RegLossVars<T>{total, cc_used, mi, sm, mw};
}

// ---- plain evaluators over domain types (64-bit interior math) ----

namespace detail {

template <typename T>
void require_same_shape(const Volume<T>& a, const Volume<T>& b, const char* what) {
    if (!a.same_grid(b)) throw invalid_input_error(std::string(what) + ": shape mismatch");
}

}  // namespace detail

template <typename T>
double focal_loss(const Volume<T>& pred, const Volume<T>& target, const FocalParams& params = {}) {
    params.validate();
    detail::require_same_shape(pred, target, "focal_loss");
    pred.require_finite("pred");
    target.require_finite("target");
    for (std::size_t i = 0; i < pred.voxel_count(); ++i) {
        if (pred[i] < T(0) || pred[i] > T(1))
            throw invalid_input_error("focal_loss: pred outside [0,1]");
        if (target[i] != T(0) && target[i] != T(1))
            throw invalid_input_error("focal_loss: target is not binary");
    }
    ad::Tape<double> tape;
    auto p = tape.constant(to_tensor<double>(pred));
    auto t = tape.constant(to_tensor<double>(target));
    return focal_loss_op(p, t, params).value().scalar_value();
}

template <typename T>
double local_cross_correlation(const Volume<T>& f, const Volume<T>& mw,
                               const CCParams& params = {}) {
    params.validate();
    detail::require_same_shape(f, mw, "local_cross_correlation");
    f.require_finite("f");
    mw.require_finite("mw");
    ad::Tape<double> tape;
    auto a = tape.constant(to_tensor<double>(f));
    auto b = tape.constant(to_tensor<double>(mw));
    return local_cc_op(a, b, params).value().scalar_value();
}

template <typename T>
double mutual_information(const Volume<T>& f, const Volume<T>& mw, const MIParams& params = {}) {
    params.validate();
    detail::require_same_shape(f, mw, "mutual_information");
    f.require_finite("f");
    mw.require_finite("mw");
    ad::Tape<double> tape;
    auto a = tape.constant(to_tensor<double>(f));
    auto b = tape.constant(to_tensor<double>(mw));
    return mutual_information_op(a, b, params).value().scalar_value();
}

template <typename T>
double smoothness_loss(const DisplacementField<T>& field, const SmoothnessParams& params = {}) {
    params.validate();
    ad::Tape<double> tape;
    auto u = tape.constant(to_tensor<double>(field));
    return smoothness_op(u, params).value().scalar_value();
}

struct RegistrationLossResult {
    double total = 0;
    double cc = 0;
    double mi = 0;
    double smooth = 0;
};

template <typename T>
RegistrationLossResult registration_loss(const Volume<T>& f, const Volume<T>& m,
                                         const DisplacementField<T>& field,
                                         const RegLossOptions& opt) {
    detail::require_same_shape(f, m, "registration_loss");
    if (!(field.size() == f.size()))
        throw invalid_input_error("registration_loss: field shape mismatch");
    f.require_finite("f");
    m.require_finite("m");
    ad::Tape<double> tape;
    auto fv = tape.constant(to_tensor<double>(f));
    auto mv = tape.constant(to_tensor<double>(m));
    auto uv = tape.constant(to_tensor<double>(field));
    RegLossVars<double> vars = registration_loss_op(fv, mv, uv, opt);
    return RegistrationLossResult{vars.total.value().scalar_value(),
                                  vars.cc.value().scalar_value(), vars.mi.value().scalar_value(),
                                  vars.smooth.value().scalar_value()};
}

}  // namespace wssam
