#pragma once

// Independent brute-force references for every loss. These deliberately avoid
// the library's op implementations: explicit per-window loops, explicit
// soft-histogram accumulation, explicit forward differences, per-voxel focal
// evaluation. Everything in double.

#include <cmath>
#include <vector>

#include "wssamnet/losses.hpp"
#include "wssamnet/volume.hpp"

namespace wssam::testing {

template <typename T>
double focal_oracle(const Volume<T>& pred, const Volume<T>& target, const FocalParams& p) {
    double acc = 0;
    for (std::size_t i = 0; i < pred.voxel_count(); ++i) {
        const double pr = double(pred[i]), tv = double(target[i]);
        const double pt = tv * pr + (1.0 - tv) * (1.0 - pr);
        acc += -std::pow(1.0 - pt, p.gamma) * std::log(pt + p.epsilon);
    }
    return p.reduction == Reduction::mean ? acc / double(pred.voxel_count()) : acc;
}

template <typename T>
double cc_oracle(const Volume<T>& f, const Volume<T>& m, const CCParams& p) {
    const Vec3i n = f.size();
    const int r = p.window_radius;
    double total = 0;
    for (int z = 0; z < n.z; ++z)
        for (int y = 0; y < n.y; ++y)
            for (int x = 0; x < n.x; ++x) {
                // zero padding: out-of-range taps contribute nothing; window
                // statistics use the in-range tap count
                double sf = 0, sm = 0, cnt = 0;
                for (int dz = -r; dz <= r; ++dz)
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx) {
                            const int a = x + dx, b = y + dy, c = z + dz;
                            if (!f.in_bounds(a, b, c)) continue;
                            sf += double(f.at(a, b, c));
                            sm += double(m.at(a, b, c));
                            cnt += 1.0;
                        }
                const double fbar = sf / cnt, mbar = sm / cnt;
                double cross = 0, vf = 0, vm = 0;
                for (int dz = -r; dz <= r; ++dz)
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx) {
                            const int a = x + dx, b = y + dy, c = z + dz;
                            if (!f.in_bounds(a, b, c)) continue;
                            const double fv = double(f.at(a, b, c));
                            const double mv = double(m.at(a, b, c));
                            cross += (fv - fbar) * (mv - mbar);
                            vf += (fv - fbar) * (fv - fbar);
                            vm += (mv - mbar) * (mv - mbar);
                        }
                total += cross * cross / (vf * vm + p.epsilon);
            }
    return total;
}

// Soft-histogram machinery shared by the MI and entropy oracles.
template <typename T>
std::vector<double> parzen_joint_oracle(const Volume<T>& a, const Volume<T>& b,
                                        const MIParams& p) {
    const int K = p.bins;
    double lo = p.range_lo, hi = p.range_hi;
    if (p.auto_range) {
        lo = 1e300;
        hi = -1e300;
        for (std::size_t i = 0; i < a.voxel_count(); ++i) {
            lo = std::min({lo, double(a[i]), double(b[i])});
            hi = std::max({hi, double(a[i]), double(b[i])});
        }
    }
    const double range = hi - lo;
    std::vector<double> P(std::size_t(K) * K, 0.0);
    std::vector<double> wa(static_cast<std::size_t>(K)), wb(static_cast<std::size_t>(K));
    for (std::size_t i = 0; i < a.voxel_count(); ++i) {
        for (int side = 0; side < 2; ++side) {
            const double x = double(side == 0 ? a[i] : b[i]);
            double t = range > 1e-300 ? (x - lo) / range : 0.5;
            t = std::min(std::max(t, 0.0), 1.0);
            std::vector<double>& w = side == 0 ? wa : wb;
            double sum = 0;
            for (int k = 0; k < K; ++k) {
                const double c = (k + 0.5) / double(K);
                w[std::size_t(k)] =
                    std::exp(-(t - c) * (t - c) / (2.0 * p.kernel_bandwidth * p.kernel_bandwidth));
                sum += w[std::size_t(k)];
            }
            for (int k = 0; k < K; ++k) w[std::size_t(k)] /= sum;
        }
        for (int ka = 0; ka < K; ++ka)
            for (int kb = 0; kb < K; ++kb)
                P[std::size_t(ka) * K + kb] += wa[std::size_t(ka)] * wb[std::size_t(kb)];
    }
    for (double& v : P) v /= double(a.voxel_count());
    return P;
}

template <typename T>
double mi_oracle(const Volume<T>& a, const Volume<T>& b, const MIParams& p) {
    const int K = p.bins;
    std::vector<double> P = parzen_joint_oracle(a, b, p);
    std::vector<double> Pa(std::size_t(K), 0.0), Pb(std::size_t(K), 0.0);
    for (int ka = 0; ka < K; ++ka)
        for (int kb = 0; kb < K; ++kb) {
            Pa[std::size_t(ka)] += P[std::size_t(ka) * K + kb];
            Pb[std::size_t(kb)] += P[std::size_t(ka) * K + kb];
        }
    double mi = 0;
    for (int ka = 0; ka < K; ++ka)
        for (int kb = 0; kb < K; ++kb) {
            const double v = P[std::size_t(ka) * K + kb];
            if (v > 1e-12) mi += v * std::log(v / (Pa[std::size_t(ka)] * Pb[std::size_t(kb)]));
        }
    return mi;
}

/// Marginal entropy from the same soft-histogram model.
template <typename T>
double entropy_oracle(const Volume<T>& a, const MIParams& p) {
    const int K = p.bins;
    std::vector<double> P = parzen_joint_oracle(a, a, p);
    std::vector<double> Pa(std::size_t(K), 0.0);
    for (int ka = 0; ka < K; ++ka)
        for (int kb = 0; kb < K; ++kb) Pa[std::size_t(ka)] += P[std::size_t(ka) * K + kb];
    double h = 0;
    for (int k = 0; k < K; ++k)
        if (Pa[std::size_t(k)] > 1e-12) h -= Pa[std::size_t(k)] * std::log(Pa[std::size_t(k)]);
    return h;
}

template <typename T>
double smoothness_oracle(const DisplacementField<T>& u, int order = 1) {
    const Vec3i n = u.size();
    double acc = 0;
    std::int64_t count = 0;
    if (order == 1) {
        for (int z = 0; z + 1 < n.z; ++z)
            for (int y = 0; y + 1 < n.y; ++y)
                for (int x = 0; x + 1 < n.x; ++x) {
                    ++count;
                    for (int c = 0; c < 3; ++c) {
                        const double v = double(u.comp(c, x, y, z));
                        const double dx = double(u.comp(c, x + 1, y, z)) - v;
                        const double dy = double(u.comp(c, x, y + 1, z)) - v;
                        const double dz = double(u.comp(c, x, y, z + 1)) - v;
                        acc += dx * dx + dy * dy + dz * dz;
                    }
                }
    } else {
        for (int z = 1; z + 1 < n.z; ++z)
            for (int y = 1; y + 1 < n.y; ++y)
                for (int x = 1; x + 1 < n.x; ++x) {
                    ++count;
                    for (int c = 0; c < 3; ++c) {
                        const double lap =
                            double(u.comp(c, x + 1, y, z)) + double(u.comp(c, x - 1, y, z)) +
                            double(u.comp(c, x, y + 1, z)) + double(u.comp(c, x, y - 1, z)) +
                            double(u.comp(c, x, y, z + 1)) + double(u.comp(c, x, y, z - 1)) -
                            6.0 * double(u.comp(c, x, y, z));
                        acc += lap * lap;
                    }
                }
    }
    return acc / double(count);
}

}  // namespace wssam::testing
