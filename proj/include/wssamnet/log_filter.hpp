#pragma once

#include <cmath>
#include <vector>

#include "wssamnet/volume.hpp"

namespace wssam {

/// Laplacian-of-Gaussian kernel parameters (voxel units). Kernel extent per
/// side is 2*radius+1.
struct LoGParams {
    double sigma = 1.0;
    int radius = 2;

    void validate() const {
        if (!(sigma > 0)) throw invalid_input_error("LoG sigma must be > 0");
        if (radius < 1) throw invalid_input_error("LoG radius must be >= 1");
    }

    int side() const { return 2 * radius + 1; }
};

/// Dense LoG kernel over [-radius, radius]^3, shifted by a constant so the
/// entries sum to exactly zero (a constant input then maps to zero output).
/// Always computed in double.
inline std::vector<double> log_kernel(const LoGParams& params) {
    params.validate();
    const int r = params.radius, side = params.side();
    const double s2 = params.sigma * params.sigma;
    const double norm = 1.0 / (std::pow(2.0 * 3.14159265358979323846, 1.5) * s2 * params.sigma);

    std::vector<double> k(std::size_t(side) * side * side);
    std::size_t i = 0;
    double sum = 0.0;
    for (int z = -r; z <= r; ++z)
        for (int y = -r; y <= r; ++y)
            for (int x = -r; x <= r; ++x, ++i) {
                const double q = double(x) * x + double(y) * y + double(z) * z;
                const double g = norm * std::exp(-q / (2.0 * s2));
                k[i] = (q - 3.0 * s2) / (s2 * s2) * g;
                sum += k[i];
            }
    const double mean = sum / double(k.size());
    for (double& v : k) v -= mean;
    return k;
}

namespace detail {

// Mirror indexing with edge repeat: -1 -> 0, n -> n-1. Valid for offsets up
// to n (the kernel preconditions guarantee this).
inline int reflect_index(int i, int n) {
    if (i < 0) return -i - 1;
    if (i >= n) return 2 * n - 1 - i;
    return i;
}

}  // namespace detail

/// Full 3D convolution with the LoG kernel, reflect boundary padding,
/// same-shape output. Interior math in double, stored back as T.
template <typename T>
Volume<T> apply_log(const Volume<T>& vol, const LoGParams& params) {
    params.validate();
    const Vec3i n = vol.size();
    if (n.x < params.side() || n.y < params.side() || n.z < params.side())
        throw invalid_input_error("apply_log: volume smaller than kernel");

    const std::vector<double> k = log_kernel(params);
    const int r = params.radius, side = params.side();

    Volume<T> out(n, T(0), vol.spacing(), vol.origin());
    for (int z = 0; z < n.z; ++z)
        for (int y = 0; y < n.y; ++y)
            for (int x = 0; x < n.x; ++x) {
                double acc = 0.0;
                std::size_t ki = 0;
                for (int dz = -r; dz <= r; ++dz) {
                    const int zz = detail::reflect_index(z + dz, n.z);
                    for (int dy = -r; dy <= r; ++dy) {
                        const int yy = detail::reflect_index(y + dy, n.y);
                        for (int dx = -r; dx <= r; ++dx, ++ki) {
                            const int xx = detail::reflect_index(x + dx, n.x);
                            acc += k[ki] * double(vol.at(xx, yy, zz));
                        }
                    }
                }
                (void)side;
                out.at(x, y, z) = T(acc);
            }
    return out;
}

}  // namespace wssam
