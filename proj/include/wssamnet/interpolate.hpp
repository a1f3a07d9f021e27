#pragma once

#include <algorithm>
#include <cmath>

#include "wssamnet/volume.hpp"

namespace wssam {

/// Out-of-range sampling policy. zero_pad treats everything outside
/// [0, dim-1] as 0; clamp replicates the border voxel.
enum class BoundaryMode { zero_pad, clamp };

namespace detail {

// One corner lookup honoring the boundary mode.
template <typename T>
inline double corner_value(const Volume<T>& vol, int x, int y, int z, BoundaryMode mode) {
    if (mode == BoundaryMode::clamp) {
        x = std::clamp(x, 0, vol.size().x - 1);
        y = std::clamp(y, 0, vol.size().y - 1);
        z = std::clamp(z, 0, vol.size().z - 1);
        return double(vol.at(x, y, z));
    }
    if (!vol.in_bounds(x, y, z)) return 0.0;
    return double(vol.at(x, y, z));
}

}  // namespace detail

/// Trilinear interpolation at a voxel-frame coordinate. Interior arithmetic is
/// double regardless of the storage type. At exact grid coordinates the stored
/// value is reproduced bitwise (corner weights are exactly 0/1).
template <typename T>
double trilinear_sample(const Volume<T>& vol, Vec3d p, BoundaryMode mode = BoundaryMode::zero_pad) {
    if (!p.all_finite())
        throw invalid_input_error("trilinear_sample: non-finite coordinates");

    const double fx = std::floor(p.x), fy = std::floor(p.y), fz = std::floor(p.z);
    const int x0 = int(fx), y0 = int(fy), z0 = int(fz);
    const double tx = p.x - fx, ty = p.y - fy, tz = p.z - fz;

    double acc = 0.0;
    for (int dz = 0; dz <= 1; ++dz) {
        const double wz = dz ? tz : 1.0 - tz;
        for (int dy = 0; dy <= 1; ++dy) {
            const double wy = dy ? ty : 1.0 - ty;
            for (int dx = 0; dx <= 1; ++dx) {
                const double wx = dx ? tx : 1.0 - tx;
                acc += wx * wy * wz * detail::corner_value(vol, x0 + dx, y0 + dy, z0 + dz, mode);
            }
        }
    }
    return acc;
}

/// Samples one displacement component trilinearly (field treated as three
/// scalar grids on the fixed grid).
template <typename T>
Vec3d sample_field(const DisplacementField<T>& field, Vec3d p,
                   BoundaryMode mode = BoundaryMode::zero_pad) {
    if (!p.all_finite())
        throw invalid_input_error("sample_field: non-finite coordinates");

    const double fx = std::floor(p.x), fy = std::floor(p.y), fz = std::floor(p.z);
    const int x0 = int(fx), y0 = int(fy), z0 = int(fz);
    const double tx = p.x - fx, ty = p.y - fy, tz = p.z - fz;
    const Vec3i n = field.size();

    Vec3d acc{0, 0, 0};
    for (int dz = 0; dz <= 1; ++dz) {
        const double wz = dz ? tz : 1.0 - tz;
        for (int dy = 0; dy <= 1; ++dy) {
            const double wy = dy ? ty : 1.0 - ty;
            for (int dx = 0; dx <= 1; ++dx) {
                const double w = (dx ? tx : 1.0 - tx) * wy * wz;
                int x = x0 + dx, y = y0 + dy, z = z0 + dz;
                if (mode == BoundaryMode::clamp) {
                    x = std::clamp(x, 0, n.x - 1);
                    y = std::clamp(y, 0, n.y - 1);
                    z = std::clamp(z, 0, n.z - 1);
                } else if (x < 0 || y < 0 || z < 0 || x >= n.x || y >= n.y || z >= n.z) {
                    continue;
                }
                Vec3<T> u = field.u(x, y, z);
                acc.x += w * double(u.x);
                acc.y += w * double(u.y);
                acc.z += w * double(u.z);
            }
        }
    }
    return acc;
}

/// Resamples the moving volume through p -> p + u(p). The output lives on the
/// field's grid and inherits the moving volume's spacing/origin.
template <typename T>
Volume<T> warp_volume(const Volume<T>& moving, const DisplacementField<T>& field,
                      BoundaryMode mode = BoundaryMode::zero_pad) {
    if (!(field.size() == moving.size()))
        throw invalid_input_error("warp_volume: field shape does not match volume shape");

    const Vec3i n = field.size();
    Volume<T> out(n, T(0), moving.spacing(), moving.origin());
    for (int z = 0; z < n.z; ++z)
        for (int y = 0; y < n.y; ++y)
            for (int x = 0; x < n.x; ++x) {
                Vec3<T> u = field.u(x, y, z);
                Vec3d p{x + double(u.x), y + double(u.y), z + double(u.z)};
                out.at(x, y, z) = T(trilinear_sample(moving, p, mode));
            }
    return out;
}

/// Inverts p -> p + u(p) at a single point by fixed-point iteration
/// q <- p_follow - u(q), run for exactly `iters` iterations.
template <typename T>
Point map_landmark(const Point& p_follow, const DisplacementField<T>& field, int iters = 20,
                   BoundaryMode mode = BoundaryMode::zero_pad) {
    if (p_follow.frame != Frame::voxel)
        throw invalid_input_error("map_landmark expects a voxel-frame point");
    if (iters < 1) throw invalid_input_error("map_landmark: iters must be >= 1");
    if (!p_follow.coords.all_finite())
        throw invalid_input_error("map_landmark: non-finite coordinates");

    const Vec3d target = p_follow.coords;
    const double diag = to_vec3d(field.size()).norm();
    Vec3d q = target;
    for (int it = 0; it < iters; ++it) {
        Vec3d u = sample_field(field, q, mode);
        q = target - u;
        if (!q.all_finite() || q.norm() > 10.0 * diag)
            throw numeric_failure_error("map_landmark diverged at iteration " + std::to_string(it));
    }
    return Point{q, Frame::voxel};
}

/// world = origin + voxel * spacing, componentwise.
template <typename T>
Point voxel_to_world(const Point& p, const Volume<T>& vol) {
    if (p.frame != Frame::voxel)
        throw invalid_input_error("voxel_to_world: point is not in the voxel frame");
    const Vec3d s = vol.spacing(), o = vol.origin();
    return Point{{o.x + p.coords.x * s.x, o.y + p.coords.y * s.y, o.z + p.coords.z * s.z},
                 Frame::world};
}

template <typename T>
Point world_to_voxel(const Point& p, const Volume<T>& vol) {
    if (p.frame != Frame::world)
        throw invalid_input_error("world_to_voxel: point is not in the world frame");
    const Vec3d s = vol.spacing(), o = vol.origin();
    return Point{{(p.coords.x - o.x) / s.x, (p.coords.y - o.y) / s.y, (p.coords.z - o.z) / s.z},
                 Frame::voxel};
}

}  // namespace wssam
