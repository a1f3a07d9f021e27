#pragma once

#include <cstddef>
#include <type_traits>
#include <vector>

#include "wssamnet/types.hpp"

namespace wssam {

/// A 3D scalar grid with voxel spacing (mm) and a world origin (mm).
/// Storage is x-fastest: index = x + nx*(y + ny*z), matching NIfTI order.
template <typename T>
class Volume {
    static_assert(std::is_floating_point_v<T>);

public:
    Volume() = default;

    Volume(Vec3i size, T fill = T(0), Vec3d spacing = {1, 1, 1}, Vec3d origin = {0, 0, 0})
        : size_(size), spacing_(spacing), origin_(origin) {
        check_geometry(size, spacing);
        voxels_.assign(std::size_t(size.x) * size.y * size.z, fill);
    }

    static void check_geometry(const Vec3i& size, const Vec3d& spacing) {
        if (size.x < 1 || size.y < 1 || size.z < 1)
            throw invalid_input_error("volume shape components must be >= 1");
        if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0))
            throw invalid_input_error("volume spacing components must be > 0");
    }

    const Vec3i& size() const { return size_; }
    const Vec3d& spacing() const { return spacing_; }
    const Vec3d& origin() const { return origin_; }

    void set_spacing(const Vec3d& s) {
        check_geometry(size_, s);
        spacing_ = s;
    }
    void set_origin(const Vec3d& o) { origin_ = o; }

    std::size_t voxel_count() const { return voxels_.size(); }

    std::size_t index(int x, int y, int z) const {
        return std::size_t(x) + std::size_t(size_.x) * (std::size_t(y) + std::size_t(size_.y) * z);
    }

    T& at(int x, int y, int z) { return voxels_[index(x, y, z)]; }
    const T& at(int x, int y, int z) const { return voxels_[index(x, y, z)]; }

    T& operator[](std::size_t i) { return voxels_[i]; }
    const T& operator[](std::size_t i) const { return voxels_[i]; }

    std::vector<T>& data() { return voxels_; }
    const std::vector<T>& data() const { return voxels_; }

    bool in_bounds(int x, int y, int z) const {
        return x >= 0 && y >= 0 && z >= 0 && x < size_.x && y < size_.y && z < size_.z;
    }

    bool all_finite() const {
        for (T v : voxels_)
            if (!std::isfinite(double(v))) return false;
        return true;
    }

    void require_finite(const char* what = "volume") const {
        if (!all_finite())
            throw invalid_input_error(std::string(what) + " contains non-finite values");
    }

    bool same_grid(const Volume& o) const { return size_ == o.size_; }

private:
    Vec3i size_{0, 0, 0};
    Vec3d spacing_{1, 1, 1};
    Vec3d origin_{0, 0, 0};
    std::vector<T> voxels_;
};

/// Per-voxel displacement u (voxel units) on the fixed grid; the transform is
/// p -> p + u(p). Components are stored planar: all x-components, then y, then z,
/// each in Volume storage order.
template <typename T>
class DisplacementField {
    static_assert(std::is_floating_point_v<T>);

public:
    DisplacementField() = default;

    explicit DisplacementField(Vec3i size, Vec3<T> fill = {0, 0, 0}) : size_(size) {
        if (size.x < 1 || size.y < 1 || size.z < 1)
            throw invalid_input_error("field shape components must be >= 1");
        std::size_t n = voxel_count();
        comps_.assign(3 * n, T(0));
        for (int c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < n; ++i) comps_[c * n + i] = fill[c];
    }

    const Vec3i& size() const { return size_; }
    std::size_t voxel_count() const { return std::size_t(size_.x) * size_.y * size_.z; }

    std::size_t index(int x, int y, int z) const {
        return std::size_t(x) + std::size_t(size_.x) * (std::size_t(y) + std::size_t(size_.y) * z);
    }

    T& comp(int c, int x, int y, int z) { return comps_[std::size_t(c) * voxel_count() + index(x, y, z)]; }
    const T& comp(int c, int x, int y, int z) const {
        return comps_[std::size_t(c) * voxel_count() + index(x, y, z)];
    }

    T& comp(int c, std::size_t i) { return comps_[std::size_t(c) * voxel_count() + i]; }
    const T& comp(int c, std::size_t i) const { return comps_[std::size_t(c) * voxel_count() + i]; }

    Vec3<T> u(int x, int y, int z) const {
        std::size_t i = index(x, y, z), n = voxel_count();
        return {comps_[i], comps_[n + i], comps_[2 * n + i]};
    }

    void set_u(int x, int y, int z, const Vec3<T>& v) {
        std::size_t i = index(x, y, z), n = voxel_count();
        comps_[i] = v.x;
        comps_[n + i] = v.y;
        comps_[2 * n + i] = v.z;
    }

    std::vector<T>& data() { return comps_; }
    const std::vector<T>& data() const { return comps_; }

    bool all_finite() const {
        for (T v : comps_)
            if (!std::isfinite(double(v))) return false;
        return true;
    }

    double max_magnitude() const {
        double m = 0;
        std::size_t n = voxel_count();
        for (std::size_t i = 0; i < n; ++i) {
            double dx = comps_[i], dy = comps_[n + i], dz = comps_[2 * n + i];
            m = std::max(m, std::sqrt(dx * dx + dy * dy + dz * dz));
        }
        return m;
    }

    double mean_magnitude() const {
        double s = 0;
        std::size_t n = voxel_count();
        if (n == 0) return 0;
        for (std::size_t i = 0; i < n; ++i) {
            double dx = comps_[i], dy = comps_[n + i], dz = comps_[2 * n + i];
            s += std::sqrt(dx * dx + dy * dy + dz * dz);
        }
        return s / double(n);
    }

private:
    Vec3i size_{0, 0, 0};
    std::vector<T> comps_;
};

}  // namespace wssam
