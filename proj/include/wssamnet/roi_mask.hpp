#pragma once

#include <algorithm>
#include <cmath>

#include "wssamnet/volume.hpp"

namespace wssam {

struct RoiMaskSpec {
    int patch_size = 9;

    void validate() const {
        if (patch_size < 1 || patch_size % 2 == 0)
            throw invalid_input_error("roi patch_size must be odd and >= 1");
    }
};

/// Binary ROI mask: a patch_size^3 cube around each landmark's rounded voxel
/// coordinate (half away from zero), clipped to the grid; overlaps union.
template <typename T>
Volume<T> landmarks_to_mask(const LandmarkSet& lms, Vec3i shape, const RoiMaskSpec& spec = {}) {
    spec.validate();
    Volume<T> mask(shape, T(0));
    const int h = (spec.patch_size - 1) / 2;

    for (const auto& lm : lms.entries) {
        if (lm.point.frame != Frame::voxel)
            throw invalid_input_error("landmarks_to_mask expects voxel-frame landmarks");
        if (!lm.point.coords.all_finite())
            throw invalid_input_error("landmarks_to_mask: non-finite landmark");
        const int cx = int(std::llround(lm.point.coords.x));
        const int cy = int(std::llround(lm.point.coords.y));
        const int cz = int(std::llround(lm.point.coords.z));
        const int x0 = std::max(cx - h, 0), x1 = std::min(cx + h, shape.x - 1);
        const int y0 = std::max(cy - h, 0), y1 = std::min(cy + h, shape.y - 1);
        const int z0 = std::max(cz - h, 0), z1 = std::min(cz + h, shape.z - 1);
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) mask.at(x, y, z) = T(1);
    }
    return mask;
}

}  // namespace wssam
