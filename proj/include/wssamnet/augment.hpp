#pragma once

#include <cmath>

#include "wssamnet/interpolate.hpp"
#include "wssamnet/rng.hpp"

namespace wssam {

struct AffineAugmentSpec {
    double max_rotation_deg = 10.0;
    double scale_min = 0.9;
    double scale_max = 1.1;
    double max_translation_vox = 5.0;
    double identity_prob = 0.1;

    void validate() const {
        if (max_rotation_deg < 0) throw invalid_input_error("max_rotation_deg must be >= 0");
        if (!(scale_min > 0 && scale_max >= scale_min))
            throw invalid_input_error("scale_range must satisfy 0 < min <= max");
        if (max_translation_vox < 0) throw invalid_input_error("max_translation_vox must be >= 0");
        if (identity_prob < 0 || identity_prob > 1)
            throw invalid_input_error("identity_prob must lie in [0,1]");
    }
};

/// Similarity transform about a center: p -> R * s * (p - c) + c + t.
struct AffineTransform {
    double rot[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    double scale = 1.0;
    Vec3d center{};
    Vec3d translation{};
    bool is_identity = true;

    Vec3d apply(const Vec3d& p) const {
        if (is_identity) return p;
        const Vec3d d = p - center;
        Vec3d r{rot[0][0] * d.x + rot[0][1] * d.y + rot[0][2] * d.z,
                rot[1][0] * d.x + rot[1][1] * d.y + rot[1][2] * d.z,
                rot[2][0] * d.x + rot[2][1] * d.y + rot[2][2] * d.z};
        return r * scale + center + translation;
    }

    Vec3d apply_inverse(const Vec3d& q) const {
        if (is_identity) return q;
        const Vec3d d = (q - center - translation) * (1.0 / scale);
        // rotation transposed
        return Vec3d{rot[0][0] * d.x + rot[1][0] * d.y + rot[2][0] * d.z,
                     rot[0][1] * d.x + rot[1][1] * d.y + rot[2][1] * d.z,
                     rot[0][2] * d.x + rot[1][2] * d.y + rot[2][2] * d.z} +
               center;
    }
};

/// Draws a random similarity transform. Draw order is fixed (identity gate,
/// Euler angles x/y/z, scale, translation x/y/z) so a given seed always yields
/// the same transform.
inline AffineTransform sample_affine(const AffineAugmentSpec& spec, Vec3d center,
                                     std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    AffineTransform tf;
    tf.center = center;
    if (rng.uniform() < spec.identity_prob) return tf;

    const double deg = 3.14159265358979323846 / 180.0;
    const double ax = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg) * deg;
    const double ay = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg) * deg;
    const double az = rng.uniform(-spec.max_rotation_deg, spec.max_rotation_deg) * deg;
    const double s = rng.uniform(spec.scale_min, spec.scale_max);
    const double tx = rng.uniform(-spec.max_translation_vox, spec.max_translation_vox);
    const double ty = rng.uniform(-spec.max_translation_vox, spec.max_translation_vox);
    const double tz = rng.uniform(-spec.max_translation_vox, spec.max_translation_vox);

    const double cx = std::cos(ax), sx = std::sin(ax);
    const double cy = std::cos(ay), sy = std::sin(ay);
    const double cz = std::cos(az), sz = std::sin(az);
    // R = Rz * Ry * Rx
    tf.rot[0][0] = cz * cy;
    tf.rot[0][1] = cz * sy * sx - sz * cx;
    tf.rot[0][2] = cz * sy * cx + sz * sx;
    tf.rot[1][0] = sz * cy;
    tf.rot[1][1] = sz * sy * sx + cz * cx;
    tf.rot[1][2] = sz * sy * cx - cz * sx;
    tf.rot[2][0] = -sy;
    tf.rot[2][1] = cy * sx;
    tf.rot[2][2] = cy * cx;
    tf.scale = s;
    tf.translation = {tx, ty, tz};
    tf.is_identity = false;
    return tf;
}

/// Resamples the volume through the inverse transform (so content moves
/// forward by the transform) and maps landmarks forward through the same
/// transform. An identity draw returns the inputs bitwise.
template <typename T>
std::pair<Volume<T>, LandmarkSet> affine_augment(const Volume<T>& vol, const LandmarkSet& lms,
                                                 const AffineAugmentSpec& spec,
                                                 std::uint64_t seed) {
    const Vec3i n = vol.size();
    const Vec3d center{(n.x - 1) / 2.0, (n.y - 1) / 2.0, (n.z - 1) / 2.0};
    const AffineTransform tf = sample_affine(spec, center, seed);
    if (tf.is_identity) return {vol, lms};

    Volume<T> out(n, T(0), vol.spacing(), vol.origin());
    for (int z = 0; z < n.z; ++z)
        for (int y = 0; y < n.y; ++y)
            for (int x = 0; x < n.x; ++x) {
                const Vec3d src = tf.apply_inverse({double(x), double(y), double(z)});
                out.at(x, y, z) = T(trilinear_sample(vol, src));
            }

    LandmarkSet mapped;
    mapped.case_id = lms.case_id;
    for (const auto& lm : lms.entries) {
        if (lm.point.frame != Frame::voxel)
            throw invalid_input_error("affine_augment expects voxel-frame landmarks");
        mapped.add(lm.id, Point{tf.apply(lm.point.coords), Frame::voxel});
    }
    return {std::move(out), std::move(mapped)};
}

}  // namespace wssam
