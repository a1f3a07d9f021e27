#pragma once

#include "wssamnet/autodiff.hpp"
#include "wssamnet/volume.hpp"

namespace wssam {

/// Volume <-> single-channel tensor. Layouts match, so these are plain copies
/// (with optional scalar-type conversion).
template <typename TOut, typename TIn>
ad::Tensor<TOut> to_tensor(const Volume<TIn>& v) {
    ad::Tensor<TOut> t(ad::TensorShape{1, v.size().x, v.size().y, v.size().z});
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = TOut(v[i]);
    return t;
}

template <typename TOut, typename TIn>
ad::Tensor<TOut> to_tensor(const DisplacementField<TIn>& f) {
    ad::Tensor<TOut> t(ad::TensorShape{3, f.size().x, f.size().y, f.size().z});
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = TOut(f.data()[i]);
    return t;
}

template <typename TOut, typename TIn>
Volume<TOut> volume_from_tensor(const ad::Tensor<TIn>& t, const Vec3d& spacing = {1, 1, 1},
                                const Vec3d& origin = {0, 0, 0}, int channel = 0) {
    Volume<TOut> v(Vec3i{t.shape.x, t.shape.y, t.shape.z}, TOut(0), spacing, origin);
    const TIn* src = t.channel(channel);
    for (std::size_t i = 0; i < v.voxel_count(); ++i) v[i] = TOut(src[i]);
    return v;
}

template <typename TOut, typename TIn>
DisplacementField<TOut> field_from_tensor(const ad::Tensor<TIn>& t) {
    if (t.shape.c != 3) throw invalid_input_error("field tensor must have 3 channels");
    DisplacementField<TOut> f(Vec3i{t.shape.x, t.shape.y, t.shape.z});
    for (std::size_t i = 0; i < f.data().size(); ++i) f.data()[i] = TOut(t.data[i]);
    return f;
}

}  // namespace wssam
