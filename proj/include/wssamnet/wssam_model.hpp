#pragma once

#include <utility>
#include <vector>

#include "wssamnet/interpolate.hpp"
#include "wssamnet/tensor_bridge.hpp"
#include "wssamnet/unet.hpp"

namespace wssam {

struct BundleConfig {
    int levels = 3;
    int base_features = 8;
    double leaky_slope = 0.2;
    std::uint64_t seed = 0;

    void validate() const {
        if (levels < 1) throw invalid_input_error("bundle levels must be >= 1");
        if (base_features < 1) throw invalid_input_error("bundle base_features must be >= 1");
    }
};

/// The three-network composite: two segmentation U-Nets (1->1, sigmoid head)
/// and one registration U-Net (2->3, linear zero-initialized head so training
/// starts at the identity transform).
template <typename T>
class ModelBundle {
public:
    ModelBundle() = default;

    explicit ModelBundle(const BundleConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        UNetConfig seg;
        seg.levels = cfg.levels;
        seg.base_features = cfg.base_features;
        seg.in_channels = 1;
        seg.out_channels = 1;
        seg.final_activation = FinalActivation::sigmoid;
        seg.leaky_slope = cfg.leaky_slope;

        UNetConfig reg = seg;
        reg.in_channels = 2;
        reg.out_channels = 3;
        reg.final_activation = FinalActivation::none;
        reg.zero_init_head = true;

        Rng r1 = Rng::derive(cfg.seed, 1, 0x5e67);
        Rng r2 = Rng::derive(cfg.seed, 2, 0x5e67);
        Rng r3 = Rng::derive(cfg.seed, 3, 0x5e67);
        seg_fixed_ = UNet<T>(seg, r1);
        seg_moving_ = UNet<T>(seg, r2);
        reg_ = UNet<T>(reg, r3);
    }

    const BundleConfig& config() const { return cfg_; }
    UNet<T>& seg_fixed() { return seg_fixed_; }
    UNet<T>& seg_moving() { return seg_moving_; }
    UNet<T>& reg() { return reg_; }

    void for_each_param(const std::function<void(const std::string&, ad::Tensor<T>&)>& fn) {
        seg_fixed_.for_each_param([&](const std::string& n, ad::Tensor<T>& p) { fn("seg_fixed." + n, p); });
        seg_moving_.for_each_param(
            [&](const std::string& n, ad::Tensor<T>& p) { fn("seg_moving." + n, p); });
        reg_.for_each_param([&](const std::string& n, ad::Tensor<T>& p) { fn("reg." + n, p); });
    }

    std::int64_t param_count() {
        std::int64_t n = 0;
        for_each_param([&](const std::string&, ad::Tensor<T>& p) { n += p.shape.numel(); });
        return n;
    }

    int spatial_divisor() const { return 1 << (cfg_.levels - 1); }

private:
    BundleConfig cfg_;
    UNet<T> seg_fixed_, seg_moving_, reg_;
};

template <typename T>
struct WssamGraph {
    ad::Var<T> mask_fixed, mask_moving;
    ad::Var<T> attentive_fixed, attentive_moving;
    ad::Var<T> field;
    ad::Var<T> warped_moving;
    std::vector<std::pair<ad::Tensor<T>*, ad::Var<T>>> params;
};

/// Builds the two-stage graph: segmentation masks, multiplicative attention,
/// concatenation, registration field, warped moving volume. All gradients flow
/// end to end when train=true.
template <typename T>
WssamGraph<T> wssamnet_forward_graph(ad::Tape<T>& tape, ModelBundle<T>& bundle, ad::Var<T> fixed,
                                     ad::Var<T> moving, bool train = false) {
    if (!(fixed.shape() == moving.shape()))
        throw invalid_input_error("wssamnet forward: fixed/moving shape mismatch");

    WssamGraph<T> g;
    auto* collect = train ? &g.params : nullptr;
    g.mask_fixed = bundle.seg_fixed().forward(tape, fixed, train, collect);
    g.mask_moving = bundle.seg_moving().forward(tape, moving, train, collect);
    g.attentive_fixed = ad::mul(g.mask_fixed, fixed);
    g.attentive_moving = ad::mul(g.mask_moving, moving);
    ad::Var<T> both = ad::concat_c(g.attentive_fixed, g.attentive_moving);
    g.field = bundle.reg().forward(tape, both, train, collect);
    g.warped_moving = ad::warp(moving, g.field);
    return g;
}

template <typename T>
struct WSSAMOutput {
    Volume<T> mask_fixed, mask_moving;
    Volume<T> attentive_fixed, attentive_moving;
    DisplacementField<T> field;
    Volume<T> warped_moving;
};

/// Inference entry point over domain types.
template <typename T>
WSSAMOutput<T> forward_wssamnet(ModelBundle<T>& bundle, const Volume<T>& fixed,
                                const Volume<T>& moving) {
    if (!fixed.same_grid(moving))
        throw invalid_input_error("forward_wssamnet: fixed/moving shape mismatch");
    fixed.require_finite("fixed");
    moving.require_finite("moving");

    ad::Tape<T> tape;
    ad::Var<T> f = tape.constant(to_tensor<T>(fixed));
    ad::Var<T> m = tape.constant(to_tensor<T>(moving));
    WssamGraph<T> g = wssamnet_forward_graph(tape, bundle, f, m, false);

    WSSAMOutput<T> out;
    out.mask_fixed = volume_from_tensor<T>(g.mask_fixed.value(), fixed.spacing(), fixed.origin());
    out.mask_moving =
        volume_from_tensor<T>(g.mask_moving.value(), moving.spacing(), moving.origin());
    out.attentive_fixed =
        volume_from_tensor<T>(g.attentive_fixed.value(), fixed.spacing(), fixed.origin());
    out.attentive_moving =
        volume_from_tensor<T>(g.attentive_moving.value(), moving.spacing(), moving.origin());
    out.field = field_from_tensor<T>(g.field.value());
    out.warped_moving =
        volume_from_tensor<T>(g.warped_moving.value(), moving.spacing(), moving.origin());
    return out;
}

}  // namespace wssam
