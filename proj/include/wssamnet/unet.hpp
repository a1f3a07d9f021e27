#pragma once

#include <functional>
#include <string>
#include <vector>

#include "wssamnet/nn_ops.hpp"
#include "wssamnet/rng.hpp"

namespace wssam {

enum class FinalActivation { sigmoid, none };

struct UNetConfig {
    int levels = 3;
    int base_features = 8;
    int in_channels = 1;
    int out_channels = 1;
    FinalActivation final_activation = FinalActivation::none;
    double leaky_slope = 0.2;
    bool zero_init_head = false;

    void validate() const {
        if (levels < 1) throw invalid_input_error("unet levels must be >= 1");
        if (base_features < 1) throw invalid_input_error("unet base_features must be >= 1");
        if (in_channels < 1 || out_channels < 1)
            throw invalid_input_error("unet channel counts must be >= 1");
    }

    int features_at(int level) const { return base_features << level; }
    int divisor() const { return 1 << (levels - 1); }
};

/// One convolution with optional instance norm + leaky ReLU behind it.
template <typename T>
struct ConvBlock {
    ad::Tensor<T> w, b;          // weight {co, ci*k^3}, bias {co}
    ad::Tensor<T> gamma, beta;   // instance-norm affine, {co}
    int ci = 0, co = 0, k = 3, stride = 1, pad = 1;
    bool normalized = true;  // head convs are plain linear

    void init_shapes(int ci_, int co_, int k_, int stride_, bool normalized_) {
        ci = ci_;
        co = co_;
        k = k_;
        stride = stride_;
        pad = k_ == 1 ? 0 : 1;
        normalized = normalized_;
        w = ad::Tensor<T>(ad::TensorShape{co, ci * k * k * k, 1, 1});
        b = ad::Tensor<T>(ad::TensorShape{co, 1, 1, 1});
        if (normalized) {
            gamma = ad::Tensor<T>(ad::TensorShape{co, 1, 1, 1}, T(1));
            beta = ad::Tensor<T>(ad::TensorShape{co, 1, 1, 1});
        }
    }

    void init_weights(Rng& rng, double slope, bool zero) {
        if (zero) {
            std::fill(w.data.begin(), w.data.end(), T(0));
            std::fill(b.data.begin(), b.data.end(), T(0));
            return;
        }
        // Kaiming-normal for the leaky rectifier
        const double fan_in = double(ci) * k * k * k;
        const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
        const double stddev = gain / std::sqrt(fan_in);
        for (T& v : w.data) v = T(stddev * rng.normal());
        std::fill(b.data.begin(), b.data.end(), T(0));
    }

    std::int64_t param_count() const {
        std::int64_t n = w.shape.numel() + b.shape.numel();
        if (normalized) n += gamma.shape.numel() + beta.shape.numel();
        return n;
    }
};

/// Encoder-decoder with skip connections. Per level two 3^3 convolutions, each
/// followed by instance norm and leaky ReLU; stride-2 convolution downsampling;
/// trilinear x2 upsampling followed by a 1^3 convolution; skip concatenation;
/// 1^3 head convolution with optional sigmoid.
template <typename T>
class UNet {
public:
    UNet() = default;

    UNet(const UNetConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        const int L = cfg.levels;
        enc_.resize(std::size_t(L));
        down_.resize(std::size_t(L - 1));
        up_.resize(std::size_t(L - 1));
        dec_.resize(std::size_t(L - 1));

        for (int l = 0; l < L; ++l) {
            const int fin = l == 0 ? cfg.in_channels : cfg.features_at(l);
            const int f = cfg.features_at(l);
            enc_[std::size_t(l)][0].init_shapes(fin, f, 3, 1, true);
            enc_[std::size_t(l)][1].init_shapes(f, f, 3, 1, true);
        }
        for (int l = 0; l < L - 1; ++l)
            down_[std::size_t(l)].init_shapes(cfg.features_at(l), cfg.features_at(l + 1), 3, 2,
                                              true);
        for (int l = L - 2; l >= 0; --l) {
            up_[std::size_t(l)].init_shapes(cfg.features_at(l + 1), cfg.features_at(l), 1, 1, true);
            dec_[std::size_t(l)][0].init_shapes(2 * cfg.features_at(l), cfg.features_at(l), 3, 1,
                                                true);
            dec_[std::size_t(l)][1].init_shapes(cfg.features_at(l), cfg.features_at(l), 3, 1, true);
        }
        head_.init_shapes(cfg.base_features, cfg.out_channels, 1, 1, false);

        for_each_block([&](const std::string&, ConvBlock<T>& blk) {
            const bool zero = cfg_.zero_init_head && &blk == &head_;
            blk.init_weights(rng, cfg_.leaky_slope, zero);
        });
    }

    const UNetConfig& config() const { return cfg_; }

    void for_each_block(const std::function<void(const std::string&, ConvBlock<T>&)>& fn) {
        for (std::size_t l = 0; l < enc_.size(); ++l) {
            fn("enc" + std::to_string(l) + ".c0", enc_[l][0]);
            fn("enc" + std::to_string(l) + ".c1", enc_[l][1]);
        }
        for (std::size_t l = 0; l < down_.size(); ++l)
            fn("down" + std::to_string(l), down_[l]);
        for (std::size_t l = 0; l < up_.size(); ++l) fn("up" + std::to_string(l), up_[l]);
        for (std::size_t l = 0; l < dec_.size(); ++l) {
            fn("dec" + std::to_string(l) + ".c0", dec_[l][0]);
            fn("dec" + std::to_string(l) + ".c1", dec_[l][1]);
        }
        fn("head", head_);
    }

    /// Visits every parameter tensor in a stable order.
    void for_each_param(const std::function<void(const std::string&, ad::Tensor<T>&)>& fn) {
        for_each_block([&](const std::string& name, ConvBlock<T>& blk) {
            fn(name + ".w", blk.w);
            fn(name + ".b", blk.b);
            if (blk.normalized) {
                fn(name + ".gamma", blk.gamma);
                fn(name + ".beta", blk.beta);
            }
        });
    }

    std::int64_t param_count() {
        std::int64_t n = 0;
        for_each_block([&](const std::string&, ConvBlock<T>& blk) { n += blk.param_count(); });
        return n;
    }

    /// Builds the forward graph on a tape. Parameter leaves are created here;
    /// pass collect to receive (tensor pointer, var) pairs for training.
    ad::Var<T> forward(ad::Tape<T>& tape, ad::Var<T> x, bool train = false,
                       std::vector<std::pair<ad::Tensor<T>*, ad::Var<T>>>* collect = nullptr) {
        const ad::TensorShape in_shape = x.shape();
        if (in_shape.c != cfg_.in_channels)
            throw invalid_input_error("unet forward: wrong input channel count");
        const int d = cfg_.divisor();
        if (in_shape.x % d || in_shape.y % d || in_shape.z % d)
            throw invalid_input_error("unet forward: spatial dims must be divisible by " +
                                      std::to_string(d));

        auto leaf = [&](ad::Tensor<T>& p) {
            ad::Var<T> v = tape.leaf(p, train);
            if (collect) collect->push_back({&p, v});
            return v;
        };
        auto block = [&](ConvBlock<T>& blk, ad::Var<T> in) {
            ad::Var<T> out = ad::conv3d(in, leaf(blk.w), leaf(blk.b), blk.k, blk.stride, blk.pad);
            if (blk.normalized) {
                out = ad::instance_norm(out, leaf(blk.gamma), leaf(blk.beta));
                out = ad::leaky_relu(out, cfg_.leaky_slope);
            }
            return out;
        };

        const int L = cfg_.levels;
        std::vector<ad::Var<T>> skips;
        ad::Var<T> h = x;
        for (int l = 0; l < L; ++l) {
            if (l > 0) h = block(down_[std::size_t(l - 1)], h);
            h = block(enc_[std::size_t(l)][0], h);
            h = block(enc_[std::size_t(l)][1], h);
            if (l < L - 1) skips.push_back(h);
        }
        for (int l = L - 2; l >= 0; --l) {
            h = ad::upsample2x(h);
            h = block(up_[std::size_t(l)], h);
            h = ad::concat_c(skips[std::size_t(l)], h);
            h = block(dec_[std::size_t(l)][0], h);
            h = block(dec_[std::size_t(l)][1], h);
        }
        h = ad::conv3d(h, leaf(head_.w), leaf(head_.b), 1, 1, 0);
        if (cfg_.final_activation == FinalActivation::sigmoid) h = ad::sigmoid(h);
        return h;
    }

private:
    UNetConfig cfg_;
    std::vector<std::array<ConvBlock<T>, 2>> enc_;
    std::vector<ConvBlock<T>> down_;
    std::vector<ConvBlock<T>> up_;
    std::vector<std::array<ConvBlock<T>, 2>> dec_;
    ConvBlock<T> head_;
};

}  // namespace wssam
