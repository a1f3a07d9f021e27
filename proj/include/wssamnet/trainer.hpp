#pragma once

#include <algorithm>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "wssamnet/augment.hpp"
#include "wssamnet/losses.hpp"
#include "wssamnet/optimizer.hpp"
#include "wssamnet/roi_mask.hpp"
#include "wssamnet/wssam_model.hpp"

namespace wssam {

/// Per-epoch averages. The loss entries are the signed, weighted contributions
/// to the optimized objective, so total == cc + mi + smooth + focal_fixed +
/// focal_moving for every epoch.
struct TrainEpochStats {
    int epoch = 0;
    double total = 0;
    double cc = 0;
    double mi = 0;
    double smooth = 0;
    double focal_fixed = 0;
    double focal_moving = 0;
    double learning_rate = 0;
    int steps = 0;
};

struct TrainRecord {
    std::vector<TrainEpochStats> epochs;

    nlohmann::json to_json() const {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& e : epochs)
            arr.push_back({{"epoch", e.epoch},
                           {"total", e.total},
                           {"cc", e.cc},
                           {"mi", e.mi},
                           {"smooth", e.smooth},
                           {"focal_fixed", e.focal_fixed},
                           {"focal_moving", e.focal_moving},
                           {"learning_rate", e.learning_rate},
                           {"steps", e.steps}});
        return nlohmann::json{{"epochs", arr}};
    }
};

/// One volume with voxel-frame landmarks (self-registration pool entry).
template <typename T>
struct TrainSample {
    Volume<T> volume;
    LandmarkSet landmarks;
};

/// One fixed/moving pair with voxel-frame landmark sets on both sides.
template <typename T>
struct TrainCase {
    std::string case_id;
    Volume<T> fixed, moving;
    LandmarkSet fixed_landmarks, moving_landmarks;
};

struct TrainOptions {
    OptimConfig optim;
    RegLossOptions loss;
    RoiMaskSpec roi;
    FocalParams focal;

    void validate() const {
        optim.validate();
        loss.weights.validate();
        loss.log_params.validate();
        loss.cc_params.validate();
        loss.mi_params.validate();
        loss.smooth_params.validate();
        roi.validate();
        focal.validate();
    }
};

/// Joint end-to-end training of the three networks: the registration loss plus
/// seg_loss_weight times the two focal losses against landmark ROI masks.
template <typename T>
class Trainer {
public:
    Trainer(ModelBundle<T>& bundle, TrainOptions opt) : bundle_(bundle), opt_(opt) {
        opt.validate();
        std::size_t slot = 0;
        bundle_.for_each_param([&](const std::string&, ad::Tensor<T>& p) {
            slots_[&p] = slot;
            state_.adam.ensure_slot(slot, p.data.size());
            ++slot;
        });
    }

    TrainerState<T>& state() { return state_; }
    const TrainerState<T>& state() const { return state_; }

    /// Self-registration pretraining: each step registers a pool volume to its
    /// randomly augmented copy, with masks from the original and the mapped
    /// landmarks supervising the segmentation nets.
    TrainRecord pretrain(const std::vector<TrainSample<T>>& pool, const AffineAugmentSpec& spec) {
        spec.validate();
        if (pool.empty()) throw invalid_input_error("pretrain: empty dataset");
        TrainRecord record;
        const int first = state_.epochs_completed;
        const int last = first + opt_.optim.epochs;
        for (int epoch = first; epoch < last; ++epoch) {
            Rng rng = Rng::derive(opt_.optim.seed, std::uint64_t(epoch), 0xA1);
            TrainEpochStats stats = begin_epoch(epoch);
            const int steps = steps_per_epoch(pool.size());
            for (int s = 0; s < steps; ++s) {
                begin_batch();
                for (int b = 0; b < opt_.optim.batch_size; ++b) {
                    const auto& sample = pool[std::size_t(rng.integer(pool.size()))];
                    const std::uint64_t aug_seed = rng.raw();
                    auto [aug_vol, aug_lms] =
                        affine_augment(sample.volume, sample.landmarks, spec, aug_seed);
                    accumulate(sample.volume, aug_vol, sample.landmarks, aug_lms, stats);
                }
                apply_update(stats.learning_rate);
            }
            finish_epoch(stats, record);
        }
        return record;
    }

    /// Pair training on real fixed/moving cases in seeded shuffled order.
    TrainRecord train(const std::vector<TrainCase<T>>& cases) {
        if (cases.empty()) throw invalid_input_error("train: empty dataset");
        TrainRecord record;
        const int first = state_.epochs_completed;
        const int last = first + opt_.optim.epochs;
        for (int epoch = first; epoch < last; ++epoch) {
            Rng rng = Rng::derive(opt_.optim.seed, std::uint64_t(epoch), 0xB2);
            std::vector<std::size_t> order(cases.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[std::size_t(rng.integer(i))]);

            TrainEpochStats stats = begin_epoch(epoch);
            std::size_t cursor = 0;
            const int steps = steps_per_epoch(cases.size());
            for (int s = 0; s < steps; ++s) {
                begin_batch();
                for (int b = 0; b < opt_.optim.batch_size && cursor < order.size(); ++b, ++cursor) {
                    const auto& c = cases[order[cursor]];
                    accumulate(c.fixed, c.moving, c.fixed_landmarks, c.moving_landmarks, stats);
                }
                apply_update(stats.learning_rate);
            }
            finish_epoch(stats, record);
        }
        return record;
    }

private:
    TrainEpochStats begin_epoch(int epoch) {
        TrainEpochStats stats;
        stats.epoch = epoch;
        stats.learning_rate = opt_.optim.schedule.lr_at(opt_.optim.learning_rate, epoch);
        return stats;
    }

    int steps_per_epoch(std::size_t n) const {
        return int((n + std::size_t(opt_.optim.batch_size) - 1) / opt_.optim.batch_size);
    }

    void begin_batch() {
        for (auto& g : grad_accum_) std::fill(g.data.begin(), g.data.end(), T(0));
    }

    void accumulate(const Volume<T>& fixed, const Volume<T>& moving, const LandmarkSet& fixed_lms,
                    const LandmarkSet& moving_lms, TrainEpochStats& stats) {
        Volume<T> mask_f = landmarks_to_mask<T>(fixed_lms, fixed.size(), opt_.roi);
        Volume<T> mask_m = landmarks_to_mask<T>(moving_lms, moving.size(), opt_.roi);

        ad::Tape<T> tape;
        ad::Var<T> f = tape.constant(to_tensor<T>(fixed));
        ad::Var<T> m = tape.constant(to_tensor<T>(moving));
        ad::Var<T> tf = tape.constant(to_tensor<T>(mask_f));
        ad::Var<T> tm = tape.constant(to_tensor<T>(mask_m));

        WssamGraph<T> g = wssamnet_forward_graph(tape, bundle_, f, m, true);
        RegLossVars<T> reg = registration_loss_op(f, m, g.field, opt_.loss);
        ad::Var<T> focal_f = focal_loss_op(g.mask_fixed, tf, opt_.focal);
        ad::Var<T> focal_m = focal_loss_op(g.mask_moving, tm, opt_.focal);

        const double w_seg = opt_.optim.seg_loss_weight;
        ad::Var<T> total =
            ad::linear_combine<T>({{reg.total, 1.0}, {focal_f, w_seg}, {focal_m, w_seg}});

        const double total_v = double(total.value().scalar_value());
        if (!std::isfinite(total_v))
            throw numeric_failure_error("non-finite loss at step " +
                                        std::to_string(state_.steps_completed));

        stats.total += total_v;
        stats.cc += -opt_.loss.weights.cc * double(reg.cc.value().scalar_value());
        stats.mi += -opt_.loss.weights.mi * double(reg.mi.value().scalar_value());
        stats.smooth += opt_.loss.weights.smooth * double(reg.smooth.value().scalar_value());
        stats.focal_fixed += w_seg * double(focal_f.value().scalar_value());
        stats.focal_moving += w_seg * double(focal_m.value().scalar_value());
        ++stats.steps;

        tape.backward(total);
        if (grad_accum_.empty()) {
            grad_accum_.resize(slots_.size());
            for (const auto& [ptr, slot] : slots_) grad_accum_[slot] = ad::Tensor<T>(ptr->shape);
        }
        for (auto& [ptr, var] : g.params) {
            const std::size_t slot = slots_.at(ptr);
            const ad::Tensor<T>& grad = tape.grad(var);
            ad::Tensor<T>& acc = grad_accum_[slot];
            for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += grad.data[i];
        }
        params_by_slot_.clear();
        for (auto& [ptr, var] : g.params) params_by_slot_.emplace_back(slots_.at(ptr), ptr);
    }

    void apply_update(double lr) {
        state_.adam.begin_step();
        // stable slot order keeps updates deterministic
        std::sort(params_by_slot_.begin(), params_by_slot_.end());
        for (const auto& [slot, ptr] : params_by_slot_)
            state_.adam.update(slot, *ptr, grad_accum_[slot], lr);
        ++state_.steps_completed;
    }

    void finish_epoch(TrainEpochStats& stats, TrainRecord& record) {
        const double n = std::max(1, stats.steps);
        stats.total /= n;
        stats.cc /= n;
        stats.mi /= n;
        stats.smooth /= n;
        stats.focal_fixed /= n;
        stats.focal_moving /= n;
        record.epochs.push_back(stats);
        ++state_.epochs_completed;
    }

    ModelBundle<T>& bundle_;
    TrainOptions opt_;
    TrainerState<T> state_;
    std::unordered_map<ad::Tensor<T>*, std::size_t> slots_;
    std::vector<ad::Tensor<T>> grad_accum_;
    std::vector<std::pair<std::size_t, ad::Tensor<T>*>> params_by_slot_;
};

}  // namespace wssam
