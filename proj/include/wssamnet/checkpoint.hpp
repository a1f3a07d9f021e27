#pragma once

#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "wssamnet/optimizer.hpp"
#include "wssamnet/wssam_model.hpp"

namespace wssam {

namespace detail {

constexpr char kCkptMagic[8] = {'W', 'S', 'S', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
const char* scalar_tag() {
    return sizeof(T) == 4 ? "f32" : "f64";
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

/// Single binary container: magic, format version, JSON header (config
/// snapshot + named parameter manifest), then raw little-endian blobs.
/// Round-trips parameters bitwise. Optionally embeds optimizer state so a run
/// can resume exactly.
template <typename T>
void save_checkpoint(ModelBundle<T>& bundle, const std::string& path,
                     const TrainerState<T>* trainer = nullptr) {
    nlohmann::json header;
    header["format_version"] = detail::kCkptVersion;
    header["scalar"] = detail::scalar_tag<T>();
    header["bundle"] = {{"levels", bundle.config().levels},
                        {"base_features", bundle.config().base_features},
                        {"leaky_slope", bundle.config().leaky_slope},
                        {"seed", bundle.config().seed}};

    std::vector<ad::Tensor<T>*> tensors;
    nlohmann::json params = nlohmann::json::array();
    bundle.for_each_param([&](const std::string& name, ad::Tensor<T>& p) {
        params.push_back({{"name", name}, {"count", p.shape.numel()}});
        tensors.push_back(&p);
    });
    header["params"] = params;

    if (trainer) {
        header["trainer"] = {{"epochs_completed", trainer->epochs_completed},
                             {"steps_completed", trainer->steps_completed},
                             {"adam_step", trainer->adam.step_count()}};
    }

    const std::string hs = header.dump();
    detail::FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw io_error("cannot open checkpoint for writing: " + path);

    auto put = [&](const void* p, std::size_t n) {
        if (std::fwrite(p, 1, n, f.get()) != n)
            throw io_error("short write to checkpoint: " + path);
    };
    put(detail::kCkptMagic, sizeof(detail::kCkptMagic));
    const std::uint32_t ver = detail::kCkptVersion;
    put(&ver, sizeof(ver));
    const std::uint64_t hlen = hs.size();
    put(&hlen, sizeof(hlen));
    put(hs.data(), hs.size());
    for (auto* t : tensors) put(t->data.data(), t->data.size() * sizeof(T));

    if (trainer) {
        auto* self = const_cast<TrainerState<T>*>(trainer);
        for (std::size_t s = 0; s < tensors.size(); ++s) {
            self->adam.ensure_slot(s, tensors[s]->data.size());
            put(self->adam.moment1()[s].data(), tensors[s]->data.size() * sizeof(T));
            put(self->adam.moment2()[s].data(), tensors[s]->data.size() * sizeof(T));
        }
    }
}

template <typename T>
ModelBundle<T> load_checkpoint(const std::string& path, TrainerState<T>* trainer = nullptr) {
    detail::FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw io_error("cannot open checkpoint: " + path);

    auto get = [&](void* p, std::size_t n) {
        if (std::fread(p, 1, n, f.get()) != n)
            throw checkpoint_error("truncated checkpoint: " + path);
    };

    char magic[8];
    get(magic, sizeof(magic));
    if (std::memcmp(magic, detail::kCkptMagic, sizeof(magic)) != 0)
        throw checkpoint_error("not a checkpoint file: " + path);
    std::uint32_t ver = 0;
    get(&ver, sizeof(ver));
    if (ver != detail::kCkptVersion)
        throw checkpoint_error("unsupported checkpoint version " + std::to_string(ver));
    std::uint64_t hlen = 0;
    get(&hlen, sizeof(hlen));
    if (hlen > (1ull << 30)) throw checkpoint_error("corrupt checkpoint header length");
    std::string hs(std::size_t(hlen), '\0');
    get(hs.data(), hs.size());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw checkpoint_error(std::string("corrupt checkpoint header: ") + e.what());
    }
    if (header.value("scalar", "") != detail::scalar_tag<T>())
        throw checkpoint_error("checkpoint scalar type mismatch");

    BundleConfig cfg;
    try {
        const auto& b = header.at("bundle");
        cfg.levels = b.at("levels").get<int>();
        cfg.base_features = b.at("base_features").get<int>();
        cfg.leaky_slope = b.at("leaky_slope").get<double>();
        cfg.seed = b.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw checkpoint_error(std::string("bad checkpoint bundle config: ") + e.what());
    }

    ModelBundle<T> bundle(cfg);
    std::vector<ad::Tensor<T>*> tensors;
    std::vector<std::string> names;
    bundle.for_each_param([&](const std::string& name, ad::Tensor<T>& p) {
        tensors.push_back(&p);
        names.push_back(name);
    });

    const auto& params = header.at("params");
    if (params.size() != tensors.size())
        throw checkpoint_error("checkpoint parameter manifest does not match architecture");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (params[i].at("name").get<std::string>() != names[i] ||
            params[i].at("count").get<std::int64_t>() != tensors[i]->shape.numel())
            throw checkpoint_error("checkpoint parameter mismatch at '" + names[i] + "'");
    }
    for (auto* t : tensors) get(t->data.data(), t->data.size() * sizeof(T));

    if (trainer) {
        if (!header.contains("trainer"))
            throw checkpoint_error("checkpoint has no trainer state to resume from");
        trainer->epochs_completed = header["trainer"].at("epochs_completed").get<int>();
        trainer->steps_completed = header["trainer"].at("steps_completed").get<std::int64_t>();
        trainer->adam.set_step_count(header["trainer"].at("adam_step").get<std::int64_t>());
        for (std::size_t s = 0; s < tensors.size(); ++s) {
            trainer->adam.ensure_slot(s, tensors[s]->data.size());
            get(trainer->adam.moment1()[s].data(), tensors[s]->data.size() * sizeof(T));
            get(trainer->adam.moment2()[s].data(), tensors[s]->data.size() * sizeof(T));
        }
    }
    return bundle;
}

}  // namespace wssam
