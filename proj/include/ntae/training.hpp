#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ntae/autodiff.hpp"
#include "ntae/datagen.hpp"
#include "ntae/errors.hpp"
#include "ntae/models.hpp"
#include "ntae/rng.hpp"
#include "ntae/tensor.hpp"
#include "ntae/tensor_io.hpp"

namespace ntae {

struct TrainConfig {
    int epochs = 100;
    Index minibatch = 0;  ///< 0 trains on the whole set each step.
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    bool shuffle = true;
};

/// Full-set losses per epoch, each normalized by the squared norm of the set
/// it is measured on, plus the wall time spent on that epoch's updates.
struct History {
    std::vector<double> train_loss;
    std::vector<double> test_loss;
    std::vector<double> epoch_seconds;
};

struct AdamMoments {
    Tensord m, v;
};

struct AdamState {
    std::vector<AdamMoments> moments;
    std::int64_t step = 0;

    bool initialized() const { return !moments.empty(); }
};

inline void adam_init(AdamState& s, std::span<ad::Parameter* const> params) {
    s.moments.clear();
    s.moments.reserve(params.size());
    for (const auto* p : params)
        s.moments.push_back({Tensord(p->value.shape()), Tensord(p->value.shape())});
    s.step = 0;
}

/// One bias-corrected Adam update of a single tensor; `step` counts from 1.
inline void adam_update(Tensord& value, const Tensord& grad, AdamMoments& mom, std::int64_t step,
                        const TrainConfig& hyper) {
    if (grad.shape() != value.shape() || mom.m.shape() != value.shape())
        throw ShapeError("adam gradient/moment shapes do not match the parameter");
    auto m = mom.m.array();
    auto v = mom.v.array();
    const auto g = grad.array();
    m = hyper.beta1 * m + (1.0 - hyper.beta1) * g;
    v = hyper.beta2 * v + (1.0 - hyper.beta2) * g.square();
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
    value.array() -= hyper.lr * (m / bc1) / ((v / bc2).sqrt() + hyper.eps);
}

inline void adam_step(std::span<ad::Parameter* const> params, AdamState& s,
                      const TrainConfig& hyper) {
    if (!s.initialized()) adam_init(s, params);
    if (s.moments.size() != params.size())
        throw SizeError("optimizer state holds " + std::to_string(s.moments.size()) +
                        " moment pairs for " + std::to_string(params.size()) + " parameters");
    ++s.step;
    for (std::size_t i = 0; i < params.size(); ++i)
        adam_update(params[i]->value, params[i]->grad, s.moments[i], s.step, hyper);
}

namespace detail {

inline double sum_squared_diff(Model& model, const Tensord& inputs, const Tensord& refs,
                               Index chunk) {
    const Index b = inputs.shape()[0];
    double acc = 0.0;
    for (Index lo = 0; lo < b; lo += chunk) {
        const Index hi = std::min(b, lo + chunk);
        ad::Tape tape;
        const Tensord& out = tape.value(forward_on(tape, model, tape.input(slice_batch(inputs, lo, hi))));
        const Tensord ref = slice_batch(refs, lo, hi);
        acc += (out.array() - ref.array()).square().sum();
    }
    return acc;
}

}  // namespace detail

/// ‖X̂ − X_ref‖_F² / ‖X_ref‖_F² over the whole set, where the model
/// reconstructs the noisy tensors and the reference is the clean set when
/// present, the inputs themselves otherwise.
inline double evaluate_nmse(Model& model, const Dataset& data, Index chunk = 128) {
    const Tensord& ref = data.reference();
    const double denom = squared_norm(ref);
    if (denom <= 0.0) throw DegenerateInputError("zero-norm reference set");
    return detail::sum_squared_diff(model, data.noisy, ref, chunk) / denom;
}

/// Minimizes the mean squared reconstruction error of the training inputs
/// with Adam, recording full-set train/test curves each epoch. Bitwise
/// deterministic in (model, config.seed).
inline History train(Model& model, const Dataset& train_set, const Dataset& test_set,
                     const TrainConfig& cfg, AdamState& state) {
    if (cfg.epochs < 1) throw ConfigError("epochs must be at least 1");
    if (cfg.lr < 0.0) throw ConfigError("learning rate must be non-negative");
    const Index b_train = train_set.batch();
    if (cfg.minibatch < 0 || cfg.minibatch > b_train)
        throw ConfigError("minibatch " + std::to_string(cfg.minibatch) +
                          " exceeds the training set of " + std::to_string(b_train));
    const Index mb = cfg.minibatch == 0 ? b_train : cfg.minibatch;

    const auto params = parameters(model);
    if (!state.initialized()) adam_init(state, params);

    const double train_denom = squared_norm(train_set.noisy);
    const double test_denom = squared_norm(test_set.noisy);
    if (train_denom <= 0.0 || test_denom <= 0.0)
        throw DegenerateInputError("zero-norm dataset");

    History h;
    h.train_loss.reserve(static_cast<std::size_t>(cfg.epochs));
    h.test_loss.reserve(static_cast<std::size_t>(cfg.epochs));
    h.epoch_seconds.reserve(static_cast<std::size_t>(cfg.epochs));

    std::vector<Index> order(static_cast<std::size_t>(b_train));
    std::iota(order.begin(), order.end(), Index{0});
    std::vector<Index> batch_idx;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        if (cfg.shuffle) {
            Rng rng(derive_seed(cfg.seed, "train.shuffle",
                                {static_cast<std::uint64_t>(epoch)}));
            rng.shuffle(order);
        }
        for (Index lo = 0, batch_no = 0; lo < b_train; lo += mb, ++batch_no) {
            const Index hi = std::min(b_train, lo + mb);
            batch_idx.assign(order.begin() + lo, order.begin() + hi);
            for (auto* p : params) p->zero_grad();
            ad::Tape tape;
            const ad::Var x = tape.input(gather_batch(train_set.noisy, batch_idx));
            const ad::Var loss = tape.mse_loss(forward_on(tape, model, x), x);
            const double loss_value = tape.value(loss)[0];
            if (!std::isfinite(loss_value))
                throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) +
                                      ", minibatch " + std::to_string(batch_no));
            tape.backward(loss);
            adam_step(params, state, cfg);
        }
        const auto t1 = std::chrono::steady_clock::now();
        h.train_loss.push_back(
            detail::sum_squared_diff(model, train_set.noisy, train_set.noisy, 128) / train_denom);
        h.test_loss.push_back(
            detail::sum_squared_diff(model, test_set.noisy, test_set.noisy, 128) / test_denom);
        h.epoch_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    return h;
}

inline History train(Model& model, const Dataset& train_set, const Dataset& test_set,
                     const TrainConfig& cfg) {
    AdamState state;
    return train(model, train_set, test_set, cfg, state);
}

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// NTCK layout: magic "NTCK", version u16, entry count u32, manifest of
/// (name, shape, absolute payload offset) entries, raw little-endian f64
/// payloads, crc32 trailer over everything before it. Entries cover every
/// parameter, its Adam moments, and the shared step counter.
inline void save_checkpoint(const std::string& path, Model& model, const AdamState& state) {
    const auto params = parameters(model);
    AdamState fresh;
    const AdamState* st = &state;
    if (!state.initialized()) {
        adam_init(fresh, params);
        st = &fresh;
    }
    if (st->moments.size() != params.size())
        throw SizeError("optimizer state does not match the model");

    struct Entry {
        std::string name;
        const Tensord* tensor;
    };
    Tensord step_tensor({1});
    step_tensor[0] = static_cast<double>(st->step);
    std::vector<Entry> entries;
    entries.reserve(3 * params.size() + 1);
    for (std::size_t i = 0; i < params.size(); ++i) {
        entries.push_back({params[i]->name, &params[i]->value});
        entries.push_back({params[i]->name + ".adam.m", &st->moments[i].m});
        entries.push_back({params[i]->name + ".adam.v", &st->moments[i].v});
    }
    entries.push_back({"__adam.step", &step_tensor});

    std::size_t manifest_bytes = 0;
    for (const Entry& e : entries)
        manifest_bytes += 2 + e.name.size() + 1 + 8 * e.tensor->shape().size() + 8;

    std::string buf = "NTCK";
    io::put_le<std::uint16_t>(buf, kCheckpointVersion);
    io::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(entries.size()));
    std::uint64_t offset = buf.size() + manifest_bytes;
    for (const Entry& e : entries) {
        io::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(e.name.size()));
        buf += e.name;
        buf.push_back(static_cast<char>(e.tensor->order()));
        for (Index ext : e.tensor->shape())
            io::put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(ext));
        io::put_le<std::uint64_t>(buf, offset);
        offset += static_cast<std::uint64_t>(e.tensor->size()) * 8;
    }
    for (const Entry& e : entries) io::put_payload(buf, *e.tensor);
    io::put_le<std::uint32_t>(buf, io::crc32(buf.data(), buf.size()));
    io::write_file(path, buf);
}

/// Restores parameters and optimizer state into a model built from the same
/// configuration; names, shapes, and entry count must match exactly.
inline void load_checkpoint(const std::string& path, Model& model, AdamState& state) {
    const std::string buf = io::read_file(path);
    io::need(buf, 0, 10 + 4, "header");
    if (buf.compare(0, 4, "NTCK") != 0) throw FormatError("bad magic at offset 0 in " + path);
    const auto version = io::get_le<std::uint16_t>(buf, 4);
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const auto stored_crc = io::get_le<std::uint32_t>(buf, buf.size() - 4);
    if (stored_crc != io::crc32(buf.data(), buf.size() - 4))
        throw FormatError("checkpoint checksum mismatch");
    const auto count = io::get_le<std::uint32_t>(buf, 6);

    struct Entry {
        Shape shape;
        std::uint64_t offset;
    };
    std::map<std::string, Entry> manifest;
    std::size_t off = 10;
    for (std::uint32_t k = 0; k < count; ++k) {
        io::need(buf, off, 2, "entry name length");
        const auto name_len = io::get_le<std::uint16_t>(buf, off);
        off += 2;
        io::need(buf, off, name_len + 1u, "entry name");
        std::string name = buf.substr(off, name_len);
        off += name_len;
        const unsigned order = static_cast<unsigned char>(buf[off++]);
        io::need(buf, off, order * 8 + 8, "entry shape");
        Entry e;
        e.shape.resize(order);
        for (unsigned d = 0; d < order; ++d, off += 8)
            e.shape[d] = static_cast<Index>(io::get_le<std::uint64_t>(buf, off));
        e.offset = io::get_le<std::uint64_t>(buf, off);
        off += 8;
        if (!manifest.emplace(std::move(name), std::move(e)).second)
            throw FormatError("duplicate checkpoint entry");
    }

    const auto params = parameters(model);
    if (count != 3 * params.size() + 1)
        throw FormatError("checkpoint holds " + std::to_string(count) + " entries, model needs " +
                          std::to_string(3 * params.size() + 1));

    auto fetch = [&](const std::string& name, Tensord& dst) {
        const auto it = manifest.find(name);
        if (it == manifest.end()) throw FormatError("checkpoint is missing entry " + name);
        if (it->second.shape != dst.shape())
            throw FormatError("checkpoint entry " + name + " has shape " +
                              shape_str(it->second.shape) + ", expected " + shape_str(dst.shape()));
        const std::size_t bytes = static_cast<std::size_t>(dst.size()) * 8;
        io::need(buf, it->second.offset, bytes + 4, "payload");
        std::memcpy(dst.data(), buf.data() + it->second.offset, bytes);
    };

    AdamState loaded;
    adam_init(loaded, params);
    for (std::size_t i = 0; i < params.size(); ++i) {
        fetch(params[i]->name, params[i]->value);
        fetch(params[i]->name + ".adam.m", loaded.moments[i].m);
        fetch(params[i]->name + ".adam.v", loaded.moments[i].v);
    }
    Tensord step_tensor({1});
    fetch("__adam.step", step_tensor);
    loaded.step = static_cast<std::int64_t>(std::llround(step_tensor[0]));
    state = std::move(loaded);
}

}  // namespace ntae
