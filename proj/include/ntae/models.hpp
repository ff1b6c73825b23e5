#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "ntae/autodiff.hpp"
#include "ntae/errors.hpp"
#include "ntae/rng.hpp"
#include "ntae/tensor.hpp"

namespace ntae {

enum class Activation { relu, identity };

/// One encoded mode: target mode s (mode 1 is the batch mode and is never
/// encoded), its input width I_s, hidden width H_s and latent width K_s.
struct ModeSpec {
    int mode = 0;
    Index input_dim = 0;
    Index hidden_dim = 0;
    Index latent_dim = 0;
};

/// Ordered list of encoded modes with their layer widths.
struct ModePlan {
    std::vector<ModeSpec> stages;
    double alpha = 0.5;

    std::size_t depth() const noexcept { return stages.size(); }
};

inline Index round_dim(double v) { return std::max<Index>(1, std::llround(v)); }

/// Default widths per mode: H = round(alpha I), K = round(alpha^2 I), both
/// floored at 1.
inline ModePlan make_plan(const Shape& input_shape, const std::vector<int>& modes, double alpha) {
    if (!(alpha > 0.0))
        throw PlanError("alpha must be positive, got " + std::to_string(alpha));
    ModePlan plan;
    plan.alpha = alpha;
    const int order = static_cast<int>(input_shape.size());
    for (int s : modes) {
        if (s < 2 || s > order)
            throw PlanError("target mode " + std::to_string(s) + " out of range [2," +
                            std::to_string(order) + "]");
        const Index I = input_shape[s - 1];
        plan.stages.push_back({s, I, round_dim(alpha * static_cast<double>(I)),
                               round_dim(alpha * alpha * static_cast<double>(I))});
    }
    return plan;
}

/// All non-batch modes in ascending order.
inline ModePlan make_plan(const Shape& input_shape, double alpha) {
    std::vector<int> modes;
    for (int s = 2; s <= static_cast<int>(input_shape.size()); ++s) modes.push_back(s);
    return make_plan(input_shape, modes, alpha);
}

inline Index total_latent(const ModePlan& plan) {
    Index t = 1;
    for (const auto& st : plan.stages) t *= st.latent_dim;
    return t;
}

/// Raises latent widths until the flattened latent size reaches min_total:
/// repeatedly bump the smallest K_s (earliest stage on ties) that is still
/// below its I_s.
inline ModePlan apply_latent_floor(ModePlan plan, Index min_total) {
    while (total_latent(plan) < min_total) {
        std::size_t pick = plan.stages.size();
        for (std::size_t i = 0; i < plan.stages.size(); ++i) {
            auto& st = plan.stages[i];
            if (st.latent_dim >= st.input_dim) continue;
            if (pick == plan.stages.size() || st.latent_dim < plan.stages[pick].latent_dim)
                pick = i;
        }
        if (pick == plan.stages.size()) break;
        ++plan.stages[pick].latent_dim;
    }
    return plan;
}

inline void validate_plan(const ModePlan& plan, const Shape& input_shape) {
    const int order = static_cast<int>(input_shape.size());
    std::vector<bool> seen(static_cast<std::size_t>(order) + 1, false);
    for (const auto& st : plan.stages) {
        if (st.mode < 2 || st.mode > order)
            throw PlanError("target mode " + std::to_string(st.mode) + " out of range [2," +
                            std::to_string(order) + "]");
        if (seen[st.mode]) throw PlanError("target mode " + std::to_string(st.mode) + " repeated");
        seen[st.mode] = true;
        if (st.input_dim != input_shape[st.mode - 1])
            throw PlanError("stage at mode " + std::to_string(st.mode) + " expects extent " +
                            std::to_string(st.input_dim) + ", input has " +
                            std::to_string(input_shape[st.mode - 1]));
        if (st.hidden_dim < 1) throw PlanError("hidden width must be at least 1");
        if (st.latent_dim < 1 || st.latent_dim > st.input_dim)
            throw PlanError("latent width " + std::to_string(st.latent_dim) +
                            " outside [1," + std::to_string(st.input_dim) + "] at mode " +
                            std::to_string(st.mode));
    }
}

/// Shape chain: entry 0 is the input shape, entry L the latent core shape;
/// stage l replaces extent I_{s_l} by K_{s_l}.
inline std::vector<Shape> stage_shapes(const Shape& input_shape, const ModePlan& plan) {
    validate_plan(plan, input_shape);
    std::vector<Shape> chain{input_shape};
    Shape cur = input_shape;
    for (const auto& st : plan.stages) {
        cur[st.mode - 1] = st.latent_dim;
        chain.push_back(cur);
    }
    return chain;
}

namespace detail {

/// Output layers of decoder stages start at this fraction of their He scale.
inline constexpr double kDecoderOutputInitScale = 0.1;

inline ad::Parameter he_weight(const std::string& name, Index rows, Index cols,
                               std::uint64_t seed) {
    Tensord w = random_normal({rows, cols}, seed);
    w *= std::sqrt(2.0 / static_cast<double>(cols));
    return ad::Parameter(name, std::move(w));
}

inline ad::Parameter zero_bias(const std::string& name, Index n) {
    return ad::Parameter(name, Tensord::zeros({n}));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MA-NTAE

/// Per-stage two-layer perceptron applied column-wise to a mode unfolding.
struct MlpStage {
    ad::Parameter w1, b1, w2, b2;
};

struct MaNtaeModel {
    ModePlan plan;
    Shape input_shape;  // template shape; the batch extent (mode 1) is free
    bool skip_connections = false;
    Activation activation = Activation::relu;
    std::vector<MlpStage> enc;  // stage l: I->H->K at mode s_l
    std::vector<MlpStage> dec;  // stage l: K->H->I at mode s_l
};

/// Skip connections switch on for tensor order >= 4 including the batch
/// mode (i.e. three or more non-batch modes).
inline MaNtaeModel build_ma_ntae(const Shape& input_shape, const ModePlan& plan,
                                 std::uint64_t seed) {
    validate_plan(plan, input_shape);
    MaNtaeModel m;
    m.plan = plan;
    m.input_shape = input_shape;
    m.skip_connections = static_cast<int>(input_shape.size()) >= 4;
    for (std::size_t l = 0; l < plan.stages.size(); ++l) {
        const auto& st = plan.stages[l];
        const std::string tag = std::to_string(l + 1);
        m.enc.push_back({detail::he_weight("enc" + tag + ".w1", st.hidden_dim, st.input_dim,
                                           derive_seed(seed, "ma.enc.w1", {l})),
                         detail::zero_bias("enc" + tag + ".b1", st.hidden_dim),
                         detail::he_weight("enc" + tag + ".w2", st.latent_dim, st.hidden_dim,
                                           derive_seed(seed, "ma.enc.w2", {l})),
                         detail::zero_bias("enc" + tag + ".b2", st.latent_dim)});
        m.dec.push_back({detail::he_weight("dec" + tag + ".w1", st.hidden_dim, st.latent_dim,
                                           derive_seed(seed, "ma.dec.w1", {l})),
                         detail::zero_bias("dec" + tag + ".b1", st.hidden_dim),
                         detail::he_weight("dec" + tag + ".w2", st.input_dim, st.hidden_dim,
                                           derive_seed(seed, "ma.dec.w2", {l})),
                         detail::zero_bias("dec" + tag + ".b2", st.input_dim)});
        // A large random decoder output at step 0 drags the whole stage into
        // the zero-output basin; starting it small sidesteps that.
        m.dec.back().w2.value *= detail::kDecoderOutputInitScale;
    }
    return m;
}

inline MaNtaeModel build_ma_ntae(const Shape& input_shape, double alpha, std::uint64_t seed) {
    return build_ma_ntae(input_shape, make_plan(input_shape, alpha), seed);
}

/// Encoder-stage inputs Z_0..Z_{L-1}, cached for the decoder's skip additions.
struct ForwardCache {
    std::vector<ad::Var> stage_inputs;
};

namespace detail {

inline ad::Var mlp_on_unfolding(ad::Tape& t, ad::Var x, int mode, const Shape& out_shape,
                                MlpStage& st, Activation act) {
    ad::Var u = t.unfold(x, mode);
    ad::Var h = t.fc(t.param(st.w1), t.param(st.b1), u);
    if (act == Activation::relu) h = t.relu(h);
    ad::Var o = t.fc(t.param(st.w2), t.param(st.b2), h);
    return t.fold(o, mode, out_shape);
}

}  // namespace detail

inline ad::Var encode_on(ad::Tape& t, MaNtaeModel& m, ad::Var x, ForwardCache* cache = nullptr) {
    const auto chain = stage_shapes(t.value(x).shape(), m.plan);
    ad::Var cur = x;
    for (std::size_t l = 0; l < m.plan.stages.size(); ++l) {
        if (cache) cache->stage_inputs.push_back(cur);
        cur = detail::mlp_on_unfolding(t, cur, m.plan.stages[l].mode, chain[l + 1], m.enc[l],
                                       m.activation);
    }
    return cur;
}

inline ad::Var decode_on(ad::Tape& t, MaNtaeModel& m, ad::Var g,
                         const ForwardCache* cache = nullptr) {
    if (m.skip_connections && !cache)
        throw UsageError("decoding with skip connections requires the encoder cache");
    const Shape& latent = t.value(g).shape();
    Shape base = latent;
    for (const auto& st : m.plan.stages) base[st.mode - 1] = st.input_dim;
    const auto chain = stage_shapes(base, m.plan);
    if (chain.back() != latent)
        throw SizeError("latent shape " + shape_str(latent) + " does not match the plan");
    ad::Var cur = g;
    for (std::size_t l = m.plan.stages.size(); l-- > 0;) {
        cur = detail::mlp_on_unfolding(t, cur, m.plan.stages[l].mode, chain[l], m.dec[l],
                                       m.activation);
        if (m.skip_connections) cur = t.add(cur, cache->stage_inputs[l]);
    }
    return cur;
}

inline ad::Var forward_on(ad::Tape& t, MaNtaeModel& m, ad::Var x) {
    ForwardCache cache;
    ad::Var g = encode_on(t, m, x, m.skip_connections ? &cache : nullptr);
    return decode_on(t, m, g, m.skip_connections ? &cache : nullptr);
}

inline Tensord encode(MaNtaeModel& m, const Tensord& x) {
    ad::Tape t;
    return t.value(encode_on(t, m, t.input(x)));
}

inline Tensord decode(MaNtaeModel& m, const Tensord& g) {
    ad::Tape t;
    return t.value(decode_on(t, m, t.input(g)));
}

// ---------------------------------------------------------------------------
// DAE baseline: flatten each sample, run a 4-layer MLP, reshape back.

struct DaeModel {
    Shape input_shape;
    Index flat_dim = 0;
    std::vector<Index> widths;  // D, h1, h2, h1, D
    Activation activation = Activation::relu;
    std::vector<ad::Parameter> layers;  // w1,b1,...,w4,b4
};

inline DaeModel build_dae(const Shape& input_shape, double alpha, std::uint64_t seed) {
    if (input_shape.size() < 2) throw PlanError("DAE needs at least one non-batch mode");
    Index d = 1, h1 = 1, h2 = 1;
    for (std::size_t k = 1; k < input_shape.size(); ++k) {
        const double I = static_cast<double>(input_shape[k]);
        d *= input_shape[k];
        h1 *= round_dim(alpha * I);
        h2 *= round_dim(alpha * alpha * I);
    }
    DaeModel m;
    m.input_shape = input_shape;
    m.flat_dim = d;
    m.widths = {d, h1, h2, h1, d};
    for (int l = 0; l < 4; ++l) {
        const Index rows = m.widths[l + 1], cols = m.widths[l];
        const std::string tag = std::to_string(l + 1);
        m.layers.push_back(
            detail::he_weight("fc" + tag + ".w", rows, cols, derive_seed(seed, "dae.w", {static_cast<std::uint64_t>(l)})));
        m.layers.push_back(detail::zero_bias("fc" + tag + ".b", rows));
    }
    m.layers[6].value *= detail::kDecoderOutputInitScale;
    return m;
}

inline ad::Var forward_on(ad::Tape& t, DaeModel& m, ad::Var x) {
    const Shape in_shape = t.value(x).shape();
    const Index b = in_shape[0];
    if (shape_product(in_shape) / b != m.flat_dim)
        throw SizeError("DAE built for per-sample size " + std::to_string(m.flat_dim) +
                        ", got input " + shape_str(in_shape));
    ad::Var cur = t.unfold(t.reshape(x, {b, m.flat_dim}), 2);  // columns are samples
    for (int l = 0; l < 4; ++l) {
        cur = t.fc(t.param(m.layers[2 * l]), t.param(m.layers[2 * l + 1]), cur);
        if (l < 3 && m.activation == Activation::relu) cur = t.relu(cur);
    }
    return t.reshape(t.fold(cur, 2, {b, m.flat_dim}), in_shape);
}

// ---------------------------------------------------------------------------
// TFNN baseline: per-mode factor pairs with an activation between, bias-free,
// no skip connections. Same shape chain as MA-NTAE for the same plan.

struct TfnnModel {
    ModePlan plan;
    Shape input_shape;
    Activation activation = Activation::relu;
    std::vector<ad::Parameter> enc;  // per stage: V (HxI), W (KxH)
    std::vector<ad::Parameter> dec;  // per stage: V (HxK), W (IxH)
};

inline TfnnModel build_tfnn(const Shape& input_shape, const ModePlan& plan, std::uint64_t seed) {
    validate_plan(plan, input_shape);
    TfnnModel m;
    m.plan = plan;
    m.input_shape = input_shape;
    for (std::size_t l = 0; l < plan.stages.size(); ++l) {
        const auto& st = plan.stages[l];
        const std::string tag = std::to_string(l + 1);
        m.enc.push_back(detail::he_weight("enc" + tag + ".v", st.hidden_dim, st.input_dim,
                                          derive_seed(seed, "tfnn.enc.v", {l})));
        m.enc.push_back(detail::he_weight("enc" + tag + ".w", st.latent_dim, st.hidden_dim,
                                          derive_seed(seed, "tfnn.enc.w", {l})));
        m.dec.push_back(detail::he_weight("dec" + tag + ".v", st.hidden_dim, st.latent_dim,
                                          derive_seed(seed, "tfnn.dec.v", {l})));
        m.dec.push_back(detail::he_weight("dec" + tag + ".w", st.input_dim, st.hidden_dim,
                                          derive_seed(seed, "tfnn.dec.w", {l})));
        m.dec.back().value *= detail::kDecoderOutputInitScale;
    }
    return m;
}

inline TfnnModel build_tfnn(const Shape& input_shape, double alpha, std::uint64_t seed) {
    return build_tfnn(input_shape, make_plan(input_shape, alpha), seed);
}

namespace detail {

inline ad::Var factor_stage(ad::Tape& t, ad::Var x, int mode, const Shape& out_shape,
                            ad::Parameter& v, ad::Parameter& w, Activation act) {
    ad::Var u = t.unfold(x, mode);
    ad::Var h = t.matmul(t.param(v), u);
    if (act == Activation::relu) h = t.relu(h);
    ad::Var o = t.matmul(t.param(w), h);
    return t.fold(o, mode, out_shape);
}

}  // namespace detail

inline ad::Var encode_on(ad::Tape& t, TfnnModel& m, ad::Var x) {
    const auto chain = stage_shapes(t.value(x).shape(), m.plan);
    ad::Var cur = x;
    for (std::size_t l = 0; l < m.plan.stages.size(); ++l)
        cur = detail::factor_stage(t, cur, m.plan.stages[l].mode, chain[l + 1], m.enc[2 * l],
                                   m.enc[2 * l + 1], m.activation);
    return cur;
}

inline ad::Var decode_on(ad::Tape& t, TfnnModel& m, ad::Var g) {
    const Shape& latent = t.value(g).shape();
    Shape base = latent;
    for (const auto& st : m.plan.stages) base[st.mode - 1] = st.input_dim;
    const auto chain = stage_shapes(base, m.plan);
    if (chain.back() != latent)
        throw SizeError("latent shape " + shape_str(latent) + " does not match the plan");
    ad::Var cur = g;
    for (std::size_t l = m.plan.stages.size(); l-- > 0;)
        cur = detail::factor_stage(t, cur, m.plan.stages[l].mode, chain[l], m.dec[2 * l],
                                   m.dec[2 * l + 1], m.activation);
    return cur;
}

inline ad::Var forward_on(ad::Tape& t, TfnnModel& m, ad::Var x) {
    return decode_on(t, m, encode_on(t, m, x));
}

inline Tensord encode(TfnnModel& m, const Tensord& x) {
    ad::Tape t;
    return t.value(encode_on(t, m, t.input(x)));
}

// ---------------------------------------------------------------------------
// Model wrapper

enum class ModelKind { ma_ntae, dae, tfnn };

inline const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::ma_ntae: return "ma-ntae";
        case ModelKind::dae: return "dae";
        case ModelKind::tfnn: return "tfnn";
    }
    return "?";
}

struct Model {
    std::variant<MaNtaeModel, DaeModel, TfnnModel> impl;

    ModelKind kind() const noexcept {
        return static_cast<ModelKind>(impl.index());
    }
};

inline std::vector<ad::Parameter*> parameters(Model& m) {
    std::vector<ad::Parameter*> out;
    std::visit(
        [&](auto& x) {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, MaNtaeModel>) {
                for (auto* group : {&x.enc, &x.dec})
                    for (auto& st : *group) {
                        out.push_back(&st.w1);
                        out.push_back(&st.b1);
                        out.push_back(&st.w2);
                        out.push_back(&st.b2);
                    }
            } else if constexpr (std::is_same_v<T, DaeModel>) {
                for (auto& p : x.layers) out.push_back(&p);
            } else {
                for (auto& p : x.enc) out.push_back(&p);
                for (auto& p : x.dec) out.push_back(&p);
            }
        },
        m.impl);
    return out;
}

inline ad::Var forward_on(ad::Tape& t, Model& m, ad::Var x) {
    return std::visit([&](auto& impl) { return forward_on(t, impl, x); }, m.impl);
}

inline Tensord forward(Model& m, const Tensord& x) {
    ad::Tape t;
    return t.value(forward_on(t, m, t.input(x)));
}

/// Flattened latent core per sample, shape (B, prod K_s); DAE uses its
/// bottleneck features.
inline Tensord latent_features(Model& m, const Tensord& x) {
    return std::visit(
        [&](auto& impl) -> Tensord {
            using T = std::decay_t<decltype(impl)>;
            ad::Tape t;
            const Index b = x.shape()[0];
            if constexpr (std::is_same_v<T, DaeModel>) {
                ad::Var cur = t.unfold(t.reshape(t.input(x), {b, impl.flat_dim}), 2);
                for (int l = 0; l < 2; ++l) {
                    cur = t.fc(t.param(impl.layers[2 * l]), t.param(impl.layers[2 * l + 1]), cur);
                    if (l < 1 && impl.activation == Activation::relu) cur = t.relu(cur);
                }
                return t.value(t.fold(cur, 2, {b, impl.widths[2]}));
            } else {
                Tensord g = t.value(encode_on(t, impl, t.input(x)));
                const Index d = g.size() / b;
                return std::move(g).reshaped({b, d});
            }
        },
        m.impl);
}

// ---------------------------------------------------------------------------
// Complexity counters

/// Exact trainable scalar count, biases included.
inline Index param_count(Model& m) {
    Index n = 0;
    for (const auto* p : parameters(m)) n += p->value.size();
    return n;
}

/// The bias-free closed form 2 sum_s H_s (I_s + K_s).
inline Index mode_param_count(const ModePlan& plan) {
    Index n = 0;
    for (const auto& st : plan.stages) n += st.hidden_dim * (st.input_dim + st.latent_dim);
    return 2 * n;
}

/// MA-NTAE scalar count including biases, without building the model.
inline Index ma_param_count(const ModePlan& plan) {
    Index n = mode_param_count(plan);
    for (const auto& st : plan.stages)
        n += 2 * st.hidden_dim + st.latent_dim + st.input_dim;
    return n;
}

/// DAE scalar count including biases, without building the model.
inline Index dae_param_count(const Shape& input_shape, double alpha) {
    Index d = 1, h1 = 1, h2 = 1;
    for (std::size_t k = 1; k < input_shape.size(); ++k) {
        const double I = static_cast<double>(input_shape[k]);
        d *= input_shape[k];
        h1 *= round_dim(alpha * I);
        h2 *= round_dim(alpha * alpha * I);
    }
    return 2 * (h1 * d + h2 * h1) + 2 * h1 + h2 + d;
}

/// Multiply-accumulate count at the given input shape (batch extent
/// included) for one per-mode pass: encoder stages cost H_s D_{-s} (I_s +
/// K_s), decoder mirrors it.
inline Index mode_flop_count(const ModePlan& plan, const Shape& input_shape) {
    const auto chain = stage_shapes(input_shape, plan);
    Index n = 0;
    for (std::size_t l = 0; l < plan.stages.size(); ++l) {
        const auto& st = plan.stages[l];
        const Index cols = shape_product(chain[l]) / st.input_dim;
        n += st.hidden_dim * cols * (st.input_dim + st.latent_dim);
    }
    return 2 * n;
}

/// DAE multiply-accumulate count for one pass, without building the model.
inline Index dae_flop_count(const Shape& input_shape, double alpha) {
    Index d = 1, h1 = 1, h2 = 1;
    for (std::size_t k = 1; k < input_shape.size(); ++k) {
        const double I = static_cast<double>(input_shape[k]);
        d *= input_shape[k];
        h1 *= round_dim(alpha * I);
        h2 *= round_dim(alpha * alpha * I);
    }
    return 2 * input_shape[0] * (d * h1 + h1 * h2);
}

inline Index flop_count(const Model& m, const Shape& input_shape) {
    return std::visit(
        [&](const auto& impl) -> Index {
            using T = std::decay_t<decltype(impl)>;
            if constexpr (std::is_same_v<T, DaeModel>) {
                const Index b = input_shape[0];
                const auto& w = impl.widths;
                return 2 * b * (w[0] * w[1] + w[1] * w[2]);
            } else {
                return mode_flop_count(impl.plan, input_shape);
            }
        },
        m.impl);
}

}  // namespace ntae
