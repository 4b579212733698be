#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqdistill/errors.hpp"
#include "seqdistill/matrix.hpp"
#include "seqdistill/rng.hpp"

namespace seqdistill {

// Parameters of one LSTM cell. Gate blocks are stacked along the first axis
// in the fixed order [input, forget, candidate, output]; checkpoints rely on
// this ordering.
struct LstmCellParams {
    Matrix w;              // 4*hidden x input_dim
    Matrix u;              // 4*hidden x hidden
    std::vector<double> b; // 4*hidden

    std::size_t hidden() const { return b.size() / 4; }
    std::size_t input_dim() const { return w.cols(); }
};

struct StackConfig {
    std::size_t depth = 2;
    std::size_t hidden = 64;
    bool bidirectional = true;
    double recurrent_dropout = 0.5;
    std::size_t num_classes = 40;
    std::size_t input_channels = 128;

    std::size_t directions() const { return bidirectional ? 2 : 1; }
    std::size_t feature_dim() const { return hidden * directions(); }
    std::size_t layer_input_dim(std::size_t layer) const {
        return layer == 0 ? input_channels : feature_dim();
    }

    void validate() const {
        if (depth < 1 || depth > 4)
            throw DomainError("StackConfig: depth must be in 1..4, got " + std::to_string(depth));
        if (hidden == 0) throw DomainError("StackConfig: hidden must be positive");
        if (!(recurrent_dropout >= 0.0 && recurrent_dropout < 1.0))
            throw DomainError("StackConfig: recurrent_dropout must be in [0,1)");
        if (num_classes == 0) throw DomainError("StackConfig: num_classes must be positive");
        if (input_channels == 0) throw DomainError("StackConfig: input_channels must be positive");
    }

    friend bool operator==(const StackConfig&, const StackConfig&) = default;
};

struct DenseHead {
    Matrix w;              // feature_dim x num_classes
    std::vector<double> b; // num_classes
};

struct ParamRef {
    std::string name;
    std::span<double> values;
};

struct ConstParamRef {
    std::string name;
    std::span<const double> values;
};

namespace detail {

template <typename Ref, typename Cells, typename Head>
std::vector<Ref> enumerate_params(Cells& fw, Cells& bw, Head& head) {
    std::vector<Ref> refs;
    auto push_cell = [&](auto& cell, const std::string& prefix) {
        refs.push_back({prefix + ".W", cell.w.values()});
        refs.push_back({prefix + ".U", cell.u.values()});
        refs.push_back({prefix + ".b", {cell.b.data(), cell.b.size()}});
    };
    for (std::size_t l = 0; l < fw.size(); ++l) {
        push_cell(fw[l], "layer" + std::to_string(l) + ".fw");
        if (l < bw.size()) push_cell(bw[l], "layer" + std::to_string(l) + ".bw");
    }
    refs.push_back({"head.W", head.w.values()});
    refs.push_back({"head.b", {head.b.data(), head.b.size()}});
    return refs;
}

} // namespace detail

// The student network: a stack of (bi)directional LSTM layers plus a dense
// classification head.
struct LstmStack {
    StackConfig config;
    std::vector<LstmCellParams> fw; // one per layer
    std::vector<LstmCellParams> bw; // one per layer when bidirectional, else empty
    DenseHead head;

    std::vector<ParamRef> parameters() {
        return detail::enumerate_params<ParamRef>(fw, bw, head);
    }
    std::vector<ConstParamRef> parameters() const {
        return detail::enumerate_params<ConstParamRef>(fw, bw, head);
    }
};

// Gradient holder mirroring LstmStack's parameter layout and naming.
struct StackGradients {
    std::vector<LstmCellParams> fw;
    std::vector<LstmCellParams> bw;
    DenseHead head;

    std::vector<ParamRef> parameters() {
        return detail::enumerate_params<ParamRef>(fw, bw, head);
    }
    std::vector<ConstParamRef> parameters() const {
        return detail::enumerate_params<ConstParamRef>(fw, bw, head);
    }
};

inline LstmCellParams make_cell_shape(std::size_t input_dim, std::size_t hidden) {
    LstmCellParams c;
    c.w = Matrix(4 * hidden, input_dim);
    c.u = Matrix(4 * hidden, hidden);
    c.b.assign(4 * hidden, 0.0);
    return c;
}

inline StackGradients zeros_like(const LstmStack& stack) {
    StackGradients g;
    const StackConfig& cfg = stack.config;
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        g.fw.push_back(make_cell_shape(cfg.layer_input_dim(l), cfg.hidden));
        if (cfg.bidirectional) g.bw.push_back(make_cell_shape(cfg.layer_input_dim(l), cfg.hidden));
    }
    g.head.w = Matrix(cfg.feature_dim(), cfg.num_classes);
    g.head.b.assign(cfg.num_classes, 0.0);
    return g;
}

inline void accumulate(StackGradients& into, const StackGradients& from) {
    auto dst = into.parameters();
    auto src = from.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i)
        for (std::size_t j = 0; j < dst[i].values.size(); ++j)
            dst[i].values[j] += src[i].values[j];
}

inline void scale(StackGradients& g, double factor) {
    for (auto& ref : g.parameters())
        for (double& x : ref.values) x *= factor;
}

// Glorot-uniform initialization with forget-gate biases set to 1; all draws
// come from one seeded stream in a fixed order, so equal seeds give
// bit-identical stacks.
inline LstmStack init_stack(const StackConfig& config, std::uint64_t seed) {
    config.validate();
    LstmStack stack;
    stack.config = config;
    Rng rng(derive_seed(seed, 0x57ac4u));

    auto glorot_fill = [&](Matrix& m, std::size_t fan_in, std::size_t fan_out) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& x : m.values()) x = rng.uniform(-bound, bound);
    };
    auto init_cell = [&](std::size_t input_dim) {
        LstmCellParams c = make_cell_shape(input_dim, config.hidden);
        glorot_fill(c.w, input_dim, 4 * config.hidden);
        glorot_fill(c.u, config.hidden, 4 * config.hidden);
        for (std::size_t j = config.hidden; j < 2 * config.hidden; ++j) c.b[j] = 1.0;
        return c;
    };

    for (std::size_t l = 0; l < config.depth; ++l) {
        stack.fw.push_back(init_cell(config.layer_input_dim(l)));
        if (config.bidirectional) stack.bw.push_back(init_cell(config.layer_input_dim(l)));
    }
    stack.head.w = Matrix(config.feature_dim(), config.num_classes);
    glorot_fill(stack.head.w, config.feature_dim(), config.num_classes);
    stack.head.b.assign(config.num_classes, 0.0);
    return stack;
}

// Variational recurrent dropout: a fixed 0/1 mask with inverted scaling by
// 1/(1-p). The same mask is reused at every timestep of a sequence.
inline std::vector<double> apply_recurrent_dropout(std::span<const double> h,
                                                   std::span<const double> mask, double p) {
    if (!(p >= 0.0 && p < 1.0))
        throw DomainError("apply_recurrent_dropout: p must be in [0,1), got " + std::to_string(p));
    if (h.size() != mask.size())
        throw ShapeError("apply_recurrent_dropout: mask length " + std::to_string(mask.size()) +
                         " vs state length " + std::to_string(h.size()));
    std::vector<double> out(h.size());
    const double scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < h.size(); ++i) out[i] = h[i] * mask[i] * scale;
    return out;
}

// Post-activation gate values and new states for one timestep.
struct CellStep {
    std::vector<double> h, c, i, f, g, o;
};

namespace detail {

// One unchecked LSTM step. h_prev must already carry the recurrent-dropout
// mask when one applies.
inline void lstm_step(const LstmCellParams& p, std::span<const double> x,
                      std::span<const double> h_prev, std::span<const double> c_prev,
                      CellStep& out) {
    const std::size_t h = p.hidden();
    std::vector<double> pre(p.b.begin(), p.b.end());
    matvec_acc(p.w, x, pre);
    matvec_acc(p.u, h_prev, pre);

    out.i.resize(h);
    out.f.resize(h);
    out.g.resize(h);
    out.o.resize(h);
    out.c.resize(h);
    out.h.resize(h);
    for (std::size_t j = 0; j < h; ++j) {
        out.i[j] = sigmoid(pre[j]);
        out.f[j] = sigmoid(pre[h + j]);
        out.g[j] = std::tanh(pre[2 * h + j]);
        out.o[j] = sigmoid(pre[3 * h + j]);
        out.c[j] = out.f[j] * c_prev[j] + out.i[j] * out.g[j];
        out.h[j] = out.o[j] * std::tanh(out.c[j]);
    }
}

} // namespace detail

// Single validated LSTM step (standard cell, no peepholes):
//   i = sigmoid(W_i x + U_i h + b_i)      f = sigmoid(W_f x + U_f h + b_f)
//   g = tanh   (W_g x + U_g h + b_g)      o = sigmoid(W_o x + U_o h + b_o)
//   c' = f*c + i*g                        h' = o*tanh(c')
inline CellStep cell_forward(std::span<const double> x, std::span<const double> h_prev,
                             std::span<const double> c_prev, const LstmCellParams& p) {
    const std::size_t h = p.hidden();
    if (x.size() != p.input_dim() || h_prev.size() != h || c_prev.size() != h)
        throw ShapeError("cell_forward: got x[" + std::to_string(x.size()) + "], h[" +
                         std::to_string(h_prev.size()) + "], c[" + std::to_string(c_prev.size()) +
                         "] for cell expecting x[" + std::to_string(p.input_dim()) + "], state[" +
                         std::to_string(h) + "]");
    if (!all_finite(x) || !all_finite(h_prev) || !all_finite(c_prev))
        throw NumericError("cell_forward: non-finite input");
    CellStep out;
    detail::lstm_step(p, x, h_prev, c_prev, out);
    return out;
}

// Per-direction activation cache, indexed by absolute timestep.
struct DirectionTrace {
    Matrix i, f, g, o, c, h; // T x hidden each; h is the un-dropped output
    std::vector<double> mask; // recurrent-dropout mask, entries in {0,1}
};

struct LayerTrace {
    Matrix input; // T x layer_input_dim, the sequence this layer consumed
    DirectionTrace fw;
    DirectionTrace bw; // empty matrices when unidirectional
};

// Everything stack_backward needs to reproduce the forward pass exactly.
struct ForwardTrace {
    bool training = false;
    double dropout_p = 0.0;
    StackConfig config;
    std::vector<LayerTrace> layers;
    std::vector<double> features;
    std::vector<double> logits;
};

struct ForwardResult {
    std::vector<double> logits;
    std::vector<double> features;
    std::optional<ForwardTrace> trace; // present iff forward ran in training mode
};

namespace detail {

// Runs one direction of one layer over the full sequence. Writes the
// per-timestep hidden states into out_h rows [0, T); fills the trace when
// given one.
inline void run_direction(const LstmCellParams& params, const Matrix& input, bool reverse,
                          const std::vector<double>& mask, double dropout_p,
                          DirectionTrace* trace, Matrix& out_h) {
    const std::size_t steps = input.rows();
    const std::size_t h = params.hidden();
    const double scale = 1.0 / (1.0 - dropout_p);

    if (trace) {
        trace->i = Matrix(steps, h);
        trace->f = Matrix(steps, h);
        trace->g = Matrix(steps, h);
        trace->o = Matrix(steps, h);
        trace->c = Matrix(steps, h);
        trace->h = Matrix(steps, h);
        trace->mask = mask;
    }

    std::vector<double> h_state(h, 0.0), c_state(h, 0.0), h_in(h, 0.0);
    CellStep step;
    for (std::size_t k = 0; k < steps; ++k) {
        const std::size_t t = reverse ? steps - 1 - k : k;
        for (std::size_t j = 0; j < h; ++j)
            h_in[j] = mask.empty() ? h_state[j] : h_state[j] * mask[j] * scale;
        lstm_step(params, input.row(t), h_in, c_state, step);
        h_state = step.h;
        c_state = step.c;
        std::copy(step.h.begin(), step.h.end(), out_h.row(t).begin());
        if (trace) {
            std::copy(step.i.begin(), step.i.end(), trace->i.row(t).begin());
            std::copy(step.f.begin(), step.f.end(), trace->f.row(t).begin());
            std::copy(step.g.begin(), step.g.end(), trace->g.row(t).begin());
            std::copy(step.o.begin(), step.o.end(), trace->o.row(t).begin());
            std::copy(step.c.begin(), step.c.end(), trace->c.row(t).begin());
            std::copy(step.h.begin(), step.h.end(), trace->h.row(t).begin());
        }
    }
}

} // namespace detail

// Full forward pass over a (timesteps x channels) signal. Layers run left to
// right and, when bidirectional, right to left with per-timestep outputs
// concatenated [fw | bw]. The feature vector is the forward direction's last
// hidden state joined with the backward direction's state at timestep 0;
// logits come from the dense head. Recurrent dropout masks are drawn only in
// training mode, deterministically from the seed.
inline ForwardResult stack_forward(const Matrix& signal, const LstmStack& stack, bool training,
                                   std::uint64_t seed = 0) {
    const StackConfig& cfg = stack.config;
    if (signal.cols() != cfg.input_channels)
        throw ShapeError("stack_forward: signal has " + std::to_string(signal.cols()) +
                         " channels, stack expects " + std::to_string(cfg.input_channels));
    if (signal.rows() == 0)
        throw ShapeError("stack_forward: signal has no timesteps");
    if (!all_finite(signal))
        throw NumericError("stack_forward: non-finite signal");

    const std::size_t steps = signal.rows();
    const double p = training ? cfg.recurrent_dropout : 0.0;
    Rng mask_rng(derive_seed(seed, 0xd120u));

    ForwardResult result;
    ForwardTrace trace;
    trace.training = training;
    trace.dropout_p = p;
    trace.config = cfg;
    if (training) trace.layers.resize(cfg.depth);

    auto draw_mask = [&]() {
        std::vector<double> mask(cfg.hidden, 1.0);
        if (training)
            for (double& m : mask) m = mask_rng.bernoulli(1.0 - p) ? 1.0 : 0.0;
        return mask;
    };

    Matrix layer_input = signal;
    Matrix h_fw, h_bw;
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        LayerTrace* lt = training ? &trace.layers[l] : nullptr;
        if (lt) lt->input = layer_input;

        h_fw = Matrix(steps, cfg.hidden);
        std::vector<double> mask_fw = draw_mask();
        detail::run_direction(stack.fw[l], layer_input, false, training ? mask_fw : std::vector<double>{},
                              p, lt ? &lt->fw : nullptr, h_fw);

        if (cfg.bidirectional) {
            h_bw = Matrix(steps, cfg.hidden);
            std::vector<double> mask_bw = draw_mask();
            detail::run_direction(stack.bw[l], layer_input, true,
                                  training ? mask_bw : std::vector<double>{}, p,
                                  lt ? &lt->bw : nullptr, h_bw);
            Matrix merged(steps, 2 * cfg.hidden);
            for (std::size_t t = 0; t < steps; ++t) {
                std::copy(h_fw.row(t).begin(), h_fw.row(t).end(), merged.row(t).begin());
                std::copy(h_bw.row(t).begin(), h_bw.row(t).end(),
                          merged.row(t).begin() + static_cast<std::ptrdiff_t>(cfg.hidden));
            }
            layer_input = std::move(merged);
        } else {
            layer_input = h_fw;
        }
    }

    result.features.assign(cfg.feature_dim(), 0.0);
    std::copy(h_fw.row(steps - 1).begin(), h_fw.row(steps - 1).end(), result.features.begin());
    if (cfg.bidirectional)
        std::copy(h_bw.row(0).begin(), h_bw.row(0).end(),
                  result.features.begin() + static_cast<std::ptrdiff_t>(cfg.hidden));

    result.logits.assign(cfg.num_classes, 0.0);
    matvec_transpose_acc(stack.head.w, result.features, result.logits);
    for (std::size_t j = 0; j < cfg.num_classes; ++j) result.logits[j] += stack.head.b[j];

    if (training) {
        trace.features = result.features;
        trace.logits = result.logits;
        result.trace = std::move(trace);
    }
    return result;
}

namespace detail {

// BPTT over one direction of one layer. d_hidden carries the gradients that
// arrive at each timestep's (un-dropped) hidden state from the layer above
// or the feature head; d_input accumulates gradients w.r.t. the layer input.
inline void direction_backward(const LstmCellParams& params, const DirectionTrace& tr,
                               const Matrix& input, const Matrix& d_hidden, bool reverse,
                               double dropout_p, LstmCellParams& grad, Matrix& d_input) {
    const std::size_t steps = input.rows();
    const std::size_t h = params.hidden();
    const double scale = 1.0 / (1.0 - dropout_p);
    const std::vector<double>& mask = tr.mask;

    std::vector<double> dh_rec(h, 0.0), dc_rec(h, 0.0);
    std::vector<double> dpre(4 * h), h_prev_masked(h), dx(input.cols()), urec(h);

    for (std::size_t k = steps; k-- > 0;) {
        // k indexes processing order; map it to the absolute timestep.
        const std::size_t t = reverse ? steps - 1 - k : k;
        const bool has_prev = k > 0;
        const std::size_t t_prev = reverse ? t + 1 : t - 1;

        auto gi = tr.i.row(t);
        auto gf = tr.f.row(t);
        auto gg = tr.g.row(t);
        auto go = tr.o.row(t);
        auto gc = tr.c.row(t);
        auto dH = d_hidden.row(t);

        for (std::size_t j = 0; j < h; ++j) {
            const double dh = dH[j] + dh_rec[j];
            const double tc = std::tanh(gc[j]);
            const double dpre_o = dh * tc * go[j] * (1.0 - go[j]);
            const double dc = dc_rec[j] + dh * go[j] * (1.0 - tc * tc);
            const double c_prev = has_prev ? tr.c(t_prev, j) : 0.0;
            const double dpre_i = dc * gg[j] * gi[j] * (1.0 - gi[j]);
            const double dpre_f = dc * c_prev * gf[j] * (1.0 - gf[j]);
            const double dpre_g = dc * gi[j] * (1.0 - gg[j] * gg[j]);
            dc_rec[j] = dc * gf[j];
            dpre[j] = dpre_i;
            dpre[h + j] = dpre_f;
            dpre[2 * h + j] = dpre_g;
            dpre[3 * h + j] = dpre_o;
            h_prev_masked[j] = has_prev ? tr.h(t_prev, j) * mask[j] * scale : 0.0;
        }

        for (std::size_t j = 0; j < 4 * h; ++j) grad.b[j] += dpre[j];
        outer_acc(dpre, input.row(t), grad.w);
        outer_acc(dpre, h_prev_masked, grad.u);

        std::fill(dx.begin(), dx.end(), 0.0);
        matvec_transpose_acc(params.w, dpre, dx);
        auto di = d_input.row(t);
        for (std::size_t j = 0; j < dx.size(); ++j) di[j] += dx[j];

        std::fill(urec.begin(), urec.end(), 0.0);
        matvec_transpose_acc(params.u, dpre, urec);
        for (std::size_t j = 0; j < h; ++j) dh_rec[j] = urec[j] * mask[j] * scale;
    }
}

} // namespace detail

// Exact gradients of grad_logits . logits w.r.t. every stack parameter via
// backpropagation through time, reusing the trace's dropout masks.
inline StackGradients stack_backward(const ForwardTrace& trace, std::span<const double> grad_logits,
                                     const LstmStack& stack) {
    if (!trace.training || trace.layers.empty())
        throw StateError("stack_backward: trace was not produced by a training-mode forward");
    const StackConfig& cfg = stack.config;
    if (trace.config != cfg || trace.layers.size() != cfg.depth)
        throw StateError("stack_backward: trace does not match this stack's configuration");
    if (grad_logits.size() != cfg.num_classes)
        throw ShapeError("stack_backward: grad_logits length " + std::to_string(grad_logits.size()) +
                         " vs " + std::to_string(cfg.num_classes) + " classes");

    const std::size_t steps = trace.layers[0].input.rows();
    StackGradients grads = zeros_like(stack);

    // Head.
    outer_acc(trace.features, grad_logits, grads.head.w);
    for (std::size_t j = 0; j < cfg.num_classes; ++j) grads.head.b[j] = grad_logits[j];
    std::vector<double> d_features(cfg.feature_dim(), 0.0);
    for (std::size_t d = 0; d < cfg.feature_dim(); ++d) {
        double acc = 0.0;
        for (std::size_t j = 0; j < cfg.num_classes; ++j) acc += stack.head.w(d, j) * grad_logits[j];
        d_features[d] = acc;
    }

    // Seed the top layer's per-timestep hidden gradients from the features.
    Matrix dh_fw(steps, cfg.hidden), dh_bw;
    if (cfg.bidirectional) dh_bw = Matrix(steps, cfg.hidden);
    for (std::size_t j = 0; j < cfg.hidden; ++j) dh_fw(steps - 1, j) = d_features[j];
    if (cfg.bidirectional)
        for (std::size_t j = 0; j < cfg.hidden; ++j) dh_bw(0, j) = d_features[cfg.hidden + j];

    for (std::size_t l = cfg.depth; l-- > 0;) {
        const LayerTrace& lt = trace.layers[l];
        Matrix d_input(steps, cfg.layer_input_dim(l));
        detail::direction_backward(stack.fw[l], lt.fw, lt.input, dh_fw, false, trace.dropout_p,
                                   grads.fw[l], d_input);
        if (cfg.bidirectional)
            detail::direction_backward(stack.bw[l], lt.bw, lt.input, dh_bw, true, trace.dropout_p,
                                       grads.bw[l], d_input);

        if (l > 0) {
            dh_fw = Matrix(steps, cfg.hidden);
            if (cfg.bidirectional) {
                dh_bw = Matrix(steps, cfg.hidden);
                for (std::size_t t = 0; t < steps; ++t)
                    for (std::size_t j = 0; j < cfg.hidden; ++j) {
                        dh_fw(t, j) = d_input(t, j);
                        dh_bw(t, j) = d_input(t, cfg.hidden + j);
                    }
            } else {
                for (std::size_t t = 0; t < steps; ++t)
                    for (std::size_t j = 0; j < cfg.hidden; ++j) dh_fw(t, j) = d_input(t, j);
            }
        }
    }
    return grads;
}

} // namespace seqdistill
