#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "convatt/tape.hpp"

namespace convatt {

/// Which position mechanisms a layer uses. Composite attention is
/// use_fixed_lightweight together with use_query_dynamic.
struct AttentionConfig {
    bool use_fixed_lightweight = false;
    bool use_query_dynamic = false;
    bool use_key_dynamic = false;
    bool use_depthwise_bias = false;
    bool conv_query = false;
    bool conv_key = false;
    bool conv_value = false;

    bool any_conv_qkv() const { return conv_query || conv_key || conv_value; }
};

/// scores[i][j] = (Q_i . K_j) / sqrt(d_h)
inline Var attention_scores_standard(Tape& t, Var q, Var k) {
    int d_h = t.value(q).shape[1];
    return t.scale(t.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d_h)));
}

/// Standard scores plus the fixed lightweight bias beta[clamp(j-i)], unscaled.
inline Var scores_fixed_lightweight(Tape& t, Var q, Var k, Var fixed_beta) {
    return t.relpos_bias(attention_scores_standard(t, q, k), fixed_beta);
}

/// Query-dynamic term: (Q_i . W^C column at clamp(j-i)) / sqrt(d_h), computed in the
/// expanded two-term form (standard scores + gathered Q*W^C products).
inline Var scores_dynamic_lightweight(Tape& t, Var q, Var k, Var rel_embed) {
    int d_h = t.value(q).shape[1];
    const Tensor& W = t.value(rel_embed);
    if (W.shape.size() != 2 || W.shape[0] != d_h)
        throw dimension_error("scores_dynamic_lightweight: rel_embed must be d_h x (2k+1), got " +
                              shape_str(W.shape));
    Var dyn = t.scale(t.gather_row_offsets(t.matmul(q, rel_embed)),
                      1.0 / std::sqrt(static_cast<double>(d_h)));
    return t.add(attention_scores_standard(t, q, k), dyn);
}

/// Composite attention: standard term + scaled query-dynamic term + unscaled fixed bias.
inline Var scores_composite(Tape& t, Var q, Var k, Var rel_embed, Var fixed_beta) {
    return t.relpos_bias(scores_dynamic_lightweight(t, q, k, rel_embed), fixed_beta);
}

/// Key-dynamic term: adds (K_j . W^C' column at clamp(j-i)) / sqrt(d_h) to base scores.
inline Var scores_key_dynamic(Tape& t, Var base_scores, Var k, Var key_rel_embed) {
    int d_h = t.value(k).shape[1];
    Var dyn = t.scale(t.gather_col_offsets(t.matmul(k, key_rel_embed)),
                      1.0 / std::sqrt(static_cast<double>(d_h)));
    return t.add(base_scores, dyn);
}

/// Post-softmax depthwise value bias: att_probs * V + depthwise_conv(V, beta).
inline Var depthwise_value_bias(Tape& t, Var att_probs, Var v_full, Var depthwise_beta) {
    return t.add(t.matmul(att_probs, v_full), t.depthwise_conv(v_full, depthwise_beta));
}

/// Depthwise-separable projection: per-channel convolution over the sequence,
/// then a pointwise linear map to the head dimension.
inline Var separable_conv_projection(Tape& t, Var x, Var depthwise_w, Var pointwise_w,
                                     std::optional<Var> pointwise_b = std::nullopt) {
    Var h = t.matmul(t.depthwise_conv(x, depthwise_w), pointwise_w);
    if (pointwise_b) h = t.add_row_bias(h, *pointwise_b);
    return h;
}

/// Learned parameters of one attention layer, as tape handles.
struct AttentionVars {
    Var wq, bq, wk, bk, wv, bv, wo, bo;            // d x d projections + biases
    std::optional<Var> fixed_beta;                 // h x (2k+1), one kernel per head
    std::optional<Var> rel_embed;                  // d_h x (2k+1), shared across heads
    std::optional<Var> key_rel_embed;              // d_h x (2k+1)
    std::optional<Var> depthwise_beta;             // (2k+1) x d
    struct SepConv {
        Var dw;  // (2k_p+1) x d
        Var pw;  // d x d_h
        Var pb;  // d_h
    };
    std::vector<SepConv> conv_q, conv_k, conv_v;   // one per replaced head
};

inline int conv_head_count(const AttentionConfig& cfg, int heads) {
    return cfg.any_conv_qkv() ? (heads + 1) / 2 : 0;
}

/// Full multi-head attention layer. pad_mask marks real tokens (nonzero); logits of
/// padded keys are masked out and padded rows never feed the convolution terms.
inline Var multi_head_attention(Tape& t, Var x, const AttentionConfig& cfg,
                                const AttentionVars& vars, int heads,
                                const std::vector<uint8_t>& pad_mask,
                                double attention_dropout = 0.0,
                                std::mt19937_64* rng = nullptr,
                                std::vector<Var>* probs_out = nullptr) {
    const Tensor& X = t.value(x);
    if (X.shape.size() != 2) throw dimension_error("multi_head_attention: input must be n x d");
    int n = X.shape[0], d = X.shape[1];
    if (d % heads != 0)
        throw config_error("multi_head_attention: d=" + std::to_string(d) +
                           " not divisible by heads=" + std::to_string(heads));
    int d_h = d / heads;
    if (static_cast<int>(pad_mask.size()) != n)
        throw config_error("multi_head_attention: pad mask length does not match sequence");

    if (cfg.use_fixed_lightweight && !vars.fixed_beta)
        throw config_error("multi_head_attention: fixed lightweight enabled but no beta kernel");
    if (cfg.use_query_dynamic && !vars.rel_embed)
        throw config_error("multi_head_attention: query-dynamic enabled but no relative embeddings");
    if (cfg.use_key_dynamic && !vars.key_rel_embed)
        throw config_error("multi_head_attention: key-dynamic enabled but no key embeddings");
    if (cfg.use_depthwise_bias && !vars.depthwise_beta)
        throw config_error("multi_head_attention: depthwise bias enabled but no kernel");
    int n_conv = conv_head_count(cfg, heads);
    if ((cfg.conv_query && static_cast<int>(vars.conv_q.size()) != n_conv) ||
        (cfg.conv_key && static_cast<int>(vars.conv_k.size()) != n_conv) ||
        (cfg.conv_value && static_cast<int>(vars.conv_v.size()) != n_conv))
        throw config_error("multi_head_attention: separable projection weights do not match "
                           "conv head count");

    // Zero padded rows before any convolution reads them.
    Var x_conv = x;
    bool any_pad = false;
    for (uint8_t m : pad_mask) any_pad |= (m == 0);
    if (any_pad && (cfg.any_conv_qkv() || cfg.use_depthwise_bias)) {
        Tensor rowmask({n, d});
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < d; ++c) rowmask.at(i, c) = pad_mask[i] ? 1.0 : 0.0;
        x_conv = t.mul(x, t.leaf(std::move(rowmask)));
    }

    Var q_full = t.add_row_bias(t.matmul(x, vars.wq), vars.bq);
    Var k_full = t.add_row_bias(t.matmul(x, vars.wk), vars.bk);
    Var v_full = t.add_row_bias(t.matmul(x, vars.wv), vars.bv);

    // Key mask: every row keeps only real-token columns.
    std::vector<uint8_t> score_mask;
    if (any_pad) {
        score_mask.resize(static_cast<size_t>(n) * n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) score_mask[static_cast<size_t>(i) * n + j] = pad_mask[j];
    }

    std::vector<Var> contexts, values;
    contexts.reserve(heads);
    values.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        bool conv_head = h < n_conv;
        Var q = (conv_head && cfg.conv_query)
                    ? separable_conv_projection(t, x_conv, vars.conv_q[h].dw, vars.conv_q[h].pw,
                                                vars.conv_q[h].pb)
                    : t.slice_cols(q_full, h * d_h, d_h);
        Var k = (conv_head && cfg.conv_key)
                    ? separable_conv_projection(t, x_conv, vars.conv_k[h].dw, vars.conv_k[h].pw,
                                                vars.conv_k[h].pb)
                    : t.slice_cols(k_full, h * d_h, d_h);
        Var v = (conv_head && cfg.conv_value)
                    ? separable_conv_projection(t, x_conv, vars.conv_v[h].dw, vars.conv_v[h].pw,
                                                vars.conv_v[h].pb)
                    : t.slice_cols(v_full, h * d_h, d_h);

        Var scores = cfg.use_query_dynamic ? scores_dynamic_lightweight(t, q, k, *vars.rel_embed)
                                           : attention_scores_standard(t, q, k);
        if (cfg.use_fixed_lightweight)
            scores = t.relpos_bias(scores, t.rows(*vars.fixed_beta, {h}));
        if (cfg.use_key_dynamic) scores = scores_key_dynamic(t, scores, k, *vars.key_rel_embed);

        Var probs = t.softmax_lastdim(scores, any_pad ? &score_mask : nullptr);
        if (probs_out) probs_out->push_back(probs);
        if (attention_dropout > 0.0 && rng) probs = t.dropout(probs, attention_dropout, *rng);
        contexts.push_back(t.matmul(probs, v));
        values.push_back(v);
    }

    Var ctx = t.concat_cols(contexts);
    if (cfg.use_depthwise_bias) {
        Var v_all = t.concat_cols(values);
        if (any_pad) {
            Tensor rowmask({n, d});
            for (int i = 0; i < n; ++i)
                for (int c = 0; c < d; ++c) rowmask.at(i, c) = pad_mask[i] ? 1.0 : 0.0;
            v_all = t.mul(v_all, t.leaf(std::move(rowmask)));
        }
        ctx = t.add(ctx, t.depthwise_conv(v_all, *vars.depthwise_beta));
    }
    return t.add_row_bias(t.matmul(ctx, vars.wo), vars.bo);
}

}  // namespace convatt
