#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "convatt/attention.hpp"
#include "convatt/tape.hpp"

namespace convatt {

/// Architecture sizes plus the attention mechanism selection. Defaults are the
/// desk-scale configuration; bert_small_config() gives the full-size preset.
struct EncoderConfig {
    int layers = 2;
    int hidden = 64;
    int intermediate = 128;
    int heads = 2;
    int embed_size = 32;
    int vocab = 0;
    int max_len = 32;
    int k = 8;       // half-width of the score-bias / value-bias kernels
    int conv_k = 8;  // half-width of the separable Q/K/V kernels
    AttentionConfig attention;
    bool use_absolute_positions = false;
    double dropout = 0.1;
    double attention_dropout = 0.1;
    uint64_t seed = 0;

    int head_size() const { return hidden / heads; }
    void validate() const {
        if (hidden % heads != 0)
            throw config_error("hidden size " + std::to_string(hidden) +
                               " not divisible by heads " + std::to_string(heads));
        if (vocab < 5) throw config_error("vocab size must cover the 5 special tokens");
        if (layers < 0 || max_len < 1 || k < 0 || conv_k < 0 || embed_size < 1 ||
            intermediate < 1)
            throw config_error("invalid encoder configuration sizes");
    }
};

inline EncoderConfig bert_small_config() {
    EncoderConfig c;
    c.layers = 12;
    c.hidden = 256;
    c.intermediate = 1024;
    c.heads = 4;
    c.embed_size = 128;
    c.vocab = 30004;
    c.max_len = 128;
    c.k = 8;
    c.conv_k = 8;
    c.dropout = 0.1;
    c.attention_dropout = 0.1;
    return c;
}

/// Named parameter tensors in a fixed insertion order.
struct ParamStore {
    std::vector<std::pair<std::string, Tensor>> items;
    std::unordered_map<std::string, int> index;

    Tensor& add(const std::string& name, Tensor t) {
        if (index.count(name)) throw config_error("duplicate parameter name: " + name);
        index[name] = static_cast<int>(items.size());
        items.emplace_back(name, std::move(t));
        return items.back().second;
    }
    bool has(const std::string& name) const { return index.count(name) != 0; }
    Tensor& get(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw config_error("unknown parameter: " + name);
        return items[it->second].second;
    }
    const Tensor& get(const std::string& name) const {
        return const_cast<ParamStore*>(this)->get(name);
    }
    size_t total_values() const {
        size_t n = 0;
        for (auto& [_, t] : items) n += t.data.size();
        return n;
    }
};

namespace detail {
inline std::string lname(int layer, const std::string& suffix) {
    return "layer" + std::to_string(layer) + "." + suffix;
}
}  // namespace detail

/// Deterministic initialization: weight matrices ~ N(0, 0.02^2); biases and all
/// convolution kernels (fixed beta, W^C, depthwise beta) zero; layer-norm gain 1;
/// separable depthwise kernels start as the identity (one-hot at offset 0).
inline ParamStore init_params(const EncoderConfig& cfg, uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const double stddev = 0.02;
    auto normal = [&](Shape s) { return random_normal(std::move(s), rng, stddev); };

    ParamStore p;
    int d = cfg.hidden, d_h = cfg.head_size(), w = 2 * cfg.k + 1, cw = 2 * cfg.conv_k + 1;

    p.add("embed.tok", normal({cfg.vocab, cfg.embed_size}));
    if (cfg.embed_size != d) {
        p.add("embed.proj.w", normal({cfg.embed_size, d}));
        p.add("embed.proj.b", Tensor({d}));
    }
    if (cfg.use_absolute_positions) p.add("embed.pos", normal({cfg.max_len, d}));
    Tensor ones_d({d});
    std::fill(ones_d.data.begin(), ones_d.data.end(), 1.0);
    p.add("embed.ln.gain", ones_d);
    p.add("embed.ln.bias", Tensor({d}));

    int n_conv = conv_head_count(cfg.attention, cfg.heads);
    for (int l = 0; l < cfg.layers; ++l) {
        auto nm = [&](const std::string& s) { return detail::lname(l, s); };
        p.add(nm("attn.wq"), normal({d, d}));
        p.add(nm("attn.bq"), Tensor({d}));
        p.add(nm("attn.wk"), normal({d, d}));
        p.add(nm("attn.bk"), Tensor({d}));
        p.add(nm("attn.wv"), normal({d, d}));
        p.add(nm("attn.bv"), Tensor({d}));
        p.add(nm("attn.wo"), normal({d, d}));
        p.add(nm("attn.bo"), Tensor({d}));
        if (cfg.attention.use_fixed_lightweight)
            p.add(nm("attn.fixed_beta"), Tensor({cfg.heads, w}));
        if (cfg.attention.use_query_dynamic) p.add(nm("attn.rel_embed"), Tensor({d_h, w}));
        if (cfg.attention.use_key_dynamic) p.add(nm("attn.key_rel_embed"), Tensor({d_h, w}));
        if (cfg.attention.use_depthwise_bias) p.add(nm("attn.depthwise_beta"), Tensor({w, d}));
        for (auto [flag, tag] : {std::pair{cfg.attention.conv_query, "q"},
                                 std::pair{cfg.attention.conv_key, "k"},
                                 std::pair{cfg.attention.conv_value, "v"}}) {
            if (!flag) continue;
            for (int h = 0; h < n_conv; ++h) {
                std::string base = nm(std::string("attn.conv") + tag + std::to_string(h));
                Tensor dw({cw, d});
                for (int c = 0; c < d; ++c) dw.at(cfg.conv_k, c) = 1.0;  // identity kernel
                p.add(base + ".dw", std::move(dw));
                p.add(base + ".pw", normal({d, d_h}));
                p.add(base + ".pb", Tensor({d_h}));
            }
        }
        p.add(nm("attn.ln.gain"), ones_d);
        p.add(nm("attn.ln.bias"), Tensor({d}));
        p.add(nm("ffn.w1"), normal({d, cfg.intermediate}));
        p.add(nm("ffn.b1"), Tensor({cfg.intermediate}));
        p.add(nm("ffn.w2"), normal({cfg.intermediate, d}));
        p.add(nm("ffn.b2"), Tensor({d}));
        p.add(nm("ffn.ln.gain"), ones_d);
        p.add(nm("ffn.ln.bias"), Tensor({d}));
    }

    p.add("mlm.dense.w", normal({d, cfg.embed_size}));
    p.add("mlm.dense.b", Tensor({cfg.embed_size}));
    Tensor ones_e({cfg.embed_size});
    std::fill(ones_e.data.begin(), ones_e.data.end(), 1.0);
    p.add("mlm.ln.gain", ones_e);
    p.add("mlm.ln.bias", Tensor({cfg.embed_size}));
    p.add("mlm.out.b", Tensor({cfg.vocab}));
    return p;
}

/// All parameters registered as leaves on one tape, looked up by name.
struct BoundParams {
    std::unordered_map<std::string, Var> vars;
    std::vector<std::string> order;

    static BoundParams bind(Tape& t, const ParamStore& p) {
        BoundParams b;
        for (auto& [name, tensor] : p.items) {
            b.vars[name] = t.leaf(tensor);
            b.order.push_back(name);
        }
        return b;
    }
    Var operator()(const std::string& name) const {
        auto it = vars.find(name);
        if (it == vars.end()) throw config_error("parameter not bound: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return vars.count(name) != 0; }
};

inline AttentionVars attention_vars(const BoundParams& b, const EncoderConfig& cfg, int layer) {
    auto nm = [&](const std::string& s) { return detail::lname(layer, s); };
    AttentionVars v;
    v.wq = b(nm("attn.wq"));
    v.bq = b(nm("attn.bq"));
    v.wk = b(nm("attn.wk"));
    v.bk = b(nm("attn.bk"));
    v.wv = b(nm("attn.wv"));
    v.bv = b(nm("attn.bv"));
    v.wo = b(nm("attn.wo"));
    v.bo = b(nm("attn.bo"));
    if (b.has(nm("attn.fixed_beta"))) v.fixed_beta = b(nm("attn.fixed_beta"));
    if (b.has(nm("attn.rel_embed"))) v.rel_embed = b(nm("attn.rel_embed"));
    if (b.has(nm("attn.key_rel_embed"))) v.key_rel_embed = b(nm("attn.key_rel_embed"));
    if (b.has(nm("attn.depthwise_beta"))) v.depthwise_beta = b(nm("attn.depthwise_beta"));
    int n_conv = conv_head_count(cfg.attention, cfg.heads);
    for (auto [flag, tag, slot] :
         {std::tuple{cfg.attention.conv_query, "q", &v.conv_q},
          std::tuple{cfg.attention.conv_key, "k", &v.conv_k},
          std::tuple{cfg.attention.conv_value, "v", &v.conv_v}}) {
        if (!flag) continue;
        for (int h = 0; h < n_conv; ++h) {
            std::string base = nm(std::string("attn.conv") + tag + std::to_string(h));
            slot->push_back({b(base + ".dw"), b(base + ".pw"), b(base + ".pb")});
        }
    }
    return v;
}

/// Token embedding (+ projection to hidden, + absolute positions), layer norm, dropout.
inline Var embed(Tape& t, const std::vector<int>& tokens, const EncoderConfig& cfg,
                 const BoundParams& b, bool training = false, std::mt19937_64* rng = nullptr) {
    int n = static_cast<int>(tokens.size());
    if (n < 1 || n > cfg.max_len)
        throw input_error("embed: sequence length " + std::to_string(n) +
                          " outside [1, max_len]");
    for (int id : tokens)
        if (id < 0 || id >= cfg.vocab) throw input_error("embed: token id out of range");

    Var h = t.rows(b("embed.tok"), tokens);
    if (cfg.embed_size != cfg.hidden)
        h = t.add_row_bias(t.matmul(h, b("embed.proj.w")), b("embed.proj.b"));
    if (cfg.use_absolute_positions) {
        std::vector<int> pos(n);
        for (int i = 0; i < n; ++i) pos[i] = i;
        h = t.add(h, t.rows(b("embed.pos"), pos));
    }
    h = t.layer_norm(h, b("embed.ln.gain"), b("embed.ln.bias"));
    if (training && cfg.dropout > 0.0 && rng) h = t.dropout(h, cfg.dropout, *rng);
    return h;
}

/// Post-layer-norm residual stack: h <- LN(h + attention(h)); h <- LN(h + FFN(h)).
inline Var encoder_forward(Tape& t, const std::vector<int>& tokens,
                           const std::vector<uint8_t>& pad_mask, const EncoderConfig& cfg,
                           const BoundParams& b, bool training = false,
                           std::mt19937_64* rng = nullptr, int probe_layer = -1,
                           std::vector<Var>* probe_probs = nullptr) {
    Var h = embed(t, tokens, cfg, b, training, rng);
    double drop = training ? cfg.dropout : 0.0;
    double attn_drop = training ? cfg.attention_dropout : 0.0;
    for (int l = 0; l < cfg.layers; ++l) {
        auto nm = [&](const std::string& s) { return detail::lname(l, s); };
        AttentionVars av = attention_vars(b, cfg, l);
        Var attn = multi_head_attention(t, h, cfg.attention, av, cfg.heads, pad_mask, attn_drop,
                                        rng, l == probe_layer ? probe_probs : nullptr);
        if (drop > 0.0 && rng) attn = t.dropout(attn, drop, *rng);
        h = t.layer_norm(t.add(h, attn), b(nm("attn.ln.gain")), b(nm("attn.ln.bias")));
        Var ff = t.add_row_bias(
            t.matmul(t.gelu(t.add_row_bias(t.matmul(h, b(nm("ffn.w1"))), b(nm("ffn.b1")))),
                     b(nm("ffn.w2"))),
            b(nm("ffn.b2")));
        if (drop > 0.0 && rng) ff = t.dropout(ff, drop, *rng);
        h = t.layer_norm(t.add(h, ff), b(nm("ffn.ln.gain")), b(nm("ffn.ln.bias")));
    }
    return h;
}

/// MLM head: dense + gelu + layer norm, then the tied token-embedding matrix
/// transposed, plus an output bias.
inline Var mlm_logits(Tape& t, Var hidden, const BoundParams& b) {
    Var h = t.gelu(t.add_row_bias(t.matmul(hidden, b("mlm.dense.w")), b("mlm.dense.b")));
    h = t.layer_norm(h, b("mlm.ln.gain"), b("mlm.ln.bias"));
    Var vocab_bias = b("mlm.out.b");
    return t.add_row_bias(t.matmul_nt(h, b("embed.tok")), vocab_bias);
}

}  // namespace convatt
