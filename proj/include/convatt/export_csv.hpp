#pragma once

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "convatt/checkpoint.hpp"
#include "convatt/data.hpp"
#include "convatt/encoder.hpp"

namespace convatt {

enum class KernelKind { FixedLightweight, DepthwiseValue };

inline KernelKind parse_kernel_kind(const std::string& s) {
    if (s == "fixed") return KernelKind::FixedLightweight;
    if (s == "depthwise") return KernelKind::DepthwiseValue;
    throw config_error("unknown kernel parameter: " + s + " (expected fixed|depthwise)");
}

namespace csv_detail {

inline void write_offset_header(std::ostream& os, int k) {
    for (int o = -k; o <= k; ++o) os << (o == -k ? "" : ",") << o;
    os << "\n";
}

inline void write_row(std::ostream& os, const Tensor& m, int row) {
    os << std::setprecision(17);
    for (int j = 0; j < m.shape[1]; ++j) os << (j ? "," : "") << m.at(row, j);
    os << "\n";
}

}  // namespace csv_detail

/// CSV of learned kernel weights: header row of offsets -k..+k, one row per head
/// (fixed beta) or per channel (depthwise beta). sort_by_argmax orders rows by the
/// offset of their largest weight, grouping same-focus kernels together.
inline void export_kernel_weights(const Checkpoint& ck, int layer, KernelKind kind,
                                  bool sort_by_argmax, std::ostream& os) {
    if (layer < 0 || layer >= ck.config.layers)
        throw config_error("layer " + std::to_string(layer) + " out of range");
    std::string name = detail::lname(
        layer, kind == KernelKind::FixedLightweight ? "attn.fixed_beta" : "attn.depthwise_beta");
    if (!ck.params.has(name))
        throw config_error("checkpoint model does not enable the requested kernel (" + name +
                           ")");
    const Tensor& m = ck.params.get(name);
    int w = m.shape[1];
    int k = (w - 1) / 2;
    // depthwise beta is stored (2k+1) x d; emit one row per channel
    bool transpose = kind == KernelKind::DepthwiseValue;
    int rows = transpose ? m.shape[1] : m.shape[0];
    if (transpose) {
        k = (m.shape[0] - 1) / 2;
        w = m.shape[0];
    }
    auto cell = [&](int r, int c) { return transpose ? m.at(c, r) : m.at(r, c); };

    std::vector<int> order(rows);
    std::iota(order.begin(), order.end(), 0);
    if (sort_by_argmax) {
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            auto argmax = [&](int r) {
                int best = 0;
                for (int c = 1; c < w; ++c)
                    if (cell(r, c) > cell(r, best)) best = c;
                return best;
            };
            return argmax(a) < argmax(b);
        });
    }
    csv_detail::write_offset_header(os, k);
    os << std::setprecision(17);
    for (int r : order) {
        for (int c = 0; c < w; ++c) os << (c ? "," : "") << cell(r, c);
        os << "\n";
    }
}

/// CSV of the post-softmax attention map of one layer/head for a sentence:
/// header row of token labels, one labeled row per token.
inline void export_attention_map(const Checkpoint& ck, const std::string& sentence, int layer,
                                 int head, std::ostream& os) {
    if (layer < 0 || layer >= ck.config.layers)
        throw config_error("layer " + std::to_string(layer) + " out of range");
    if (head < 0 || head >= ck.config.heads)
        throw config_error("head " + std::to_string(head) + " out of range");
    std::vector<std::string> tokens = tokenize_line(sentence);
    if (tokens.empty()) throw input_error("export_attention_map: empty sentence");
    if (static_cast<int>(tokens.size()) > ck.config.max_len)
        throw input_error("export_attention_map: sentence exceeds max sequence length");
    std::vector<int> ids;
    for (const auto& tok : tokens) ids.push_back(ck.vocab.id(tok));
    std::vector<uint8_t> pad_mask(ids.size(), 1);

    Tape tape;
    BoundParams bound = BoundParams::bind(tape, ck.params);
    std::vector<Var> probs;
    encoder_forward(tape, ids, pad_mask, ck.config, bound, false, nullptr, layer, &probs);
    const Tensor& map = tape.value(probs.at(head));

    os << "token";
    for (const auto& tok : tokens) os << "," << tok;
    os << "\n" << std::setprecision(17);
    for (size_t i = 0; i < tokens.size(); ++i) {
        os << tokens[i];
        for (int j = 0; j < map.shape[1]; ++j) os << "," << map.at(static_cast<int>(i), j);
        os << "\n";
    }
}

}  // namespace convatt
