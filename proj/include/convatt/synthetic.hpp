#pragma once

#include <random>
#include <string>
#include <vector>

#include "convatt/tensor.hpp"

namespace convatt {

/// Position-probe tasks. In copy-prev each token is the cyclic successor of its
/// left neighbor, so a masked token is recoverable solely from the token before it;
/// copy-next mirrors this to the right neighbor; direction-mixed flips a seeded
/// coin per sequence.
enum class SyntheticKind { CopyPrev, CopyNext, DirectionMixed };

inline SyntheticKind parse_synthetic_kind(const std::string& s) {
    if (s == "copy-prev") return SyntheticKind::CopyPrev;
    if (s == "copy-next") return SyntheticKind::CopyNext;
    if (s == "direction-mixed") return SyntheticKind::DirectionMixed;
    throw config_error("unknown synthetic task kind: " + s);
}

inline std::vector<std::string> gen_synthetic(SyntheticKind kind, int vocab_size, int seq_len,
                                              int count, uint64_t seed) {
    if (vocab_size < 2 || seq_len < 2 || count < 1)
        throw config_error("gen_synthetic: need vocab >= 2, length >= 2, count >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> start(0, vocab_size - 1);
    std::bernoulli_distribution coin(0.5);

    std::vector<std::string> lines;
    lines.reserve(count);
    std::vector<int> ids(seq_len);
    for (int s = 0; s < count; ++s) {
        bool forward = kind == SyntheticKind::CopyPrev ||
                       (kind == SyntheticKind::DirectionMixed && coin(rng));
        if (kind == SyntheticKind::CopyNext) forward = false;
        if (forward) {
            ids[0] = start(rng);
            for (int i = 1; i < seq_len; ++i) ids[i] = (ids[i - 1] + 1) % vocab_size;
        } else {
            ids[seq_len - 1] = start(rng);
            for (int i = seq_len - 2; i >= 0; --i) ids[i] = (ids[i + 1] + 1) % vocab_size;
        }
        std::string line;
        for (int i = 0; i < seq_len; ++i) {
            if (i) line += ' ';
            line += 'w';
            line += std::to_string(ids[i]);
        }
        lines.push_back(std::move(line));
    }
    return lines;
}

}  // namespace convatt
