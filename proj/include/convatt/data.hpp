#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "convatt/tensor.hpp"

namespace convatt {

enum SpecialToken : int { PAD = 0, UNK = 1, CLS = 2, SEP = 3, MASK = 4 };
constexpr int kNumSpecials = 5;

/// Whitespace vocabulary with fixed special ids 0-4. Deterministic given the
/// corpus and size cap: tokens ranked by frequency, ties broken lexicographically.
struct Vocab {
    std::unordered_map<std::string, int> token_to_id;
    std::vector<std::string> id_to_token;

    int size() const { return static_cast<int>(id_to_token.size()); }
    int id(const std::string& tok) const {
        auto it = token_to_id.find(tok);
        return it == token_to_id.end() ? UNK : it->second;
    }
    const std::string& token(int id) const { return id_to_token.at(id); }
};

inline std::vector<std::string> tokenize_line(const std::string& line) {
    std::vector<std::string> out;
    std::string tok;
    std::istringstream is(line);
    while (is >> tok) {
        for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        out.push_back(tok);
    }
    return out;
}

inline Vocab build_vocab(const std::vector<std::string>& lines, int max_size) {
    if (max_size <= kNumSpecials) throw config_error("vocab cap must exceed the special tokens");
    std::unordered_map<std::string, long long> freq;
    for (const auto& line : lines)
        for (auto& tok : tokenize_line(line)) ++freq[tok];
    if (freq.empty()) throw input_error("build_vocab: empty corpus");

    std::vector<std::pair<std::string, long long>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (static_cast<int>(ranked.size()) > max_size - kNumSpecials)
        ranked.resize(max_size - kNumSpecials);

    Vocab v;
    v.id_to_token = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    for (auto& [tok, _] : ranked) {
        v.token_to_id[tok] = v.size();
        v.id_to_token.push_back(tok);
    }
    return v;
}

struct Batch {
    std::vector<std::vector<int>> ids;        // batch x max_len
    std::vector<std::vector<uint8_t>> mask;   // nonzero = real token
};

/// CLS + tokens (UNK for unknowns) + SEP, truncated to max_len, PAD-filled.
inline Batch encode_batch(const std::vector<std::string>& lines, const Vocab& vocab,
                          int max_len) {
    if (max_len < 2) throw config_error("encode_batch: max_len must fit CLS and SEP");
    Batch b;
    for (const auto& line : lines) {
        std::vector<int> ids{CLS};
        for (auto& tok : tokenize_line(line)) {
            if (static_cast<int>(ids.size()) >= max_len - 1) break;
            ids.push_back(vocab.id(tok));
        }
        ids.push_back(SEP);
        std::vector<uint8_t> m(ids.size(), 1);
        ids.resize(max_len, PAD);
        m.resize(max_len, 0);
        b.ids.push_back(std::move(ids));
        b.mask.push_back(std::move(m));
    }
    return b;
}

struct MaskedBatch {
    std::vector<std::vector<int>> ids;          // corrupted inputs
    std::vector<std::vector<int>> targets;      // original ids at selected positions
    std::vector<std::vector<uint8_t>> selected; // loss positions
};

/// BERT-style corruption: each non-special token is selected with probability p;
/// of selected positions, 80% become MASK, 10% a random non-special id, 10% stay.
inline MaskedBatch apply_mlm_mask(const Batch& batch, int vocab_size, double p,
                                  std::mt19937_64& rng) {
    if (vocab_size <= kNumSpecials) throw config_error("apply_mlm_mask: vocab too small");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> random_id(kNumSpecials, vocab_size - 1);
    MaskedBatch out;
    for (const auto& seq : batch.ids) {
        std::vector<int> corrupted = seq;
        std::vector<int> targets(seq.size(), 0);
        std::vector<uint8_t> selected(seq.size(), 0);
        for (size_t i = 0; i < seq.size(); ++i) {
            int id = seq[i];
            if (id == PAD || id == CLS || id == SEP) continue;
            if (unit(rng) >= p) continue;
            selected[i] = 1;
            targets[i] = id;
            double u = unit(rng);
            if (u < 0.8)
                corrupted[i] = MASK;
            else if (u < 0.9)
                corrupted[i] = random_id(rng);
            // else: keep the original token
        }
        out.ids.push_back(std::move(corrupted));
        out.targets.push_back(std::move(targets));
        out.selected.push_back(std::move(selected));
    }
    return out;
}

inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open corpus file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);
    if (lines.empty()) throw input_error("empty corpus: " + path);
    return lines;
}

}  // namespace convatt
