#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "convatt/data.hpp"
#include "convatt/encoder.hpp"
#include "convatt/optimizer.hpp"
#include "convatt/runconfig.hpp"

namespace convatt {

/// Versioned checkpoint container: encoder config (text), vocab, named parameter
/// tensors (shape header + little-endian doubles), and an optional TrainState.
struct Checkpoint {
    EncoderConfig config;
    Vocab vocab;
    ParamStore params;
    std::optional<TrainState> state;
};

namespace ckpt_detail {

constexpr char kMagic[8] = {'C', 'V', 'A', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

inline void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_u64(std::ostream& os, uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_f64(std::ostream& os, double v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_str(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline uint32_t read_u32(std::istream& is) {
    uint32_t v;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
inline uint64_t read_u64(std::istream& is) {
    uint64_t v;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
inline double read_f64(std::istream& is) {
    double v;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
inline std::string read_str(std::istream& is) {
    uint32_t len = read_u32(is);
    std::string s(len, '\0');
    is.read(s.data(), len);
    return s;
}

inline void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    write_str(os, name);
    write_u32(os, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) write_u32(os, static_cast<uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

inline std::pair<std::string, Tensor> read_tensor(std::istream& is) {
    std::string name = read_str(is);
    uint32_t ndim = read_u32(is);
    Shape shape(ndim);
    for (uint32_t i = 0; i < ndim; ++i) shape[i] = static_cast<int>(read_u32(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    return {name, std::move(t)};
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    using namespace ckpt_detail;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw input_error("cannot write checkpoint: " + path);
    os.write(kMagic, sizeof kMagic);
    write_u32(os, kVersion);
    write_str(os, encoder_config_text(ck.config));

    write_u32(os, static_cast<uint32_t>(ck.vocab.size()));
    for (const auto& tok : ck.vocab.id_to_token) write_str(os, tok);

    write_u32(os, static_cast<uint32_t>(ck.params.items.size()));
    for (const auto& [name, t] : ck.params.items) write_tensor(os, name, t);

    os.put(ck.state ? 1 : 0);
    if (ck.state) {
        const TrainState& s = *ck.state;
        write_u64(os, s.step);
        write_u64(os, s.warmup_steps);
        write_u64(os, s.total_steps);
        write_f64(os, s.peak_lr);
        write_str(os, s.rng_state);
        write_u32(os, static_cast<uint32_t>(s.m.size()));
        for (const auto& [name, t] : s.m) write_tensor(os, name, t);
        for (const auto& [name, t] : s.v) write_tensor(os, name, t);
    }
    if (!os) throw input_error("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    using namespace ckpt_detail;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw input_error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || !std::equal(magic, magic + 8, kMagic))
        throw input_error("not a checkpoint file: " + path);
    uint32_t version = read_u32(is);
    if (version != kVersion)
        throw input_error("unsupported checkpoint version " + std::to_string(version));

    Checkpoint ck;
    ck.config = parse_encoder_config(read_str(is));

    uint32_t vsz = read_u32(is);
    for (uint32_t i = 0; i < vsz; ++i) {
        std::string tok = read_str(is);
        if (i >= kNumSpecials) ck.vocab.token_to_id[tok] = static_cast<int>(i);
        ck.vocab.id_to_token.push_back(std::move(tok));
    }

    uint32_t n_params = read_u32(is);
    for (uint32_t i = 0; i < n_params; ++i) {
        auto [name, t] = read_tensor(is);
        ck.params.add(name, std::move(t));
    }

    if (is.get() == 1) {
        TrainState s;
        s.step = read_u64(is);
        s.warmup_steps = read_u64(is);
        s.total_steps = read_u64(is);
        s.peak_lr = read_f64(is);
        s.rng_state = read_str(is);
        uint32_t n = read_u32(is);
        for (uint32_t i = 0; i < n; ++i) s.m.push_back(read_tensor(is));
        for (uint32_t i = 0; i < n; ++i) s.v.push_back(read_tensor(is));
        ck.state = std::move(s);
    }
    if (!is) throw input_error("truncated checkpoint: " + path);
    return ck;
}

}  // namespace convatt
