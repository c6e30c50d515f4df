#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "convatt/encoder.hpp"
#include "convatt/optimizer.hpp"

namespace convatt {

/// Everything a training run needs: the encoder architecture plus the recipe.
struct RunConfig {
    EncoderConfig model;
    AdamConfig adam;
    uint64_t steps = 2000;
    uint64_t warmup_steps = 200;
    int batch_size = 16;
    double learning_rate = 3e-4;
    double mask_prob = 0.15;
    std::string corpus;
    uint64_t log_interval = 100;
    uint64_t checkpoint_interval = 0;  // 0 = final checkpoint only
};

namespace detail {

inline bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw config_error("expected boolean, got '" + v + "'");
}

}  // namespace detail

/// Parses key = value lines ('#' comments allowed). Unknown keys are rejected.
inline RunConfig parse_run_config(std::istream& in) {
    RunConfig rc;
    std::map<std::string, std::function<void(const std::string&)>> setters;
    auto set_int = [](int& slot) {
        return [&slot](const std::string& v) { slot = std::stoi(v); };
    };
    auto set_u64 = [](uint64_t& slot) {
        return [&slot](const std::string& v) { slot = std::stoull(v); };
    };
    auto set_f = [](double& slot) {
        return [&slot](const std::string& v) { slot = std::stod(v); };
    };
    auto set_b = [](bool& slot) {
        return [&slot](const std::string& v) { slot = detail::parse_bool(v); };
    };

    setters["layers"] = set_int(rc.model.layers);
    setters["hidden_size"] = set_int(rc.model.hidden);
    setters["intermediate_size"] = set_int(rc.model.intermediate);
    setters["heads"] = set_int(rc.model.heads);
    setters["embedding_size"] = set_int(rc.model.embed_size);
    setters["vocab_size"] = set_int(rc.model.vocab);
    setters["max_seq_len"] = set_int(rc.model.max_len);
    setters["kernel_half_width"] = set_int(rc.model.k);
    setters["conv_kernel_half_width"] = set_int(rc.model.conv_k);
    setters["use_absolute_positions"] = set_b(rc.model.use_absolute_positions);
    setters["use_fixed_lightweight"] = set_b(rc.model.attention.use_fixed_lightweight);
    setters["use_query_dynamic"] = set_b(rc.model.attention.use_query_dynamic);
    setters["use_key_dynamic"] = set_b(rc.model.attention.use_key_dynamic);
    setters["use_depthwise_bias"] = set_b(rc.model.attention.use_depthwise_bias);
    setters["conv_query"] = set_b(rc.model.attention.conv_query);
    setters["conv_key"] = set_b(rc.model.attention.conv_key);
    setters["conv_value"] = set_b(rc.model.attention.conv_value);
    setters["dropout"] = set_f(rc.model.dropout);
    setters["attention_dropout"] = set_f(rc.model.attention_dropout);
    setters["seed"] = set_u64(rc.model.seed);
    setters["steps"] = set_u64(rc.steps);
    setters["warmup_steps"] = set_u64(rc.warmup_steps);
    setters["batch_size"] = set_int(rc.batch_size);
    setters["learning_rate"] = set_f(rc.learning_rate);
    setters["adam_beta1"] = set_f(rc.adam.beta1);
    setters["adam_beta2"] = set_f(rc.adam.beta2);
    setters["adam_eps"] = set_f(rc.adam.eps);
    setters["weight_decay"] = set_f(rc.adam.weight_decay);
    setters["mask_prob"] = set_f(rc.mask_prob);
    setters["corpus"] = [&rc](const std::string& v) { rc.corpus = v; };
    setters["log_interval"] = set_u64(rc.log_interval);
    setters["checkpoint_interval"] = set_u64(rc.checkpoint_interval);

    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            std::istringstream ws(line);
            std::string rest;
            if (ws >> rest)
                throw config_error("line " + std::to_string(lineno) + ": expected key = value");
            continue;
        }
        auto trim = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        auto it = setters.find(key);
        if (it == setters.end()) throw config_error("unknown config key: " + key);
        try {
            it->second(value);
        } catch (const config_error&) {
            throw;
        } catch (const std::exception&) {
            throw config_error("invalid value for " + key + ": '" + value + "'");
        }
    }
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open config file: " + path);
    return parse_run_config(in);
}

/// Serializes the encoder architecture as key = value text (stored in checkpoints).
inline std::string encoder_config_text(const EncoderConfig& c) {
    std::ostringstream os;
    os << "layers = " << c.layers << "\n"
       << "hidden_size = " << c.hidden << "\n"
       << "intermediate_size = " << c.intermediate << "\n"
       << "heads = " << c.heads << "\n"
       << "embedding_size = " << c.embed_size << "\n"
       << "vocab_size = " << c.vocab << "\n"
       << "max_seq_len = " << c.max_len << "\n"
       << "kernel_half_width = " << c.k << "\n"
       << "conv_kernel_half_width = " << c.conv_k << "\n"
       << "use_absolute_positions = " << (c.use_absolute_positions ? "true" : "false") << "\n"
       << "use_fixed_lightweight = " << (c.attention.use_fixed_lightweight ? "true" : "false")
       << "\n"
       << "use_query_dynamic = " << (c.attention.use_query_dynamic ? "true" : "false") << "\n"
       << "use_key_dynamic = " << (c.attention.use_key_dynamic ? "true" : "false") << "\n"
       << "use_depthwise_bias = " << (c.attention.use_depthwise_bias ? "true" : "false") << "\n"
       << "conv_query = " << (c.attention.conv_query ? "true" : "false") << "\n"
       << "conv_key = " << (c.attention.conv_key ? "true" : "false") << "\n"
       << "conv_value = " << (c.attention.conv_value ? "true" : "false") << "\n"
       << "dropout = " << c.dropout << "\n"
       << "attention_dropout = " << c.attention_dropout << "\n"
       << "seed = " << c.seed << "\n";
    return os.str();
}

inline EncoderConfig parse_encoder_config(const std::string& text) {
    std::istringstream is(text);
    return parse_run_config(is).model;
}

}  // namespace convatt
