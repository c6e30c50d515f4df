#pragma once

#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "convatt/checkpoint.hpp"
#include "convatt/data.hpp"
#include "convatt/encoder.hpp"
#include "convatt/optimizer.hpp"
#include "convatt/runconfig.hpp"

namespace convatt {

inline std::string serialize_rng(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

inline std::mt19937_64 deserialize_rng(const std::string& state) {
    std::mt19937_64 rng;
    if (!state.empty()) {
        std::istringstream is(state);
        is >> rng;
    }
    return rng;
}

/// Hook invoked after each optimizer step with (step, lr, mean loss).
using StepCallback = std::function<void(uint64_t, double, double)>;
/// Hook invoked with an interval snapshot when checkpoint_interval > 0.
using CheckpointSink = std::function<void(const Checkpoint&)>;

/// Runs the MLM training loop on pre-loaded corpus lines. Fully deterministic for
/// a given config: one RNG stream drives batch sampling, masking and dropout.
inline Checkpoint train(RunConfig rc, const std::vector<std::string>& corpus_lines,
                        std::ostream* metrics = nullptr,
                        const StepCallback& on_step = nullptr,
                        const CheckpointSink& on_checkpoint = nullptr) {
    if (rc.model.vocab < kNumSpecials + 1)
        throw config_error("train: vocab_size must exceed the special tokens");
    Vocab vocab = build_vocab(corpus_lines, rc.model.vocab);
    rc.model.vocab = vocab.size();
    rc.model.validate();
    if (rc.warmup_steps > rc.steps)
        throw config_error("train: warmup_steps exceeds total steps");

    ParamStore params = init_params(rc.model, rc.model.seed);
    TrainState state = TrainState::init(params, rc.warmup_steps, rc.steps, rc.learning_rate);
    std::mt19937_64 rng(rc.model.seed);
    std::uniform_int_distribution<size_t> pick_line(0, corpus_lines.size() - 1);

    if (metrics) *metrics << std::setprecision(17);
    while (state.step < rc.steps) {
        std::vector<std::string> batch_lines(rc.batch_size);
        for (auto& line : batch_lines) line = corpus_lines[pick_line(rng)];
        Batch batch = encode_batch(batch_lines, vocab, rc.model.max_len);
        MaskedBatch masked = apply_mlm_mask(batch, vocab.size(), rc.mask_prob, rng);

        Tape tape;
        BoundParams bound = BoundParams::bind(tape, params);
        std::optional<Var> total_loss;
        int counted = 0;
        for (int s = 0; s < rc.batch_size; ++s) {
            bool any = false;
            for (uint8_t sel : masked.selected[s]) any |= (sel != 0);
            if (!any) continue;  // no masked positions, nothing to learn from
            Var hidden = encoder_forward(tape, masked.ids[s], batch.mask[s], rc.model, bound,
                                         /*training=*/true, &rng);
            Var logits = mlm_logits(tape, hidden, bound);
            Var loss = tape.cross_entropy(logits, masked.targets[s], masked.selected[s]);
            total_loss = total_loss ? tape.add(*total_loss, loss) : loss;
            ++counted;
        }
        if (!counted) continue;  // whole batch selected zero positions
        Var mean_loss = tape.scale(*total_loss, 1.0 / counted);
        tape.backward(mean_loss);

        std::vector<Tensor> grads;
        grads.reserve(bound.order.size());
        for (const auto& name : bound.order) grads.push_back(tape.grad_tensor(bound(name)));

        double lr = lr_schedule(state.step + 1, rc.warmup_steps, rc.steps, rc.learning_rate);
        adam_step(params, grads, state, rc.adam, lr);

        double loss_value = tape.value(mean_loss).data[0];
        if (on_step) on_step(state.step, lr, loss_value);
        if (metrics && rc.log_interval > 0 &&
            (state.step % rc.log_interval == 0 || state.step == rc.steps))
            *metrics << state.step << "\t" << lr << "\t" << loss_value << "\n";
        if (on_checkpoint && rc.checkpoint_interval > 0 &&
            state.step % rc.checkpoint_interval == 0 && state.step < rc.steps) {
            TrainState snapshot = state;
            snapshot.rng_state = serialize_rng(rng);
            on_checkpoint(Checkpoint{rc.model, vocab, params, std::move(snapshot)});
        }
    }

    state.rng_state = serialize_rng(rng);
    return Checkpoint{rc.model, std::move(vocab), std::move(params), std::move(state)};
}

struct EvalResult {
    double masked_accuracy = 0.0;
    double mean_loss = 0.0;
    long long positions = 0;
};

/// Deterministic masked-token evaluation with a fixed masking seed.
inline EvalResult evaluate(const Checkpoint& ck, const std::vector<std::string>& lines,
                           uint64_t mask_seed, double mask_prob = 0.15) {
    Batch batch = encode_batch(lines, ck.vocab, ck.config.max_len);
    std::mt19937_64 rng(mask_seed);
    MaskedBatch masked = apply_mlm_mask(batch, ck.vocab.size(), mask_prob, rng);

    EvalResult r;
    double loss_sum = 0.0;
    int loss_count = 0;
    long long correct = 0;
    for (size_t s = 0; s < batch.ids.size(); ++s) {
        bool any = false;
        for (uint8_t sel : masked.selected[s]) any |= (sel != 0);
        if (!any) continue;
        Tape tape;
        BoundParams bound = BoundParams::bind(tape, ck.params);
        Var hidden = encoder_forward(tape, masked.ids[s], batch.mask[s], ck.config, bound);
        Var logits = mlm_logits(tape, hidden, bound);
        Var loss = tape.cross_entropy(logits, masked.targets[s], masked.selected[s]);
        loss_sum += tape.value(loss).data[0];
        ++loss_count;
        const Tensor& L = tape.value(logits);
        for (size_t i = 0; i < masked.selected[s].size(); ++i) {
            if (!masked.selected[s][i]) continue;
            int best = 0;
            for (int j = 1; j < L.shape[1]; ++j)
                if (L.at(static_cast<int>(i), j) > L.at(static_cast<int>(i), best)) best = j;
            correct += (best == masked.targets[s][i]) ? 1 : 0;
            ++r.positions;
        }
    }
    if (loss_count == 0) throw input_error("evaluate: no masked positions in dataset");
    r.mean_loss = loss_sum / loss_count;
    r.masked_accuracy = static_cast<double>(correct) / static_cast<double>(r.positions);
    return r;
}

}  // namespace convatt
