#include <gtest/gtest.h>

#include <sstream>

#include "convatt/synthetic.hpp"
#include "convatt/trainer.hpp"
#include "oracles.hpp"

using convatt::Batch;
using convatt::ParamStore;
using convatt::RunConfig;
using convatt::Tensor;
using convatt::Vocab;

namespace {

RunConfig tiny_run() {
    RunConfig rc;
    rc.model.layers = 1;
    rc.model.hidden = 8;
    rc.model.intermediate = 16;
    rc.model.heads = 2;
    rc.model.embed_size = 8;
    rc.model.vocab = 40;
    rc.model.max_len = 12;
    rc.model.k = 2;
    rc.model.attention.use_fixed_lightweight = true;
    rc.model.attention.use_query_dynamic = true;
    rc.model.seed = 17;
    rc.steps = 5;
    rc.warmup_steps = 2;
    rc.batch_size = 4;
    rc.learning_rate = 1e-3;
    rc.log_interval = 1;
    return rc;
}

std::vector<std::string> tiny_corpus() {
    return {"the cat sat on the mat", "a dog ran after the cat", "the mat was red",
            "a red dog sat", "cats and dogs ran"};
}

}  // namespace

TEST(Tokenizer, LowercasesAndSplitsOnWhitespace) {
    auto toks = convatt::tokenize_line("  The QUICK\tbrown \n Fox ");
    EXPECT_EQ(toks, (std::vector<std::string>{"the", "quick", "brown", "fox"}));
    EXPECT_TRUE(convatt::tokenize_line("   ").empty());
}

TEST(BuildVocab, FrequencyRankWithLexicographicTies) {
    Vocab v = convatt::build_vocab({"b b b", "a a", "c c", "d"}, 100);
    EXPECT_EQ(v.id_to_token[0], "[PAD]");
    EXPECT_EQ(v.id_to_token[4], "[MASK]");
    EXPECT_EQ(v.id_to_token[5], "b");   // freq 3
    EXPECT_EQ(v.id_to_token[6], "a");   // freq 2, before c
    EXPECT_EQ(v.id_to_token[7], "c");
    EXPECT_EQ(v.id_to_token[8], "d");
    EXPECT_EQ(v.id("b"), 5);
    EXPECT_EQ(v.id("missing"), convatt::UNK);
}

TEST(BuildVocab, CapCountsSpecials) {
    Vocab v = convatt::build_vocab({"b b b a a c"}, 7);
    EXPECT_EQ(v.size(), 7);  // 5 specials + b + a, c dropped
    EXPECT_EQ(v.id("c"), convatt::UNK);
}

TEST(BuildVocab, Deterministic) {
    auto lines = tiny_corpus();
    Vocab a = convatt::build_vocab(lines, 20), b = convatt::build_vocab(lines, 20);
    EXPECT_EQ(a.id_to_token, b.id_to_token);
}

TEST(BuildVocab, RejectsEmptyCorpusAndTinyCap) {
    EXPECT_THROW(convatt::build_vocab({"", "   "}, 100), convatt::input_error);
    EXPECT_THROW(convatt::build_vocab({"a"}, 5), convatt::config_error);
}

TEST(EncodeBatch, WrapsWithClsSepAndPads) {
    Vocab v = convatt::build_vocab({"a b"}, 10);
    Batch b = convatt::encode_batch({"a b", "", "a unknown"}, v, 6);
    int a_id = v.id("a"), b_id = v.id("b");
    EXPECT_EQ(b.ids[0], (std::vector<int>{convatt::CLS, a_id, b_id, convatt::SEP, 0, 0}));
    EXPECT_EQ(b.mask[0], (std::vector<uint8_t>{1, 1, 1, 1, 0, 0}));
    EXPECT_EQ(b.ids[1], (std::vector<int>{convatt::CLS, convatt::SEP, 0, 0, 0, 0}));
    EXPECT_EQ(b.ids[2][2], convatt::UNK);
}

TEST(EncodeBatch, TruncatesLongLinesKeepingSep) {
    Vocab v = convatt::build_vocab({"a b c d e f"}, 20);
    Batch b = convatt::encode_batch({"a b c d e f"}, v, 4);
    EXPECT_EQ(b.ids[0].size(), 4u);
    EXPECT_EQ(b.ids[0][0], convatt::CLS);
    EXPECT_EQ(b.ids[0][3], convatt::SEP);
    for (uint8_t m : b.mask[0]) EXPECT_EQ(m, 1);
}

TEST(MlmMask, ZeroProbabilityIsIdentity) {
    Vocab v = convatt::build_vocab(tiny_corpus(), 40);
    Batch b = convatt::encode_batch(tiny_corpus(), v, 10);
    std::mt19937_64 rng(1);
    auto masked = convatt::apply_mlm_mask(b, v.size(), 0.0, rng);
    for (size_t s = 0; s < b.ids.size(); ++s) {
        EXPECT_EQ(masked.ids[s], b.ids[s]);
        for (uint8_t sel : masked.selected[s]) EXPECT_EQ(sel, 0);
    }
}

TEST(MlmMask, CorruptionSplitIsEightyTenTen) {
    // one long batch of ordinary tokens, p = 1 so every position is selected
    int vocab_size = 1005;
    Batch b;
    int n = 20000;
    std::vector<int> seq(n, convatt::kNumSpecials + 7);
    b.ids.push_back(seq);
    b.mask.emplace_back(n, 1);
    std::mt19937_64 rng(2);
    auto masked = convatt::apply_mlm_mask(b, vocab_size, 1.0, rng);
    int n_mask = 0, n_keep = 0, n_random = 0;
    for (int i = 0; i < n; ++i) {
        ASSERT_TRUE(masked.selected[0][i]);
        EXPECT_EQ(masked.targets[0][i], seq[i]);
        int c = masked.ids[0][i];
        ASSERT_GE(c, convatt::kNumSpecials == 5 && c == convatt::MASK ? 0 : 5);
        if (c == convatt::MASK)
            ++n_mask;
        else if (c == seq[i])
            ++n_keep;
        else
            ++n_random;
    }
    EXPECT_NEAR(n_mask / double(n), 0.80, 0.03);
    EXPECT_NEAR(n_keep / double(n), 0.10, 0.03);
    EXPECT_NEAR(n_random / double(n), 0.10, 0.03);
}

TEST(MlmMask, SelectionRateMatchesProbability) {
    Batch b;
    int n = 20000;
    b.ids.emplace_back(n, 10);
    b.mask.emplace_back(n, 1);
    std::mt19937_64 rng(3);
    auto masked = convatt::apply_mlm_mask(b, 40, 0.15, rng);
    long long sel = 0;
    for (uint8_t s : masked.selected[0]) sel += s;
    EXPECT_NEAR(sel / double(n), 0.15, 0.02);
}

TEST(MlmMask, NeverTouchesStructuralTokens) {
    Batch b;
    b.ids.push_back({convatt::CLS, 8, convatt::PAD, convatt::SEP, 9});
    b.mask.push_back({1, 1, 0, 1, 1});
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        auto masked = convatt::apply_mlm_mask(b, 40, 1.0, rng);
        EXPECT_EQ(masked.ids[0][0], convatt::CLS);
        EXPECT_EQ(masked.ids[0][2], convatt::PAD);
        EXPECT_EQ(masked.ids[0][3], convatt::SEP);
        EXPECT_EQ(masked.selected[0][0], 0);
        EXPECT_EQ(masked.selected[0][2], 0);
        EXPECT_EQ(masked.selected[0][3], 0);
        EXPECT_GE(masked.ids[0][1], convatt::MASK);  // MASK or a non-special id
        EXPECT_GE(masked.ids[0][4], convatt::MASK);
    }
}

TEST(MlmMask, SeedDeterminism) {
    Vocab v = convatt::build_vocab(tiny_corpus(), 40);
    Batch b = convatt::encode_batch(tiny_corpus(), v, 10);
    std::mt19937_64 r1(9), r2(9);
    auto m1 = convatt::apply_mlm_mask(b, v.size(), 0.5, r1);
    auto m2 = convatt::apply_mlm_mask(b, v.size(), 0.5, r2);
    EXPECT_EQ(m1.ids, m2.ids);
    EXPECT_EQ(m1.targets, m2.targets);
}

TEST(LrSchedule, LinearWarmupThenLinearDecay) {
    EXPECT_DOUBLE_EQ(convatt::lr_schedule(0, 10, 100, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(convatt::lr_schedule(5, 10, 100, 1.0), 0.5);
    EXPECT_DOUBLE_EQ(convatt::lr_schedule(10, 10, 100, 1.0), 1.0);
    EXPECT_DOUBLE_EQ(convatt::lr_schedule(55, 10, 100, 1.0), 0.5);
    EXPECT_DOUBLE_EQ(convatt::lr_schedule(100, 10, 100, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(convatt::lr_schedule(3, 5, 5, 2.0), 1.2);  // all-warmup run
    EXPECT_THROW(convatt::lr_schedule(0, 10, 5, 1.0), convatt::config_error);
}

TEST(Adam, ZeroGradientsWithoutDecayLeaveParamsAlone) {
    ParamStore p;
    p.add("w", Tensor({2, 2}, {1, 2, 3, 4}));
    auto state = convatt::TrainState::init(p, 0, 10, 1.0);
    convatt::AdamConfig cfg;
    cfg.weight_decay = 0.0;
    convatt::adam_step(p, {Tensor({2, 2})}, state, cfg, 0.1);
    EXPECT_EQ(p.get("w").data, (std::vector<double>{1, 2, 3, 4}));
    EXPECT_EQ(state.step, 1u);
}

TEST(Adam, FirstStepMovesByRoughlyTheLearningRate) {
    ParamStore p;
    p.add("w", Tensor({1, 1}, {0.0}));
    auto state = convatt::TrainState::init(p, 0, 10, 1.0);
    convatt::AdamConfig cfg;
    cfg.weight_decay = 0.0;
    convatt::adam_step(p, {Tensor({1, 1}, {3.0})}, state, cfg, 0.01);
    // bias-corrected mhat/sqrt(vhat) = g/|g| = 1 up to eps
    EXPECT_NEAR(p.get("w").data[0], -0.01, 1e-7);
}

TEST(Adam, DecayIsDecoupledAndSkipsVectors) {
    ParamStore p;
    p.add("w", Tensor({1, 1}, {2.0}));
    p.add("b", Tensor({1}, {2.0}));
    auto state = convatt::TrainState::init(p, 0, 10, 1.0);
    convatt::AdamConfig cfg;  // weight_decay = 0.01
    convatt::adam_step(p, {Tensor({1, 1}), Tensor({1})}, state, cfg, 0.5);
    EXPECT_DOUBLE_EQ(p.get("w").data[0], 2.0 * (1.0 - 0.5 * 0.01));
    EXPECT_DOUBLE_EQ(p.get("b").data[0], 2.0);
}

TEST(Adam, GradientCountMismatchRejected) {
    ParamStore p;
    p.add("w", Tensor({1}));
    auto state = convatt::TrainState::init(p, 0, 10, 1.0);
    convatt::AdamConfig cfg;
    EXPECT_THROW(convatt::adam_step(p, {}, state, cfg, 0.1), convatt::dimension_error);
}

TEST(RunConfigParse, ReadsKeysAndComments) {
    std::istringstream in(
        "layers = 3  # depth\n"
        "\n"
        "# full line comment\n"
        "use_query_dynamic = true\n"
        "learning_rate = 5e-4\n"
        "steps = 123\n");
    RunConfig rc = convatt::parse_run_config(in);
    EXPECT_EQ(rc.model.layers, 3);
    EXPECT_TRUE(rc.model.attention.use_query_dynamic);
    EXPECT_DOUBLE_EQ(rc.learning_rate, 5e-4);
    EXPECT_EQ(rc.steps, 123u);
    EXPECT_EQ(rc.batch_size, 16);  // untouched default
}

TEST(RunConfigParse, RejectsUnknownKeysAndBadValues) {
    std::istringstream bad_key("not_a_key = 1\n");
    EXPECT_THROW(convatt::parse_run_config(bad_key), convatt::config_error);
    std::istringstream bad_value("layers = many\n");
    EXPECT_THROW(convatt::parse_run_config(bad_value), convatt::config_error);
    std::istringstream bad_line("layers 3\n");
    EXPECT_THROW(convatt::parse_run_config(bad_line), convatt::config_error);
}

TEST(RunConfigParse, EncoderConfigTextRoundTrips) {
    convatt::EncoderConfig c = convatt::bert_small_config();
    c.attention.use_fixed_lightweight = true;
    c.attention.conv_value = true;
    c.seed = 99;
    convatt::EncoderConfig back = convatt::parse_encoder_config(convatt::encoder_config_text(c));
    EXPECT_EQ(convatt::encoder_config_text(back), convatt::encoder_config_text(c));
}

TEST(Synthetic, DeterministicAndWellFormed) {
    auto a = convatt::gen_synthetic(convatt::SyntheticKind::CopyPrev, 30, 8, 5, 7);
    auto b = convatt::gen_synthetic(convatt::SyntheticKind::CopyPrev, 30, 8, 5, 7);
    EXPECT_EQ(a, b);
    ASSERT_EQ(a.size(), 5u);
    for (const auto& line : a) EXPECT_EQ(convatt::tokenize_line(line).size(), 8u);
    // successor structure: each token id is the previous plus one, modulo the vocab
    auto toks = convatt::tokenize_line(a[0]);
    int prev = std::stoi(toks[0].substr(1));
    for (size_t i = 1; i < toks.size(); ++i) {
        int cur = std::stoi(toks[i].substr(1));
        EXPECT_EQ(cur, (prev + 1) % 30);
        prev = cur;
    }
}

TEST(Train, DeterministicAcrossRuns) {
    RunConfig rc = tiny_run();
    auto lines = tiny_corpus();
    std::ostringstream m1, m2;
    convatt::Checkpoint c1 = convatt::train(rc, lines, &m1);
    convatt::Checkpoint c2 = convatt::train(rc, lines, &m2);
    EXPECT_EQ(m1.str(), m2.str());
    ASSERT_EQ(c1.params.items.size(), c2.params.items.size());
    for (size_t i = 0; i < c1.params.items.size(); ++i)
        EXPECT_EQ(c1.params.items[i].second.data, c2.params.items[i].second.data)
            << c1.params.items[i].first;
    EXPECT_EQ(c1.state->rng_state, c2.state->rng_state);
    EXPECT_EQ(c1.state->step, rc.steps);
}

TEST(Train, SeedChangesTrajectory) {
    RunConfig rc = tiny_run();
    auto lines = tiny_corpus();
    std::ostringstream m1, m2;
    convatt::train(rc, lines, &m1);
    rc.model.seed = 18;
    convatt::train(rc, lines, &m2);
    EXPECT_NE(m1.str(), m2.str());
}

TEST(Train, ZeroStepsReturnsInitialization) {
    RunConfig rc = tiny_run();
    rc.steps = 0;
    rc.warmup_steps = 0;
    convatt::Checkpoint ck = convatt::train(rc, tiny_corpus());
    // the trained vocab defines the actual model size
    convatt::EncoderConfig cfg = rc.model;
    cfg.vocab = ck.vocab.size();
    ParamStore fresh = convatt::init_params(cfg, rc.model.seed);
    ASSERT_EQ(ck.params.items.size(), fresh.items.size());
    for (size_t i = 0; i < fresh.items.size(); ++i)
        EXPECT_EQ(ck.params.items[i].second.data, fresh.items[i].second.data);
}

TEST(Train, WarmupBeyondStepsRejected) {
    RunConfig rc = tiny_run();
    rc.warmup_steps = rc.steps + 1;
    EXPECT_THROW(convatt::train(rc, tiny_corpus()), convatt::config_error);
}

TEST(Train, IntervalSnapshotsAreDelivered) {
    RunConfig rc = tiny_run();
    rc.steps = 6;
    rc.checkpoint_interval = 2;
    std::vector<uint64_t> seen;
    convatt::train(rc, tiny_corpus(), nullptr, nullptr,
                   [&](const convatt::Checkpoint& ck) { seen.push_back(ck.state->step); });
    EXPECT_EQ(seen, (std::vector<uint64_t>{2, 4}));
}

TEST(Train, LossDecreasesOnTinySyntheticTask) {
    RunConfig rc = tiny_run();
    rc.model.dropout = 0.0;
    rc.model.attention_dropout = 0.0;
    rc.steps = 150;
    rc.warmup_steps = 15;
    rc.learning_rate = 3e-3;
    rc.log_interval = 0;
    auto lines = convatt::gen_synthetic(convatt::SyntheticKind::CopyPrev, 20, 8, 64, 5);
    std::vector<double> losses;
    convatt::train(rc, lines, nullptr,
                   [&](uint64_t, double, double loss) { losses.push_back(loss); });
    ASSERT_EQ(losses.size(), rc.steps);
    auto mean = [&](size_t from, size_t to) {
        double s = 0;
        for (size_t i = from; i < to; ++i) s += losses[i];
        return s / (to - from);
    };
    EXPECT_LT(mean(losses.size() - 10, losses.size()), mean(0, 10));
}

TEST(Evaluate, DeterministicAndBounded) {
    RunConfig rc = tiny_run();
    auto lines = tiny_corpus();
    convatt::Checkpoint ck = convatt::train(rc, lines);
    convatt::EvalResult a = convatt::evaluate(ck, lines, 123, 0.3);
    convatt::EvalResult b = convatt::evaluate(ck, lines, 123, 0.3);
    EXPECT_EQ(a.masked_accuracy, b.masked_accuracy);
    EXPECT_EQ(a.mean_loss, b.mean_loss);
    EXPECT_EQ(a.positions, b.positions);
    EXPECT_GE(a.masked_accuracy, 0.0);
    EXPECT_LE(a.masked_accuracy, 1.0);
    EXPECT_GT(a.positions, 0);
    EXPECT_TRUE(std::isfinite(a.mean_loss));
}
