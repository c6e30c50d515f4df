// Command-line entry point: training, evaluation, synthetic-task generation, and
// CSV exporters for attention maps and learned convolution kernels.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "convatt/checkpoint.hpp"
#include "convatt/export_csv.hpp"
#include "convatt/synthetic.hpp"
#include "convatt/trainer.hpp"

namespace fs = std::filesystem;

namespace {

void cmd_train(const std::string& config_path, const std::string& out_dir, long long seed) {
    convatt::RunConfig rc = convatt::load_run_config(config_path);
    if (seed >= 0) rc.model.seed = static_cast<uint64_t>(seed);
    if (rc.corpus.empty()) throw convatt::config_error("config is missing a corpus path");
    auto lines = convatt::read_lines(rc.corpus);

    fs::create_directories(out_dir);
    std::ofstream metrics(fs::path(out_dir) / "metrics.tsv");
    if (!metrics) throw convatt::input_error("cannot write metrics in " + out_dir);

    std::string ckpt_path = (fs::path(out_dir) / "model.ckpt").string();
    auto save_interval = [&](const convatt::Checkpoint& snap) {
        std::string tagged =
            (fs::path(out_dir) / ("model-step" + std::to_string(snap.state->step) + ".ckpt"))
                .string();
        convatt::save_checkpoint(tagged, snap);
    };
    convatt::Checkpoint ck = convatt::train(rc, lines, &metrics, nullptr, save_interval);
    convatt::save_checkpoint(ckpt_path, ck);
    std::cout << "trained " << ck.state->step << " steps, checkpoint: " << ckpt_path << "\n";
}

void cmd_eval(const std::string& ckpt_path, const std::string& data_path, uint64_t seed,
              double mask_prob) {
    convatt::Checkpoint ck = convatt::load_checkpoint(ckpt_path);
    auto lines = convatt::read_lines(data_path);
    convatt::EvalResult r = convatt::evaluate(ck, lines, seed, mask_prob);
    std::cout << std::setprecision(17) << "masked_accuracy\t" << r.masked_accuracy << "\n"
              << "mean_loss\t" << r.mean_loss << "\n"
              << "positions\t" << r.positions << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"convolution-augmented self-attention encoder toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_path, ckpt_path, data_path, sentence, kind = "copy-prev",
                                                                       param = "fixed";
    long long seed_override = -1;
    uint64_t seed = 0;
    double mask_prob = 0.15;
    int vocab = 50, seq_len = 16, count = 1000, layer = 0, head = 0;
    bool sort_by_argmax = false;

    auto* train = app.add_subcommand("train", "train a model from a run config");
    train->add_option("--config", config_path, "run config file")->required();
    train->add_option("--out", out_path, "output directory")->required();
    train->add_option("--seed", seed_override, "override the config seed");

    auto* eval = app.add_subcommand("eval", "masked-token accuracy and loss on a dataset");
    eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    eval->add_option("--data", data_path, "dataset in corpus format")->required();
    eval->add_option("--seed", seed, "evaluation masking seed");
    eval->add_option("--mask-prob", mask_prob, "evaluation mask proportion");

    auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic position-probe corpus");
    gen->add_option("--kind", kind, "copy-prev | copy-next | direction-mixed");
    gen->add_option("--vocab", vocab, "content vocabulary size");
    gen->add_option("--len", seq_len, "sequence length");
    gen->add_option("--n", count, "number of sequences");
    gen->add_option("--seed", seed, "generator seed");
    gen->add_option("--out", out_path, "output corpus file")->required();

    auto* ek = app.add_subcommand("export-kernels", "export learned kernel weights as CSV");
    ek->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    ek->add_option("--layer", layer, "layer index");
    ek->add_option("--param", param, "fixed | depthwise");
    ek->add_flag("--sort-by-argmax", sort_by_argmax, "group rows by peak offset");
    ek->add_option("--out", out_path, "output CSV file")->required();

    auto* ea = app.add_subcommand("export-attention", "export a post-softmax attention map");
    ea->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    ea->add_option("--sentence", sentence, "input sentence")->required();
    ea->add_option("--layer", layer, "layer index");
    ea->add_option("--head", head, "head index");
    ea->add_option("--out", out_path, "output CSV file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (train->parsed()) {
            cmd_train(config_path, out_path, seed_override);
        } else if (eval->parsed()) {
            cmd_eval(ckpt_path, data_path, seed, mask_prob);
        } else if (gen->parsed()) {
            auto lines = convatt::gen_synthetic(convatt::parse_synthetic_kind(kind), vocab,
                                                seq_len, count, seed);
            std::ofstream os(out_path);
            if (!os) throw convatt::input_error("cannot write " + out_path);
            for (const auto& line : lines) os << line << "\n";
            std::cout << "wrote " << lines.size() << " sequences to " << out_path << "\n";
        } else if (ek->parsed()) {
            convatt::Checkpoint ck = convatt::load_checkpoint(ckpt_path);
            std::ofstream os(out_path);
            if (!os) throw convatt::input_error("cannot write " + out_path);
            convatt::export_kernel_weights(ck, layer, convatt::parse_kernel_kind(param),
                                           sort_by_argmax, os);
        } else if (ea->parsed()) {
            convatt::Checkpoint ck = convatt::load_checkpoint(ckpt_path);
            std::ofstream os(out_path);
            if (!os) throw convatt::input_error("cannot write " + out_path);
            convatt::export_attention_map(ck, sentence, layer, head, os);
        }
    } catch (const convatt::input_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const convatt::config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
