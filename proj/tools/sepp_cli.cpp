// Command-line front end for the semantic-positive-pair pipeline. Each
// subcommand runs one stage against file artifacts so stages can be chained,
// re-run, or swapped out; `run-all` executes the whole sequence.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sepp/pipeline.hpp"

namespace {

/// Options shared by the config-driven subcommands. Every flag mirrors a
/// PipelineConfig field and, when present, overrides the config file value.
struct ConfigFlags {
    CLI::App* cmd = nullptr;
    std::string config_path;
    std::string out_dir;
    std::string dataset_kind;
    std::string data_path;
    std::string labels_path;
    std::size_t classes = 0;
    std::size_t per_class = 0;
    std::size_t dim = 0;
    std::size_t limit = 0;
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
    std::size_t batch_size = 0;
    std::size_t bootstrap_epochs = 0;
    std::size_t mine_k = 0;
    double mine_min = 0.0;
    double mine_max = 0.0;
    bool no_mining = false;
    double lambda = 0.0;
    std::string lambda_mode;
    double temperature = 0.0;
    bool asymmetric = false;
    std::string spps_mode;
    std::size_t random_add = 0;
    std::size_t probe_epochs = 0;
    std::size_t train_per_class = 0;
    bool deterministic_timing = false;

    void attach(CLI::App* c) {
        cmd = c;
        c->add_option("--config", config_path, "INI config file (flags override it)");
        c->add_option("--out-dir", out_dir, "output directory for this run's artifacts");
        c->add_option("--dataset", dataset_kind, "dataset kind: blobs | cifar | idx")
            ->check(CLI::IsMember({"blobs", "cifar", "idx"}));
        c->add_option("--data-path", data_path, "dataset file (cifar binary or idx images)");
        c->add_option("--labels-path", labels_path, "idx labels file");
        c->add_option("--classes", classes, "synthetic dataset: number of classes");
        c->add_option("--per-class", per_class, "synthetic dataset: items per class");
        c->add_option("--input-dim", dim, "synthetic dataset: vector dimension");
        c->add_option("--limit", limit, "use only the first N dataset items");
        c->add_option("--seed", seed, "master run seed");
        c->add_option("--epochs", epochs, "contrastive training epochs");
        c->add_option("--batch-size", batch_size, "contrastive batch size");
        c->add_option("--bootstrap-epochs", bootstrap_epochs,
                      "reference-encoder pretraining epochs");
        c->add_option("--k", mine_k, "miner K-size (0 = whole dataset)");
        c->add_option("--min", mine_min, "miner lower cosine threshold");
        c->add_option("--max", mine_max, "miner upper cosine threshold");
        c->add_flag("--no-mining", no_mining, "skip mining (vanilla training)");
        c->add_option("--lambda", lambda, "semantic term weight in [0,1]");
        c->add_option("--lambda-mode", lambda_mode, "constant | off")
            ->check(CLI::IsMember({"constant", "off"}));
        c->add_option("--temperature", temperature, "softmax temperature");
        c->add_flag("--asymmetric-loss", asymmetric,
                    "use the one-directional instance term");
        c->add_option("--spps-mode", spps_mode,
                      "mined-pair handling: weighted | merged")
            ->check(CLI::IsMember({"weighted", "merged"}));
        c->add_option("--random-add", random_add,
                      "duplicate N random images into the training stream");
        c->add_option("--probe-epochs", probe_epochs, "linear probe epochs");
        c->add_option("--train-per-class", train_per_class,
                      "probe training items per class (0 = all)");
        c->add_flag("--deterministic-timing", deterministic_timing,
                    "write wall_time_s as 0 for byte-reproducible outputs");
    }

    sepp::PipelineConfig resolve() const {
        sepp::PipelineConfig cfg;
        if (!config_path.empty()) {
            cfg = sepp::parse_pipeline_config(sepp::KvConfig::parse_file(config_path));
        }
        auto set = [&](const char* flag, auto fn) {
            if (cmd->count(flag) > 0) {
                fn();
            }
        };
        set("--out-dir", [&] { cfg.output_dir = out_dir; });
        set("--dataset", [&] {
            cfg.dataset.kind = dataset_kind == "blobs"   ? sepp::DatasetKind::Blobs
                               : dataset_kind == "cifar" ? sepp::DatasetKind::Cifar
                                                         : sepp::DatasetKind::Idx;
        });
        set("--data-path", [&] { cfg.dataset.path = data_path; });
        set("--labels-path", [&] { cfg.dataset.labels_path = labels_path; });
        set("--classes", [&] { cfg.dataset.classes = classes; });
        set("--per-class", [&] { cfg.dataset.per_class = per_class; });
        set("--input-dim", [&] { cfg.dataset.dim = dim; });
        set("--limit", [&] { cfg.dataset.limit = limit; });
        set("--seed", [&] { cfg.seed = seed; });
        set("--epochs", [&] { cfg.epochs = epochs; });
        set("--batch-size", [&] { cfg.batch_size = batch_size; });
        set("--bootstrap-epochs", [&] { cfg.bootstrap_epochs = bootstrap_epochs; });
        set("--k", [&] { cfg.miner.k = mine_k; });
        set("--min", [&] { cfg.miner.min_threshold = mine_min; });
        set("--max", [&] { cfg.miner.max_threshold = mine_max; });
        set("--no-mining", [&] { cfg.mining_enabled = false; });
        set("--lambda", [&] { cfg.loss.lambda_value = lambda; });
        set("--lambda-mode", [&] {
            cfg.loss.lambda_mode = lambda_mode == "off" ? sepp::LambdaMode::Off
                                                        : sepp::LambdaMode::Constant;
        });
        set("--temperature", [&] { cfg.loss.temperature = temperature; });
        set("--asymmetric-loss", [&] { cfg.loss.symmetric = false; });
        set("--spps-mode", [&] {
            cfg.spps_mode = spps_mode == "merged" ? sepp::SppsMode::Merged
                                                  : sepp::SppsMode::Weighted;
        });
        set("--random-add", [&] { cfg.random_add_count = random_add; });
        set("--probe-epochs", [&] { cfg.eval.probe_epochs = probe_epochs; });
        set("--train-per-class", [&] { cfg.eval.train_per_class = train_per_class; });
        set("--deterministic-timing", [&] { cfg.record_wall_time = false; });

        // SEPP_OUTPUT_ROOT relocates relative output directories.
        if (const char* root = std::getenv("SEPP_OUTPUT_ROOT")) {
            const std::filesystem::path dir(cfg.output_dir);
            if (*root != '\0' && dir.is_relative()) {
                cfg.output_dir = (std::filesystem::path(root) / dir).string();
            }
        }
        cfg.validate();
        return cfg;
    }
};

std::string join_path(const std::string& dir, const char* name) {
    return (std::filesystem::path(dir) / name).string();
}

/// Build an encoder sized for the dataset and fill it from a weights file.
sepp::Encoder<float> encoder_from_file(const sepp::PipelineConfig& cfg,
                                       const std::vector<sepp::ImageRecord>& images,
                                       const std::string& weights_path) {
    sepp::EncoderConfig enc_cfg = cfg.encoder;
    sepp::resolve_encoder_input(enc_cfg, images);
    sepp::Encoder<float> enc = sepp::Encoder<float>::init(enc_cfg, 0);
    sepp::load_parameters(weights_path, enc.params);
    return enc;
}

void write_mine_report(const std::string& path, const sepp::MiningReport& report,
                       bool record_wall_time) {
    sepp::AblationRow row;
    row.k = report.k_used;
    row.pair_count = report.pair_count;
    row.wall_time_s = record_wall_time ? report.wall_time_seconds : 0.0;
    row.sim_evals = report.similarity_evaluations;
    sepp::write_text_file(path, sepp::ablation_csv({row}));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"semantic positive pair mining and contrastive training"};
    app.require_subcommand(1);

    // ---- bootstrap ----
    auto* cmd_bootstrap =
        app.add_subcommand("bootstrap", "pretrain the reference encoder (vanilla)");
    ConfigFlags fl_bootstrap;
    fl_bootstrap.attach(cmd_bootstrap);
    cmd_bootstrap->callback([&] {
        sepp::PipelineConfig cfg = fl_bootstrap.resolve();
        std::filesystem::create_directories(cfg.output_dir);
        sepp::LoadedDataset data = sepp::load_dataset(cfg.dataset, cfg.seed);
        sepp::MetricsLog log;
        sepp::SemanticPairSet no_pairs;
        sepp::Encoder<float> enc = sepp::train_encoder<float>(
            cfg, data.images, no_pairs, log, "bootstrap",
            sepp::rng::mix(cfg.seed, sepp::seeds::kBootstrapInit),
            sepp::rng::mix(cfg.seed, sepp::seeds::kBootstrapEpochs), cfg.bootstrap_epochs);
        sepp::save_parameters(join_path(cfg.output_dir, "bootstrap.weights"), enc.params);
        log.write_file(join_path(cfg.output_dir, "metrics.csv"));
        std::printf("bootstrap: %zu epochs, weights at %s\n", cfg.bootstrap_epochs,
                    join_path(cfg.output_dir, "bootstrap.weights").c_str());
    });

    // ---- embed ----
    auto* cmd_embed = app.add_subcommand("embed", "embed the dataset with saved weights");
    ConfigFlags fl_embed;
    fl_embed.attach(cmd_embed);
    std::string embed_weights, embed_out;
    cmd_embed->add_option("--weights", embed_weights,
                          "encoder weights (default <out-dir>/bootstrap.weights)");
    cmd_embed->add_option("--out", embed_out,
                          "embeddings file (default <out-dir>/embeddings.bin)");
    cmd_embed->callback([&] {
        sepp::PipelineConfig cfg = fl_embed.resolve();
        std::filesystem::create_directories(cfg.output_dir);
        if (embed_weights.empty()) {
            embed_weights = join_path(cfg.output_dir, "bootstrap.weights");
        }
        if (embed_out.empty()) {
            embed_out = join_path(cfg.output_dir, "embeddings.bin");
        }
        sepp::LoadedDataset data = sepp::load_dataset(cfg.dataset, cfg.seed);
        sepp::Encoder<float> enc = encoder_from_file(cfg, data.images, embed_weights);
        sepp::EmbeddingMatrix emb = sepp::embed_dataset(enc, data.images, cfg.embed_batch);
        sepp::write_embeddings(embed_out, emb);
        std::printf("embed: %zu rows x %zu dims -> %s\n", emb.n, emb.d, embed_out.c_str());
    });

    // ---- mine ----
    auto* cmd_mine = app.add_subcommand("mine", "mine positive pairs from embeddings");
    std::string mine_emb, mine_out, mine_report, mine_selection = "first";
    std::size_t mine_k = 0;
    double mine_min = 0.96, mine_max = 0.99;
    bool mine_no_dedup = false;
    std::uint64_t mine_seed = 0;
    cmd_mine->add_option("--embeddings", mine_emb, "embeddings file")->required();
    cmd_mine->add_option("--k", mine_k, "number of rows to scan")->required();
    cmd_mine->add_option("--min", mine_min, "lower cosine threshold");
    cmd_mine->add_option("--max", mine_max, "upper cosine threshold");
    cmd_mine->add_option("--out", mine_out, "pair CSV output")->required();
    cmd_mine->add_flag("--no-dedup", mine_no_dedup, "keep both pair orientations");
    cmd_mine->add_option("--selection", mine_selection, "K-row selection: first | random")
        ->check(CLI::IsMember({"first", "random"}));
    cmd_mine->add_option("--seed", mine_seed, "seed for random selection");
    cmd_mine->add_option("--report", mine_report, "write k,pair_count,wall_time_s,sim_evals");
    cmd_mine->callback([&] {
        sepp::EmbeddingMatrix emb = sepp::read_embeddings(mine_emb);
        sepp::MinerConfig miner;
        miner.k = mine_k;
        miner.min_threshold = mine_min;
        miner.max_threshold = mine_max;
        miner.dedup_symmetric = !mine_no_dedup;
        miner.selection = mine_selection == "random" ? sepp::Selection::RandomK
                                                     : sepp::Selection::FirstK;
        miner.selection_seed = mine_seed;
        auto [pairs, report] = sepp::mine_pairs_blocked(emb, miner);
        sepp::write_pairset(mine_out, pairs);
        if (!mine_report.empty()) {
            write_mine_report(mine_report, report, true);
        }
        std::printf("mine: k=%zu pairs=%zu (%.3fs) -> %s\n", report.k_used,
                    report.pair_count, report.wall_time_seconds, mine_out.c_str());
    });

    // ---- train ----
    auto* cmd_train = app.add_subcommand("train", "contrastive training with mined pairs");
    ConfigFlags fl_train;
    fl_train.attach(cmd_train);
    std::string train_pairs;
    cmd_train->add_option("--pairs", train_pairs, "mined pair CSV (omit for vanilla)");
    cmd_train->callback([&] {
        sepp::PipelineConfig cfg = fl_train.resolve();
        std::filesystem::create_directories(cfg.output_dir);
        sepp::LoadedDataset data = sepp::load_dataset(cfg.dataset, cfg.seed);
        sepp::SemanticPairSet spps;
        if (!train_pairs.empty()) {
            spps = sepp::read_pairset(train_pairs);
        }
        std::vector<sepp::ImageRecord> train_images = data.images;
        if (cfg.random_add_count > 0) {
            train_images = sepp::with_random_duplicates(
                data.images, cfg.random_add_count,
                sepp::rng::mix(cfg.seed, sepp::seeds::kRandomAdd));
        }
        sepp::MetricsLog log;
        sepp::Encoder<float> enc = sepp::train_encoder<float>(
            cfg, train_images, spps, log, "train",
            sepp::rng::mix(cfg.seed, sepp::seeds::kInit),
            sepp::rng::mix(cfg.seed, sepp::seeds::kEpochs), cfg.epochs);
        sepp::save_parameters(join_path(cfg.output_dir, "encoder.weights"), enc.params);
        log.write_file(join_path(cfg.output_dir, "metrics.csv"));
        std::printf("train: %zu epochs, %zu pairs, weights at %s\n", cfg.epochs,
                    spps.pairs.size(), join_path(cfg.output_dir, "encoder.weights").c_str());
    });

    // ---- linear-eval ----
    auto* cmd_eval = app.add_subcommand("linear-eval", "linear probe on frozen features");
    ConfigFlags fl_eval;
    fl_eval.attach(cmd_eval);
    std::string eval_weights;
    cmd_eval->add_option("--weights", eval_weights,
                         "encoder weights (default <out-dir>/encoder.weights)");
    cmd_eval->callback([&] {
        sepp::PipelineConfig cfg = fl_eval.resolve();
        std::filesystem::create_directories(cfg.output_dir);
        if (eval_weights.empty()) {
            eval_weights = join_path(cfg.output_dir, "encoder.weights");
        }
        sepp::LoadedDataset data = sepp::load_dataset(cfg.dataset, cfg.seed);
        sepp::Encoder<float> enc = encoder_from_file(cfg, data.images, eval_weights);
        sepp::MetricsLog log;
        sepp::ProbeResult probe = sepp::linear_eval(
            cfg, enc, data.images, log, "eval", sepp::rng::mix(cfg.seed, sepp::seeds::kProbe));
        sepp::NamedParams<float> probe_params;
        probe_params.emplace_back("probe.weight",
                                  sepp::Tensor<float>::from_values(
                                      {probe.feature_dim, probe.classes},
                                      std::vector<float>(probe.weight), false));
        probe_params.emplace_back(
            "probe.bias", sepp::Tensor<float>::from_values(
                              {probe.classes}, std::vector<float>(probe.bias), false));
        sepp::save_parameters(join_path(cfg.output_dir, "probe.weights"), probe_params);
        log.write_file(join_path(cfg.output_dir, "metrics.csv"));
        std::printf("linear-eval: top1 %.6f\n", probe.top1);
    });

    // ---- ablate-k ----
    auto* cmd_ablate = app.add_subcommand("ablate-k", "mining cost and yield across K sizes");
    std::string ablate_emb, ablate_report;
    std::vector<std::size_t> ablate_ks;
    double ablate_min = 0.96, ablate_max = 0.99;
    bool ablate_no_dedup = false, ablate_det = false;
    cmd_ablate->add_option("--embeddings", ablate_emb, "embeddings file")->required();
    cmd_ablate->add_option("--ks", ablate_ks, "ascending K values (comma separated)")
        ->required()
        ->delimiter(',');
    cmd_ablate->add_option("--min", ablate_min, "lower cosine threshold");
    cmd_ablate->add_option("--max", ablate_max, "upper cosine threshold");
    cmd_ablate->add_flag("--no-dedup", ablate_no_dedup, "keep both pair orientations");
    cmd_ablate->add_option("--report", ablate_report, "write the sweep as CSV");
    cmd_ablate->add_flag("--deterministic-timing", ablate_det, "record wall_time_s as 0");
    cmd_ablate->callback([&] {
        sepp::EmbeddingMatrix emb = sepp::read_embeddings(ablate_emb);
        sepp::MinerConfig miner;
        miner.min_threshold = ablate_min;
        miner.max_threshold = ablate_max;
        miner.dedup_symmetric = !ablate_no_dedup;
        sepp::MetricsLog log;
        std::vector<sepp::AblationRow> rows =
            sepp::ablate_k(emb, miner, ablate_ks, log, !ablate_det);
        std::fputs(sepp::ablation_csv(rows).c_str(), stdout);
        if (!ablate_report.empty()) {
            sepp::write_text_file(ablate_report, sepp::ablation_csv(rows));
        }
        if (rows.size() >= 2 && !ablate_det) {
            std::vector<double> xs, ys;
            for (const auto& r : rows) {
                xs.push_back(double(r.k));
                ys.push_back(r.wall_time_s);
            }
            std::printf("chunk-time linearity R^2 = %.4f\n", sepp::linear_fit_r2(xs, ys));
        }
    });

    // ---- control-random-add ----
    auto* cmd_control =
        app.add_subcommand("control-random-add", "control arm: duplicates instead of mining");
    ConfigFlags fl_control;
    fl_control.attach(cmd_control);
    std::size_t control_count = 0;
    cmd_control->add_option("--count", control_count, "number of random duplicates")
        ->required();
    cmd_control->callback([&] {
        sepp::PipelineConfig cfg = fl_control.resolve();
        cfg.mining_enabled = false;
        cfg.random_add_count = control_count;
        sepp::RunResult result = sepp::run_all(cfg);
        std::printf("control-random-add: +%zu duplicates, top1 %.6f\n", control_count,
                    result.top1);
    });

    // ---- run-all ----
    auto* cmd_run = app.add_subcommand("run-all", "bootstrap, embed, mine, train, evaluate");
    ConfigFlags fl_run;
    fl_run.attach(cmd_run);
    cmd_run->callback([&] {
        sepp::PipelineConfig cfg = fl_run.resolve();
        sepp::RunResult result = sepp::run_all(cfg);
        std::printf("run-all: pairs=%zu top1=%.6f artifacts in %s\n", result.pair_count,
                    result.top1, cfg.output_dir.c_str());
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
