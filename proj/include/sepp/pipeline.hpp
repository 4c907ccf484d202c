#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "sepp/augment.hpp"
#include "sepp/common.hpp"
#include "sepp/config.hpp"
#include "sepp/dataset.hpp"
#include "sepp/loss.hpp"
#include "sepp/metrics.hpp"
#include "sepp/miner.hpp"
#include "sepp/nn.hpp"
#include "sepp/rng.hpp"
#include "sepp/serialize.hpp"
#include "sepp/tensor.hpp"

// End-to-end orchestration: bootstrap-pretrain, embed, mine, train with the
// combined objective, linear-probe evaluation, the K-sweep ablation, and the
// random-duplicate control arm. Every stage is a plain function over files
// and in-memory types so any stage can be re-run from prior artifacts.

namespace sepp {

enum class SppsMode { Weighted, Merged };
enum class DatasetKind { Blobs, Cifar, Idx };

struct DatasetSpec {
    DatasetKind kind = DatasetKind::Blobs;
    std::size_t classes = 5;
    std::size_t per_class = 100;
    std::size_t dim = 64;
    double intra_angle = 0.5;
    std::uint64_t blob_seed = 0; // 0: derived from the run seed
    std::string path;
    std::string labels_path;
    std::size_t limit = 0; // 0: whole dataset
};

struct EvalConfig {
    std::size_t probe_epochs = 90;
    double probe_lr = 0.1;
    double probe_momentum = 0.9;
    double probe_weight_decay = 0.0;
    std::size_t train_per_class = 0; // 0: probe trains and tests on all items
    std::size_t batch_size = 256;
};

struct PipelineConfig {
    DatasetSpec dataset;
    MinerConfig miner; // miner.k == 0 resolves to the dataset size
    bool mining_enabled = true;
    AugmentationPolicy augment;
    EncoderConfig encoder; // input dims are resolved from the data at load
    OptimizerConfig optimizer;
    LossConfig loss;
    SppsMode spps_mode = SppsMode::Weighted;
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    std::size_t bootstrap_epochs = 10;
    std::size_t embed_batch = 64;
    std::size_t random_add_count = 0;
    EvalConfig eval;
    std::uint64_t seed = 1;
    std::string output_dir = "sepp-out";
    bool record_wall_time = true;

    void validate() const {
        require(batch_size >= 2, "pipeline: batch_size must be at least 2, got ", batch_size);
        require(epochs >= 1, "pipeline: epochs must be at least 1, got ", epochs);
        optimizer.validate();
        loss.validate();
        augment.validate();
        encoder.validate();
    }
};

// Sub-seed tags, all mixed with the master run seed.
namespace seeds {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kAugment = 2;
inline constexpr std::uint64_t kEpochs = 3;
inline constexpr std::uint64_t kProbe = 4;
inline constexpr std::uint64_t kRandomAdd = 5;
inline constexpr std::uint64_t kBlobs = 6;
inline constexpr std::uint64_t kBootstrapEpochs = 7;
inline constexpr std::uint64_t kBootstrapInit = 8;
inline constexpr std::uint64_t kSemanticViews = 9;
} // namespace seeds

// ---- config file mapping ----

namespace detail {

template <typename Enum>
Enum parse_enum(const std::string& value, const char* key,
                std::initializer_list<std::pair<const char*, Enum>> table) {
    for (const auto& [name, v] : table) {
        if (value == name) {
            return v;
        }
    }
    std::string valid;
    for (const auto& [name, v] : table) {
        valid += valid.empty() ? name : std::string(" | ") + name;
    }
    fail("config: key '", key, "' must be one of ", valid, ", got '", value, "'");
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

inline PipelineConfig parse_pipeline_config(const KvConfig& kv) {
    PipelineConfig cfg;
    cfg.dataset.kind = detail::parse_enum<DatasetKind>(
        kv.get_string("dataset.kind", "blobs"), "dataset.kind",
        {{"blobs", DatasetKind::Blobs}, {"cifar", DatasetKind::Cifar}, {"idx", DatasetKind::Idx}});
    cfg.dataset.classes = kv.get_uint("dataset.classes", cfg.dataset.classes);
    cfg.dataset.per_class = kv.get_uint("dataset.per_class", cfg.dataset.per_class);
    cfg.dataset.dim = kv.get_uint("dataset.dim", cfg.dataset.dim);
    cfg.dataset.intra_angle = kv.get_double("dataset.intra_angle", cfg.dataset.intra_angle);
    cfg.dataset.blob_seed = kv.get_uint("dataset.seed", cfg.dataset.blob_seed);
    cfg.dataset.path = kv.get_string("dataset.path", "");
    cfg.dataset.labels_path = kv.get_string("dataset.labels_path", "");
    cfg.dataset.limit = kv.get_uint("dataset.limit", cfg.dataset.limit);

    cfg.mining_enabled = kv.get_bool("miner.enabled", cfg.mining_enabled);
    cfg.miner.k = kv.get_uint("miner.k", 0);
    cfg.miner.min_threshold = kv.get_double("miner.min", cfg.miner.min_threshold);
    cfg.miner.max_threshold = kv.get_double("miner.max", cfg.miner.max_threshold);
    cfg.miner.selection = detail::parse_enum<Selection>(
        kv.get_string("miner.selection", "first"), "miner.selection",
        {{"first", Selection::FirstK}, {"random", Selection::RandomK}});
    cfg.miner.selection_seed = kv.get_uint("miner.selection_seed", cfg.miner.selection_seed);
    cfg.miner.dedup_symmetric = kv.get_bool("miner.dedup", cfg.miner.dedup_symmetric);
    cfg.miner.block_size = kv.get_uint("miner.block_size", cfg.miner.block_size);

    cfg.augment.crop_scale_lo = kv.get_double("augment.crop_lo", cfg.augment.crop_scale_lo);
    cfg.augment.crop_scale_hi = kv.get_double("augment.crop_hi", cfg.augment.crop_scale_hi);
    cfg.augment.flip_probability = kv.get_double("augment.flip_prob", cfg.augment.flip_probability);
    cfg.augment.jitter_strength = kv.get_double("augment.jitter", cfg.augment.jitter_strength);
    cfg.augment.grayscale_probability =
        kv.get_double("augment.grayscale_prob", cfg.augment.grayscale_probability);
    cfg.augment.output_height = kv.get_uint("augment.output_height", cfg.augment.output_height);
    cfg.augment.output_width = kv.get_uint("augment.output_width", cfg.augment.output_width);

    cfg.encoder.architecture = detail::parse_enum<Architecture>(
        kv.get_string("encoder.arch", "small-conv"), "encoder.arch",
        {{"small-conv", Architecture::SmallConv}, {"mlp", Architecture::Mlp}});
    cfg.encoder.conv_channels = kv.get_size_list("encoder.conv_channels", cfg.encoder.conv_channels);
    cfg.encoder.mlp_hidden = kv.get_uint("encoder.mlp_hidden", cfg.encoder.mlp_hidden);
    cfg.encoder.projection_dim = kv.get_uint("encoder.projection_dim", cfg.encoder.projection_dim);

    cfg.optimizer.kind = detail::parse_enum<OptimizerKind>(
        kv.get_string("optimizer.kind", "sgd-momentum"), "optimizer.kind",
        {{"sgd-momentum", OptimizerKind::SgdMomentum}, {"lars", OptimizerKind::Lars}});
    cfg.optimizer.learning_rate = kv.get_double("optimizer.lr", cfg.optimizer.learning_rate);
    cfg.optimizer.momentum = kv.get_double("optimizer.momentum", cfg.optimizer.momentum);
    cfg.optimizer.weight_decay = kv.get_double("optimizer.weight_decay", cfg.optimizer.weight_decay);

    cfg.loss.temperature = kv.get_double("loss.temperature", cfg.loss.temperature);
    cfg.loss.lambda_mode = detail::parse_enum<LambdaMode>(
        kv.get_string("loss.lambda_mode", "constant"), "loss.lambda_mode",
        {{"constant", LambdaMode::Constant}, {"off", LambdaMode::Off}});
    cfg.loss.lambda_value = kv.get_double("loss.lambda", cfg.loss.lambda_value);
    cfg.loss.exclude_semantic_from_negatives =
        kv.get_bool("loss.exclude_semantic_from_negatives", cfg.loss.exclude_semantic_from_negatives);
    cfg.loss.negative_rule = detail::parse_enum<NegativeRule>(
        kv.get_string("loss.negative_rule", "all-other-views"), "loss.negative_rule",
        {{"all-other-views", NegativeRule::AllOtherViews},
         {"self-inclusive-2n", NegativeRule::SelfInclusive2N}});
    cfg.loss.symmetric = kv.get_bool("loss.symmetric", cfg.loss.symmetric);
    cfg.spps_mode = detail::parse_enum<SppsMode>(
        kv.get_string("loss.spps_mode", "weighted"), "loss.spps_mode",
        {{"weighted", SppsMode::Weighted}, {"merged", SppsMode::Merged}});

    cfg.epochs = kv.get_uint("train.epochs", cfg.epochs);
    cfg.batch_size = kv.get_uint("train.batch_size", cfg.batch_size);
    cfg.bootstrap_epochs = kv.get_uint("train.bootstrap_epochs", cfg.bootstrap_epochs);
    cfg.embed_batch = kv.get_uint("train.embed_batch", cfg.embed_batch);
    cfg.random_add_count = kv.get_uint("train.random_add_count", cfg.random_add_count);

    cfg.eval.probe_epochs = kv.get_uint("eval.probe_epochs", cfg.eval.probe_epochs);
    cfg.eval.probe_lr = kv.get_double("eval.probe_lr", cfg.eval.probe_lr);
    cfg.eval.probe_momentum = kv.get_double("eval.probe_momentum", cfg.eval.probe_momentum);
    cfg.eval.probe_weight_decay =
        kv.get_double("eval.probe_weight_decay", cfg.eval.probe_weight_decay);
    cfg.eval.train_per_class = kv.get_uint("eval.train_per_class", cfg.eval.train_per_class);
    cfg.eval.batch_size = kv.get_uint("eval.batch_size", cfg.eval.batch_size);

    cfg.seed = kv.get_uint("run.seed", cfg.seed);
    cfg.output_dir = kv.get_string("run.output_dir", cfg.output_dir);
    cfg.record_wall_time = kv.get_bool("run.record_wall_time", cfg.record_wall_time);
    cfg.validate();
    return cfg;
}

/// Full resolved snapshot, written next to a run's outputs for provenance.
inline KvConfig resolved_config(const PipelineConfig& cfg) {
    KvConfig kv;
    auto put = [&](const char* key, const std::string& v) { kv.set(key, v); };
    auto put_u = [&](const char* key, std::uint64_t v) { kv.set(key, std::to_string(v)); };
    auto put_d = [&](const char* key, double v) { kv.set(key, detail::format_double(v)); };
    auto put_b = [&](const char* key, bool v) { kv.set(key, v ? "true" : "false"); };

    put("dataset.kind", cfg.dataset.kind == DatasetKind::Blobs  ? "blobs"
                        : cfg.dataset.kind == DatasetKind::Cifar ? "cifar"
                                                                 : "idx");
    put_u("dataset.classes", cfg.dataset.classes);
    put_u("dataset.per_class", cfg.dataset.per_class);
    put_u("dataset.dim", cfg.dataset.dim);
    put_d("dataset.intra_angle", cfg.dataset.intra_angle);
    put_u("dataset.seed", cfg.dataset.blob_seed);
    put("dataset.path", cfg.dataset.path);
    put("dataset.labels_path", cfg.dataset.labels_path);
    put_u("dataset.limit", cfg.dataset.limit);

    put_b("miner.enabled", cfg.mining_enabled);
    put_u("miner.k", cfg.miner.k);
    put_d("miner.min", cfg.miner.min_threshold);
    put_d("miner.max", cfg.miner.max_threshold);
    put("miner.selection", cfg.miner.selection == Selection::FirstK ? "first" : "random");
    put_u("miner.selection_seed", cfg.miner.selection_seed);
    put_b("miner.dedup", cfg.miner.dedup_symmetric);
    put_u("miner.block_size", cfg.miner.block_size);

    put_d("augment.crop_lo", cfg.augment.crop_scale_lo);
    put_d("augment.crop_hi", cfg.augment.crop_scale_hi);
    put_d("augment.flip_prob", cfg.augment.flip_probability);
    put_d("augment.jitter", cfg.augment.jitter_strength);
    put_d("augment.grayscale_prob", cfg.augment.grayscale_probability);
    put_u("augment.output_height", cfg.augment.output_height);
    put_u("augment.output_width", cfg.augment.output_width);

    put("encoder.arch",
        cfg.encoder.architecture == Architecture::SmallConv ? "small-conv" : "mlp");
    std::string channels;
    for (std::size_t c : cfg.encoder.conv_channels) {
        channels += channels.empty() ? std::to_string(c) : "," + std::to_string(c);
    }
    put("encoder.conv_channels", channels);
    put_u("encoder.mlp_hidden", cfg.encoder.mlp_hidden);
    put_u("encoder.projection_dim", cfg.encoder.projection_dim);

    put("optimizer.kind",
        cfg.optimizer.kind == OptimizerKind::SgdMomentum ? "sgd-momentum" : "lars");
    put_d("optimizer.lr", cfg.optimizer.learning_rate);
    put_d("optimizer.momentum", cfg.optimizer.momentum);
    put_d("optimizer.weight_decay", cfg.optimizer.weight_decay);

    put_d("loss.temperature", cfg.loss.temperature);
    put("loss.lambda_mode", cfg.loss.lambda_mode == LambdaMode::Constant ? "constant" : "off");
    put_d("loss.lambda", cfg.loss.lambda_value);
    put_b("loss.exclude_semantic_from_negatives", cfg.loss.exclude_semantic_from_negatives);
    put("loss.negative_rule", cfg.loss.negative_rule == NegativeRule::AllOtherViews
                                  ? "all-other-views"
                                  : "self-inclusive-2n");
    put_b("loss.symmetric", cfg.loss.symmetric);
    put("loss.spps_mode", cfg.spps_mode == SppsMode::Weighted ? "weighted" : "merged");

    put_u("train.epochs", cfg.epochs);
    put_u("train.batch_size", cfg.batch_size);
    put_u("train.bootstrap_epochs", cfg.bootstrap_epochs);
    put_u("train.embed_batch", cfg.embed_batch);
    put_u("train.random_add_count", cfg.random_add_count);

    put_u("eval.probe_epochs", cfg.eval.probe_epochs);
    put_d("eval.probe_lr", cfg.eval.probe_lr);
    put_d("eval.probe_momentum", cfg.eval.probe_momentum);
    put_d("eval.probe_weight_decay", cfg.eval.probe_weight_decay);
    put_u("eval.train_per_class", cfg.eval.train_per_class);
    put_u("eval.batch_size", cfg.eval.batch_size);

    put_u("run.seed", cfg.seed);
    put("run.output_dir", cfg.output_dir);
    put_b("run.record_wall_time", cfg.record_wall_time);
    return kv;
}

// ---- dataset loading ----

struct LoadedDataset {
    std::vector<ImageRecord> images;
    bool has_labels = false;
};

inline LoadedDataset load_dataset(const DatasetSpec& spec, std::uint64_t run_seed) {
    LoadedDataset out;
    switch (spec.kind) {
    case DatasetKind::Blobs: {
        const std::uint64_t seed =
            spec.blob_seed ? spec.blob_seed : rng::mix(run_seed, seeds::kBlobs);
        out.images = gen_synthetic_blobs(spec.classes, spec.per_class, spec.dim,
                                         spec.intra_angle, seed)
                         .records;
        break;
    }
    case DatasetKind::Cifar:
        require(!spec.path.empty(), "dataset: cifar requires dataset.path");
        out.images = load_cifar_binary(spec.path);
        break;
    case DatasetKind::Idx:
        require(!spec.path.empty() && !spec.labels_path.empty(),
                "dataset: idx requires dataset.path and dataset.labels_path");
        out.images = load_idx(spec.path, spec.labels_path);
        break;
    }
    if (spec.limit > 0 && out.images.size() > spec.limit) {
        out.images.resize(spec.limit);
    }
    require(!out.images.empty(), "dataset: no images loaded");
    out.has_labels = true;
    for (const ImageRecord& r : out.images) {
        out.has_labels = out.has_labels && r.label >= 0;
    }
    return out;
}

/// Fill in the encoder's input geometry from the first record.
inline void resolve_encoder_input(EncoderConfig& enc, const std::vector<ImageRecord>& images) {
    require(!images.empty(), "pipeline: empty dataset");
    enc.input_channels = images[0].channels;
    enc.input_height = images[0].height;
    enc.input_width = images[0].width;
    enc.validate();
}

// ---- training ----

/// Snapshot of one training batch, for external cross-checks of the loss.
struct BatchTrace {
    std::size_t epoch = 0;
    std::size_t batch_index = 0;
    std::size_t n = 0;
    std::vector<std::vector<double>> z_rows;
    std::vector<std::vector<double>> u_rows;
    struct Ref {
        std::size_t anchor;
        std::size_t u_index;
        double weight;
    };
    std::vector<Ref> refs;
    double loss = 0.0;
};
using TraceHook = std::function<void(const BatchTrace&)>;

namespace detail {

template <typename Real>
std::vector<std::vector<double>> tensor_rows_as_double(const Tensor<Real>& t) {
    std::vector<std::vector<double>> rows(t.shape()[0], std::vector<double>(t.shape()[1]));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            rows[r][c] = double(t.values()[r * rows[r].size() + c]);
        }
    }
    return rows;
}

} // namespace detail

/// Contrastive pretraining over the combined stream. `spps` may be empty, in
/// which case this is exactly vanilla instance discrimination.
template <typename Real = float>
Encoder<Real> train_encoder(const PipelineConfig& cfg, const std::vector<ImageRecord>& images,
                            const SemanticPairSet& spps, MetricsLog& log,
                            const std::string& phase, std::uint64_t init_seed,
                            std::uint64_t epoch_seed, std::size_t epochs,
                            const TraceHook& hook = {}) {
    EncoderConfig enc_cfg = cfg.encoder;
    resolve_encoder_input(enc_cfg, images);
    Encoder<Real> enc = Encoder<Real>::init(enc_cfg, init_seed);
    Optimizer<Real> opt(cfg.optimizer);

    AugmentationPolicy policy = cfg.augment;
    policy.seed = rng::mix(cfg.seed, seeds::kAugment);

    CombinedDataset ds;
    ds.original_items = images;
    ds.epoch_seed = epoch_seed;

    // Weighted mode keeps the stream vanilla and attaches mined partners as
    // extra positive rows per batch; merged mode inlines the pairs into the
    // stream as ordinary two-view items.
    std::map<std::size_t, std::vector<std::size_t>> partners;
    if (cfg.spps_mode == SppsMode::Merged) {
        ds.spps = spps;
    } else {
        for (const Pair& p : spps.pairs) {
            partners[p.anchor].push_back(p.positive);
            partners[p.positive].push_back(p.anchor);
        }
    }
    ds.validate();

    const std::uint64_t u_seed_base = rng::mix(cfg.seed, seeds::kSemanticViews);
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        Stopwatch timer;
        const std::vector<EpochItem> items = build_epoch(ds, epoch);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start + 2 <= items.size(); start += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, items.size() - start);
            if (n < 2) {
                break; // a trailing single item cannot form a contrastive batch
            }
            std::vector<ImageRecord> views_a, views_b, views_u;
            TrainBatch<Real> batch;
            batch.n = n;
            for (std::size_t i = 0; i < n; ++i) {
                const EpochItem& item = items[start + i];
                auto [va, vb] = make_views(ds, policy, item);
                views_a.push_back(std::move(va));
                views_b.push_back(std::move(vb));
                if (cfg.spps_mode == SppsMode::Weighted && !item.semantic) {
                    auto it = partners.find(item.a);
                    if (it == partners.end()) {
                        continue;
                    }
                    for (std::size_t partner : it->second) {
                        const std::uint64_t seed =
                            rng::mix(rng::mix(u_seed_base, epoch), rng::mix(item.a, partner));
                        views_u.push_back(apply(policy, ds.original_items[partner], seed));
                        batch.semantic.push_back({i, views_u.size() - 1, 1.0});
                    }
                }
            }
            std::vector<ImageRecord> instance_views = views_a;
            instance_views.insert(instance_views.end(), views_b.begin(), views_b.end());
            zero_grads(enc.params);
            batch.z = l2_normalize_rows(enc.forward(views_to_tensor<Real>(instance_views, enc_cfg)));
            if (!views_u.empty()) {
                batch.u = l2_normalize_rows(enc.forward(views_to_tensor<Real>(views_u, enc_cfg)));
            }
            Tensor<Real> loss = total_loss(batch, cfg.loss);
            backward(loss);
            opt.step(enc.params);
            loss_sum += double(loss.values()[0]);
            ++batches;
            if (hook) {
                BatchTrace trace;
                trace.epoch = epoch;
                trace.batch_index = batches - 1;
                trace.n = n;
                trace.z_rows = detail::tensor_rows_as_double(batch.z);
                if (batch.u.defined()) {
                    trace.u_rows = detail::tensor_rows_as_double(batch.u);
                }
                for (const auto& ref : batch.semantic) {
                    trace.refs.push_back({ref.anchor, ref.u_index, ref.weight});
                }
                trace.loss = double(loss.values()[0]);
                hook(trace);
            }
        }
        require(batches > 0, "train: batch_size ", cfg.batch_size,
                " leaves no usable batch for ", items.size(), " items");
        MetricsRecord rec;
        rec.phase = phase;
        rec.epoch = std::int64_t(epoch);
        rec.loss = loss_sum / double(batches);
        rec.wall_time_s = cfg.record_wall_time ? timer.seconds() : 0.0;
        rec.pair_count = std::int64_t(spps.pairs.size());
        log.add(rec);
    }
    return enc;
}

// ---- linear evaluation ----

namespace detail {

/// Frozen-backbone features for every image, in dataset order.
template <typename Real>
std::vector<std::vector<float>> backbone_features(const Encoder<Real>& enc,
                                                  const std::vector<ImageRecord>& images,
                                                  std::size_t batch_size) {
    std::vector<std::vector<float>> features;
    features.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += batch_size) {
        const std::size_t count = std::min(batch_size, images.size() - start);
        std::vector<ImageRecord> chunk(images.begin() + std::ptrdiff_t(start),
                                       images.begin() + std::ptrdiff_t(start + count));
        Tensor<Real> h = enc.forward_features(views_to_tensor<Real>(chunk, enc.cfg));
        const std::size_t dim = h.shape()[1];
        for (std::size_t r = 0; r < count; ++r) {
            std::vector<float> row(dim);
            for (std::size_t c = 0; c < dim; ++c) {
                row[c] = static_cast<float>(h.values()[r * dim + c]);
            }
            features.push_back(std::move(row));
        }
    }
    return features;
}

inline double top1_accuracy(const std::vector<std::vector<float>>& features,
                            const std::vector<int>& labels,
                            const std::vector<std::size_t>& subset,
                            const std::vector<float>& w, const std::vector<float>& b,
                            std::size_t classes) {
    std::size_t hits = 0;
    for (std::size_t idx : subset) {
        const std::vector<float>& f = features[idx];
        std::size_t best = 0;
        double best_score = -1e300;
        for (std::size_t c = 0; c < classes; ++c) {
            double score = b[c];
            for (std::size_t d = 0; d < f.size(); ++d) {
                score += double(f[d]) * w[d * classes + c];
            }
            if (score > best_score) {
                best_score = score;
                best = c;
            }
        }
        hits += std::size_t(int(best) == labels[idx]);
    }
    return subset.empty() ? 0.0 : double(hits) / double(subset.size());
}

} // namespace detail

struct ProbeResult {
    double top1 = 0.0;
    std::vector<float> weight; // [feature_dim x classes]
    std::vector<float> bias;   // [classes]
    std::size_t classes = 0;
    std::size_t feature_dim = 0;
    std::size_t train_count = 0;
    std::size_t test_count = 0;
};

/// Train a linear classifier on frozen backbone features; report test top-1.
/// With train_per_class > 0 a per-class subset (chosen by the probe seed)
/// trains the probe and the remaining items form the test set; otherwise the
/// probe trains and tests on the full labeled set.
template <typename Real = float>
ProbeResult linear_eval(const PipelineConfig& cfg, const Encoder<Real>& enc,
                        const std::vector<ImageRecord>& images, MetricsLog& log,
                        const std::string& phase, std::uint64_t probe_seed) {
    require(!images.empty(), "linear eval: empty dataset");
    require(cfg.eval.probe_lr > 0.0, "linear eval: probe_lr must be positive, got ",
            cfg.eval.probe_lr);
    std::vector<int> labels(images.size());
    int max_label = -1;
    for (std::size_t i = 0; i < images.size(); ++i) {
        require(images[i].label >= 0, "linear eval: missing labels (record ", i,
                " is unlabeled)");
        labels[i] = images[i].label;
        max_label = std::max(max_label, labels[i]);
    }
    const std::size_t classes = std::size_t(max_label) + 1;

    // train/test split
    std::vector<std::size_t> train_idx, test_idx;
    if (cfg.eval.train_per_class == 0) {
        for (std::size_t i = 0; i < images.size(); ++i) {
            train_idx.push_back(i);
            test_idx.push_back(i);
        }
    } else {
        std::vector<std::vector<std::size_t>> by_class(classes);
        for (std::size_t i = 0; i < images.size(); ++i) {
            by_class[std::size_t(labels[i])].push_back(i);
        }
        for (std::size_t c = 0; c < classes; ++c) {
            rng::shuffle(by_class[c], rng::mix(probe_seed, c));
            require(by_class[c].size() > cfg.eval.train_per_class,
                    "linear eval: class ", c, " has ", by_class[c].size(),
                    " items, need more than train_per_class = ", cfg.eval.train_per_class);
            for (std::size_t i = 0; i < by_class[c].size(); ++i) {
                (i < cfg.eval.train_per_class ? train_idx : test_idx).push_back(by_class[c][i]);
            }
        }
        std::sort(train_idx.begin(), train_idx.end());
        std::sort(test_idx.begin(), test_idx.end());
    }

    const auto features = detail::backbone_features(enc, images, cfg.eval.batch_size);
    const std::size_t dim = features[0].size();

    // zero-initialized probe: convex objective, deterministic start
    NamedParams<float> probe;
    probe.emplace_back("probe.weight", Tensor<float>::zeros({dim, classes}, true));
    probe.emplace_back("probe.bias", Tensor<float>::zeros({classes}, true));

    OptimizerConfig opt_cfg;
    opt_cfg.kind = OptimizerKind::SgdMomentum;
    opt_cfg.learning_rate = cfg.eval.probe_lr;
    opt_cfg.momentum = cfg.eval.probe_momentum;
    opt_cfg.weight_decay = cfg.eval.probe_weight_decay;
    Optimizer<float> opt(opt_cfg);

    // probe_epochs = 0 evaluates the untrained (all-zero) classifier, whose
    // tie-broken predictions are all class 0: a chance-level baseline
    const std::size_t epochs = cfg.eval.probe_epochs;
    const double pi = std::acos(-1.0);
    double final_top1 = detail::top1_accuracy(features, labels, test_idx,
                                              probe[0].second.values(),
                                              probe[1].second.values(), classes);
    if (epochs == 0) {
        MetricsRecord rec;
        rec.phase = phase;
        rec.top1 = final_top1;
        log.add(rec);
    }
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        Stopwatch timer;
        // cosine-decayed learning rate, a documented default
        const double lr_scale = 0.5 * (1.0 + std::cos(pi * double(epoch) / double(epochs)));

        std::vector<std::size_t> order = train_idx;
        rng::shuffle(order, rng::mix(rng::mix(probe_seed, 0x0e90c), epoch));

        double loss_sum = 0.0;
        std::size_t batches = 0;
        const std::size_t bsz = std::max<std::size_t>(1, cfg.eval.batch_size);
        for (std::size_t start = 0; start < order.size(); start += bsz) {
            const std::size_t count = std::min(bsz, order.size() - start);
            std::vector<float> flat;
            flat.reserve(count * dim);
            std::vector<int> batch_labels(count);
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t idx = order[start + i];
                flat.insert(flat.end(), features[idx].begin(), features[idx].end());
                batch_labels[i] = labels[idx];
            }
            auto x = Tensor<float>::from_values({count, dim}, std::move(flat), false);
            auto logits = add_rowvec(matmul(x, probe[0].second), probe[1].second);
            auto loss = cross_entropy_rows(logits, batch_labels);
            zero_grads(probe);
            backward(loss);
            opt.step(probe, lr_scale);
            loss_sum += double(loss.values()[0]);
            ++batches;
        }

        final_top1 = detail::top1_accuracy(features, labels, test_idx,
                                           probe[0].second.values(), probe[1].second.values(),
                                           classes);
        MetricsRecord rec;
        rec.phase = phase;
        rec.epoch = std::int64_t(epoch);
        rec.loss = batches ? loss_sum / double(batches) : -1.0;
        rec.top1 = final_top1;
        rec.wall_time_s = cfg.record_wall_time ? timer.seconds() : 0.0;
        log.add(rec);
    }

    ProbeResult result;
    result.top1 = final_top1;
    result.weight = probe[0].second.values();
    result.bias = probe[1].second.values();
    result.classes = classes;
    result.feature_dim = dim;
    result.train_count = train_idx.size();
    result.test_count = test_idx.size();
    return result;
}

// ---- K-sweep ablation ----

struct AblationRow {
    std::size_t k = 0;
    std::size_t pair_count = 0;
    double wall_time_s = 0.0;
    std::size_t sim_evals = 0;
};

/// Mine at each K in ascending order, extending the previous pair set so each
/// row's cost covers only the new region of the similarity matrix. Also
/// verifies that each pair set contains the previous one (prefix nesting).
inline std::vector<AblationRow> ablate_k(const EmbeddingMatrix& emb, MinerConfig cfg,
                                         const std::vector<std::size_t>& ks, MetricsLog& log,
                                         bool record_wall_time = true) {
    require(!ks.empty(), "ablate: no K values given");
    require(cfg.selection == Selection::FirstK, "ablate: requires first-K selection");
    std::vector<AblationRow> rows;
    SemanticPairSet current;
    current.min_threshold = cfg.min_threshold;
    current.max_threshold = cfg.max_threshold;
    std::size_t prev_k = 0;
    for (std::size_t k : ks) {
        require(k > prev_k, "ablate: K values must be strictly increasing, got ", k,
                " after ", prev_k);
        require(k <= emb.n, "ablate: K = ", k, " exceeds dataset size ", emb.n);
        auto [next, report] = mine_pairs_extend(emb, cfg, current, k);
        require(std::includes(next.pairs.begin(), next.pairs.end(), current.pairs.begin(),
                              current.pairs.end()),
                "ablate: pair set at K = ", k, " lost pairs mined at K = ", prev_k);
        AblationRow row;
        row.k = k;
        row.pair_count = report.pair_count;
        row.wall_time_s = record_wall_time ? report.wall_time_seconds : 0.0;
        row.sim_evals = report.similarity_evaluations;
        rows.push_back(row);

        MetricsRecord rec;
        rec.phase = "ablate";
        rec.wall_time_s = row.wall_time_s;
        rec.pair_count = std::int64_t(row.pair_count);
        rec.k_size = std::int64_t(k);
        log.add(rec);

        current = std::move(next);
        prev_k = k;
    }
    return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "k,pair_count,wall_time_s,sim_evals\n";
    for (const AblationRow& r : rows) {
        out += std::to_string(r.k) + "," + std::to_string(r.pair_count) + "," +
               detail::format_fixed(r.wall_time_s, 6) + "," + std::to_string(r.sim_evals) +
               "\n";
    }
    return out;
}

// ---- random-duplicate control ----

/// Control arm: append `count` exact copies of randomly picked images, so the
/// stream gains the same number of extra two-view items as a mined run would,
/// but with no semantic information.
inline std::vector<ImageRecord> with_random_duplicates(const std::vector<ImageRecord>& images,
                                                       std::size_t count, std::uint64_t seed) {
    require(count <= images.size(), "random add: count ", count, " exceeds dataset size ",
            images.size());
    std::vector<std::size_t> idx(images.size());
    std::iota(idx.begin(), idx.end(), 0);
    rng::shuffle(idx, seed);
    std::vector<ImageRecord> out = images;
    out.reserve(images.size() + count);
    for (std::size_t i = 0; i < count; ++i) {
        ImageRecord dup = images[idx[i]];
        dup.index = out.size();
        out.push_back(std::move(dup));
    }
    return out;
}

// ---- full run ----

namespace detail {

[[noreturn]] inline void rethrow_stage(const char* stage, const std::exception& e) {
    fail("stage ", stage, ": ", e.what());
}

template <typename Fn>
auto run_stage(const char* stage, Fn&& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        rethrow_stage(stage, e);
    }
}

} // namespace detail

struct RunResult {
    double top1 = 0.0;
    std::size_t pair_count = 0;
    MetricsLog metrics;
};

/// Execute every stage in order, leaving one artifact per stage in the output
/// directory so any stage can be re-run in isolation:
///   config.ini        resolved configuration snapshot
///   bootstrap.weights reference encoder (vanilla pretraining)
///   embeddings.bin    normalized reference embeddings
///   pairs.csv         mined semantic positive pairs
///   encoder.weights   final encoder
///   probe.weights     linear classifier
///   metrics.csv       per-epoch records for all phases
inline RunResult run_all(const PipelineConfig& cfg) {
    cfg.validate();
    namespace fs = std::filesystem;
    const fs::path out_dir(cfg.output_dir);
    fs::create_directories(out_dir);
    auto path_of = [&](const char* name) { return (out_dir / name).string(); };
    resolved_config(cfg).write_file(path_of("config.ini"));

    MetricsLog log;
    LoadedDataset data = detail::run_stage(
        "dataset", [&] { return load_dataset(cfg.dataset, cfg.seed); });

    // Reference encoder: vanilla instance discrimination on the same data.
    // With bootstrap_epochs = 0 the freshly initialized encoder stands in.
    SemanticPairSet no_pairs;
    Encoder<float> reference = detail::run_stage("bootstrap", [&] {
        if (cfg.bootstrap_epochs == 0) {
            EncoderConfig enc_cfg = cfg.encoder;
            resolve_encoder_input(enc_cfg, data.images);
            return Encoder<float>::init(enc_cfg, rng::mix(cfg.seed, seeds::kBootstrapInit));
        }
        return train_encoder<float>(cfg, data.images, no_pairs, log, "bootstrap",
                                    rng::mix(cfg.seed, seeds::kBootstrapInit),
                                    rng::mix(cfg.seed, seeds::kBootstrapEpochs),
                                    cfg.bootstrap_epochs);
    });
    save_parameters(path_of("bootstrap.weights"), reference.params);

    EmbeddingMatrix emb = detail::run_stage("embed", [&] {
        return embed_dataset(reference, data.images, cfg.embed_batch);
    });
    write_embeddings(path_of("embeddings.bin"), emb);

    SemanticPairSet spps;
    if (cfg.mining_enabled) {
        detail::run_stage("mine", [&] {
            MinerConfig miner = cfg.miner;
            miner.k = miner.k == 0 ? emb.n : miner.k;
            require(miner.k <= emb.n, "K = ", miner.k, " exceeds dataset size ", emb.n);
            auto [mined, report] = mine_pairs_blocked(emb, miner);
            spps = std::move(mined);
            MetricsRecord rec;
            rec.phase = "mine";
            rec.wall_time_s = cfg.record_wall_time ? report.wall_time_seconds : 0.0;
            rec.pair_count = std::int64_t(report.pair_count);
            rec.k_size = std::int64_t(report.k_used);
            log.add(rec);
            return 0;
        });
    }
    write_pairset(path_of("pairs.csv"), spps);

    std::vector<ImageRecord> train_images = data.images;
    if (cfg.random_add_count > 0) {
        train_images = detail::run_stage("random-add", [&] {
            return with_random_duplicates(data.images, cfg.random_add_count,
                                          rng::mix(cfg.seed, seeds::kRandomAdd));
        });
    }

    Encoder<float> enc = detail::run_stage("train", [&] {
        return train_encoder<float>(cfg, train_images, spps, log, "train",
                                    rng::mix(cfg.seed, seeds::kInit),
                                    rng::mix(cfg.seed, seeds::kEpochs), cfg.epochs);
    });
    save_parameters(path_of("encoder.weights"), enc.params);

    ProbeResult probe = detail::run_stage("linear-eval", [&] {
        return linear_eval(cfg, enc, data.images, log, "eval",
                           rng::mix(cfg.seed, seeds::kProbe));
    });
    NamedParams<float> probe_params;
    probe_params.emplace_back(
        "probe.weight", Tensor<float>::from_values({probe.feature_dim, probe.classes},
                                                   std::vector<float>(probe.weight), false));
    probe_params.emplace_back(
        "probe.bias",
        Tensor<float>::from_values({probe.classes}, std::vector<float>(probe.bias), false));
    save_parameters(path_of("probe.weights"), probe_params);

    log.write_file(path_of("metrics.csv"));
    RunResult result;
    result.top1 = probe.top1;
    result.pair_count = spps.pairs.size();
    result.metrics = log;
    return result;
}

} // namespace sepp
