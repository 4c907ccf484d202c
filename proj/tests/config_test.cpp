#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "sepp/config.hpp"
#include "sepp/pipeline.hpp"

using sepp::KvConfig;

namespace {

const char* kSample = R"(# run configuration
[dataset]
kind = blobs
classes = 4
intra_angle = 0.25

[train]
epochs = 12
batch_size = 32
; inline comment style two
record = true
sizes = 8, 16, 24
)";

} // namespace

TEST(KvConfig, ParsesSectionsKeysAndComments) {
    KvConfig kv = KvConfig::parse_string(kSample);
    EXPECT_EQ(kv.get_string("dataset.kind"), "blobs");
    EXPECT_EQ(kv.get_uint("dataset.classes", 0), 4u);
    EXPECT_DOUBLE_EQ(kv.get_double("dataset.intra_angle", 0.0), 0.25);
    EXPECT_EQ(kv.get_uint("train.epochs", 0), 12u);
    EXPECT_TRUE(kv.get_bool("train.record", false));
    EXPECT_EQ(kv.get_size_list("train.sizes", {}), (std::vector<std::size_t>{8, 16, 24}));
}

TEST(KvConfig, MissingKeyUsesFallbackAndRequiredThrows) {
    KvConfig kv = KvConfig::parse_string(kSample);
    EXPECT_FALSE(kv.has("train.absent"));
    EXPECT_EQ(kv.get_uint("train.absent", 7), 7u);
    EXPECT_EQ(kv.get_string("train.absent", "dflt"), "dflt");
    EXPECT_THROW(kv.get_string("train.absent"), sepp::Error);
}

TEST(KvConfig, ReportsLineNumbersForMalformedInput) {
    try {
        KvConfig::parse_string("[dataset]\nkind blobs\n");
        FAIL() << "expected parse error";
    } catch (const sepp::Error& e) {
        EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
    }
    EXPECT_THROW(KvConfig::parse_string("[unclosed\n"), sepp::Error);
    EXPECT_THROW(KvConfig::parse_string(" = value\n[s]\n"), sepp::Error);
    EXPECT_THROW(KvConfig::parse_string("key = before-any-section\n"), sepp::Error);
}

TEST(KvConfig, RejectsNonNumericAndTrailingJunk) {
    KvConfig kv = KvConfig::parse_string("[s]\na = 1.5x\nb = maybe\nc = 3,4,oops\n");
    EXPECT_THROW(kv.get_double("s.a", 0.0), sepp::Error);
    EXPECT_THROW(kv.get_bool("s.b", false), sepp::Error);
    EXPECT_THROW(kv.get_size_list("s.c", {}), sepp::Error);
}

TEST(KvConfig, SetOverwritesAndKeepsInsertionOrder) {
    KvConfig kv;
    kv.set("b.two", "2");
    kv.set("a.one", "1");
    kv.set("b.two", "22");
    EXPECT_EQ(kv.get_string("b.two"), "22");
    const std::string text = kv.to_string();
    // section b was inserted first, so it must be written first
    EXPECT_LT(text.find("[b]"), text.find("[a]"));
}

TEST(KvConfig, RoundTripPreservesEveryKey) {
    KvConfig kv = KvConfig::parse_string(kSample);
    KvConfig again = KvConfig::parse_string(kv.to_string());
    for (const std::string& key : kv.keys()) {
        EXPECT_EQ(again.get_string(key), kv.get_string(key)) << key;
    }
    EXPECT_EQ(kv.keys().size(), again.keys().size());
}

TEST(KvConfig, SerializationIsDeterministic) {
    KvConfig kv = KvConfig::parse_string(kSample);
    EXPECT_EQ(kv.to_string(), kv.to_string());
    EXPECT_EQ(KvConfig::parse_string(kv.to_string()).to_string(), kv.to_string());
}

TEST(PipelineConfigIo, ParsesOverridesFromIni) {
    KvConfig kv = KvConfig::parse_string(R"(
[dataset]
kind = blobs
classes = 3
per_class = 20

[miner]
min = 0.5
max = 0.9

[loss]
lambda = 0.25
spps_mode = merged

[train]
epochs = 7
batch_size = 16

[run]
seed = 99
)");
    sepp::PipelineConfig cfg = sepp::parse_pipeline_config(kv);
    EXPECT_EQ(cfg.dataset.classes, 3u);
    EXPECT_EQ(cfg.dataset.per_class, 20u);
    EXPECT_DOUBLE_EQ(cfg.miner.min_threshold, 0.5);
    EXPECT_DOUBLE_EQ(cfg.miner.max_threshold, 0.9);
    EXPECT_DOUBLE_EQ(cfg.loss.lambda_value, 0.25);
    EXPECT_EQ(cfg.spps_mode, sepp::SppsMode::Merged);
    EXPECT_EQ(cfg.epochs, 7u);
    EXPECT_EQ(cfg.batch_size, 16u);
    EXPECT_EQ(cfg.seed, 99u);
    // untouched keys keep their defaults
    EXPECT_DOUBLE_EQ(cfg.loss.temperature, 0.1);
    EXPECT_TRUE(cfg.mining_enabled);
}

TEST(PipelineConfigIo, RejectsUnknownEnumValue) {
    KvConfig kv = KvConfig::parse_string("[dataset]\nkind = tarball\n");
    EXPECT_THROW(sepp::parse_pipeline_config(kv), sepp::Error);
}

TEST(PipelineConfigIo, ResolvedSnapshotRoundTrips) {
    sepp::PipelineConfig cfg;
    cfg.dataset.classes = 7;
    cfg.miner.min_threshold = 0.625;
    cfg.loss.lambda_value = 0.375;
    cfg.loss.symmetric = false;
    cfg.spps_mode = sepp::SppsMode::Merged;
    cfg.epochs = 21;
    cfg.seed = 1234;
    cfg.output_dir = "some/dir";

    KvConfig snapshot = sepp::resolved_config(cfg);
    sepp::PipelineConfig back = sepp::parse_pipeline_config(snapshot);
    EXPECT_EQ(back.dataset.classes, cfg.dataset.classes);
    EXPECT_DOUBLE_EQ(back.miner.min_threshold, cfg.miner.min_threshold);
    EXPECT_DOUBLE_EQ(back.loss.lambda_value, cfg.loss.lambda_value);
    EXPECT_EQ(back.loss.symmetric, cfg.loss.symmetric);
    EXPECT_EQ(back.spps_mode, cfg.spps_mode);
    EXPECT_EQ(back.epochs, cfg.epochs);
    EXPECT_EQ(back.seed, cfg.seed);
    EXPECT_EQ(back.output_dir, cfg.output_dir);
    // the snapshot itself is stable across repeated serialization
    EXPECT_EQ(snapshot.to_string(), sepp::resolved_config(back).to_string());
}

TEST(PipelineConfigIo, ValidationCatchesBadValues) {
    sepp::PipelineConfig cfg;
    cfg.batch_size = 1;
    EXPECT_THROW(cfg.validate(), sepp::Error);
    cfg.batch_size = 8;
    cfg.epochs = 0;
    EXPECT_THROW(cfg.validate(), sepp::Error);
    cfg.epochs = 1;
    cfg.loss.lambda_value = 1.5;
    EXPECT_THROW(cfg.validate(), sepp::Error);
}
