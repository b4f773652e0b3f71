#include <gtest/gtest.h>

#include "oracles/crc32.hpp"
#include "unicon/config.hpp"

using namespace unicon;

TEST(Config, DefaultsAreDeskScale) {
  const RunConfig c;
  EXPECT_EQ(c.steps, 3000);
  EXPECT_EQ(c.batch, 16);
  EXPECT_EQ(c.log_every, 10);
  EXPECT_EQ(c.sampler_steps, 24);
  EXPECT_EQ(c.eval_count, 64);
  EXPECT_EQ(c.pretrain_steps, 5000);
  EXPECT_DOUBLE_EQ(c.optim.lr, 2e-4);
  EXPECT_DOUBLE_EQ(c.optim.beta1, 0.9);
  EXPECT_DOUBLE_EQ(c.optim.beta2, 0.999);
  EXPECT_DOUBLE_EQ(c.optim.eps, 1e-8);
  EXPECT_DOUBLE_EQ(c.optim.weight_decay, 0.01);
  ASSERT_TRUE(c.adapter);
  EXPECT_EQ(adapter_label(*c.adapter), "unicon-full");
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ParsesEverySection) {
  const RunConfig c = parse_config(R"(# comment
[run]
seed = 42
steps = 100
batch = 8
log_every = 5
output_dir = out/a
base_checkpoint = shared/base.uckp

[model]
# connector before adapter: the label must not reset it
connector = zero-mlp
adapter = controlnet-decoder
backbone = dit
keep_cross_attention = false
controller_sees_input = false

[task]
condition = blur-sr4x

[optim]
lr = 0.001
beta1 = 0.8
beta2 = 0.99
eps = 1e-6
weight_decay = 0

[sample]
sampler_steps = 12
eval_count = 32
clip_x0 = false

[pretrain]
steps = 10
seed = 7
lr = 5e-4
)");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.steps, 100);
  EXPECT_EQ(c.batch, 8);
  EXPECT_EQ(c.log_every, 5);
  EXPECT_EQ(c.output_dir, "out/a");
  EXPECT_EQ(c.base_path(), std::filesystem::path("shared/base.uckp"));
  EXPECT_EQ(c.backbone, BackboneKind::dit);
  ASSERT_TRUE(c.adapter);
  EXPECT_EQ(c.adapter->topology, Topology::decoder);
  EXPECT_EQ(c.adapter->flow, FlowMode::bidirectional);
  EXPECT_EQ(c.adapter->connector, ConnectorKind::zero_mlp);
  EXPECT_EQ(c.adapter->backbone, BackboneKind::dit);
  EXPECT_FALSE(c.adapter->keep_cross_attention);
  EXPECT_FALSE(c.adapter->controller_sees_input);
  EXPECT_EQ(c.condition, ConditionKind::blur_sr4x);
  EXPECT_DOUBLE_EQ(c.optim.lr, 1e-3);
  EXPECT_DOUBLE_EQ(c.optim.beta1, 0.8);
  EXPECT_DOUBLE_EQ(c.optim.beta2, 0.99);
  EXPECT_DOUBLE_EQ(c.optim.eps, 1e-6);
  EXPECT_DOUBLE_EQ(c.optim.weight_decay, 0);
  EXPECT_EQ(c.sampler_steps, 12);
  EXPECT_EQ(c.eval_count, 32);
  EXPECT_FALSE(c.clip_x0);
  EXPECT_EQ(c.pretrain_steps, 10);
  EXPECT_EQ(c.pretrain_seed, 7u);
  EXPECT_DOUBLE_EQ(c.pretrain_lr, 5e-4);
}

TEST(Config, SerializationRoundTrips) {
  RunConfig c;
  c.seed = 9;
  c.optim.lr = 0.1 + 0.2;
  c.output_dir = "x y";
  c.adapter->connector = ConnectorKind::share_attn;
  const std::string text = to_ini(c);
  const RunConfig back = parse_config(text);
  EXPECT_EQ(to_ini(back), text);
  EXPECT_EQ(back.optim.lr, c.optim.lr);
  EXPECT_EQ(back.output_dir, "x y");

  RunConfig bare;
  bare.adapter.reset();
  EXPECT_FALSE(parse_config(to_ini(bare)).adapter);
  EXPECT_EQ(to_ini(parse_config(to_ini(bare))), to_ini(bare));
}

TEST(Config, HashIsCrcOfCanonicalText) {
  RunConfig a;
  char expect[9];
  std::snprintf(expect, sizeof expect, "%08x", oracle::crc32(to_ini(a)));
  EXPECT_EQ(config_hash(a), expect);
  RunConfig b = a;
  b.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, RejectsUnknownAndMalformed) {
  EXPECT_THROW(parse_config("[run]\nsteps = 10\nstesp = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("[runn]\nsteps = 10\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\nsteps = ten\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\nsteps = 10x\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\nsteps = 10\nsteps = 11\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\nsteps\n"), ConfigError);
  EXPECT_THROW(parse_config("steps = 10\n"), ConfigError);
  EXPECT_THROW(parse_config("[model]\nadapter = unicon-sideways\n"), ConfigError);
  EXPECT_THROW(parse_config("[model]\nbackbone = mlp\n"), ConfigError);
  EXPECT_THROW(parse_config("[task]\ncondition = depth\n"), ConfigError);
  EXPECT_THROW(parse_config("[sample]\nclip_x0 = yes\n"), ConfigError);
  EXPECT_THROW(parse_config("[model]\nadapter = none\nconnector = zero-mlp\n"), ConfigError);
}

TEST(Config, RejectsInvalidValues) {
  EXPECT_THROW(parse_config("[run]\nbatch = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\nsteps = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("[run]\nlog_every = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("[optim]\nlr = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("[optim]\nbeta2 = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[sample]\neval_count = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("[sample]\neval_count = 1001\n"), ConfigError);
  EXPECT_THROW(parse_config("[model]\nadapter = unicon-encoder\n"), ConfigError);
  EXPECT_THROW(parse_config("[model]\nbackbone = unet\nconnector = share-attn\n"), ConfigError);
  EXPECT_NO_THROW(parse_config("[run]\nsteps = 0\n"));
}

TEST(Config, OverridesApplyLikeFileKeys) {
  RunConfig c;
  set_config_value(c, "model.backbone", "unet");
  EXPECT_EQ(c.adapter->backbone, BackboneKind::unet);
  set_config_value(c, "model.adapter", "controlnet-encoder");
  EXPECT_EQ(c.adapter->backbone, BackboneKind::unet);
  EXPECT_EQ(c.adapter->topology, Topology::encoder);
  EXPECT_THROW(set_config_value(c, "run.nope", "1"), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
  for (const auto& entry : std::filesystem::directory_iterator(UNICON_CONFIG_DIR)) {
    if (entry.path().extension() != ".ini") continue;
    EXPECT_NO_THROW(load_config(entry.path())) << entry.path();
  }
  const RunConfig c = load_config(std::filesystem::path(UNICON_CONFIG_DIR) / "unicon-full-sr4x.ini");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.steps, 3000);
  EXPECT_EQ(adapter_label(*c.adapter), "unicon-full");
}
